#include <gtest/gtest.h>

#include "swindepth/gradcheck.hpp"
#include "swindepth/posenet.hpp"

using swindepth::Rng;
using swindepth::Shape;
using Td = swindepth::Tensor<double>;

namespace {
void mat_mul3(const double* a, const double* b, double* c) {
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) {
            c[i * 3 + j] = 0;
            for (int k = 0; k < 3; ++k) c[i * 3 + j] += a[i * 3 + k] * b[k * 3 + j];
        }
}

double det3(const double* r) {
    return r[0] * (r[4] * r[8] - r[5] * r[7]) - r[1] * (r[3] * r[8] - r[5] * r[6]) +
           r[2] * (r[3] * r[7] - r[4] * r[6]);
}
}  // namespace

TEST(Se3, ZeroPoseIsIdentity) {
    Td p = Td::zeros({1, 6});
    for (bool inv : {false, true}) {
        Td m = swindepth::pose_to_se3(p, inv);
        ASSERT_EQ(m.shape(), (Shape{1, 4, 4}));
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j)
                EXPECT_DOUBLE_EQ(m.data()[size_t(i * 4 + j)], i == j ? 1.0 : 0.0);
    }
}

TEST(Se3, QuarterTurnAboutZGolden) {
    Td p = Td::from_data({1, 6}, {0.0, 0.0, M_PI / 2.0, 0.0, 0.0, 0.0});
    Td m = swindepth::pose_to_se3(p, false);
    const double want[9] = {0, -1, 0, 1, 0, 0, 0, 0, 1};
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j)
            EXPECT_NEAR(m.data()[size_t(i * 4 + j)], want[i * 3 + j], 1e-9);
}

TEST(Se3, InverseComposesToIdentity) {
    Rng rng(1);
    for (int trial = 0; trial < 100; ++trial) {
        Td p = Td::randn({1, 6}, rng, 0.8);
        Td a = swindepth::pose_to_se3(p, false);
        Td b = swindepth::pose_to_se3(p, true);
        Td prod = bmm(a, b);
        for (int i = 0; i < 4; ++i)
            for (int j = 0; j < 4; ++j)
                ASSERT_NEAR(prod.data()[size_t(i * 4 + j)], i == j ? 1.0 : 0.0, 1e-6);
    }
}

TEST(Rodrigues, OrthonormalWithUnitDeterminant) {
    Rng rng(2);
    for (int trial = 0; trial < 1000; ++trial) {
        Td v = Td::zeros({1, 3});
        double n = 0;
        do {
            for (auto& x : v.data()) x = rng.normal();
            n = std::sqrt(v.data()[0] * v.data()[0] + v.data()[1] * v.data()[1] +
                          v.data()[2] * v.data()[2]);
        } while (n >= M_PI);
        Td R = swindepth::rodrigues(v);
        double rt[9], rr[9];
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) rt[i * 3 + j] = R.data()[size_t(j * 3 + i)];
        mat_mul3(rt, R.data().data(), rr);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) ASSERT_NEAR(rr[i * 3 + j], i == j ? 1.0 : 0.0, 1e-6);
        ASSERT_NEAR(det3(R.data().data()), 1.0, 1e-6);
    }
}

TEST(Rodrigues, ClosureUnderComposition) {
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        Td a = Td::randn({1, 6}, rng, 0.5);
        Td b = Td::randn({1, 6}, rng, 0.5);
        Td prod = bmm(swindepth::pose_to_se3(a), swindepth::pose_to_se3(b));
        double rt[9], rr[9], R[9];
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) R[i * 3 + j] = prod.data()[size_t(i * 4 + j)];
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) rt[i * 3 + j] = R[j * 3 + i];
        mat_mul3(rt, R, rr);
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) ASSERT_NEAR(rr[i * 3 + j], i == j ? 1.0 : 0.0, 1e-6);
    }
}

TEST(Rodrigues, GradMatchesFiniteDifferencesAwayFromZero) {
    Rng rng(4);
    for (int trial = 0; trial < 5; ++trial) {
        Td v = Td::randn({2, 3}, rng, 1.0);
        for (auto& x : v.data()) x += (x >= 0 ? 0.15 : -0.15);  // keep |v| off zero
        Td w = Td::randn({2, 3, 3}, rng);
        double err = swindepth::finite_diff_check<double>(
            [&](Td& t) { return sum(mul(swindepth::rodrigues(t), w)); }, v, 1e-6);
        ASSERT_LT(err, 1e-6);
    }
}

TEST(Rodrigues, TinyAngleBranchStaysFinite) {
    Td v = Td::from_data({1, 3}, {1e-8, -2e-8, 5e-9});
    v.set_requires_grad(true);
    swindepth::Tape<double> tape;
    Td R = swindepth::rodrigues(v);
    tape.backward(sum(R));
    EXPECT_TRUE(swindepth::all_finite(R));
    for (int i = 0; i < 3; ++i) EXPECT_TRUE(std::isfinite(v.grad_at(i)));
    // off-diagonals are the skew terms of a ~2e-8 rad rotation
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) EXPECT_NEAR(R.data()[size_t(i * 3 + j)], i == j ? 1.0 : 0.0, 1e-7);
}

TEST(Se3, GradcheckThroughInversion) {
    Rng rng(5);
    Td p = Td::randn({2, 6}, rng, 0.6);
    Td w = Td::randn({2, 4, 4}, rng);
    double err = swindepth::finite_diff_check<double>(
        [&](Td& t) { return sum(mul(swindepth::pose_to_se3(t, true), w)); }, p, 1e-6);
    EXPECT_LT(err, 1e-6);
}

TEST(PoseNet, OutputShapeAndDeterminism) {
    swindepth::PoseConfig cfg;
    Rng rng(6);
    swindepth::PoseNet<double> net(cfg, rng);
    Rng ir(7);
    Td a = Td::randn({2, 3, 32, 64}, ir);
    Td b = Td::randn({2, 3, 32, 64}, ir);
    Td p1 = net.predict(a, b);
    Td p2 = net.predict(a, b);
    ASSERT_EQ(p1.shape(), (Shape{2, 6}));
    for (int64_t i = 0; i < p1.numel(); ++i) EXPECT_EQ(p1.data()[size_t(i)], p2.data()[size_t(i)]);
}

TEST(PoseNet, GradientReachesBothFrames) {
    swindepth::PoseConfig cfg;
    Rng rng(8);
    swindepth::PoseNet<double> net(cfg, rng);
    Rng ir(9);
    Td a = Td::randn({1, 3, 32, 64}, ir, 1.0, true);
    Td b = Td::randn({1, 3, 32, 64}, ir, 1.0, true);
    swindepth::Tape<double> tape;
    tape.backward(sum(net.predict(a, b)));
    double ga = 0, gb = 0;
    for (int64_t i = 0; i < a.numel(); ++i) ga += std::fabs(a.grad_at(i));
    for (int64_t i = 0; i < b.numel(); ++i) gb += std::fabs(b.grad_at(i));
    EXPECT_GT(ga, 0.0);
    EXPECT_GT(gb, 0.0);
}

TEST(PoseNet, MismatchedFramesThrow) {
    swindepth::PoseConfig cfg;
    Rng rng(10);
    swindepth::PoseNet<double> net(cfg, rng);
    Rng ir(11);
    Td a = Td::randn({1, 3, 32, 64}, ir);
    Td b = Td::randn({1, 3, 32, 32}, ir);
    EXPECT_THROW(net.predict(a, b), swindepth::ShapeError);
}

TEST(PoseNet, Resnet18PresetRuns) {
    swindepth::PoseConfig cfg;
    cfg.encoder = "resnet18";
    Rng rng(12);
    swindepth::PoseNet<double> net(cfg, rng);
    Rng ir(13);
    Td a = Td::randn({1, 3, 64, 64}, ir);
    Td b = Td::randn({1, 3, 64, 64}, ir);
    Td p = net.predict(a, b);
    EXPECT_EQ(p.shape(), (Shape{1, 6}));
    EXPECT_TRUE(swindepth::all_finite(p));
}
