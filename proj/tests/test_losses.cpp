#include <gtest/gtest.h>

#include "swindepth/gradcheck.hpp"
#include "swindepth/losses.hpp"
#include "swindepth/posenet.hpp"

using swindepth::Intrinsics;
using swindepth::Rng;
using swindepth::Shape;
using Td = swindepth::Tensor<double>;

namespace {
Td randn(Shape s, uint64_t seed) {
    Rng rng(seed);
    return Td::randn(std::move(s), rng);
}

Td uniform01(Shape s, uint64_t seed) {
    Rng rng(seed);
    Td t = Td::zeros(std::move(s));
    for (auto& v : t.data()) v = rng.uniform(0.05, 0.95);
    return t;
}
}  // namespace

TEST(DispToDepth, RangeEndpoints) {
    Td d = Td::from_data({2}, {1e-12, 1.0 - 1e-12});
    Td z = swindepth::disp_to_depth(d);
    EXPECT_NEAR(z.data()[0], 100.0, 1e-6);
    EXPECT_NEAR(z.data()[1], 0.1, 1e-9);
}

TEST(DispToDepth, StrictlyDecreasing) {
    Rng rng(1);
    for (int i = 0; i < 200; ++i) {
        double a = rng.uniform(1e-6, 1.0 - 1e-6), b = rng.uniform(1e-6, 1.0 - 1e-6);
        if (a == b) continue;
        if (a > b) std::swap(a, b);
        Td d = Td::from_data({2}, {a, b});
        Td z = swindepth::disp_to_depth(d);
        ASSERT_GT(z.data()[0], z.data()[1]);
    }
}

// Exact-arithmetic configuration: power-of-two focal/size, constant depth, so
// the identity transform reproduces the source bitwise.
TEST(SynthesizeView, IdentityPoseReturnsSourceExactly) {
    const int64_t H = 64, W = 128;
    Intrinsics<double> K{64.0, 64.0, 63.5, 31.5};
    Td src = uniform01({1, 3, H, W}, 2);
    Td depth = Td::full({1, 1, H, W}, 4.0);
    Td T = swindepth::pose_to_se3(Td::zeros({1, 6}), false);
    Td out = swindepth::synthesize_view(src, depth, T, K);
    for (int64_t i = 0; i < src.numel(); ++i)
        ASSERT_EQ(out.data()[size_t(i)], src.data()[size_t(i)]) << i;
}

// Fronto-parallel plane at z0 under pure x-translation: a uniform pixel shift
// of fx*tx/z0 (here exactly 8 pixels on a linear ramp).
TEST(SynthesizeView, TranslationShiftsRampByPinholeFormula) {
    const int64_t H = 16, W = 128;
    Intrinsics<double> K{64.0, 64.0, 63.5, 7.5};
    Td src = Td::zeros({1, 3, H, W});
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x)
                src.data()[size_t((c * H + y) * W + x)] = double(x) / double(W);
    Td depth = Td::full({1, 1, H, W}, 4.0);
    Td pose = Td::from_data({1, 6}, {0, 0, 0, 0.5, 0, 0});  // tx = 0.5 -> shift 8 px
    Td T = swindepth::pose_to_se3(pose, false);
    Td out = swindepth::synthesize_view(src, depth, T, K);
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W - 8; ++x)
            ASSERT_NEAR(out.data()[size_t(y * W + x)], double(x + 8) / double(W), 1e-12);
}

TEST(SynthesizeView, GradientsFlowToDepthAndPose) {
    const int64_t H = 8, W = 16;
    Intrinsics<double> K{10.0, 10.0, 7.5, 3.5};
    Td src = uniform01({1, 3, H, W}, 3);
    Td depth = Td::full({1, 1, H, W}, 3.0, true);
    Td pose = Td::from_data({1, 6}, {0.01, -0.02, 0.005, 0.05, 0.01, -0.03});
    pose.set_requires_grad(true);
    swindepth::Tape<double> tape;
    Td T = swindepth::pose_to_se3(pose, false);
    Td out = swindepth::synthesize_view(src, depth, T, K);
    tape.backward(sum(out));
    double gd = 0, gp = 0;
    for (int64_t i = 0; i < depth.numel(); ++i) gd += std::fabs(depth.grad_at(i));
    for (int64_t i = 0; i < pose.numel(); ++i) gp += std::fabs(pose.grad_at(i));
    EXPECT_GT(gd, 0.0);
    EXPECT_GT(gp, 0.0);
}

TEST(Ssim, SelfSimilarityIsOne) {
    Td x = uniform01({1, 3, 6, 8}, 4);
    Td s = swindepth::ssim(x, x);
    for (auto v : s.data()) ASSERT_NEAR(v, 1.0, 1e-6);
}

TEST(Ssim, Symmetry) {
    Td a = uniform01({1, 3, 5, 7}, 5);
    Td b = uniform01({1, 3, 5, 7}, 6);
    Td s1 = swindepth::ssim(a, b);
    Td s2 = swindepth::ssim(b, a);
    for (int64_t i = 0; i < s1.numel(); ++i) ASSERT_EQ(s1.data()[size_t(i)], s2.data()[size_t(i)]);
}

TEST(Ssim, ConstantZeroVsConstantOneGolden) {
    Td a = Td::zeros({1, 3, 4, 4});
    Td b = Td::full({1, 3, 4, 4}, 1.0);
    Td s = swindepth::ssim(a, b);
    const double c1 = 1e-4;
    const double want = c1 / (1.0 + c1);  // (2*0*1+C1)(0+C2) / ((0+1+C1)(0+0+C2))
    for (auto v : s.data()) ASSERT_NEAR(v, want, 1e-12);
}

TEST(Ssim, OutputWithinMinusOneOne) {
    for (uint64_t seed = 10; seed < 20; ++seed) {
        Td a = uniform01({1, 3, 6, 6}, seed);
        Td b = uniform01({1, 3, 6, 6}, seed + 100);
        Td s = swindepth::ssim(a, b);
        for (auto v : s.data()) {
            ASSERT_GE(v, -1.0);
            ASSERT_LE(v, 1.0);
        }
    }
}

TEST(Photometric, IdenticalImagesGiveZero) {
    Td a = uniform01({1, 3, 5, 6}, 7);
    Td pe = swindepth::photometric_error(a, a);
    for (auto v : pe.data()) ASSERT_NEAR(v, 0.0, 1e-12);
}

TEST(Photometric, NonNegative) {
    Td a = uniform01({1, 3, 5, 6}, 8);
    Td b = uniform01({1, 3, 5, 6}, 9);
    Td pe = swindepth::photometric_error(a, b);
    EXPECT_EQ(pe.shape(), (Shape{1, 1, 5, 6}));
    for (auto v : pe.data()) ASSERT_GE(v, 0.0);
}

TEST(Photometric, PureL1SinglePixel) {
    Td a = Td::full({1, 3, 1, 1}, 0.3);
    Td b = Td::full({1, 3, 1, 1}, 0.7);
    Td pe = swindepth::photometric_error(a, b, 0.0);
    EXPECT_NEAR(pe.data()[0], 0.4, 1e-12);
}

TEST(Automask, PerfectWarpKeepsEverything) {
    Td zero = Td::zeros({1, 1, 3, 3});
    Td pos = Td::full({1, 1, 3, 3}, 0.2);
    auto r = swindepth::min_reproj_automask<double>({zero, zero}, {pos, pos});
    for (auto v : r.mask.data()) ASSERT_EQ(v, 1.0);
    for (auto v : r.loss_map.data()) ASSERT_EQ(v, 0.0);
}

TEST(Automask, ExactTieMasksOut) {
    Td pe = Td::full({1, 1, 2, 2}, 0.15);
    auto r = swindepth::min_reproj_automask<double>({pe, pe}, {pe, pe});
    for (auto v : r.mask.data()) ASSERT_EQ(v, 0.0);
    for (auto v : r.loss_map.data()) ASSERT_EQ(v, 0.0);
}

TEST(Automask, PixelwiseEnumeration) {
    Td w1 = Td::full({1, 1, 1, 1}, 0.2);
    Td w2 = Td::full({1, 1, 1, 1}, 0.5);
    Td i1 = Td::full({1, 1, 1, 1}, 0.3);
    Td i2 = Td::full({1, 1, 1, 1}, 0.4);
    auto r = swindepth::min_reproj_automask<double>({w1, w2}, {i1, i2});
    EXPECT_EQ(r.mask.data()[0], 1.0);
    EXPECT_NEAR(r.loss_map.data()[0], 0.2, 1e-15);
}

TEST(Automask, MaskIsNotDifferentiated) {
    Td w = Td::full({1, 1, 2, 2}, 0.2, true);
    Td i = Td::full({1, 1, 2, 2}, 0.3);
    swindepth::Tape<double> tape;
    auto r = swindepth::min_reproj_automask<double>({w}, {i});
    tape.backward(sum(r.loss_map));
    for (int64_t k = 0; k < w.numel(); ++k) EXPECT_DOUBLE_EQ(w.grad_at(k), 1.0);
}

TEST(Smoothness, ConstantDisparityIsZero) {
    Td d = Td::full({1, 1, 4, 6}, 0.3);
    Td img = uniform01({1, 3, 4, 6}, 11);
    EXPECT_NEAR(swindepth::smoothness(d, img).item(), 0.0, 1e-12);
}

TEST(Smoothness, EdgeAwareDamping) {
    Td d = Td::zeros({1, 1, 2, 8});
    for (int64_t y = 0; y < 2; ++y)
        for (int64_t x = 4; x < 8; ++x) d.data()[size_t(y * 8 + x)] = 0.4;
    d = add_scalar(d, 0.2);
    Td flat = Td::full({1, 3, 2, 8}, 0.5);
    Td edged = Td::full({1, 3, 2, 8}, 0.5);
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < 2; ++y)
            for (int64_t x = 4; x < 8; ++x) edged.data()[size_t((c * 2 + y) * 8 + x)] = 0.9;
    double on_flat = swindepth::smoothness(d, flat).item();
    double on_edge = swindepth::smoothness(d, edged).item();
    EXPECT_LT(on_edge, on_flat);
}

TEST(Smoothness, TwoPixelGolden) {
    Td d = Td::from_data({1, 1, 1, 2}, {0.2, 0.4});
    Td img = Td::full({1, 3, 1, 2}, 0.5);
    double want = 0.2 / (0.3 + 1e-7);  // normalized step, unit edge weight
    EXPECT_NEAR(swindepth::smoothness(d, img).item(), want, 1e-9);
}

namespace {
swindepth::DepthPyramid<double> random_pyramid(int64_t H, int64_t W, uint64_t seed) {
    swindepth::DepthPyramid<double> d;
    Rng rng(seed);
    for (int i = 0; i < 4; ++i) {
        d.disp[size_t(i)] = Td::zeros({1, 1, H >> (3 - i), W >> (3 - i)});
        for (auto& v : d.disp[size_t(i)].data()) v = rng.uniform(0.02, 0.9);
    }
    return d;
}
}  // namespace

TEST(TotalLoss, FinitePositiveForRandomInputs) {
    const int64_t H = 32, W = 64;
    Intrinsics<double> K{44.8, 44.8, 31.5, 15.5};
    swindepth::LossOptions<double> opt;
    for (int trial = 0; trial < 100; ++trial) {
        Td tgt = uniform01({1, 3, H, W}, 100 + uint64_t(trial));
        Td s0 = uniform01({1, 3, H, W}, 200 + uint64_t(trial));
        Td s1 = uniform01({1, 3, H, W}, 300 + uint64_t(trial));
        auto depths = random_pyramid(H, W, 400 + uint64_t(trial));
        Rng noise(7);
        Td Tp = swindepth::pose_to_se3(mul_scalar(randn({1, 6}, 500 + uint64_t(trial)), 0.01), true);
        Td Tn = swindepth::pose_to_se3(mul_scalar(randn({1, 6}, 600 + uint64_t(trial)), 0.01), false);
        auto r = swindepth::total_loss<double>(tgt, {s0, s1}, {Tp, Tn}, depths, K, opt, noise);
        double v = r.total.item();
        ASSERT_TRUE(std::isfinite(v));
        ASSERT_GT(v, 0.0);
    }
}

TEST(TotalLoss, LambdaZeroRemovesSmoothnessGradient) {
    const int64_t H = 32, W = 64;
    Intrinsics<double> K{44.8, 44.8, 31.5, 15.5};
    Td tgt = uniform01({1, 3, H, W}, 20);
    Td s0 = uniform01({1, 3, H, W}, 21);
    auto depths = random_pyramid(H, W, 22);
    Td Tp = swindepth::pose_to_se3(mul_scalar(randn({1, 6}, 23), 0.01), false);

    auto grad_with_lambda = [&](double lam) {
        swindepth::LossOptions<double> opt;
        opt.smooth_lambda = lam;
        opt.tie_noise = false;
        auto d2 = depths;
        for (auto& m : d2.disp) {
            m.set_requires_grad(true);
            m.zero_grad();
        }
        swindepth::Tape<double> tape;
        Rng noise(7);
        auto r = swindepth::total_loss<double>(tgt, {s0}, {Tp}, d2, K, opt, noise);
        tape.backward(r.total);
        std::vector<double> g;
        for (auto& m : d2.disp)
            for (int64_t i = 0; i < m.numel(); ++i) g.push_back(m.grad_at(i));
        return g;
    };

    auto g1 = grad_with_lambda(1e-3);
    auto g0 = grad_with_lambda(0.0);

    // difference must equal the weighted smoothness gradient alone
    auto d3 = depths;
    std::vector<double> gs;
    {
        for (auto& m : d3.disp) {
            m.set_requires_grad(true);
            m.zero_grad();
        }
        swindepth::Tape<double> tape;
        Td acc = Td::scalar(0.0);
        for (int level = 0; level < 4; ++level) {
            auto tgt_l = level == 0 ? tgt : bilinear_resize(tgt, H >> level, W >> level);
            acc = add(acc, mul_scalar(swindepth::smoothness(d3.disp[size_t(3 - level)], tgt_l),
                                      1e-3 / double(1 << level)));
        }
        tape.backward(mul_scalar(acc, 0.25));
        for (auto& m : d3.disp)
            for (int64_t i = 0; i < m.numel(); ++i) gs.push_back(m.grad_at(i));
    }
    for (size_t i = 0; i < g1.size(); ++i) ASSERT_NEAR(g1[i] - g0[i], gs[i], 1e-10);
}

TEST(TotalLoss, MismatchedPosesThrow) {
    const int64_t H = 32, W = 64;
    Intrinsics<double> K{44.8, 44.8, 31.5, 15.5};
    Td tgt = uniform01({1, 3, H, W}, 30);
    Td s0 = uniform01({1, 3, H, W}, 31);
    auto depths = random_pyramid(H, W, 32);
    Rng noise(7);
    swindepth::LossOptions<double> opt;
    EXPECT_THROW(swindepth::total_loss<double>(tgt, {s0}, {}, depths, K, opt, noise),
                 swindepth::ShapeError);
}

TEST(TotalLoss, FullResolutionModeRuns) {
    const int64_t H = 32, W = 64;
    Intrinsics<double> K{44.8, 44.8, 31.5, 15.5};
    Td tgt = uniform01({1, 3, H, W}, 40);
    Td s0 = uniform01({1, 3, H, W}, 41);
    auto depths = random_pyramid(H, W, 42);
    Td Tp = swindepth::pose_to_se3(mul_scalar(randn({1, 6}, 43), 0.01), false);
    swindepth::LossOptions<double> opt;
    opt.resize_target = false;
    Rng noise(7);
    auto r = swindepth::total_loss<double>(tgt, {s0}, {Tp}, depths, K, opt, noise);
    EXPECT_TRUE(std::isfinite(r.total.item()));
}
