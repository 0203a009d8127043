#include <gtest/gtest.h>

#include "swindepth/gradcheck.hpp"
#include "swindepth/nn_ops.hpp"

using swindepth::Rng;
using swindepth::Shape;
using Td = swindepth::Tensor<double>;

namespace {
double gc(const std::function<Td(Td&)>& f, Td& x, double eps = 1e-4) {
    return swindepth::finite_diff_check<double>(f, x, eps);
}

Td randn(Shape s, uint64_t seed) {
    Rng rng(seed);
    return Td::randn(std::move(s), rng);
}
}  // namespace

// ---------------------------------------------------------------------- conv

TEST(Conv2d, OneByOneIdentityKernel) {
    Td x = randn({1, 3, 4, 5}, 1);
    std::vector<double> wv(9, 0.0);
    wv[0 * 3 + 0] = 1.0;
    wv[1 * 3 + 1] = 1.0;
    wv[2 * 3 + 2] = 1.0;
    Td w = Td::from_data({3, 3, 1, 1}, wv);
    Td b = Td::zeros({3});
    Td y = conv2d(x, w, b, 1, 0);
    ASSERT_EQ(y.shape(), x.shape());
    for (int64_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y.data()[size_t(i)], x.data()[size_t(i)]);
}

TEST(Conv2d, AllOnesKernelCountsReceptiveField) {
    Td x = Td::full({1, 1, 4, 4}, 1.0);
    Td w = Td::full({1, 1, 3, 3}, 1.0);
    Td b = Td::zeros({1});
    Td y = conv2d(x, w, b, 1, 1);
    ASSERT_EQ(y.shape(), (Shape{1, 1, 4, 4}));
    auto at = [&](int64_t r, int64_t c) { return y.data()[size_t(r * 4 + c)]; };
    EXPECT_DOUBLE_EQ(at(0, 0), 4.0);
    EXPECT_DOUBLE_EQ(at(0, 3), 4.0);
    EXPECT_DOUBLE_EQ(at(3, 0), 4.0);
    EXPECT_DOUBLE_EQ(at(3, 3), 4.0);
    EXPECT_DOUBLE_EQ(at(0, 1), 6.0);
    EXPECT_DOUBLE_EQ(at(2, 0), 6.0);
    EXPECT_DOUBLE_EQ(at(1, 1), 9.0);
    EXPECT_DOUBLE_EQ(at(2, 2), 9.0);
}

TEST(Conv2d, Gradchecks) {
    Td x = randn({2, 2, 5, 4}, 2);
    Td w = randn({3, 2, 3, 3}, 3);
    Td b = randn({3}, 4);
    EXPECT_LT(gc([&](Td&) { return sum(mul(conv2d(x, w, b, 1, 1), conv2d(x, w, b, 1, 1))); }, w), 1e-6);
    EXPECT_LT(gc([&](Td&) { return sum(mul(conv2d(x, w, b, 1, 1), conv2d(x, w, b, 1, 1))); }, x), 1e-6);
    EXPECT_LT(gc([&](Td&) { return sum(mul(conv2d(x, w, b, 1, 1), conv2d(x, w, b, 1, 1))); }, b), 1e-6);
    // stride 2
    EXPECT_LT(gc([&](Td&) { return sum(mul(conv2d(x, w, b, 2, 1), conv2d(x, w, b, 2, 1))); }, x), 1e-6);
    EXPECT_LT(gc([&](Td&) { return sum(mul(conv2d(x, w, b, 2, 1), conv2d(x, w, b, 2, 1))); }, w), 1e-6);
}

TEST(Conv2d, ChannelMismatchThrows) {
    Td x = randn({1, 2, 4, 4}, 5);
    Td w = randn({1, 3, 3, 3}, 6);
    Td b = Td::zeros({1});
    EXPECT_THROW(conv2d(x, w, b, 1, 1), swindepth::ShapeError);
}

// ----------------------------------------------------------------- layernorm

TEST(LayerNorm, ConstantRowGivesZeros) {
    Td x = Td::full({2, 4}, 3.7);
    Td g = Td::full({4}, 1.0);
    Td b = Td::zeros({4});
    Td y = layer_norm(x, g, b, 1e-5);
    for (int64_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y.data()[size_t(i)], 0.0, 1e-12);
}

TEST(LayerNorm, HandComputedGolden) {
    Td x = Td::from_data({1, 3}, {1.0, 2.0, 3.0});
    Td g = Td::full({3}, 1.0);
    Td b = Td::zeros({3});
    Td y = layer_norm(x, g, b, 0.0);
    const double r = std::sqrt(1.5);  // variance 2/3, biased
    EXPECT_NEAR(y.data()[0], -r, 1e-12);
    EXPECT_NEAR(y.data()[1], 0.0, 1e-12);
    EXPECT_NEAR(y.data()[2], r, 1e-12);
}

TEST(LayerNorm, Gradchecks) {
    Td x = randn({3, 6}, 7);
    Td g = randn({6}, 8);
    Td b = randn({6}, 9);
    EXPECT_LT(gc([&](Td& t) { return sum(mul(layer_norm(t, g, b), layer_norm(t, g, b))); }, x), 1e-6);
    EXPECT_LT(gc([&](Td&) { return sum(mul(layer_norm(x, g, b), layer_norm(x, g, b))); }, g), 1e-6);
    EXPECT_LT(gc([&](Td&) { return sum(mul(layer_norm(x, g, b), layer_norm(x, g, b))); }, b), 1e-6);
}

TEST(LayerNorm, SizeMismatchThrows) {
    Td x = randn({2, 4}, 10);
    Td g = Td::full({3}, 1.0);
    Td b = Td::zeros({3});
    EXPECT_THROW(layer_norm(x, g, b), swindepth::ShapeError);
}

// ------------------------------------------------------------------- softmax

TEST(Softmax, UniformInputGivesUniformOutput) {
    Td x = Td::full({2, 5}, 0.3);
    Td y = softmax_lastdim(x);
    for (int64_t i = 0; i < y.numel(); ++i) EXPECT_NEAR(y.data()[size_t(i)], 0.2, 1e-12);
}

TEST(Softmax, HandComputedGolden) {
    Td x = Td::from_data({2}, {0.0, std::log(3.0)});
    Td y = softmax_lastdim(x);
    EXPECT_NEAR(y.data()[0], 0.25, 1e-12);
    EXPECT_NEAR(y.data()[1], 0.75, 1e-12);
}

TEST(Softmax, ShiftInvariance) {
    Td x = randn({3, 7}, 11);
    Td y1 = softmax_lastdim(x);
    Td y2 = softmax_lastdim(add_scalar(x, 100.0));
    for (int64_t i = 0; i < y1.numel(); ++i)
        EXPECT_NEAR(y1.data()[size_t(i)], y2.data()[size_t(i)], 1e-9);
}

TEST(Softmax, RowsSumToOneProperty) {
    Rng rng(12);
    for (int trial = 0; trial < 1000; ++trial) {
        Td x = Td::randn({1, 9}, rng, 3.0);
        Td y = softmax_lastdim(x);
        double s = 0;
        for (auto v : y.data()) s += v;
        ASSERT_NEAR(s, 1.0, 1e-6);
    }
}

TEST(Softmax, Gradcheck) {
    Td x = randn({4, 6}, 13);
    Td w = randn({4, 6}, 14);
    EXPECT_LT(gc([&](Td& t) { return sum(mul(softmax_lastdim(t), w)); }, x), 1e-6);
}

// ----------------------------------------------------------- bilinear_resize

TEST(BilinearResize, SameSizeIsIdentity) {
    Td x = randn({1, 2, 3, 5}, 15);
    Td y = bilinear_resize(x, 3, 5);
    for (int64_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y.data()[size_t(i)], x.data()[size_t(i)]);
}

TEST(BilinearResize, ConstantStaysConstant) {
    Td x = Td::full({1, 1, 3, 4}, 5.0);
    Td y = bilinear_resize(x, 6, 8);
    for (auto v : y.data()) EXPECT_DOUBLE_EQ(v, 5.0);
}

// Golden frozen under the documented convention: half-pixel centers, border
// cells extrapolate linearly.
TEST(BilinearResize, TwoByTwoUpsampleGolden) {
    Td x = Td::from_data({1, 1, 2, 2}, {0.0, 1.0, 2.0, 3.0});
    Td y = bilinear_resize(x, 4, 4);
    const double want[16] = {-0.75, -0.25, 0.25, 0.75, 0.25, 0.75, 1.25, 1.75,
                             1.25,  1.75,  2.25, 2.75, 2.25, 2.75, 3.25, 3.75};
    for (int i = 0; i < 16; ++i) EXPECT_DOUBLE_EQ(y.data()[size_t(i)], want[i]);
    // center values are convex combinations of the inputs
    EXPECT_GE(y.data()[5], 0.0);
    EXPECT_LE(y.data()[10], 3.0);
}

TEST(BilinearResize, RoundTripExactForConstantAndRamp) {
    Td c = Td::full({1, 1, 4, 4}, 2.5);
    Td c2 = bilinear_resize(bilinear_resize(c, 8, 8), 4, 4);
    for (int64_t i = 0; i < c.numel(); ++i) EXPECT_DOUBLE_EQ(c2.data()[size_t(i)], 2.5);

    std::vector<double> ramp(16);
    for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) ramp[size_t(y * 4 + x)] = 2.0 * y + 0.5 * x + 1.0;
    Td r = Td::from_data({1, 1, 4, 4}, ramp);
    Td up = bilinear_resize(r, 8, 8);
    Td back = bilinear_resize(up, 4, 4);
    for (int64_t i = 0; i < r.numel(); ++i) EXPECT_DOUBLE_EQ(back.data()[size_t(i)], r.data()[size_t(i)]);
    Td down = bilinear_resize(r, 2, 2);
    Td back2 = bilinear_resize(down, 4, 4);
    for (int64_t i = 0; i < r.numel(); ++i) EXPECT_DOUBLE_EQ(back2.data()[size_t(i)], r.data()[size_t(i)]);
}

TEST(BilinearResize, Gradcheck) {
    Td x = randn({2, 2, 3, 4}, 16);
    Td w = randn({2, 2, 5, 7}, 17);
    EXPECT_LT(gc([&](Td& t) { return sum(mul(bilinear_resize(t, 5, 7), w)); }, x), 1e-5);
    Td w2 = randn({2, 2, 2, 2}, 18);
    EXPECT_LT(gc([&](Td& t) { return sum(mul(bilinear_resize(t, 2, 2), w2)); }, x), 1e-5);
}

// ---------------------------------------------------------------- gridsample

namespace {
// Identity grid under the half-pixel-center convention.
Td identity_grid(int64_t B, int64_t H, int64_t W) {
    Td g = Td::zeros({B, H, W, 2});
    for (int64_t b = 0; b < B; ++b)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W; ++x) {
                g.data()[size_t(((b * H + y) * W + x) * 2 + 0)] = (2.0 * x + 1.0) / W - 1.0;
                g.data()[size_t(((b * H + y) * W + x) * 2 + 1)] = (2.0 * y + 1.0) / H - 1.0;
            }
    return g;
}
}  // namespace

TEST(GridSample, IdentityGridReturnsImageExactly) {
    Td img = randn({2, 3, 4, 8}, 19);
    Td g = identity_grid(2, 4, 8);
    Td y = grid_sample(img, g);
    for (int64_t i = 0; i < img.numel(); ++i)
        EXPECT_DOUBLE_EQ(y.data()[size_t(i)], img.data()[size_t(i)]);
}

TEST(GridSample, OnePixelShiftOnRamp) {
    const int64_t W = 8, H = 4;
    Td img = Td::zeros({1, 1, H, W});
    for (int64_t y = 0; y < H; ++y)
        for (int64_t x = 0; x < W; ++x) img.data()[size_t(y * W + x)] = double(x);
    Td g = identity_grid(1, H, W);
    for (int64_t i = 0; i < H * W; ++i) g.data()[size_t(i * 2)] += 2.0 / W;  // +1 pixel in x
    Td y = grid_sample(img, g);
    for (int64_t r = 0; r < H; ++r) {
        for (int64_t c = 0; c < W - 1; ++c) EXPECT_DOUBLE_EQ(y.data()[size_t(r * W + c)], double(c + 1));
        EXPECT_DOUBLE_EQ(y.data()[size_t(r * W + W - 1)], double(W - 1));  // border clamp
    }
}

TEST(GridSample, GradChecksAwayFromLattice) {
    Td img = randn({1, 2, 5, 6}, 20);
    // interior samples offset by 0.37 pixel: far from cell boundaries
    Td g = identity_grid(1, 4, 5);
    for (int64_t i = 0; i < 4 * 5; ++i) {
        g.data()[size_t(i * 2 + 0)] = (2.0 * (i % 5) + 1.0) / 6.0 - 1.0 + 0.37 * 2.0 / 6.0;
        g.data()[size_t(i * 2 + 1)] = (2.0 * (i / 5) + 1.0) / 5.0 - 1.0 + 0.37 * 2.0 / 5.0;
    }
    Td w = randn({1, 2, 4, 5}, 21);
    EXPECT_LT(gc([&](Td& t) { return sum(mul(grid_sample(t, g), w)); }, img, 1e-5), 1e-5);
    EXPECT_LT(gc([&](Td& t) { return sum(mul(grid_sample(img, t), w)); }, g, 1e-5), 1e-5);
}

// ------------------------------------------------------------------ avg_pool

TEST(AvgPool, GlobalPoolIsMean) {
    Td x = Td::from_data({1, 1, 2, 2}, {1.0, 3.0, 5.0, 7.0});
    Td y = avg_pool2d(x, 1, 1);
    EXPECT_DOUBLE_EQ(y.data()[0], 4.0);
}

TEST(AvgPool, SameSizeIsIdentity) {
    Td x = randn({2, 3, 4, 5}, 22);
    Td y = avg_pool2d(x, 4, 5);
    for (int64_t i = 0; i < x.numel(); ++i) EXPECT_DOUBLE_EQ(y.data()[size_t(i)], x.data()[size_t(i)]);
}

TEST(AvgPool, ConstantInputAtPyramidSizes) {
    Td x = Td::full({1, 2, 7, 9}, 1.25);
    for (int64_t s : {1, 2, 3, 6}) {
        Td y = avg_pool2d(x, s, s);
        for (auto v : y.data()) EXPECT_DOUBLE_EQ(v, 1.25);
    }
}

TEST(AvgPool, UpscaleBinsStayNonEmpty) {
    Td x = randn({1, 1, 4, 3}, 23);
    Td y = avg_pool2d(x, 6, 6);
    EXPECT_TRUE(swindepth::all_finite(y));
}

TEST(AvgPool, Gradcheck) {
    Td x = randn({2, 2, 5, 7}, 24);
    Td w = randn({2, 2, 3, 3}, 25);
    EXPECT_LT(gc([&](Td& t) { return sum(mul(avg_pool2d(t, 3, 3), w)); }, x), 1e-6);
}

// ---------------------------------------------------------------- box filter

TEST(BoxFilter, ConstantStaysConstant) {
    Td x = Td::full({1, 2, 4, 5}, 0.8);
    Td y = box_filter3_reflect(x);
    for (auto v : y.data()) EXPECT_NEAR(v, 0.8, 1e-12);
}

TEST(BoxFilter, Gradcheck) {
    Td x = randn({1, 2, 4, 5}, 26);
    Td w = randn({1, 2, 4, 5}, 27);
    EXPECT_LT(gc([&](Td& t) { return sum(mul(box_filter3_reflect(t), w)); }, x), 1e-6);
}
