#include <gtest/gtest.h>

#include <filesystem>

#include "swindepth/dataset.hpp"
#include "swindepth/synthdata.hpp"

using swindepth::SceneSpec;
using Td = swindepth::Tensor<double>;
using Tf = swindepth::Tensor<float>;

namespace {
SceneSpec small_scene() {
    SceneSpec spec;
    spec.width = 96;
    spec.height = 64;
    spec.frames = 12;
    spec.rect_count = 4;
    return spec;
}

std::string temp_dir(const std::string& tag) {
    auto p = std::filesystem::temp_directory_path() / ("swindepth_test_" + tag);
    std::filesystem::remove_all(p);
    std::filesystem::create_directories(p);
    return p.string();
}
}  // namespace

TEST(Render, SinglePlaneConstantDepth) {
    SceneSpec spec;
    spec.width = 32;
    spec.height = 32;
    spec.frames = 2;
    spec.rect_count = 0;
    spec.wall_z = 5.0;
    spec.ground_y = 1e9;  // ground out of view: wall only
    spec.forward_speed = 0.0;
    spec.sway_amplitude = 0.0;
    auto seq = swindepth::render_sequence<double>(spec);
    for (auto v : seq.depths[0].data()) ASSERT_DOUBLE_EQ(v, 5.0);
    for (auto v : seq.depths[1].data()) ASSERT_DOUBLE_EQ(v, 5.0);
}

TEST(Render, DeterministicForSameSpec) {
    auto a = swindepth::render_sequence<float>(small_scene());
    auto b = swindepth::render_sequence<float>(small_scene());
    for (size_t t = 0; t < a.frames.size(); ++t) {
        for (int64_t i = 0; i < a.frames[t].numel(); ++i)
            ASSERT_EQ(a.frames[t].data()[size_t(i)], b.frames[t].data()[size_t(i)]);
        for (int64_t i = 0; i < a.depths[t].numel(); ++i)
            ASSERT_EQ(a.depths[t].data()[size_t(i)], b.depths[t].data()[size_t(i)]);
    }
}

// On a single fronto-parallel plane, a pure x step of tx shifts the image by
// exactly fx*tx/z pixels; configured here to be exactly 4 pixels.
TEST(Render, PureTranslationShiftsWallByPinholePixels) {
    SceneSpec spec;
    spec.width = 128;
    spec.height = 32;
    spec.frames = 2;
    spec.rect_count = 0;
    spec.wall_z = 4.0;
    spec.ground_y = 1e9;
    spec.focal = 64.0;
    spec.forward_speed = 0.0;
    spec.sway_amplitude = 0.5;
    spec.sway_period = 12.0;  // x(1) = 0.5*sin(pi/6) = 0.25 -> shift 64*0.25/4 = 4 px
    auto seq = swindepth::render_sequence<double>(spec);
    const int64_t H = 32, W = 128;
    for (int64_t c = 0; c < 3; ++c)
        for (int64_t y = 0; y < H; ++y)
            for (int64_t x = 0; x < W - 4; ++x)
                ASSERT_NEAR(seq.frames[1].data()[size_t((c * H + y) * W + x)],
                            seq.frames[0].data()[size_t((c * H + y) * W + x + 4)], 1e-12);
}

TEST(Render, DepthEdgesMatchRectangleSilhouettes) {
    SceneSpec spec = small_scene();
    auto seq = swindepth::render_sequence<double>(spec);
    // nearest rectangle: find its depth (min over depth map inside upper half
    // that is neither wall nor ground)
    const int64_t H = spec.height, W = spec.width;
    const double fx = spec.fx();
    const double cx = (W - 1) / 2.0, cy = (H - 1) / 2.0;
    // locate the minimum rect depth from the map itself
    double zmin = 1e9;
    for (auto v : seq.depths[0].data()) zmin = std::min(zmin, v);
    ASSERT_LT(zmin, spec.wall_z);
    // every pixel at the minimum depth maps inside an axis-aligned screen
    // rectangle; its complement ring of 2 pixels must be strictly deeper
    int64_t u0 = W, u1 = -1, v0 = H, v1 = -1;
    for (int64_t v = 0; v < H; ++v)
        for (int64_t u = 0; u < W; ++u)
            if (std::fabs(seq.depths[0].data()[size_t(v * W + u)] - zmin) < 1e-9) {
                u0 = std::min(u0, u);
                u1 = std::max(u1, u);
                v0 = std::min(v0, v);
                v1 = std::max(v1, v);
            }
    ASSERT_LE(u0, u1);
    // interior is exactly zmin
    for (int64_t v = v0; v <= v1; ++v)
        for (int64_t u = u0; u <= u1; ++u)
            ASSERT_NEAR(seq.depths[0].data()[size_t(v * W + u)], zmin, 1e-9)
                << "hole inside silhouette at " << u << "," << v;
    // ring outside is strictly deeper (silhouette is sharp)
    for (int64_t v = v0 - 1; v <= v1 + 1; ++v)
        for (int64_t u = u0 - 1; u <= u1 + 1; ++u) {
            if (v >= v0 && v <= v1 && u >= u0 && u <= u1) continue;
            if (v < 0 || v >= H || u < 0 || u >= W) continue;
            ASSERT_GT(seq.depths[0].data()[size_t(v * W + u)], zmin + 1e-9);
        }
    (void)fx;
    (void)cx;
    (void)cy;
}

// The ground-truth warp oracle: frame t+1 warped into frame t by gt depth and
// gt pose reproduces frame t within 0.02 mean absolute error, occluded and
// border pixels excluded.
TEST(Render, PhotometricConsistencyUnderGtWarp) {
    SceneSpec spec = small_scene();
    spec.frames = 8;
    auto seq = swindepth::render_sequence<double>(spec);
    const int64_t H = spec.height, W = spec.width;
    const int64_t t = 3;

    Td tgt = reshape(seq.frames[size_t(t)], {1, 3, H, W});
    Td src = reshape(seq.frames[size_t(t + 1)], {1, 3, H, W});
    Td depth = reshape(seq.depths[size_t(t)], {1, 1, H, W});
    Td T = swindepth::relative_pose<double>(seq.poses[size_t(t)], seq.poses[size_t(t + 1)]);
    Td warped = swindepth::synthesize_view(src, depth, T, seq.intrinsics);

    // visibility: project each target pixel into t+1 and depth-test
    const auto& K = seq.intrinsics;
    const auto& src_depth = seq.depths[size_t(t + 1)];
    double err_sum = 0;
    int64_t count = 0;
    const int64_t border = 6;
    for (int64_t y = border; y < H - border; ++y)
        for (int64_t x = border; x < W - border; ++x) {
            double z = seq.depths[size_t(t)].data()[size_t(y * W + x)];
            double px = z * (double(x) - K.cx) / K.fx, py = z * (double(y) - K.cy) / K.fy, pz = z;
            double X = T.data()[0] * px + T.data()[1] * py + T.data()[2] * pz + T.data()[3];
            double Y = T.data()[4] * px + T.data()[5] * py + T.data()[6] * pz + T.data()[7];
            double Z = T.data()[8] * px + T.data()[9] * py + T.data()[10] * pz + T.data()[11];
            double u = K.fx * X / Z + K.cx, v = K.fy * Y / Z + K.cy;
            int64_t ui = static_cast<int64_t>(std::lround(u)), vi = static_cast<int64_t>(std::lround(v));
            if (ui < 0 || ui >= W || vi < 0 || vi >= H) continue;
            if (std::fabs(src_depth.data()[size_t(vi * W + ui)] - Z) > 0.08 * Z) continue;  // occluded
            for (int64_t c = 0; c < 3; ++c) {
                err_sum += std::fabs(warped.data()[size_t((c * H + y) * W + x)] -
                                     tgt.data()[size_t((c * H + y) * W + x)]);
                ++count;
            }
        }
    ASSERT_GT(count, 3 * (H - 2 * border) * (W - 2 * border) / 2);
    double mean_err = err_sum / double(count);
    EXPECT_LT(mean_err, 0.02);
}

TEST(Render, DegenerateTrajectoryThrows) {
    SceneSpec spec = small_scene();
    spec.forward_speed = 2.0;  // would fly through the rectangles
    EXPECT_THROW(swindepth::render_sequence<double>(spec), swindepth::DataError);
}

TEST(Dataset, WriteReadRoundTrip) {
    auto dir = temp_dir("roundtrip");
    SceneSpec spec = small_scene();
    spec.frames = 4;
    auto seq = swindepth::render_sequence<float>(spec);
    swindepth::write_dataset(seq, dir, "000");

    auto ds = swindepth::Dataset<float>::load(dir);
    ASSERT_EQ(ds.scenes.size(), 1u);
    const auto& sc = ds.scenes[0];
    EXPECT_EQ(sc.frame_count, 4);
    EXPECT_EQ(sc.poses.size(), 4u);
    EXPECT_NEAR(double(sc.intrinsics.fx), double(seq.intrinsics.fx), 1e-12);

    // depth round-trips bitwise (float32 payload)
    Tf dep = sc.depth(2);
    for (int64_t i = 0; i < dep.numel(); ++i)
        ASSERT_EQ(dep.data()[size_t(i)], seq.depths[2].data()[size_t(i)]);

    // images within 8-bit quantization of the rendered values
    Tf img = sc.frame(2);
    for (int64_t i = 0; i < img.numel(); ++i)
        ASSERT_LE(std::fabs(double(img.data()[size_t(i)]) - double(seq.frames[2].data()[size_t(i)])),
                  0.5 / 255.0 + 1e-6);
}

TEST(Dataset, ManifestFrameCountMatchesSpec) {
    auto dir = temp_dir("manifest");
    SceneSpec spec = small_scene();
    spec.frames = 7;
    auto seq = swindepth::render_sequence<float>(spec);
    swindepth::write_dataset(seq, dir, "003");
    std::ifstream in(dir + "/manifest.txt");
    std::string id;
    int64_t n;
    ASSERT_TRUE(static_cast<bool>(in >> id >> n));
    EXPECT_EQ(id, "scene_003");
    EXPECT_EQ(n, 7);
}

TEST(Dataset, MissingManifestThrows) {
    auto dir = temp_dir("missing");
    EXPECT_THROW(swindepth::Dataset<float>::load(dir), swindepth::DataError);
}
