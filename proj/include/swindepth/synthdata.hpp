#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <string>
#include <vector>

#include "swindepth/image_io.hpp"
#include "swindepth/losses.hpp"
#include "swindepth/rng.hpp"

namespace swindepth {

// Textured ground plane + back wall + fronto-parallel rectangles, rendered by
// ray-plane intersection along a forward trajectory with lateral sway. Every
// pixel hits a surface, so ground-truth depth is finite and unique.
struct SceneSpec {
    uint64_t seed = 7;
    int64_t width = 192, height = 64;
    int64_t frames = 200;
    int64_t rect_count = 8;
    double focal = 0.0;  // pixels; 0 selects 0.7 * width
    double ground_y = 1.5;
    double wall_z = 30.0;
    double rect_near = 6.0, rect_far = 16.0;
    double forward_speed = 0.02;   // units per frame
    double sway_amplitude = 0.15;  // lateral sinusoid, units
    double sway_period = 20.0;     // frames

    double fx() const { return focal > 0 ? focal : 0.7 * static_cast<double>(width); }

    void validate() const {
        check(width >= 8 && height >= 8 && frames >= 1, "scene: degenerate size");
        check(rect_count >= 0, "scene: negative rectangle count");
        if (rect_count > 0) {
            check(rect_near > 0.2 && rect_far > rect_near, "scene: invalid rectangle depth range");
            check(wall_z > rect_far, "scene: wall must sit behind the rectangles");
        }
        check(wall_z > 0.5, "scene: wall too close");
        check(ground_y > 0, "scene: camera must start above the ground plane");
    }
};

namespace detail {

// Periodic band-limited texture: raster of seeded sinusoid mixtures sampled
// bilinearly with wrap. Integer frequencies over the tile keep it seamless.
class BandTexture {
public:
    static constexpr int kRes = 256;
    static constexpr double kTile = 6.4;  // world units per tile

    BandTexture() = default;

    explicit BandTexture(Rng& rng) {
        struct Wave {
            double fu, fv, phase, amp;
        };
        std::array<std::vector<Wave>, 3> waves;
        const int harmonics[4] = {2, 4, 8, 16};
        const double amps[4] = {0.20, 0.12, 0.08, 0.05};
        for (int c = 0; c < 3; ++c)
            for (int k = 0; k < 4; ++k) {
                Wave w;
                int n = harmonics[k];
                w.fu = static_cast<double>(rng.uniform_int(n) + 1);
                w.fv = static_cast<double>(n + 1 - w.fu);
                w.phase = rng.uniform(0.0, 2.0 * M_PI);
                w.amp = amps[k] * rng.uniform(0.7, 1.0);
                waves[static_cast<size_t>(c)].push_back(w);
            }
        data_.assign(kRes * kRes * 3, 0.0f);
        for (int y = 0; y < kRes; ++y)
            for (int x = 0; x < kRes; ++x) {
                double u = static_cast<double>(x) / kRes, v = static_cast<double>(y) / kRes;
                for (int c = 0; c < 3; ++c) {
                    double val = 0.5;
                    for (const auto& w : waves[static_cast<size_t>(c)])
                        val += w.amp * std::sin(2.0 * M_PI * (w.fu * u + w.fv * v) + w.phase);
                    val = val < 0.02 ? 0.02 : (val > 0.98 ? 0.98 : val);
                    data_[static_cast<size_t>((y * kRes + x) * 3 + c)] = static_cast<float>(val);
                }
            }
    }

    // world-space coordinates; bilinear with wrap
    void sample(double wu, double wv, double* rgb) const {
        double u = wu / kTile, v = wv / kTile;
        u -= std::floor(u);
        v -= std::floor(v);
        double fx = u * kRes, fy = v * kRes;
        int x0 = static_cast<int>(fx) % kRes, y0 = static_cast<int>(fy) % kRes;
        int x1 = (x0 + 1) % kRes, y1 = (y0 + 1) % kRes;
        double ax = fx - std::floor(fx), ay = fy - std::floor(fy);
        for (int c = 0; c < 3; ++c) {
            double v00 = data_[static_cast<size_t>((y0 * kRes + x0) * 3 + c)];
            double v01 = data_[static_cast<size_t>((y0 * kRes + x1) * 3 + c)];
            double v10 = data_[static_cast<size_t>((y1 * kRes + x0) * 3 + c)];
            double v11 = data_[static_cast<size_t>((y1 * kRes + x1) * 3 + c)];
            rgb[c] = (1 - ay) * ((1 - ax) * v00 + ax * v01) + ay * ((1 - ax) * v10 + ax * v11);
        }
    }

private:
    std::vector<float> data_;
};

}  // namespace detail

template <class T>
struct RenderedSequence {
    std::vector<Tensor<T>> frames;  // [3,H,W] in [0,1]
    std::vector<Tensor<T>> depths;  // [1,H,W], camera z-depth
    std::vector<std::array<double, 12>> poses;  // camera-to-world 3x4, row-major
    Intrinsics<T> intrinsics;
};

// T_{a->b} = P_b^{-1} * P_a for camera-to-world poses; returns [1,4,4].
template <class T>
Tensor<T> relative_pose(const std::array<double, 12>& pa, const std::array<double, 12>& pb) {
    auto mul_rows = [](const double* R, const double* v) {
        return std::array<double, 3>{R[0] * v[0] + R[1] * v[1] + R[2] * v[2],
                                     R[4] * v[0] + R[5] * v[1] + R[6] * v[2],
                                     R[8] * v[0] + R[9] * v[1] + R[10] * v[2]};
    };
    // inv(P_b): R^T, -R^T t
    double rbt[12];
    for (int i = 0; i < 3; ++i)
        for (int j = 0; j < 3; ++j) rbt[i * 4 + j] = pb[static_cast<size_t>(j * 4 + i)];
    double tb[3] = {pb[3], pb[7], pb[11]};
    auto mtb = mul_rows(rbt, tb);
    rbt[3] = -mtb[0];
    rbt[7] = -mtb[1];
    rbt[11] = -mtb[2];

    Tensor<T> out = Tensor<T>::zeros({1, 4, 4});
    for (int i = 0; i < 3; ++i) {
        for (int j = 0; j < 3; ++j) {
            double acc = 0;
            for (int k = 0; k < 3; ++k) acc += rbt[i * 4 + k] * pa[static_cast<size_t>(k * 4 + j)];
            out.data()[static_cast<size_t>(i * 4 + j)] = static_cast<T>(acc);
        }
        double acc = rbt[i * 4 + 3];
        for (int k = 0; k < 3; ++k) acc += rbt[i * 4 + k] * pa[static_cast<size_t>(k * 4 + 3)];
        out.data()[static_cast<size_t>(i * 4 + 3)] = static_cast<T>(acc);
    }
    out.data()[15] = T(1);
    return out;
}

template <class T>
RenderedSequence<T> render_sequence(const SceneSpec& spec) {
    spec.validate();
    const int64_t W = spec.width, H = spec.height;
    const double fx = spec.fx(), fy = fx;
    const double cx = (static_cast<double>(W) - 1.0) / 2.0, cy = (static_cast<double>(H) - 1.0) / 2.0;

    Rng rng(spec.seed);
    detail::BandTexture ground_tex(rng), wall_tex(rng);
    struct Rect {
        double z, x0, x1, y0, y1, off_u, off_v;
        detail::BandTexture tex;
    };
    std::vector<Rect> rects;
    for (int64_t i = 0; i < spec.rect_count; ++i) {
        Rect r;
        r.z = spec.rect_near + (spec.rect_far - spec.rect_near) * rng.uniform();
        double w_half = 0.35 * r.z * rng.uniform(0.35, 0.9);
        double h_half = 0.22 * r.z * rng.uniform(0.35, 0.9);
        double cx_w = rng.uniform(-0.45, 0.45) * r.z;
        double cy_w = rng.uniform(-0.30, 0.12) * r.z;
        r.x0 = cx_w - w_half;
        r.x1 = cx_w + w_half;
        r.y0 = cy_w - h_half;
        r.y1 = cy_w + h_half;
        r.off_u = rng.uniform(0.0, 6.0);
        r.off_v = rng.uniform(0.0, 6.0);
        r.tex = detail::BandTexture(rng);
        rects.push_back(std::move(r));
    }

    // camera path; error out if it would pierce any surface
    std::vector<std::array<double, 3>> centers;
    for (int64_t t = 0; t < spec.frames; ++t) {
        double sx = spec.sway_amplitude * std::sin(2.0 * M_PI * static_cast<double>(t) / spec.sway_period);
        double sz = spec.forward_speed * static_cast<double>(t);
        if (sz > spec.wall_z - 1.0) throw DataError("render_sequence: trajectory reaches the back wall");
        for (const auto& r : rects)
            if (sz > r.z - 1.0)
                throw DataError("render_sequence: trajectory passes through scene geometry");
        centers.push_back({sx, 0.0, sz});
    }

    RenderedSequence<T> seq;
    seq.intrinsics = Intrinsics<T>{static_cast<T>(fx), static_cast<T>(fy), static_cast<T>(cx),
                                   static_cast<T>(cy)};
    for (int64_t t = 0; t < spec.frames; ++t) {
        const auto& C = centers[static_cast<size_t>(t)];
        Tensor<T> img = Tensor<T>::zeros({3, H, W});
        Tensor<T> dep = Tensor<T>::zeros({1, H, W});
        for (int64_t v = 0; v < H; ++v)
            for (int64_t u = 0; u < W; ++u) {
                const double dx = (static_cast<double>(u) - cx) / fx;
                const double dy = (static_cast<double>(v) - cy) / fy;
                double best_t = spec.wall_z - C[2];  // wall always hits (dz = 1)
                int surf = 0;                        // 0 wall, 1 ground, 2+i rect i
                if (dy > 1e-9) {
                    double tg = (spec.ground_y - C[1]) / dy;
                    if (tg > 0.1 && tg < best_t) {
                        best_t = tg;
                        surf = 1;
                    }
                }
                for (size_t i = 0; i < rects.size(); ++i) {
                    const auto& r = rects[i];
                    double tr = r.z - C[2];
                    if (tr <= 0.1 || tr >= best_t) continue;
                    double X = C[0] + tr * dx, Y = C[1] + tr * dy;
                    if (X >= r.x0 && X <= r.x1 && Y >= r.y0 && Y <= r.y1) {
                        best_t = tr;
                        surf = 2 + static_cast<int>(i);
                    }
                }
                double X = C[0] + best_t * dx, Y = C[1] + best_t * dy, Z = C[2] + best_t;
                double rgb[3];
                if (surf == 0)
                    wall_tex.sample(X, Y, rgb);
                else if (surf == 1)
                    ground_tex.sample(X, Z, rgb);
                else {
                    const auto& r = rects[static_cast<size_t>(surf - 2)];
                    r.tex.sample(X + r.off_u, Y + r.off_v, rgb);
                }
                for (int c = 0; c < 3; ++c)
                    img.data()[static_cast<size_t>((c * H + v) * W + u)] = static_cast<T>(rgb[c]);
                dep.data()[static_cast<size_t>(v * W + u)] = static_cast<T>(best_t);
            }
        seq.frames.push_back(std::move(img));
        seq.depths.push_back(std::move(dep));
        seq.poses.push_back({1, 0, 0, C[0], 0, 1, 0, C[1], 0, 0, 1, C[2]});
    }
    return seq;
}

// Dataset directory layout:
//   manifest.txt                      "<scene_id> <frame_count>" per line
//   scene_<id>/frame_%06d.ppm         8-bit binary PPM
//   scene_<id>/depth_%06d.pfm         PFM, scale -1.0
//   scene_<id>/poses.txt              3x4 camera-to-world, row-major, one per line
//   scene_<id>/intrinsics.txt         "fx fy cx cy"
template <class T>
void write_dataset(const RenderedSequence<T>& seq, const std::string& dir,
                   const std::string& scene_id = "000") {
    namespace fs = std::filesystem;
    std::error_code ec;
    fs::create_directories(fs::path(dir) / ("scene_" + scene_id), ec);
    if (ec) throw DataError("write_dataset: cannot create " + dir + ": " + ec.message());
    const std::string sdir = (fs::path(dir) / ("scene_" + scene_id)).string();

    char name[64];
    for (size_t i = 0; i < seq.frames.size(); ++i) {
        std::snprintf(name, sizeof(name), "/frame_%06zu.ppm", i);
        write_ppm(sdir + name, seq.frames[i]);
        std::snprintf(name, sizeof(name), "/depth_%06zu.pfm", i);
        write_pfm(sdir + name, seq.depths[i]);
    }
    {
        std::ofstream out(sdir + "/poses.txt");
        if (!out) throw DataError("write_dataset: cannot open poses.txt in " + sdir);
        out << std::setprecision(17);
        for (const auto& p : seq.poses) {
            for (int i = 0; i < 12; ++i) out << (i ? " " : "") << p[static_cast<size_t>(i)];
            out << "\n";
        }
    }
    {
        std::ofstream out(sdir + "/intrinsics.txt");
        if (!out) throw DataError("write_dataset: cannot open intrinsics.txt in " + sdir);
        out << std::setprecision(17) << double(seq.intrinsics.fx) << " " << double(seq.intrinsics.fy)
            << " " << double(seq.intrinsics.cx) << " " << double(seq.intrinsics.cy) << "\n";
    }
    // append or create the manifest entry
    std::vector<std::string> lines;
    {
        std::ifstream in(fs::path(dir) / "manifest.txt");
        std::string line;
        while (std::getline(in, line))
            if (!line.empty() && line.substr(0, scene_id.size() + 6) != "scene_" + scene_id)
                lines.push_back(line);
    }
    lines.push_back("scene_" + scene_id + " " + std::to_string(seq.frames.size()));
    std::ofstream out(fs::path(dir) / "manifest.txt");
    if (!out) throw DataError("write_dataset: cannot open manifest in " + dir);
    for (const auto& l : lines) out << l << "\n";
}

}  // namespace swindepth
