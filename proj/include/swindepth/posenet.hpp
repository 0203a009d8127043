#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "swindepth/layers.hpp"

namespace swindepth {

// Axis-angle to rotation matrix: R = I + A*[v]x + B*[v]x^2 with A = sin(t)/t,
// B = (1-cos(t))/t^2. Below t = 1e-6 the 2nd-order Taylor branch is used.
// The backward rule is the analytic VJP; its coefficient ratios switch to
// series earlier (t < 1e-4) where the closed forms cancel catastrophically.
template <class T>
Tensor<T> rodrigues(const Tensor<T>& v) {
    check(v.rank() == 2 && v.dim(1) == 3, "rodrigues: expected [B,3]");
    const int64_t B = v.dim(0);
    Tensor<T> out = Tensor<T>::zeros({B, 3, 3});
    const T* pv = v.ptr();
    T* po = out.ptr();
    for (int64_t b = 0; b < B; ++b) {
        const T x = pv[b * 3], y = pv[b * 3 + 1], z = pv[b * 3 + 2];
        const T t2 = x * x + y * y + z * z;
        const T t = std::sqrt(t2);
        T A, Bc;
        if (t < T(1e-6)) {
            A = T(1) - t2 / T(6);
            Bc = T(0.5) - t2 / T(24);
        } else {
            A = std::sin(t) / t;
            Bc = (T(1) - std::cos(t)) / t2;
        }
        T* R = po + b * 9;
        const T V[9] = {0, -z, y, z, 0, -x, -y, x, 0};
        const T vv[9] = {x * x, x * y, x * z, y * x, y * y, y * z, z * x, z * y, z * z};
        for (int i = 0; i < 3; ++i)
            for (int j = 0; j < 3; ++j) {
                T v2 = vv[i * 3 + j] - (i == j ? t2 : T(0));  // [v]x^2
                R[i * 3 + j] = (i == j ? T(1) : T(0)) + A * V[i * 3 + j] + Bc * v2;
            }
    }
    auto vn = v.node(), on = out.node();
    return attach_op(
        out,
        [vn, on, B] {
            const auto& g = on->grad;
            const auto& vv_ = vn->value;
            auto& gv = vn->ensure_grad();
            for (int64_t b = 0; b < B; ++b) {
                const T x = vv_[size_t(b * 3)], y = vv_[size_t(b * 3 + 1)], z = vv_[size_t(b * 3 + 2)];
                const T* G = g.data() + b * 9;
                const T t2 = x * x + y * y + z * z;
                const T t = std::sqrt(t2);
                T A, Bc, Ca, Cb;
                if (t < T(1e-4)) {
                    A = T(1) - t2 / T(6);
                    Bc = T(0.5) - t2 / T(24);
                    Ca = T(-1.0 / 3.0) + t2 / T(30);
                    Cb = T(-1.0 / 12.0) + t2 / T(180);
                } else {
                    A = std::sin(t) / t;
                    Bc = (T(1) - std::cos(t)) / t2;
                    Ca = (t * std::cos(t) - std::sin(t)) / (t2 * t);
                    Cb = (t * std::sin(t) - T(2) * (T(1) - std::cos(t))) / (t2 * t2);
                }
                const T s0 = G[7] - G[5], s1 = G[2] - G[6], s2 = G[3] - G[1];
                const T trG = G[0] + G[4] + G[8];
                const T Gv0 = G[0] * x + G[1] * y + G[2] * z;
                const T Gv1 = G[3] * x + G[4] * y + G[5] * z;
                const T Gv2 = G[6] * x + G[7] * y + G[8] * z;
                const T Gtv0 = G[0] * x + G[3] * y + G[6] * z;
                const T Gtv1 = G[1] * x + G[4] * y + G[7] * z;
                const T Gtv2 = G[2] * x + G[5] * y + G[8] * z;
                const T vs = x * s0 + y * s1 + z * s2;
                const T vGv = x * Gv0 + y * Gv1 + z * Gv2;
                const T q = Cb * (vGv - t2 * trG) + Ca * vs;
                gv[size_t(b * 3 + 0)] += q * x + A * s0 + Bc * (Gv0 + Gtv0 - T(2) * trG * x);
                gv[size_t(b * 3 + 1)] += q * y + A * s1 + Bc * (Gv1 + Gtv1 - T(2) * trG * y);
                gv[size_t(b * 3 + 2)] += q * z + A * s2 + Bc * (Gv2 + Gtv2 - T(2) * trG * z);
            }
        },
        v);
}

// 6-vector (axis-angle, translation) to a 4x4 rigid transform. With invert,
// returns [R^T | -R^T t] instead of [R | t].
template <class T>
Tensor<T> pose_to_se3(const Tensor<T>& p, bool invert = false) {
    check(p.rank() == 2 && p.dim(1) == 6, "pose_to_se3: expected [B,6]");
    const int64_t B = p.dim(0);
    auto R = rodrigues(slice(p, 1, 0, 3));
    auto t = reshape(slice(p, 1, 3, 3), {B, 3, 1});
    Tensor<T> top;
    if (invert) {
        auto Rt = permute(R, {0, 2, 1});
        top = concat(std::vector<Tensor<T>>{Rt, mul_scalar(bmm(Rt, t), T(-1))}, 2);
    } else {
        top = concat(std::vector<Tensor<T>>{R, t}, 2);
    }
    Tensor<T> bottom = Tensor<T>::zeros({B, 1, 4});
    for (int64_t b = 0; b < B; ++b) bottom.data()[size_t(b * 4 + 3)] = T(1);
    return concat(std::vector<Tensor<T>>{top, bottom}, 1);
}

struct PoseConfig {
    std::string encoder = "small";  // small | resnet18
    double out_scale = 0.01;

    void validate() const {
        check(encoder == "small" || encoder == "resnet18",
              "pose.encoder must be small or resnet18, got '" + encoder + "'");
    }
};

// Relative camera motion from a concatenated frame pair. predict(a, b) with
// frames in temporal order yields the 6-dof transform a -> b.
template <class T>
class PoseNet {
public:
    PoseNet() = default;

    PoseNet(const PoseConfig& cfg, Rng& rng) : cfg_(cfg) {
        cfg.validate();
        scale_ = static_cast<T>(cfg.out_scale);
        if (cfg.encoder == "small") {
            int64_t widths[5] = {16, 32, 64, 128, 256};
            int64_t cin = 6;
            for (int i = 0; i < 5; ++i) {
                convs_.emplace_back(cin, widths[i], 3, 2, rng);
                cin = widths[i];
            }
            head_ = Linear<T>(256, 6, rng);
        } else {
            stem_ = Conv<T>(6, 64, 3, 2, rng);
            int64_t widths[4] = {64, 128, 256, 512};
            int64_t cin = 64;
            for (int s = 0; s < 4; ++s) {
                for (int blk = 0; blk < 2; ++blk) {
                    Block b;
                    int64_t stride = blk == 0 ? 2 : 1;
                    b.c1 = Conv<T>(cin, widths[s], 3, stride, rng);
                    b.c2 = Conv<T>(widths[s], widths[s], 3, 1, rng);
                    if (stride != 1 || cin != widths[s]) b.shortcut = Conv<T>(cin, widths[s], 1, stride, rng);
                    blocks_.push_back(std::move(b));
                    cin = widths[s];
                }
            }
            head_ = Linear<T>(512, 6, rng);
        }
    }

    // a, b: [B,3,H,W] -> [B,6] = (axis_angle, translation), scaled by 0.01.
    Tensor<T> predict(const Tensor<T>& a, const Tensor<T>& b) const {
        check(a.shape() == b.shape(), "predict_pose: frame shapes differ " + shape_str(a.shape()) +
                                          " vs " + shape_str(b.shape()));
        auto x = concat(std::vector<Tensor<T>>{a, b}, 1);
        if (cfg_.encoder == "small") {
            for (const auto& c : convs_) x = relu(c(x));
        } else {
            x = relu(stem_(x));
            for (const auto& blk : blocks_) {
                auto y = blk.c2(relu(blk.c1(x)));
                auto s = blk.shortcut ? (*blk.shortcut)(x) : x;
                x = relu(add(y, s));
            }
        }
        x = avg_pool2d(x, 1, 1);
        x = reshape(x, {x.dim(0), x.dim(1)});
        return mul_scalar(head_(x), scale_);
    }

    void params(ParamList<T>& out) const {
        if (cfg_.encoder == "small") {
            for (size_t i = 0; i < convs_.size(); ++i)
                convs_[i].params("pose.conv" + std::to_string(i), out);
        } else {
            stem_.params("pose.stem", out);
            for (size_t i = 0; i < blocks_.size(); ++i) {
                std::string p = "pose.block" + std::to_string(i);
                blocks_[i].c1.params(p + ".c1", out);
                blocks_[i].c2.params(p + ".c2", out);
                if (blocks_[i].shortcut) blocks_[i].shortcut->params(p + ".short", out);
            }
        }
        head_.params("pose.head", out);
    }

    const PoseConfig& config() const { return cfg_; }

private:
    struct Block {
        Conv<T> c1, c2;
        std::optional<Conv<T>> shortcut;
    };

    PoseConfig cfg_;
    T scale_ = T(0.01);
    std::vector<Conv<T>> convs_;
    Conv<T> stem_;
    std::vector<Block> blocks_;
    Linear<T> head_;
};

}  // namespace swindepth
