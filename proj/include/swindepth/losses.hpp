#pragma once

#include <array>
#include <string>
#include <vector>

#include "swindepth/dcmnet.hpp"
#include "swindepth/nn_ops.hpp"
#include "swindepth/rng.hpp"

namespace swindepth {

template <class T>
struct Intrinsics {
    T fx = 0, fy = 0, cx = 0, cy = 0;

    Intrinsics at_scale(int level) const {
        T d = static_cast<T>(int64_t(1) << level);
        return {fx / d, fy / d, cx / d, cy / d};
    }

    void validate() const { check(fx > 0 && fy > 0, "intrinsics: focal lengths must be positive"); }
};

// Sigmoid disparity in (0,1) to depth in [min_depth, max_depth]; strictly
// decreasing in d.
template <class T>
Tensor<T> disp_to_depth(const Tensor<T>& d, T min_depth = T(0.1), T max_depth = T(100)) {
    T min_disp = T(1) / max_depth, max_disp = T(1) / min_depth;
    auto scaled = add_scalar(mul_scalar(d, max_disp - min_disp), min_disp);
    return divide(Tensor<T>::full(d.shape(), T(1)), scaled);
}

// Backproject target pixels with depth through K^-1, transform by Tmat
// (target camera -> source camera), project with K, and sample the source.
// Projected depth is clamped to 1e-3 so grazing geometry cannot produce NaN.
template <class T>
Tensor<T> synthesize_view(const Tensor<T>& src, const Tensor<T>& depth, const Tensor<T>& Tmat,
                          const Intrinsics<T>& K) {
    check(depth.rank() == 4 && depth.dim(1) == 1, "synthesize_view: depth must be [B,1,h,w]");
    check(src.rank() == 4 && src.dim(0) == depth.dim(0) && src.dim(2) == depth.dim(2) &&
              src.dim(3) == depth.dim(3),
          "synthesize_view: source frame does not match depth resolution");
    check(Tmat.rank() == 3 && Tmat.dim(1) == 4 && Tmat.dim(2) == 4,
          "synthesize_view: pose must be [B,4,4]");
    K.validate();
    const int64_t B = depth.dim(0), h = depth.dim(2), w = depth.dim(3);

    Tensor<T> dirx = Tensor<T>::zeros({B, 1, h, w});
    Tensor<T> diry = Tensor<T>::zeros({B, 1, h, w});
    Tensor<T> ones = Tensor<T>::full({B, 1, h, w}, T(1));
    for (int64_t b = 0; b < B; ++b)
        for (int64_t y = 0; y < h; ++y)
            for (int64_t x = 0; x < w; ++x) {
                dirx.data()[size_t(((b * h) + y) * w + x)] = (static_cast<T>(x) - K.cx) / K.fx;
                diry.data()[size_t(((b * h) + y) * w + x)] = (static_cast<T>(y) - K.cy) / K.fy;
            }

    auto px = mul(depth, dirx);
    auto py = mul(depth, diry);
    const auto& pz = depth;
    auto entry = [&](int i, int j) { return reshape(slice(slice(Tmat, 1, i, 1), 2, j, 1), {B}); };
    auto xform_row = [&](int i) {
        return add(add(mul_bcast_batch(px, entry(i, 0)), mul_bcast_batch(py, entry(i, 1))),
                   add(mul_bcast_batch(pz, entry(i, 2)), mul_bcast_batch(ones, entry(i, 3))));
    };
    auto X = xform_row(0);
    auto Y = xform_row(1);
    auto Z = clamp_min(xform_row(2), T(1e-3));
    auto u = divide(X, Z);
    auto v = divide(Y, Z);
    // normalized grid coordinates under half-pixel centers
    auto gx = add_scalar(mul_scalar(u, T(2) * K.fx / static_cast<T>(w)),
                         (T(2) * K.cx + T(1)) / static_cast<T>(w) - T(1));
    auto gy = add_scalar(mul_scalar(v, T(2) * K.fy / static_cast<T>(h)),
                         (T(2) * K.cy + T(1)) / static_cast<T>(h) - T(1));
    auto grid = concat(std::vector<Tensor<T>>{permute(gx, {0, 2, 3, 1}), permute(gy, {0, 2, 3, 1})}, 3);
    return grid_sample(src, grid);
}

// Per-pixel SSIM with 3x3 local statistics (reflection padded).
template <class T>
Tensor<T> ssim(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "ssim");
    const T c1 = T(0.01) * T(0.01), c2 = T(0.03) * T(0.03);
    auto mu_a = box_filter3_reflect(a);
    auto mu_b = box_filter3_reflect(b);
    auto var_a = sub(box_filter3_reflect(mul(a, a)), mul(mu_a, mu_a));
    auto var_b = sub(box_filter3_reflect(mul(b, b)), mul(mu_b, mu_b));
    auto cov = sub(box_filter3_reflect(mul(a, b)), mul(mu_a, mu_b));
    auto num = mul(add_scalar(mul_scalar(mul(mu_a, mu_b), T(2)), c1),
                   add_scalar(mul_scalar(cov, T(2)), c2));
    auto den = mul(add_scalar(add(mul(mu_a, mu_a), mul(mu_b, mu_b)), c1),
                   add_scalar(add(var_a, var_b), c2));
    return divide(num, den);
}

// alpha*(1-SSIM)/2 + (1-alpha)*L1, averaged over color channels -> [B,1,h,w].
template <class T>
Tensor<T> photometric_error(const Tensor<T>& a, const Tensor<T>& b, T alpha = T(0.85)) {
    detail::check_same_shape(a, b, "photometric_error");
    auto l1 = mean_axis(abs_t(sub(a, b)), 1);
    if (alpha == T(0)) return l1;
    auto dssim = mean_axis(mul_scalar(add_scalar(neg(ssim(a, b)), T(1)), T(0.5)), 1);
    return add(mul_scalar(dssim, alpha), mul_scalar(l1, T(1) - alpha));
}

template <class T>
struct MaskedLoss {
    Tensor<T> loss_map;  // mask * min(pe_warped)
    Tensor<T> mask;      // constant 0/1, not differentiated
};

// Minimum over sources of the warped photometric error, auto-masked where the
// identity (un-warped) error already wins. Strict inequality: ties mask out.
template <class T>
MaskedLoss<T> min_reproj_automask(const std::vector<Tensor<T>>& pe_warped,
                                  const std::vector<Tensor<T>>& pe_identity, bool automask = true) {
    check(!pe_warped.empty(), "min_reproj_automask: no sources");
    check(!automask || pe_identity.size() == pe_warped.size(),
          "min_reproj_automask: identity/warped source counts differ");
    auto reduce_min = [](const std::vector<Tensor<T>>& xs) {
        Tensor<T> m = xs[0];
        for (size_t i = 1; i < xs.size(); ++i) m = minimum(m, xs[i]);
        return m;
    };
    auto mw = reduce_min(pe_warped);
    MaskedLoss<T> out;
    if (!automask) {
        out.mask = Tensor<T>::full(mw.shape(), T(1));
        out.loss_map = mw;
        return out;
    }
    auto mi = reduce_min(pe_identity);
    out.mask = less_than(mw, mi);
    out.loss_map = mul(mw, out.mask);
    return out;
}

// Edge-aware smoothness of mean-normalized disparity; forward differences,
// each direction averaged over its own valid positions.
template <class T>
Tensor<T> smoothness(const Tensor<T>& d, const Tensor<T>& img) {
    check(d.rank() == 4 && d.dim(1) == 1, "smoothness: disparity must be [B,1,h,w]");
    check(img.dim(2) == d.dim(2) && img.dim(3) == d.dim(3),
          "smoothness: image and disparity sizes differ");
    const int64_t B = d.dim(0), h = d.dim(2), w = d.dim(3);
    auto md = mean_axis(reshape(d, {B, h * w}), 1);  // per-image mean
    auto inv = divide(Tensor<T>::full({B}, T(1)), add_scalar(reshape(md, {B}), T(1e-7)));
    auto dn = mul_bcast_batch(d, inv);

    Tensor<T> total = Tensor<T>::scalar(T(0));
    if (w > 1) {
        auto dx = abs_t(sub(slice(dn, 3, 1, w - 1), slice(dn, 3, 0, w - 1)));
        auto ix = mean_axis(abs_t(sub(slice(img, 3, 1, w - 1), slice(img, 3, 0, w - 1))), 1);
        total = add(total, mean(mul(dx, exp_t(neg(ix)))));
    }
    if (h > 1) {
        auto dy = abs_t(sub(slice(dn, 2, 1, h - 1), slice(dn, 2, 0, h - 1)));
        auto iy = mean_axis(abs_t(sub(slice(img, 2, 1, h - 1), slice(img, 2, 0, h - 1))), 1);
        total = add(total, mean(mul(dy, exp_t(neg(iy)))));
    }
    return total;
}

template <class T>
struct LossOptions {
    T alpha = T(0.85);
    T smooth_lambda = T(1e-3);
    T min_depth = T(0.1);
    T max_depth = T(100);
    bool automask = true;
    bool tie_noise = true;
    bool resize_target = true;  // false: upsample disparities to full resolution instead
};

template <class T>
struct LossBreakdown {
    Tensor<T> total;
    std::array<double, 4> photometric{};  // per scale, finest first
    std::array<double, 4> smooth{};
};

// Joint objective over the four disparity scales. Scale l resizes the target
// and sources to the disparity resolution (or, with resize_target off,
// upsamples the disparity) and pays lambda/2^l for smoothness.
template <class T>
LossBreakdown<T> total_loss(const Tensor<T>& target, const std::vector<Tensor<T>>& sources,
                            const std::vector<Tensor<T>>& poses, const DepthPyramid<T>& depths,
                            const Intrinsics<T>& K, const LossOptions<T>& opt, Rng& rng) {
    check(sources.size() == poses.size(), "total_loss: one pose per source required");
    check(!sources.empty(), "total_loss: at least one source frame required");
    const int64_t H = target.dim(2), W = target.dim(3);

    LossBreakdown<T> out;
    Tensor<T> acc = Tensor<T>::scalar(T(0));
    for (int level = 0; level < 4; ++level) {
        const auto& disp = depths.disp[size_t(3 - level)];  // level 0 = full resolution
        Tensor<T> d_use, tgt_use;
        std::vector<Tensor<T>> src_use;
        Intrinsics<T> k_use;
        if (opt.resize_target) {
            d_use = disp;
            tgt_use = level == 0 ? target : bilinear_resize(target, H >> level, W >> level);
            for (const auto& s : sources)
                src_use.push_back(level == 0 ? s : bilinear_resize(s, H >> level, W >> level));
            k_use = K.at_scale(level);
        } else {
            d_use = level == 0 ? disp : bilinear_resize(disp, H, W);
            tgt_use = target;
            src_use = sources;
            k_use = K;
        }

        auto depth = disp_to_depth(d_use, opt.min_depth, opt.max_depth);
        std::vector<Tensor<T>> pe_w, pe_i;
        for (size_t si = 0; si < sources.size(); ++si) {
            auto warped = synthesize_view(src_use[si], depth, poses[si], k_use);
            pe_w.push_back(photometric_error(warped, tgt_use, opt.alpha));
            if (opt.automask) {
                auto pe = photometric_error(src_use[si], tgt_use, opt.alpha);
                if (opt.tie_noise) {
                    Tensor<T> noise = Tensor<T>::zeros(pe.shape());
                    for (auto& v : noise.data()) v = static_cast<T>(rng.normal()) * T(1e-5);
                    pe = add(pe, noise);
                }
                pe_i.push_back(pe);
            }
        }
        auto masked = min_reproj_automask(pe_w, pe_i, opt.automask);
        auto photo = mean(masked.loss_map);

        // smoothness always at the disparity's native scale
        auto tgt_native =
            level == 0 ? target : bilinear_resize(target, H >> level, W >> level);
        auto smooth = smoothness(disp, opt.resize_target ? tgt_use : tgt_native);
        T lambda = opt.smooth_lambda / static_cast<T>(int64_t(1) << level);

        out.photometric[size_t(level)] = static_cast<double>(photo.item());
        out.smooth[size_t(level)] = static_cast<double>(smooth.item());
        if (!std::isfinite(out.photometric[size_t(level)]))
            throw NumericError("total_loss: non-finite photometric term at scale " +
                               std::to_string(level));
        if (!std::isfinite(out.smooth[size_t(level)]))
            throw NumericError("total_loss: non-finite smoothness term at scale " +
                               std::to_string(level));
        acc = add(acc, add(photo, mul_scalar(smooth, lambda)));
    }
    out.total = mul_scalar(acc, T(0.25));
    return out;
}

}  // namespace swindepth
