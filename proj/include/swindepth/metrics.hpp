#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <string>
#include <vector>

#include "swindepth/tensor.hpp"

namespace swindepth {

struct MetricsReport {
    double abs_rel = 0, sq_rel = 0, rmse = 0, rmse_log = 0, log10 = 0;
    double delta1 = 0, delta2 = 0, delta3 = 0;
    int64_t n_images = 0;
    double cap = 80.0;
    bool median_scaled = true;
};

namespace detail {
inline double median_of(std::vector<double> v) {
    check(!v.empty(), "median of empty set");
    std::sort(v.begin(), v.end());
    size_t n = v.size();
    return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}
}  // namespace detail

// Seven-metric evaluation of one depth map against ground truth. Valid pixels
// are gt > 0 and gt <= cap; with median_scale the prediction is multiplied by
// median(gt)/median(pred) first; predictions clamp to [cap_min, cap].
template <class T>
MetricsReport compute_metrics_single(const Tensor<T>& pred, const Tensor<T>& gt, double cap = 80.0,
                                     double cap_min = 1e-3, bool median_scale = true) {
    check(pred.shape() == gt.shape(), "compute_metrics: prediction and gt shapes differ " +
                                          shape_str(pred.shape()) + " vs " + shape_str(gt.shape()));
    std::vector<double> p, g;
    for (int64_t i = 0; i < gt.numel(); ++i) {
        double gv = static_cast<double>(gt.data()[static_cast<size_t>(i)]);
        if (gv > 0 && gv <= cap) {
            g.push_back(gv);
            p.push_back(static_cast<double>(pred.data()[static_cast<size_t>(i)]));
        }
    }
    if (g.empty()) throw DataError("compute_metrics: no valid ground-truth pixels (gt>0, gt<=cap)");

    if (median_scale) {
        double s = detail::median_of(g) / detail::median_of(p);
        for (auto& v : p) v *= s;
    }
    for (auto& v : p) v = std::min(std::max(v, cap_min), cap);

    MetricsReport r;
    r.n_images = 1;
    r.cap = cap;
    r.median_scaled = median_scale;
    const double n = static_cast<double>(g.size());
    for (size_t i = 0; i < g.size(); ++i) {
        double d = p[i] - g[i];
        r.abs_rel += std::fabs(d) / g[i];
        r.sq_rel += d * d / g[i];
        r.rmse += d * d;
        double dl = std::log(p[i]) - std::log(g[i]);
        r.rmse_log += dl * dl;
        r.log10 += std::fabs(std::log10(p[i]) - std::log10(g[i]));
        double ratio = std::max(p[i] / g[i], g[i] / p[i]);
        if (ratio < 1.25) r.delta1 += 1;
        if (ratio < 1.25 * 1.25) r.delta2 += 1;
        if (ratio < 1.25 * 1.25 * 1.25) r.delta3 += 1;
    }
    r.abs_rel /= n;
    r.sq_rel /= n;
    r.rmse = std::sqrt(r.rmse / n);
    r.rmse_log = std::sqrt(r.rmse_log / n);
    r.log10 /= n;
    r.delta1 /= n;
    r.delta2 /= n;
    r.delta3 /= n;
    return r;
}

// Equal-weight average of per-image reports.
inline MetricsReport aggregate_metrics(const std::vector<MetricsReport>& reports) {
    check(!reports.empty(), "aggregate_metrics: no reports");
    MetricsReport out;
    out.cap = reports[0].cap;
    out.median_scaled = reports[0].median_scaled;
    for (const auto& r : reports) {
        out.abs_rel += r.abs_rel;
        out.sq_rel += r.sq_rel;
        out.rmse += r.rmse;
        out.rmse_log += r.rmse_log;
        out.log10 += r.log10;
        out.delta1 += r.delta1;
        out.delta2 += r.delta2;
        out.delta3 += r.delta3;
        out.n_images += r.n_images;
    }
    const double n = static_cast<double>(reports.size());
    out.abs_rel /= n;
    out.sq_rel /= n;
    out.rmse /= n;
    out.rmse_log /= n;
    out.log10 /= n;
    out.delta1 /= n;
    out.delta2 /= n;
    out.delta3 /= n;
    return out;
}

// Plain-text table in the standard column order, plus log10.
inline std::string format_metrics_table(const MetricsReport& r) {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "| Abs Rel | Sq Rel |  RMSE  | RMSE log | d<1.25 | d<1.25^2 | d<1.25^3 | log10  |\n"
                  "|  %.3f  | %.3f  | %6.3f |  %.3f   | %.3f  |  %.3f   |  %.3f   | %.3f  |\n"
                  "(%lld images, cap %.1f, median scaling %s)\n",
                  r.abs_rel, r.sq_rel, r.rmse, r.rmse_log, r.delta1, r.delta2, r.delta3, r.log10,
                  static_cast<long long>(r.n_images), r.cap, r.median_scaled ? "on" : "off");
    return buf;
}

inline std::string format_metrics_kv(const MetricsReport& r) {
    char buf[512];
    std::snprintf(buf, sizeof(buf),
                  "abs_rel=%.12g\nsq_rel=%.12g\nrmse=%.12g\nrmse_log=%.12g\nlog10=%.12g\n"
                  "delta1=%.12g\ndelta2=%.12g\ndelta3=%.12g\nn_images=%lld\ncap=%.12g\n"
                  "median_scaled=%d\n",
                  r.abs_rel, r.sq_rel, r.rmse, r.rmse_log, r.log10, r.delta1, r.delta2, r.delta3,
                  static_cast<long long>(r.n_images), r.cap, r.median_scaled ? 1 : 0);
    return buf;
}

}  // namespace swindepth
