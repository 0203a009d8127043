#pragma once

#include <functional>

#include "swindepth/tensor.hpp"

namespace swindepth {

// Central-difference gradient verification. Computes the analytic gradient of
// the scalar-valued f at x via the tape, then perturbs coordinates of x (all
// of them, or a seeded subsample of max_coords) and returns the max over
// coordinates of |analytic - numeric| / max(|analytic|, |numeric|, 1e-12).
//
// f may ignore its argument and close over x instead; the perturbation is
// applied in place, so any recomputation that reads x sees it.
template <class T>
double finite_diff_check(const std::function<Tensor<T>(Tensor<T>&)>& f, Tensor<T>& x, T eps,
                         int64_t max_coords = -1, uint64_t subsample_seed = 7) {
    x.set_requires_grad(true);
    x.zero_grad();
    std::vector<T> analytic;
    {
        Tape<T> tape;
        Tensor<T> loss = f(x);
        check(loss.numel() == 1, "finite_diff_check: f must be scalar-valued");
        tape.backward(loss);
        analytic.assign(static_cast<size_t>(x.numel()), T(0));
        for (int64_t i = 0; i < x.numel(); ++i) analytic[static_cast<size_t>(i)] = x.grad_at(i);
    }

    std::vector<int64_t> coords;
    const int64_t n = x.numel();
    if (max_coords < 0 || max_coords >= n) {
        coords.resize(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    } else {
        Rng rng(subsample_seed);
        std::vector<int64_t> all(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) all[static_cast<size_t>(i)] = i;
        rng.shuffle(all);
        coords.assign(all.begin(), all.begin() + max_coords);
    }

    double worst = 0;
    for (int64_t i : coords) {
        T saved = x.data()[static_cast<size_t>(i)];
        x.data()[static_cast<size_t>(i)] = saved + eps;
        double fp = static_cast<double>(f(x).item());
        x.data()[static_cast<size_t>(i)] = saved - eps;
        double fm = static_cast<double>(f(x).item());
        x.data()[static_cast<size_t>(i)] = saved;
        double numeric = (fp - fm) / (2.0 * static_cast<double>(eps));
        double a = static_cast<double>(analytic[static_cast<size_t>(i)]);
        double denom = std::max({std::fabs(a), std::fabs(numeric), 1e-12});
        worst = std::max(worst, std::fabs(a - numeric) / denom);
    }
    return worst;
}

}  // namespace swindepth
