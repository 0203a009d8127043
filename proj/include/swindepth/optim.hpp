#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "swindepth/layers.hpp"

namespace swindepth {

// 1e-4 for the first decay_epoch epochs, then divided by 10.
template <class T>
struct LrSchedule {
    T initial = T(1e-4);
    int64_t decay_epoch = 15;
    T decay_factor = T(0.1);

    T at(int64_t epoch) const {
        check(epoch >= 0, "lr_at: negative epoch");
        return epoch < decay_epoch ? initial : initial * decay_factor;
    }
};

template <class T>
struct AdamConfig {
    T beta1 = T(0.9);
    T beta2 = T(0.999);
    T eps = T(1e-8);
    T clip_norm = T(0);  // 0 disables clipping
};

// Bias-corrected Adam over a fixed parameter list. Gradients are validated
// finite before any state mutates; a bad gradient aborts the step naming the
// parameter.
template <class T>
class Adam {
public:
    Adam() = default;

    Adam(ParamList<T> params, AdamConfig<T> cfg = {}) : params_(std::move(params)), cfg_(cfg) {
        for (const auto& [name, p] : params_.items) {
            m_.emplace_back(static_cast<size_t>(p.numel()), T(0));
            v_.emplace_back(static_cast<size_t>(p.numel()), T(0));
        }
    }

    void step(T lr) {
        for (const auto& [name, p] : params_.items)
            for (int64_t i = 0; i < p.numel(); ++i)
                if (!std::isfinite(p.grad_at(i)))
                    throw NumericError("adam_step: non-finite gradient in parameter '" + name + "'");

        T scale = T(1);
        if (cfg_.clip_norm > T(0)) {
            double sq = 0;
            for (const auto& [name, p] : params_.items)
                for (int64_t i = 0; i < p.numel(); ++i) {
                    double g = static_cast<double>(p.grad_at(i));
                    sq += g * g;
                }
            double norm = std::sqrt(sq);
            if (norm > static_cast<double>(cfg_.clip_norm))
                scale = static_cast<T>(static_cast<double>(cfg_.clip_norm) / norm);
        }

        ++t_;
        const T bc1 = T(1) - std::pow(cfg_.beta1, static_cast<T>(t_));
        const T bc2 = T(1) - std::pow(cfg_.beta2, static_cast<T>(t_));
        for (size_t k = 0; k < params_.items.size(); ++k) {
            auto& p = params_.items[k].second;
            auto& m = m_[k];
            auto& v = v_[k];
            T* pv = const_cast<T*>(p.ptr());
            for (int64_t i = 0; i < p.numel(); ++i) {
                T g = p.grad_at(i) * scale;
                m[static_cast<size_t>(i)] = cfg_.beta1 * m[static_cast<size_t>(i)] + (T(1) - cfg_.beta1) * g;
                v[static_cast<size_t>(i)] = cfg_.beta2 * v[static_cast<size_t>(i)] + (T(1) - cfg_.beta2) * g * g;
                T mhat = m[static_cast<size_t>(i)] / bc1;
                T vhat = v[static_cast<size_t>(i)] / bc2;
                pv[i] -= lr * mhat / (std::sqrt(vhat) + cfg_.eps);
            }
        }
    }

    void zero_grads() {
        for (auto& [name, p] : params_.items) p.zero_grad();
    }

    int64_t step_count() const { return t_; }
    void set_step_count(int64_t t) { t_ = t; }
    const ParamList<T>& params() const { return params_; }
    std::vector<std::vector<T>>& moment1() { return m_; }
    std::vector<std::vector<T>>& moment2() { return v_; }

private:
    ParamList<T> params_;
    AdamConfig<T> cfg_;
    std::vector<std::vector<T>> m_, v_;
    int64_t t_ = 0;
};

}  // namespace swindepth
