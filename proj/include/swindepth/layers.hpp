#pragma once

#include <string>
#include <utility>
#include <vector>

#include "swindepth/nn_ops.hpp"
#include "swindepth/tensor.hpp"

namespace swindepth {

template <class T>
struct ParamList {
    std::vector<std::pair<std::string, Tensor<T>>> items;

    void add(const std::string& name, const Tensor<T>& t) { items.emplace_back(name, t); }

    int64_t total_count() const {
        int64_t n = 0;
        for (const auto& [name, t] : items) n += t.numel();
        return n;
    }

    const Tensor<T>* find(const std::string& name) const {
        for (const auto& [n, t] : items)
            if (n == name) return &t;
        return nullptr;
    }
};

enum class Act { Elu, Relu };

inline Act act_from_string(const std::string& s) {
    if (s == "elu") return Act::Elu;
    if (s == "relu") return Act::Relu;
    throw ShapeError("unknown activation '" + s + "' (want elu or relu)");
}

template <class T>
Tensor<T> apply_act(const Tensor<T>& x, Act a) {
    return a == Act::Elu ? elu(x) : relu(x);
}

// Weights: truncated normal (std 0.02); biases zero unless overridden.
template <class T>
struct Linear {
    Tensor<T> weight, bias;  // weight [out, in]

    Linear() = default;
    Linear(int64_t in, int64_t out, Rng& rng) {
        weight = Tensor<T>::trunc_normal({out, in}, rng, T(0.02), true);
        bias = Tensor<T>::zeros({out}, true);
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return linear(x, weight, bias); }

    void params(const std::string& prefix, ParamList<T>& out) const {
        out.add(prefix + ".weight", weight);
        out.add(prefix + ".bias", bias);
    }
};

template <class T>
struct Conv {
    Tensor<T> weight, bias;  // weight [cout, cin, k, k]
    int64_t stride = 1, pad = 0;
    bool reflect = false;  // reflection padding keeps constants constant

    Conv() = default;
    Conv(int64_t cin, int64_t cout, int64_t k, int64_t stride_, Rng& rng, T bias_init = T(0),
         bool reflect_pad = false)
        : stride(stride_), pad(k / 2), reflect(reflect_pad) {
        weight = Tensor<T>::trunc_normal({cout, cin, k, k}, rng, T(0.02), true);
        bias = Tensor<T>::full({cout}, bias_init, true);
    }

    Tensor<T> operator()(const Tensor<T>& x) const {
        if (reflect && pad > 0) return conv2d(pad_reflect2d(x, pad), weight, bias, stride, 0);
        return conv2d(x, weight, bias, stride, pad);
    }

    void params(const std::string& prefix, ParamList<T>& out) const {
        out.add(prefix + ".weight", weight);
        out.add(prefix + ".bias", bias);
    }
};

template <class T>
struct LayerNorm {
    Tensor<T> gamma, beta;
    T eps = T(1e-5);

    LayerNorm() = default;
    explicit LayerNorm(int64_t c) {
        gamma = Tensor<T>::full({c}, T(1), true);
        beta = Tensor<T>::zeros({c}, true);
    }

    Tensor<T> operator()(const Tensor<T>& x) const { return layer_norm(x, gamma, beta, eps); }

    void params(const std::string& prefix, ParamList<T>& out) const {
        out.add(prefix + ".gamma", gamma);
        out.add(prefix + ".beta", beta);
    }
};

}  // namespace swindepth
