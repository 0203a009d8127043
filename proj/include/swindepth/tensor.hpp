#pragma once

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <initializer_list>
#include <memory>
#include <utility>
#include <vector>

#include "swindepth/core.hpp"
#include "swindepth/rng.hpp"

namespace swindepth {

template <class T>
class Tensor;

template <class T>
class Tape;

namespace detail {

template <class T>
struct Node {
    Shape shape;
    std::vector<T> value;
    std::vector<T> grad;  // lazily allocated; empty means "all zero"
    bool requires_grad = false;
    bool is_leaf = true;
    bool retain_grad = false;  // keep a non-leaf grad alive after backward
    std::function<void()> backward;

    std::vector<T>& ensure_grad() {
        if (grad.empty()) grad.assign(value.size(), T(0));
        return grad;
    }
};

// Sixteen-lane fixed-order dot product. The lane structure pins the reduction
// order in the source, so results are bitwise identical for any thread count
// or chunking, while the constant-trip inner loop vectorizes.
template <class T>
inline T dot8(const T* a, const T* b, int64_t n) {
    T s[16] = {};
    int64_t i = 0;
    for (; i + 16 <= n; i += 16)
        for (int l = 0; l < 16; ++l) s[l] += a[i + l] * b[i + l];
    T tail = 0;
    for (; i < n; ++i) tail += a[i] * b[i];
    T tot = 0;
    for (int l = 0; l < 16; ++l) tot += s[l];
    return tot + tail;
}

template <class T>
inline T sum8(const T* a, int64_t n) {
    T s[16] = {};
    int64_t i = 0;
    for (; i + 16 <= n; i += 16)
        for (int l = 0; l < 16; ++l) s[l] += a[i + l];
    T tail = 0;
    for (; i < n; ++i) tail += a[i];
    T tot = 0;
    for (int l = 0; l < 16; ++l) tot += s[l];
    return tot + tail;
}

template <class T>
inline void axpy(T* y, T a, const T* x, int64_t n) {
    for (int64_t i = 0; i < n; ++i) y[i] += a * x[i];
}

inline std::vector<int64_t> row_major_strides(const Shape& s) {
    std::vector<int64_t> st(s.size(), 1);
    for (int64_t i = static_cast<int64_t>(s.size()) - 2; i >= 0; --i)
        st[static_cast<size_t>(i)] = st[static_cast<size_t>(i + 1)] * s[static_cast<size_t>(i + 1)];
    return st;
}

}  // namespace detail

template <class T>
class Tensor {
public:
    Tensor() = default;

    static Tensor zeros(Shape s, bool requires_grad = false) {
        return from_data(std::move(s), {}, requires_grad, T(0));
    }

    static Tensor full(Shape s, T v, bool requires_grad = false) {
        return from_data(std::move(s), {}, requires_grad, v);
    }

    static Tensor scalar(T v) { return from_data(Shape{}, std::vector<T>{v}); }

    static Tensor from_data(Shape s, std::vector<T> v, bool requires_grad = false, T fill = T(0)) {
        auto n = std::make_shared<detail::Node<T>>();
        int64_t count = ::swindepth::numel(s);
        n->shape = std::move(s);
        if (v.empty() && count > 0)
            n->value.assign(static_cast<size_t>(count), fill);
        else
            n->value = std::move(v);
        check(static_cast<int64_t>(n->value.size()) == count,
              "tensor data length does not match shape " + shape_str(n->shape));
        n->requires_grad = requires_grad;
        return Tensor(std::move(n));
    }

    static Tensor randn(Shape s, Rng& rng, T stddev = T(1), bool requires_grad = false) {
        Tensor t = zeros(std::move(s), requires_grad);
        for (auto& x : t.data()) x = static_cast<T>(rng.normal()) * stddev;
        return t;
    }

    static Tensor trunc_normal(Shape s, Rng& rng, T stddev, bool requires_grad = false) {
        Tensor t = zeros(std::move(s), requires_grad);
        for (auto& x : t.data()) x = static_cast<T>(rng.truncated_normal(stddev));
        return t;
    }

    bool defined() const { return static_cast<bool>(n_); }
    const Shape& shape() const { return n_->shape; }
    int rank() const { return static_cast<int>(n_->shape.size()); }
    int64_t dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
    int64_t numel() const { return static_cast<int64_t>(n_->value.size()); }

    std::vector<T>& data() { return n_->value; }
    const std::vector<T>& data() const { return n_->value; }
    T* ptr() { return n_->value.data(); }
    const T* ptr() const { return n_->value.data(); }

    const std::vector<T>& grad() const { return n_->grad; }
    T grad_at(int64_t i) const {
        return n_->grad.empty() ? T(0) : n_->grad[static_cast<size_t>(i)];
    }
    void zero_grad() {
        if (!n_->grad.empty()) std::fill(n_->grad.begin(), n_->grad.end(), T(0));
    }

    bool requires_grad() const { return n_->requires_grad; }
    Tensor& set_requires_grad(bool b) {
        n_->requires_grad = b;
        return *this;
    }
    Tensor& retain_grad() {
        n_->retain_grad = true;
        return *this;
    }

    T item() const {
        check(numel() == 1, "item() requires a single-element tensor, got " + shape_str(shape()));
        return n_->value[0];
    }

    std::shared_ptr<detail::Node<T>> node() const { return n_; }

private:
    explicit Tensor(std::shared_ptr<detail::Node<T>> n) : n_(std::move(n)) {}
    std::shared_ptr<detail::Node<T>> n_;

    template <class U>
    friend class Tape;
    template <class U, class... Ins>
    friend Tensor<U> attach_op(Tensor<U> out, std::function<void()> backward, const Ins&... ins);
};

// Records operations in creation order; backward replays them in exact
// reverse order. One tape per thread may be active at a time (nesting allowed,
// innermost wins).
template <class T>
class Tape {
public:
    Tape() : prev_(current_) { current_ = this; }
    ~Tape() { current_ = prev_; }
    Tape(const Tape&) = delete;
    Tape& operator=(const Tape&) = delete;

    static Tape* current() { return current_; }

    size_t size() const { return order_.size(); }

    void record(std::shared_ptr<detail::Node<T>> n) { order_.push_back(std::move(n)); }

    // Populates d(loss)/d(leaf) for every requires_grad leaf reachable from
    // loss. Leaf gradients accumulate across calls; intermediate gradients are
    // fresh per call and released as soon as they have been propagated, so the
    // peak footprint is the forward activations plus the live frontier.
    void backward(const Tensor<T>& loss) {
        check(loss.numel() == 1, "backward requires a scalar loss, got " + shape_str(loss.shape()));
        for (auto& n : order_)
            if (!n->is_leaf) n->grad.clear();
        auto ln = loss.node();
        ln->ensure_grad()[0] += T(1);
        if (ln->is_leaf) return;
        for (auto it = order_.rbegin(); it != order_.rend(); ++it) {
            auto& n = *it;
            if (!n->grad.empty() && n->backward) n->backward();
            if (!n->is_leaf && !n->retain_grad) std::vector<T>().swap(n->grad);
        }
    }

private:
    std::vector<std::shared_ptr<detail::Node<T>>> order_;
    Tape* prev_ = nullptr;
    inline static thread_local Tape* current_ = nullptr;
};

// Marks `out` as produced by an op with the given backward rule, if a tape is
// active and any input requires grad. Inputs are kept alive by the lambda.
template <class T, class... Ins>
Tensor<T> attach_op(Tensor<T> out, std::function<void()> backward, const Ins&... ins) {
    Tape<T>* tape = Tape<T>::current();
    bool needs = tape && (ins.requires_grad() || ...);
    if (needs) {
        auto n = out.node();
        n->requires_grad = true;
        n->is_leaf = false;
        n->backward = std::move(backward);
        tape->record(n);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Elementwise binary ops (identical shapes).

namespace detail {
template <class T>
void check_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* op) {
    check(a.shape() == b.shape(), std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                                      " vs " + shape_str(b.shape()));
}
}  // namespace detail

template <class T>
Tensor<T> add(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "add");
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    T* po = out.ptr();
    parallel_for(a.numel(), [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) po[i] = pa[i] + pb[i];
    });
    auto an = a.node(), bn = b.node(), on = out.node();
    return attach_op(
        out,
        [an, bn, on] {
            const auto& g = on->grad;
            if (an->requires_grad) {
                auto& ga = an->ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (bn->requires_grad) {
                auto& gb = bn->ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            }
        },
        a, b);
}

template <class T>
Tensor<T> sub(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "sub");
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    T* po = out.ptr();
    parallel_for(a.numel(), [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) po[i] = pa[i] - pb[i];
    });
    auto an = a.node(), bn = b.node(), on = out.node();
    return attach_op(
        out,
        [an, bn, on] {
            const auto& g = on->grad;
            if (an->requires_grad) {
                auto& ga = an->ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            }
            if (bn->requires_grad) {
                auto& gb = bn->ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            }
        },
        a, b);
}

template <class T>
Tensor<T> mul(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "mul");
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    T* po = out.ptr();
    parallel_for(a.numel(), [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) po[i] = pa[i] * pb[i];
    });
    auto an = a.node(), bn = b.node(), on = out.node();
    return attach_op(
        out,
        [an, bn, on] {
            const auto& g = on->grad;
            if (an->requires_grad) {
                auto& ga = an->ensure_grad();
                const auto& vb = bn->value;
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
            }
            if (bn->requires_grad) {
                auto& gb = bn->ensure_grad();
                const auto& va = an->value;
                for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
            }
        },
        a, b);
}

template <class T>
Tensor<T> divide(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "divide");
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    T* po = out.ptr();
    parallel_for(a.numel(), [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) po[i] = pa[i] / pb[i];
    });
    auto an = a.node(), bn = b.node(), on = out.node();
    return attach_op(
        out,
        [an, bn, on] {
            const auto& g = on->grad;
            const auto& va = an->value;
            const auto& vb = bn->value;
            if (an->requires_grad) {
                auto& ga = an->ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / vb[i];
            }
            if (bn->requires_grad) {
                auto& gb = bn->ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) gb[i] -= g[i] * va[i] / (vb[i] * vb[i]);
            }
        },
        a, b);
}

// Elementwise minimum; on ties the gradient routes to the first argument.
template <class T>
Tensor<T> minimum(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "minimum");
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    T* po = out.ptr();
    parallel_for(a.numel(), [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) po[i] = pa[i] <= pb[i] ? pa[i] : pb[i];
    });
    auto an = a.node(), bn = b.node(), on = out.node();
    return attach_op(
        out,
        [an, bn, on] {
            const auto& g = on->grad;
            const auto& va = an->value;
            const auto& vb = bn->value;
            if (an->requires_grad) {
                auto& ga = an->ensure_grad();
                for (size_t i = 0; i < g.size(); ++i)
                    if (va[i] <= vb[i]) ga[i] += g[i];
            }
            if (bn->requires_grad) {
                auto& gb = bn->ensure_grad();
                for (size_t i = 0; i < g.size(); ++i)
                    if (va[i] > vb[i]) gb[i] += g[i];
            }
        },
        a, b);
}

// ---------------------------------------------------------------------------
// Scalar ops and elementwise unaries.

namespace detail {

template <class T, class F, class G>
Tensor<T> unary_op(const Tensor<T>& x, F f, G dfdx_times_g) {
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.ptr();
    T* po = out.ptr();
    parallel_for(x.numel(), [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) po[i] = f(px[i]);
    });
    auto xn = x.node(), on = out.node();
    return attach_op(
        out,
        [xn, on, dfdx_times_g] {
            const auto& g = on->grad;
            auto& gx = xn->ensure_grad();
            const auto& vx = xn->value;
            const auto& vo = on->value;
            parallel_for(static_cast<int64_t>(g.size()), [&](int64_t lo, int64_t hi) {
                for (int64_t i = lo; i < hi; ++i)
                    gx[i] += dfdx_times_g(vx[static_cast<size_t>(i)], vo[static_cast<size_t>(i)],
                                          g[static_cast<size_t>(i)]);
            });
        },
        x);
}

}  // namespace detail

template <class T>
Tensor<T> mul_scalar(const Tensor<T>& x, T s) {
    return detail::unary_op(
        x, [s](T v) { return v * s; }, [s](T, T, T g) { return g * s; });
}

template <class T>
Tensor<T> add_scalar(const Tensor<T>& x, T s) {
    return detail::unary_op(
        x, [s](T v) { return v + s; }, [](T, T, T g) { return g; });
}

template <class T>
Tensor<T> neg(const Tensor<T>& x) {
    return mul_scalar(x, T(-1));
}

template <class T>
Tensor<T> exp_t(const Tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return std::exp(v); }, [](T, T o, T g) { return g * o; });
}

template <class T>
Tensor<T> log_t(const Tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return std::log(v); }, [](T v, T, T g) { return g / v; });
}

template <class T>
Tensor<T> sqrt_t(const Tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return std::sqrt(v); }, [](T, T o, T g) { return g / (T(2) * o); });
}

// d|x|/dx at 0 is taken as 0.
template <class T>
Tensor<T> abs_t(const Tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return std::fabs(v); },
        [](T v, T, T g) { return v > T(0) ? g : (v < T(0) ? -g : T(0)); });
}

template <class T>
Tensor<T> sigmoid(const Tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return T(1) / (T(1) + std::exp(-v)); },
        [](T, T o, T g) { return g * o * (T(1) - o); });
}

template <class T>
Tensor<T> relu(const Tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return v > T(0) ? v : T(0); }, [](T v, T, T g) { return v > T(0) ? g : T(0); });
}

template <class T>
Tensor<T> elu(const Tensor<T>& x) {
    return detail::unary_op(
        x, [](T v) { return v > T(0) ? v : std::exp(v) - T(1); },
        [](T v, T o, T g) { return v > T(0) ? g : g * (o + T(1)); });
}

// Exact erf-based GELU.
template <class T>
Tensor<T> gelu(const Tensor<T>& x) {
    constexpr T kInvSqrt2 = T(0.70710678118654752440);
    constexpr T kInvSqrt2Pi = T(0.39894228040143267794);
    return detail::unary_op(
        x, [=](T v) { return T(0.5) * v * (T(1) + std::erf(v * kInvSqrt2)); },
        [=](T v, T, T g) {
            T phi = T(0.5) * (T(1) + std::erf(v * kInvSqrt2));
            T pdf = kInvSqrt2Pi * std::exp(T(-0.5) * v * v);
            return g * (phi + v * pdf);
        });
}

template <class T>
Tensor<T> clamp_min(const Tensor<T>& x, T lo) {
    return detail::unary_op(
        x, [lo](T v) { return v < lo ? lo : v; }, [lo](T v, T, T g) { return v < lo ? T(0) : g; });
}

template <class T>
Tensor<T> clamp(const Tensor<T>& x, T lo, T hi) {
    return detail::unary_op(
        x, [lo, hi](T v) { return v < lo ? lo : (v > hi ? hi : v); },
        [lo, hi](T v, T, T g) { return (v < lo || v > hi) ? T(0) : g; });
}

// Constant 0/1 indicator of a < b; never participates in gradients.
template <class T>
Tensor<T> less_than(const Tensor<T>& a, const Tensor<T>& b) {
    detail::check_same_shape(a, b, "less_than");
    Tensor<T> out = Tensor<T>::zeros(a.shape());
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    T* po = out.ptr();
    for (int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] < pb[i] ? T(1) : T(0);
    return out;
}

// Copy of x cut loose from the tape.
template <class T>
Tensor<T> detach(const Tensor<T>& x) {
    return Tensor<T>::from_data(x.shape(), x.data());
}

// ---------------------------------------------------------------------------
// Reductions.

template <class T>
Tensor<T> sum(const Tensor<T>& x) {
    Tensor<T> out = Tensor<T>::scalar(detail::sum8(x.ptr(), x.numel()));
    auto xn = x.node(), on = out.node();
    return attach_op(
        out,
        [xn, on] {
            T g = on->grad[0];
            auto& gx = xn->ensure_grad();
            for (auto& v : gx) v += g;
        },
        x);
}

template <class T>
Tensor<T> mean(const Tensor<T>& x) {
    check(x.numel() > 0, "mean of empty tensor");
    T inv = T(1) / static_cast<T>(x.numel());
    Tensor<T> out = Tensor<T>::scalar(detail::sum8(x.ptr(), x.numel()) * inv);
    auto xn = x.node(), on = out.node();
    return attach_op(
        out,
        [xn, on, inv] {
            T g = on->grad[0] * inv;
            auto& gx = xn->ensure_grad();
            for (auto& v : gx) v += g;
        },
        x);
}

// Sum over one axis, keeping it with extent 1.
template <class T>
Tensor<T> sum_axis(const Tensor<T>& x, int axis) {
    check(axis >= 0 && axis < x.rank(), "sum_axis: bad axis");
    Shape os = x.shape();
    int64_t extent = os[static_cast<size_t>(axis)];
    os[static_cast<size_t>(axis)] = 1;
    int64_t inner = 1;
    for (int i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
    int64_t outer = x.numel() / (extent * inner);

    Tensor<T> out = Tensor<T>::zeros(os);
    const T* px = x.ptr();
    T* po = out.ptr();
    parallel_for(outer, [&](int64_t lo, int64_t hi) {
        for (int64_t o = lo; o < hi; ++o) {
            const T* src = px + o * extent * inner;
            T* dst = po + o * inner;
            for (int64_t a = 0; a < extent; ++a) detail::axpy(dst, T(1), src + a * inner, inner);
        }
    });
    auto xn = x.node(), on = out.node();
    return attach_op(
        out,
        [xn, on, outer, extent, inner] {
            const auto& g = on->grad;
            auto& gx = xn->ensure_grad();
            parallel_for(outer, [&](int64_t lo, int64_t hi) {
                for (int64_t o = lo; o < hi; ++o) {
                    const T* src = g.data() + o * inner;
                    T* dst = gx.data() + o * extent * inner;
                    for (int64_t a = 0; a < extent; ++a) detail::axpy(dst + a * inner, T(1), src, inner);
                }
            });
        },
        x);
}

template <class T>
Tensor<T> mean_axis(const Tensor<T>& x, int axis) {
    return mul_scalar(sum_axis(x, axis), T(1) / static_cast<T>(x.dim(axis)));
}

// ---------------------------------------------------------------------------
// Shape manipulation (all copying; gradients mirror the copies).

template <class T>
Tensor<T> reshape(const Tensor<T>& x, Shape s) {
    check(numel(s) == x.numel(),
          "reshape: cannot view " + shape_str(x.shape()) + " as " + shape_str(s));
    Tensor<T> out = Tensor<T>::from_data(std::move(s), x.data());
    auto xn = x.node(), on = out.node();
    return attach_op(
        out,
        [xn, on] {
            const auto& g = on->grad;
            auto& gx = xn->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
        },
        x);
}

template <class T>
Tensor<T> permute(const Tensor<T>& x, const std::vector<int>& perm) {
    const int r = x.rank();
    check(static_cast<int>(perm.size()) == r, "permute: rank mismatch");
    Shape os(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i) os[static_cast<size_t>(i)] = x.dim(perm[static_cast<size_t>(i)]);
    auto in_strides = detail::row_major_strides(x.shape());
    // stride in the input for each output axis
    std::vector<int64_t> gather_strides(static_cast<size_t>(r));
    for (int i = 0; i < r; ++i)
        gather_strides[static_cast<size_t>(i)] = in_strides[static_cast<size_t>(perm[static_cast<size_t>(i)])];

    Tensor<T> out = Tensor<T>::zeros(os);
    const T* px = x.ptr();
    T* po = out.ptr();
    auto out_strides = detail::row_major_strides(os);
    const int64_t n = x.numel();
    parallel_for(n, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
            int64_t rem = i, src = 0;
            for (int d = 0; d < r; ++d) {
                int64_t idx = rem / out_strides[static_cast<size_t>(d)];
                rem -= idx * out_strides[static_cast<size_t>(d)];
                src += idx * gather_strides[static_cast<size_t>(d)];
            }
            po[i] = px[src];
        }
    });
    auto xn = x.node(), on = out.node();
    return attach_op(
        out,
        [xn, on, out_strides, gather_strides, r, n] {
            const auto& g = on->grad;
            auto& gx = xn->ensure_grad();
            for (int64_t i = 0; i < n; ++i) {
                int64_t rem = i, src = 0;
                for (int d = 0; d < r; ++d) {
                    int64_t idx = rem / out_strides[static_cast<size_t>(d)];
                    rem -= idx * out_strides[static_cast<size_t>(d)];
                    src += idx * gather_strides[static_cast<size_t>(d)];
                }
                gx[static_cast<size_t>(src)] += g[static_cast<size_t>(i)];
            }
        },
        x);
}

template <class T>
Tensor<T> slice(const Tensor<T>& x, int axis, int64_t start, int64_t len) {
    check(axis >= 0 && axis < x.rank(), "slice: bad axis");
    check(start >= 0 && len >= 1 && start + len <= x.dim(axis), "slice: range out of bounds");
    Shape os = x.shape();
    os[static_cast<size_t>(axis)] = len;
    int64_t inner = 1;
    for (int i = axis + 1; i < x.rank(); ++i) inner *= x.dim(i);
    int64_t extent = x.dim(axis);
    int64_t outer = x.numel() / (extent * inner);

    Tensor<T> out = Tensor<T>::zeros(os);
    const T* px = x.ptr();
    T* po = out.ptr();
    parallel_for(outer, [&](int64_t lo, int64_t hi) {
        for (int64_t o = lo; o < hi; ++o)
            std::memcpy(po + o * len * inner, px + (o * extent + start) * inner,
                        static_cast<size_t>(len * inner) * sizeof(T));
    });
    auto xn = x.node(), on = out.node();
    return attach_op(
        out,
        [xn, on, outer, extent, inner, start, len] {
            const auto& g = on->grad;
            auto& gx = xn->ensure_grad();
            parallel_for(outer, [&](int64_t lo, int64_t hi) {
                for (int64_t o = lo; o < hi; ++o)
                    detail::axpy(gx.data() + (o * extent + start) * inner, T(1),
                                 g.data() + o * len * inner, len * inner);
            });
        },
        x);
}

template <class T>
Tensor<T> concat(const std::vector<Tensor<T>>& xs, int axis) {
    check(!xs.empty(), "concat: no inputs");
    const int r = xs[0].rank();
    check(axis >= 0 && axis < r, "concat: bad axis");
    int64_t total = 0;
    for (const auto& x : xs) {
        check(x.rank() == r, "concat: rank mismatch");
        for (int d = 0; d < r; ++d)
            if (d != axis)
                check(x.dim(d) == xs[0].dim(d), "concat: shape mismatch on axis " + std::to_string(d));
        total += x.dim(axis);
    }
    Shape os = xs[0].shape();
    os[static_cast<size_t>(axis)] = total;
    int64_t inner = 1;
    for (int i = axis + 1; i < r; ++i) inner *= xs[0].dim(i);
    int64_t outer = numel(os) / (total * inner);

    Tensor<T> out = Tensor<T>::zeros(os);
    T* po = out.ptr();
    int64_t off = 0;
    for (const auto& x : xs) {
        int64_t ext = x.dim(axis);
        const T* px = x.ptr();
        parallel_for(outer, [&](int64_t lo, int64_t hi) {
            for (int64_t o = lo; o < hi; ++o)
                std::memcpy(po + (o * total + off) * inner, px + o * ext * inner,
                            static_cast<size_t>(ext * inner) * sizeof(T));
        });
        off += ext;
    }

    bool any_grad = false;
    for (const auto& x : xs) any_grad |= x.requires_grad();
    Tape<T>* tape = Tape<T>::current();
    if (tape && any_grad) {
        std::vector<std::shared_ptr<detail::Node<T>>> nodes;
        for (const auto& x : xs) nodes.push_back(x.node());
        auto on = out.node();
        on->requires_grad = true;
        on->is_leaf = false;
        on->backward = [nodes, on, outer, total, inner] {
            const auto& g = on->grad;
            int64_t off2 = 0;
            for (auto& xn : nodes) {
                int64_t ext = static_cast<int64_t>(xn->value.size()) / (outer * inner);
                if (xn->requires_grad) {
                    auto& gx = xn->ensure_grad();
                    parallel_for(outer, [&](int64_t lo, int64_t hi) {
                        for (int64_t o = lo; o < hi; ++o)
                            detail::axpy(gx.data() + o * ext * inner, T(1),
                                         g.data() + (o * total + off2) * inner, ext * inner);
                    });
                }
                off2 += ext;
            }
        };
        tape->record(on);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Token gathers (window partitioning, rolls, sub-pixel rearrangements).

// out[b, m, :] = x[b, idx[m], :]. Gradient scatter-adds rows, parallel over
// batch so duplicate indices stay deterministic.
template <class T>
Tensor<T> gather_tokens(const Tensor<T>& x, const std::vector<int64_t>& idx) {
    check(x.rank() == 3, "gather_tokens: expected [B,N,C]");
    const int64_t B = x.dim(0), N = x.dim(1), C = x.dim(2);
    const int64_t M = static_cast<int64_t>(idx.size());
    for (int64_t m : idx) check(m >= 0 && m < N, "gather_tokens: index out of range");
    Tensor<T> out = Tensor<T>::zeros({B, M, C});
    const T* px = x.ptr();
    T* po = out.ptr();
    parallel_for(B * M, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
            int64_t b = i / M, m = i % M;
            std::memcpy(po + (b * M + m) * C, px + (b * N + idx[static_cast<size_t>(m)]) * C,
                        static_cast<size_t>(C) * sizeof(T));
        }
    });
    auto xn = x.node(), on = out.node();
    return attach_op(
        out,
        [xn, on, idx, B, N, M, C] {
            const auto& g = on->grad;
            auto& gx = xn->ensure_grad();
            parallel_for(B, [&](int64_t lo, int64_t hi) {
                for (int64_t b = lo; b < hi; ++b)
                    for (int64_t m = 0; m < M; ++m)
                        detail::axpy(gx.data() + (b * N + idx[static_cast<size_t>(m)]) * C, T(1),
                                     g.data() + (b * M + m) * C, C);
            });
        },
        x);
}

// out[m, :] = table[idx[m], :]; duplicate indices accumulate in the gradient.
template <class T>
Tensor<T> embedding_rows(const Tensor<T>& table, const std::vector<int64_t>& idx) {
    check(table.rank() == 2, "embedding_rows: expected [V,E]");
    const int64_t V = table.dim(0), E = table.dim(1);
    const int64_t M = static_cast<int64_t>(idx.size());
    for (int64_t m : idx) check(m >= 0 && m < V, "embedding_rows: index out of range");
    Tensor<T> out = Tensor<T>::zeros({M, E});
    const T* pt = table.ptr();
    T* po = out.ptr();
    for (int64_t m = 0; m < M; ++m)
        std::memcpy(po + m * E, pt + idx[static_cast<size_t>(m)] * E, static_cast<size_t>(E) * sizeof(T));
    auto tn = table.node(), on = out.node();
    return attach_op(
        out,
        [tn, on, idx, M, E] {
            const auto& g = on->grad;
            auto& gt = tn->ensure_grad();
            for (int64_t m = 0; m < M; ++m)
                detail::axpy(gt.data() + idx[static_cast<size_t>(m)] * E, T(1), g.data() + m * E, E);
        },
        table);
}

// ---------------------------------------------------------------------------
// Broadcasting helpers.

// x[..., rest] + y[rest], broadcasting y over leading axes of x.
template <class T>
Tensor<T> add_bcast0(const Tensor<T>& x, const Tensor<T>& y) {
    const int64_t ny = y.numel();
    check(ny > 0 && x.numel() % ny == 0, "add_bcast0: trailing shape mismatch");
    const int64_t blocks = x.numel() / ny;
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.ptr();
    const T* py = y.ptr();
    T* po = out.ptr();
    parallel_for(blocks, [&](int64_t lo, int64_t hi) {
        for (int64_t b = lo; b < hi; ++b)
            for (int64_t i = 0; i < ny; ++i) po[b * ny + i] = px[b * ny + i] + py[i];
    });
    auto xn = x.node(), yn = y.node(), on = out.node();
    return attach_op(
        out,
        [xn, yn, on, blocks, ny] {
            const auto& g = on->grad;
            if (xn->requires_grad) {
                auto& gx = xn->ensure_grad();
                for (size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            }
            if (yn->requires_grad) {
                auto& gy = yn->ensure_grad();
                for (int64_t b = 0; b < blocks; ++b) detail::axpy(gy.data(), T(1), g.data() + b * ny, ny);
            }
        },
        x, y);
}

// x[B, rest] * s[B]: per-batch scalar scaling.
template <class T>
Tensor<T> mul_bcast_batch(const Tensor<T>& x, const Tensor<T>& s) {
    check(x.rank() >= 1 && s.numel() == x.dim(0), "mul_bcast_batch: batch mismatch");
    const int64_t B = x.dim(0);
    const int64_t inner = x.numel() / B;
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.ptr();
    const T* ps = s.ptr();
    T* po = out.ptr();
    parallel_for(B, [&](int64_t lo, int64_t hi) {
        for (int64_t b = lo; b < hi; ++b) {
            T sv = ps[b];
            for (int64_t i = 0; i < inner; ++i) po[b * inner + i] = px[b * inner + i] * sv;
        }
    });
    auto xn = x.node(), sn = s.node(), on = out.node();
    return attach_op(
        out,
        [xn, sn, on, B, inner] {
            const auto& g = on->grad;
            if (xn->requires_grad) {
                auto& gx = xn->ensure_grad();
                const auto& vs = sn->value;
                for (int64_t b = 0; b < B; ++b)
                    detail::axpy(gx.data() + b * inner, vs[static_cast<size_t>(b)], g.data() + b * inner,
                                 inner);
            }
            if (sn->requires_grad) {
                auto& gs = sn->ensure_grad();
                const auto& vx = xn->value;
                for (int64_t b = 0; b < B; ++b)
                    gs[static_cast<size_t>(b)] += detail::dot8(g.data() + b * inner, vx.data() + b * inner, inner);
            }
        },
        x, s);
}

// ---------------------------------------------------------------------------
// Matrix products.

namespace detail {

// C[m,n] += A[m,k] * B[k,n]
template <class T>
void mm_nn_acc(T* c, const T* a, const T* b, int64_t m, int64_t n, int64_t k, int64_t row_lo,
               int64_t row_hi) {
    for (int64_t i = row_lo; i < row_hi; ++i) {
        T* crow = c + i * n;
        const T* arow = a + i * k;
        for (int64_t l = 0; l < k; ++l) axpy(crow, arow[l], b + l * n, n);
    }
}

// C[m,n] += A[m,k] * B[n,k]^T
template <class T>
void mm_nt_acc(T* c, const T* a, const T* b, int64_t m, int64_t n, int64_t k, int64_t row_lo,
               int64_t row_hi) {
    for (int64_t i = row_lo; i < row_hi; ++i) {
        T* crow = c + i * n;
        const T* arow = a + i * k;
        for (int64_t j = 0; j < n; ++j) crow[j] += dot8(arow, b + j * k, k);
    }
}

// C[k,n] += A[m,k]^T * B[m,n], computed over a row range of C (i.e. k range).
template <class T>
void mm_tn_acc(T* c, const T* a, const T* b, int64_t m, int64_t n, int64_t k, int64_t k_lo,
               int64_t k_hi) {
    for (int64_t i = 0; i < m; ++i) {
        const T* arow = a + i * k;
        const T* brow = b + i * n;
        for (int64_t l = k_lo; l < k_hi; ++l) axpy(c + l * n, arow[l], brow, n);
    }
}

}  // namespace detail

// Batched matmul over identical leading dims: A[..., m, k] x B[..., k, n].
// With trans_b, B is [..., n, k] and used transposed.
template <class T>
Tensor<T> bmm(const Tensor<T>& a, const Tensor<T>& b, bool trans_b = false) {
    check(a.rank() >= 2 && b.rank() == a.rank(), "bmm: rank mismatch");
    const int r = a.rank();
    int64_t batch = 1;
    for (int d = 0; d < r - 2; ++d) {
        check(a.dim(d) == b.dim(d), "bmm: leading dims differ");
        batch *= a.dim(d);
    }
    const int64_t m = a.dim(r - 2), k = a.dim(r - 1);
    const int64_t n = trans_b ? b.dim(r - 2) : b.dim(r - 1);
    check((trans_b ? b.dim(r - 1) : b.dim(r - 2)) == k, "bmm: inner dims differ");
    Shape os = a.shape();
    os[static_cast<size_t>(r - 2)] = m;
    os[static_cast<size_t>(r - 1)] = n;

    Tensor<T> out = Tensor<T>::zeros(os);
    const T* pa = a.ptr();
    const T* pb = b.ptr();
    T* po = out.ptr();
    parallel_for(batch * m, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
            int64_t bt = i / m, row = i % m;
            const T* ab = pa + bt * m * k;
            const T* bb = pb + bt * (trans_b ? n * k : k * n);
            T* ob = po + bt * m * n;
            if (trans_b)
                detail::mm_nt_acc(ob, ab, bb, m, n, k, row, row + 1);
            else
                detail::mm_nn_acc(ob, ab, bb, m, n, k, row, row + 1);
        }
    });

    auto an = a.node(), bn = b.node(), on = out.node();
    return attach_op(
        out,
        [an, bn, on, batch, m, n, k, trans_b] {
            const auto& g = on->grad;
            if (an->requires_grad) {
                auto& ga = an->ensure_grad();
                const auto& vb = bn->value;
                // gA = gO * B^T (or gO * B when B was transposed)
                parallel_for(batch * m, [&](int64_t lo, int64_t hi) {
                    for (int64_t i = lo; i < hi; ++i) {
                        int64_t bt = i / m, row = i % m;
                        const T* gb = g.data() + bt * m * n;
                        const T* bb = vb.data() + bt * (trans_b ? n * k : k * n);
                        T* ab = ga.data() + bt * m * k;
                        if (trans_b)
                            detail::mm_nn_acc(ab, gb, bb, m, k, n, row, row + 1);
                        else
                            detail::mm_nt_acc(ab, gb, bb, m, k, n, row, row + 1);
                    }
                });
            }
            if (bn->requires_grad) {
                auto& gb2 = bn->ensure_grad();
                const auto& va = an->value;
                // gB = A^T * gO (or gO^T * A when B was transposed)
                parallel_for(batch, [&](int64_t lo, int64_t hi) {
                    for (int64_t bt = lo; bt < hi; ++bt) {
                        const T* ab = va.data() + bt * m * k;
                        const T* gb = g.data() + bt * m * n;
                        T* bb = gb2.data() + bt * (trans_b ? n * k : k * n);
                        if (trans_b)
                            detail::mm_tn_acc(bb, gb, ab, m, k, n, 0, n);
                        else
                            detail::mm_tn_acc(bb, ab, gb, m, n, k, 0, k);
                    }
                });
            }
        },
        a, b);
}

template <class T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    return bmm(a, b, false);
}

// y[..., out] = x[..., in] * W[out, in]^T + bias[out]
template <class T>
Tensor<T> linear(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias) {
    check(w.rank() == 2, "linear: weight must be [out,in]");
    const int64_t in = w.dim(1), outd = w.dim(0);
    check(x.dim(x.rank() - 1) == in, "linear: input features " + std::to_string(x.dim(x.rank() - 1)) +
                                         " != weight in " + std::to_string(in));
    check(bias.numel() == outd, "linear: bias size mismatch");
    const int64_t rows = x.numel() / in;
    Shape os = x.shape();
    os.back() = outd;

    Tensor<T> out = Tensor<T>::zeros(os);
    const T* px = x.ptr();
    const T* pw = w.ptr();
    const T* pb = bias.ptr();
    T* po = out.ptr();
    parallel_for(rows, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
            const T* xrow = px + i * in;
            T* orow = po + i * outd;
            for (int64_t o = 0; o < outd; ++o) orow[o] = pb[o] + detail::dot8(xrow, pw + o * in, in);
        }
    });
    auto xn = x.node(), wn = w.node(), bn = bias.node(), on = out.node();
    return attach_op(
        out,
        [xn, wn, bn, on, rows, in, outd] {
            const auto& g = on->grad;
            if (xn->requires_grad) {
                auto& gx = xn->ensure_grad();
                const auto& vw = wn->value;
                parallel_for(rows, [&](int64_t lo, int64_t hi) {
                    for (int64_t i = lo; i < hi; ++i) {
                        T* gxr = gx.data() + i * in;
                        const T* gr = g.data() + i * outd;
                        for (int64_t o = 0; o < outd; ++o) detail::axpy(gxr, gr[o], vw.data() + o * in, in);
                    }
                });
            }
            if (wn->requires_grad) {
                auto& gw = wn->ensure_grad();
                const auto& vx = xn->value;
                parallel_for(outd, [&](int64_t lo, int64_t hi) {
                    for (int64_t i = 0; i < rows; ++i) {
                        const T* gr = g.data() + i * outd;
                        const T* xr = vx.data() + i * in;
                        for (int64_t o = lo; o < hi; ++o) detail::axpy(gw.data() + o * in, gr[o], xr, in);
                    }
                });
            }
            if (bn->requires_grad) {
                auto& gb = bn->ensure_grad();
                for (int64_t i = 0; i < rows; ++i)
                    for (int64_t o = 0; o < outd; ++o) gb[static_cast<size_t>(o)] += g[static_cast<size_t>(i * outd + o)];
            }
        },
        x, w, bias);
}

// ---------------------------------------------------------------------------
// Operator sugar.

template <class T>
Tensor<T> operator+(const Tensor<T>& a, const Tensor<T>& b) { return add(a, b); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a, const Tensor<T>& b) { return sub(a, b); }
template <class T>
Tensor<T> operator*(const Tensor<T>& a, const Tensor<T>& b) { return mul(a, b); }
template <class T>
Tensor<T> operator/(const Tensor<T>& a, const Tensor<T>& b) { return divide(a, b); }
template <class T>
Tensor<T> operator*(const Tensor<T>& a, T s) { return mul_scalar(a, s); }
template <class T>
Tensor<T> operator*(T s, const Tensor<T>& a) { return mul_scalar(a, s); }
template <class T>
Tensor<T> operator+(const Tensor<T>& a, T s) { return add_scalar(a, s); }
template <class T>
Tensor<T> operator-(const Tensor<T>& a) { return neg(a); }

template <class T>
bool all_finite(const Tensor<T>& x) {
    for (T v : x.data())
        if (!std::isfinite(v)) return false;
    return true;
}

}  // namespace swindepth
