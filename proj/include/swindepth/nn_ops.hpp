#pragma once

#include <cmath>

#include "swindepth/tensor.hpp"

namespace swindepth {

namespace detail {
inline int64_t ceil_div(int64_t a, int64_t b) {  // b > 0, a may be negative
    return a >= 0 ? (a + b - 1) / b : -((-a) / b);
}

// One pass of a same-padded 3-tap horizontal stencil: out[x] += w0*in[x-1] +
// w1*in[x] + w2*in[x+1], borders clipped. Three fused FMAs per element.
template <class T>
inline void stencil3_acc(T* out, const T* in, T w0, T w1, T w2, int64_t w) {
    if (w == 1) {
        out[0] += w1 * in[0];
        return;
    }
    out[0] += w1 * in[0] + w2 * in[1];
    for (int64_t x = 1; x < w - 1; ++x) out[x] += w0 * in[x - 1] + w1 * in[x] + w2 * in[x + 1];
    out[w - 1] += w0 * in[w - 2] + w1 * in[w - 1];
}

// Fused 3-offset correlation accumulators for the 3x3 weight gradient:
// acc[k] += sum_x g[x] * in[x + k - 1] over the clipped ranges.
template <class T>
inline void corr3_acc(const T* g, const T* in, int64_t w, T* acc) {
    T a0[16] = {}, a1[16] = {}, a2[16] = {};
    int64_t x = 1;
    for (; x + 16 <= w - 1; x += 16)
        for (int l = 0; l < 16; ++l) {
            a0[l] += g[x + l] * in[x + l - 1];
            a1[l] += g[x + l] * in[x + l];
            a2[l] += g[x + l] * in[x + l + 1];
        }
    T t0 = 0, t1 = 0, t2 = 0;
    for (; x < w - 1; ++x) {
        t0 += g[x] * in[x - 1];
        t1 += g[x] * in[x];
        t2 += g[x] * in[x + 1];
    }
    for (int l = 0; l < 16; ++l) {
        t0 += a0[l];
        t1 += a1[l];
        t2 += a2[l];
    }
    // border columns
    t1 += g[0] * in[0];
    if (w > 1) {
        t2 += g[0] * in[1];
        t0 += g[w - 1] * in[w - 2];
        t1 += g[w - 1] * in[w - 1];
    }
    acc[0] += t0;
    acc[1] += t1;
    acc[2] += t2;
}

}  // namespace detail

// Direct 2D convolution, NCHW. Same-padded 3x3 and 1x1 at stride 1 preserve
// the spatial size; stride 2 halves it (with pad = kh/2).
template <class T>
Tensor<T> conv2d(const Tensor<T>& input, const Tensor<T>& weight, const Tensor<T>& bias,
                 int64_t stride = 1, int64_t padding = 0) {
    check(input.rank() == 4, "conv2d: input must be [B,Cin,H,W]");
    check(weight.rank() == 4, "conv2d: weight must be [Cout,Cin,kh,kw]");
    const int64_t B = input.dim(0), Cin = input.dim(1), H = input.dim(2), W = input.dim(3);
    const int64_t Cout = weight.dim(0), kh = weight.dim(2), kw = weight.dim(3);
    check(weight.dim(1) == Cin, "conv2d: input channels " + std::to_string(Cin) +
                                    " do not match weight channels " + std::to_string(weight.dim(1)));
    check(bias.numel() == Cout, "conv2d: bias size mismatch");
    check(stride >= 1, "conv2d: bad stride");
    const int64_t Ho = (H + 2 * padding - kh) / stride + 1;
    const int64_t Wo = (W + 2 * padding - kw) / stride + 1;
    check(Ho >= 1 && Wo >= 1, "conv2d: empty output");

    Tensor<T> out = Tensor<T>::zeros({B, Cout, Ho, Wo});
    const T* pin = input.ptr();
    const T* pw = weight.ptr();
    const T* pb = bias.ptr();
    T* po = out.ptr();

    const int64_t s = stride, p = padding;
    auto oy_range = [=](int64_t ky, int64_t& lo, int64_t& hi) {
        lo = std::max<int64_t>(0, detail::ceil_div(p - ky, s));
        hi = std::min<int64_t>(Ho, (H - 1 + p - ky) / s + 1);
    };
    auto ox_range = [=](int64_t kx, int64_t& lo, int64_t& hi) {
        lo = std::max<int64_t>(0, detail::ceil_div(p - kx, s));
        hi = std::min<int64_t>(Wo, (W - 1 + p - kx) / s + 1);
    };

    const bool fast3 = kh == 3 && kw == 3 && s == 1 && p == 1;
    parallel_for(B * Cout, [&](int64_t job_lo, int64_t job_hi) {
        for (int64_t job = job_lo; job < job_hi; ++job) {
            const int64_t b = job / Cout, co = job % Cout;
            T* oplane = po + (b * Cout + co) * Ho * Wo;
            for (int64_t i = 0; i < Ho * Wo; ++i) oplane[i] = pb[co];
            for (int64_t ci = 0; ci < Cin; ++ci) {
                const T* iplane = pin + (b * Cin + ci) * H * W;
                if (fast3) {
                    const T* wk = pw + (co * Cin + ci) * 9;
                    for (int64_t oy = 0; oy < H; ++oy) {
                        T* orow = oplane + oy * W;
                        for (int64_t ky = 0; ky < 3; ++ky) {
                            const int64_t iy = oy + ky - 1;
                            if (iy < 0 || iy >= H) continue;
                            detail::stencil3_acc(orow, iplane + iy * W, wk[ky * 3], wk[ky * 3 + 1],
                                                 wk[ky * 3 + 2], W);
                        }
                    }
                    continue;
                }
                for (int64_t ky = 0; ky < kh; ++ky) {
                    int64_t ylo, yhi;
                    oy_range(ky, ylo, yhi);
                    for (int64_t kx = 0; kx < kw; ++kx) {
                        const T wv = pw[((co * Cin + ci) * kh + ky) * kw + kx];
                        if (wv == T(0)) continue;
                        int64_t xlo, xhi;
                        ox_range(kx, xlo, xhi);
                        for (int64_t oy = ylo; oy < yhi; ++oy) {
                            const T* irow = iplane + (oy * s + ky - p) * W;
                            T* orow = oplane + oy * Wo;
                            if (s == 1) {
                                detail::axpy(orow + xlo, wv, irow + xlo + kx - p, xhi - xlo);
                            } else {
                                for (int64_t ox = xlo; ox < xhi; ++ox)
                                    orow[ox] += wv * irow[ox * s + kx - p];
                            }
                        }
                    }
                }
            }
        }
    });

    auto in_n = input.node(), w_n = weight.node(), b_n = bias.node(), on = out.node();
    return attach_op(
        out,
        [in_n, w_n, b_n, on, B, Cin, Cout, H, W, Ho, Wo, kh, kw, s, p, oy_range, ox_range] {
            const auto& g = on->grad;
            const bool fast3 = kh == 3 && kw == 3 && s == 1 && p == 1;
            if (in_n->requires_grad) {
                auto& gin = in_n->ensure_grad();
                const auto& vw = w_n->value;
                parallel_for(B * Cin, [&](int64_t job_lo, int64_t job_hi) {
                    for (int64_t job = job_lo; job < job_hi; ++job) {
                        const int64_t b = job / Cin, ci = job % Cin;
                        T* giplane = gin.data() + (b * Cin + ci) * H * W;
                        for (int64_t co = 0; co < Cout; ++co) {
                            const T* gplane = g.data() + (b * Cout + co) * Ho * Wo;
                            if (fast3) {
                                // correlation with the flipped kernel
                                const T* wk = vw.data() + (co * Cin + ci) * 9;
                                for (int64_t iy = 0; iy < H; ++iy) {
                                    T* girow = giplane + iy * W;
                                    for (int64_t ky = 0; ky < 3; ++ky) {
                                        const int64_t oy = iy + 1 - ky;
                                        if (oy < 0 || oy >= H) continue;
                                        detail::stencil3_acc(girow, gplane + oy * W, wk[ky * 3 + 2],
                                                             wk[ky * 3 + 1], wk[ky * 3], W);
                                    }
                                }
                                continue;
                            }
                            for (int64_t ky = 0; ky < kh; ++ky) {
                                int64_t ylo, yhi;
                                oy_range(ky, ylo, yhi);
                                for (int64_t kx = 0; kx < kw; ++kx) {
                                    const T wv = vw[static_cast<size_t>(((co * Cin + ci) * kh + ky) * kw + kx)];
                                    int64_t xlo, xhi;
                                    ox_range(kx, xlo, xhi);
                                    for (int64_t oy = ylo; oy < yhi; ++oy) {
                                        const T* grow = gplane + oy * Wo;
                                        T* girow = giplane + (oy * s + ky - p) * W;
                                        if (s == 1) {
                                            detail::axpy(girow + xlo + kx - p, wv, grow + xlo, xhi - xlo);
                                        } else {
                                            for (int64_t ox = xlo; ox < xhi; ++ox)
                                                girow[ox * s + kx - p] += wv * grow[ox];
                                        }
                                    }
                                }
                            }
                        }
                    }
                });
            }
            if (w_n->requires_grad) {
                auto& gw = w_n->ensure_grad();
                const auto& vin = in_n->value;
                parallel_for(Cout, [&](int64_t co_lo, int64_t co_hi) {
                    for (int64_t co = co_lo; co < co_hi; ++co) {
                        for (int64_t b = 0; b < B; ++b) {
                            const T* gplane = g.data() + (b * Cout + co) * Ho * Wo;
                            for (int64_t ci = 0; ci < Cin; ++ci) {
                                const T* iplane = vin.data() + (b * Cin + ci) * H * W;
                                if (fast3) {
                                    T* acc = gw.data() + (co * Cin + ci) * 9;
                                    for (int64_t ky = 0; ky < 3; ++ky)
                                        for (int64_t oy = 0; oy < H; ++oy) {
                                            const int64_t iy = oy + ky - 1;
                                            if (iy < 0 || iy >= H) continue;
                                            detail::corr3_acc(gplane + oy * W, iplane + iy * W, W,
                                                              acc + ky * 3);
                                        }
                                    continue;
                                }
                                for (int64_t ky = 0; ky < kh; ++ky) {
                                    int64_t ylo, yhi;
                                    oy_range(ky, ylo, yhi);
                                    for (int64_t kx = 0; kx < kw; ++kx) {
                                        int64_t xlo, xhi;
                                        ox_range(kx, xlo, xhi);
                                        T acc = 0;
                                        for (int64_t oy = ylo; oy < yhi; ++oy) {
                                            const T* grow = gplane + oy * Wo;
                                            const T* irow = iplane + (oy * s + ky - p) * W;
                                            if (s == 1) {
                                                acc += detail::dot8(grow + xlo, irow + xlo + kx - p, xhi - xlo);
                                            } else {
                                                for (int64_t ox = xlo; ox < xhi; ++ox)
                                                    acc += grow[ox] * irow[ox * s + kx - p];
                                            }
                                        }
                                        gw[static_cast<size_t>(((co * Cin + ci) * kh + ky) * kw + kx)] += acc;
                                    }
                                }
                            }
                        }
                    }
                });
            }
            if (b_n->requires_grad) {
                auto& gb = b_n->ensure_grad();
                parallel_for(Cout, [&](int64_t co_lo, int64_t co_hi) {
                    for (int64_t co = co_lo; co < co_hi; ++co) {
                        T acc = 0;
                        for (int64_t b = 0; b < B; ++b)
                            acc += detail::sum8(g.data() + (b * Cout + co) * Ho * Wo, Ho * Wo);
                        gb[static_cast<size_t>(co)] += acc;
                    }
                });
            }
        },
        input, weight, bias);
}

// Normalization over the trailing (channel) axis with learned scale/shift.
// Variance is the biased estimate (divide by C).
template <class T>
Tensor<T> layer_norm(const Tensor<T>& x, const Tensor<T>& gamma, const Tensor<T>& beta,
                     T eps = T(1e-5)) {
    const int64_t C = x.dim(x.rank() - 1);
    check(gamma.numel() == C && beta.numel() == C,
          "layer_norm: gamma/beta must have " + std::to_string(C) + " elements");
    const int64_t rows = x.numel() / C;

    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.ptr();
    const T* pg = gamma.ptr();
    const T* pbt = beta.ptr();
    T* po = out.ptr();
    parallel_for(rows, [&](int64_t lo, int64_t hi) {
        for (int64_t r = lo; r < hi; ++r) {
            const T* xr = px + r * C;
            T* orow = po + r * C;
            T mu = detail::sum8(xr, C) / static_cast<T>(C);
            T var = 0;
            for (int64_t c = 0; c < C; ++c) {
                T d = xr[c] - mu;
                var += d * d;
            }
            var /= static_cast<T>(C);
            T inv = T(1) / std::sqrt(var + eps);
            for (int64_t c = 0; c < C; ++c) orow[c] = pg[c] * (xr[c] - mu) * inv + pbt[c];
        }
    });

    auto xn = x.node(), gn = gamma.node(), bn = beta.node(), on = out.node();
    return attach_op(
        out,
        [xn, gn, bn, on, rows, C, eps] {
            const auto& g = on->grad;
            const auto& vx = xn->value;
            const auto& vg = gn->value;
            if (xn->requires_grad) {
                auto& gx = xn->ensure_grad();
                parallel_for(rows, [&](int64_t lo, int64_t hi) {
                    for (int64_t r = lo; r < hi; ++r) {
                        const T* xr = vx.data() + r * C;
                        const T* gr = g.data() + r * C;
                        T mu = detail::sum8(xr, C) / static_cast<T>(C);
                        T var = 0;
                        for (int64_t c = 0; c < C; ++c) {
                            T d = xr[c] - mu;
                            var += d * d;
                        }
                        var /= static_cast<T>(C);
                        T inv = T(1) / std::sqrt(var + eps);
                        T m1 = 0, m2 = 0;  // mean(gy*gamma), mean(gy*gamma*xhat)
                        for (int64_t c = 0; c < C; ++c) {
                            T gg = gr[c] * vg[static_cast<size_t>(c)];
                            T xh = (xr[c] - mu) * inv;
                            m1 += gg;
                            m2 += gg * xh;
                        }
                        m1 /= static_cast<T>(C);
                        m2 /= static_cast<T>(C);
                        T* gxr = gx.data() + r * C;
                        for (int64_t c = 0; c < C; ++c) {
                            T gg = gr[c] * vg[static_cast<size_t>(c)];
                            T xh = (xr[c] - mu) * inv;
                            gxr[c] += (gg - m1 - xh * m2) * inv;
                        }
                    }
                });
            }
            if (gn->requires_grad || bn->requires_grad) {
                std::vector<T> gg(static_cast<size_t>(C), T(0)), gb(static_cast<size_t>(C), T(0));
                for (int64_t r = 0; r < rows; ++r) {
                    const T* xr = vx.data() + r * C;
                    const T* gr = g.data() + r * C;
                    T mu = detail::sum8(xr, C) / static_cast<T>(C);
                    T var = 0;
                    for (int64_t c = 0; c < C; ++c) {
                        T d = xr[c] - mu;
                        var += d * d;
                    }
                    var /= static_cast<T>(C);
                    T inv = T(1) / std::sqrt(var + eps);
                    for (int64_t c = 0; c < C; ++c) {
                        gg[static_cast<size_t>(c)] += gr[c] * (xr[c] - mu) * inv;
                        gb[static_cast<size_t>(c)] += gr[c];
                    }
                }
                if (gn->requires_grad) {
                    auto& dst = gn->ensure_grad();
                    for (int64_t c = 0; c < C; ++c) dst[static_cast<size_t>(c)] += gg[static_cast<size_t>(c)];
                }
                if (bn->requires_grad) {
                    auto& dst = bn->ensure_grad();
                    for (int64_t c = 0; c < C; ++c) dst[static_cast<size_t>(c)] += gb[static_cast<size_t>(c)];
                }
            }
        },
        x, gamma, beta);
}

// Numerically stabilized softmax over the trailing axis.
template <class T>
Tensor<T> softmax_lastdim(const Tensor<T>& x) {
    const int64_t N = x.dim(x.rank() - 1);
    const int64_t rows = x.numel() / N;
    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.ptr();
    T* po = out.ptr();
    parallel_for(rows, [&](int64_t lo, int64_t hi) {
        for (int64_t r = lo; r < hi; ++r) {
            const T* xr = px + r * N;
            T* orow = po + r * N;
            T mx = xr[0];
            for (int64_t i = 1; i < N; ++i) mx = std::max(mx, xr[i]);
            T denom = 0;
            for (int64_t i = 0; i < N; ++i) {
                orow[i] = std::exp(xr[i] - mx);
                denom += orow[i];
            }
            T inv = T(1) / denom;
            for (int64_t i = 0; i < N; ++i) orow[i] *= inv;
        }
    });
    auto xn = x.node(), on = out.node();
    return attach_op(
        out,
        [xn, on, rows, N] {
            const auto& g = on->grad;
            const auto& y = on->value;
            auto& gx = xn->ensure_grad();
            parallel_for(rows, [&](int64_t lo, int64_t hi) {
                for (int64_t r = lo; r < hi; ++r) {
                    const T* yr = y.data() + r * N;
                    const T* gr = g.data() + r * N;
                    T dot = detail::dot8(yr, gr, N);
                    T* gxr = gx.data() + r * N;
                    for (int64_t i = 0; i < N; ++i) gxr[i] += yr[i] * (gr[i] - dot);
                }
            });
        },
        x);
}

// Adaptive average pooling. Bin i spans [floor(i*in/out), ceil((i+1)*in/out)),
// so bins are contiguous, cover the input, and are exact tiles when out
// divides in.
template <class T>
Tensor<T> avg_pool2d(const Tensor<T>& x, int64_t out_h, int64_t out_w) {
    check(x.rank() == 4, "avg_pool2d: input must be [B,C,H,W]");
    check(out_h >= 1 && out_w >= 1, "avg_pool2d: bad output size");
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    auto bin = [](int64_t i, int64_t in, int64_t out, int64_t& lo, int64_t& hi) {
        lo = i * in / out;
        hi = detail::ceil_div((i + 1) * in, out);
    };
    Tensor<T> out = Tensor<T>::zeros({B, C, out_h, out_w});
    const T* px = x.ptr();
    T* po = out.ptr();
    parallel_for(B * C, [&](int64_t lo_, int64_t hi_) {
        for (int64_t pl = lo_; pl < hi_; ++pl) {
            const T* iplane = px + pl * H * W;
            T* oplane = po + pl * out_h * out_w;
            for (int64_t i = 0; i < out_h; ++i) {
                int64_t ylo, yhi;
                bin(i, H, out_h, ylo, yhi);
                for (int64_t j = 0; j < out_w; ++j) {
                    int64_t xlo, xhi;
                    bin(j, W, out_w, xlo, xhi);
                    T acc = 0;
                    for (int64_t y = ylo; y < yhi; ++y)
                        acc += detail::sum8(iplane + y * W + xlo, xhi - xlo);
                    oplane[i * out_w + j] = acc / static_cast<T>((yhi - ylo) * (xhi - xlo));
                }
            }
        }
    });
    auto xn = x.node(), on = out.node();
    return attach_op(
        out,
        [xn, on, B, C, H, W, out_h, out_w, bin] {
            const auto& g = on->grad;
            auto& gx = xn->ensure_grad();
            parallel_for(B * C, [&](int64_t lo_, int64_t hi_) {
                for (int64_t pl = lo_; pl < hi_; ++pl) {
                    T* giplane = gx.data() + pl * H * W;
                    const T* gplane = g.data() + pl * out_h * out_w;
                    for (int64_t i = 0; i < out_h; ++i) {
                        int64_t ylo, yhi;
                        bin(i, H, out_h, ylo, yhi);
                        for (int64_t j = 0; j < out_w; ++j) {
                            int64_t xlo, xhi;
                            bin(j, W, out_w, xlo, xhi);
                            T gv = gplane[i * out_w + j] / static_cast<T>((yhi - ylo) * (xhi - xlo));
                            for (int64_t y = ylo; y < yhi; ++y)
                                for (int64_t xx = xlo; xx < xhi; ++xx) giplane[y * W + xx] += gv;
                        }
                    }
                }
            });
        },
        x);
}

namespace detail {
// Half-pixel-center source coordinates with the support cell clamped to the
// image but the interpolation weight left unclamped, so border cells
// extrapolate linearly and affine images resize exactly.
template <class T>
void resize_axis_coeffs(int64_t in, int64_t out, std::vector<int64_t>& i0, std::vector<T>& f) {
    i0.resize(static_cast<size_t>(out));
    f.resize(static_cast<size_t>(out));
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (int64_t o = 0; o < out; ++o) {
        double src = (static_cast<double>(o) + 0.5) * scale - 0.5;
        int64_t lo = static_cast<int64_t>(std::floor(src));
        if (lo > in - 2) lo = in - 2;
        if (lo < 0) lo = 0;
        if (in == 1) {
            i0[static_cast<size_t>(o)] = 0;
            f[static_cast<size_t>(o)] = 0;
        } else {
            i0[static_cast<size_t>(o)] = lo;
            f[static_cast<size_t>(o)] = static_cast<T>(src - static_cast<double>(lo));
        }
    }
}
}  // namespace detail

template <class T>
Tensor<T> bilinear_resize(const Tensor<T>& x, int64_t out_h, int64_t out_w) {
    check(x.rank() == 4, "bilinear_resize: input must be [B,C,H,W]");
    check(out_h >= 1 && out_w >= 1, "bilinear_resize: bad output size");
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    std::vector<int64_t> y0, x0;
    std::vector<T> fy, fx;
    detail::resize_axis_coeffs<T>(H, out_h, y0, fy);
    detail::resize_axis_coeffs<T>(W, out_w, x0, fx);
    const int64_t y1off = H == 1 ? 0 : 1, x1off = W == 1 ? 0 : 1;

    Tensor<T> out = Tensor<T>::zeros({B, C, out_h, out_w});
    const T* px = x.ptr();
    T* po = out.ptr();
    parallel_for(B * C * out_h, [&](int64_t lo_, int64_t hi_) {
        for (int64_t row = lo_; row < hi_; ++row) {
            const int64_t pl = row / out_h, oy = row % out_h;
            const T* r0 = px + pl * H * W + y0[static_cast<size_t>(oy)] * W;
            const T* r1 = r0 + y1off * W;
            const T wy = fy[static_cast<size_t>(oy)];
            T* orow = po + row * out_w;
            for (int64_t ox = 0; ox < out_w; ++ox) {
                const int64_t xx = x0[static_cast<size_t>(ox)];
                const T wx = fx[static_cast<size_t>(ox)];
                T top = r0[xx] + wx * (r0[xx + x1off] - r0[xx]);
                T bot = r1[xx] + wx * (r1[xx + x1off] - r1[xx]);
                orow[ox] = top + wy * (bot - top);
            }
        }
    });
    auto xn = x.node(), on = out.node();
    return attach_op(
        out,
        [xn, on, B, C, H, W, out_h, out_w, y0, x0, fy, fx, y1off, x1off] {
            const auto& g = on->grad;
            auto& gx = xn->ensure_grad();
            parallel_for(B * C, [&](int64_t lo_, int64_t hi_) {
                for (int64_t pl = lo_; pl < hi_; ++pl) {
                    T* giplane = gx.data() + pl * H * W;
                    for (int64_t oy = 0; oy < out_h; ++oy) {
                        const T wy = fy[static_cast<size_t>(oy)];
                        T* g0 = giplane + y0[static_cast<size_t>(oy)] * W;
                        T* g1 = g0 + y1off * W;
                        const T* grow = g.data() + (pl * out_h + oy) * out_w;
                        for (int64_t ox = 0; ox < out_w; ++ox) {
                            const int64_t xx = x0[static_cast<size_t>(ox)];
                            const T wx = fx[static_cast<size_t>(ox)];
                            const T gv = grow[ox];
                            g0[xx] += gv * (T(1) - wy) * (T(1) - wx);
                            g0[xx + x1off] += gv * (T(1) - wy) * wx;
                            g1[xx] += gv * wy * (T(1) - wx);
                            g1[xx + x1off] += gv * wy * wx;
                        }
                    }
                }
            });
        },
        x);
}

// Bilinear sampling of image at normalized grid coordinates in [-1,1]
// (half-pixel centers; grid last axis is (gx, gy)). Out-of-range samples
// clamp to the border; differentiable in both arguments.
template <class T>
Tensor<T> grid_sample(const Tensor<T>& image, const Tensor<T>& grid) {
    check(image.rank() == 4, "grid_sample: image must be [B,C,H,W]");
    check(grid.rank() == 4 && grid.dim(3) == 2, "grid_sample: grid must be [B,Hg,Wg,2]");
    check(grid.dim(0) == image.dim(0), "grid_sample: batch mismatch");
    const int64_t B = image.dim(0), C = image.dim(1), H = image.dim(2), W = image.dim(3);
    const int64_t Hg = grid.dim(1), Wg = grid.dim(2);
    check(H >= 2 && W >= 2, "grid_sample: image too small");

    Tensor<T> out = Tensor<T>::zeros({B, C, Hg, Wg});
    const T* pim = image.ptr();
    const T* pg = grid.ptr();
    T* po = out.ptr();

    auto to_pixel = [](T gcoord, int64_t extent, T& frac, int64_t& lo, bool& inside) {
        T pxf = ((gcoord + T(1)) * static_cast<T>(extent) - T(1)) / T(2);
        inside = pxf > T(0) && pxf < static_cast<T>(extent - 1);
        if (pxf < T(0)) pxf = T(0);
        if (pxf > static_cast<T>(extent - 1)) pxf = static_cast<T>(extent - 1);
        lo = static_cast<int64_t>(pxf);
        if (lo > extent - 2) lo = extent - 2;
        frac = pxf - static_cast<T>(lo);
    };

    parallel_for(B * Hg, [&](int64_t lo_, int64_t hi_) {
        for (int64_t row = lo_; row < hi_; ++row) {
            const int64_t b = row / Hg, gy = row % Hg;
            for (int64_t gx = 0; gx < Wg; ++gx) {
                const T* gp = pg + ((b * Hg + gy) * Wg + gx) * 2;
                T fx_, fy_;
                int64_t xx, yy;
                bool ix, iy;
                to_pixel(gp[0], W, fx_, xx, ix);
                to_pixel(gp[1], H, fy_, yy, iy);
                for (int64_t c = 0; c < C; ++c) {
                    const T* plane = pim + (b * C + c) * H * W;
                    const T v00 = plane[yy * W + xx], v01 = plane[yy * W + xx + 1];
                    const T v10 = plane[(yy + 1) * W + xx], v11 = plane[(yy + 1) * W + xx + 1];
                    const T top = (T(1) - fx_) * v00 + fx_ * v01;
                    const T bot = (T(1) - fx_) * v10 + fx_ * v11;
                    po[((b * C + c) * Hg + gy) * Wg + gx] = (T(1) - fy_) * top + fy_ * bot;
                }
            }
        }
    });

    auto imn = image.node(), gn = grid.node(), on = out.node();
    return attach_op(
        out,
        [imn, gn, on, B, C, H, W, Hg, Wg, to_pixel] {
            const auto& g = on->grad;
            const auto& vim = imn->value;
            const auto& vg = gn->value;
            if (imn->requires_grad) {
                auto& gim = imn->ensure_grad();
                parallel_for(B * C, [&](int64_t lo_, int64_t hi_) {
                    for (int64_t pl = lo_; pl < hi_; ++pl) {
                        const int64_t b = pl / C;
                        T* gplane = gim.data() + pl * H * W;
                        const T* gout = g.data() + pl * Hg * Wg;
                        for (int64_t gy = 0; gy < Hg; ++gy)
                            for (int64_t gx = 0; gx < Wg; ++gx) {
                                const T* gp = vg.data() + ((b * Hg + gy) * Wg + gx) * 2;
                                T fx_, fy_;
                                int64_t xx, yy;
                                bool ix, iy;
                                to_pixel(gp[0], W, fx_, xx, ix);
                                to_pixel(gp[1], H, fy_, yy, iy);
                                const T gv = gout[gy * Wg + gx];
                                gplane[yy * W + xx] += gv * (T(1) - fy_) * (T(1) - fx_);
                                gplane[yy * W + xx + 1] += gv * (T(1) - fy_) * fx_;
                                gplane[(yy + 1) * W + xx] += gv * fy_ * (T(1) - fx_);
                                gplane[(yy + 1) * W + xx + 1] += gv * fy_ * fx_;
                            }
                    }
                });
            }
            if (gn->requires_grad) {
                auto& gg = gn->ensure_grad();
                parallel_for(B * Hg, [&](int64_t lo_, int64_t hi_) {
                    for (int64_t row = lo_; row < hi_; ++row) {
                        const int64_t b = row / Hg, gy = row % Hg;
                        for (int64_t gx = 0; gx < Wg; ++gx) {
                            const T* gp = vg.data() + ((b * Hg + gy) * Wg + gx) * 2;
                            T fx_, fy_;
                            int64_t xx, yy;
                            bool ix, iy;
                            to_pixel(gp[0], W, fx_, xx, ix);
                            to_pixel(gp[1], H, fy_, yy, iy);
                            T dx = 0, dy = 0;
                            for (int64_t c = 0; c < C; ++c) {
                                const T* plane = vim.data() + (b * C + c) * H * W;
                                const T v00 = plane[yy * W + xx], v01 = plane[yy * W + xx + 1];
                                const T v10 = plane[(yy + 1) * W + xx], v11 = plane[(yy + 1) * W + xx + 1];
                                const T gv = g[static_cast<size_t>(((b * C + c) * Hg + gy) * Wg + gx)];
                                dx += gv * ((T(1) - fy_) * (v01 - v00) + fy_ * (v11 - v10));
                                dy += gv * ((T(1) - fx_) * (v10 - v00) + fx_ * (v11 - v01));
                            }
                            T* dst = gg.data() + ((b * Hg + gy) * Wg + gx) * 2;
                            if (ix) dst[0] += dx * static_cast<T>(W) / T(2);
                            if (iy) dst[1] += dy * static_cast<T>(H) / T(2);
                        }
                    }
                });
            }
        },
        image, grid);
}

// Reflection padding of the two spatial axes (pad < min(H, W)).
template <class T>
Tensor<T> pad_reflect2d(const Tensor<T>& x, int64_t pad) {
    check(x.rank() == 4, "pad_reflect2d: input must be [B,C,H,W]");
    check(pad >= 0 && pad < x.dim(2) && pad < x.dim(3), "pad_reflect2d: pad too large");
    if (pad == 0) return x;
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    const int64_t Ho = H + 2 * pad, Wo = W + 2 * pad;
    auto refl = [](int64_t i, int64_t n) { return i < 0 ? -i : (i >= n ? 2 * n - 2 - i : i); };

    Tensor<T> out = Tensor<T>::zeros({B, C, Ho, Wo});
    const T* px = x.ptr();
    T* po = out.ptr();
    parallel_for(B * C, [&](int64_t lo_, int64_t hi_) {
        for (int64_t pl = lo_; pl < hi_; ++pl) {
            const T* iplane = px + pl * H * W;
            T* oplane = po + pl * Ho * Wo;
            for (int64_t y = 0; y < Ho; ++y) {
                const T* irow = iplane + refl(y - pad, H) * W;
                T* orow = oplane + y * Wo;
                for (int64_t xx = 0; xx < Wo; ++xx) orow[xx] = irow[refl(xx - pad, W)];
            }
        }
    });
    auto xn = x.node(), on = out.node();
    return attach_op(
        out,
        [xn, on, B, C, H, W, Ho, Wo, pad, refl] {
            const auto& g = on->grad;
            auto& gx = xn->ensure_grad();
            parallel_for(B * C, [&](int64_t lo_, int64_t hi_) {
                for (int64_t pl = lo_; pl < hi_; ++pl) {
                    T* gplane = gx.data() + pl * H * W;
                    const T* gout = g.data() + pl * Ho * Wo;
                    for (int64_t y = 0; y < Ho; ++y) {
                        T* grow = gplane + refl(y - pad, H) * W;
                        const T* gorow = gout + y * Wo;
                        for (int64_t xx = 0; xx < Wo; ++xx) grow[refl(xx - pad, W)] += gorow[xx];
                    }
                }
            });
        },
        x);
}

// 3x3 mean filter with reflection padding (SSIM local statistics).
template <class T>
Tensor<T> box_filter3_reflect(const Tensor<T>& x) {
    check(x.rank() == 4, "box_filter3_reflect: input must be [B,C,H,W]");
    const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
    check(H >= 2 && W >= 2, "box_filter3_reflect: spatial size must be >= 2");
    auto refl = [](int64_t i, int64_t n) { return i < 0 ? -i : (i >= n ? 2 * n - 2 - i : i); };

    Tensor<T> out = Tensor<T>::zeros(x.shape());
    const T* px = x.ptr();
    T* po = out.ptr();
    const T ninth = T(1) / T(9);
    parallel_for(B * C * H, [&](int64_t lo_, int64_t hi_) {
        for (int64_t row = lo_; row < hi_; ++row) {
            const int64_t pl = row / H, y = row % H;
            const T* plane = px + pl * H * W;
            T* orow = po + row * W;
            const T* r0 = plane + refl(y - 1, H) * W;
            const T* r1 = plane + y * W;
            const T* r2 = plane + refl(y + 1, H) * W;
            for (int64_t xx = 0; xx < W; ++xx) {
                const int64_t xm = refl(xx - 1, W), xp = refl(xx + 1, W);
                orow[xx] = (r0[xm] + r0[xx] + r0[xp] + r1[xm] + r1[xx] + r1[xp] + r2[xm] + r2[xx] +
                            r2[xp]) *
                           ninth;
            }
        }
    });
    auto xn = x.node(), on = out.node();
    return attach_op(
        out,
        [xn, on, B, C, H, W, refl, ninth] {
            const auto& g = on->grad;
            auto& gx = xn->ensure_grad();
            parallel_for(B * C, [&](int64_t lo_, int64_t hi_) {
                for (int64_t pl = lo_; pl < hi_; ++pl) {
                    T* gplane = gx.data() + pl * H * W;
                    const T* gout = g.data() + pl * H * W;
                    for (int64_t y = 0; y < H; ++y)
                        for (int64_t xx = 0; xx < W; ++xx) {
                            const T gv = gout[y * W + xx] * ninth;
                            for (int64_t dy = -1; dy <= 1; ++dy)
                                for (int64_t dx = -1; dx <= 1; ++dx)
                                    gplane[refl(y + dy, H) * W + refl(xx + dx, W)] += gv;
                        }
                }
            });
        },
        x);
}

// [R, N, heads*dh] -> [R, heads, N, dh]
template <class T>
Tensor<T> split_heads(const Tensor<T>& x, int64_t heads) {
    check(x.rank() == 3 && x.dim(2) % heads == 0, "split_heads: bad shape");
    const int64_t R = x.dim(0), N = x.dim(1), C = x.dim(2), D = C / heads;
    Tensor<T> out = Tensor<T>::zeros({R, heads, N, D});
    const T* px = x.ptr();
    T* po = out.ptr();
    parallel_for(R * heads, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
            const int64_t r = i / heads, h = i % heads;
            for (int64_t n = 0; n < N; ++n)
                std::memcpy(po + ((r * heads + h) * N + n) * D, px + (r * N + n) * C + h * D,
                            static_cast<size_t>(D) * sizeof(T));
        }
    });
    auto xn = x.node(), on = out.node();
    return attach_op(
        out,
        [xn, on, R, N, C, D, heads] {
            const auto& g = on->grad;
            auto& gx = xn->ensure_grad();
            parallel_for(R * heads, [&](int64_t lo, int64_t hi) {
                for (int64_t i = lo; i < hi; ++i) {
                    const int64_t r = i / heads, h = i % heads;
                    for (int64_t n = 0; n < N; ++n)
                        detail::axpy(gx.data() + (r * N + n) * C + h * D, T(1),
                                     g.data() + ((r * heads + h) * N + n) * D, D);
                }
            });
        },
        x);
}

// [R, heads, N, dh] -> [R, N, heads*dh]
template <class T>
Tensor<T> merge_heads(const Tensor<T>& x) {
    check(x.rank() == 4, "merge_heads: bad shape");
    const int64_t R = x.dim(0), heads = x.dim(1), N = x.dim(2), D = x.dim(3);
    const int64_t C = heads * D;
    Tensor<T> out = Tensor<T>::zeros({R, N, C});
    const T* px = x.ptr();
    T* po = out.ptr();
    parallel_for(R * heads, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
            const int64_t r = i / heads, h = i % heads;
            for (int64_t n = 0; n < N; ++n)
                std::memcpy(po + (r * N + n) * C + h * D, px + ((r * heads + h) * N + n) * D,
                            static_cast<size_t>(D) * sizeof(T));
        }
    });
    auto xn = x.node(), on = out.node();
    return attach_op(
        out,
        [xn, on, R, N, C, D, heads] {
            const auto& g = on->grad;
            auto& gx = xn->ensure_grad();
            parallel_for(R * heads, [&](int64_t lo, int64_t hi) {
                for (int64_t i = lo; i < hi; ++i) {
                    const int64_t r = i / heads, h = i % heads;
                    for (int64_t n = 0; n < N; ++n)
                        detail::axpy(gx.data() + ((r * heads + h) * N + n) * D, T(1),
                                     g.data() + (r * N + n) * C + h * D, D);
                }
            });
        },
        x);
}

// [B, h*w, C] tokens -> [B, C, h, w] feature map.
template <class T>
Tensor<T> tokens_to_nchw(const Tensor<T>& x, int64_t h, int64_t w) {
    check(x.rank() == 3 && x.dim(1) == h * w, "tokens_to_nchw: bad shape");
    const int64_t B = x.dim(0), C = x.dim(2);
    Tensor<T> out = Tensor<T>::zeros({B, C, h, w});
    const T* px = x.ptr();
    T* po = out.ptr();
    parallel_for(B * C, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
            const int64_t b = i / C, c = i % C;
            const T* src = px + b * h * w * C + c;
            T* dst = po + i * h * w;
            for (int64_t n = 0; n < h * w; ++n) dst[n] = src[n * C];
        }
    });
    auto xn = x.node(), on = out.node();
    return attach_op(
        out,
        [xn, on, B, C, h, w] {
            const auto& g = on->grad;
            auto& gx = xn->ensure_grad();
            parallel_for(B * C, [&](int64_t lo, int64_t hi) {
                for (int64_t i = lo; i < hi; ++i) {
                    const int64_t b = i / C, c = i % C;
                    T* dst = gx.data() + b * h * w * C + c;
                    const T* src = g.data() + i * h * w;
                    for (int64_t n = 0; n < h * w; ++n) dst[n * C] += src[n];
                }
            });
        },
        x);
}

// [B,3,H,W] image -> [B, (H/2)(W/2), 12] tokens of flattened 2x2 patches in
// (channel, dy, dx) order.
template <class T>
Tensor<T> patches_to_tokens(const Tensor<T>& img) {
    check(img.rank() == 4, "patches_to_tokens: bad shape");
    const int64_t B = img.dim(0), C = img.dim(1), H = img.dim(2), W = img.dim(3);
    check(H % 2 == 0 && W % 2 == 0, "patches_to_tokens: odd spatial size");
    const int64_t ph = H / 2, pw = W / 2, E = C * 4;
    Tensor<T> out = Tensor<T>::zeros({B, ph * pw, E});
    const T* px = img.ptr();
    T* po = out.ptr();
    parallel_for(B * ph, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
            const int64_t b = i / ph, py = i % ph;
            for (int64_t pxx = 0; pxx < pw; ++pxx) {
                T* dst = po + (b * ph * pw + py * pw + pxx) * E;
                for (int64_t c = 0; c < C; ++c) {
                    const T* plane = px + (b * C + c) * H * W;
                    dst[c * 4 + 0] = plane[(2 * py) * W + 2 * pxx];
                    dst[c * 4 + 1] = plane[(2 * py) * W + 2 * pxx + 1];
                    dst[c * 4 + 2] = plane[(2 * py + 1) * W + 2 * pxx];
                    dst[c * 4 + 3] = plane[(2 * py + 1) * W + 2 * pxx + 1];
                }
            }
        }
    });
    auto xn = img.node(), on = out.node();
    return attach_op(
        out,
        [xn, on, B, C, H, W, ph, pw, E] {
            const auto& g = on->grad;
            auto& gx = xn->ensure_grad();
            parallel_for(B * ph, [&](int64_t lo, int64_t hi) {
                for (int64_t i = lo; i < hi; ++i) {
                    const int64_t b = i / ph, py = i % ph;
                    for (int64_t pxx = 0; pxx < pw; ++pxx) {
                        const T* src = g.data() + (b * ph * pw + py * pw + pxx) * E;
                        for (int64_t c = 0; c < C; ++c) {
                            T* plane = gx.data() + (b * C + c) * H * W;
                            plane[(2 * py) * W + 2 * pxx] += src[c * 4 + 0];
                            plane[(2 * py) * W + 2 * pxx + 1] += src[c * 4 + 1];
                            plane[(2 * py + 1) * W + 2 * pxx] += src[c * 4 + 2];
                            plane[(2 * py + 1) * W + 2 * pxx + 1] += src[c * 4 + 3];
                        }
                    }
                }
            });
        },
        img);
}

// [B, h*w, C] tokens -> [B, (h/2)(w/2), 4C] with sub-pixel order
// (0,0),(0,1),(1,0),(1,1).
template <class T>
Tensor<T> merge_tokens_2x2(const Tensor<T>& x, int64_t h, int64_t w) {
    check(x.rank() == 3 && x.dim(1) == h * w, "merge_tokens_2x2: bad shape");
    check(h % 2 == 0 && w % 2 == 0, "patch_merging: odd spatial dims");
    const int64_t B = x.dim(0), C = x.dim(2), mh = h / 2, mw = w / 2;
    Tensor<T> out = Tensor<T>::zeros({B, mh * mw, 4 * C});
    const T* px = x.ptr();
    T* po = out.ptr();
    parallel_for(B * mh, [&](int64_t lo, int64_t hi) {
        for (int64_t i = lo; i < hi; ++i) {
            const int64_t b = i / mh, my = i % mh;
            for (int64_t mx = 0; mx < mw; ++mx) {
                T* dst = po + (b * mh * mw + my * mw + mx) * 4 * C;
                const T* base = px + (b * h * w + (2 * my) * w + 2 * mx) * C;
                std::memcpy(dst, base, static_cast<size_t>(C) * sizeof(T));
                std::memcpy(dst + C, base + C, static_cast<size_t>(C) * sizeof(T));
                std::memcpy(dst + 2 * C, base + w * C, static_cast<size_t>(C) * sizeof(T));
                std::memcpy(dst + 3 * C, base + (w + 1) * C, static_cast<size_t>(C) * sizeof(T));
            }
        }
    });
    auto xn = x.node(), on = out.node();
    return attach_op(
        out,
        [xn, on, B, C, h, w, mh, mw] {
            const auto& g = on->grad;
            auto& gx = xn->ensure_grad();
            parallel_for(B * mh, [&](int64_t lo, int64_t hi) {
                for (int64_t i = lo; i < hi; ++i) {
                    const int64_t b = i / mh, my = i % mh;
                    for (int64_t mx = 0; mx < mw; ++mx) {
                        const T* src = g.data() + (b * mh * mw + my * mw + mx) * 4 * C;
                        T* base = gx.data() + (b * h * w + (2 * my) * w + 2 * mx) * C;
                        detail::axpy(base, T(1), src, C);
                        detail::axpy(base + C, T(1), src + C, C);
                        detail::axpy(base + w * C, T(1), src + 2 * C, C);
                        detail::axpy(base + (w + 1) * C, T(1), src + 3 * C, C);
                    }
                }
            });
        },
        x);
}

// scores[B*nW, heads, N, N] + mask[nW, N, N], broadcast over batch and heads.
template <class T>
Tensor<T> add_window_mask(const Tensor<T>& scores, const Tensor<T>& mask, int64_t num_windows) {
    check(scores.rank() == 4, "add_window_mask: scores must be [B*nW,heads,N,N]");
    check(mask.rank() == 3 && mask.dim(0) == num_windows, "add_window_mask: mask must be [nW,N,N]");
    const int64_t BW = scores.dim(0), Hh = scores.dim(1), N = scores.dim(2);
    check(scores.dim(3) == N && mask.dim(1) == N && mask.dim(2) == N, "add_window_mask: N mismatch");
    check(BW % num_windows == 0, "add_window_mask: batch not a multiple of window count");

    Tensor<T> out = Tensor<T>::zeros(scores.shape());
    const T* ps = scores.ptr();
    const T* pm = mask.ptr();
    T* po = out.ptr();
    parallel_for(BW * Hh, [&](int64_t lo_, int64_t hi_) {
        for (int64_t i = lo_; i < hi_; ++i) {
            const int64_t wi = (i / Hh) % num_windows;
            const T* mrow = pm + wi * N * N;
            const T* srow = ps + i * N * N;
            T* orow = po + i * N * N;
            for (int64_t j = 0; j < N * N; ++j) orow[j] = srow[j] + mrow[j];
        }
    });
    auto sn = scores.node(), on = out.node();
    return attach_op(
        out,
        [sn, on] {
            const auto& g = on->grad;
            auto& gs = sn->ensure_grad();
            for (size_t i = 0; i < g.size(); ++i) gs[i] += g[i];
        },
        scores);
}

}  // namespace swindepth
