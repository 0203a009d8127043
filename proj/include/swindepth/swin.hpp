#pragma once

#include <array>
#include <cmath>
#include <optional>
#include <string>
#include <vector>

#include "swindepth/layers.hpp"

namespace swindepth {

struct EncoderConfig {
    int64_t base_channels = 64;  // C
    int64_t window = 4;          // w
    std::vector<int64_t> depths{2, 2, 6, 2};
    std::vector<int64_t> heads{2, 4, 8, 16};
    int64_t mlp_ratio = 4;
    bool rel_bias = true;
    bool use_shift = true;

    int64_t stage_channels(int i) const { return base_channels << i; }

    void validate() const {
        check(base_channels >= 1 && window >= 1, "encoder: bad C or window");
        check(depths.size() == 4 && heads.size() == 4, "encoder: depths/heads must list 4 stages");
        for (int i = 0; i < 4; ++i) {
            check(depths[static_cast<size_t>(i)] >= 1, "encoder: stage depth must be >= 1");
            check(heads[static_cast<size_t>(i)] >= 1 &&
                      stage_channels(i) % heads[static_cast<size_t>(i)] == 0,
                  "encoder: heads must divide stage channels at stage " + std::to_string(i));
            if (use_shift)
                check(depths[static_cast<size_t>(i)] % 2 == 0,
                      "encoder: shifted windows require an even depth at stage " + std::to_string(i));
        }
    }
};

// Four feature maps; spatial sides halve and channels double level to level.
template <class T>
struct FeaturePyramid {
    std::array<Tensor<T>, 4> levels;  // levels[i]: [B, C*2^i, H/2^(i+1), W/2^(i+1)]
};

namespace detail {

// Token permutations and the attention mask for one (resolution, window,
// shift) combination. Masking keeps cyclically wrapped positions from
// attending across the original image boundary.
template <class T>
struct WindowGeometry {
    int64_t h = 0, w = 0, win = 0, shift = 0, nwin = 0;
    std::vector<int64_t> part_idx, inv_idx, bias_idx;
    Tensor<T> mask;  // [nwin, win^2, win^2] when shift > 0

    WindowGeometry() = default;
    WindowGeometry(int64_t h_, int64_t w_, int64_t win_, int64_t shift_, int64_t table_window)
        : h(h_), w(w_), win(win_), shift(shift_) {
        check(h % win == 0 && w % win == 0,
              "window_attention: resolution " + std::to_string(h) + "x" + std::to_string(w) +
                  " not divisible by window " + std::to_string(win));
        const int64_t wy_n = h / win, wx_n = w / win;
        nwin = wy_n * wx_n;
        const int64_t nn = win * win;
        part_idx.reserve(static_cast<size_t>(nwin * nn));
        for (int64_t wy = 0; wy < wy_n; ++wy)
            for (int64_t wx = 0; wx < wx_n; ++wx)
                for (int64_t iy = 0; iy < win; ++iy)
                    for (int64_t ix = 0; ix < win; ++ix) {
                        int64_t sy = (wy * win + iy + shift) % h;
                        int64_t sx = (wx * win + ix + shift) % w;
                        part_idx.push_back(sy * w + sx);
                    }
        inv_idx.assign(part_idx.size(), 0);
        for (size_t m = 0; m < part_idx.size(); ++m)
            inv_idx[static_cast<size_t>(part_idx[m])] = static_cast<int64_t>(m);

        bias_idx.reserve(static_cast<size_t>(nn * nn));
        const int64_t span = 2 * table_window - 1;
        for (int64_t i = 0; i < nn; ++i)
            for (int64_t j = 0; j < nn; ++j) {
                int64_t oy = i / win - j / win + table_window - 1;
                int64_t ox = i % win - j % win + table_window - 1;
                bias_idx.push_back(oy * span + ox);
            }

        if (shift > 0) {
            mask = Tensor<T>::zeros({nwin, nn, nn});
            for (int64_t wi = 0; wi < nwin; ++wi) {
                const int64_t* tok = part_idx.data() + wi * nn;
                for (int64_t i = 0; i < nn; ++i)
                    for (int64_t j = 0; j < nn; ++j) {
                        int64_t yi = tok[i] / w, xi = tok[i] % w;
                        int64_t yj = tok[j] / w, xj = tok[j] % w;
                        bool same = (yi + shift) / win == (yj + shift) / win &&
                                    (xi + shift) / win == (xj + shift) / win;
                        if (!same)
                            mask.data()[static_cast<size_t>((wi * nn + i) * nn + j)] = T(-1e9);
                    }
            }
        }
    }
};

}  // namespace detail

template <class T>
struct WindowAttention {
    Linear<T> to_q, to_k, to_v, proj;
    Tensor<T> bias_table;  // [(2w-1)^2, heads]; empty when disabled
    int64_t dim = 0, heads = 0;
    T scale = T(1);

    WindowAttention() = default;
    WindowAttention(int64_t dim_, int64_t heads_, int64_t window, bool rel_bias, Rng& rng)
        : to_q(dim_, dim_, rng),
          to_k(dim_, dim_, rng),
          to_v(dim_, dim_, rng),
          proj(dim_, dim_, rng),
          dim(dim_),
          heads(heads_) {
        scale = T(1) / std::sqrt(static_cast<T>(dim / heads));
        if (rel_bias) {
            int64_t span = 2 * window - 1;
            bias_table = Tensor<T>::trunc_normal({span * span, heads}, rng, T(0.02), true);
        }
    }

    Tensor<T> forward(const Tensor<T>& x, const detail::WindowGeometry<T>& g,
                      Tensor<T>* attn_probs = nullptr) const {
        const int64_t B = x.dim(0), nn = g.win * g.win;
        const int64_t bw = B * g.nwin;
        auto xw = reshape(gather_tokens(x, g.part_idx), {bw, nn, dim});
        auto qh = mul_scalar(split_heads(to_q(xw), heads), scale);
        auto kh = split_heads(to_k(xw), heads);
        auto vh = split_heads(to_v(xw), heads);
        auto scores = bmm(qh, kh, true);  // [bw, heads, nn, nn]
        if (bias_table.defined()) {
            auto bias = reshape(permute(embedding_rows(bias_table, g.bias_idx), {1, 0}), {heads, nn, nn});
            scores = add_bcast0(scores, bias);
        }
        if (g.shift > 0) scores = add_window_mask(scores, g.mask, g.nwin);
        auto attn = softmax_lastdim(scores);
        if (attn_probs) *attn_probs = attn;
        auto out = reshape(merge_heads(bmm(attn, vh)), {B, g.nwin * nn, dim});
        return proj(gather_tokens(out, g.inv_idx));
    }

    void params(const std::string& p, ParamList<T>& out) const {
        to_q.params(p + ".q", out);
        to_k.params(p + ".k", out);
        to_v.params(p + ".v", out);
        proj.params(p + ".proj", out);
        if (bias_table.defined()) out.add(p + ".rel_bias", bias_table);
    }
};

// One W-MSA or SW-MSA unit: pre-norm attention residual, then pre-norm
// 2-layer GELU MLP residual.
template <class T>
struct SwinBlock {
    LayerNorm<T> norm1, norm2;
    WindowAttention<T> attn;
    Linear<T> fc1, fc2;

    SwinBlock() = default;
    SwinBlock(int64_t dim, int64_t heads, int64_t window, int64_t mlp_ratio, bool rel_bias, Rng& rng)
        : norm1(dim),
          norm2(dim),
          attn(dim, heads, window, rel_bias, rng),
          fc1(dim, dim * mlp_ratio, rng),
          fc2(dim * mlp_ratio, dim, rng) {}

    Tensor<T> forward(const Tensor<T>& x, const detail::WindowGeometry<T>& g) const {
        auto y = add(x, attn.forward(norm1(x), g));
        return add(y, fc2(gelu(fc1(norm2(y)))));
    }

    void params(const std::string& p, ParamList<T>& out) const {
        norm1.params(p + ".norm1", out);
        attn.params(p + ".attn", out);
        norm2.params(p + ".norm2", out);
        fc1.params(p + ".mlp.fc1", out);
        fc2.params(p + ".mlp.fc2", out);
    }
};

// 2x2 non-overlapping patches, flattened and linearly projected to C. Purely
// linear (plus bias): each output position sees only its own patch.
template <class T>
struct PatchEmbed {
    Linear<T> proj;  // 12 -> C

    PatchEmbed() = default;
    PatchEmbed(int64_t c, Rng& rng) : proj(12, c, rng) {}

    Tensor<T> forward(const Tensor<T>& img) const {
        check(img.rank() == 4 && img.dim(1) == 3, "patch_embed: expected [B,3,H,W]");
        const int64_t B = img.dim(0), H = img.dim(2), W = img.dim(3);
        check(H % 2 == 0 && W % 2 == 0, "patch_embed: H and W must be even");
        return proj(patches_to_tokens(img));
    }

    void params(const std::string& p, ParamList<T>& out) const {
        proj.params(p + ".proj", out);
    }
};

// Concatenates 2x2 neighboring patches channel-wise in sub-pixel order
// (0,0),(0,1),(1,0),(1,1), normalizes, and projects 4C -> 2C.
template <class T>
struct PatchMerging {
    LayerNorm<T> norm;  // over 4C
    Linear<T> reduce;   // 4C -> 2C

    PatchMerging() = default;
    PatchMerging(int64_t c, Rng& rng) : norm(4 * c), reduce(4 * c, 2 * c, rng) {}

    // x: [B, h*w, C] tokens at resolution (h, w); h, w even.
    Tensor<T> forward(const Tensor<T>& x, int64_t h, int64_t w) const {
        return reduce(norm(merge_tokens_2x2(x, h, w)));
    }

    void params(const std::string& p, ParamList<T>& out) const {
        norm.params(p + ".norm", out);
        reduce.params(p + ".reduce", out);
    }
};

// Hierarchical windowed-attention encoder: four stages of W-MSA/SW-MSA block
// pairs with patch merging in between, emitting 1/2, 1/4, 1/8, 1/16 features.
template <class T>
class SwinEncoder {
public:
    SwinEncoder(const EncoderConfig& cfg, int64_t in_h, int64_t in_w, Rng& rng)
        : cfg_(cfg), in_h_(in_h), in_w_(in_w) {
        cfg.validate();
        check(in_h % 32 == 0 && in_w % 32 == 0, "encode: H and W must be divisible by 32, got " +
                                                    std::to_string(in_h) + "x" + std::to_string(in_w));
        embed_ = PatchEmbed<T>(cfg.base_channels, rng);
        int64_t h = in_h / 2, w = in_w / 2;
        for (int i = 0; i < 4; ++i) {
            Stage st;
            st.h = h;
            st.w = w;
            st.dim = cfg.stage_channels(i);
            // Window clamps to the stage resolution; a stage that is a single
            // window gets no shift (nothing to connect).
            int64_t win = std::min({cfg.window, h, w});
            int64_t shift = (cfg.use_shift && win > 1 && (h > win || w > win)) ? win / 2 : 0;
            st.geom0 = detail::WindowGeometry<T>(h, w, win, 0, cfg.window);
            if (shift > 0) st.geom_shift = detail::WindowGeometry<T>(h, w, win, shift, cfg.window);
            for (int64_t d = 0; d < cfg.depths[static_cast<size_t>(i)]; ++d)
                st.blocks.emplace_back(st.dim, cfg.heads[static_cast<size_t>(i)], cfg.window,
                                       cfg.mlp_ratio, cfg.rel_bias, rng);
            if (i < 3) st.merge = PatchMerging<T>(st.dim, rng);
            stages_[static_cast<size_t>(i)] = std::move(st);
            h /= 2;
            w /= 2;
        }
    }

    FeaturePyramid<T> forward(const Tensor<T>& image) const {
        check(image.rank() == 4 && image.dim(2) == in_h_ && image.dim(3) == in_w_,
              "encode: image size does not match the constructed encoder");
        FeaturePyramid<T> pyr;
        auto x = embed_.forward(image);
        for (int i = 0; i < 4; ++i) {
            const Stage& st = stages_[static_cast<size_t>(i)];
            for (size_t d = 0; d < st.blocks.size(); ++d) {
                bool shifted = cfg_.use_shift && (d % 2 == 1) && st.geom_shift.has_value();
                x = st.blocks[d].forward(x, shifted ? *st.geom_shift : st.geom0);
            }
            pyr.levels[static_cast<size_t>(i)] = tokens_to_nchw(x, st.h, st.w);
            if (st.merge) x = st.merge->forward(x, st.h, st.w);
        }
        return pyr;
    }

    void params(ParamList<T>& out) const {
        embed_.params("encoder.patch_embed", out);
        for (int i = 0; i < 4; ++i) {
            const Stage& st = stages_[static_cast<size_t>(i)];
            std::string sp = "encoder.stage" + std::to_string(i);
            for (size_t d = 0; d < st.blocks.size(); ++d)
                st.blocks[d].params(sp + ".block" + std::to_string(d), out);
            if (st.merge) st.merge->params(sp + ".merge", out);
        }
    }

    const EncoderConfig& config() const { return cfg_; }
    int64_t input_h() const { return in_h_; }
    int64_t input_w() const { return in_w_; }

private:
    struct Stage {
        std::vector<SwinBlock<T>> blocks;
        detail::WindowGeometry<T> geom0;
        std::optional<detail::WindowGeometry<T>> geom_shift;
        std::optional<PatchMerging<T>> merge;
        int64_t h = 0, w = 0, dim = 0;
    };

    EncoderConfig cfg_;
    int64_t in_h_, in_w_;
    PatchEmbed<T> embed_;
    std::array<Stage, 4> stages_;
};

}  // namespace swindepth
