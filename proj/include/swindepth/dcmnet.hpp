#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "swindepth/layers.hpp"
#include "swindepth/swin.hpp"

namespace swindepth {

struct DecoderConfig {
    int64_t proj_channels = 128;  // C'
    bool ppm = true;
    bool topdown_add = true;
    bool dense_concat = true;
    std::vector<int64_t> ppm_sizes{1, 2, 3, 6};
    std::string activation = "elu";
    double disp_head_bias = -2.5;  // pre-sigmoid bias; starts depth near mid-range

    void validate() const {
        check(proj_channels >= 4 && proj_channels % 4 == 0,
              "decoder: C' must be a positive multiple of 4");
        check(!ppm_sizes.empty() && ppm_sizes.front() == 1, "decoder: ppm_sizes must start at 1");
        for (size_t i = 1; i < ppm_sizes.size(); ++i)
            check(ppm_sizes[i] > ppm_sizes[i - 1], "decoder: ppm_sizes must be strictly increasing");
        act_from_string(activation);
    }
};

// Four sigmoid-disparity maps, coarse to fine: 1/8, 1/4, 1/2, 1/1 of the
// input resolution, each exactly 2x the previous.
template <class T>
struct DepthPyramid {
    std::array<Tensor<T>, 4> disp;
};

// Top-down cascade pathway: every projected feature upsampled to the size of
// the last entry and summed. A single entry passes through unchanged.
template <class T>
Tensor<T> cascade_add(const std::vector<Tensor<T>>& projected) {
    check(!projected.empty(), "cascade_add: no inputs");
    const auto& last = projected.back();
    const int64_t ch = last.dim(1), th = last.dim(2), tw = last.dim(3);
    Tensor<T> acc;
    for (const auto& p : projected) {
        check(p.dim(1) == ch, "cascade_add: channel mismatch " + std::to_string(p.dim(1)) + " vs " +
                                  std::to_string(ch));
        Tensor<T> term = (p.dim(2) == th && p.dim(3) == tw) ? p : bilinear_resize(p, th, tw);
        acc = acc.defined() ? add(acc, term) : term;
    }
    return acc;
}

// Pyramid pooling over the deepest feature: multi-size adaptive average
// pooling, per-branch channel reduction, upsample, concat with the input,
// and a fused projection to C'.
template <class T>
struct PpmModule {
    std::vector<Conv<T>> reduce;  // 1x1, in -> C'/4
    Conv<T> fuse;                 // 3x3, (in + C') -> C'
    std::vector<int64_t> sizes;
    Act act = Act::Elu;

    PpmModule() = default;
    PpmModule(int64_t in_ch, int64_t cp, std::vector<int64_t> sizes_, Act act_, Rng& rng)
        : sizes(std::move(sizes_)), act(act_) {
        for (size_t i = 0; i < sizes.size(); ++i)
            reduce.emplace_back(in_ch, cp / 4, 1, 1, rng);
        fuse = Conv<T>(in_ch + cp, cp, 3, 1, rng, T(0), true);
    }

    Tensor<T> forward(const Tensor<T>& f4) const {
        const int64_t h = f4.dim(2), w = f4.dim(3);
        std::vector<Tensor<T>> branches{f4};
        for (size_t i = 0; i < sizes.size(); ++i) {
            auto b = avg_pool2d(f4, sizes[i], sizes[i]);
            b = apply_act(reduce[i](b), act);
            branches.push_back(bilinear_resize(b, h, w));
        }
        return fuse(concat(branches, 1));
    }

    void params(const std::string& p, ParamList<T>& out) const {
        for (size_t i = 0; i < reduce.size(); ++i)
            reduce[i].params(p + ".reduce" + std::to_string(sizes[i]), out);
        fuse.params(p + ".fuse", out);
    }
};

// Densely Cascaded Multi-scale Network. Stage s (s = 1 coarsest) projects
// pyramid level 5-s to C', applies the top-down cascade sum, a 1x1 non-linear
// feature mapping, then a depth head over the dense concatenation of all
// mapped features of stages <= s, 2x upsampled.
template <class T>
class DcmNet {
public:
    struct Result {
        std::array<Tensor<T>, 4> disp;       // coarse -> fine
        std::array<Tensor<T>, 4> projected;  // p_s (stage inputs, C' channels)
        std::array<Tensor<T>, 4> mapped;     // x'_s
    };

    DcmNet() = default;

    DcmNet(const DecoderConfig& cfg, int64_t encoder_base_channels, Rng& rng) : cfg_(cfg) {
        cfg.validate();
        act_ = act_from_string(cfg.activation);
        const int64_t cp = cfg.proj_channels;
        const int64_t c8 = encoder_base_channels * 8;
        if (cfg.ppm)
            ppm_ = PpmModule<T>(c8, cp, cfg.ppm_sizes, act_, rng);
        else
            proj_stage1_ = Conv<T>(c8, cp, 3, 1, rng, T(0), true);
        for (int ss = 1; ss < 4; ++ss) {
            int64_t in_ch = encoder_base_channels << (3 - ss);
            proj_[static_cast<size_t>(ss - 1)] = Conv<T>(in_ch, cp, 3, 1, rng, T(0), true);
        }
        for (int ss = 0; ss < 4; ++ss) {
            fmap_[static_cast<size_t>(ss)] = Conv<T>(cp, cp, 1, 1, rng);
            int64_t head_in = cfg.dense_concat ? (ss + 1) * cp : cp;
            h1_[static_cast<size_t>(ss)] = Conv<T>(head_in, cp, 3, 1, rng, T(0), true);
            h2_[static_cast<size_t>(ss)] = Conv<T>(cp, cp, 3, 1, rng, T(0), true);
            h3_[static_cast<size_t>(ss)] =
                Conv<T>(cp, 1, 1, 1, rng, static_cast<T>(cfg.disp_head_bias));
        }
    }

    Result forward(const FeaturePyramid<T>& pyr) const {
        Result r;
        r.projected[0] = cfg_.ppm ? ppm_->forward(pyr.levels[3]) : (*proj_stage1_)(pyr.levels[3]);
        for (int ss = 1; ss < 4; ++ss)
            r.projected[static_cast<size_t>(ss)] =
                proj_[static_cast<size_t>(ss - 1)](pyr.levels[static_cast<size_t>(3 - ss)]);

        for (int ss = 0; ss < 4; ++ss) {
            const auto& p = r.projected[static_cast<size_t>(ss)];
            const int64_t h = p.dim(2), w = p.dim(3);
            Tensor<T> x;
            if (cfg_.topdown_add && ss > 0) {
                std::vector<Tensor<T>> terms(r.projected.begin(), r.projected.begin() + ss + 1);
                x = cascade_add(terms);
            } else {
                x = p;
            }
            auto mapped = apply_act(fmap_[static_cast<size_t>(ss)](x), act_);
            r.mapped[static_cast<size_t>(ss)] = mapped;

            Tensor<T> dense;
            if (cfg_.dense_concat && ss > 0) {
                std::vector<Tensor<T>> ins;
                for (int k = 0; k <= ss; ++k) {
                    const auto& m = r.mapped[static_cast<size_t>(k)];
                    ins.push_back(k == ss ? m : bilinear_resize(m, h, w));
                }
                dense = concat(ins, 1);
            } else {
                dense = mapped;
            }
            auto up = bilinear_resize(dense, 2 * h, 2 * w);
            auto y = apply_act(h1_[static_cast<size_t>(ss)](up), act_);
            y = apply_act(h2_[static_cast<size_t>(ss)](y), act_);
            r.disp[static_cast<size_t>(ss)] = sigmoid(h3_[static_cast<size_t>(ss)](y));
        }
        return r;
    }

    DepthPyramid<T> decode(const FeaturePyramid<T>& pyr) const {
        DepthPyramid<T> d;
        d.disp = forward(pyr).disp;
        return d;
    }

    void params(ParamList<T>& out) const {
        if (ppm_)
            ppm_->params("decoder.ppm", out);
        else
            proj_stage1_->params("decoder.proj1", out);
        for (int ss = 1; ss < 4; ++ss)
            proj_[static_cast<size_t>(ss - 1)].params("decoder.proj" + std::to_string(ss + 1), out);
        for (int ss = 0; ss < 4; ++ss) {
            std::string sp = "decoder.stage" + std::to_string(ss + 1);
            fmap_[static_cast<size_t>(ss)].params(sp + ".fmap", out);
            h1_[static_cast<size_t>(ss)].params(sp + ".head1", out);
            h2_[static_cast<size_t>(ss)].params(sp + ".head2", out);
            h3_[static_cast<size_t>(ss)].params(sp + ".head3", out);
        }
    }

    const DecoderConfig& config() const { return cfg_; }
    const Conv<T>& head_conv1(int ss) const { return h1_[static_cast<size_t>(ss)]; }
    PpmModule<T>* ppm_module() { return ppm_ ? &*ppm_ : nullptr; }

private:
    DecoderConfig cfg_;
    Act act_ = Act::Elu;
    std::optional<PpmModule<T>> ppm_;
    std::optional<Conv<T>> proj_stage1_;
    std::array<Conv<T>, 3> proj_;  // stages 2..4
    std::array<Conv<T>, 4> fmap_, h1_, h2_, h3_;
};

}  // namespace swindepth
