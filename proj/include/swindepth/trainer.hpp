#pragma once

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <string>
#include <unordered_map>
#include <vector>

#include "swindepth/checkpoint.hpp"
#include "swindepth/dataset.hpp"
#include "swindepth/dcmnet.hpp"
#include "swindepth/losses.hpp"
#include "swindepth/posenet.hpp"
#include "swindepth/swin.hpp"

namespace swindepth {

// Encoder + decoder + pose network built for one input resolution and a
// single RNG stream (construction order is fixed: encoder, decoder, pose).
template <class T>
struct DepthSystem {
    EncoderConfig enc_cfg;
    DecoderConfig dec_cfg;
    PoseConfig pose_cfg;
    int64_t height = 0, width = 0;
    std::optional<SwinEncoder<T>> encoder;
    DcmNet<T> decoder;
    PoseNet<T> pose;

    static DepthSystem build(const EncoderConfig& ec, const DecoderConfig& dc, const PoseConfig& pc,
                             int64_t h, int64_t w, Rng& rng) {
        DepthSystem s;
        s.enc_cfg = ec;
        s.dec_cfg = dc;
        s.pose_cfg = pc;
        s.height = h;
        s.width = w;
        s.encoder.emplace(ec, h, w, rng);
        s.decoder = DcmNet<T>(dc, ec.base_channels, rng);
        s.pose = PoseNet<T>(pc, rng);
        return s;
    }

    ParamList<T> params() const {
        ParamList<T> p;
        encoder->params(p);
        decoder.params(p);
        pose.params(p);
        return p;
    }

    DepthPyramid<T> infer(const Tensor<T>& image) const {
        return decoder.decode(encoder->forward(image));
    }

    void load_parameters(const std::vector<std::pair<std::string, Tensor<T>>>& tensors) {
        ParamList<T> mine = params();
        check(mine.items.size() == tensors.size(),
              "checkpoint: parameter count mismatch (" + std::to_string(tensors.size()) + " stored, " +
                  std::to_string(mine.items.size()) + " in model)");
        for (const auto& [name, stored] : tensors) {
            const Tensor<T>* dst = mine.find(name);
            check(dst != nullptr, "checkpoint: unknown parameter '" + name + "'");
            check(dst->shape() == stored.shape(), "checkpoint: shape mismatch for '" + name + "'");
            const_cast<Tensor<T>*>(dst)->data() = stored.data();
        }
    }
};

template <class T>
struct TrainConfig {
    int64_t batch = 4;
    int64_t epochs = 40;
    int64_t max_steps = 0;  // 0: run all epochs
    int64_t ckpt_every = 500;
    LrSchedule<T> lr;
    AdamConfig<T> adam;
    LossOptions<T> loss;
    std::string out_dir;      // empty: keep everything in memory
    std::string config_echo;  // snapshot stored in checkpoints
};

struct LogEntry {
    int64_t step;  // 1-based
    double lr;
    double loss;
};

struct FitResult {
    std::vector<LogEntry> log;
    std::string last_checkpoint;
    int64_t steps_run = 0;
};

namespace detail {

template <class T>
class FrameCache {
public:
    explicit FrameCache(const Dataset<T>& ds) : ds_(&ds) {}

    const Tensor<T>& get(int scene, int64_t idx) {
        uint64_t key = (static_cast<uint64_t>(scene) << 32) | static_cast<uint64_t>(idx);
        auto it = cache_.find(key);
        if (it != cache_.end()) return it->second;
        return cache_.emplace(key, ds_->scenes[static_cast<size_t>(scene)].frame(idx)).first->second;
    }

private:
    const Dataset<T>* ds_;
    std::unordered_map<uint64_t, Tensor<T>> cache_;
};

template <class T>
void copy_into_batch(Tensor<T>& batch, int64_t slot, const Tensor<T>& frame) {
    std::memcpy(batch.ptr() + slot * frame.numel(), frame.ptr(),
                static_cast<size_t>(frame.numel()) * sizeof(T));
}

}  // namespace detail

// Joint training loop: encode, decode, predict both adjacent poses, minimize
// the photometric objective with Adam. Deterministic given the seed; resume
// from a checkpoint reproduces the uninterrupted run bitwise.
template <class T>
FitResult fit(DepthSystem<T>& sys, const Dataset<T>& data, const TrainConfig<T>& cfg, Rng& rng,
              const CheckpointData<T>* resume = nullptr) {
    check(cfg.batch >= 1, "fit: batch size must be positive");
    std::vector<std::pair<int, int64_t>> triplets;
    for (size_t s = 0; s < data.scenes.size(); ++s)
        for (int64_t i = 1; i + 1 < data.scenes[s].frame_count; ++i)
            triplets.emplace_back(static_cast<int>(s), i);
    check(!triplets.empty(), "fit: dataset has no frame triplets");

    const Intrinsics<T>& K = data.scenes[0].intrinsics;
    for (const auto& sc : data.scenes)
        check(sc.intrinsics.fx == K.fx && sc.intrinsics.fy == K.fy && sc.intrinsics.cx == K.cx &&
                  sc.intrinsics.cy == K.cy,
              "fit: all scenes must share intrinsics");

    const int64_t steps_per_epoch = std::max<int64_t>(1, static_cast<int64_t>(triplets.size()) / cfg.batch);
    const int64_t total_steps =
        cfg.max_steps > 0 ? cfg.max_steps : cfg.epochs * steps_per_epoch;

    ParamList<T> params = sys.params();
    Adam<T> opt(params, cfg.adam);

    int64_t step = 0;
    std::vector<uint64_t> order(triplets.size());
    if (resume) {
        sys.load_parameters(resume->tensors);
        auto& m = opt.moment1();
        auto& v = opt.moment2();
        check(resume->opt_m.size() == m.size(), "checkpoint: optimizer state count mismatch");
        m = resume->opt_m;
        v = resume->opt_v;
        opt.set_step_count(resume->opt_t);
        rng.set_state(resume->rng_state);
        step = resume->step;
        order = resume->epoch_order;
    }

    namespace fs = std::filesystem;
    std::ofstream log_file;
    if (!cfg.out_dir.empty()) {
        fs::create_directories(cfg.out_dir);
        log_file.open(fs::path(cfg.out_dir) / "loss_log.txt", resume ? std::ios::app : std::ios::out);
        if (!log_file) throw DataError("fit: cannot open loss log in " + cfg.out_dir);
    }

    detail::FrameCache<T> cache(data);
    FitResult result;

    auto write_checkpoint = [&](int64_t next_step, const std::vector<uint64_t>& cur_order) {
        if (cfg.out_dir.empty()) return;
        CheckpointData<T> ck;
        ck.tensors = params.items;
        ck.opt_m = opt.moment1();
        ck.opt_v = opt.moment2();
        ck.opt_t = opt.step_count();
        ck.rng_state = rng.state();
        ck.step = next_step;
        ck.epoch = next_step / steps_per_epoch;
        ck.epoch_order = cur_order;
        ck.config_text = cfg.config_echo;
        char name[64];
        std::snprintf(name, sizeof(name), "checkpoint_%06lld.swdp", static_cast<long long>(next_step));
        std::string path = (fs::path(cfg.out_dir) / name).string();
        save_checkpoint(path, ck);
        save_checkpoint((fs::path(cfg.out_dir) / "checkpoint_latest.swdp").string(), ck);
        result.last_checkpoint = path;
    };

    const int64_t H = sys.height, W = sys.width;
    while (step < total_steps) {
        // A mid-epoch resume lands with step % steps_per_epoch != 0 and keeps
        // the stored order; at every epoch boundary the shuffle is redrawn,
        // which matches the uninterrupted run because the RNG state was saved
        // after the last completed step.
        if (step % steps_per_epoch == 0) {
            for (size_t i = 0; i < order.size(); ++i) order[i] = i;
            rng.shuffle(order);
        }

        const int64_t in_epoch = step % steps_per_epoch;
        const int64_t epoch = step / steps_per_epoch;
        const T lr = cfg.lr.at(epoch);

        Tensor<T> target = Tensor<T>::zeros({cfg.batch, 3, H, W});
        Tensor<T> prev = Tensor<T>::zeros({cfg.batch, 3, H, W});
        Tensor<T> next = Tensor<T>::zeros({cfg.batch, 3, H, W});
        for (int64_t b = 0; b < cfg.batch; ++b) {
            auto [scene, center] =
                triplets[static_cast<size_t>(order[static_cast<size_t>((in_epoch * cfg.batch + b) %
                                                                        static_cast<int64_t>(order.size()))])];
            const Tensor<T>& ft = cache.get(scene, center);
            check(ft.dim(1) == H && ft.dim(2) == W,
                  "fit: dataset frames are " + std::to_string(ft.dim(2)) + "x" +
                      std::to_string(ft.dim(1)) + " but the model expects " + std::to_string(W) + "x" +
                      std::to_string(H));
            detail::copy_into_batch(target, b, ft);
            detail::copy_into_batch(prev, b, cache.get(scene, center - 1));
            detail::copy_into_batch(next, b, cache.get(scene, center + 1));
        }

        double loss_value;
        try {
            Tape<T> tape;
            auto pyramid = sys.encoder->forward(target);
            DepthPyramid<T> depths = sys.decoder.decode(pyramid);
            auto pose_prev = sys.pose.predict(prev, target);  // temporal order
            auto pose_next = sys.pose.predict(target, next);
            auto t_prev = pose_to_se3(pose_prev, true);
            auto t_next = pose_to_se3(pose_next, false);
            auto breakdown =
                total_loss<T>(target, {prev, next}, {t_prev, t_next}, depths, K, cfg.loss, rng);
            loss_value = static_cast<double>(breakdown.total.item());
            opt.zero_grads();
            tape.backward(breakdown.total);
            opt.step(lr);
        } catch (const NumericError& e) {
            throw NumericError(std::string(e.what()) + " at step " + std::to_string(step + 1) +
                               (result.last_checkpoint.empty()
                                    ? " (no checkpoint written yet)"
                                    : " (last good checkpoint: " + result.last_checkpoint + ")"));
        }

        ++step;
        result.log.push_back({step, static_cast<double>(lr), loss_value});
        if (log_file) {
            char line[96];
            std::snprintf(line, sizeof(line), "%lld %.17g %.17g\n", static_cast<long long>(step),
                          static_cast<double>(lr), loss_value);
            log_file << line;
            log_file.flush();
        }

        if ((cfg.ckpt_every > 0 && step % cfg.ckpt_every == 0) || step % steps_per_epoch == 0 ||
            step == total_steps)
            write_checkpoint(step, order);
    }
    result.steps_run = step - (resume ? resume->step : 0);
    return result;
}

}  // namespace swindepth
