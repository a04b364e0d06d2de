#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <vector>

#include "tc3d/aggregate.hpp"
#include "tc3d/loss.hpp"
#include "tc3d/network.hpp"
#include "tc3d/optim.hpp"
#include "tc3d/sampler.hpp"

namespace tc3d {

/// The shared-weight clip network together with the fusion function that turns S clip outputs
/// into one video-level consensus.
struct TemporalModel {
    Network net;
    Aggregator agg;
    bool aggregate_probabilities = false; // fuse softmax(F_s) instead of raw fc outputs

    std::vector<Tensor*> parameters()
    {
        std::vector<Tensor*> p = net.parameters();
        for (Tensor* t : agg.parameters()) p.push_back(t);
        return p;
    }
    std::vector<const Tensor*> parameters() const
    {
        std::vector<const Tensor*> p = static_cast<const Network&>(net).parameters();
        for (const Tensor* t : agg.parameters()) p.push_back(t);
        return p;
    }

    std::vector<Tensor> zero_grads() const
    {
        std::vector<Tensor> g;
        for (const Tensor* t : parameters()) g.emplace_back(t->shape());
        return g;
    }

    friend bool operator==(const TemporalModel&, const TemporalModel&) = default;
};

inline TemporalModel make_temporal_model(Network net, AggregatorKind kind, std::size_t clips)
{
    TemporalModel m;
    m.agg = Aggregator(kind, clips, net.class_count());
    m.net = std::move(net);
    return m;
}

struct ConsensusRecord {
    std::vector<std::vector<std::size_t>> clip_indices;
    std::vector<Tensor> clip_outputs; // F(C_s; W)
    Tensor consensus;                 // G
    std::vector<double> attention;    // omega_s (attention only)
    Tensor probabilities;             // H(G)
    double loss = 0.0;
};

namespace detail {

inline Tensor softmax_backward(const Tensor& probs, const Tensor& grad_p)
{
    const double d = dot(probs, grad_p);
    Tensor g = probs;
    for (std::size_t i = 0; i < g.size(); ++i) g[i] = probs[i] * (grad_p[i] - d);
    return g;
}

} // namespace detail

/// Samples a ClipSet, runs every clip through the one network, fuses the outputs and scores the
/// consensus with softmax. Eval-mode network (no dropout).
inline ConsensusRecord consensus_forward(const VideoSample& video, const TemporalModel& model, const SamplerConfig& cfg,
                                         Rng& rng, SampleMode mode = SampleMode::Center)
{
    ConsensusRecord rec;
    ClipSet clips = assemble_clips(video, cfg, rng, mode);
    rec.clip_indices = std::move(clips.clips);
    for (const Tensor& c : clips.clip_tensors) {
        Tensor f = model.net.forward(c, Mode::Eval);
        rec.clip_outputs.push_back(model.aggregate_probabilities ? softmax(f) : std::move(f));
    }
    AggregateResult a = model.agg.forward(rec.clip_outputs);
    rec.consensus = std::move(a.consensus);
    rec.attention = std::move(a.attention);
    rec.probabilities = softmax(rec.consensus);
    rec.loss = softmax_cross_entropy(rec.consensus, video.label).loss;
    return rec;
}

struct VideoGradient {
    double loss = 0.0;
    bool correct = false;
};

/// Adds the gradient of one video's consensus loss to `grads` (TemporalModel::parameters() order).
/// Each clip's contribution is back-propagated through dQ/dF(C_s) and summed in clip order.
inline VideoGradient accumulate_video_gradient(const VideoSample& video, const TemporalModel& model,
                                               const SamplerConfig& cfg, Rng& rng, std::vector<Tensor>& grads,
                                               double scale = 1.0)
{
    const std::vector<std::vector<std::size_t>> idx = sample_clip_indices(video.frame_count(), cfg, rng);
    const std::size_t s_n = idx.size();
    std::vector<ForwardCache> caches(s_n);
    std::vector<Tensor> raw(s_n), feats(s_n);
    for (std::size_t s = 0; s < s_n; ++s) {
        raw[s] = model.net.forward(gather_clip(video, idx[s]), Mode::Train, &rng, &caches[s]);
        feats[s] = model.aggregate_probabilities ? softmax(raw[s]) : raw[s];
    }
    const AggregateResult agg = model.agg.forward(feats);
    const LossResult loss = softmax_cross_entropy(agg.consensus, video.label);
    const AggregateGrads ag = model.agg.backward(loss.grad_scores, feats, agg);

    const std::size_t net_params = model.net.parameters().size();
    for (std::size_t s = 0; s < s_n; ++s) {
        const Tensor clip_grad =
            model.aggregate_probabilities ? detail::softmax_backward(feats[s], ag.clip_grads[s]) : ag.clip_grads[s];
        std::vector<Tensor> g = model.net.backward(caches[s], clip_grad);
        for (std::size_t p = 0; p < net_params; ++p)
            for (std::size_t i = 0; i < g[p].size(); ++i) grads[p][i] += scale * g[p][i];
    }
    for (std::size_t p = 0; p < ag.param_grads.size(); ++p)
        for (std::size_t i = 0; i < ag.param_grads[p].size(); ++i) grads[net_params + p][i] += scale * ag.param_grads[p][i];

    const auto& c = agg.consensus.values();
    const auto pred = static_cast<std::size_t>(std::max_element(c.begin(), c.end()) - c.begin());
    return {loss.loss, pred == video.label};
}

struct BatchGradient {
    double mean_loss = 0.0;
    std::size_t correct = 0;
    std::vector<Tensor> grads; // mean over the batch
};

/// Mean consensus loss and gradient over a batch, reduced in batch order.
inline BatchGradient batch_gradient(std::span<const VideoSample* const> batch, const TemporalModel& model,
                                    const SamplerConfig& cfg, Rng& rng)
{
    if (batch.empty()) throw std::invalid_argument("batch must not be empty");
    BatchGradient out;
    out.grads = model.zero_grads();
    const double scale = 1.0 / static_cast<double>(batch.size());
    for (const VideoSample* v : batch) {
        const VideoGradient vg = accumulate_video_gradient(*v, model, cfg, rng, out.grads, scale);
        out.mean_loss += vg.loss * scale;
        out.correct += vg.correct ? 1 : 0;
    }
    return out;
}

/// Optional interception points used by the compression stages.
struct StepHooks {
    std::function<void(std::vector<Tensor>&)> on_gradients;
    std::function<void(TemporalModel&)> after_step;
};

struct StepResult {
    double mean_loss = 0.0;
    std::size_t correct = 0;
};

/// One SGD-momentum step on the video-level consensus loss of `batch`.
inline StepResult consensus_train_step(std::span<const VideoSample* const> batch, TemporalModel& model,
                                       const SamplerConfig& cfg, OptimState& optim, Rng& rng,
                                       const StepHooks& hooks = {})
{
    BatchGradient bg = batch_gradient(batch, model, cfg, rng);
    if (hooks.on_gradients) hooks.on_gradients(bg.grads);
    sgd_momentum_step(model.parameters(), bg.grads, optim);
    if (hooks.after_step) hooks.after_step(model);
    return {bg.mean_loss, bg.correct};
}

// ---------------------------------------------------------------------------
// evaluation

enum class EvalMode : std::uint8_t { SClips = 0, AllClips = 1 };

inline const char* eval_mode_name(EvalMode m) { return m == EvalMode::SClips ? "s-clips" : "all-clips"; }

/// Frame stride of the all-clips windows: the clip offset for consecutive sampling, the
/// sub-fragment length for uniform-spread sampling.
inline std::size_t all_clips_stride(std::size_t frame_count, const SamplerConfig& cfg)
{
    if (cfg.strategy == SamplingStrategy::Consecutive) return cfg.offset;
    return std::max<std::size_t>(1, frame_count / cfg.parts / cfg.frames_per_clip);
}

inline std::vector<std::vector<std::size_t>> eval_clip_indices(std::size_t frame_count, const SamplerConfig& cfg,
                                                               EvalMode mode)
{
    if (mode == EvalMode::SClips) {
        Rng unused(0);
        return sample_clip_indices(frame_count, cfg, unused, SampleMode::Center);
    }
    return tile_all_clips(frame_count, cfg.frames_per_clip, all_clips_stride(frame_count, cfg));
}

using ClipForward = std::function<Tensor(const Tensor&)>;

/// Class probabilities for one video. s-clips runs the deterministic centre sample through the
/// aggregator; all-clips averages the scores of every tiled window. `forward` maps a clip to its
/// class scores, so decoded or sparse networks can share this path.
inline Tensor predict_with(const VideoSample& video, const Aggregator& agg, bool aggregate_probabilities,
                           const SamplerConfig& cfg, EvalMode mode, const ClipForward& forward)
{
    const auto idx = eval_clip_indices(video.frame_count(), cfg, mode);
    std::vector<Tensor> feats;
    for (const auto& c : idx) {
        Tensor f = forward(gather_clip(video, c));
        feats.push_back(aggregate_probabilities ? softmax(f) : std::move(f));
    }
    if (mode == EvalMode::SClips) return softmax(agg.forward(feats).consensus);
    return softmax(Aggregator(AggregatorKind::Average, feats.size(), feats.front().size()).forward(feats).consensus);
}

inline Tensor predict(const VideoSample& video, const TemporalModel& model, const SamplerConfig& cfg, EvalMode mode)
{
    return predict_with(video, model.agg, model.aggregate_probabilities, cfg, mode,
                        [&](const Tensor& clip) { return model.net.forward(clip, Mode::Eval); });
}

inline std::size_t argmax(const Tensor& t)
{
    const auto v = t.values();
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

inline double evaluate(std::span<const VideoSample> videos, const TemporalModel& model, const SamplerConfig& cfg,
                       EvalMode mode)
{
    if (videos.empty()) return 0.0;
    std::size_t hits = 0;
    for (const VideoSample& v : videos) hits += argmax(predict(v, model, cfg, mode)) == v.label ? 1 : 0;
    return static_cast<double>(hits) / static_cast<double>(videos.size());
}

/// Forward FLOPs spent on one video of `frame_count` frames in the given mode.
inline std::uint64_t eval_flops(const Network& net, std::size_t frame_count, const SamplerConfig& cfg, EvalMode mode)
{
    Shape clip = net.input_shape();
    clip[1] = cfg.frames_per_clip;
    return count_flops(net, clip) * eval_clip_indices(frame_count, cfg, mode).size();
}

// ---------------------------------------------------------------------------
// training loop

struct TrainConfig {
    std::size_t epochs = 30;
    std::size_t batch_size = 8;
    double learning_rate = 0.005;
    double momentum = 0.9;
    // Learning rate drops to 1/10 at each milestone (given as fractions of `epochs`).
    std::vector<double> lr_milestones{0.6, 0.85};
    std::uint64_t seed = 0;
    double max_grad_norm = 0.0; // see OptimState

    double lr_at(std::size_t epoch) const
    {
        double lr = learning_rate;
        for (double f : lr_milestones)
            if (epoch >= static_cast<std::size_t>(std::lround(f * static_cast<double>(epochs)))) lr *= 0.1;
        return lr;
    }
};

struct EpochRecord {
    std::size_t epoch = 0;
    double loss = 0.0;
    double train_accuracy = 0.0; // running accuracy of the train-mode forward passes
    double learning_rate = 0.0;
    double test_accuracy = -1.0; // set when an evaluation split is supplied
};

/// One shuffled pass over `videos` in batches. Sampling and dropout draw from `rng`.
inline EpochRecord train_epoch(std::span<const VideoSample> videos, TemporalModel& model, const SamplerConfig& cfg,
                               std::size_t batch_size, OptimState& optim, Rng& rng, const StepHooks& hooks = {})
{
    std::vector<const VideoSample*> order;
    for (const VideoSample& v : videos) order.push_back(&v);
    std::shuffle(order.begin(), order.end(), rng);
    EpochRecord rec;
    rec.learning_rate = optim.learning_rate;
    std::size_t correct = 0;
    double loss = 0.0;
    for (std::size_t b = 0; b < order.size(); b += batch_size) {
        const std::size_t e = std::min(order.size(), b + batch_size);
        std::span<const VideoSample* const> batch(order.data() + b, e - b);
        const StepResult r = consensus_train_step(batch, model, cfg, optim, rng, hooks);
        loss += r.mean_loss * static_cast<double>(batch.size());
        correct += r.correct;
    }
    if (!order.empty()) {
        rec.loss = loss / static_cast<double>(order.size());
        rec.train_accuracy = static_cast<double>(correct) / static_cast<double>(order.size());
    }
    return rec;
}

inline OptimState make_optim(TemporalModel& model, double lr, double momentum, double max_grad_norm)
{
    OptimState o(model.parameters(), lr, momentum);
    o.max_grad_norm = max_grad_norm;
    return o;
}

using EpochCallback = std::function<void(const EpochRecord&)>;

/// Full training run with the step learning-rate schedule. `eval_set` (optional) is scored in
/// s-clips mode after every epoch.
inline std::vector<EpochRecord> train(TemporalModel& model, std::span<const VideoSample> videos,
                                      const SamplerConfig& cfg, const TrainConfig& tc,
                                      std::span<const VideoSample> eval_set = {}, const EpochCallback& on_epoch = {},
                                      const StepHooks& hooks = {})
{
    Rng rng(tc.seed);
    OptimState optim = make_optim(model, tc.learning_rate, tc.momentum, tc.max_grad_norm);
    std::vector<EpochRecord> log;
    for (std::size_t epoch = 0; epoch < tc.epochs; ++epoch) {
        optim.learning_rate = tc.lr_at(epoch);
        EpochRecord rec = train_epoch(videos, model, cfg, tc.batch_size, optim, rng, hooks);
        rec.epoch = epoch;
        if (!eval_set.empty()) rec.test_accuracy = evaluate(eval_set, model, cfg, EvalMode::SClips);
        if (on_epoch) on_epoch(rec);
        log.push_back(rec);
    }
    return log;
}

} // namespace tc3d
