#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <numeric>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tc3d/consensus.hpp"
#include "tc3d/container.hpp"
#include "tc3d/kmeans.hpp"

namespace tc3d {

/// r = n*b / (n*log2(k) + k*b): dense bits over codebook-index bits plus codebook bits.
inline double compression_rate(double n, double b, double k)
{
    if (!(n > 0 && b > 0 && k > 0)) throw std::invalid_argument("compression_rate needs positive n, b, k");
    return n * b / (n * std::log2(k) + k * b);
}

// ---------------------------------------------------------------------------
// sparsity

struct SparsityTargets {
    double conv = 0.85;
    double fc = 0.90;
    double for_kind(LayerKind k) const { return k == LayerKind::Conv3d ? conv : fc; }
    double peak() const { return std::max(conv, fc); }
};

enum class SparsityPhase : std::uint8_t { Sparsifying, Densifying, Pruning };

/// Sparsity ramp. Sparsifying climbs from 0 by `increment` per step until every kind sits at its
/// target; densifying walks back down to 0; pruning holds the targets.
struct SparsitySchedule {
    SparsityTargets target;
    double increment = 0.1;
    SparsityPhase phase = SparsityPhase::Sparsifying;
    std::size_t steps = 0;

    void validate() const
    {
        for (double t : {target.conv, target.fc})
            if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("sparsity target must lie in [0,1]");
        if (!(increment > 0.0)) throw std::invalid_argument("sparsity increment must be positive");
    }

    double current() const
    {
        const double ramp = static_cast<double>(steps) * increment;
        switch (phase) {
        case SparsityPhase::Sparsifying: return std::min(ramp, target.peak());
        case SparsityPhase::Densifying: return std::max(0.0, target.peak() - ramp);
        case SparsityPhase::Pruning: return target.peak();
        }
        return 0.0;
    }

    double level(LayerKind k) const { return std::min(current(), target.for_kind(k)); }

    /// Steps needed to reach the highest target from 0 (and back).
    std::size_t ramp_steps() const
    {
        return static_cast<std::size_t>(std::ceil(target.peak() / increment - 1e-9));
    }

    bool ramp_done() const { return steps >= ramp_steps(); }
    void advance() { ++steps; }
    void start(SparsityPhase p)
    {
        phase = p;
        steps = 0;
    }
};

/// Pruning mask for one conv/fc weight. `magnitude` remembers |w| at the moment a weight was
/// pruned so that re-densifying revives the historically largest weights first.
struct WeightMask {
    std::size_t layer = 0;
    std::size_t param_index = 0; // position in TemporalModel::parameters()
    LayerKind kind = LayerKind::Conv3d;
    std::vector<std::uint8_t> pruned;
    std::vector<double> magnitude;

    std::size_t pruned_count() const { return static_cast<std::size_t>(std::count(pruned.begin(), pruned.end(), 1)); }
};

using MaskSet = std::vector<WeightMask>;

inline MaskSet make_masks(const TemporalModel& m)
{
    MaskSet out;
    const auto info = m.net.parameter_info();
    for (std::size_t p = 0; p < info.size(); ++p) {
        if (info[p].name != "weight") continue;
        const std::size_t n = m.net.layers()[info[p].layer].weight().size();
        out.push_back({info[p].layer, p, info[p].kind, std::vector<std::uint8_t>(n, 0), std::vector<double>(n, 0.0)});
    }
    return out;
}

/// Number of weights zeroed at sparsity s.
inline std::size_t zero_count(double s, std::size_t n)
{
    return std::min(n, static_cast<std::size_t>(std::floor(s * static_cast<double>(n) + 1e-9)));
}

/// Zeroes the `level` fraction of smallest-magnitude weights in every conv/fc layer and records
/// them in the masks. Already-masked weights rank first, so the mask only grows while the level
/// rises; when it falls the masked weights with the largest remembered magnitude are released
/// (at value zero).
inline void apply_sparsity(TemporalModel& m, const SparsitySchedule& sched, MaskSet& masks)
{
    for (WeightMask& mask : masks) {
        Tensor& w = m.net.layers()[mask.layer].params.at("weight");
        const std::size_t n = w.size();
        std::size_t z = zero_count(sched.level(mask.kind), n);
        if (sched.phase == SparsityPhase::Densifying) z = std::min(z, mask.pruned_count());
        std::vector<std::size_t> order(n);
        std::iota(order.begin(), order.end(), 0);
        auto key = [&](std::size_t i) {
            return std::make_tuple(mask.pruned[i] ? 0 : 1, mask.pruned[i] ? mask.magnitude[i] : std::abs(w[i]), i);
        };
        std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return key(a) < key(b); });
        for (std::size_t r = 0; r < n; ++r) {
            const std::size_t i = order[r];
            if (r < z) {
                if (!mask.pruned[i]) mask.magnitude[i] = std::abs(w[i]);
                mask.pruned[i] = 1;
                w[i] = 0.0;
            } else {
                mask.pruned[i] = 0;
            }
        }
    }
}

/// Training hooks that keep masked weights at zero: their gradients are dropped before the step
/// and their values re-zeroed after it (momentum may still carry velocity).
inline StepHooks mask_hooks(const MaskSet& masks)
{
    StepHooks h;
    h.on_gradients = [&masks](std::vector<Tensor>& grads) {
        for (const WeightMask& m : masks)
            for (std::size_t i = 0; i < m.pruned.size(); ++i)
                if (m.pruned[i]) grads[m.param_index][i] = 0.0;
    };
    h.after_step = [&masks](TemporalModel& model) {
        auto params = model.parameters();
        for (const WeightMask& m : masks)
            for (std::size_t i = 0; i < m.pruned.size(); ++i)
                if (m.pruned[i]) (*params[m.param_index])[i] = 0.0;
    };
    return h;
}

struct PhaseTraining {
    std::size_t batch_size = 8;
    double momentum = 0.9;
    std::uint64_t seed = 0;
    double max_grad_norm = 0.0;

    OptimState optim(TemporalModel& m, double lr) const { return make_optim(m, lr, momentum, max_grad_norm); }
};

struct DsdConfig {
    SparsitySchedule schedule;     // sparse-phase targets, conv 0.85 / fc 0.90
    std::size_t sparse_epochs = 9; // ramp to target in 0.1 steps, then hold
    std::size_t dense_epochs = 9;  // ramp back to 0
    double learning_rate = 0.005;  // sparse phase; the dense phase trains at 1/10 of it
    PhaseTraining training;
};

struct DsdEpoch {
    SparsityPhase phase;
    double conv_sparsity;
    double fc_sparsity;
    EpochRecord record;
};

/// Mutable state carried from the sparse phase into the dense phase.
struct DsdState {
    MaskSet masks;
    SparsitySchedule schedule;
    Rng rng;
};

inline DsdState dsd_begin(const TemporalModel& m, const DsdConfig& dc)
{
    dc.schedule.validate();
    return {make_masks(m), dc.schedule, Rng(dc.training.seed)};
}

/// Runs `epochs` epochs of one DSD phase. Sparsifying ramps the masks up at lr; densifying
/// releases pruned weights (at zero) and trains at lr/10.
inline std::vector<DsdEpoch> dsd_phase(TemporalModel& m, std::span<const VideoSample> videos, const SamplerConfig& cfg,
                                       const DsdConfig& dc, SparsityPhase phase, std::size_t epochs, DsdState& st,
                                       const std::function<void(const DsdEpoch&)>& on_epoch = {})
{
    std::vector<DsdEpoch> log;
    st.schedule.start(phase);
    const double lr = phase == SparsityPhase::Densifying ? dc.learning_rate / 10.0 : dc.learning_rate;
    const StepHooks hooks = mask_hooks(st.masks);
    for (std::size_t e = 0; e < epochs; ++e) {
        st.schedule.advance();
        apply_sparsity(m, st.schedule, st.masks);
        OptimState optim = dc.training.optim(m, lr);
        DsdEpoch rec{phase, st.schedule.level(LayerKind::Conv3d), st.schedule.level(LayerKind::FullyConnected), {}};
        rec.record = train_epoch(videos, m, cfg, dc.training.batch_size, optim, st.rng, hooks);
        rec.record.epoch = e;
        rec.record.learning_rate = lr;
        log.push_back(rec);
        if (on_epoch) on_epoch(rec);
    }
    if (phase == SparsityPhase::Densifying)
        for (WeightMask& mk : st.masks) std::fill(mk.pruned.begin(), mk.pruned.end(), 0);
    return log;
}

/// Dense-sparse-dense training: sparsify (ramping), then densify, reviving pruned weights at zero
/// and training at a tenth of the learning rate. The model ends dense.
inline std::vector<DsdEpoch> dsd_train(TemporalModel& m, std::span<const VideoSample> videos, const SamplerConfig& cfg,
                                       const DsdConfig& dc, const std::function<void(const DsdEpoch&)>& on_epoch = {})
{
    DsdState st = dsd_begin(m, dc);
    auto log = dsd_phase(m, videos, cfg, dc, SparsityPhase::Sparsifying, dc.sparse_epochs, st, on_epoch);
    auto dense = dsd_phase(m, videos, cfg, dc, SparsityPhase::Densifying, dc.dense_epochs, st, on_epoch);
    log.insert(log.end(), dense.begin(), dense.end());
    return log;
}

// ---------------------------------------------------------------------------
// pruning

struct PruneConfig {
    SparsityTargets targets{0.90, 0.95};
    std::size_t retrain_epochs = 3; // masked fine-tuning after the cut
    double learning_rate = 0.0005;
    PhaseTraining training;
};

/// Magnitude-prunes every conv/fc weight to the final sparsities (from scratch, no ramp) and
/// fine-tunes the survivors. Returns the masks.
inline MaskSet prune_final(TemporalModel& m, std::span<const VideoSample> videos, const SamplerConfig& cfg,
                           const PruneConfig& pc)
{
    SparsitySchedule sched;
    sched.target = pc.targets;
    sched.start(SparsityPhase::Pruning);
    sched.validate();
    MaskSet masks = make_masks(m);
    apply_sparsity(m, sched, masks);
    if (pc.retrain_epochs > 0 && !videos.empty()) {
        Rng rng(pc.training.seed);
        const StepHooks hooks = mask_hooks(masks);
        OptimState optim = pc.training.optim(m, pc.learning_rate);
        for (std::size_t e = 0; e < pc.retrain_epochs; ++e)
            train_epoch(videos, m, cfg, pc.training.batch_size, optim, rng, hooks);
    }
    return masks;
}

// ---------------------------------------------------------------------------
// weight sharing

/// Codebook of one layer. Entry 0 is reserved for the value 0.0 (pruned weights and CSC
/// fillers); the learned centroids occupy entries 1..2^bits-1.
struct LayerQuantization {
    std::size_t layer = 0;
    std::size_t param_index = 0;
    unsigned value_bits = 8;
    std::vector<double> codebook;
    std::vector<std::size_t> positions;     // flat weight indices of the surviving weights
    std::vector<std::uint32_t> assignments; // codebook entry per surviving weight (never 0)
    std::size_t requested_clusters = 0;
};

struct QuantConfig {
    unsigned conv_bits = 8;
    unsigned fc_bits = 5;
    std::uint64_t seed = 0;
    std::size_t finetune_epochs = 3;
    double learning_rate = 0.0005;
    PhaseTraining training;
};

inline double to_storage(double v) { return static_cast<double>(static_cast<float>(v)); }

inline void write_back(TemporalModel& m, const LayerQuantization& q)
{
    Tensor& w = m.net.layers()[q.layer].params.at("weight");
    for (std::size_t i = 0; i < q.positions.size(); ++i) w[q.positions[i]] = q.codebook[q.assignments[i]];
}

/// Clusters each conv/fc layer's nonzero weights with k-means (codebooks are per layer) and
/// replaces every weight by its centroid. Centroids are kept at storage precision.
inline std::vector<LayerQuantization> quantize_model(TemporalModel& m, const QuantConfig& qc)
{
    std::vector<LayerQuantization> out;
    for (const WeightMask& mask : make_masks(m)) {
        LayerQuantization q;
        q.layer = mask.layer;
        q.param_index = mask.param_index;
        q.value_bits = mask.kind == LayerKind::Conv3d ? qc.conv_bits : qc.fc_bits;
        if (q.value_bits < 1 || q.value_bits > 16) throw std::invalid_argument("codebook bits must lie in [1,16]");
        const Tensor& w = m.net.layers()[q.layer].weight();
        std::vector<double> vals;
        for (std::size_t i = 0; i < w.size(); ++i)
            if (w[i] != 0.0) {
                q.positions.push_back(i);
                vals.push_back(w[i]);
            }
        q.requested_clusters = (std::size_t{1} << q.value_bits) - 1;
        const Codebook cb = kmeans_quantize(vals, q.requested_clusters, qc.seed + q.layer);
        q.codebook.push_back(0.0);
        for (double c : cb.centroids) q.codebook.push_back(to_storage(c));
        for (std::uint32_t a : cb.assignments) q.assignments.push_back(a + 1);
        write_back(m, q);
        out.push_back(std::move(q));
    }
    return out;
}

/// Shared-weight gradient step: each centroid moves by lr times the summed gradient of the
/// weights assigned to it. `grad` is the gradient of the layer's full weight tensor.
inline void update_centroids(LayerQuantization& q, const Tensor& grad, double lr)
{
    std::vector<double> sum(q.codebook.size(), 0.0);
    for (std::size_t i = 0; i < q.positions.size(); ++i) sum[q.assignments[i]] += grad[q.positions[i]];
    for (std::size_t j = 1; j < q.codebook.size(); ++j) q.codebook[j] = to_storage(q.codebook[j] - lr * sum[j]);
}

/// Fine-tunes the codebooks with assignments held fixed; every other parameter stays frozen.
inline void quantized_finetune(TemporalModel& m, std::vector<LayerQuantization>& qs,
                               std::span<const VideoSample> videos, const SamplerConfig& cfg, const QuantConfig& qc)
{
    if (videos.empty()) return;
    Rng rng(qc.training.seed);
    for (std::size_t e = 0; e < qc.finetune_epochs; ++e) {
        std::vector<const VideoSample*> order;
        for (const VideoSample& v : videos) order.push_back(&v);
        std::shuffle(order.begin(), order.end(), rng);
        for (std::size_t b = 0; b < order.size(); b += qc.training.batch_size) {
            const std::size_t end = std::min(order.size(), b + qc.training.batch_size);
            const BatchGradient bg = batch_gradient(std::span(order.data() + b, end - b), m, cfg, rng);
            for (LayerQuantization& q : qs) {
                update_centroids(q, bg.grads[q.param_index], qc.learning_rate);
                write_back(m, q);
            }
        }
    }
}

// ---------------------------------------------------------------------------
// pipeline

struct PipelineConfig {
    bool sparsify = true;
    bool finetune = true;
    bool prune = true;
    bool quantize = true;
    bool huffman = true;
    DsdConfig dsd;
    PruneConfig prune_cfg;
    QuantConfig quant;
};

struct StageRow {
    std::string stage;
    double accuracy = 0.0; // s-clips test accuracy after the stage (with its fine-tuning)
    std::size_t bytes = 0; // serialized container size after the stage
    bool performed = true;
};

struct CompressedModel {
    ModelContainer container;
    std::vector<StageRow> report; // baseline + five stages
    StreamStats streams;          // entry-stream sizes of the final encoding
    std::size_t surviving_weights = 0;
    std::size_t total_weights = 0;
};

inline std::vector<WeightEncoding> encodings_for(const Network& net, Encoding kind,
                                                 const std::vector<LayerQuantization>& qs)
{
    std::vector<WeightEncoding> enc(net.layers().size());
    for (std::size_t i = 0; i < enc.size(); ++i) enc[i].kind = kind;
    for (const LayerQuantization& q : qs) {
        enc[q.layer].value_bits = q.value_bits;
        enc[q.layer].codebook = q.codebook;
    }
    return enc;
}

/// sparsification -> fine-tuning (dense phase) -> pruning -> quantization -> Huffman coding, with
/// a (stage, accuracy, bytes) row after each step. `eval` only scores; it never steers training.
inline CompressedModel compress_pipeline(TemporalModel model, const SamplerConfig& cfg,
                                         std::span<const VideoSample> train_set, std::span<const VideoSample> eval,
                                         const PipelineConfig& pc)
{
    round_to_storage(model);
    CompressedModel out;
    out.container.sampler = cfg;
    auto score = [&](const TemporalModel& m) { return evaluate(eval, m, cfg, EvalMode::SClips); };
    auto size_as = [&](const TemporalModel& m, Encoding e, const std::vector<LayerQuantization>& qs, StreamStats* st) {
        ModelContainer c;
        c.model = m;
        c.sampler = cfg;
        c.encodings = encodings_for(m.net, e, qs);
        return write_container(c, st).size();
    };
    auto row = [&](const std::string& name, bool performed, const TemporalModel& m, std::size_t bytes) {
        out.report.push_back({name, score(m), bytes, performed});
    };

    row("baseline", true, model, size_as(model, Encoding::Dense, {}, nullptr));

    DsdState dsd = dsd_begin(model, pc.dsd);
    if (pc.sparsify) {
        dsd_phase(model, train_set, cfg, pc.dsd, SparsityPhase::Sparsifying, pc.dsd.sparse_epochs, dsd);
        round_to_storage(model);
    }
    row("sparsification", pc.sparsify, model, size_as(model, Encoding::Dense, {}, nullptr));
    if (pc.finetune) {
        dsd_phase(model, train_set, cfg, pc.dsd, SparsityPhase::Densifying, pc.dsd.dense_epochs, dsd);
        round_to_storage(model);
    }
    row("fine-tuning", pc.finetune, model, size_as(model, Encoding::Dense, {}, nullptr));

    Encoding enc = Encoding::Dense;
    if (pc.prune) {
        const MaskSet masks = prune_final(model, train_set, cfg, pc.prune_cfg);
        round_to_storage(model);
        for (const WeightMask& m : masks) out.surviving_weights += m.pruned.size() - m.pruned_count();
        enc = Encoding::Csc;
    }
    row("pruning", pc.prune, model, size_as(model, enc, {}, nullptr));

    std::vector<LayerQuantization> qs;
    if (pc.quantize) {
        qs = quantize_model(model, pc.quant);
        quantized_finetune(model, qs, train_set, cfg, pc.quant);
        enc = Encoding::CscQuant;
    }
    row("quantization", pc.quantize, model, size_as(model, enc, qs, &out.streams));

    const bool huff = pc.huffman && pc.quantize;
    if (huff) enc = Encoding::CscQuantHuff;
    row("huffman", huff, model, size_as(model, enc, qs, &out.streams));

    for (const WeightMask& m : make_masks(model)) out.total_weights += m.pruned.size();
    if (!pc.prune) out.surviving_weights = out.total_weights;
    out.container.model = std::move(model);
    out.container.encodings = encodings_for(out.container.model.net, enc, qs);
    return out;
}

} // namespace tc3d
