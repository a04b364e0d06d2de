#pragma once

#include <charconv>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <utility>
#include <vector>

#include "tc3d/compression.hpp"
#include "tc3d/consensus.hpp"
#include "tc3d/dataset.hpp"

namespace tc3d {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Every knob a CLI run can turn. Defaults are the desk recipe: the paper's sampler, sparsity and
/// codebook values, with a larger learning rate, gradient clipping and lighter dropout so the
/// small network trains from scratch in 30 epochs on the synthetic data, and fine-tuning rates
/// large enough for the compression stages to recover within a few epochs.
struct RunConfig {
    std::uint64_t seed = 1;

    // synthetic data
    std::size_t classes = 4;
    std::size_t train_per_class = 16;
    std::size_t test_per_class = 16;
    std::size_t frames = 60;
    std::size_t height = 16;
    std::size_t width = 16;
    std::uint64_t data_seed = 7;

    // sampling and fusion
    std::size_t parts = 3;
    std::size_t frames_per_clip = 8;
    std::size_t offset = 2;
    SamplingStrategy strategy = SamplingStrategy::Consecutive;
    AggregatorKind aggregator = AggregatorKind::Average;
    bool aggregate_probabilities = false;

    // network and training
    double dropout = 0.5;
    bool residual = false;
    std::size_t epochs = 30;
    std::size_t batch_size = 8;
    double learning_rate = 0.05;
    double momentum = 0.9;
    std::vector<double> lr_milestones{0.6, 0.85};
    double max_grad_norm = 1.0; // gradient clipping keeps lr 0.05 stable without normalization layers

    // compression
    double dsd_conv = 0.85;
    double dsd_fc = 0.90;
    double dsd_increment = 0.1;
    std::size_t dsd_sparse_epochs = 9;
    std::size_t dsd_dense_epochs = 9;
    double dsd_learning_rate = 0.02;
    double prune_conv = 0.90;
    double prune_fc = 0.95;
    std::size_t prune_retrain_epochs = 9;
    double prune_learning_rate = 0.005;
    unsigned conv_bits = 8;
    unsigned fc_bits = 5;
    std::size_t quant_epochs = 3;
    double quant_learning_rate = 0.005;
    bool stage_sparsify = true;
    bool stage_finetune = true;
    bool stage_prune = true;
    bool stage_quantize = true;
    bool stage_huffman = true;

    // evaluation and benchmarking
    EvalMode eval_mode = EvalMode::SClips;
    std::size_t bench_repetitions = 10;

    template <typename Self, typename F>
    static void visit(Self& c, F&& f)
    {
        f("seed", c.seed);
        f("classes", c.classes);
        f("train_per_class", c.train_per_class);
        f("test_per_class", c.test_per_class);
        f("frames", c.frames);
        f("height", c.height);
        f("width", c.width);
        f("data_seed", c.data_seed);
        f("parts", c.parts);
        f("frames_per_clip", c.frames_per_clip);
        f("offset", c.offset);
        f("strategy", c.strategy);
        f("aggregator", c.aggregator);
        f("aggregate_probabilities", c.aggregate_probabilities);
        f("dropout", c.dropout);
        f("residual", c.residual);
        f("epochs", c.epochs);
        f("batch_size", c.batch_size);
        f("learning_rate", c.learning_rate);
        f("momentum", c.momentum);
        f("lr_milestones", c.lr_milestones);
        f("max_grad_norm", c.max_grad_norm);
        f("dsd_conv", c.dsd_conv);
        f("dsd_fc", c.dsd_fc);
        f("dsd_increment", c.dsd_increment);
        f("dsd_sparse_epochs", c.dsd_sparse_epochs);
        f("dsd_dense_epochs", c.dsd_dense_epochs);
        f("dsd_learning_rate", c.dsd_learning_rate);
        f("prune_conv", c.prune_conv);
        f("prune_fc", c.prune_fc);
        f("prune_retrain_epochs", c.prune_retrain_epochs);
        f("prune_learning_rate", c.prune_learning_rate);
        f("conv_bits", c.conv_bits);
        f("fc_bits", c.fc_bits);
        f("quant_epochs", c.quant_epochs);
        f("quant_learning_rate", c.quant_learning_rate);
        f("stage_sparsify", c.stage_sparsify);
        f("stage_finetune", c.stage_finetune);
        f("stage_prune", c.stage_prune);
        f("stage_quantize", c.stage_quantize);
        f("stage_huffman", c.stage_huffman);
        f("eval_mode", c.eval_mode);
        f("bench_repetitions", c.bench_repetitions);
    }

    void set(const std::string& key, const std::string& value);
    std::vector<std::pair<std::string, std::string>> echo() const;
    void validate() const;

    SyntheticConfig synthetic() const
    {
        SyntheticConfig s;
        s.class_count = classes;
        s.train_per_class = train_per_class;
        s.test_per_class = test_per_class;
        s.frames = frames;
        s.height = height;
        s.width = width;
        s.seed = data_seed;
        return s;
    }

    SamplerConfig sampler() const
    {
        SamplerConfig s;
        s.parts = parts;
        s.frames_per_clip = frames_per_clip;
        s.offset = offset;
        s.strategy = strategy;
        s.seed = seed;
        return s;
    }

    ReferenceNetOptions network(std::size_t channels, std::size_t h, std::size_t w, std::size_t class_count) const
    {
        ReferenceNetOptions o;
        o.channels = channels;
        o.frames = frames_per_clip;
        o.height = h;
        o.width = w;
        o.class_count = class_count;
        o.dropout = dropout;
        o.residual = residual;
        return o;
    }

    TrainConfig training() const
    {
        TrainConfig t;
        t.epochs = epochs;
        t.batch_size = batch_size;
        t.learning_rate = learning_rate;
        t.momentum = momentum;
        t.lr_milestones = lr_milestones;
        t.seed = seed;
        t.max_grad_norm = max_grad_norm;
        return t;
    }

    PipelineConfig pipeline() const
    {
        PipelineConfig p;
        p.sparsify = stage_sparsify;
        p.finetune = stage_finetune;
        p.prune = stage_prune;
        p.quantize = stage_quantize;
        p.huffman = stage_huffman;
        const PhaseTraining pt{batch_size, momentum, seed, max_grad_norm};
        p.dsd.schedule.target = {dsd_conv, dsd_fc};
        p.dsd.schedule.increment = dsd_increment;
        p.dsd.sparse_epochs = dsd_sparse_epochs;
        p.dsd.dense_epochs = dsd_dense_epochs;
        p.dsd.learning_rate = dsd_learning_rate;
        p.dsd.training = pt;
        p.prune_cfg.targets = {prune_conv, prune_fc};
        p.prune_cfg.retrain_epochs = prune_retrain_epochs;
        p.prune_cfg.learning_rate = prune_learning_rate;
        p.prune_cfg.training = pt;
        p.quant.conv_bits = conv_bits;
        p.quant.fc_bits = fc_bits;
        p.quant.seed = seed;
        p.quant.finetune_epochs = quant_epochs;
        p.quant.learning_rate = quant_learning_rate;
        p.quant.training = pt;
        return p;
    }
};

namespace detail {

inline std::string trim(const std::string& s)
{
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v)
{
    T out{};
    const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
    if (ec != std::errc{} || p != v.data() + v.size())
        throw ConfigError("config key '" + key + "': cannot parse '" + v + "'");
    return out;
}

inline std::string format_double(double v)
{
    char buf[64];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v); // shortest round-trip form
    return std::string(buf, p);
}

inline void from_text(const std::string& k, const std::string& v, std::uint64_t& out) { out = parse_number<std::uint64_t>(k, v); }
inline void from_text(const std::string& k, const std::string& v, unsigned& out) { out = parse_number<unsigned>(k, v); }
inline void from_text(const std::string& k, const std::string& v, double& out) { out = parse_number<double>(k, v); }
inline void from_text(const std::string& k, const std::string& v, bool& out)
{
    if (v == "true" || v == "1" || v == "on") out = true;
    else if (v == "false" || v == "0" || v == "off") out = false;
    else throw ConfigError("config key '" + k + "': expected a boolean, got '" + v + "'");
}
inline void from_text(const std::string& k, const std::string& v, SamplingStrategy& out)
{
    if (v == "consecutive") out = SamplingStrategy::Consecutive;
    else if (v == "uniform-spread" || v == "uniform") out = SamplingStrategy::UniformSpread;
    else throw ConfigError("config key '" + k + "': unknown strategy '" + v + "'");
}
inline void from_text(const std::string& k, const std::string& v, AggregatorKind& out)
{
    try {
        out = parse_aggregator(v);
    } catch (const std::invalid_argument& e) {
        throw ConfigError("config key '" + k + "': " + e.what());
    }
}
inline void from_text(const std::string& k, const std::string& v, EvalMode& out)
{
    if (v == "s-clips") out = EvalMode::SClips;
    else if (v == "all-clips") out = EvalMode::AllClips;
    else throw ConfigError("config key '" + k + "': unknown eval mode '" + v + "'");
}
inline void from_text(const std::string& k, const std::string& v, std::vector<double>& out)
{
    out.clear();
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(parse_number<double>(k, item));
    }
}
// std::size_t is the same type as std::uint64_t on LP64 and needs no overload of its own
template <typename T>
    requires(std::is_same_v<T, std::size_t> && !std::is_same_v<std::size_t, std::uint64_t>)
void from_text(const std::string& k, const std::string& v, T& out)
{
    out = parse_number<std::size_t>(k, v);
}

inline std::string to_text(std::uint64_t v) { return std::to_string(v); }
inline std::string to_text(unsigned v) { return std::to_string(v); }
inline std::string to_text(double v) { return format_double(v); }
inline std::string to_text(bool v) { return v ? "true" : "false"; }
inline std::string to_text(SamplingStrategy v) { return strategy_name(v); }
inline std::string to_text(AggregatorKind v) { return aggregator_name(v); }
inline std::string to_text(EvalMode v) { return eval_mode_name(v); }
inline std::string to_text(const std::vector<double>& v)
{
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) s += (i ? "," : "") + format_double(v[i]);
    return s;
}

} // namespace detail

inline void RunConfig::set(const std::string& key, const std::string& value)
{
    bool found = false;
    visit(*this, [&](const char* k, auto& field) {
        if (key != k) return;
        detail::from_text(key, value, field);
        found = true;
    });
    if (!found) throw ConfigError("unknown config key '" + key + "'");
}

inline std::vector<std::pair<std::string, std::string>> RunConfig::echo() const
{
    std::vector<std::pair<std::string, std::string>> out;
    visit(*this, [&](const char* k, const auto& field) { out.emplace_back(k, detail::to_text(field)); });
    return out;
}

inline void RunConfig::validate() const
{
    sampler().validate();
    if (classes < 2 || classes > 4) throw ConfigError("classes must be 2..4");
    if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("dropout must lie in [0,1)");
    if (batch_size == 0) throw ConfigError("batch_size must be positive");
    if (!(learning_rate >= 0.0)) throw ConfigError("learning_rate must be non-negative");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("momentum must lie in [0,1)");
    if (!(max_grad_norm >= 0.0)) throw ConfigError("max_grad_norm must be non-negative (0 disables clipping)");
    for (double t : {dsd_conv, dsd_fc, prune_conv, prune_fc})
        if (!(t >= 0.0 && t <= 1.0)) throw ConfigError("sparsity targets must lie in [0,1]");
    if (conv_bits < 1 || conv_bits > 16 || fc_bits < 1 || fc_bits > 16) throw ConfigError("codebook bits must be 1..16");
    if (bench_repetitions < 1) throw ConfigError("bench_repetitions must be positive");
}

/// Applies a line-based `key = value` file; blank lines and `#` comments are skipped.
inline void apply_config_text(RunConfig& c, const std::string& text)
{
    std::stringstream ss(text);
    std::string line;
    std::size_t n = 0;
    while (std::getline(ss, line)) {
        ++n;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(n) + ": expected key = value");
        c.set(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
}

inline void apply_config_file(RunConfig& c, const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open config file " + path);
    std::stringstream ss;
    ss << in.rdbuf();
    apply_config_text(c, ss.str());
}

inline std::string config_text(const RunConfig& c)
{
    std::string s;
    for (const auto& [k, v] : c.echo()) s += k + " = " + v + "\n";
    return s;
}

} // namespace tc3d
