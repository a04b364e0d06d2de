// tc3d: generate synthetic data, train, compress, run inference and benchmark from the shell.
// Every command prints line-delimited JSON records on stdout, starting with the full config.

#include <CLI11.hpp>
#include <json.hpp>

#include <filesystem>
#include <iostream>

#include "tc3d/bench.hpp"
#include "tc3d/config.hpp"

using namespace tc3d;
using nlohmann::json;

namespace {

void emit(const json& j) { std::cout << j.dump() << std::endl; }

struct Common {
    std::string config_file;
    std::vector<std::string> sets;

    RunConfig resolve(const std::string& command) const
    {
        RunConfig rc;
        if (!config_file.empty()) apply_config_file(rc, config_file);
        for (const std::string& kv : sets) {
            const auto eq = kv.find('=');
            if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + kv + "'");
            rc.set(kv.substr(0, eq), kv.substr(eq + 1));
        }
        rc.validate();
        json cfg = json::object();
        for (const auto& [k, v] : rc.echo()) cfg[k] = v;
        emit({{"event", "config"}, {"command", command}, {"config", cfg}});
        return rc;
    }
};

std::string split_path(const std::string& dir, const std::string& split) { return dir + "/" + split + ".tc3dv"; }

Dataset load_split(const std::string& dir, const std::string& split)
{
    Dataset d = load_dataset(split_path(dir, split));
    if (d.videos.empty()) throw std::runtime_error("dataset split '" + split + "' is empty");
    return d;
}

json probabilities(const Tensor& p) { return json(std::vector<double>(p.values().begin(), p.values().end())); }

void cmd_gen_data(const RunConfig& rc, const std::string& out)
{
    std::filesystem::create_directories(out);
    const SyntheticSplit s = generate_synthetic(rc.synthetic());
    save_dataset(split_path(out, "train"), s.train);
    save_dataset(split_path(out, "test"), s.test);
    for (const auto& [name, d] : {std::pair{"train", &s.train}, std::pair{"test", &s.test}})
        emit({{"event", "dataset"},
              {"split", name},
              {"path", split_path(out, name)},
              {"videos", d->videos.size()},
              {"classes", d->class_count}});
}

void cmd_train(const RunConfig& rc, const std::string& data, const std::string& out)
{
    const Dataset train_set = load_split(data, "train");
    const Dataset test_set = load_split(data, "test");
    const Tensor& f0 = train_set.videos.front().frames.front();
    TemporalModel model = make_temporal_model(
        make_reference_network(rc.network(f0.dim(0), f0.dim(1), f0.dim(2), train_set.class_count), rc.seed),
        rc.aggregator, rc.parts);
    model.aggregate_probabilities = rc.aggregate_probabilities;
    train(model, train_set.videos, rc.sampler(), rc.training(), test_set.videos, [](const EpochRecord& r) {
        emit({{"event", "epoch"},
              {"epoch", r.epoch},
              {"loss", r.loss},
              {"train_accuracy", r.train_accuracy},
              {"test_accuracy", r.test_accuracy},
              {"learning_rate", r.learning_rate}});
    });
    ModelContainer c;
    c.model = std::move(model);
    round_to_storage(c.model);
    c.sampler = rc.sampler();
    c.encode_all(Encoding::Dense);
    const std::vector<std::uint8_t> bytes = write_container(c);
    write_file(out, bytes);
    emit({{"event", "model"},
          {"path", out},
          {"encoding", "DENSE"},
          {"bytes", bytes.size()},
          {"train_accuracy", evaluate(train_set.videos, c.model, c.sampler, EvalMode::SClips)},
          {"test_accuracy", evaluate(test_set.videos, c.model, c.sampler, EvalMode::SClips)}});
}

void cmd_compress(const RunConfig& rc, const std::string& model_path, const std::string& data, const std::string& out)
{
    const ModelContainer in = read_container(read_file(model_path));
    for (const WeightEncoding& e : in.encodings)
        if (e.kind != Encoding::Dense) throw std::runtime_error("compress expects a DENSE container");
    const Dataset train_set = load_split(data, "train");
    const Dataset test_set = load_split(data, "test");
    const CompressedModel cm = compress_pipeline(in.model, in.sampler, train_set.videos, test_set.videos, rc.pipeline());
    for (const StageRow& r : cm.report)
        emit({{"event", "stage"}, {"stage", r.stage}, {"performed", r.performed}, {"accuracy", r.accuracy}, {"bytes", r.bytes}});
    const std::vector<std::uint8_t> bytes = write_container(cm.container);
    write_file(out, bytes);
    emit({{"event", "model"},
          {"path", out},
          {"encoding", encoding_name(cm.container.encodings.empty() ? Encoding::Dense : cm.container.encodings.front().kind)},
          {"bytes", bytes.size()},
          {"dense_bytes", cm.report.front().bytes},
          {"surviving_weights", cm.surviving_weights},
          {"total_weights", cm.total_weights},
          {"stream_entries", cm.streams.entries},
          {"fixed_bits", cm.streams.fixed_bits},
          {"huffman_bits", cm.streams.huffman_bits},
          {"table_bytes", cm.streams.table_bytes}});
}

void cmd_infer(const RunConfig& rc, const std::string& model_path, const std::string& data, const std::string& split)
{
    const ModelContainer c = read_container(read_file(model_path));
    const Dataset d = load_split(data, split);
    const SparseRunner runner(c);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < d.videos.size(); ++i) {
        const Tensor p = runner.predict(d.videos[i], rc.eval_mode);
        const std::size_t k = argmax(p);
        hits += k == d.videos[i].label;
        emit({{"event", "prediction"},
              {"video", i},
              {"label", d.videos[i].label},
              {"predicted", k},
              {"probabilities", probabilities(p)}});
    }
    emit({{"event", "summary"},
          {"split", split},
          {"mode", eval_mode_name(rc.eval_mode)},
          {"videos", d.videos.size()},
          {"accuracy", static_cast<double>(hits) / static_cast<double>(d.videos.size())}});
}

void cmd_bench(const RunConfig& rc, const std::string& model_path, const std::string& data, const std::string& split)
{
    const std::vector<std::uint8_t> bytes = read_file(model_path);
    const ModelContainer c = read_container(bytes);
    const Dataset d = load_split(data, split);
    Shape clip = c.model.net.input_shape();
    clip[1] = c.sampler.frames_per_clip;
    for (const BenchRow& r : bench_container(c, bytes.size(), d.videos, rc.bench_repetitions))
        emit({{"event", "bench"},
              {"mode", eval_mode_name(r.mode)},
              {"clip_flops", count_flops(c.model.net, clip)},
              {"flops", r.flops},
              {"clips", r.clips},
              {"frames", r.frames},
              {"median_seconds", r.median_seconds},
              {"fps", r.fps},
              {"bytes", r.bytes},
              {"repetitions", r.repetitions},
              {"threads", r.threads}});
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"Temporal-encoding 3D CNN: data, training, compression, inference, benchmarks"};
    app.require_subcommand(1);
    Common common;
    auto add_common = [&](CLI::App* sub) {
        sub->add_option("--config", common.config_file, "key = value config file")->check(CLI::ExistingFile);
        sub->add_option("--set", common.sets, "override one config key (key=value), repeatable");
    };
    std::string out, data, model, split = "test";

    auto* gen = app.add_subcommand("gen-data", "write synthetic train/test splits to a directory");
    gen->add_option("--out", out, "output directory")->required();
    auto* tr = app.add_subcommand("train", "train a model and write a DENSE container");
    tr->add_option("--data", data, "dataset directory")->required();
    tr->add_option("--out", out, "container path")->required();
    auto* cp = app.add_subcommand("compress", "run the compression pipeline on a DENSE container");
    cp->add_option("--model", model, "input container")->required()->check(CLI::ExistingFile);
    cp->add_option("--data", data, "dataset directory")->required();
    cp->add_option("--out", out, "output container")->required();
    auto* inf = app.add_subcommand("infer", "per-video class probabilities");
    inf->add_option("--model", model, "container")->required()->check(CLI::ExistingFile);
    inf->add_option("--data", data, "dataset directory")->required();
    inf->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));
    auto* bn = app.add_subcommand("bench", "FLOPs, frames per second and size for both eval modes");
    bn->add_option("--model", model, "container")->required()->check(CLI::ExistingFile);
    bn->add_option("--data", data, "dataset directory")->required();
    bn->add_option("--split", split, "train or test")->check(CLI::IsMember({"train", "test"}));
    for (auto* sub : {gen, tr, cp, inf, bn}) add_common(sub);

    CLI11_PARSE(app, argc, argv);
    try {
        if (gen->parsed()) cmd_gen_data(common.resolve("gen-data"), out);
        if (tr->parsed()) cmd_train(common.resolve("train"), data, out);
        if (cp->parsed()) cmd_compress(common.resolve("compress"), model, data, out);
        if (inf->parsed()) cmd_infer(common.resolve("infer"), model, data, split);
        if (bn->parsed()) cmd_bench(common.resolve("bench"), model, data, split);
    } catch (const std::exception& e) {
        std::cerr << json{{"event", "error"}, {"message", e.what()}}.dump() << std::endl;
        return 1;
    }
    return 0;
}
