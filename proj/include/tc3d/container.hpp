#pragma once

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <map>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "tc3d/binary_io.hpp"
#include "tc3d/bitstream.hpp"
#include "tc3d/consensus.hpp"
#include "tc3d/csc.hpp"
#include "tc3d/huffman.hpp"

namespace tc3d {

// Model container layout (all integers little-endian):
//
//   "TC3D" | u16 version | u32 class_count | u8 rank, u32 dims... (clip input shape)
//   sampler:    u32 parts | u32 frames_per_clip | u32 offset | u8 strategy | u64 seed
//   aggregator: u8 kind | u8 aggregate_probabilities | u32 clip_count | u32 n | f32 x n
//   u32 layer_count, then one section per layer:
//       u8 layer kind | u8 encoding | u32 payload bytes | payload
//   u64 FNV-1a of every preceding byte
//
// Conv and fc payloads hold their hyper-parameters, the fp32 bias and the weight body in the
// section's encoding. CSC bodies store the weight matrix (see weight_to_matrix) column by column.

inline constexpr std::uint16_t kContainerVersion = 1;

class ContainerError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

enum class Encoding : std::uint8_t { Dense = 0, Csc = 1, CscQuant = 2, CscQuantHuff = 3 };

inline const char* encoding_name(Encoding e)
{
    switch (e) {
    case Encoding::Dense: return "DENSE";
    case Encoding::Csc: return "CSC";
    case Encoding::CscQuant: return "CSC_QUANT";
    case Encoding::CscQuantHuff: return "CSC_QUANT_HUFF";
    }
    return "?";
}

/// How one layer's weight is stored. Quantized encodings need a codebook whose entry 0 is 0.0
/// (the filler value); every nonzero weight must equal some codebook entry exactly.
struct WeightEncoding {
    Encoding kind = Encoding::Dense;
    unsigned index_bits = 0; // 0: default for the layer kind
    unsigned value_bits = 0; // bits per codebook index
    std::vector<double> codebook;
    friend bool operator==(const WeightEncoding&, const WeightEncoding&) = default;
};

struct ModelContainer {
    TemporalModel model;
    SamplerConfig sampler;
    std::vector<WeightEncoding> encodings; // per network layer; ignored for parameter-free layers
    std::map<std::size_t, CscLayer> sparse; // filled on read: CSC form of each sparse-encoded weight

    /// Same encoding for every conv/fc layer.
    void encode_all(Encoding e)
    {
        encodings.assign(model.net.layers().size(), WeightEncoding{});
        for (auto& w : encodings) w.kind = e;
    }
};

/// Bit counts of the sparse entry streams, for comparing fixed-width packing with Huffman coding.
struct StreamStats {
    std::uint64_t entries = 0;
    std::uint64_t fixed_bits = 0;   // entries * (index_bits + value_bits)
    std::uint64_t huffman_bits = 0; // Huffman-coded delta and assignment streams
    std::uint64_t table_bytes = 0;  // serialized Huffman tables
};

// Upper bound on the elements of any one tensor a container may declare; guards the reader
// against allocating from corrupted dimensions.
inline constexpr std::uint64_t kMaxTensorElements = std::uint64_t{1} << 26;

namespace detail {

inline void check_volume(std::initializer_list<std::uint64_t> dims, const char* what)
{
    std::uint64_t v = 1;
    for (std::uint64_t d : dims) {
        if (d == 0) throw ContainerError(std::string(what) + " has a zero dimension");
        if (d > kMaxTensorElements || v * d > kMaxTensorElements)
            throw ContainerError(std::string(what) + " is implausibly large");
        v *= d;
    }
}

inline bool has_weight(LayerKind k) { return k == LayerKind::Conv3d || k == LayerKind::FullyConnected; }

inline void put_f32(ByteWriter& w, double v)
{
    if (!std::isfinite(v)) throw ContainerError("non-finite parameter cannot be stored");
    w.f32(static_cast<float>(v));
}

inline void write_table(ByteWriter& w, const HuffmanTable& t)
{
    // code length for every symbol below the alphabet bound; 0 marks an unused symbol
    const std::uint32_t bound = t.lengths().empty() ? 0 : t.lengths().rbegin()->first + 1;
    w.u32(bound);
    for (std::uint32_t s = 0; s < bound; ++s) {
        const auto it = t.lengths().find(s);
        w.u8(static_cast<std::uint8_t>(it == t.lengths().end() ? 0 : it->second));
    }
}

inline HuffmanTable read_table(ByteReader& r)
{
    const std::uint32_t bound = r.u32();
    if (bound > (1u << 16)) throw ContainerError("Huffman alphabet too large");
    std::map<std::uint32_t, unsigned> lengths;
    for (std::uint32_t s = 0; s < bound; ++s)
        if (const unsigned len = r.u8()) lengths[s] = len;
    try {
        return HuffmanTable::from_lengths(std::move(lengths));
    } catch (const HuffmanError& e) {
        throw ContainerError(std::string("bad Huffman table: ") + e.what());
    }
}

inline void write_bits(ByteWriter& w, const EncodedBits& b)
{
    w.u32(static_cast<std::uint32_t>(b.bit_count));
    w.bytes(b.bytes);
}

inline EncodedBits read_bits(ByteReader& r)
{
    EncodedBits b;
    b.bit_count = r.u32();
    b.bytes = r.bytes((b.bit_count + 7) / 8);
    return b;
}

inline void write_weight(ByteWriter& w, const Layer& layer, const WeightEncoding& enc, StreamStats& stats)
{
    const Tensor& weight = layer.weight();
    if (enc.kind == Encoding::Dense) {
        for (double v : weight.values()) put_f32(w, v);
        return;
    }
    const unsigned ib = enc.index_bits ? enc.index_bits : default_index_bits(layer.kind);
    const CscLayer csc = csc_encode(weight_to_matrix(weight), ib);
    w.u8(static_cast<std::uint8_t>(ib));
    w.u32(static_cast<std::uint32_t>(csc.rows));
    w.u32(static_cast<std::uint32_t>(csc.cols));
    w.u32(static_cast<std::uint32_t>(csc.entry_count()));
    for (std::uint32_t p : csc.col_ptr) w.u32(p);

    if (enc.kind == Encoding::Csc) {
        w.bytes(pack_fixed(csc.row_deltas, ib));
        for (double v : csc.values) put_f32(w, v);
        return;
    }

    const unsigned vb = enc.value_bits;
    if (vb < 1 || vb > 16) throw ContainerError("value_bits must lie in [1,16]");
    if (enc.codebook.empty() || enc.codebook.size() > (std::size_t{1} << vb) || enc.codebook[0] != 0.0)
        throw ContainerError("codebook must start with 0.0 and fit in value_bits");
    std::map<double, std::uint32_t> lookup;
    for (std::size_t j = enc.codebook.size(); j-- > 0;) lookup[enc.codebook[j]] = static_cast<std::uint32_t>(j);
    std::vector<std::uint32_t> assign;
    assign.reserve(csc.entry_count());
    for (double v : csc.values) {
        const auto it = lookup.find(v);
        if (it == lookup.end()) throw ContainerError("weight " + std::to_string(v) + " is not a codebook entry");
        assign.push_back(it->second);
    }
    w.u16(static_cast<std::uint16_t>(enc.codebook.size()));
    w.u8(static_cast<std::uint8_t>(vb));
    for (double c : enc.codebook) put_f32(w, c);

    stats.entries += csc.entry_count();
    stats.fixed_bits += csc.entry_count() * (ib + vb);
    if (enc.kind == Encoding::CscQuant) {
        w.bytes(pack_fixed(csc.row_deltas, ib));
        w.bytes(pack_fixed(assign, vb));
        return;
    }
    const std::vector<std::uint32_t>* streams[] = {&csc.row_deltas, &assign};
    for (const auto* stream : streams) {
        if (stream->empty()) {
            w.u32(0);
            continue;
        }
        const HuffmanTable t = huffman_build(histogram_of(*stream));
        const std::size_t t0 = w.size();
        write_table(w, t);
        stats.table_bytes += w.size() - t0;
        const EncodedBits bits = huffman_encode(*stream, t);
        stats.huffman_bits += bits.bit_count;
        write_bits(w, bits);
    }
}

inline void read_weight(ByteReader& r, Layer& layer, std::size_t index, Encoding kind, ModelContainer& out)
{
    Tensor& weight = layer.params.at("weight");
    if (kind == Encoding::Dense) {
        for (double& v : weight.values()) v = r.f32();
        return;
    }
    CscLayer csc;
    csc.index_bits = r.u8();
    if (csc.index_bits < 1 || csc.index_bits > 16) throw ContainerError("index_bits out of range");
    csc.rows = r.u32();
    csc.cols = r.u32();
    const Tensor expect = weight_to_matrix(weight);
    if (csc.rows != expect.dim(0) || csc.cols != expect.dim(1)) throw ContainerError("CSC matrix shape mismatch");
    csc.original_shape = {csc.rows, csc.cols};
    const std::size_t entries = r.u32();
    if (entries > r.remaining()) throw ContainerError("CSC entry count exceeds section");
    csc.col_ptr.resize(csc.cols + 1);
    for (auto& p : csc.col_ptr) p = r.u32();

    WeightEncoding enc;
    enc.kind = kind;
    enc.index_bits = csc.index_bits;
    if (kind == Encoding::Csc) {
        csc.row_deltas = unpack_fixed(r.bytes((entries * csc.index_bits + 7) / 8), csc.index_bits, entries);
        csc.values.resize(entries);
        for (double& v : csc.values) v = r.f32();
    } else {
        const std::size_t k = r.u16();
        enc.value_bits = r.u8();
        if (enc.value_bits < 1 || enc.value_bits > 16 || k == 0 || k > (std::size_t{1} << enc.value_bits))
            throw ContainerError("bad codebook header");
        enc.codebook.resize(k);
        for (double& c : enc.codebook) c = r.f32();
        if (enc.codebook[0] != 0.0) throw ContainerError("codebook entry 0 must be 0.0");
        std::vector<std::uint32_t> assign;
        if (kind == Encoding::CscQuant) {
            csc.row_deltas = unpack_fixed(r.bytes((entries * csc.index_bits + 7) / 8), csc.index_bits, entries);
            assign = unpack_fixed(r.bytes((entries * enc.value_bits + 7) / 8), enc.value_bits, entries);
        } else {
            std::vector<std::uint32_t>* streams[] = {&csc.row_deltas, &assign};
            for (auto* s : streams) {
                if (entries == 0) {
                    if (r.u32() != 0) throw ContainerError("empty stream with a Huffman table");
                    continue;
                }
                const HuffmanTable t = read_table(r);
                try {
                    *s = huffman_decode(read_bits(r), t, entries);
                } catch (const HuffmanError& e) {
                    throw ContainerError(e.what());
                }
            }
        }
        csc.values.resize(entries);
        for (std::size_t e = 0; e < entries; ++e) {
            if (assign[e] >= k) throw ContainerError("codebook index out of range");
            csc.values[e] = enc.codebook[assign[e]];
        }
    }
    try {
        weight = matrix_to_weight(csc_decode(csc), weight.shape());
    } catch (const CscError& e) {
        throw ContainerError(e.what());
    }
    out.encodings[index] = std::move(enc);
    out.sparse[index] = std::move(csc);
}

} // namespace detail

inline std::vector<std::uint8_t> write_container(const ModelContainer& c, StreamStats* stats = nullptr)
{
    const Network& net = c.model.net;
    const auto& layers = net.layers();
    if (!c.encodings.empty() && c.encodings.size() != layers.size())
        throw ContainerError("one encoding per layer expected");
    StreamStats st;
    ByteWriter w;
    w.bytes(std::vector<std::uint8_t>{'T', 'C', '3', 'D'});
    w.u16(kContainerVersion);
    w.u32(static_cast<std::uint32_t>(net.class_count()));
    w.u8(static_cast<std::uint8_t>(net.input_shape().size()));
    for (std::size_t d : net.input_shape()) w.u32(static_cast<std::uint32_t>(d));

    w.u32(static_cast<std::uint32_t>(c.sampler.parts));
    w.u32(static_cast<std::uint32_t>(c.sampler.frames_per_clip));
    w.u32(static_cast<std::uint32_t>(c.sampler.offset));
    w.u8(static_cast<std::uint8_t>(c.sampler.strategy));
    w.u64(c.sampler.seed);

    const Aggregator& agg = c.model.agg;
    w.u8(static_cast<std::uint8_t>(agg.kind()));
    w.u8(c.model.aggregate_probabilities ? 1 : 0);
    w.u32(static_cast<std::uint32_t>(agg.clip_count()));
    const auto agg_params = agg.parameters();
    w.u32(agg_params.empty() ? 0 : static_cast<std::uint32_t>(agg_params[0]->size()));
    for (const Tensor* t : agg_params)
        for (double v : t->values()) detail::put_f32(w, v);

    w.u32(static_cast<std::uint32_t>(layers.size()));
    for (std::size_t i = 0; i < layers.size(); ++i) {
        const Layer& l = layers[i];
        const WeightEncoding enc = c.encodings.empty() ? WeightEncoding{} : c.encodings[i];
        ByteWriter p;
        switch (l.kind) {
        case LayerKind::Conv3d: {
            const Tensor& wt = l.weight();
            p.u32(static_cast<std::uint32_t>(wt.dim(0)));
            p.u32(static_cast<std::uint32_t>(wt.dim(1)));
            for (const Extent3* e : {&l.conv.kernel, &l.conv.stride, &l.conv.padding})
                for (std::size_t v : *e) p.u32(static_cast<std::uint32_t>(v));
            break;
        }
        case LayerKind::FullyConnected:
            p.u32(static_cast<std::uint32_t>(l.weight().dim(0)));
            p.u32(static_cast<std::uint32_t>(l.weight().dim(1)));
            break;
        case LayerKind::Dropout: p.f64(l.dropout_ratio); break;
        case LayerKind::ResidualAdd: p.u32(static_cast<std::uint32_t>(l.skip_from)); break;
        default: break;
        }
        const bool weighted = detail::has_weight(l.kind);
        if (weighted) {
            for (double v : l.bias().values()) detail::put_f32(p, v);
            detail::write_weight(p, l, enc, st);
        }
        w.u8(static_cast<std::uint8_t>(l.kind));
        w.u8(static_cast<std::uint8_t>(weighted ? enc.kind : Encoding::Dense));
        w.u32(static_cast<std::uint32_t>(p.size()));
        w.bytes(p.take());
    }
    w.u64(fnv1a64(w.buffer().data(), w.size()));
    if (stats) *stats = st;
    return w.take();
}

inline ModelContainer read_container(std::span<const std::uint8_t> bytes)
{
    if (bytes.size() < 4 + 2 + 8) throw ContainerError("container too short");
    const std::size_t body = bytes.size() - 8;
    std::uint64_t stored = 0;
    for (int i = 7; i >= 0; --i) stored = (stored << 8) | bytes[body + static_cast<std::size_t>(i)];
    if (fnv1a64(bytes.data(), body) != stored) throw ContainerError("container checksum mismatch");

    try {
        ByteReader r(bytes.subspan(0, body));
        if (r.str(4) != "TC3D") throw ContainerError("not a TC3D container (bad magic)");
        if (const auto v = r.u16(); v != kContainerVersion)
            throw ContainerError("unsupported container version " + std::to_string(v));
        const std::size_t classes = r.u32();
        Shape input(r.u8());
        if (input.size() != 4) throw ContainerError("input shape must have rank 4");
        for (auto& d : input) d = r.u32();
        detail::check_volume({input[0], input[1], input[2], input[3]}, "input shape");
        detail::check_volume({classes}, "class count");

        ModelContainer c;
        c.sampler.parts = r.u32();
        c.sampler.frames_per_clip = r.u32();
        c.sampler.offset = r.u32();
        const std::uint8_t strat = r.u8();
        if (strat > 1) throw ContainerError("unknown sampling strategy");
        c.sampler.strategy = static_cast<SamplingStrategy>(strat);
        c.sampler.seed = r.u64();

        const std::uint8_t agg_kind = r.u8();
        if (agg_kind > 3) throw ContainerError("unknown aggregator");
        const bool agg_probs = r.u8() != 0;
        const std::size_t clips = r.u32();
        const std::size_t agg_n = r.u32();
        detail::check_volume({clips, classes}, "aggregator");

        Network net(input, classes);
        Aggregator agg(static_cast<AggregatorKind>(agg_kind), clips, classes);
        auto agg_params = agg.parameters();
        if (agg_n != (agg_params.empty() ? 0 : agg_params[0]->size())) throw ContainerError("aggregator size mismatch");
        for (Tensor* t : agg_params)
            for (double& v : t->values()) v = r.f32();

        const std::size_t layer_count = r.u32();
        c.encodings.assign(layer_count, WeightEncoding{});
        std::vector<std::pair<std::size_t, Encoding>> pending;
        std::vector<std::vector<std::uint8_t>> bodies;
        for (std::size_t i = 0; i < layer_count; ++i) {
            const std::uint8_t kind = r.u8();
            const std::uint8_t enc = r.u8();
            if (kind > static_cast<std::uint8_t>(LayerKind::ResidualAdd)) throw ContainerError("unknown layer kind");
            if (enc > 3) throw ContainerError("unknown encoding");
            const std::size_t len = r.u32();
            const std::vector<std::uint8_t> payload = r.bytes(len);
            ByteReader p(payload);
            Layer l;
            switch (static_cast<LayerKind>(kind)) {
            case LayerKind::Conv3d: {
                const std::size_t out = p.u32(), in = p.u32();
                Extent3 e[3];
                for (auto& x : e)
                    for (auto& v : x) v = p.u32();
                detail::check_volume({out, in, e[0][0], e[0][1], e[0][2]}, "conv3d weight");
                l = Layer::conv3d(out, in, e[0], e[1], e[2]);
                break;
            }
            case LayerKind::FullyConnected: {
                const std::size_t out = p.u32(), in = p.u32();
                detail::check_volume({out, in}, "fully-connected weight");
                l = Layer::fully_connected(out, in);
                break;
            }
            case LayerKind::Relu: l = Layer::relu(); break;
            case LayerKind::GlobalAvgPool: l = Layer::global_avg_pool(); break;
            case LayerKind::Dropout: l = Layer::dropout(p.f64()); break;
            case LayerKind::ResidualAdd: l = Layer::residual_add(p.u32()); break;
            }
            if (detail::has_weight(l.kind)) {
                for (double& v : l.params.at("bias").values()) v = p.f32();
                detail::read_weight(p, l, i, static_cast<Encoding>(enc), c);
            } else if (enc != 0) {
                throw ContainerError("parameter-free layer with a weight encoding");
            }
            if (p.remaining() != 0) throw ContainerError("layer section has trailing bytes");
            net.add(std::move(l));
        }
        if (r.remaining() != 0) throw ContainerError("trailing bytes before checksum");
        net.validate();
        c.model.net = std::move(net);
        c.model.agg = std::move(agg);
        c.model.aggregate_probabilities = agg_probs;
        return c;
    } catch (const FormatError& e) {
        throw ContainerError(std::string("malformed container: ") + e.what());
    } catch (const ShapeError& e) {
        throw ContainerError(std::string("inconsistent container: ") + e.what());
    } catch (const std::invalid_argument& e) {
        throw ContainerError(std::string("invalid container field: ") + e.what());
    }
}

/// Rounds every parameter to the fp32 value the container stores.
inline void round_to_storage(TemporalModel& m)
{
    for (Tensor* t : m.parameters())
        for (double& v : t->values()) v = static_cast<double>(static_cast<float>(v));
}

/// Inference over a decoded container. Fully-connected layers stored sparsely run their
/// matrix-vector product straight from the CSC streams.
class SparseRunner {
public:
    explicit SparseRunner(const ModelContainer& c) : c_(c) {}

    Tensor forward(const Tensor& clip) const
    {
        const auto& layers = c_.model.net.layers();
        std::vector<Tensor> acts{clip};
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const Layer& l = layers[i];
            const auto sp = c_.sparse.find(i);
            if (l.kind == LayerKind::FullyConnected && sp != c_.sparse.end()) {
                Tensor y = csc_matvec(sp->second, acts.back().reshaped({acts.back().size()}));
                y += l.bias();
                acts.push_back(std::move(y));
            } else if (l.kind == LayerKind::ResidualAdd) {
                Tensor y = acts.back();
                y += acts.at(l.skip_from);
                acts.push_back(std::move(y));
            } else {
                const Tensor& x = acts.back();
                switch (l.kind) {
                case LayerKind::Conv3d: acts.push_back(conv3d_forward(x, l)); break;
                case LayerKind::FullyConnected: acts.push_back(fc_forward(x, l)); break;
                case LayerKind::Relu: acts.push_back(relu_forward(x)); break;
                case LayerKind::GlobalAvgPool: acts.push_back(global_avg_pool_forward(x)); break;
                default: acts.push_back(x); break; // dropout is the identity at inference
                }
            }
        }
        return acts.back();
    }

    Tensor predict(const VideoSample& v, EvalMode mode) const
    {
        return predict_with(v, c_.model.agg, c_.model.aggregate_probabilities, c_.sampler, mode,
                            [this](const Tensor& clip) { return forward(clip); });
    }

private:
    const ModelContainer& c_;
};

} // namespace tc3d
