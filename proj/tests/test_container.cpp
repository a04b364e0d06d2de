#include <gtest/gtest.h>

#include <random>

#include "tc3d/compression.hpp"
#include "tc3d/config.hpp"

using namespace tc3d;

namespace {

// A reference-shaped model, pruned and quantized so every encoding can store it.
struct Fixture {
    TemporalModel model;
    std::vector<LayerQuantization> qs;
};

Fixture make_fixture(AggregatorKind agg = AggregatorKind::Attention)
{
    RunConfig rc;
    Fixture f;
    f.model = make_temporal_model(make_reference_network(rc.network(1, 16, 16, 4), 5), agg, 3);
    round_to_storage(f.model);
    PruneConfig pc;
    pc.retrain_epochs = 0;
    prune_final(f.model, {}, rc.sampler(), pc);
    f.qs = quantize_model(f.model, QuantConfig{});
    return f;
}

ModelContainer as(const Fixture& f, Encoding e)
{
    ModelContainer c;
    c.model = f.model;
    c.sampler = RunConfig{}.sampler();
    c.sampler.seed = 1234567890123ULL;
    c.encodings = encodings_for(f.model.net, e, e == Encoding::Dense || e == Encoding::Csc ? std::vector<LayerQuantization>{} : f.qs);
    return c;
}

void reseal(std::vector<std::uint8_t>& bytes)
{
    const std::size_t body = bytes.size() - 8;
    std::uint64_t h = fnv1a64(bytes.data(), body);
    for (std::size_t i = 0; i < 8; ++i, h >>= 8) bytes[body + i] = static_cast<std::uint8_t>(h & 0xff);
}

const Encoding kAll[] = {Encoding::Dense, Encoding::Csc, Encoding::CscQuant, Encoding::CscQuantHuff};

} // namespace

TEST(Container, WriteReadWriteIsByteIdentical)
{
    const Fixture f = make_fixture();
    for (Encoding e : kAll) {
        const std::vector<std::uint8_t> a = write_container(as(f, e));
        const ModelContainer back = read_container(a);
        EXPECT_EQ(write_container(back), a) << encoding_name(e);
    }
}

TEST(Container, DecodedWeightsAndHeaderMatch)
{
    const Fixture f = make_fixture();
    for (Encoding e : kAll) {
        const ModelContainer c = as(f, e);
        const ModelContainer back = read_container(write_container(c));
        EXPECT_EQ(back.sampler, c.sampler);
        EXPECT_EQ(back.model.agg.kind(), c.model.agg.kind());
        EXPECT_EQ(back.model.net.input_shape(), c.model.net.input_shape());
        ASSERT_EQ(back.model.net.layers().size(), c.model.net.layers().size());
        for (std::size_t l = 0; l < c.model.net.layers().size(); ++l)
            for (const auto& [name, t] : c.model.net.layers()[l].params)
                EXPECT_EQ(back.model.net.layers()[l].params.at(name), t) << encoding_name(e) << " layer " << l;
        auto pa = back.model.agg.parameters();
        auto pb = const_cast<ModelContainer&>(c).model.agg.parameters();
        ASSERT_EQ(pa.size(), pb.size());
        for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(*pa[i], *pb[i]);
        if (e != Encoding::Dense) {
            EXPECT_EQ(back.sparse.size(), 5u);
        }
    }
}

TEST(Container, SizesShrinkAlongTheEncodings)
{
    const Fixture f = make_fixture();
    std::size_t prev = SIZE_MAX;
    for (Encoding e : kAll) {
        const std::size_t n = write_container(as(f, e)).size();
        EXPECT_LT(n, prev) << encoding_name(e);
        prev = n;
    }
}

TEST(Container, SingleByteFlipsAllRejected)
{
    const Fixture f = make_fixture();
    std::mt19937_64 gen(17);
    for (Encoding e : kAll) {
        const std::vector<std::uint8_t> good = write_container(as(f, e));
        for (int i = 0; i < 250; ++i) {
            std::vector<std::uint8_t> bad = good;
            const std::size_t pos = gen() % bad.size();
            bad[pos] ^= static_cast<std::uint8_t>(1 + gen() % 255);
            EXPECT_THROW(read_container(bad), ContainerError) << encoding_name(e) << " byte " << pos;
        }
    }
}

TEST(Container, ResealedCorruptionFailsCleanly)
{
    // with the checksum fixed up, a damaged body must still either parse or raise ContainerError
    const Fixture f = make_fixture();
    std::mt19937_64 gen(23);
    for (Encoding e : kAll) {
        const std::vector<std::uint8_t> good = write_container(as(f, e));
        for (int i = 0; i < 250; ++i) {
            std::vector<std::uint8_t> bad = good;
            bad[gen() % (bad.size() - 8)] ^= static_cast<std::uint8_t>(1 + gen() % 255);
            reseal(bad);
            try {
                read_container(bad);
            } catch (const ContainerError&) {
            } catch (const std::exception& ex) {
                ADD_FAILURE() << encoding_name(e) << ": " << ex.what();
            }
        }
    }
}

TEST(Container, StructuralErrors)
{
    const Fixture f = make_fixture();
    const std::vector<std::uint8_t> good = write_container(as(f, Encoding::Csc));
    EXPECT_THROW(read_container(std::vector<std::uint8_t>(good.begin(), good.begin() + 10)), ContainerError);
    EXPECT_THROW(read_container(std::vector<std::uint8_t>{}), ContainerError);

    std::vector<std::uint8_t> magic = good;
    magic[0] = 'X';
    reseal(magic);
    EXPECT_THROW(read_container(magic), ContainerError);

    std::vector<std::uint8_t> version = good;
    version[4] = 9;
    reseal(version);
    EXPECT_THROW(read_container(version), ContainerError);

    std::vector<std::uint8_t> trailing = good;
    trailing.insert(trailing.end() - 8, 0);
    reseal(trailing);
    EXPECT_THROW(read_container(trailing), ContainerError);
}

TEST(Container, WriterRejectsBadEncodings)
{
    const Fixture f = make_fixture();
    ModelContainer c = as(f, Encoding::CscQuant);
    c.encodings.pop_back();
    EXPECT_THROW(write_container(c), ContainerError);

    ModelContainer raw = as(f, Encoding::CscQuant);
    for (auto& e : raw.encodings) e.codebook.clear();
    EXPECT_THROW(write_container(raw), ContainerError);

    // a weight that is not a codebook entry
    ModelContainer off = as(f, Encoding::CscQuant);
    Tensor& w = off.model.net.layers()[0].params.at("weight");
    for (double& v : w.values())
        if (v != 0.0) {
            v += 0.125;
            break;
        }
    EXPECT_THROW(write_container(off), ContainerError);
}

TEST(Container, EveryAggregatorRoundtrips)
{
    for (AggregatorKind k : {AggregatorKind::Average, AggregatorKind::Max, AggregatorKind::Weighted, AggregatorKind::Attention}) {
        const Fixture f = make_fixture(k);
        const std::vector<std::uint8_t> a = write_container(as(f, Encoding::CscQuantHuff));
        EXPECT_EQ(write_container(read_container(a)), a);
    }
}

TEST(Container, SparseRunnerMatchesDenseWithZeros)
{
    const Fixture f = make_fixture(AggregatorKind::Average);
    RunConfig rc;
    rc.train_per_class = 0;
    rc.test_per_class = 3;
    const SyntheticSplit data = generate_synthetic(rc.synthetic());
    const ModelContainer dense = read_container(write_container(as(f, Encoding::Dense)));
    const ModelContainer sparse = read_container(write_container(as(f, Encoding::CscQuantHuff)));
    const SparseRunner runner(sparse);
    for (const VideoSample& v : data.test.videos) {
        const Tensor a = predict(v, dense.model, rc.sampler(), EvalMode::AllClips);
        const Tensor b = runner.predict(v, EvalMode::AllClips);
        for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
        EXPECT_EQ(argmax(a), argmax(b));
    }
}
