#include <gtest/gtest.h>

#include <bit>
#include <cstring>
#include <random>

#include "tc3d/csc.hpp"

using namespace tc3d;

namespace {

Tensor random_sparse(std::size_t rows, std::size_t cols, double sparsity, std::mt19937_64& gen)
{
    std::uniform_real_distribution<double> u(0.0, 1.0);
    std::normal_distribution<double> n(0.0, 1.0);
    Tensor m({rows, cols});
    for (double& v : m.values())
        if (u(gen) >= sparsity) {
            do v = n(gen);
            while (v == 0.0);
        }
    return m;
}

double& el(Tensor& m, std::size_t r, std::size_t c) { return m[r * m.dim(1) + c]; }
double el(const Tensor& m, std::size_t r, std::size_t c) { return m[r * m.dim(1) + c]; }

bool bit_identical(const Tensor& a, const Tensor& b)
{
    if (a.shape() != b.shape()) return false;
    return std::memcmp(a.values().data(), b.values().data(), a.size() * sizeof(double)) == 0;
}

// Reference packer: index field, 32-bit value and 32-bit column pointers laid end to end.
BitWriter pack(const CscLayer& l)
{
    BitWriter w;
    for (std::size_t e = 0; e < l.entry_count(); ++e) {
        w.put(l.row_deltas[e], l.index_bits);
        w.put(std::bit_cast<std::uint32_t>(static_cast<float>(l.values[e])), 32);
    }
    for (std::uint32_t p : l.col_ptr) w.put(p, 32);
    return w;
}

} // namespace

TEST(CscEncode, StorageCountForThreeNonzeros)
{
    Tensor m({4, 4});
    el(m, 0, 1) = 1.5;
    el(m, 2, 1) = -2.0;
    el(m, 3, 3) = 0.25;
    const CscLayer l = csc_encode(m, 8);
    EXPECT_EQ(l.entry_count(), 3u);
    EXPECT_EQ(l.storage_numbers(), 11u);
    EXPECT_EQ(l.col_ptr, (std::vector<std::uint32_t>{0, 0, 2, 2, 3}));
    EXPECT_EQ(l.row_deltas, (std::vector<std::uint32_t>{0, 2, 3}));
}

TEST(CscEncode, FillerBridgesGapAtFourBits)
{
    Tensor m({24, 1});
    el(m, 0, 0) = 0.7;
    el(m, 20, 0) = -0.3;
    const CscLayer l = csc_encode(m, 4);
    // logical deltas {0, 16, 4}: the filler advances by the full bound and stores 0
    EXPECT_EQ(l.values, (std::vector<double>{0.7, 0.0, -0.3}));
    EXPECT_EQ(l.row_deltas, (std::vector<std::uint32_t>{0, 0, 4}));
    EXPECT_EQ(l.filler_count(), 1u);
    EXPECT_EQ(l.nonzero_count(), 2u);

    const Tensor back = csc_decode(l);
    EXPECT_TRUE(bit_identical(back, m));
    EXPECT_EQ(el(back, 16, 0), 0.0);
}

TEST(CscEncode, FillerRuleAtTheBound)
{
    // a gap of 15 fits in 4 bits, 16 does not
    Tensor a({40, 1});
    el(a, 0, 0) = 1;
    el(a, 15, 0) = 2;
    EXPECT_EQ(csc_encode(a, 4).filler_count(), 0u);
    Tensor b({40, 1});
    el(b, 0, 0) = 1;
    el(b, 16, 0) = 2;
    const CscLayer lb = csc_encode(b, 4);
    EXPECT_EQ(lb.filler_count(), 1u);
    EXPECT_EQ(lb.row_deltas, (std::vector<std::uint32_t>{0, 0, 0}));
    EXPECT_TRUE(bit_identical(csc_decode(lb), b)); // zero delta right after a filler is a real row
    // a first entry at row 16 also needs a filler, since the first delta counts from row 0
    Tensor c({40, 1});
    el(c, 16, 0) = 3;
    EXPECT_EQ(csc_encode(c, 4).filler_count(), 1u);
    // one filler per full 2^bits of gap
    Tensor d({40, 1});
    el(d, 39, 0) = 4;
    const CscLayer ld = csc_encode(d, 4);
    EXPECT_EQ(ld.filler_count(), 2u);
    EXPECT_EQ(ld.row_deltas.back(), 7u);
    EXPECT_TRUE(bit_identical(csc_decode(ld), d));
}

TEST(CscEncode, EveryStoredDeltaFitsTheWidth)
{
    std::mt19937_64 gen(11);
    for (unsigned bits : {5u, 8u}) {
        const Tensor m = random_sparse(700, 9, 0.97, gen);
        const CscLayer l = csc_encode(m, bits);
        for (std::uint32_t d : l.row_deltas) EXPECT_LT(d, 1u << bits);
        for (std::size_t e = 0; e < l.entry_count(); ++e)
            if (l.values[e] == 0.0) {
                EXPECT_EQ(l.row_deltas[e], 0u);
            }
    }
}

TEST(CscRoundtrip, ThousandRandomMatricesBothWidths)
{
    std::mt19937_64 gen(2024);
    std::uniform_int_distribution<std::size_t> dim(1, 80);
    std::uniform_real_distribution<double> sp(0.5, 0.95);
    std::size_t with_fillers = 0;
    for (int i = 0; i < 1000; ++i) {
        const unsigned bits = i % 2 ? 8u : 5u;
        const std::size_t rows = i % 7 == 0 ? 300 + dim(gen) * 4 : dim(gen);
        const Tensor m = random_sparse(rows, dim(gen), i % 10 == 0 ? 0.995 : sp(gen), gen);
        const CscLayer l = csc_encode(m, bits);
        with_fillers += l.filler_count() > 0;
        ASSERT_TRUE(bit_identical(csc_decode(l), m)) << "case " << i;
    }
    EXPECT_GT(with_fillers, 50u);
}

TEST(CscRoundtrip, PathologicalShapes)
{
    for (unsigned bits : {5u, 8u}) {
        Tensor zero({50, 6});
        const CscLayer lz = csc_encode(zero, bits);
        EXPECT_EQ(lz.entry_count(), 0u);
        EXPECT_TRUE(bit_identical(csc_decode(lz), zero));

        // entries only in the last row: maximal gap from the top of every column
        Tensor last({1000, 3});
        for (std::size_t c = 0; c < 3; ++c) el(last, 999, c) = 1.0 + static_cast<double>(c);
        const CscLayer ll = csc_encode(last, bits);
        EXPECT_EQ(ll.filler_count(), 3 * (999 >> bits));
        EXPECT_TRUE(bit_identical(csc_decode(ll), last));

        Tensor dense({33, 2});
        dense.fill(-1.25);
        EXPECT_TRUE(bit_identical(csc_decode(csc_encode(dense, bits)), dense));
    }
}

TEST(CscRoundtrip, ConvWeightMatrixLayout)
{
    std::mt19937_64 gen(9);
    Tensor w({4, 2, 3, 3, 3});
    std::normal_distribution<double> n;
    for (double& v : w.values()) v = n(gen);
    const Tensor m = weight_to_matrix(w);
    EXPECT_EQ(m.shape(), (Shape{54, 4}));
    EXPECT_EQ(el(m, 5, 2), w[2 * 54 + 5]);
    EXPECT_TRUE(bit_identical(matrix_to_weight(m, w.shape()), w));
    const Tensor fc = random_sparse(5, 7, 0.3, gen);
    EXPECT_TRUE(bit_identical(weight_to_matrix(fc), fc));
}

TEST(CscPackedSize, MatchesWriterBitCount)
{
    std::mt19937_64 gen(5);
    for (int i = 0; i < 50; ++i) {
        const unsigned bits = i % 2 ? 8u : 5u;
        const CscLayer l = csc_encode(random_sparse(200, 12, 0.9, gen), bits);
        const BitWriter w = pack(l);
        ASSERT_EQ(w.bit_count(), l.packed_bits());
        ASSERT_EQ(w.bytes().size(), (l.packed_bits() + 7) / 8);
        ASSERT_EQ(l.packed_bits(), l.entry_count() * (bits + 32) + (l.cols + 1) * 32);
    }
}

TEST(CscMatvec, MatchesDenseProduct)
{
    std::mt19937_64 gen(77);
    std::normal_distribution<double> n;
    for (int i = 0; i < 100; ++i) {
        const Tensor m = random_sparse(40 + i, 30, 0.9, gen);
        Tensor x({30});
        for (double& v : x.values()) v = n(gen);
        const Tensor y = csc_matvec(csc_encode(m, i % 2 ? 8 : 5), x);
        for (std::size_t r = 0; r < m.dim(0); ++r) {
            double ref = 0.0;
            for (std::size_t c = 0; c < 30; ++c) ref += el(m, r, c) * x[c];
            ASSERT_NEAR(y[r], ref, 1e-12);
        }
    }
}

TEST(CscMatvec, AllZeroLayerGivesZeroVector)
{
    Tensor x({4});
    x.fill(3.0);
    const Tensor y = csc_matvec(csc_encode(Tensor({70, 4}), 5), x);
    for (double v : y.values()) EXPECT_EQ(v, 0.0);
    EXPECT_THROW(csc_matvec(csc_encode(Tensor({70, 4}), 5), Tensor({5})), ShapeError);
}

TEST(CscDecode, CorruptStreamsRejected)
{
    Tensor m({40, 2});
    el(m, 3, 0) = 1;
    el(m, 30, 0) = 2;
    el(m, 7, 1) = 3;
    const CscLayer good = csc_encode(m, 4);

    CscLayer overflow = good;
    overflow.row_deltas[0] = 16;
    EXPECT_THROW(csc_decode(overflow), CscError);

    CscLayer count = good;
    count.values.push_back(1.0);
    EXPECT_THROW(csc_decode(count), CscError);

    CscLayer ptr = good;
    ptr.col_ptr[1] = 9;
    EXPECT_THROW(csc_decode(ptr), CscError);

    CscLayer range = good;
    range.row_deltas.back() = 15;
    range.row_deltas[range.col_ptr[1]] = 15;
    range.rows = 10;
    EXPECT_THROW(csc_decode(range), CscError);

    CscLayer repeat = good;
    repeat.row_deltas[repeat.col_ptr[1]] = 0;
    repeat.row_deltas.insert(repeat.row_deltas.begin() + repeat.col_ptr[1] + 1, 0);
    repeat.values.insert(repeat.values.begin() + repeat.col_ptr[1] + 1, 5.0);
    ++repeat.col_ptr[2];
    EXPECT_THROW(csc_decode(repeat), CscError); // two entries on one row

    CscLayer filler = good;
    filler.row_deltas[1] = 2; // the filler between rows 3 and 30
    ASSERT_EQ(filler.values[1], 0.0);
    EXPECT_THROW(csc_decode(filler), CscError);

    EXPECT_THROW(csc_encode(Tensor({2, 2, 2}), 4), ShapeError);
    EXPECT_THROW(csc_encode(m, 0), std::invalid_argument);
}
