#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "tc3d/bitstream.hpp"
#include "tc3d/layers.hpp"
#include "tc3d/tensor.hpp"

namespace tc3d {

class CscError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Compressed sparse column storage with per-column relative row indices.
///
/// Each column stores its nonzeros top to bottom. An entry's delta is its row minus the row of the
/// previous entry in the same column (the first entry counts from row 0). Deltas must fit in
/// `index_bits`; a gap of 2^index_bits or more is bridged by filler entries, each carrying value
/// 0.0 and advancing the row by exactly 2^index_bits. A filler's stored delta field is 0.
struct CscLayer {
    Shape original_shape;
    std::size_t rows = 0;
    std::size_t cols = 0;
    unsigned index_bits = 8;
    std::vector<std::uint32_t> col_ptr;    // cols + 1 offsets into the entry streams
    std::vector<std::uint32_t> row_deltas; // stored delta field per entry
    std::vector<double> values;            // 0.0 marks a filler

    std::size_t entry_count() const noexcept { return values.size(); }
    std::size_t filler_count() const
    {
        std::size_t n = 0;
        for (double v : values) n += v == 0.0 ? 1 : 0;
        return n;
    }
    std::size_t nonzero_count() const { return entry_count() - filler_count(); }

    /// Numbers needed before delta packing: values, row indices and column pointers (2a + m + 1).
    std::size_t storage_numbers() const { return 2 * entry_count() + cols + 1; }

    /// Packed payload size: every entry carries an index field and a value, plus the pointer array.
    std::size_t packed_bits(unsigned value_bits = 32, unsigned ptr_bits = 32) const
    {
        return entry_count() * (index_bits + value_bits) + (cols + 1) * ptr_bits;
    }

    friend bool operator==(const CscLayer&, const CscLayer&) = default;
};

inline CscLayer csc_encode(const Tensor& matrix, unsigned index_bits)
{
    if (matrix.rank() != 2) throw ShapeError("csc_encode needs a 2-D matrix, got " + shape_str(matrix.shape()));
    if (index_bits < 1 || index_bits > 16) throw std::invalid_argument("index_bits must lie in [1,16]");
    CscLayer l;
    l.original_shape = matrix.shape();
    l.rows = matrix.dim(0);
    l.cols = matrix.dim(1);
    l.index_bits = index_bits;
    const std::size_t bound = std::size_t{1} << index_bits;
    l.col_ptr.push_back(0);
    for (std::size_t c = 0; c < l.cols; ++c) {
        std::size_t cursor = 0;
        for (std::size_t r = 0; r < l.rows; ++r) {
            const double v = matrix[r * l.cols + c];
            if (v == 0.0) continue;
            while (r - cursor >= bound) {
                cursor += bound;
                l.row_deltas.push_back(0);
                l.values.push_back(0.0);
            }
            l.row_deltas.push_back(static_cast<std::uint32_t>(r - cursor));
            l.values.push_back(v);
            cursor = r;
        }
        l.col_ptr.push_back(static_cast<std::uint32_t>(l.values.size()));
    }
    return l;
}

/// Calls fn(row, col, value) for every real (non-filler) entry; validates the streams on the way.
template <typename Fn>
void csc_for_each(const CscLayer& l, Fn&& fn)
{
    if (l.col_ptr.size() != l.cols + 1 || l.col_ptr.front() != 0 || l.col_ptr.back() != l.values.size() ||
        l.row_deltas.size() != l.values.size())
        throw CscError("csc stream counts are inconsistent");
    const std::size_t bound = std::size_t{1} << l.index_bits;
    for (std::size_t c = 0; c < l.cols; ++c) {
        if (l.col_ptr[c + 1] < l.col_ptr[c]) throw CscError("csc column pointers decrease at column " + std::to_string(c));
        std::size_t cursor = 0;
        bool after_entry = false; // a zero delta is only legal first or right after a filler
        for (std::size_t e = l.col_ptr[c]; e < l.col_ptr[c + 1]; ++e) {
            const std::uint32_t d = l.row_deltas[e];
            if (d >= bound) throw CscError("csc delta " + std::to_string(d) + " overflows " + std::to_string(l.index_bits) + " bits");
            if (l.values[e] == 0.0) {
                if (d != 0) throw CscError("csc filler entry carries a nonzero delta");
                cursor += bound;
                after_entry = false;
            } else {
                if (after_entry && d == 0) throw CscError("csc row indices do not increase in column " + std::to_string(c));
                cursor += d;
                after_entry = true;
                if (cursor >= l.rows) throw CscError("csc row index " + std::to_string(cursor) + " out of range");
                fn(cursor, c, l.values[e]);
            }
        }
    }
}

inline Tensor csc_decode(const CscLayer& l)
{
    Tensor m({l.rows, l.cols});
    csc_for_each(l, [&](std::size_t r, std::size_t c, double v) { m[r * l.cols + c] = v; });
    return m;
}

inline Tensor csc_matvec(const CscLayer& l, const Tensor& x)
{
    if (x.size() != l.cols) throw_shape_error("csc_matvec vector length", x.shape(), Shape{l.rows, l.cols});
    Tensor y({l.rows});
    csc_for_each(l, [&](std::size_t r, std::size_t c, double v) { y[r] += v * x[c]; });
    return y;
}

// ---------------------------------------------------------------------------
// weight tensors as matrices

/// Fully-connected [out, in] stays as is. Conv3d [out, in, kd, kh, kw] becomes
/// [in*kd*kh*kw, out]: one column per output filter.
inline Tensor weight_to_matrix(const Tensor& w)
{
    if (w.rank() == 2) return w;
    if (w.rank() != 5) throw ShapeError("weight_to_matrix expects rank 2 or 5, got " + shape_str(w.shape()));
    const std::size_t out = w.dim(0), patch = w.size() / out;
    Tensor m({patch, out});
    for (std::size_t o = 0; o < out; ++o)
        for (std::size_t p = 0; p < patch; ++p) m[p * out + o] = w[o * patch + p];
    return m;
}

inline Tensor matrix_to_weight(const Tensor& m, const Shape& weight_shape)
{
    if (weight_shape.size() == 2) return m.reshaped(weight_shape);
    const std::size_t out = weight_shape.at(0), patch = shape_volume(weight_shape) / out;
    if (m.rank() != 2 || m.dim(0) != patch || m.dim(1) != out) throw_shape_error("matrix_to_weight", m.shape(), weight_shape);
    Tensor w(weight_shape);
    for (std::size_t o = 0; o < out; ++o)
        for (std::size_t p = 0; p < patch; ++p) w[o * patch + p] = m[p * out + o];
    return w;
}

/// 8-bit relative indices for conv layers, 5-bit for fully-connected ones.
inline unsigned default_index_bits(LayerKind kind) { return kind == LayerKind::Conv3d ? 8 : 5; }

} // namespace tc3d
