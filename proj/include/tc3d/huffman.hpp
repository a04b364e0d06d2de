#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <queue>
#include <span>
#include <stdexcept>
#include <string>
#include <tuple>
#include <vector>

#include "tc3d/bitstream.hpp"

namespace tc3d {

class HuffmanError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

using Histogram = std::map<std::uint32_t, std::uint64_t>;

inline Histogram histogram_of(std::span<const std::uint32_t> symbols)
{
    Histogram h;
    for (std::uint32_t s : symbols) ++h[s];
    return h;
}

struct Codeword {
    std::uint64_t bits = 0; // most significant of `length` bits is sent first
    unsigned length = 0;
};

/// A prefix code stored as per-symbol code lengths; codewords are assigned canonically (shorter
/// codes first, ties by symbol value), so the lengths alone rebuild the decoder.
class HuffmanTable {
public:
    HuffmanTable() = default;

    static HuffmanTable from_lengths(std::map<std::uint32_t, unsigned> lengths)
    {
        HuffmanTable t;
        t.lengths_ = std::move(lengths);
        t.assign_canonical();
        return t;
    }

    const std::map<std::uint32_t, unsigned>& lengths() const noexcept { return lengths_; }
    std::size_t size() const noexcept { return lengths_.size(); }
    bool contains(std::uint32_t s) const { return codes_.count(s) != 0; }

    const Codeword& code(std::uint32_t s) const
    {
        const auto it = codes_.find(s);
        if (it == codes_.end()) throw HuffmanError("symbol " + std::to_string(s) + " has no codeword");
        return it->second;
    }

    std::string codeword_string(std::uint32_t s) const
    {
        const Codeword& c = code(s);
        std::string out;
        for (unsigned i = c.length; i-- > 0;) out.push_back(((c.bits >> i) & 1u) ? '1' : '0');
        return out;
    }

    double kraft_sum() const
    {
        double k = 0.0;
        for (const auto& [s, len] : lengths_) k += std::ldexp(1.0, -static_cast<int>(len));
        return k;
    }

    /// Decodes one symbol from the reader.
    std::uint32_t read_symbol(BitReader& r) const
    {
        std::uint64_t code = 0;
        for (unsigned len = 1; len <= max_length_; ++len) {
            code = (code << 1) | r.get_bit();
            const auto& [first, offset, count] = per_length_[len];
            if (code - first < count && code >= first) return sorted_[offset + (code - first)];
        }
        throw HuffmanError("invalid codeword in bit stream");
    }

    friend bool operator==(const HuffmanTable& a, const HuffmanTable& b) { return a.lengths_ == b.lengths_; }

private:
    void assign_canonical()
    {
        codes_.clear();
        sorted_.clear();
        max_length_ = 0;
        std::vector<std::pair<unsigned, std::uint32_t>> order;
        for (const auto& [s, len] : lengths_) {
            if (len == 0 || len > 63) throw HuffmanError("code length " + std::to_string(len) + " out of range");
            order.emplace_back(len, s);
            max_length_ = std::max(max_length_, len);
        }
        std::sort(order.begin(), order.end());
        per_length_.assign(max_length_ + 1, {0, 0, 0});
        std::uint64_t code = 0;
        unsigned prev_len = order.empty() ? 0 : order.front().first;
        for (std::size_t i = 0; i < order.size(); ++i) {
            const auto [len, s] = order[i];
            code <<= (len - prev_len);
            prev_len = len;
            if (len < 64 && (code >> len) != 0) throw HuffmanError("code lengths violate the Kraft inequality");
            auto& [first, offset, count] = per_length_[len];
            if (count == 0) {
                first = code;
                offset = i;
            }
            ++count;
            codes_[s] = {code, len};
            sorted_.push_back(s);
            ++code;
        }
    }

    std::map<std::uint32_t, unsigned> lengths_;
    std::map<std::uint32_t, Codeword> codes_;
    std::vector<std::uint32_t> sorted_;
    std::vector<std::tuple<std::uint64_t, std::size_t, std::uint64_t>> per_length_; // first code, offset, count
    unsigned max_length_ = 0;
};

/// Huffman code lengths by repeatedly merging the two least probable groups. Ties are broken by
/// (count, smallest symbol in the group). A one-symbol alphabet gets a 1-bit code.
inline HuffmanTable huffman_build(const Histogram& histogram)
{
    struct Node {
        std::uint64_t count;
        std::uint32_t min_symbol;
        int left = -1, right = -1;
        std::uint32_t symbol = 0;
    };
    std::vector<Node> nodes;
    for (const auto& [s, c] : histogram)
        if (c > 0) nodes.push_back({c, s, -1, -1, s});
    if (nodes.empty()) throw HuffmanError("cannot build a Huffman code from an empty histogram");
    if (nodes.size() == 1) return HuffmanTable::from_lengths({{nodes[0].symbol, 1u}});

    auto key = [&](int i) { return std::make_pair(nodes[i].count, nodes[i].min_symbol); };
    auto greater = [&](int a, int b) { return key(a) > key(b); };
    std::priority_queue<int, std::vector<int>, decltype(greater)> open(greater);
    for (int i = 0; i < static_cast<int>(nodes.size()); ++i) open.push(i);
    while (open.size() > 1) {
        const int top = open.top(); // branch 0
        open.pop();
        const int bottom = open.top(); // branch 1
        open.pop();
        nodes.push_back({nodes[top].count + nodes[bottom].count, std::min(nodes[top].min_symbol, nodes[bottom].min_symbol),
                         top, bottom, 0});
        open.push(static_cast<int>(nodes.size()) - 1);
    }

    std::map<std::uint32_t, unsigned> lengths;
    std::vector<std::pair<int, unsigned>> stack{{open.top(), 0u}};
    while (!stack.empty()) {
        const auto [i, depth] = stack.back();
        stack.pop_back();
        if (nodes[i].left < 0) {
            lengths[nodes[i].symbol] = depth;
        } else {
            stack.push_back({nodes[i].left, depth + 1});
            stack.push_back({nodes[i].right, depth + 1});
        }
    }
    return HuffmanTable::from_lengths(std::move(lengths));
}

struct EncodedBits {
    std::vector<std::uint8_t> bytes;
    std::size_t bit_count = 0;
    friend bool operator==(const EncodedBits&, const EncodedBits&) = default;
};

inline EncodedBits huffman_encode(std::span<const std::uint32_t> symbols, const HuffmanTable& table)
{
    BitWriter w;
    for (std::uint32_t s : symbols) {
        if (!table.contains(s)) throw HuffmanError("symbol " + std::to_string(s) + " is not in the Huffman table");
        const Codeword& c = table.code(s);
        for (unsigned i = c.length; i-- > 0;) w.put_bit((c.bits >> i) & 1u);
    }
    EncodedBits out;
    out.bit_count = w.bit_count();
    out.bytes = w.take();
    return out;
}

/// Decodes exactly `count` symbols and requires the stream to end there.
inline std::vector<std::uint32_t> huffman_decode(const EncodedBits& stream, const HuffmanTable& table, std::size_t count)
{
    std::vector<std::uint32_t> out;
    out.reserve(count);
    try {
        BitReader r(stream.bytes, stream.bit_count);
        for (std::size_t i = 0; i < count; ++i) out.push_back(table.read_symbol(r));
        if (!r.exhausted()) throw HuffmanError("trailing bits after the last symbol");
    } catch (const FormatError& e) {
        throw HuffmanError(std::string("truncated Huffman stream: ") + e.what());
    }
    return out;
}

inline std::uint64_t encoded_bit_length(const Histogram& h, const HuffmanTable& t)
{
    std::uint64_t bits = 0;
    for (const auto& [s, c] : h) bits += c * t.code(s).length;
    return bits;
}

} // namespace tc3d
