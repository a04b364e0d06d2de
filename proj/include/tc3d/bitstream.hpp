#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tc3d/binary_io.hpp"

namespace tc3d {

/// Packs bit fields LSB-first into bytes.
class BitWriter {
public:
    void put(std::uint64_t value, unsigned bits)
    {
        for (unsigned i = 0; i < bits; ++i) put_bit((value >> i) & 1u);
    }

    void put_bit(unsigned bit)
    {
        if (bit_count_ % 8 == 0) bytes_.push_back(0);
        if (bit) bytes_.back() |= static_cast<std::uint8_t>(1u << (bit_count_ % 8));
        ++bit_count_;
    }

    std::size_t bit_count() const noexcept { return bit_count_; }
    const std::vector<std::uint8_t>& bytes() const noexcept { return bytes_; }
    std::vector<std::uint8_t> take() { return std::move(bytes_); }

private:
    std::vector<std::uint8_t> bytes_;
    std::size_t bit_count_ = 0;
};

class BitReader {
public:
    BitReader(const std::vector<std::uint8_t>& bytes, std::size_t bit_count) : bytes_(bytes), bit_count_(bit_count)
    {
        if ((bit_count + 7) / 8 > bytes.size()) throw FormatError("bit stream shorter than its declared length");
    }

    unsigned get_bit()
    {
        if (pos_ >= bit_count_) throw FormatError("bit stream exhausted at bit " + std::to_string(pos_));
        const unsigned b = (bytes_[pos_ / 8] >> (pos_ % 8)) & 1u;
        ++pos_;
        return b;
    }

    std::uint64_t get(unsigned bits)
    {
        std::uint64_t v = 0;
        for (unsigned i = 0; i < bits; ++i) v |= static_cast<std::uint64_t>(get_bit()) << i;
        return v;
    }

    std::size_t position() const noexcept { return pos_; }
    bool exhausted() const noexcept { return pos_ >= bit_count_; }

private:
    const std::vector<std::uint8_t>& bytes_;
    std::size_t bit_count_;
    std::size_t pos_ = 0;
};

/// Fixed-width packing of small unsigned symbols.
inline std::vector<std::uint8_t> pack_fixed(const std::vector<std::uint32_t>& symbols, unsigned bits)
{
    BitWriter w;
    for (std::uint32_t s : symbols) {
        if (bits < 32 && s >> bits) throw std::invalid_argument("symbol " + std::to_string(s) + " exceeds " +
                                                                std::to_string(bits) + " bits");
        w.put(s, bits);
    }
    return w.take();
}

inline std::vector<std::uint32_t> unpack_fixed(const std::vector<std::uint8_t>& bytes, unsigned bits, std::size_t count)
{
    BitReader r(bytes, count * bits);
    std::vector<std::uint32_t> out(count);
    for (auto& s : out) s = static_cast<std::uint32_t>(r.get(bits));
    return out;
}

} // namespace tc3d
