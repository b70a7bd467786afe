#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <string>
#include <string_view>

#include "sketchmass/errors.hpp"

namespace sketchmass::binio {

// Little-endian encoding independent of host byte order.

inline void put_u32(std::string& out, std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline void put_f32(std::string& out, float v) { put_u32(out, std::bit_cast<std::uint32_t>(v)); }

class Reader {
public:
    Reader(std::string_view data, std::string what) : data_(data), what_(std::move(what)) {}

    std::string_view bytes(std::size_t n) {
        if (pos_ + n > data_.size()) throw DataError(what_ + ": truncated");
        auto s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    std::uint32_t u32() {
        auto s = bytes(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(s[i])) << (8 * i);
        return v;
    }

    float f32() { return std::bit_cast<float>(u32()); }

    std::size_t remaining() const { return data_.size() - pos_; }

private:
    std::string_view data_;
    std::string what_;
    std::size_t pos_ = 0;
};

}  // namespace sketchmass::binio
