#pragma once

// Framed binary container shared by weight, stats and mask files:
//
//   magic     8 bytes
//   hlen      u64 little-endian, byte length of the JSON header
//   header    hlen bytes of UTF-8 JSON
//   payload   format-specific, length declared by the header
//   crc32     u32 little-endian over payload bytes only

#include <cstdint>
#include <cstring>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "json.hpp"

#include "digest.hpp"
#include "error.hpp"

namespace prunebench {

class ByteWriter {
public:
    void u32(std::uint32_t v) {
        for (int i = 0; i < 4; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void u64(std::uint64_t v) {
        for (int i = 0; i < 8; ++i) bytes_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
    }
    void f32(float v) {
        std::uint32_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        u32(bits);
    }
    void f64(double v) {
        std::uint64_t bits;
        std::memcpy(&bits, &v, sizeof bits);
        u64(bits);
    }
    void raw(std::span<const std::uint8_t> b) { bytes_.insert(bytes_.end(), b.begin(), b.end()); }
    void raw(std::string_view s) { bytes_.insert(bytes_.end(), s.begin(), s.end()); }

    std::vector<std::uint8_t>& bytes() noexcept { return bytes_; }

private:
    std::vector<std::uint8_t> bytes_;
};

class ByteReader {
public:
    explicit ByteReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    std::uint32_t u32() {
        need(4);
        std::uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 4;
        return v;
    }
    std::uint64_t u64() {
        need(8);
        std::uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(bytes_[pos_ + i]) << (8 * i);
        pos_ += 8;
        return v;
    }
    float f32() {
        const std::uint32_t bits = u32();
        float v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
    double f64() {
        const std::uint64_t bits = u64();
        double v;
        std::memcpy(&v, &bits, sizeof v);
        return v;
    }
    std::span<const std::uint8_t> take(std::size_t n) {
        need(n);
        auto s = bytes_.subspan(pos_, n);
        pos_ += n;
        return s;
    }
    std::size_t remaining() const noexcept { return bytes_.size() - pos_; }

private:
    void need(std::size_t n) const {
        if (bytes_.size() - pos_ < n) throw error(errc::truncated, "unexpected end of data");
    }

    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

struct FramedFile {
    nlohmann::json header;
    std::vector<std::uint8_t> payload;
};

inline std::vector<std::uint8_t> encode_framed(std::string_view magic, const nlohmann::json& header,
                                               std::span<const std::uint8_t> payload) {
    if (magic.size() != 8) throw error(errc::invariant, "container magic must be 8 bytes");
    const std::string text = header.dump();
    ByteWriter w;
    w.raw(magic);
    w.u64(text.size());
    w.raw(text);
    w.raw(payload);
    w.u32(crc32_of(payload));
    return std::move(w.bytes());
}

// payload_size computes the expected payload length from the parsed header.
template <typename PayloadSize>
FramedFile decode_framed(std::span<const std::uint8_t> bytes, std::string_view magic, PayloadSize payload_size,
                         const std::string& what) {
    if (bytes.size() < 8 || std::memcmp(bytes.data(), magic.data(), 8) != 0) {
        throw error(errc::bad_magic, what + ": bad magic (expected \"" + std::string(magic) + "\")");
    }
    ByteReader r(bytes.subspan(8));
    FramedFile out;
    std::uint64_t hlen = 0;
    try {
        hlen = r.u64();
        auto text = r.take(hlen);
        out.header = nlohmann::json::parse(text.begin(), text.end());
    } catch (const error&) {
        throw error(errc::truncated, what + ": truncated header");
    } catch (const nlohmann::json::exception& e) {
        throw error(errc::bad_header, what + ": header is not valid JSON: " + e.what());
    }
    std::size_t expected = 0;
    try {
        expected = payload_size(out.header);
    } catch (const nlohmann::json::exception& e) {
        throw error(errc::bad_header, what + ": malformed header: " + e.what());
    }
    if (r.remaining() < expected + 4) {
        throw error(errc::truncated, what + ": payload truncated (header declares " + std::to_string(expected) +
                                         " bytes, file holds " +
                                         std::to_string(r.remaining() >= 4 ? r.remaining() - 4 : 0) + ")");
    }
    if (r.remaining() > expected + 4) {
        throw error(errc::bad_header, what + ": trailing bytes after payload");
    }
    auto payload = r.take(expected);
    const std::uint32_t stored = r.u32();
    if (crc32_of(payload) != stored) throw error(errc::checksum_mismatch, what + ": payload CRC32 mismatch");
    out.payload.assign(payload.begin(), payload.end());
    return out;
}

}  // namespace prunebench
