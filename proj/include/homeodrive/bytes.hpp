#pragma once

#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <stdexcept>
#include <string>
#include <vector>

namespace homeo {

/// Canonical little-endian byte serialization used by the mesh wire format
/// and the ledger's hashed payloads. The encoding is documented byte-exactly
/// in docs/formats.md; independent implementations must agree.
class ByteWriter {
  public:
    const std::vector<std::uint8_t>& bytes() const { return buf_; }
    std::vector<std::uint8_t> take() { return std::move(buf_); }

    void u8(std::uint8_t v) { buf_.push_back(v); }
    void u16(std::uint16_t v) { put_uint(v, 2); }
    void u32(std::uint32_t v) { put_uint(v, 4); }
    void u64(std::uint64_t v) { put_uint(v, 8); }
    void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
    void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }

    void str(const std::string& s) {
        if (s.size() > 0xffff) throw std::length_error("string too long for wire");
        u16(static_cast<std::uint16_t>(s.size()));
        buf_.insert(buf_.end(), s.begin(), s.end());
    }

    void raw(const std::uint8_t* data, std::size_t n) { buf_.insert(buf_.end(), data, data + n); }
    void raw(const std::vector<std::uint8_t>& data) { raw(data.data(), data.size()); }
    template <std::size_t N>
    void raw(const std::array<std::uint8_t, N>& data) {
        raw(data.data(), N);
    }

  private:
    void put_uint(std::uint64_t v, int n) {
        for (int i = 0; i < n; ++i) buf_.push_back(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
    }
    std::vector<std::uint8_t> buf_;
};

struct DecodeError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

class ByteReader {
  public:
    ByteReader(const std::uint8_t* data, std::size_t n) : data_(data), size_(n) {}
    explicit ByteReader(const std::vector<std::uint8_t>& v) : ByteReader(v.data(), v.size()) {}

    std::size_t remaining() const { return size_ - pos_; }
    bool done() const { return pos_ >= size_; }

    std::uint8_t u8() { return take(1)[0]; }
    std::uint16_t u16() { return static_cast<std::uint16_t>(get_uint(2)); }
    std::uint32_t u32() { return static_cast<std::uint32_t>(get_uint(4)); }
    std::uint64_t u64() { return get_uint(8); }
    std::int64_t i64() { return static_cast<std::int64_t>(u64()); }
    double f64() { return std::bit_cast<double>(u64()); }

    std::string str() {
        std::uint16_t n = u16();
        const std::uint8_t* p = take(n);
        return std::string(reinterpret_cast<const char*>(p), n);
    }

    template <std::size_t N>
    std::array<std::uint8_t, N> arr() {
        std::array<std::uint8_t, N> out;
        std::memcpy(out.data(), take(N), N);
        return out;
    }

    std::vector<std::uint8_t> rest() {
        std::vector<std::uint8_t> out(data_ + pos_, data_ + size_);
        pos_ = size_;
        return out;
    }

  private:
    const std::uint8_t* take(std::size_t n) {
        if (pos_ + n > size_) throw DecodeError("wire decode: truncated input");
        const std::uint8_t* p = data_ + pos_;
        pos_ += n;
        return p;
    }
    std::uint64_t get_uint(int n) {
        const std::uint8_t* p = take(n);
        std::uint64_t v = 0;
        for (int i = 0; i < n; ++i) v |= static_cast<std::uint64_t>(p[i]) << (8 * i);
        return v;
    }

    const std::uint8_t* data_;
    std::size_t size_;
    std::size_t pos_ = 0;
};

} // namespace homeo
