#pragma once

// Internal little-endian byte buffer helpers shared by the container and codec.

#include <cstdint>
#include <cstring>
#include <string>
#include <vector>

#include "dqt/errors.hpp"

namespace dqt::detail {

class ByteWriter {
  public:
    std::vector<uint8_t> buf;

    void raw(const void* p, size_t n) {
        const auto* b = static_cast<const uint8_t*>(p);
        buf.insert(buf.end(), b, b + n);
    }
    void u8(uint8_t v) { buf.push_back(v); }
    void u16(uint16_t v) { put_le(v); }
    void u32(uint32_t v) { put_le(v); }
    void u64(uint64_t v) { put_le(v); }
    void f32(float v) {
        uint32_t bits;
        std::memcpy(&bits, &v, 4);
        put_le(bits);
    }
    void f64(double v) {
        uint64_t bits;
        std::memcpy(&bits, &v, 8);
        put_le(bits);
    }
    void uvarint(uint64_t v) {
        while (v >= 0x80) {
            buf.push_back(uint8_t(v) | 0x80);
            v >>= 7;
        }
        buf.push_back(uint8_t(v));
    }
    void svarint(int64_t v) { uvarint((uint64_t(v) << 1) ^ uint64_t(v >> 63)); }
    void str(const std::string& s) {
        u16(uint16_t(s.size()));
        raw(s.data(), s.size());
    }

  private:
    template <typename T>
    void put_le(T v) {
        for (size_t i = 0; i < sizeof(T); ++i) buf.push_back(uint8_t(v >> (8 * i)));
    }
};

class ByteReader {
  public:
    ByteReader(const uint8_t* data, size_t n) : p_(data), n_(n) {}
    explicit ByteReader(const std::vector<uint8_t>& v) : p_(v.data()), n_(v.size()) {}

    size_t pos() const { return pos_; }
    size_t remaining() const { return n_ - pos_; }
    void seek(size_t pos) {
        if (pos > n_) throw TruncatedFile("seek past end");
        pos_ = pos;
    }

    void raw(void* out, size_t n) {
        need(n);
        std::memcpy(out, p_ + pos_, n);
        pos_ += n;
    }
    uint8_t u8() {
        need(1);
        return p_[pos_++];
    }
    uint16_t u16() { return get_le<uint16_t>(); }
    uint32_t u32() { return get_le<uint32_t>(); }
    uint64_t u64() { return get_le<uint64_t>(); }
    float f32() {
        uint32_t bits = get_le<uint32_t>();
        float v;
        std::memcpy(&v, &bits, 4);
        return v;
    }
    double f64() {
        uint64_t bits = get_le<uint64_t>();
        double v;
        std::memcpy(&v, &bits, 8);
        return v;
    }
    uint64_t uvarint() {
        uint64_t v = 0;
        int shift = 0;
        while (true) {
            uint8_t b = u8();
            v |= uint64_t(b & 0x7f) << shift;
            if (!(b & 0x80)) break;
            shift += 7;
            if (shift > 63) throw TruncatedFile("varint overflow");
        }
        return v;
    }
    int64_t svarint() {
        uint64_t u = uvarint();
        return int64_t(u >> 1) ^ -int64_t(u & 1);
    }
    std::string str() {
        uint16_t n = u16();
        need(n);
        std::string s(reinterpret_cast<const char*>(p_ + pos_), n);
        pos_ += n;
        return s;
    }

  private:
    void need(size_t n) const {
        if (pos_ + n > n_) throw TruncatedFile("unexpected end of data");
    }
    template <typename T>
    T get_le() {
        need(sizeof(T));
        T v = 0;
        for (size_t i = 0; i < sizeof(T); ++i) v |= T(p_[pos_ + i]) << (8 * i);
        pos_ += sizeof(T);
        return v;
    }

    const uint8_t* p_;
    size_t n_;
    size_t pos_ = 0;
};

std::vector<uint8_t> read_file(const std::string& path);
void write_file(const std::string& path, const std::vector<uint8_t>& bytes);

}  // namespace dqt::detail
