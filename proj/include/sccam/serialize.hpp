#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "sccam/errors.hpp"
#include "sccam/tensor.hpp"

namespace sccam::detail {

// Little-endian binary stream with a running FNV-1a 64 checksum. All on-disk
// formats in this project end with the checksum of every preceding byte.
class BinWriter {
public:
    explicit BinWriter(const std::string& path) : out_(path, std::ios::binary), path_(path) {
        if (!out_) throw ConfigError("cannot write file '" + path + "'");
    }

    void bytes(const void* p, std::size_t n) {
        out_.write(static_cast<const char*>(p), static_cast<std::streamsize>(n));
        const auto* b = static_cast<const unsigned char*>(p);
        for (std::size_t i = 0; i < n; ++i) {
            hash_ ^= b[i];
            hash_ *= 0x100000001b3ULL;
        }
    }

    void u8(std::uint8_t v) { bytes(&v, 1); }
    void u32(std::uint32_t v) { bytes(&v, 4); }
    void u64(std::uint64_t v) { bytes(&v, 8); }
    void i32(std::int32_t v) { bytes(&v, 4); }
    void f64(double v) { bytes(&v, 8); }

    void str(const std::string& s) {
        u32(static_cast<std::uint32_t>(s.size()));
        bytes(s.data(), s.size());
    }

    void doubles(const std::vector<double>& v) {
        u64(v.size());
        bytes(v.data(), v.size() * sizeof(double));
    }

    void tensor(const Tensor& t) {
        u32(static_cast<std::uint32_t>(t.shape.size()));
        for (int d : t.shape) i32(d);
        u8(t.trainable ? 1 : 0);
        bytes(t.values.data(), t.values.size() * sizeof(double));
    }

    /// Write the trailing checksum and flush; the file is invalid without it.
    void finish() {
        const std::uint64_t h = hash_;
        out_.write(reinterpret_cast<const char*>(&h), 8);
        out_.flush();
        if (!out_) throw ConfigError("write failed for file '" + path_ + "'");
    }

private:
    std::ofstream out_;
    std::string path_;
    std::uint64_t hash_ = 0xcbf29ce484222325ULL;
};

class BinReader {
public:
    explicit BinReader(const std::string& path) : path_(path) {
        std::ifstream in(path, std::ios::binary);
        if (!in) throw ConfigError("cannot open file '" + path + "'");
        buf_.assign(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
    }

    void bytes(void* p, std::size_t n) {
        if (pos_ + n > limit()) {
            throw SerializationError("file '" + path_ + "' is truncated");
        }
        std::memcpy(p, buf_.data() + pos_, n);
        pos_ += n;
    }

    std::uint8_t u8() { std::uint8_t v; bytes(&v, 1); return v; }
    std::uint32_t u32() { std::uint32_t v; bytes(&v, 4); return v; }
    std::uint64_t u64() { std::uint64_t v; bytes(&v, 8); return v; }
    std::int32_t i32() { std::int32_t v; bytes(&v, 4); return v; }
    double f64() { double v; bytes(&v, 8); return v; }

    std::string str() {
        const std::uint32_t n = u32();
        if (n > limit() - pos_) throw SerializationError("file '" + path_ + "' is truncated");
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }

    std::vector<double> doubles() {
        const std::uint64_t n = u64();
        if (n > (limit() - pos_) / sizeof(double))
            throw SerializationError("file '" + path_ + "' is truncated");
        std::vector<double> v(n);
        bytes(v.data(), n * sizeof(double));
        return v;
    }

    Tensor tensor() {
        const std::uint32_t rank = u32();
        if (rank == 0 || rank > 8) throw SerializationError("file '" + path_ + "': bad tensor rank");
        Shape shape(rank);
        for (auto& d : shape) d = i32();
        const bool trainable = u8() != 0;
        const std::int64_t n = numel(shape);
        if (n < 0 || static_cast<std::uint64_t>(n) * sizeof(double) > limit() - pos_)
            throw SerializationError("file '" + path_ + "' is truncated");
        std::vector<double> vals(static_cast<std::size_t>(n));
        bytes(vals.data(), vals.size() * sizeof(double));
        return Tensor(std::move(shape), std::move(vals), trainable);
    }

    /// Verify the trailing checksum against everything read so far. Must be
    /// the last call; rejects both corruption and trailing garbage.
    void verify_checksum() {
        if (buf_.size() < 8 || pos_ != buf_.size() - 8)
            throw SerializationError("file '" + path_ + "' has unexpected length");
        std::uint64_t h = 0xcbf29ce484222325ULL;
        for (std::size_t i = 0; i < pos_; ++i) {
            h ^= static_cast<unsigned char>(buf_[i]);
            h *= 0x100000001b3ULL;
        }
        std::uint64_t stored;
        std::memcpy(&stored, buf_.data() + pos_, 8);
        if (stored != h)
            throw SerializationError("checksum mismatch in '" + path_ + "' (corrupt or truncated)");
    }

private:
    std::size_t limit() const { return buf_.size() < 8 ? 0 : buf_.size() - 8; }

    std::vector<char> buf_;
    std::size_t pos_ = 0;
    std::string path_;
};

inline void expect_magic(BinReader& r, const char (&magic)[9], const std::string& what) {
    char got[8];
    r.bytes(got, 8);
    if (std::memcmp(got, magic, 8) != 0)
        throw SerializationError("not a " + what + " file (bad magic bytes)");
}

} // namespace sccam::detail
