#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace palmer {

// Little-endian binary readers/writers for the versioned file formats
// (.plog buffers, model parameter files). All multi-byte values are
// written LSB-first regardless of host order.

class BinWriter {
public:
    explicit BinWriter(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw std::runtime_error("cannot open for write: " + path);
    }

    void u32(std::uint32_t v) { put(&v, sizeof v); }
    void u64(std::uint64_t v) { put(&v, sizeof v); }
    void i32(std::int32_t v) { put(&v, sizeof v); }
    void f32(float v) { put(&v, sizeof v); }
    void f64(double v) { put(&v, sizeof v); }

    void magic(const char tag[5]) { out_.write(tag, 4); }

    void f32_span(const float* p, std::size_t n) {
        if constexpr (std::endian::native == std::endian::little) {
            out_.write(reinterpret_cast<const char*>(p), std::streamsize(n * 4));
        } else {
            for (std::size_t i = 0; i < n; ++i) f32(p[i]);
        }
    }

    void f64_span(const double* p, std::size_t n) {
        if constexpr (std::endian::native == std::endian::little) {
            out_.write(reinterpret_cast<const char*>(p), std::streamsize(n * 8));
        } else {
            for (std::size_t i = 0; i < n; ++i) f64(p[i]);
        }
    }

    void close() {
        out_.close();
        if (!out_) throw std::runtime_error("write failed on close");
    }

private:
    void put(const void* p, std::size_t n) {
        if constexpr (std::endian::native == std::endian::little) {
            out_.write(reinterpret_cast<const char*>(p), std::streamsize(n));
        } else {
            const auto* b = reinterpret_cast<const unsigned char*>(p);
            for (std::size_t i = n; i-- > 0;) out_.put(char(b[i]));
        }
        if (!out_) throw std::runtime_error("binary write failed");
    }

    std::ofstream out_;
};

class BinReader {
public:
    explicit BinReader(const std::string& path) : in_(path, std::ios::binary) {
        if (!in_) throw std::runtime_error("cannot open for read: " + path);
    }

    std::uint32_t u32() { std::uint32_t v; get(&v, sizeof v); return v; }
    std::uint64_t u64() { std::uint64_t v; get(&v, sizeof v); return v; }
    std::int32_t i32() { std::int32_t v; get(&v, sizeof v); return v; }
    float f32() { float v; get(&v, sizeof v); return v; }
    double f64() { double v; get(&v, sizeof v); return v; }

    void expect_magic(const char tag[5], const std::string& what) {
        char buf[4];
        in_.read(buf, 4);
        if (!in_ || std::memcmp(buf, tag, 4) != 0)
            throw std::runtime_error(what + ": corrupt header (bad magic)");
    }

    void expect_version(std::uint32_t want, const std::string& what) {
        std::uint32_t got = u32();
        if (got != want)
            throw std::runtime_error(what + ": unsupported version " + std::to_string(got) +
                                     " (expected " + std::to_string(want) + ")");
    }

    void f32_span(float* p, std::size_t n) {
        if constexpr (std::endian::native == std::endian::little) {
            in_.read(reinterpret_cast<char*>(p), std::streamsize(n * 4));
            if (!in_) throw std::runtime_error("truncated file");
        } else {
            for (std::size_t i = 0; i < n; ++i) p[i] = f32();
        }
    }

    void f64_span(double* p, std::size_t n) {
        if constexpr (std::endian::native == std::endian::little) {
            in_.read(reinterpret_cast<char*>(p), std::streamsize(n * 8));
            if (!in_) throw std::runtime_error("truncated file");
        } else {
            for (std::size_t i = 0; i < n; ++i) p[i] = f64();
        }
    }

    bool at_eof() {
        in_.peek();
        return in_.eof();
    }

private:
    void get(void* p, std::size_t n) {
        if constexpr (std::endian::native == std::endian::little) {
            in_.read(reinterpret_cast<char*>(p), std::streamsize(n));
        } else {
            auto* b = reinterpret_cast<unsigned char*>(p);
            for (std::size_t i = n; i-- > 0;) {
                int c = in_.get();
                b[i] = (unsigned char)c;
            }
        }
        if (!in_) throw std::runtime_error("truncated file");
    }

    std::ifstream in_;
};

} // namespace palmer
