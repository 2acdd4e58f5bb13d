#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "l2s/common.hpp"

namespace l2s::io {

// Little-endian binary IO. This codebase only targets little-endian hosts;
// the writers memcpy and the readers validate lengths and report the byte
// offset of the first problem.

class BinaryWriter {
public:
    explicit BinaryWriter(const std::string& path) : out_(path, std::ios::binary) {
        if (!out_) throw ConfigError("cannot open '" + path + "' for writing");
        path_ = path;
    }
    void bytes(const void* p, std::size_t n) {
        out_.write(reinterpret_cast<const char*>(p), (std::streamsize)n);
        if (!out_) throw ConfigError("write failed on '" + path_ + "'");
    }
    void u32(std::uint32_t v) { bytes(&v, 4); }
    void u64(std::uint64_t v) { bytes(&v, 8); }
    void i64(std::int64_t v) { bytes(&v, 8); }
    void f32(float v) { bytes(&v, 4); }
    void f32s(const float* p, std::size_t n) { bytes(p, 4 * n); }
    void str(const std::string& s) {
        u32((std::uint32_t)s.size());
        bytes(s.data(), s.size());
    }

private:
    std::ofstream out_;
    std::string path_;
};

class BinaryReader {
public:
    explicit BinaryReader(const std::string& path) : in_(path, std::ios::binary) {
        if (!in_) throw ParseError("cannot open '" + path + "'");
        path_ = path;
    }
    long long offset() const { return offset_; }
    void bytes(void* p, std::size_t n) {
        in_.read(reinterpret_cast<char*>(p), (std::streamsize)n);
        if ((std::size_t)in_.gcount() != n)
            throw ParseError("unexpected end of file in '" + path_ + "'", offset_);
        offset_ += (long long)n;
    }
    std::uint32_t u32() {
        std::uint32_t v;
        bytes(&v, 4);
        return v;
    }
    std::uint64_t u64() {
        std::uint64_t v;
        bytes(&v, 8);
        return v;
    }
    std::int64_t i64() {
        std::int64_t v;
        bytes(&v, 8);
        return v;
    }
    float f32() {
        float v;
        bytes(&v, 4);
        return v;
    }
    void f32s(float* p, std::size_t n) { bytes(p, 4 * n); }
    std::string str(std::size_t max_len = 1 << 16) {
        const long long at = offset_;
        const std::uint32_t n = u32();
        if (n > max_len) throw ParseError("string length " + std::to_string(n) + " out of range", at);
        std::string s(n, '\0');
        if (n) bytes(s.data(), n);
        return s;
    }
    bool at_eof() {
        in_.peek();
        return in_.eof();
    }

private:
    std::ifstream in_;
    std::string path_;
    long long offset_ = 0;
};

}  // namespace l2s::io
