#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <string_view>

#include "nls/core/error.hpp"

namespace nls::io {

// Little-endian encoder for the binary artifact formats (NLFM, NLPC, NLLO, NLCK).
class ByteWriter {
 public:
  void magic(std::string_view tag) { buffer_.append(tag); }

  void u16(std::uint16_t v) {
    put(static_cast<std::uint8_t>(v & 0xff));
    put(static_cast<std::uint8_t>(v >> 8));
  }

  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) put(static_cast<std::uint8_t>((v >> (8 * i)) & 0xff));
  }

  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }

  void f32s(std::span<const float> values) {
    for (float v : values) f32(v);
  }

  // u32 byte length followed by the raw UTF-8 bytes.
  void str(std::string_view s) {
    u32(static_cast<std::uint32_t>(s.size()));
    buffer_.append(s);
  }

  const std::string& bytes() const { return buffer_; }

 private:
  void put(std::uint8_t b) { buffer_.push_back(static_cast<char>(b)); }

  std::string buffer_;
};

class ByteReader {
 public:
  ByteReader(std::string_view data, std::string context)
      : data_(data), context_(std::move(context)) {}

  void expect_magic(std::string_view tag) {
    need(tag.size(), "magic");
    if (data_.substr(pos_, tag.size()) != tag) {
      throw FormatError(context_ + ": bad magic, expected \"" + std::string(tag) + "\"");
    }
    pos_ += tag.size();
  }

  std::uint16_t u16(const char* what) {
    need(2, what);
    auto lo = static_cast<std::uint8_t>(data_[pos_]);
    auto hi = static_cast<std::uint8_t>(data_[pos_ + 1]);
    pos_ += 2;
    return static_cast<std::uint16_t>(lo | (hi << 8));
  }

  std::uint32_t u32(const char* what) {
    need(4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) {
      v |= static_cast<std::uint32_t>(static_cast<std::uint8_t>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += 4;
    return v;
  }

  float f32(const char* what) { return std::bit_cast<float>(u32(what)); }

  std::string str(const char* what) {
    std::uint32_t n = u32(what);
    need(n, what);
    std::string s(data_.substr(pos_, n));
    pos_ += n;
    return s;
  }

  void expect_end() const {
    if (pos_ != data_.size()) {
      throw FormatError(context_ + ": " + std::to_string(data_.size() - pos_) + " trailing bytes");
    }
  }

  std::size_t remaining() const { return data_.size() - pos_; }

  const std::string& context() const { return context_; }

 private:
  void need(std::size_t n, const char* what) const {
    if (data_.size() - pos_ < n) {
      throw FormatError(context_ + ": truncated while reading " + what);
    }
  }

  std::string_view data_;
  std::size_t pos_ = 0;
  std::string context_;
};

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  if (path.has_parent_path()) {
    std::error_code ec;
    std::filesystem::create_directories(path.parent_path(), ec);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("short write to " + path.string());
}

}  // namespace nls::io
