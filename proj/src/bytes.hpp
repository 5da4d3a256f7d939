#pragma once

// Little-endian byte codecs shared by the binary dump formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "archrefine/error.hpp"

namespace archrefine::detail {

constexpr std::uint16_t kVersion = 1;

class ByteReader {
 public:
  ByteReader(std::span<const std::uint8_t> bytes, std::string_view what)
      : bytes_(bytes), what_(what) {}

  void expect_magic(std::string_view magic) {
    need(magic.size(), "magic");
    if (std::memcmp(bytes_.data() + pos_, magic.data(), magic.size()) != 0) {
      throw FormatError(std::string(what_) + ": bad magic, expected '" + std::string(magic) + "'");
    }
    pos_ += magic.size();
  }

  std::uint16_t u16(std::string_view field) {
    need(2, field);
    std::uint16_t v = std::uint16_t(bytes_[pos_]) | std::uint16_t(bytes_[pos_ + 1]) << 8;
    pos_ += 2;
    return v;
  }

  std::uint32_t u32(std::string_view field) {
    need(4, field);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | bytes_[pos_ + i];
    pos_ += 4;
    return v;
  }

  float f32(std::string_view field) { return std::bit_cast<float>(u32(field)); }

  std::uint8_t u8(std::string_view field) {
    need(1, field);
    return bytes_[pos_++];
  }

  std::size_t remaining() const { return bytes_.size() - pos_; }

  void expect_end() const {
    if (remaining() != 0) {
      throw FormatError(std::string(what_) + ": " + std::to_string(remaining()) +
                        " trailing bytes after payload");
    }
  }

 private:
  void need(std::size_t n, std::string_view field) const {
    if (remaining() < n) {
      throw FormatError(std::string(what_) + ": truncated while reading " + std::string(field));
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::string_view what_;
  std::size_t pos_ = 0;
};

class ByteWriter {
 public:
  void magic(std::string_view m) { out_.insert(out_.end(), m.begin(), m.end()); }
  void u16(std::uint16_t v) {
    out_.push_back(std::uint8_t(v));
    out_.push_back(std::uint8_t(v >> 8));
  }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(std::uint8_t(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void u8(std::uint8_t v) { out_.push_back(v); }
  std::vector<std::uint8_t> take() { return std::move(out_); }

 private:
  std::vector<std::uint8_t> out_;
};

inline void check_version(std::uint16_t version, std::string_view what) {
  if (version != kVersion) {
    throw FormatError(std::string(what) + ": unsupported version " + std::to_string(version));
  }
}

inline std::size_t element_count(std::span<const std::uint32_t> dims, std::string_view what) {
  std::size_t n = 1;
  for (auto d : dims) {
    if (d != 0 && n > std::numeric_limits<std::size_t>::max() / d) {
      throw FormatError(std::string(what) + ": dimension product overflows");
    }
    n *= d;
  }
  return n;
}

inline std::vector<std::uint8_t> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open '" + path.string() + "'");
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline void spit(const std::filesystem::path& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), std::streamsize(bytes.size()));
  if (!out) throw Error("write failed for '" + path.string() + "'");
}

}  // namespace archrefine::detail
