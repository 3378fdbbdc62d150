#pragma once

// Little-endian byte encoding shared by the checkpoint and trajectory formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "pdeco/error.hpp"

namespace pdeco::io {

class ByteWriter {
 public:
  void bytes(std::string_view raw) { buf_.append(raw); }
  void u32(std::uint32_t v) { put(v, 4); }
  void u64(std::uint64_t v) { put(v, 8); }
  void f64(double v) { put(std::bit_cast<std::uint64_t>(v), 8); }
  void f64s(std::span<const double> values) {
    for (double v : values) f64(v);
  }

  const std::string& buffer() const { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  void put(std::uint64_t v, int width) {
    for (int i = 0; i < width; ++i) buf_.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
  }
  std::string buf_;
};

/// Bounds-checked reader; every failure is a FormatError at the current offset.
class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::size_t offset() const { return pos_; }
  std::size_t remaining() const { return data_.size() - pos_; }
  bool at_end() const { return pos_ == data_.size(); }

  std::string_view bytes(std::size_t n, std::string_view context) {
    require(n, context);
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint32_t u32(std::string_view context) { return static_cast<std::uint32_t>(get(4, context)); }
  std::uint64_t u64(std::string_view context) { return get(8, context); }
  double f64(std::string_view context) { return std::bit_cast<double>(get(8, context)); }
  std::vector<double> f64s(std::size_t n, std::string_view context) {
    if (n > remaining() / 8) throw FormatError("truncated data while reading " + std::string(context), pos_);
    std::vector<double> out(n);
    for (auto& v : out) v = f64(context);
    return out;
  }

 private:
  void require(std::size_t n, std::string_view context) const {
    if (n > remaining()) throw FormatError("truncated data while reading " + std::string(context), pos_);
  }
  std::uint64_t get(int width, std::string_view context) {
    require(static_cast<std::size_t>(width), context);
    std::uint64_t v = 0;
    for (int i = 0; i < width; ++i) {
      v |= static_cast<std::uint64_t>(static_cast<unsigned char>(data_[pos_ + i])) << (8 * i);
    }
    pos_ += static_cast<std::size_t>(width);
    return v;
  }

  std::string_view data_;
  std::size_t pos_ = 0;
};

/// Reads a whole file; PathError when it cannot be opened.
std::string read_file(const std::filesystem::path& path);
/// Writes through a temporary sibling and renames, so readers never see a partial file.
void write_file_atomic(const std::filesystem::path& path, std::string_view contents);

}  // namespace pdeco::io
