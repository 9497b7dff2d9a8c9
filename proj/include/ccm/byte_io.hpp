#pragma once

// Little-endian encoding helpers for the binary artifact formats.

#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "ccm/error.hpp"

namespace ccm {

class ByteWriter {
 public:
  void put_bytes(std::string_view bytes) { buf_.append(bytes); }
  void put_u32(std::uint32_t v) {
    for (int k = 0; k < 4; ++k) buf_.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
  }
  void put_u64(std::uint64_t v) {
    for (int k = 0; k < 8; ++k) buf_.push_back(static_cast<char>((v >> (8 * k)) & 0xff));
  }
  void put_f64(double v) { put_u64(std::bit_cast<std::uint64_t>(v)); }
  void put_string(std::string_view s) {
    put_u32(static_cast<std::uint32_t>(s.size()));
    put_bytes(s);
  }

  const std::string& bytes() const noexcept { return buf_; }
  std::string take() { return std::move(buf_); }

 private:
  std::string buf_;
};

// Reads from a borrowed buffer; any overrun throws CorruptCheckpoint-style
// errors through the supplied exception type.
template <typename Err = CorruptCheckpoint>
class ByteReader {
 public:
  explicit ByteReader(std::string_view data) : data_(data) {}

  std::string_view get_bytes(std::size_t n) {
    need(n);
    auto out = data_.substr(pos_, n);
    pos_ += n;
    return out;
  }
  std::uint32_t get_u32() {
    auto b = get_bytes(4);
    std::uint32_t v = 0;
    for (int k = 0; k < 4; ++k) v |= static_cast<std::uint32_t>(static_cast<unsigned char>(b[k])) << (8 * k);
    return v;
  }
  std::uint64_t get_u64() {
    auto b = get_bytes(8);
    std::uint64_t v = 0;
    for (int k = 0; k < 8; ++k) v |= static_cast<std::uint64_t>(static_cast<unsigned char>(b[k])) << (8 * k);
    return v;
  }
  double get_f64() { return std::bit_cast<double>(get_u64()); }
  std::string get_string() {
    const auto n = get_u32();
    return std::string(get_bytes(n));
  }

  std::size_t position() const noexcept { return pos_; }
  std::size_t remaining() const noexcept { return data_.size() - pos_; }

 private:
  void need(std::size_t n) const {
    if (n > data_.size() - pos_) {
      throw Err("unexpected end of data (needed " + std::to_string(n) +
                " bytes at offset " + std::to_string(pos_) + ")");
    }
  }

  std::string_view data_;
  std::size_t pos_ = 0;
};

std::string read_file_bytes(const std::filesystem::path& path);
// Writes to a sibling temp file then renames over the target.
void write_file_atomic(const std::filesystem::path& path, std::string_view bytes);

}  // namespace ccm
