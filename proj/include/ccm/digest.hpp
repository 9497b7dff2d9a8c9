#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <string_view>

namespace ccm {

// Incremental SHA-256. Hex digests identify checkpoints, schemas, configs and
// stage outputs.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  Sha256& update(std::span<const std::byte> bytes);
  Sha256& update(std::string_view text);
  Sha256& update_u32(std::uint32_t v);
  Sha256& update_u64(std::uint64_t v);
  Sha256& update_f64(double v);

  // Raw 32-byte digest; the object cannot be updated afterwards.
  std::string finish_raw();
  std::string finish_hex();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

std::string sha256_hex(std::string_view text);
std::string sha256_file_hex(const std::filesystem::path& path);
std::string to_hex(std::string_view raw);

}  // namespace ccm
