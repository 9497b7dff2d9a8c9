#include "ccm/digest.hpp"

#include <openssl/evp.h>

#include <array>
#include <bit>
#include <cstring>
#include <fstream>

#include "ccm/error.hpp"

namespace ccm {

struct Sha256::Impl {
  EVP_MD_CTX* ctx = nullptr;
  bool finished = false;
};

Sha256::Sha256() : impl_(std::make_unique<Impl>()) {
  impl_->ctx = EVP_MD_CTX_new();
  if (impl_->ctx == nullptr ||
      EVP_DigestInit_ex(impl_->ctx, EVP_sha256(), nullptr) != 1) {
    throw Error("sha256: failed to initialise digest context");
  }
}

Sha256::~Sha256() {
  if (impl_ && impl_->ctx) EVP_MD_CTX_free(impl_->ctx);
}

Sha256& Sha256::update(std::span<const std::byte> bytes) {
  if (impl_->finished) throw Error("sha256: update after finish");
  if (!bytes.empty()) {
    EVP_DigestUpdate(impl_->ctx, bytes.data(), bytes.size());
  }
  return *this;
}

Sha256& Sha256::update(std::string_view text) {
  return update(std::as_bytes(std::span(text.data(), text.size())));
}

Sha256& Sha256::update_u32(std::uint32_t v) {
  std::array<std::byte, 4> b{};
  for (int k = 0; k < 4; ++k) b[k] = static_cast<std::byte>((v >> (8 * k)) & 0xff);
  return update(b);
}

Sha256& Sha256::update_u64(std::uint64_t v) {
  std::array<std::byte, 8> b{};
  for (int k = 0; k < 8; ++k) b[k] = static_cast<std::byte>((v >> (8 * k)) & 0xff);
  return update(b);
}

Sha256& Sha256::update_f64(double v) {
  return update_u64(std::bit_cast<std::uint64_t>(v));
}

std::string Sha256::finish_raw() {
  if (impl_->finished) throw Error("sha256: finish called twice");
  std::array<unsigned char, EVP_MAX_MD_SIZE> md{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(impl_->ctx, md.data(), &len);
  impl_->finished = true;
  return std::string(reinterpret_cast<const char*>(md.data()), len);
}

std::string Sha256::finish_hex() { return to_hex(finish_raw()); }

std::string to_hex(std::string_view raw) {
  static constexpr char digits[] = "0123456789abcdef";
  std::string out;
  out.reserve(raw.size() * 2);
  for (unsigned char c : raw) {
    out.push_back(digits[c >> 4]);
    out.push_back(digits[c & 0xf]);
  }
  return out;
}

std::string sha256_hex(std::string_view text) {
  Sha256 h;
  h.update(text);
  return h.finish_hex();
}

std::string sha256_file_hex(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw MissingArtifact("cannot open " + path.string());
  Sha256 h;
  std::array<char, 1 << 16> buf{};
  while (in) {
    in.read(buf.data(), buf.size());
    const auto got = in.gcount();
    if (got > 0) h.update(std::string_view(buf.data(), static_cast<std::size_t>(got)));
  }
  return h.finish_hex();
}

}  // namespace ccm
