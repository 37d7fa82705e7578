#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <string_view>

namespace unmemo {

/// Incremental SHA-256 (OpenSSL EVP); hex digest on finish().
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::span<const std::byte> bytes);
  void update(std::string_view text);
  std::string finish();

 private:
  void* ctx_;
};

std::string sha256_hex(std::string_view text);

}  // namespace unmemo
