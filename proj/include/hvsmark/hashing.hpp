#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <torch/torch.h>

namespace hvsmark {

/// Lower-case hex SHA-256 of a byte string.
std::string sha256_hex(std::string_view bytes);

/// SHA-256 of a file's contents.
std::string file_sha256(const std::filesystem::path& path);

/// Hash of a tensor's dtype, shape and contiguous bytes.
std::string tensor_hash(const torch::Tensor& t);

/// Incremental SHA-256 for hashing many pieces without concatenating them.
class Sha256 {
 public:
  Sha256();
  ~Sha256();
  Sha256(const Sha256&) = delete;
  Sha256& operator=(const Sha256&) = delete;

  void update(std::string_view bytes);
  void update(const torch::Tensor& t);
  std::string hex();

 private:
  void* ctx_;
};

}  // namespace hvsmark
