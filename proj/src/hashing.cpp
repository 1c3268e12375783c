#include "hvsmark/hashing.hpp"

#include <array>
#include <fstream>
#include <sstream>

#include <openssl/evp.h>

#include "hvsmark/errors.hpp"

namespace hvsmark {

Sha256::Sha256() : ctx_(EVP_MD_CTX_new()) {
  if (ctx_ == nullptr || EVP_DigestInit_ex(static_cast<EVP_MD_CTX*>(ctx_), EVP_sha256(), nullptr) != 1) {
    throw Error("SHA-256 initialization failed");
  }
}

Sha256::~Sha256() { EVP_MD_CTX_free(static_cast<EVP_MD_CTX*>(ctx_)); }

void Sha256::update(std::string_view bytes) {
  EVP_DigestUpdate(static_cast<EVP_MD_CTX*>(ctx_), bytes.data(), bytes.size());
}

void Sha256::update(const torch::Tensor& t) {
  auto c = t.detach().cpu().contiguous();
  std::ostringstream head;
  head << c.scalar_type() << c.sizes();
  update(head.str());
  update(std::string_view(static_cast<const char*>(c.data_ptr()), c.numel() * c.element_size()));
}

std::string Sha256::hex() {
  std::array<unsigned char, EVP_MAX_MD_SIZE> digest{};
  unsigned int len = 0;
  EVP_DigestFinal_ex(static_cast<EVP_MD_CTX*>(ctx_), digest.data(), &len);
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  out.reserve(2 * len);
  for (unsigned int i = 0; i < len; ++i) {
    out.push_back(kHex[digest[i] >> 4]);
    out.push_back(kHex[digest[i] & 0xf]);
  }
  return out;
}

std::string sha256_hex(std::string_view bytes) {
  Sha256 h;
  h.update(bytes);
  return h.hex();
}

std::string file_sha256(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DataError("cannot read " + path.string());
  Sha256 h;
  std::array<char, 1 << 16> buf{};
  while (is) {
    is.read(buf.data(), buf.size());
    h.update(std::string_view(buf.data(), static_cast<size_t>(is.gcount())));
  }
  return h.hex();
}

std::string tensor_hash(const torch::Tensor& t) {
  Sha256 h;
  h.update(t);
  return h.hex();
}

}  // namespace hvsmark
