#pragma once

#include <array>
#include <cstdint>
#include <stdexcept>
#include <vector>

#include <openssl/evp.h>

namespace homeo {

using Digest = std::array<std::uint8_t, 32>;

/// SHA-256 over a byte buffer (OpenSSL EVP).
inline Digest sha256(const std::uint8_t* data, std::size_t n) {
    Digest out{};
    EVP_MD_CTX* ctx = EVP_MD_CTX_new();
    if (!ctx) throw std::runtime_error("EVP_MD_CTX_new failed");
    unsigned int len = 0;
    bool ok = EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr) == 1 &&
              EVP_DigestUpdate(ctx, data, n) == 1 &&
              EVP_DigestFinal_ex(ctx, out.data(), &len) == 1;
    EVP_MD_CTX_free(ctx);
    if (!ok || len != out.size()) throw std::runtime_error("sha256 failed");
    return out;
}

inline Digest sha256(const std::vector<std::uint8_t>& v) { return sha256(v.data(), v.size()); }

inline std::string digest_hex(const Digest& d) {
    static const char* hex = "0123456789abcdef";
    std::string out;
    out.reserve(64);
    for (std::uint8_t b : d) {
        out += hex[b >> 4];
        out += hex[b & 0xf];
    }
    return out;
}

} // namespace homeo
