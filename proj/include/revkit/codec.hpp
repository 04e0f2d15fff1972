#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace revkit {

/// Lowercase hex SHA-256 digest.
std::string sha256_hex(std::string_view data);

std::string base64_encode(std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> base64_decode(std::string_view text);

/// Little-endian float64 payloads for model files.
std::string encode_doubles(std::span<const double> values);
std::vector<double> decode_doubles(std::string_view base64);

/// splitmix64 finalizer; derives independent sub-seeds from one seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace revkit
