#pragma once

#include <cstdint>
#include <string>

namespace spats {

// FIPS 180-4 SHA-256, enough for content-addressing run inputs.
std::string sha256_hex(const void* data, size_t len);
std::string sha256_file_hex(const std::string& path);

}  // namespace spats
