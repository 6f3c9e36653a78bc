#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

namespace mislead {

// SHA-256 hex digest of raw bytes.
std::string sha256_hex(std::span<const std::uint8_t> bytes);

// Digest of a double array serialized little-endian, the same byte order the
// checkpoint format uses. Parameter-freeze contracts compare these.
std::string sha256_hex(std::span<const double> values);

}  // namespace mislead
