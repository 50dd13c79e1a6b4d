#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "hyperx/tensor.hpp"

namespace hyperx {

/// Tensor container format "HXT1": magic bytes "HXT1", rank as u32, one u32
/// per dimension, then the row-major payload as raw 64-bit floats. All
/// integers and floats little-endian.
void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

/// In-memory round trip (used for byte-level freeze checks).
std::vector<uint8_t> tensor_bytes(const Tensor& t);

/// FNV-1a digest of the serialized bytes.
uint64_t tensor_digest(const Tensor& t);

}  // namespace hyperx
