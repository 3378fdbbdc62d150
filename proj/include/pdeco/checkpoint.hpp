#pragma once

// Model checkpoint file:
//
//   "RNO1"
//   u64 length, then that many bytes of JSON model config
//   per tensor in RnoParams::tensors() order:
//     u32 ndim, ndim x u64 dims, numel x f64
//
// All integers and floats are little-endian.

#include <filesystem>
#include <string>
#include <string_view>
#include <utility>

#include "pdeco/rno.hpp"

namespace pdeco {

struct Checkpoint {
  RnoConfig config;
  RnoParams params;
};

std::string serialize_checkpoint(const RnoConfig& cfg, const RnoParams& params);
/// Throws FormatError (with byte offset) on a bad magic, shape mismatch or truncation.
Checkpoint deserialize_checkpoint(std::string_view bytes);

void save_checkpoint(const std::filesystem::path& path, const RnoConfig& cfg, const RnoParams& params);
Checkpoint load_checkpoint(const std::filesystem::path& path);

}  // namespace pdeco
