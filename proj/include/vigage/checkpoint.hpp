// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <iosfwd>
#include <string_view>

#include "vigage/network.hpp"

namespace vigage {

inline constexpr std::string_view kCheckpointMagic = "VIGAGE01";

/// Checkpoint layout: the 8-byte magic, then for each tensor
///   u32 name length | name bytes | u32 rank | u32 extents... | f64 values...
/// with every integer and double little-endian. The first tensor, "config",
/// encodes the ModelConfig; the model parameters follow in ModelParams::named() order.
struct Checkpoint {
  ModelConfig config;
  ModelParams params;
};

void write_checkpoint(std::ostream& out, const ModelConfig& config, const ModelParams& params);
void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const ModelParams& params);

/// Throws LoadError on bad magic, truncation, or any tensor whose name or
/// shape disagrees with the embedded config.
Checkpoint read_checkpoint(std::istream& in);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Numeric encoding of a config, as stored in the "config" tensor.
Tensor encode_config(const ModelConfig& config);
ModelConfig decode_config(const Tensor& encoded);

}  // namespace vigage
