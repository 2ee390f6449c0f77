// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "vigage/tensor.hpp"

namespace vigage {

/// One image (H x W x C, integer pixel values 0..255) with an age label in years.
struct Sample {
  Tensor image;
  double label = 0.0;
};

enum class Provenance { synthetic, directory };

struct Dataset {
  std::vector<Sample> samples;
  Provenance provenance = Provenance::directory;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }
};

struct PnmHeader {
  std::size_t width = 0;
  std::size_t height = 0;
  std::size_t channels = 0;
  unsigned maxval = 0;
};

/// Decodes binary PGM (P5) or PPM (P6) with maxval <= 255. Throws ParseError
/// carrying the byte offset of the first problem.
Tensor decode_pnm(std::span<const std::uint8_t> bytes, PnmHeader* header = nullptr);
Tensor read_pnm(const std::filesystem::path& path);

/// Encodes as `P5`/`P6`, then `W H`, then maxval, each header line ended by '\n'.
std::vector<std::uint8_t> encode_pnm(const Tensor& image, unsigned maxval = 255);
void write_pnm(const std::filesystem::path& path, const Tensor& image);

/// Reads `labels_csv` (header line, then `filename,age` rows) and the images
/// it names under `dir`. Throws LoadError naming the offending row.
Dataset load_dataset(const std::filesystem::path& dir, const std::filesystem::path& labels_csv);

/// Writes every sample as a PGM/PPM plus labels.csv into `dir`.
void save_dataset(const std::filesystem::path& dir, const Dataset& dataset);

inline constexpr double kSynthMinAge = 16.0;
inline constexpr double kSynthMaxAge = 77.0;
inline constexpr std::size_t kSynthMaxArcs = 24;
inline constexpr double kArcIntensity = 30.0;

/// Number of wrinkle-proxy arcs drawn for age y: round((y - 16) / 61 * 24).
std::size_t synth_arc_count(double age);

/// Deterministic grayscale stand-in for a face dataset. Each sample draws an
/// age uniformly from [16, 77] and paints synth_arc_count(age) dark one-pixel
/// arcs over a smooth random background, then adds uniform [-8, 8] noise.
/// `arc_counts`, when given, receives the arc count of each sample.
Dataset synth_dataset(std::size_t n, std::uint64_t seed, std::size_t height, std::size_t width,
                      std::vector<std::size_t>* arc_counts = nullptr);

}  // namespace vigage
