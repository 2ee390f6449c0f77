// SPDX-License-Identifier: Apache-2.0
#include "vigage/dataio.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iterator>
#include <numbers>
#include <sstream>

#include "vigage/errors.hpp"
#include "vigage/network.hpp"
#include "vigage/rng.hpp"

namespace vigage {

namespace {

class HeaderScanner {
 public:
  explicit HeaderScanner(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      const auto c = bytes_[pos_];
      if (c == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(c)) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::size_t number(const char* what) {
    skip_space_and_comments();
    const std::size_t start = pos_;
    std::size_t value = 0;
    while (pos_ < bytes_.size() && std::isdigit(bytes_[pos_])) {
      value = value * 10 + (bytes_[pos_] - '0');
      if (value > 1'000'000) throw ParseError(std::string("PNM ") + what + " is too large", start);
      ++pos_;
    }
    if (pos_ == start) throw ParseError(std::string("PNM header: expected ") + what, start);
    return value;
  }

  std::size_t pos() const { return pos_; }
  void advance() { ++pos_; }

 private:
  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 2;
};

}  // namespace

Tensor decode_pnm(std::span<const std::uint8_t> bytes, PnmHeader* header) {
  if (bytes.size() < 2 || bytes[0] != 'P' || (bytes[1] != '5' && bytes[1] != '6')) {
    throw ParseError("bad magic: expected binary PGM (P5) or PPM (P6)", 0);
  }
  PnmHeader h;
  h.channels = bytes[1] == '5' ? 1 : 3;
  HeaderScanner scan(bytes);
  h.width = scan.number("width");
  h.height = scan.number("height");
  scan.skip_space_and_comments();
  const std::size_t maxval_at = scan.pos();
  const std::size_t maxval = scan.number("maxval");
  if (h.width == 0 || h.height == 0) throw ParseError("PNM image has a zero dimension", maxval_at);
  if (maxval == 0 || maxval > 255) {
    throw ParseError("PNM maxval " + std::to_string(maxval) + " unsupported (must be 1..255)", maxval_at);
  }
  h.maxval = static_cast<unsigned>(maxval);
  if (scan.pos() >= bytes.size() || !std::isspace(bytes[scan.pos()])) {
    throw ParseError("PNM header must end with a single whitespace byte", scan.pos());
  }
  scan.advance();

  const std::size_t start = scan.pos();
  const std::size_t needed = h.width * h.height * h.channels;
  if (bytes.size() - start < needed) {
    throw ParseError("truncated pixel data: need " + std::to_string(needed) + " bytes, have " +
                         std::to_string(bytes.size() - start),
                     bytes.size());
  }
  Tensor image({h.height, h.width, h.channels});
  auto data = image.data();
  for (std::size_t i = 0; i < needed; ++i) data[i] = bytes[start + i];
  if (header) *header = h;
  return image;
}

Tensor read_pnm(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open image " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_pnm(bytes);
}

std::vector<std::uint8_t> encode_pnm(const Tensor& image, unsigned maxval) {
  if (image.rank() != 3 || (image.dim(2) != 1 && image.dim(2) != 3)) {
    throw DimensionError("PNM encoding needs an H x W x 1 or H x W x 3 image, got " + shape_to_string(image.shape()));
  }
  if (maxval == 0 || maxval > 255) throw ArgumentError("PNM maxval must be 1..255");
  const std::string header = std::string(image.dim(2) == 1 ? "P5" : "P6") + "\n" + std::to_string(image.dim(1)) + " " +
                             std::to_string(image.dim(0)) + "\n" + std::to_string(maxval) + "\n";
  std::vector<std::uint8_t> out(header.begin(), header.end());
  out.reserve(out.size() + image.numel());
  for (double v : image.data()) {
    if (!(v >= 0.0 && v <= maxval) || v != std::floor(v)) {
      throw ArgumentError("pixel value " + std::to_string(v) + " is not an integer in [0, " + std::to_string(maxval) + "]");
    }
    out.push_back(static_cast<std::uint8_t>(v));
  }
  return out;
}

void write_pnm(const std::filesystem::path& path, const Tensor& image) {
  const auto bytes = encode_pnm(image);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw LoadError("failed writing " + path.string());
}

namespace {

std::string trim(std::string s) {
  auto not_space = [](unsigned char c) { return !std::isspace(c); };
  s.erase(s.begin(), std::find_if(s.begin(), s.end(), not_space));
  s.erase(std::find_if(s.rbegin(), s.rend(), not_space).base(), s.end());
  return s;
}

}  // namespace

Dataset load_dataset(const std::filesystem::path& dir, const std::filesystem::path& labels_csv) {
  std::ifstream in(labels_csv);
  if (!in) throw LoadError("cannot open labels file " + labels_csv.string());
  Dataset ds;
  ds.provenance = Provenance::directory;
  std::string line;
  std::size_t row = 0;
  if (!std::getline(in, line)) throw LoadError("empty dataset");
  while (std::getline(in, line)) {
    ++row;
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = labels_csv.filename().string() + " row " + std::to_string(row);
    const auto comma = line.rfind(',');
    if (comma == std::string::npos) throw LoadError(where + ": expected `filename,age`");
    const std::string file = trim(line.substr(0, comma));
    const std::string age_text = trim(line.substr(comma + 1));
    double age = 0.0;
    std::size_t used = 0;
    try {
      age = std::stod(age_text, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used == 0 || used != age_text.size() || !std::isfinite(age)) {
      throw LoadError(where + ": unparsable age '" + age_text + "'");
    }
    if (age < 1.0 || age > 120.0) throw LoadError(where + ": age " + age_text + " outside [1, 120]");
    const auto path = dir / file;
    if (!std::filesystem::exists(path)) throw LoadError(where + ": missing file " + path.string());
    Tensor image;
    try {
      image = read_pnm(path);
    } catch (const Error& e) {
      throw LoadError(where + ": " + e.what());
    }
    if (!ds.samples.empty() && image.shape() != ds.samples.front().image.shape()) {
      throw LoadError(where + ": image " + shape_to_string(image.shape()) + " differs from the first image " +
                      shape_to_string(ds.samples.front().image.shape()));
    }
    ds.samples.push_back({std::move(image), age});
  }
  if (ds.samples.empty()) throw LoadError("empty dataset");
  return ds;
}

void save_dataset(const std::filesystem::path& dir, const Dataset& dataset) {
  std::filesystem::create_directories(dir);
  std::ofstream labels(dir / "labels.csv", std::ios::trunc);
  if (!labels) throw LoadError("cannot write " + (dir / "labels.csv").string());
  labels << "filename,age\n";
  char name[64];
  char age[64];
  for (std::size_t i = 0; i < dataset.size(); ++i) {
    const Sample& s = dataset.samples[i];
    std::snprintf(name, sizeof name, "img_%05zu.%s", i, s.image.dim(2) == 1 ? "pgm" : "ppm");
    write_pnm(dir / name, s.image);
    std::snprintf(age, sizeof age, "%.6f", s.label);
    labels << name << ',' << age << '\n';
  }
  if (!labels) throw LoadError("failed writing labels.csv");
}

std::size_t synth_arc_count(double age) {
  const double clamped = std::clamp(age, kSynthMinAge, kSynthMaxAge);
  return static_cast<std::size_t>(
      std::lround((clamped - kSynthMinAge) / (kSynthMaxAge - kSynthMinAge) * static_cast<double>(kSynthMaxArcs)));
}

namespace {

constexpr std::size_t kCoarseGrid = 4;
constexpr double kBackgroundLevel = 170.0;
constexpr double kBackgroundSwing = 15.0;
constexpr double kNoise = 8.0;
constexpr double kArcLength = 10.0;

Sample synth_sample(Rng& rng, std::size_t height, std::size_t width, std::size_t* arcs_out) {
  const double age = rng.uniform(kSynthMinAge, kSynthMaxAge);

  // Low-frequency background: bilinear interpolation of a coarse random lattice.
  std::vector<double> lattice((kCoarseGrid + 1) * (kCoarseGrid + 1));
  for (double& v : lattice) v = rng.uniform(-kBackgroundSwing, kBackgroundSwing);
  std::vector<double> pixels(height * width);
  for (std::size_t y = 0; y < height; ++y) {
    const double fy = static_cast<double>(y) / static_cast<double>(height) * kCoarseGrid;
    const std::size_t gy = std::min<std::size_t>(static_cast<std::size_t>(fy), kCoarseGrid - 1);
    const double ty = fy - static_cast<double>(gy);
    for (std::size_t x = 0; x < width; ++x) {
      const double fx = static_cast<double>(x) / static_cast<double>(width) * kCoarseGrid;
      const std::size_t gx = std::min<std::size_t>(static_cast<std::size_t>(fx), kCoarseGrid - 1);
      const double tx = fx - static_cast<double>(gx);
      auto at = [&](std::size_t r, std::size_t c) { return lattice[r * (kCoarseGrid + 1) + c]; };
      const double top = at(gy, gx) * (1 - tx) + at(gy, gx + 1) * tx;
      const double bottom = at(gy + 1, gx) * (1 - tx) + at(gy + 1, gx + 1) * tx;
      pixels[y * width + x] = kBackgroundLevel + top * (1 - ty) + bottom * ty;
    }
  }

  const std::size_t arcs = synth_arc_count(age);
  // Each arc is placed so it lies wholly inside the image; clipped arcs would
  // blur the link between age and the amount of dark stroke.
  const int steps = static_cast<int>(std::ceil(kArcLength * 3.0));
  std::vector<std::pair<double, double>> pts(static_cast<std::size_t>(steps) + 1);
  for (std::size_t a = 0; a < arcs; ++a) {
    const double radius = rng.uniform(3.0, 10.0);
    const double start = rng.uniform(0.0, 2.0 * std::numbers::pi);
    const double span = kArcLength / radius;
    double lo_x = 0, hi_x = 0, lo_y = 0, hi_y = 0;
    for (int s = 0; s <= steps; ++s) {
      const double theta = start + span * static_cast<double>(s) / steps;
      auto& [px, py] = pts[static_cast<std::size_t>(s)];
      px = radius * std::cos(theta);
      py = radius * std::sin(theta);
      lo_x = s ? std::min(lo_x, px) : px;
      hi_x = s ? std::max(hi_x, px) : px;
      lo_y = s ? std::min(lo_y, py) : py;
      hi_y = s ? std::max(hi_y, py) : py;
    }
    const double ox = rng.uniform(-lo_x, static_cast<double>(width) - 1.0 - hi_x);
    const double oy = rng.uniform(-lo_y, static_cast<double>(height) - 1.0 - hi_y);
    for (const auto& [px, py] : pts) {
      const long x = std::clamp(std::lround(ox + px), 0L, static_cast<long>(width) - 1);
      const long y = std::clamp(std::lround(oy + py), 0L, static_cast<long>(height) - 1);
      pixels[static_cast<std::size_t>(y) * width + static_cast<std::size_t>(x)] = kArcIntensity;
    }
  }

  Tensor image({height, width, 1});
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const double v = pixels[i] + rng.uniform(-kNoise, kNoise);
    image[i] = std::clamp(std::round(v), 0.0, 255.0);
  }
  if (arcs_out) *arcs_out = arcs;
  return {std::move(image), age};
}

}  // namespace

Dataset synth_dataset(std::size_t n, std::uint64_t seed, std::size_t height, std::size_t width,
                      std::vector<std::size_t>* arc_counts) {
  const std::size_t grid = ModelConfig{}.grid_side;
  if (n == 0) throw ConfigError("n must be ≥ 1");
  if (height == 0 || width == 0 || height % grid || width % grid) {
    throw ConfigError("synthetic image size " + std::to_string(height) + "x" + std::to_string(width) +
                      " must be positive and divisible by " + std::to_string(grid));
  }
  Dataset ds;
  ds.provenance = Provenance::synthetic;
  ds.samples.reserve(n);
  if (arc_counts) arc_counts->assign(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    Rng rng(derive_seed(seed, i));
    ds.samples.push_back(synth_sample(rng, height, width, arc_counts ? &(*arc_counts)[i] : nullptr));
  }
  return ds;
}

}  // namespace vigage
