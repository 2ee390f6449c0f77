// SPDX-License-Identifier: Apache-2.0
#include "vigage/checkpoint.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <istream>
#include <ostream>
#include <unordered_map>

#include "vigage/errors.hpp"

namespace vigage {

namespace {

constexpr double kConfigVersion = 1.0;
constexpr std::size_t kConfigFields = 19;

void put_u32(std::ostream& out, std::uint32_t v) {
  std::array<char, 4> b{};
  for (int i = 0; i < 4; ++i) b[i] = static_cast<char>((v >> (8 * i)) & 0xFF);
  out.write(b.data(), b.size());
}

void put_f64(std::ostream& out, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  std::array<char, 8> b{};
  for (int i = 0; i < 8; ++i) b[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  out.write(b.data(), b.size());
}

void put_tensor(std::ostream& out, const std::string& name, const Tensor& t) {
  put_u32(out, static_cast<std::uint32_t>(name.size()));
  out.write(name.data(), static_cast<std::streamsize>(name.size()));
  put_u32(out, static_cast<std::uint32_t>(t.rank()));
  for (auto e : t.shape()) put_u32(out, static_cast<std::uint32_t>(e));
  for (double v : t.data()) put_f64(out, v);
}

class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {}

  bool at_end() { return in_.peek() == std::char_traits<char>::eof(); }

  void bytes(char* dst, std::size_t n, const char* what) {
    in_.read(dst, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(in_.gcount()) != n) {
      throw LoadError("checkpoint truncated while reading " + std::string(what) + " at byte " + std::to_string(offset_));
    }
    offset_ += n;
  }

  std::uint32_t u32(const char* what) {
    std::array<unsigned char, 4> b{};
    bytes(reinterpret_cast<char*>(b.data()), 4, what);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b[i]) << (8 * i);
    return v;
  }

  double f64(const char* what) {
    std::array<unsigned char, 8> b{};
    bytes(reinterpret_cast<char*>(b.data()), 8, what);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(b[i]) << (8 * i);
    return std::bit_cast<double>(v);
  }

  std::size_t offset() const { return offset_; }

 private:
  std::istream& in_;
  std::size_t offset_ = 0;
};

std::pair<std::string, Tensor> read_tensor(Reader& r) {
  const std::uint32_t len = r.u32("name length");
  if (len == 0 || len > 4096) throw LoadError("checkpoint has an implausible tensor name length " + std::to_string(len));
  std::string name(len, '\0');
  r.bytes(name.data(), len, "tensor name");
  const std::uint32_t rank = r.u32("rank");
  if (rank == 0 || rank > 8) throw LoadError("tensor " + name + ": implausible rank " + std::to_string(rank));
  Shape shape;
  std::size_t count = 1;
  for (std::uint32_t i = 0; i < rank; ++i) {
    const std::uint32_t e = r.u32("extent");
    if (e == 0) throw LoadError("tensor " + name + ": zero extent");
    shape.push_back(e);
    count *= e;
    if (count > (std::size_t{1} << 28)) throw LoadError("tensor " + name + ": implausibly large");
  }
  std::vector<double> values(count);
  for (auto& v : values) v = r.f64(name.c_str());
  return {std::move(name), Tensor(std::move(shape), std::move(values))};
}

std::size_t as_count(double v, const char* field) {
  if (!(v >= 0.0) || v != std::floor(v) || v > 1e9) {
    throw LoadError(std::string("config field ") + field + " is not a valid count");
  }
  return static_cast<std::size_t>(v);
}

}  // namespace

Tensor encode_config(const ModelConfig& c) {
  const auto seed_lo = static_cast<double>(c.seed & 0xFFFFFFFFull);
  const auto seed_hi = static_cast<double>(c.seed >> 32);
  return Tensor::vector({kConfigVersion,
                         static_cast<double>(c.image_height),
                         static_cast<double>(c.image_width),
                         static_cast<double>(c.channels),
                         static_cast<double>(c.grid_side),
                         static_cast<double>(c.knn),
                         c.metric == Metric::cosine ? 0.0 : 1.0,
                         static_cast<double>(c.dim),
                         static_cast<double>(c.heads_gc),
                         static_cast<double>(c.heads_attn),
                         static_cast<double>(c.blocks),
                         static_cast<double>(c.stages),
                         c.use_attention ? 1.0 : 0.0,
                         c.scaled_attention ? 1.0 : 0.0,
                         c.normalize_step2 ? 1.0 : 0.0,
                         c.static_graph ? 1.0 : 0.0,
                         c.residual ? 1.0 : 0.0,
                         seed_lo,
                         seed_hi});
}

ModelConfig decode_config(const Tensor& e) {
  if (e.rank() != 1 || e.numel() != kConfigFields) {
    throw LoadError("config tensor has shape " + shape_to_string(e.shape()) + ", expected [" +
                    std::to_string(kConfigFields) + "]");
  }
  if (e[0] != kConfigVersion) throw LoadError("unsupported config version");
  auto flag = [&](std::size_t i) { return e[i] != 0.0; };
  ModelConfig c;
  c.image_height = as_count(e[1], "image_height");
  c.image_width = as_count(e[2], "image_width");
  c.channels = as_count(e[3], "channels");
  c.grid_side = as_count(e[4], "grid_side");
  c.knn = as_count(e[5], "knn");
  c.metric = e[6] == 0.0 ? Metric::cosine : Metric::euclidean;
  c.dim = as_count(e[7], "dim");
  c.heads_gc = as_count(e[8], "heads_gc");
  c.heads_attn = as_count(e[9], "heads_attn");
  c.blocks = as_count(e[10], "blocks");
  c.stages = as_count(e[11], "stages");
  c.use_attention = flag(12);
  c.scaled_attention = flag(13);
  c.normalize_step2 = flag(14);
  c.static_graph = flag(15);
  c.residual = flag(16);
  c.seed = (static_cast<std::uint64_t>(as_count(e[18], "seed")) << 32) | as_count(e[17], "seed");
  return c;
}

void write_checkpoint(std::ostream& out, const ModelConfig& config, const ModelParams& params) {
  out.write(kCheckpointMagic.data(), static_cast<std::streamsize>(kCheckpointMagic.size()));
  put_tensor(out, "config", encode_config(config));
  for (const auto& [name, t] : params.named()) put_tensor(out, name, *t);
}

void save_checkpoint(const std::filesystem::path& path, const ModelConfig& config, const ModelParams& params) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw LoadError("cannot open " + path.string() + " for writing");
  write_checkpoint(out, config, params);
  if (!out) throw LoadError("failed writing checkpoint " + path.string());
}

Checkpoint read_checkpoint(std::istream& in) {
  Reader r(in);
  std::string magic(kCheckpointMagic.size(), '\0');
  in.read(magic.data(), static_cast<std::streamsize>(magic.size()));
  if (static_cast<std::size_t>(in.gcount()) != magic.size() || magic != kCheckpointMagic) {
    throw LoadError("bad magic: not a model checkpoint");
  }

  auto [first_name, first] = read_tensor(r);
  if (first_name != "config") throw LoadError("checkpoint must start with the config tensor, found " + first_name);
  Checkpoint ck;
  ck.config = decode_config(first);
  try {
    ck.params = make_params(ck.config);
  } catch (const ConfigError& e) {
    throw LoadError(std::string("checkpoint config is invalid: ") + e.what());
  }

  std::unordered_map<std::string, Tensor> stored;
  while (!r.at_end()) {
    auto [name, t] = read_tensor(r);
    if (!stored.emplace(name, std::move(t)).second) throw LoadError("tensor " + name + " appears twice");
  }
  for (auto& [name, slot] : ck.params.named()) {
    auto it = stored.find(name);
    if (it == stored.end()) throw LoadError("tensor " + name + " is missing from the checkpoint");
    if (it->second.shape() != slot->shape()) {
      throw LoadError("tensor " + name + " has shape " + shape_to_string(it->second.shape()) + ", config expects " +
                      shape_to_string(slot->shape()));
    }
    *slot = std::move(it->second);
    stored.erase(it);
  }
  if (!stored.empty()) throw LoadError("unexpected tensor " + stored.begin()->first + " in checkpoint");
  return ck;
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open checkpoint " + path.string());
  return read_checkpoint(in);
}

}  // namespace vigage
