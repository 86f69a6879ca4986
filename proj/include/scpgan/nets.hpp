#pragma once

#include <fstream>

#include "scpgan/autonn.hpp"

namespace scpgan::autonn {

inline TensorPtr init_conv_weight(std::vector<int> shape, Rng& rng) {
  auto t = make_tensor(shape);
  const double fan_in = static_cast<double>(shape[1]) * shape[2] * shape[3];
  const double s = std::sqrt(2.0 / fan_in);
  for (auto& v : t->value) v = s * rng.normal();
  return t;
}

// Magnitude-mask generator: 3 x (conv2d 5x5, relu) + 1x1 sigmoid head.
// Input and output are [1, frames, bins]; the mask lives in (0, 1).
struct GeneratorNet {
  int channels;
  TensorPtr w1, b1, w2, b2, w3, b3, wh, bh;
  ParamSet params;

  explicit GeneratorNet(int channels_ = 12, std::uint64_t seed = 1) : channels(channels_) {
    Rng rng(mix_seed(seed, 0x67656e));
    w1 = init_conv_weight({channels, 1, 5, 5}, rng);
    b1 = make_tensor({channels});
    w2 = init_conv_weight({channels, channels, 5, 5}, rng);
    b2 = make_tensor({channels});
    w3 = init_conv_weight({channels, channels, 5, 5}, rng);
    b3 = make_tensor({channels});
    wh = init_conv_weight({1, channels, 1, 1}, rng);
    bh = make_tensor({1});
    params.add("g.conv1.w", w1);
    params.add("g.conv1.b", b1);
    params.add("g.conv2.w", w2);
    params.add("g.conv2.b", b2);
    params.add("g.conv3.w", w3);
    params.add("g.conv3.b", b3);
    params.add("g.head.w", wh);
    params.add("g.head.b", bh);
  }

  TensorPtr forward(Tape* tape, const TensorPtr& mag) const {
    auto h1 = relu(tape, conv2d(tape, mag, w1, b1));
    auto h2 = relu(tape, conv2d(tape, h1, w2, b2));
    auto h3 = relu(tape, conv2d(tape, h2, w3, b3));
    return sigmoid(tape, conv2d(tape, h3, wh, bh));
  }
};

// Metric discriminator: stacked [candidate, reference] magnitudes through
// 3 strided convs, mean pool, scalar head.
struct DiscriminatorNet {
  int channels;
  TensorPtr w1, b1, w2, b2, w3, b3, wd, bd;
  ParamSet params;

  explicit DiscriminatorNet(int channels_ = 12, std::uint64_t seed = 2) : channels(channels_) {
    Rng rng(mix_seed(seed, 0x646973));
    w1 = init_conv_weight({channels, 2, 5, 5}, rng);
    b1 = make_tensor({channels});
    w2 = init_conv_weight({channels, channels, 5, 5}, rng);
    b2 = make_tensor({channels});
    w3 = init_conv_weight({channels, channels, 5, 5}, rng);
    b3 = make_tensor({channels});
    wd = make_tensor({1, channels});
    {
      const double s = std::sqrt(1.0 / channels);
      for (auto& v : wd->value) v = s * rng.normal();
    }
    bd = make_tensor({1});
    params.add("d.conv1.w", w1);
    params.add("d.conv1.b", b1);
    params.add("d.conv2.w", w2);
    params.add("d.conv2.b", b2);
    params.add("d.conv3.w", w3);
    params.add("d.conv3.b", b3);
    params.add("d.dense.w", wd);
    params.add("d.dense.b", bd);
  }

  TensorPtr forward(Tape* tape, const TensorPtr& cand, const TensorPtr& ref) const {
    auto x = concat_channels(tape, cand, ref);
    auto h1 = relu(tape, conv2d(tape, x, w1, b1, 2));
    auto h2 = relu(tape, conv2d(tape, h1, w2, b2, 2));
    auto h3 = relu(tape, conv2d(tape, h2, w3, b3, 2));
    auto pooled = global_mean_channels(tape, h3);
    return dense(tape, pooled, wd, bd);
  }
};

// ---------------------------------------------------------------------------
// Checkpoints: magic "SCPG", u32 format version, then named double arrays
// (parameters, optimizer moments, scalar metadata), little-endian IEEE-754.
// ---------------------------------------------------------------------------

struct NamedArray {
  std::string name;
  std::vector<std::uint64_t> dims;
  std::vector<double> data;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

namespace detail {

template <typename T>
void write_raw(std::ofstream& f, const T& v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
T read_raw(std::ifstream& f) {
  T v{};
  f.read(reinterpret_cast<char*>(&v), sizeof(T));
  if (!f) throw BadCheckpoint("checkpoint: truncated");
  return v;
}

}  // namespace detail

inline void write_checkpoint(const std::string& path, const std::vector<NamedArray>& arrays) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("cannot open for write: " + path);
  f.write("SCPG", 4);
  detail::write_raw(f, kCheckpointVersion);
  detail::write_raw(f, static_cast<std::uint32_t>(arrays.size()));
  for (const auto& a : arrays) {
    detail::write_raw(f, static_cast<std::uint32_t>(a.name.size()));
    f.write(a.name.data(), static_cast<std::streamsize>(a.name.size()));
    detail::write_raw(f, static_cast<std::uint32_t>(a.dims.size()));
    std::uint64_t n = 1;
    for (std::uint64_t d : a.dims) {
      detail::write_raw(f, d);
      n *= d;
    }
    if (n != a.data.size()) throw BadCheckpoint("checkpoint: dims/data mismatch for " + a.name);
    f.write(reinterpret_cast<const char*>(a.data.data()),
            static_cast<std::streamsize>(a.data.size() * sizeof(double)));
  }
  if (!f) throw IoError("write failed: " + path);
}

inline std::vector<NamedArray> read_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, "SCPG", 4) != 0) throw BadCheckpoint("checkpoint: bad magic");
  const auto version = detail::read_raw<std::uint32_t>(f);
  if (version != kCheckpointVersion)
    throw BadCheckpoint("checkpoint: unsupported version " + std::to_string(version));
  const auto count = detail::read_raw<std::uint32_t>(f);
  std::vector<NamedArray> arrays;
  arrays.reserve(count);
  for (std::uint32_t i = 0; i < count; ++i) {
    NamedArray a;
    const auto name_len = detail::read_raw<std::uint32_t>(f);
    if (name_len > 4096) throw BadCheckpoint("checkpoint: absurd name length");
    a.name.resize(name_len);
    f.read(a.name.data(), name_len);
    if (!f) throw BadCheckpoint("checkpoint: truncated");
    const auto ndim = detail::read_raw<std::uint32_t>(f);
    if (ndim > 8) throw BadCheckpoint("checkpoint: absurd rank");
    std::uint64_t n = 1;
    for (std::uint32_t d = 0; d < ndim; ++d) {
      a.dims.push_back(detail::read_raw<std::uint64_t>(f));
      n *= a.dims.back();
    }
    if (n > (1ull << 32)) throw BadCheckpoint("checkpoint: absurd array size");
    a.data.resize(n);
    f.read(reinterpret_cast<char*>(a.data.data()), static_cast<std::streamsize>(n * sizeof(double)));
    if (!f) throw BadCheckpoint("checkpoint: truncated");
    arrays.push_back(std::move(a));
  }
  return arrays;
}

inline void append_params(std::vector<NamedArray>& out, const ParamSet& params) {
  for (const auto& [name, t] : params.items()) {
    NamedArray a;
    a.name = name;
    for (int d : t->shape) a.dims.push_back(static_cast<std::uint64_t>(d));
    a.data = t->value;
    out.push_back(std::move(a));
  }
}

inline const NamedArray* find_array(const std::vector<NamedArray>& arrays, const std::string& name) {
  for (const auto& a : arrays)
    if (a.name == name) return &a;
  return nullptr;
}

inline void load_params(const std::vector<NamedArray>& arrays, ParamSet& params) {
  for (const auto& [name, t] : params.items()) {
    const NamedArray* a = find_array(arrays, name);
    if (!a) throw BadCheckpoint("checkpoint: missing array " + name);
    if (a->data.size() != t->numel())
      throw BadCheckpoint("checkpoint: wrong size for " + name);
    t->value = a->data;
  }
}

}  // namespace scpgan::autonn
