#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include <json.hpp>

#include "scpgan/common.hpp"
#include "scpgan/dsp.hpp"

namespace scpgan::data {

namespace fs = std::filesystem;

// ---------------------------------------------------------------------------
// WAV I/O, PCM 16-bit little-endian mono
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint32_t rd_u32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

inline std::uint16_t rd_u16(const unsigned char* p) {
  return static_cast<std::uint16_t>(p[0] | (p[1] << 8));
}

}  // namespace detail

inline dsp::Waveform wav_read(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("wav_read: cannot open " + path);
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(f)),
                                   std::istreambuf_iterator<char>());
  if (bytes.size() < 12) throw BadHeader("wav_read: file too small");
  if (std::memcmp(bytes.data(), "RIFF", 4) != 0 || std::memcmp(bytes.data() + 8, "WAVE", 4) != 0)
    throw BadHeader("wav_read: not a RIFF/WAVE file");

  bool have_fmt = false;
  std::uint16_t channels = 0, bits = 0, format = 0;
  std::uint32_t sample_rate = 0;
  std::size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const char* id = reinterpret_cast<const char*>(bytes.data() + pos);
    const std::uint32_t size = detail::rd_u32(bytes.data() + pos + 4);
    const std::size_t body = pos + 8;
    if (std::memcmp(id, "fmt ", 4) == 0) {
      if (size < 16 || body + size > bytes.size()) throw BadHeader("wav_read: bad fmt chunk");
      format = detail::rd_u16(bytes.data() + body);
      channels = detail::rd_u16(bytes.data() + body + 2);
      sample_rate = detail::rd_u32(bytes.data() + body + 4);
      bits = detail::rd_u16(bytes.data() + body + 14);
      have_fmt = true;
    } else if (std::memcmp(id, "data", 4) == 0) {
      if (!have_fmt) throw BadHeader("wav_read: data chunk before fmt");
      if (format != 1) throw UnsupportedFormat("wav_read: not PCM");
      if (channels != 1) throw UnsupportedFormat("wav_read: not mono");
      if (bits != 16) throw UnsupportedFormat("wav_read: not 16-bit");
      if (body + size > bytes.size()) throw Truncated("wav_read: data chunk truncated");
      dsp::Waveform w;
      w.sample_rate = static_cast<int>(sample_rate);
      const std::size_t n = size / 2;
      w.samples.resize(n);
      for (std::size_t i = 0; i < n; ++i) {
        const std::int16_t s = static_cast<std::int16_t>(
            detail::rd_u16(bytes.data() + body + 2 * i));
        w.samples[i] = static_cast<double>(s) / 32768.0;
      }
      return w;
    }
    pos = body + size + (size & 1);  // chunks are word-aligned
  }
  throw Truncated("wav_read: no data chunk");
}

struct WavWriteResult {
  int clipped = 0;
};

inline WavWriteResult wav_write(const std::string& path, const dsp::Waveform& w) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError("wav_write: cannot open " + path);
  const std::uint32_t n = static_cast<std::uint32_t>(w.samples.size());
  const std::uint32_t data_size = n * 2;
  const std::uint32_t sr = static_cast<std::uint32_t>(w.sample_rate);

  auto w32 = [&](std::uint32_t v) { f.write(reinterpret_cast<const char*>(&v), 4); };
  auto w16 = [&](std::uint16_t v) { f.write(reinterpret_cast<const char*>(&v), 2); };
  f.write("RIFF", 4);
  w32(36 + data_size);
  f.write("WAVE", 4);
  f.write("fmt ", 4);
  w32(16);
  w16(1);  // PCM
  w16(1);  // mono
  w32(sr);
  w32(sr * 2);  // byte rate
  w16(2);       // block align
  w16(16);      // bits
  f.write("data", 4);
  w32(data_size);

  WavWriteResult r;
  for (double x : w.samples) {
    long v = std::lround(x * 32768.0);  // half away from zero
    if (v > 32767) {
      v = 32767;
      ++r.clipped;
    } else if (v < -32768) {
      v = -32768;
      ++r.clipped;
    }
    const std::int16_t s = static_cast<std::int16_t>(v);
    f.write(reinterpret_cast<const char*>(&s), 2);
  }
  if (!f) throw IoError("wav_write: write failed " + path);
  return r;
}

// ---------------------------------------------------------------------------
// Synthetic corpus: harmonic "speech-like" clean clips; white, pink and
// band-limited burst noise.
// ---------------------------------------------------------------------------

inline constexpr double kCleanPeak = 0.89;  // headroom before mixing

inline void normalize_peak(std::vector<double>& x, double peak) {
  double m = 0.0;
  for (double v : x) m = std::max(m, std::abs(v));
  if (m <= 0.0) return;
  const double s = peak / m;
  for (double& v : x) v *= s;
}

inline dsp::Waveform synth_clean_clip(Rng& rng, int n, int sample_rate) {
  dsp::Waveform w;
  w.sample_rate = sample_rate;
  w.samples.assign(static_cast<std::size_t>(n), 0.0);

  const double f0 = rng.uniform(100.0, 240.0);
  const double drift_depth = rng.uniform(0.02, 0.10);
  const double drift_rate = rng.uniform(0.4, 2.0);
  const double drift_phase = rng.uniform(0.0, 2.0 * M_PI);
  const int harmonics = static_cast<int>(rng.uniform_int(3, 6));
  std::vector<double> amp(static_cast<std::size_t>(harmonics));
  std::vector<double> phase(static_cast<std::size_t>(harmonics));
  for (int h = 0; h < harmonics; ++h) {
    amp[static_cast<std::size_t>(h)] = rng.uniform(0.6, 1.0) / std::pow(h + 1.0, 1.2);
    phase[static_cast<std::size_t>(h)] = rng.uniform(0.0, 2.0 * M_PI);
  }
  const double am_rate = rng.uniform(1.5, 4.0);
  const double am_phase = rng.uniform(0.0, 2.0 * M_PI);

  double inst_phase = 0.0;
  const double dt = 1.0 / sample_rate;
  for (int i = 0; i < n; ++i) {
    const double t = i * dt;
    const double f = f0 * (1.0 + drift_depth * std::sin(2.0 * M_PI * drift_rate * t + drift_phase));
    inst_phase += 2.0 * M_PI * f * dt;
    double s = 0.0;
    for (int h = 0; h < harmonics; ++h)
      s += amp[static_cast<std::size_t>(h)] *
           std::sin((h + 1.0) * inst_phase + phase[static_cast<std::size_t>(h)]);
    // attack/release plus slow syllabic modulation
    const double edge = std::min({1.0, i / (0.02 * sample_rate), (n - 1 - i) / (0.02 * sample_rate)});
    const double am = 0.55 + 0.45 * std::sin(2.0 * M_PI * am_rate * t + am_phase);
    w.samples[static_cast<std::size_t>(i)] = s * edge * am;
  }
  normalize_peak(w.samples, kCleanPeak);
  return w;
}

enum class NoiseType { white, pink, burst };

inline const char* noise_type_name(NoiseType t) {
  switch (t) {
    case NoiseType::white: return "white";
    case NoiseType::pink: return "pink";
    case NoiseType::burst: return "burst";
  }
  return "?";
}

inline dsp::Waveform synth_noise_clip(Rng& rng, NoiseType type, int n, int sample_rate) {
  dsp::Waveform w;
  w.sample_rate = sample_rate;
  w.samples.assign(static_cast<std::size_t>(n), 0.0);

  if (type == NoiseType::white) {
    for (auto& v : w.samples) v = rng.normal();
  } else {
    // shape white noise in the frequency domain
    int nfft = 1;
    while (nfft < n) nfft <<= 1;
    std::vector<std::complex<double>> spec(static_cast<std::size_t>(nfft), 0.0);
    double f_lo = 0.0, f_hi = sample_rate / 2.0;
    if (type == NoiseType::burst) {
      f_lo = rng.uniform(300.0, 1200.0);
      f_hi = f_lo + rng.uniform(500.0, 2500.0);
    }
    for (int k = 1; k <= nfft / 2; ++k) {
      const double freq = static_cast<double>(k) * sample_rate / nfft;
      double mag;
      if (type == NoiseType::pink) {
        mag = 1.0 / std::sqrt(freq);
      } else {
        mag = (freq >= f_lo && freq <= f_hi) ? 1.0 : 0.0;
      }
      const double ph = rng.uniform(0.0, 2.0 * M_PI);
      const std::complex<double> c = std::polar(mag, ph);
      spec[static_cast<std::size_t>(k)] = c;
      if (k < nfft / 2) spec[static_cast<std::size_t>(nfft - k)] = std::conj(c);
      else spec[static_cast<std::size_t>(k)] = std::complex<double>(mag, 0.0);
    }
    dsp::detail::fft_inplace(spec.data(), nfft, true);
    for (int i = 0; i < n; ++i) w.samples[static_cast<std::size_t>(i)] = spec[static_cast<std::size_t>(i)].real() / nfft;
    if (type == NoiseType::burst) {
      // gated on/off envelope with short raised-cosine edges
      const int ramp = sample_rate / 100;
      int i = 0;
      bool on = rng.uniform() < 0.5;
      while (i < n) {
        const int dur = static_cast<int>(rng.uniform(on ? 0.04 : 0.03, on ? 0.15 : 0.12) * sample_rate);
        for (int j = 0; j < dur && i < n; ++j, ++i) {
          double g = on ? 1.0 : 0.1;
          if (on && j < ramp) g = 0.1 + 0.9 * 0.5 * (1.0 - std::cos(M_PI * j / ramp));
          w.samples[static_cast<std::size_t>(i)] *= g;
        }
        on = !on;
      }
    }
  }
  normalize_peak(w.samples, kCleanPeak);
  return w;
}

// ---------------------------------------------------------------------------
// SNR mixing
// ---------------------------------------------------------------------------

struct MixResult {
  dsp::Waveform mix;
  double noise_gain = 1.0;   // applied to the (tiled) noise before adding
  double peak_scale = 1.0;   // common rescale applied to the sum
};

inline double mean_power(const std::vector<double>& x) {
  double s = 0.0;
  for (double v : x) s += v * v;
  return s / static_cast<double>(x.size());
}

inline MixResult mix_at_snr(const dsp::Waveform& clean, const dsp::Waveform& noise,
                            double snr_db) {
  if (clean.sample_rate != noise.sample_rate)
    throw LengthMismatch("mix_at_snr: sample rates differ");
  if (!std::isfinite(snr_db)) throw Error("mix_at_snr: SNR must be finite");
  if (clean.samples.empty() || noise.samples.empty())
    throw Error("mix_at_snr: empty input");

  const std::size_t n = clean.samples.size();
  std::vector<double> tiled(n);
  for (std::size_t i = 0; i < n; ++i) tiled[i] = noise.samples[i % noise.samples.size()];

  const double p_clean = mean_power(clean.samples);
  if (p_clean <= 0.0) throw SilentClean("mix_at_snr: clean signal has zero power");
  const double p_noise = mean_power(tiled);
  if (p_noise <= 0.0) throw Error("mix_at_snr: noise signal has zero power");

  MixResult r;
  r.noise_gain = std::sqrt(p_clean / (p_noise * std::pow(10.0, snr_db / 10.0)));
  r.mix.sample_rate = clean.sample_rate;
  r.mix.samples.resize(n);
  double peak = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    r.mix.samples[i] = clean.samples[i] + r.noise_gain * tiled[i];
    peak = std::max(peak, std::abs(r.mix.samples[i]));
  }
  if (peak > 0.999) {
    r.peak_scale = 0.999 / peak;
    for (auto& v : r.mix.samples) v *= r.peak_scale;
  }
  return r;
}

// ---------------------------------------------------------------------------
// Manifest (JSON lines, one entry per mixture)
// ---------------------------------------------------------------------------

struct MixEntry {
  std::string clean_path;
  std::string noise_path;
  std::string mix_path;
  double snr_db = 0.0;
  std::string split;  // "train" | "test"
  std::uint64_t seed = 0;
};

struct Manifest {
  std::vector<MixEntry> entries;
  std::string root;  // directory the relative paths resolve against

  std::vector<const MixEntry*> split_entries(const std::string& split) const {
    std::vector<const MixEntry*> out;
    for (const auto& e : entries)
      if (e.split == split) out.push_back(&e);
    return out;
  }
};

inline void check_relative(const std::string& p) {
  const fs::path path(p);
  if (path.is_absolute()) throw ConfigError("manifest: absolute path not allowed: " + p);
  for (const auto& part : path)
    if (part == "..") throw ConfigError("manifest: path escapes corpus root: " + p);
}

inline void save_manifest(const std::string& path, const Manifest& m) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("save_manifest: cannot open " + path);
  for (const auto& e : m.entries) {
    nlohmann::ordered_json j;
    j["clean_path"] = e.clean_path;
    j["noise_path"] = e.noise_path;
    j["mix_path"] = e.mix_path;
    j["snr_db"] = e.snr_db;
    j["split"] = e.split;
    j["seed"] = e.seed;
    f << j.dump() << "\n";
  }
  if (!f) throw IoError("save_manifest: write failed");
}

inline Manifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("load_manifest: cannot open " + path);
  Manifest m;
  m.root = fs::path(path).parent_path().string();
  if (m.root.empty()) m.root = ".";
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("load_manifest: bad JSON line: ") + e.what());
    }
    MixEntry e;
    e.clean_path = j.at("clean_path").get<std::string>();
    e.noise_path = j.at("noise_path").get<std::string>();
    e.mix_path = j.at("mix_path").get<std::string>();
    e.snr_db = j.at("snr_db").get<double>();
    e.split = j.at("split").get<std::string>();
    e.seed = j.at("seed").get<std::uint64_t>();
    check_relative(e.clean_path);
    check_relative(e.noise_path);
    check_relative(e.mix_path);
    if (e.split != "train" && e.split != "test")
      throw ConfigError("load_manifest: unknown split " + e.split);
    m.entries.push_back(std::move(e));
  }
  if (m.entries.empty()) throw EmptyCorpus("load_manifest: no entries");
  return m;
}

inline std::string resolve(const Manifest& m, const std::string& rel) {
  return (fs::path(m.root) / rel).string();
}

inline std::uint64_t file_hash(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("file_hash: cannot open " + path);
  std::vector<char> bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return fnv1a(bytes.data(), bytes.size());
}

// ---------------------------------------------------------------------------
// Corpus generation: clean and noise sets, mixtures at the protocol SNRs,
// manifest with disjoint noise types between splits (train: white/pink,
// test: burst).
// ---------------------------------------------------------------------------

inline const std::vector<double>& train_snrs() {
  static const std::vector<double> v{0.0, 5.0, 10.0, 15.0};
  return v;
}

inline const std::vector<double>& test_snrs() {
  static const std::vector<double> v{2.5, 7.5, 12.5, 17.5};
  return v;
}

// The corpus layout build_manifest understands (and generate_corpus emits):
//   clean/<split>_<index>.wav
//   noise/<split>_<type>_<index>.wav
// Noise types must not overlap between train and test ("unseen" noise).

inline std::string noise_type_of(const std::string& rel_path) {
  std::string stem = fs::path(rel_path).stem().string();
  const auto us = stem.find('_');
  if (us == std::string::npos) return stem;
  std::string rest = stem.substr(us + 1);  // drop the split prefix
  const auto last = rest.rfind('_');
  if (last != std::string::npos && last > 0) rest = rest.substr(0, last);
  return rest;
}

// Deterministic mixture assignment over an existing clean/noise corpus:
// clean clip i meets noise i mod |noises| at the i-th SNR of its split's
// grid. Mixture WAVs are written under mix/, the manifest next to them.
inline Manifest build_manifest(const std::string& corpus_root,
                               const std::vector<double>& snrs_train,
                               const std::vector<double>& snrs_test, std::uint64_t seed) {
  const fs::path root(corpus_root);
  if (!fs::exists(root / "clean") || !fs::exists(root / "noise"))
    throw EmptyCorpus("build_manifest: corpus needs clean/ and noise/ under " + corpus_root);
  fs::create_directories(root / "mix");

  auto list_sorted = [](const fs::path& dir, const std::string& prefix) {
    std::vector<std::string> out;
    for (const auto& entry : fs::directory_iterator(dir)) {
      const std::string name = entry.path().filename().string();
      if (name.rfind(prefix, 0) == 0 && entry.path().extension() == ".wav")
        out.push_back((dir.filename() / name).string());
    }
    std::sort(out.begin(), out.end());
    return out;
  };

  // unseen-noise protocol: the splits may not share a noise type; checked
  // over the files present, before any mixture is written
  {
    std::set<std::string> train_types, test_types;
    for (const auto& p : list_sorted(root / "noise", "train_"))
      train_types.insert(noise_type_of(p));
    for (const auto& p : list_sorted(root / "noise", "test_"))
      test_types.insert(noise_type_of(p));
    for (const auto& t : train_types)
      if (test_types.count(t))
        throw ConfigError("build_manifest: noise type '" + t + "' appears in both splits");
  }

  Manifest manifest;
  manifest.root = root.string();
  for (const char* split : {"train", "test"}) {
    const bool is_train = std::string(split) == "train";
    const auto cleans = list_sorted(root / "clean", std::string(split) + "_");
    const auto noises = list_sorted(root / "noise", std::string(split) + "_");
    if (cleans.empty() || noises.empty())
      throw EmptyCorpus(std::string("build_manifest: no ") + split + " clean or noise clips");
    const auto& snrs = is_train ? snrs_train : snrs_test;
    if (snrs.empty()) throw ConfigError("build_manifest: empty SNR grid");

    std::vector<dsp::Waveform> noise_waves;
    noise_waves.reserve(noises.size());
    for (const auto& p : noises) noise_waves.push_back(wav_read((root / p).string()));

    char name[64];
    for (std::size_t i = 0; i < cleans.size(); ++i) {
      const auto clean = wav_read((root / cleans[i]).string());
      const std::size_t noise_idx = i % noises.size();
      const double snr = snrs[i % snrs.size()];
      const MixResult mr = mix_at_snr(clean, noise_waves[noise_idx], snr);
      std::snprintf(name, sizeof(name), "mix/%s_%04d.wav", split, static_cast<int>(i));
      wav_write((root / name).string(), mr.mix);

      MixEntry e;
      e.clean_path = cleans[i];
      e.noise_path = noises[noise_idx];
      e.mix_path = name;
      e.snr_db = snr;
      e.split = split;
      e.seed = mix_seed(seed, (is_train ? 0x10000u : 0x20000u) + static_cast<std::uint64_t>(i));
      manifest.entries.push_back(std::move(e));
    }
  }

  save_manifest((root / "manifest.jsonl").string(), manifest);
  return manifest;
}

struct GenDataConfig {
  std::string out_dir;
  int clips = 200;  // train clips; test count derived as max(1, clips/5)
  double seconds = 1.0;
  int sample_rate = 16000;
  std::uint64_t seed = 1234;
};

struct GenDataResult {
  std::string manifest_path;
  int n_train = 0;
  int n_test = 0;
  double total_duration_s = 0.0;
  std::uint64_t manifest_hash = 0;
};

inline GenDataResult generate_corpus(const GenDataConfig& cfg) {
  if (cfg.clips < 1) throw ConfigError("gen-data: clips must be >= 1");
  if (cfg.seconds <= 0.0) throw ConfigError("gen-data: seconds must be > 0");
  const int n = static_cast<int>(cfg.seconds * cfg.sample_rate);
  const int n_train = cfg.clips;
  const int n_test = std::max(1, cfg.clips / 5);
  const int n_noise_train = std::max(2, n_train / 8);
  const int n_noise_test = std::max(1, n_test / 4);

  const fs::path root(cfg.out_dir);
  fs::create_directories(root / "clean");
  fs::create_directories(root / "noise");

  char name[64];
  for (int i = 0; i < n_noise_train; ++i) {
    const NoiseType type = i % 2 == 0 ? NoiseType::white : NoiseType::pink;
    Rng rng(mix_seed(cfg.seed, 0x1000 + static_cast<std::uint64_t>(i)));
    std::snprintf(name, sizeof(name), "noise/train_%s_%04d.wav", noise_type_name(type), i);
    wav_write((root / name).string(), synth_noise_clip(rng, type, n, cfg.sample_rate));
  }
  for (int i = 0; i < n_noise_test; ++i) {
    Rng rng(mix_seed(cfg.seed, 0x2000 + static_cast<std::uint64_t>(i)));
    std::snprintf(name, sizeof(name), "noise/test_burst_%04d.wav", i);
    wav_write((root / name).string(), synth_noise_clip(rng, NoiseType::burst, n, cfg.sample_rate));
  }
  for (int i = 0; i < n_train; ++i) {
    Rng rng(mix_seed(cfg.seed, 0x10000 + static_cast<std::uint64_t>(i)));
    std::snprintf(name, sizeof(name), "clean/train_%04d.wav", i);
    wav_write((root / name).string(), synth_clean_clip(rng, n, cfg.sample_rate));
  }
  for (int i = 0; i < n_test; ++i) {
    Rng rng(mix_seed(cfg.seed, 0x20000 + static_cast<std::uint64_t>(i)));
    std::snprintf(name, sizeof(name), "clean/test_%04d.wav", i);
    wav_write((root / name).string(), synth_clean_clip(rng, n, cfg.sample_rate));
  }

  build_manifest(cfg.out_dir, train_snrs(), test_snrs(), cfg.seed);

  GenDataResult r;
  r.manifest_path = (root / "manifest.jsonl").string();
  r.n_train = n_train;
  r.n_test = n_test;
  r.total_duration_s = (n_train + n_test) * cfg.seconds;
  r.manifest_hash = file_hash(r.manifest_path);
  return r;
}

// ---------------------------------------------------------------------------
// Clean* cache: the clean reference after one STFT->iSTFT round trip, plus
// its spectrogram. Keyed per entry and per STFT parameter hash so stale
// entries cannot survive a parameter change.
// ---------------------------------------------------------------------------

inline std::uint64_t stft_param_hash(const dsp::StftParams& p) {
  std::uint64_t h = fnv1a(&p.fft_size, sizeof(p.fft_size));
  h = fnv1a(&p.hop, sizeof(p.hop), h);
  const int w = static_cast<int>(p.window);
  h = fnv1a(&w, sizeof(w), h);
  const int c = p.center_pad ? 1 : 0;
  return fnv1a(&c, sizeof(c), h);
}

struct CleanStar {
  dsp::Waveform wave;        // istft(stft(y))
  dsp::Spectrogram spec;     // stft of the wave above
};

class CleanStarCache {
 public:
  std::shared_ptr<const CleanStar> get(const std::string& entry_key, const dsp::Waveform& clean,
                                       const dsp::StftParams& params) {
    const auto key = std::make_pair(entry_key, stft_param_hash(params));
    auto it = cache_.find(key);
    if (it != cache_.end()) return it->second;
    auto star = std::make_shared<CleanStar>();
    star->wave = dsp::istft(dsp::stft(clean, params));
    star->spec = dsp::stft(star->wave, params);
    cache_[key] = star;
    return star;
  }

  std::size_t size() const { return cache_.size(); }

 private:
  std::map<std::pair<std::string, std::uint64_t>, std::shared_ptr<const CleanStar>> cache_;
};

}  // namespace scpgan::data
