#pragma once

#include <complex>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include "scpgan/common.hpp"

namespace scpgan::dsp {

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

struct Waveform {
  std::vector<double> samples;
  int sample_rate = 16000;

  int length() const { return static_cast<int>(samples.size()); }

  void validate() const {
    if (samples.empty()) throw Error("Waveform: empty");
    if (sample_rate != 8000 && sample_rate != 16000 && sample_rate != 48000)
      throw Error("Waveform: unsupported sample rate " + std::to_string(sample_rate));
    if (!all_finite(samples)) throw NonFinite("Waveform: non-finite sample");
  }
};

enum class WindowKind { hann, sqrt_hann };

inline const char* window_name(WindowKind w) {
  return w == WindowKind::hann ? "hann" : "sqrt_hann";
}

struct StftParams {
  int fft_size = 512;
  int hop = 256;
  WindowKind window = WindowKind::sqrt_hann;
  bool center_pad = true;

  bool operator==(const StftParams&) const = default;

  int bins() const { return fft_size / 2 + 1; }

  void validate() const {
    if (fft_size < 16 || (fft_size & (fft_size - 1)) != 0)
      throw Error("StftParams: fft_size must be a power of two >= 16");
    if (hop <= 0 || fft_size % hop != 0)
      throw Error("StftParams: hop must divide fft_size");
    if (hop > fft_size / 2)
      throw Error("StftParams: hop must be <= fft_size/2");
  }
};

struct Spectrogram {
  std::vector<std::complex<double>> bins;  // row-major [frames x num_bins]
  int frames = 0;
  int num_bins = 0;
  StftParams params;
  int origin_length = 0;
  int sample_rate = 16000;

  std::complex<double>& at(int t, int k) { return bins[static_cast<std::size_t>(t) * num_bins + k]; }
  const std::complex<double>& at(int t, int k) const {
    return bins[static_cast<std::size_t>(t) * num_bins + k];
  }

  double frob_norm() const {
    double s = 0.0;
    for (const auto& c : bins) s += std::norm(c);
    return std::sqrt(s);
  }
};

// ---------------------------------------------------------------------------
// Windows. Analysis windows are periodic; the synthesis window is the dual
// window w_a / D with D the hop-periodic sum of squared analysis samples,
// which makes the analysis*synthesis overlap-add identically 1 for any
// hop dividing fft_size with at least 2x overlap.
// ---------------------------------------------------------------------------

inline std::vector<double> make_window(WindowKind kind, int n) {
  std::vector<double> w(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double hann = 0.5 - 0.5 * std::cos(2.0 * M_PI * i / n);
    w[static_cast<std::size_t>(i)] = kind == WindowKind::hann ? hann : std::sqrt(hann);
  }
  return w;
}

inline std::vector<double> synthesis_window(const std::vector<double>& analysis, int hop) {
  const int n = static_cast<int>(analysis.size());
  std::vector<double> period(static_cast<std::size_t>(hop), 0.0);
  for (int i = 0; i < n; ++i)
    period[static_cast<std::size_t>(i % hop)] += analysis[static_cast<std::size_t>(i)] * analysis[static_cast<std::size_t>(i)];
  std::vector<double> syn(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const double d = period[static_cast<std::size_t>(i % hop)];
    if (d <= 0.0) throw Error("synthesis_window: degenerate overlap power");
    syn[static_cast<std::size_t>(i)] = analysis[static_cast<std::size_t>(i)] / d;
  }
  return syn;
}

// Max deviation of the overlap-added analysis*synthesis product from 1 over
// the steady-state region.
inline double check_cola(const std::vector<double>& analysis,
                         const std::vector<double>& synthesis, int hop) {
  if (analysis.size() != synthesis.size()) throw LengthMismatch("check_cola: window sizes differ");
  const int n = static_cast<int>(analysis.size());
  const int total = 4 * n;
  std::vector<double> acc(static_cast<std::size_t>(total), 0.0);
  for (int start = 0; start + n <= total; start += hop)
    for (int i = 0; i < n; ++i)
      acc[static_cast<std::size_t>(start + i)] +=
          analysis[static_cast<std::size_t>(i)] * synthesis[static_cast<std::size_t>(i)];
  double dev = 0.0;
  for (int p = n; p < total - n; ++p) dev = std::max(dev, std::abs(acc[static_cast<std::size_t>(p)] - 1.0));
  return dev;
}

inline double check_cola(const StftParams& params) {
  params.validate();
  const auto wa = make_window(params.window, params.fft_size);
  return check_cola(wa, synthesis_window(wa, params.hop), params.hop);
}

// ---------------------------------------------------------------------------
// FFT (iterative radix-2, double precision, cached twiddles)
// ---------------------------------------------------------------------------

namespace detail {

struct FftTables {
  std::vector<int> bitrev;
  std::vector<std::complex<double>> twiddle;  // per stage, concatenated
};

inline std::shared_ptr<const FftTables> fft_tables(int n) {
  static std::mutex mu;
  static std::map<int, std::shared_ptr<const FftTables>> cache;
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(n);
  if (it != cache.end()) return it->second;

  auto t = std::make_shared<FftTables>();
  t->bitrev.resize(static_cast<std::size_t>(n));
  int bits = 0;
  while ((1 << bits) < n) ++bits;
  for (int i = 0; i < n; ++i) {
    int r = 0;
    for (int b = 0; b < bits; ++b)
      if (i & (1 << b)) r |= 1 << (bits - 1 - b);
    t->bitrev[static_cast<std::size_t>(i)] = r;
  }
  for (int len = 2; len <= n; len <<= 1)
    for (int j = 0; j < len / 2; ++j)
      t->twiddle.push_back(std::polar(1.0, -2.0 * M_PI * j / len));
  cache[n] = t;
  return t;
}

// In-place forward FFT when inverse=false; unscaled inverse when true
// (caller divides by n).
inline void fft_inplace(std::complex<double>* a, int n, bool inverse) {
  const auto tables = fft_tables(n);
  for (int i = 0; i < n; ++i) {
    const int j = tables->bitrev[static_cast<std::size_t>(i)];
    if (i < j) std::swap(a[i], a[j]);
  }
  std::size_t tw = 0;
  for (int len = 2; len <= n; len <<= 1) {
    const int half = len / 2;
    for (int i = 0; i < n; i += len) {
      for (int j = 0; j < half; ++j) {
        std::complex<double> w = tables->twiddle[tw + static_cast<std::size_t>(j)];
        if (inverse) w = std::conj(w);
        const std::complex<double> u = a[i + j];
        const std::complex<double> v = a[i + j + half] * w;
        a[i + j] = u + v;
        a[i + j + half] = u - v;
      }
    }
    tw += static_cast<std::size_t>(half);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Frame plan: index maps and overlap envelope shared by stft/istft (and by
// the differentiable re-implementations in losses).
// ---------------------------------------------------------------------------

struct FramePlan {
  StftParams params;
  int length = 0;      // original sample count
  int frames = 0;      // T
  int padded_len = 0;  // (T-1)*hop + fft_size
  int left_pad = 0;    // fft_size/2 when centered, else 0
  std::vector<int> sample_index;  // [frames*fft_size] -> original sample index
  std::vector<double> envelope;   // [padded_len] sum of w_a*w_s per padded sample
};

inline FramePlan make_frame_plan(const StftParams& params, int length) {
  params.validate();
  const int n = params.fft_size;
  const int hop = params.hop;
  FramePlan plan;
  plan.params = params;
  plan.length = length;
  if (params.center_pad) {
    if (length < n / 2 + 1)
      throw TooShort("stft: centered mode needs length >= fft_size/2 + 1");
    plan.left_pad = n / 2;
    plan.frames = length / hop + 1;
  } else {
    if (length < n) throw TooShort("stft: length < fft_size");
    plan.left_pad = 0;
    plan.frames = (length - n) / hop + 1;
  }
  plan.padded_len = (plan.frames - 1) * hop + n;

  plan.sample_index.resize(static_cast<std::size_t>(plan.frames) * n);
  for (int t = 0; t < plan.frames; ++t) {
    for (int i = 0; i < n; ++i) {
      int idx = t * hop + i - plan.left_pad;  // reflect at both ends
      while (idx < 0 || idx >= length) {
        if (idx < 0) idx = -idx;
        if (idx >= length) idx = 2 * length - 2 - idx;
      }
      plan.sample_index[static_cast<std::size_t>(t) * n + i] = idx;
    }
  }

  const auto wa = make_window(params.window, n);
  const auto ws = synthesis_window(wa, hop);
  plan.envelope.assign(static_cast<std::size_t>(plan.padded_len), 0.0);
  for (int t = 0; t < plan.frames; ++t)
    for (int i = 0; i < n; ++i)
      plan.envelope[static_cast<std::size_t>(t * hop + i)] += wa[static_cast<std::size_t>(i)] * ws[static_cast<std::size_t>(i)];
  return plan;
}

// ---------------------------------------------------------------------------
// STFT / iSTFT / consistency projection
// ---------------------------------------------------------------------------

inline Spectrogram stft(const Waveform& wave, const StftParams& params) {
  wave.validate();
  const FramePlan plan = make_frame_plan(params, wave.length());
  const int n = params.fft_size;
  const int bins = params.bins();
  const auto wa = make_window(params.window, n);

  Spectrogram spec;
  spec.params = params;
  spec.frames = plan.frames;
  spec.num_bins = bins;
  spec.origin_length = wave.length();
  spec.sample_rate = wave.sample_rate;
  spec.bins.resize(static_cast<std::size_t>(plan.frames) * bins);

  std::vector<std::complex<double>> buf(static_cast<std::size_t>(n));
  for (int t = 0; t < plan.frames; ++t) {
    for (int i = 0; i < n; ++i) {
      const int src = plan.sample_index[static_cast<std::size_t>(t) * n + i];
      buf[static_cast<std::size_t>(i)] = wa[static_cast<std::size_t>(i)] * wave.samples[static_cast<std::size_t>(src)];
    }
    detail::fft_inplace(buf.data(), n, false);
    for (int k = 0; k < bins; ++k) spec.at(t, k) = buf[static_cast<std::size_t>(k)];
    // DC and Nyquist of a real frame are analytically real
    spec.at(t, 0).imag(0.0);
    spec.at(t, bins - 1).imag(0.0);
  }
  if (!all_finite(reinterpret_cast<const double*>(spec.bins.data()), spec.bins.size() * 2))
    throw NonFinite("stft: non-finite output");
  return spec;
}

inline Waveform istft(const Spectrogram& spec, const StftParams& params, int out_length) {
  if (!(params == spec.params)) throw ParamMismatch("istft: params differ from spectrogram's");
  const FramePlan plan = make_frame_plan(params, out_length);
  if (plan.frames != spec.frames)
    throw ParamMismatch("istft: frame count inconsistent with requested length");
  const int n = params.fft_size;
  const int bins = params.bins();
  const auto wa = make_window(params.window, n);
  const auto ws = synthesis_window(wa, params.hop);

  std::vector<double> acc(static_cast<std::size_t>(plan.padded_len), 0.0);
  std::vector<std::complex<double>> buf(static_cast<std::size_t>(n));
  for (int t = 0; t < spec.frames; ++t) {
    buf[0] = std::complex<double>(spec.at(t, 0).real(), 0.0);  // synthesis forces real DC/Nyquist
    buf[static_cast<std::size_t>(n / 2)] = std::complex<double>(spec.at(t, bins - 1).real(), 0.0);
    for (int k = 1; k < n / 2; ++k) {
      buf[static_cast<std::size_t>(k)] = spec.at(t, k);
      buf[static_cast<std::size_t>(n - k)] = std::conj(spec.at(t, k));
    }
    detail::fft_inplace(buf.data(), n, true);
    const double inv_n = 1.0 / n;
    for (int i = 0; i < n; ++i)
      acc[static_cast<std::size_t>(t * params.hop + i)] +=
          buf[static_cast<std::size_t>(i)].real() * inv_n * ws[static_cast<std::size_t>(i)];
  }

  Waveform out;
  out.sample_rate = spec.sample_rate;
  out.samples.resize(static_cast<std::size_t>(out_length));
  constexpr double kEnvFloor = 1e-8;
  for (int j = 0; j < out_length; ++j) {
    const int p = j + plan.left_pad;
    const double env = plan.envelope[static_cast<std::size_t>(p)];
    out.samples[static_cast<std::size_t>(j)] = env > kEnvFloor ? acc[static_cast<std::size_t>(p)] / env : 0.0;
  }
  if (!all_finite(out.samples)) throw NonFinite("istft: non-finite output");
  return out;
}

inline Waveform istft(const Spectrogram& spec) { return istft(spec, spec.params, spec.origin_length); }

inline Spectrogram consistency_project(const Spectrogram& spec) {
  return stft(istft(spec), spec.params);
}

// Every configuration shipped here satisfies COLA by construction; the
// check suite verifies that numerically rather than assuming it.
inline const std::vector<StftParams>& shipped_stft_configs() {
  static const std::vector<StftParams> configs{
      {512, 256, WindowKind::sqrt_hann, true},
      {512, 128, WindowKind::sqrt_hann, true},
      {512, 256, WindowKind::hann, true},
      {256, 128, WindowKind::sqrt_hann, true},
  };
  return configs;
}

// Magnitudes as a flat [frames x num_bins] buffer.
inline std::vector<double> magnitude(const Spectrogram& spec) {
  std::vector<double> m(spec.bins.size());
  for (std::size_t i = 0; i < spec.bins.size(); ++i) m[i] = std::abs(spec.bins[i]);
  return m;
}

}  // namespace scpgan::dsp
