#pragma once

#include <limits>

#include "scpgan/common.hpp"
#include "scpgan/dsp.hpp"

namespace scpgan::metrics {

struct SsnrParams {
  int frame_len = 512;          // 32 ms at 16 kHz, no overlap
  double clamp_lo = -10.0;      // dB
  double clamp_hi = 35.0;       // dB
  double silence_floor = -40.0; // dB below the peak clean frame

  void validate() const {
    if (frame_len < 64) throw Error("SsnrParams: frame_len must be >= 64");
    if (!(clamp_lo < clamp_hi)) throw Error("SsnrParams: clamp_lo must be < clamp_hi");
  }
};

// Segmental SNR: mean over non-silent frames of the clamped per-frame log
// power ratio between the clean signal and the residual.
inline double ssnr(const dsp::Waveform& enhanced, const dsp::Waveform& clean,
                   const SsnrParams& p = {}) {
  p.validate();
  if (enhanced.samples.size() != clean.samples.size())
    throw LengthMismatch("ssnr: signal lengths differ");
  if (enhanced.sample_rate != clean.sample_rate)
    throw LengthMismatch("ssnr: sample rates differ");

  const int n_frames = static_cast<int>(clean.samples.size()) / p.frame_len;
  if (n_frames == 0) throw AllSilent("ssnr: signal shorter than one frame");

  std::vector<double> clean_energy(static_cast<std::size_t>(n_frames), 0.0);
  double peak_energy = 0.0;
  for (int f = 0; f < n_frames; ++f) {
    double e = 0.0;
    for (int i = f * p.frame_len; i < (f + 1) * p.frame_len; ++i)
      e += clean.samples[static_cast<std::size_t>(i)] * clean.samples[static_cast<std::size_t>(i)];
    clean_energy[static_cast<std::size_t>(f)] = e;
    peak_energy = std::max(peak_energy, e);
  }
  if (peak_energy <= 0.0) throw AllSilent("ssnr: clean signal is all zero");

  const double gate = peak_energy * std::pow(10.0, p.silence_floor / 10.0);
  double sum = 0.0;
  int used = 0;
  for (int f = 0; f < n_frames; ++f) {
    const double e_clean = clean_energy[static_cast<std::size_t>(f)];
    if (e_clean <= gate) continue;
    double e_err = 0.0;
    for (int i = f * p.frame_len; i < (f + 1) * p.frame_len; ++i) {
      const double d = clean.samples[static_cast<std::size_t>(i)] - enhanced.samples[static_cast<std::size_t>(i)];
      e_err += d * d;
    }
    double ratio_db;
    if (e_err <= 0.0) {
      ratio_db = p.clamp_hi;
    } else {
      ratio_db = 10.0 * std::log10(e_clean / e_err);
    }
    sum += std::clamp(ratio_db, p.clamp_lo, p.clamp_hi);
    ++used;
  }
  if (used == 0) throw AllSilent("ssnr: no frame passed the silence gate");
  return sum / used;
}

// Q maps SSNR linearly to [0, 1]; Q(y, y) = 1 exactly because a zero
// residual clamps at clamp_hi.
inline double q_score(const dsp::Waveform& a, const dsp::Waveform& ref,
                      const SsnrParams& p = {}) {
  const double s = ssnr(a, ref, p);
  return (s - p.clamp_lo) / (p.clamp_hi - p.clamp_lo);
}

}  // namespace scpgan::metrics
