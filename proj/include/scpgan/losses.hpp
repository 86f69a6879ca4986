#pragma once

#include <optional>
#include <tuple>

#include "scpgan/autonn.hpp"
#include "scpgan/dsp.hpp"
#include "scpgan/metrics.hpp"
#include "scpgan/nets.hpp"
#include "scpgan/surgery.hpp"

namespace scpgan::losses {

using autonn::Tape;
using autonn::TensorPtr;

struct GenLossConfig {
  double lambda_adv = 1.0;
  double lambda_time = 10.0;
  double lambda_mag = 1.0;
  bool cp_enabled = false;
  double mag_compression = 0.3;

  void validate() const {
    if (lambda_adv < 0.0 || lambda_time < 0.0 || lambda_mag < 0.0)
      throw ConfigError("gen_loss: weights must be nonnegative");
    if (lambda_adv + lambda_time + lambda_mag <= 0.0)
      throw ConfigError("gen_loss: at least one weight must be positive");
    if (mag_compression <= 0.0 || mag_compression > 1.0)
      throw ConfigError("gen_loss.mag_compression: must be in (0, 1]");
  }
};

// ---------------------------------------------------------------------------
// Plain (value-level) losses
// ---------------------------------------------------------------------------

inline double time_loss(const dsp::Waveform& a, const dsp::Waveform& b) {
  if (a.samples.size() != b.samples.size()) throw LengthMismatch("time_loss: lengths differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.samples.size(); ++i) s += std::abs(a.samples[i] - b.samples[i]);
  return s / static_cast<double>(a.samples.size());
}

inline double tf_mag_loss(const dsp::Spectrogram& a, const dsp::Spectrogram& b,
                          double compression = 0.3) {
  if (a.frames != b.frames || a.num_bins != b.num_bins)
    throw ShapeMismatch("tf_mag_loss: shapes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < a.bins.size(); ++i) {
    const double d = std::pow(std::abs(a.bins[i]), compression) -
                     std::pow(std::abs(b.bins[i]), compression);
    s += d * d;
  }
  return s / static_cast<double>(a.bins.size());
}

// mean of (d - q)^2 over a batch, value level
inline double metric_regression(const std::vector<double>& d_out, const std::vector<double>& q) {
  if (d_out.size() != q.size() || d_out.empty())
    throw LengthMismatch("metric_regression: batch sizes differ");
  double s = 0.0;
  for (std::size_t i = 0; i < d_out.size(); ++i) {
    const double d = d_out[i] - q[i];
    s += d * d;
  }
  return s / static_cast<double>(d_out.size());
}

// ---------------------------------------------------------------------------
// Differentiable STFT / iSTFT. Framing is a gather, the DFT is a matmul with
// fixed windowed bases, overlap-add is a scatter; every piece has an exact
// adjoint, so the whole consistency path is differentiable end to end and
// matches dsp::stft / dsp::istft to rounding error.
// ---------------------------------------------------------------------------

struct GraphDspPlan {
  dsp::StftParams params;
  int length = 0;
  int frames = 0;
  int bins = 0;
  int fft_size = 0;
  int padded_len = 0;
  autonn::IndexPlan frame_idx;  // [T*N] -> [0, length)
  autonn::IndexPlan ola_idx;    // [T*N] -> [0, padded_len)
  autonn::IndexPlan trim_idx;   // [length] -> padded position
  std::shared_ptr<const std::vector<double>> analysis_tiled;   // [T*N]
  std::shared_ptr<const std::vector<double>> synthesis_tiled;  // [T*N]
  std::shared_ptr<const std::vector<double>> inv_envelope;     // [padded_len]
  TensorPtr dft_cos, dft_msin;    // [N, bins]
  TensorPtr idft_cos, idft_msin;  // [bins, N]
};

inline std::shared_ptr<const GraphDspPlan> graph_plan(const dsp::StftParams& params, int length) {
  static std::mutex mu;
  static std::map<std::tuple<int, int, int, int, int>, std::shared_ptr<const GraphDspPlan>> cache;
  const auto key = std::make_tuple(params.fft_size, params.hop, static_cast<int>(params.window),
                                   params.center_pad ? 1 : 0, length);
  std::lock_guard<std::mutex> lock(mu);
  auto it = cache.find(key);
  if (it != cache.end()) return it->second;

  const dsp::FramePlan fp = dsp::make_frame_plan(params, length);
  const int n = params.fft_size;
  const int bins = params.bins();
  auto plan = std::make_shared<GraphDspPlan>();
  plan->params = params;
  plan->length = length;
  plan->frames = fp.frames;
  plan->bins = bins;
  plan->fft_size = n;
  plan->padded_len = fp.padded_len;

  plan->frame_idx = std::make_shared<const std::vector<int>>(fp.sample_index);
  {
    std::vector<int> ola(static_cast<std::size_t>(fp.frames) * n);
    for (int t = 0; t < fp.frames; ++t)
      for (int i = 0; i < n; ++i)
        ola[static_cast<std::size_t>(t) * n + i] = t * params.hop + i;
    plan->ola_idx = std::make_shared<const std::vector<int>>(std::move(ola));
    std::vector<int> trim(static_cast<std::size_t>(length));
    for (int j = 0; j < length; ++j) trim[static_cast<std::size_t>(j)] = j + fp.left_pad;
    plan->trim_idx = std::make_shared<const std::vector<int>>(std::move(trim));
  }

  const auto wa = dsp::make_window(params.window, n);
  const auto ws = dsp::synthesis_window(wa, params.hop);
  {
    std::vector<double> ta(static_cast<std::size_t>(fp.frames) * n);
    std::vector<double> ts(static_cast<std::size_t>(fp.frames) * n);
    for (int t = 0; t < fp.frames; ++t)
      for (int i = 0; i < n; ++i) {
        ta[static_cast<std::size_t>(t) * n + i] = wa[static_cast<std::size_t>(i)];
        ts[static_cast<std::size_t>(t) * n + i] = ws[static_cast<std::size_t>(i)];
      }
    plan->analysis_tiled = std::make_shared<const std::vector<double>>(std::move(ta));
    plan->synthesis_tiled = std::make_shared<const std::vector<double>>(std::move(ts));
    std::vector<double> inv(fp.envelope.size());
    constexpr double kEnvFloor = 1e-8;
    for (std::size_t i = 0; i < inv.size(); ++i)
      inv[i] = fp.envelope[i] > kEnvFloor ? 1.0 / fp.envelope[i] : 0.0;
    plan->inv_envelope = std::make_shared<const std::vector<double>>(std::move(inv));
  }

  std::vector<double> fc(static_cast<std::size_t>(n) * bins);
  std::vector<double> fs(static_cast<std::size_t>(n) * bins);
  std::vector<double> ic(static_cast<std::size_t>(bins) * n);
  std::vector<double> is(static_cast<std::size_t>(bins) * n);
  for (int i = 0; i < n; ++i)
    for (int k = 0; k < bins; ++k) {
      const double ang = 2.0 * M_PI * static_cast<double>(i) * k / n;
      fc[static_cast<std::size_t>(i) * bins + k] = std::cos(ang);
      fs[static_cast<std::size_t>(i) * bins + k] = -std::sin(ang);
      const double alpha = (k == 0 || k == bins - 1) ? 1.0 : 2.0;
      ic[static_cast<std::size_t>(k) * n + i] = alpha * std::cos(ang) / n;
      is[static_cast<std::size_t>(k) * n + i] = -alpha * std::sin(ang) / n;
    }
  plan->dft_cos = autonn::make_const({n, bins}, std::move(fc));
  plan->dft_msin = autonn::make_const({n, bins}, std::move(fs));
  plan->idft_cos = autonn::make_const({bins, n}, std::move(ic));
  plan->idft_msin = autonn::make_const({bins, n}, std::move(is));

  std::shared_ptr<const GraphDspPlan> cplan = plan;
  cache[key] = cplan;
  return cplan;
}

// Complex spectrogram in the graph: real and imaginary planes [frames, bins].
struct SpecTensor {
  TensorPtr re;
  TensorPtr im;
  int frames = 0;
  int bins = 0;
  dsp::StftParams params;
  int origin_length = 0;
  int sample_rate = 16000;
};

inline SpecTensor spec_to_tensors(const dsp::Spectrogram& s) {
  SpecTensor out;
  out.frames = s.frames;
  out.bins = s.num_bins;
  out.params = s.params;
  out.origin_length = s.origin_length;
  out.sample_rate = s.sample_rate;
  std::vector<double> re(s.bins.size()), im(s.bins.size());
  for (std::size_t i = 0; i < s.bins.size(); ++i) {
    re[i] = s.bins[i].real();
    im[i] = s.bins[i].imag();
  }
  out.re = autonn::make_const({s.frames, s.num_bins}, std::move(re));
  out.im = autonn::make_const({s.frames, s.num_bins}, std::move(im));
  return out;
}

inline dsp::Spectrogram tensors_to_spec(const SpecTensor& s) {
  dsp::Spectrogram out;
  out.frames = s.frames;
  out.num_bins = s.bins;
  out.params = s.params;
  out.origin_length = s.origin_length;
  out.sample_rate = s.sample_rate;
  out.bins.resize(s.re->numel());
  for (std::size_t i = 0; i < out.bins.size(); ++i)
    out.bins[i] = {s.re->value[i], s.im->value[i]};
  return out;
}

inline TensorPtr stft_graph_wave_to_frames(Tape* tape, const TensorPtr& wave,
                                           const GraphDspPlan& plan) {
  auto frames = autonn::take(tape, wave, plan.frame_idx, {plan.frames, plan.fft_size});
  return autonn::mul_coeff(tape, frames, plan.analysis_tiled);
}

inline SpecTensor stft_graph(Tape* tape, const TensorPtr& wave, const GraphDspPlan& plan,
                             int sample_rate = 16000) {
  if (wave->numel() != static_cast<std::size_t>(plan.length))
    throw ShapeMismatch("stft_graph: wave length mismatch");
  auto windowed = stft_graph_wave_to_frames(tape, wave, plan);
  SpecTensor out;
  out.re = autonn::matmul(tape, windowed, plan.dft_cos);
  out.im = autonn::matmul(tape, windowed, plan.dft_msin);
  out.frames = plan.frames;
  out.bins = plan.bins;
  out.params = plan.params;
  out.origin_length = plan.length;
  out.sample_rate = sample_rate;
  return out;
}

inline TensorPtr istft_graph(Tape* tape, const SpecTensor& spec, const GraphDspPlan& plan) {
  if (!(spec.params == plan.params) || spec.origin_length != plan.length)
    throw ParamMismatch("istft_graph: plan does not match spectrogram");
  auto t1 = autonn::matmul(tape, spec.re, plan.idft_cos);
  auto t2 = autonn::matmul(tape, spec.im, plan.idft_msin);
  auto frames = autonn::add(tape, t1, t2);
  auto windowed = autonn::mul_coeff(tape, frames, plan.synthesis_tiled);
  auto padded = autonn::scatter_add(tape, windowed, plan.ola_idx, plan.padded_len);
  auto normalized = autonn::mul_coeff(tape, padded, plan.inv_envelope);
  return autonn::take(tape, normalized, plan.trim_idx, {plan.length});
}

// ---------------------------------------------------------------------------
// CP wrap: route a (possibly inconsistent) spectrogram through iSTFT -> STFT
// so downstream losses only ever see signals realizable in the time domain.
// ---------------------------------------------------------------------------

struct CpResult {
  TensorPtr wave;       // [length]
  SpecTensor consistent;
};

inline CpResult cp_wrap(Tape* tape, const SpecTensor& enh, const GraphDspPlan& plan) {
  CpResult r;
  r.wave = istft_graph(tape, enh, plan);
  r.consistent = stft_graph(tape, r.wave, plan, enh.sample_rate);
  return r;
}

// |S| with a guarded sqrt so the gradient stays bounded in silent bins
inline TensorPtr magnitude_graph(Tape* tape, const SpecTensor& s, double eps = 1e-12) {
  auto p = autonn::add(tape, autonn::square(tape, s.re), autonn::square(tape, s.im));
  return autonn::sqrt_eps(tape, p, eps);
}

inline TensorPtr compressed_mag_graph(Tape* tape, const SpecTensor& s, double compression) {
  auto m = magnitude_graph(tape, s);
  if (compression == 1.0) return m;
  return autonn::powc(tape, m, compression);
}

// L1 over samples
inline TensorPtr time_loss_graph(Tape* tape, const TensorPtr& a, const TensorPtr& b) {
  return autonn::mean(tape, autonn::abs_val(tape, autonn::sub(tape, a, b)));
}

// MSE over (already compressed) magnitudes
inline TensorPtr tf_mag_loss_graph(Tape* tape, const TensorPtr& mag_a, const TensorPtr& mag_b) {
  return autonn::mean(tape, autonn::square(tape, autonn::sub(tape, mag_a, mag_b)));
}

// ---------------------------------------------------------------------------
// Discriminator losses: squared regression of D onto the quality metric for
// the clean, enhanced and noisy branches. Q targets enter as constants: no
// gradient flows through the metric.
// ---------------------------------------------------------------------------

// (D(cand, ref) - q)^2 for one pair
inline TensorPtr metric_loss_term(Tape* tape, const autonn::DiscriminatorNet& d,
                                  const TensorPtr& cand_mag, const TensorPtr& ref_mag,
                                  double q_target) {
  auto out = d.forward(tape, cand_mag, ref_mag);
  return autonn::square(tape, autonn::add_scalar(tape, out, -q_target));
}

inline TensorPtr batch_mean(Tape* tape, const std::vector<TensorPtr>& terms) {
  if (terms.empty()) throw LengthMismatch("batch_mean: empty batch");
  TensorPtr acc = terms[0];
  for (std::size_t i = 1; i < terms.size(); ++i) acc = autonn::add(tape, acc, terms[i]);
  return autonn::scale(tape, acc, 1.0 / static_cast<double>(terms.size()));
}

// L_C: mean (D(y, y) - 1)^2, Q(y, y) = 1 by normalization
inline TensorPtr loss_clean(Tape* tape, const autonn::DiscriminatorNet& d,
                            const std::vector<TensorPtr>& clean_mags) {
  std::vector<TensorPtr> terms;
  terms.reserve(clean_mags.size());
  for (const auto& y : clean_mags) terms.push_back(metric_loss_term(tape, d, y, y, 1.0));
  return batch_mean(tape, terms);
}

// L_E / L_N: mean (D(cand, ref) - q)^2 with q precomputed on waveforms
inline TensorPtr loss_vs_metric(Tape* tape, const autonn::DiscriminatorNet& d,
                                const std::vector<TensorPtr>& cand_mags,
                                const std::vector<TensorPtr>& ref_mags,
                                const std::vector<double>& q_targets) {
  if (cand_mags.size() != ref_mags.size() || cand_mags.size() != q_targets.size())
    throw LengthMismatch("loss_vs_metric: batch sizes differ");
  std::vector<TensorPtr> terms;
  terms.reserve(cand_mags.size());
  for (std::size_t i = 0; i < cand_mags.size(); ++i)
    terms.push_back(metric_loss_term(tape, d, cand_mags[i], ref_mags[i], q_targets[i]));
  return batch_mean(tape, terms);
}

// L_E: the candidate magnitudes come from generator output, q from the
// enhanced waveform against the clean one
inline TensorPtr loss_enhanced(Tape* tape, const autonn::DiscriminatorNet& d,
                               const std::vector<TensorPtr>& enh_mags,
                               const std::vector<TensorPtr>& ref_mags,
                               const std::vector<double>& q_targets) {
  return loss_vs_metric(tape, d, enh_mags, ref_mags, q_targets);
}

// L_N: same regression with the noisy input in the candidate slot; enabling
// this is the nd training axis
inline TensorPtr loss_noisy(Tape* tape, const autonn::DiscriminatorNet& d,
                            const std::vector<TensorPtr>& noisy_mags,
                            const std::vector<TensorPtr>& ref_mags,
                            const std::vector<double>& q_targets) {
  return loss_vs_metric(tape, d, noisy_mags, ref_mags, q_targets);
}

// adversarial metric loss for G: mean (D(enh, ref) - 1)^2
inline TensorPtr gen_adv_loss(Tape* tape, const autonn::DiscriminatorNet& d,
                              const TensorPtr& enh_mag, const TensorPtr& ref_mag) {
  return metric_loss_term(tape, d, enh_mag, ref_mag, 1.0);
}

// ---------------------------------------------------------------------------
// Direction selection for the discriminator step
// ---------------------------------------------------------------------------

enum class ScMode { off, sc2, sc3 };

inline const char* sc_mode_name(ScMode m) {
  switch (m) {
    case ScMode::off: return "off";
    case ScMode::sc2: return "sc2";
    case ScMode::sc3: return "sc3";
  }
  return "?";
}

struct GradParts {
  surgery::GradVector gc;
  surgery::GradVector ge;
  std::optional<surgery::GradVector> gn;
};

struct DirectionResult {
  surgery::GradVector direction;
  surgery::ScWeights weights;  // all ones when mode == off
  bool sc_applied = false;
};

inline DirectionResult discriminator_direction(const GradParts& parts, ScMode mode) {
  if (parts.gc.size() != parts.ge.size() ||
      (parts.gn && parts.gn->size() != parts.gc.size()))
    throw LengthMismatch("discriminator_direction: gradient lengths differ");
  DirectionResult r;
  switch (mode) {
    case ScMode::off: {
      r.weights.w_c = 1.0;
      r.weights.w_e = 1.0;
      if (parts.gn) r.weights.w_n = 1.0;
      r.direction = surgery::combine(parts.gc, parts.ge,
                                     parts.gn ? &*parts.gn : nullptr, r.weights);
      return r;
    }
    case ScMode::sc2: {
      r.weights = surgery::sc2_weights(parts.gc, parts.ge);
      if (parts.gn) r.weights.w_n = 1.0;  // an unweighted extra part just adds in
      r.direction = surgery::combine(parts.gc, parts.ge,
                                     parts.gn ? &*parts.gn : nullptr, r.weights);
      r.sc_applied = true;
      return r;
    }
    case ScMode::sc3: {
      if (!parts.gn) throw ModeMismatch("discriminator_direction: sc3 needs the noisy-part gradient");
      r.weights = surgery::sc3_weights(parts.gc, parts.ge, *parts.gn);
      r.direction = surgery::combine(parts.gc, parts.ge, &*parts.gn, r.weights);
      r.sc_applied = true;
      return r;
    }
  }
  throw ModeMismatch("discriminator_direction: unknown mode");
}

}  // namespace scpgan::losses
