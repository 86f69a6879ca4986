#pragma once

#include <chrono>

#include "scpgan/losses.hpp"
#include "scpgan/nets.hpp"
#include "scpgan/surgery.hpp"

// Randomized property suites behind `check` and the acceptance gate. The
// oracles here take independent numeric routes (compensated summation,
// orthogonality solving, central finite differences) from the code they
// verify.

namespace scpgan::checks {

inline double kahan_dot(const std::vector<double>& a, const std::vector<double>& b) {
  double sum = 0.0, comp = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double y = a[i] * b[i] - comp;
    const double t = sum + y;
    comp = (t - sum) - y;
    sum = t;
  }
  return sum;
}

namespace detail {

inline double elapsed_s(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// random vector at a random magnitude scale; optionally correlated with a base
inline std::vector<double> random_grad(Rng& rng, std::size_t dim, const std::vector<double>* base) {
  std::vector<double> v(dim);
  const double scale = std::pow(10.0, rng.uniform(-6.0, 6.0));
  const int kind = base ? static_cast<int>(rng.uniform_int(0, 2)) : 2;
  const double align = rng.uniform(0.5, 2.0) * (kind == 0 ? -1.0 : 1.0);
  for (std::size_t i = 0; i < dim; ++i) {
    double x = rng.normal();
    if (base && kind < 2) x = align * (*base)[i] + 0.3 * rng.normal() * std::abs((*base)[i] + 0.1);
    v[i] = scale * x;
  }
  return v;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Surgery geometry
// ---------------------------------------------------------------------------

struct SurgeryCheckResult {
  int trials = 0;
  int violations_c = 0;      // <g, grad_c> < -tau under SC2
  int violations_e = 0;      // <g, grad_e> < -tau under SC2
  int violations_n = 0;      // <g, grad_n> < -tau under SC3
  double max_we_rel_err = 0.0;  // closed form vs orthogonality-solving oracle
  double max_wn_rel_err = 0.0;
  double seconds = 0.0;
  bool pass = false;
};

inline SurgeryCheckResult run_surgery_check(std::uint64_t seed, int trials = 10000) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(mix_seed(seed, 0x5bc));
  SurgeryCheckResult r;
  r.trials = trials;

  for (int trial = 0; trial < trials; ++trial) {
    const std::size_t dim = static_cast<std::size_t>(rng.uniform_int(2, 2000));
    const auto gc = detail::random_grad(rng, dim, nullptr);
    const auto ge = detail::random_grad(rng, dim, &gc);
    const auto gn = detail::random_grad(rng, dim, &gc);

    const auto w2 = surgery::sc2_weights(gc, ge);
    const auto g2 = surgery::combine(gc, ge, nullptr, w2);
    {
      const double ng = l2_norm(g2);
      const double tau = 1e-9 * ng * std::max(l2_norm(gc), l2_norm(ge));
      if (surgery::dot(g2, gc) < -tau) ++r.violations_c;
      if (surgery::dot(g2, ge) < -tau) ++r.violations_e;
      if (w2.branch == surgery::Branch::two_part_obtuse && !w2.degenerate) {
        const double denom = kahan_dot(ge, ge);
        if (denom > 0.0) {
          const double w_oracle = -kahan_dot(gc, ge) / denom;
          const double rel = std::abs(w2.w_e - w_oracle) /
                             std::max({std::abs(w_oracle), std::abs(w2.w_e), 1e-300});
          r.max_we_rel_err = std::max(r.max_we_rel_err, rel);
        }
      }
    }

    const auto w3 = surgery::sc3_weights(gc, ge, gn);
    const auto g3 = surgery::combine(gc, ge, &gn, w3);
    {
      const double ng = l2_norm(g3);
      const double tau = 1e-9 * ng * std::max({l2_norm(gc), l2_norm(ge), l2_norm(gn)});
      if (surgery::dot(g3, gn) < -tau) ++r.violations_n;
      const bool corrected = w3.branch == surgery::Branch::acute_obtuse ||
                             w3.branch == surgery::Branch::obtuse_obtuse;
      if (corrected && !w3.degenerate && w3.w_n) {
        // oracle: the w that solves <w_c*gc + w_e*ge + w*gn, gn> = 0
        std::vector<double> comb(dim);
        for (std::size_t i = 0; i < dim; ++i) comb[i] = w3.w_c * gc[i] + w3.w_e * ge[i];
        const double denom = kahan_dot(gn, gn);
        if (denom > 0.0) {
          const double w_oracle = -kahan_dot(comb, gn) / denom;
          const double rel = std::abs(*w3.w_n - w_oracle) /
                             std::max({std::abs(w_oracle), std::abs(*w3.w_n), 1e-300});
          r.max_wn_rel_err = std::max(r.max_wn_rel_err, rel);
        }
      }
    }
  }

  r.seconds = detail::elapsed_s(t0);
  r.pass = r.violations_c == 0 && r.violations_e == 0 && r.violations_n == 0 &&
           r.max_we_rel_err < 1e-9 && r.max_wn_rel_err < 1e-9;
  return r;
}

// ---------------------------------------------------------------------------
// DSP round trips and the consistency projection
// ---------------------------------------------------------------------------

struct DspCheckResult {
  int waves = 0;
  double max_roundtrip_rel = 0.0;
  double max_idempotence_rel = 0.0;
  double max_linearity_rel = 0.0;
  double max_cola_dev = 0.0;
  double max_expansion = 0.0;  // max ||P(S)||_F / ||S||_F over random S
  double seconds = 0.0;
  bool pass = false;
};

namespace detail {

inline dsp::Waveform random_wave(Rng& rng, int len, int sample_rate = 16000) {
  dsp::Waveform w;
  w.sample_rate = sample_rate;
  w.samples.resize(static_cast<std::size_t>(len));
  for (auto& v : w.samples) v = rng.uniform(-1.0, 1.0);
  return w;
}

inline double rel_l2(const std::vector<double>& a, const std::vector<double>& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    num += d * d;
    den += a[i] * a[i];
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

inline double rel_frob(const dsp::Spectrogram& a, const dsp::Spectrogram& b) {
  double num = 0.0, den = 0.0;
  for (std::size_t i = 0; i < a.bins.size(); ++i) {
    num += std::norm(a.bins[i] - b.bins[i]);
    den += std::norm(a.bins[i]);
  }
  return den > 0.0 ? std::sqrt(num / den) : std::sqrt(num);
}

inline dsp::Spectrogram random_spectrogram(Rng& rng, const dsp::StftParams& p, int length) {
  const dsp::FramePlan plan = dsp::make_frame_plan(p, length);
  dsp::Spectrogram s;
  s.params = p;
  s.frames = plan.frames;
  s.num_bins = p.bins();
  s.origin_length = length;
  s.bins.resize(static_cast<std::size_t>(s.frames) * s.num_bins);
  for (auto& c : s.bins) c = {rng.normal(), rng.normal()};
  return s;
}

}  // namespace detail

inline DspCheckResult run_dsp_check(std::uint64_t seed, int n_waves = 100) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(mix_seed(seed, 0xd59));
  DspCheckResult r;
  r.waves = n_waves;

  for (const auto& params : dsp::shipped_stft_configs())
    r.max_cola_dev = std::max(r.max_cola_dev, dsp::check_cola(params));

  const auto& configs = dsp::shipped_stft_configs();
  for (int i = 0; i < n_waves; ++i) {
    const auto& params = configs[static_cast<std::size_t>(i) % configs.size()];
    const int len = static_cast<int>(rng.uniform_int(300, 32000));
    const auto w = detail::random_wave(rng, len);
    const auto spec = dsp::stft(w, params);
    const auto back = dsp::istft(spec);
    r.max_roundtrip_rel = std::max(r.max_roundtrip_rel, detail::rel_l2(w.samples, back.samples));
  }

  for (int i = 0; i < n_waves; ++i) {
    const auto& params = configs[static_cast<std::size_t>(i) % configs.size()];
    const int len = static_cast<int>(rng.uniform_int(300, 8000));
    auto s1 = detail::random_spectrogram(rng, params, len);
    auto s2 = detail::random_spectrogram(rng, params, len);

    const auto p1 = dsp::consistency_project(s1);
    const auto pp1 = dsp::consistency_project(p1);
    r.max_idempotence_rel = std::max(r.max_idempotence_rel, detail::rel_frob(p1, pp1));
    if (s1.frob_norm() > 0.0)
      r.max_expansion = std::max(r.max_expansion, p1.frob_norm() / s1.frob_norm());

    const double a = rng.uniform(-2.0, 2.0), b = rng.uniform(-2.0, 2.0);
    dsp::Spectrogram mixed = s1;
    for (std::size_t k = 0; k < mixed.bins.size(); ++k)
      mixed.bins[k] = a * s1.bins[k] + b * s2.bins[k];
    const auto pm = dsp::consistency_project(mixed);
    const auto p2 = dsp::consistency_project(s2);
    dsp::Spectrogram lin = p1;
    for (std::size_t k = 0; k < lin.bins.size(); ++k)
      lin.bins[k] = a * p1.bins[k] + b * p2.bins[k];
    r.max_linearity_rel = std::max(r.max_linearity_rel, detail::rel_frob(pm, lin));
  }

  r.seconds = detail::elapsed_s(t0);
  r.pass = r.max_roundtrip_rel < 1e-6 && r.max_idempotence_rel < 1e-6 &&
           r.max_linearity_rel < 1e-6 && r.max_cola_dev < 1e-10 &&
           r.max_expansion <= 1.0 + 1e-6;
  return r;
}

// ---------------------------------------------------------------------------
// Autodiff vs central finite differences
// ---------------------------------------------------------------------------

struct AutodiffCheckResult {
  int nets = 0;
  double max_rel_err = 0.0;
  double cp_path_rel_err = 0.0;  // the net whose loss runs through istft->stft
  double seconds = 0.0;
  bool pass = false;
};

// Builds a loss closure over a ParamSet; `make_loss` must rebuild the graph
// from current parameter values on every call.
inline double fd_max_rel_err(autonn::ParamSet& params,
                             const std::function<autonn::TensorPtr(autonn::Tape*)>& make_loss,
                             double h = 1e-4) {
  params.zero_grads();
  autonn::Tape tape;
  const autonn::TensorPtr loss = make_loss(&tape);
  tape.backward(loss);
  const auto grad = params.flatten_grads();

  auto eval = [&]() {
    const autonn::TensorPtr l = make_loss(nullptr);
    return l->value[0];
  };

  double max_rel = 0.0;
  std::size_t off = 0;
  for (const auto& [_, t] : params.items()) {
    for (std::size_t i = 0; i < t->numel(); ++i, ++off) {
      const double saved = t->value[i];
      t->value[i] = saved + h;
      const double fp = eval();
      t->value[i] = saved - h;
      const double fm = eval();
      t->value[i] = saved;
      const double fd = (fp - fm) / (2.0 * h);
      const double rel = std::abs(grad[off] - fd) /
                         std::max({std::abs(grad[off]), std::abs(fd), 1e-8});
      max_rel = std::max(max_rel, rel);
    }
  }
  return max_rel;
}

inline AutodiffCheckResult run_autodiff_check(std::uint64_t seed, int nets = 20) {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(mix_seed(seed, 0xad1f));
  AutodiffCheckResult r;
  r.nets = nets;

  for (int n = 0; n < nets - 1; ++n) {
    const int h = static_cast<int>(rng.uniform_int(6, 10));
    const int w = static_cast<int>(rng.uniform_int(6, 10));
    const int ch = static_cast<int>(rng.uniform_int(2, 3));
    const int k = rng.uniform() < 0.5 ? 3 : 5;
    const int stride = rng.uniform() < 0.3 ? 2 : 1;

    autonn::ParamSet params;
    auto w1 = autonn::make_tensor({ch, 1, k, k});
    auto b1 = autonn::make_tensor({ch});
    auto w2 = autonn::make_tensor({ch, ch, 3, 3});
    auto b2 = autonn::make_tensor({ch});
    for (auto& v : w1->value) v = 0.5 * rng.normal();
    for (auto& v : b1->value) v = 0.1 * rng.normal();
    for (auto& v : w2->value) v = 0.5 * rng.normal();
    for (auto& v : b2->value) v = 0.1 * rng.normal();
    params.add("w1", w1);
    params.add("b1", b1);
    params.add("w2", w2);
    params.add("b2", b2);

    const int ho = (h - 1) / stride + 1, wo = (w - 1) / stride + 1;
    auto wd = autonn::make_tensor({1, ch});
    for (auto& v : wd->value) v = 0.5 * rng.normal();
    auto bd = autonn::make_tensor({1});
    params.add("wd", wd);
    params.add("bd", bd);

    std::vector<double> in_data(static_cast<std::size_t>(h) * w);
    for (auto& v : in_data) v = rng.normal();
    auto input = autonn::make_const({1, h, w}, in_data);
    std::vector<double> tgt(static_cast<std::size_t>(ch) * ho * wo);
    for (auto& v : tgt) v = rng.normal();
    auto target = autonn::make_const({ch, ho, wo}, tgt);

    auto make_loss = [&](autonn::Tape* tape) {
      auto h1 = autonn::relu(tape, autonn::conv2d(tape, input, w1, b1, stride));
      auto h2 = autonn::sigmoid(tape, autonn::conv2d(tape, h1, w2, b2, 1));
      auto err = autonn::mean(tape, autonn::square(tape, autonn::sub(tape, h2, target)));
      auto pooled = autonn::global_mean_channels(tape, h2);
      auto head = autonn::dense(tape, pooled, wd, bd);
      return autonn::add(tape, err, autonn::mean(tape, autonn::square(tape, head)));
    };
    r.max_rel_err = std::max(r.max_rel_err, fd_max_rel_err(params, make_loss));
  }

  // one net whose loss path runs through istft -> stft (the CP path)
  {
    dsp::StftParams sp;
    sp.fft_size = 32;
    sp.hop = 16;
    sp.window = dsp::WindowKind::sqrt_hann;
    sp.center_pad = true;
    const int len = 50;
    const auto plan = losses::graph_plan(sp, len);

    autonn::ParamSet params;
    auto mask = autonn::make_tensor({plan->frames, plan->bins});
    for (auto& v : mask->value) v = rng.uniform(0.1, 0.9);
    params.add("mask", mask);

    const auto base = detail::random_wave(rng, len);
    const auto X = dsp::stft(base, sp);
    std::vector<double> xre(X.bins.size()), xim(X.bins.size());
    for (std::size_t i = 0; i < X.bins.size(); ++i) {
      xre[i] = X.bins[i].real();
      xim[i] = X.bins[i].imag();
    }
    auto Xre = autonn::make_const({plan->frames, plan->bins}, xre);
    auto Xim = autonn::make_const({plan->frames, plan->bins}, xim);
    std::vector<double> twave(static_cast<std::size_t>(len));
    for (auto& v : twave) v = rng.normal();
    auto target_wave = autonn::make_const({len}, twave);
    std::vector<double> tmag(X.bins.size());
    for (auto& v : tmag) v = std::abs(rng.normal());
    auto target_mag = autonn::make_const({plan->frames, plan->bins}, tmag);

    auto make_loss = [&](autonn::Tape* tape) {
      losses::SpecTensor enh;
      enh.re = autonn::mul(tape, mask, Xre);
      enh.im = autonn::mul(tape, mask, Xim);
      enh.frames = plan->frames;
      enh.bins = plan->bins;
      enh.params = sp;
      enh.origin_length = len;
      const auto cp = losses::cp_wrap(tape, enh, *plan);
      auto wave_err = autonn::mean(tape, autonn::square(tape, autonn::sub(tape, cp.wave, target_wave)));
      auto mag = losses::compressed_mag_graph(tape, cp.consistent, 0.3);
      auto mag_err = autonn::mean(tape, autonn::square(tape, autonn::sub(tape, mag, target_mag)));
      return autonn::add(tape, wave_err, mag_err);
    };
    r.cp_path_rel_err = fd_max_rel_err(params, make_loss);
    r.max_rel_err = std::max(r.max_rel_err, r.cp_path_rel_err);
  }

  r.seconds = detail::elapsed_s(t0);
  r.pass = r.max_rel_err < 1e-4;
  return r;
}

}  // namespace scpgan::checks
