#include <catch2/catch_amalgamated.hpp>

#include "scpgan/checks.hpp"
#include "scpgan/losses.hpp"

using namespace scpgan;
using namespace scpgan::losses;
using autonn::make_const;
using autonn::make_tensor;
using autonn::Tape;
using autonn::TensorPtr;
using Catch::Approx;

namespace {

dsp::Waveform random_wave(Rng& rng, int len) {
  dsp::Waveform w;
  w.samples.resize(static_cast<std::size_t>(len));
  for (auto& v : w.samples) v = rng.uniform(-1.0, 1.0);
  return w;
}

SpecTensor const_spec(const dsp::Spectrogram& s) { return spec_to_tensors(s); }

}  // namespace

TEST_CASE("metric regression arithmetic", "[losses]") {
  SECTION("D = 0.6 against target 1 on a batch of 4 gives 0.16") {
    REQUIRE(metric_regression({0.6, 0.6, 0.6, 0.6}, {1, 1, 1, 1}) == Approx(0.16));
  }
  SECTION("a perfect discriminator on clean data gives 0") {
    REQUIRE(metric_regression({1.0, 1.0}, {1.0, 1.0}) == 0.0);
  }
  SECTION("D = 0 against Q(y,y) = 1 gives 1") {
    REQUIRE(metric_regression({0.0}, {1.0}) == Approx(1.0));
  }
  SECTION("D - Q of {0.1, -0.3} gives 0.05") {
    REQUIRE(metric_regression({0.8, 0.4}, {0.7, 0.7}) == Approx(0.05));
  }
  SECTION("D 0.3 vs target 0.7 gives 0.16") {
    REQUIRE(metric_regression({0.3}, {0.7}) == Approx(0.16));
  }
  SECTION("D 0.5 vs q 0.25 gives 0.0625") {
    REQUIRE(metric_regression({0.5}, {0.25}) == Approx(0.0625));
  }
  SECTION("adversarial arithmetic: D = 0.75 vs 1 gives 0.0625") {
    REQUIRE(metric_regression({0.75}, {1.0}) == Approx(0.0625));
  }
  SECTION("empty or mismatched batches throw") {
    REQUIRE_THROWS_AS(metric_regression({}, {}), LengthMismatch);
    REQUIRE_THROWS_AS(metric_regression({0.1}, {0.1, 0.2}), LengthMismatch);
  }
}

TEST_CASE("graph discriminator losses match per-item forwards", "[losses]") {
  Rng rng(71);
  autonn::DiscriminatorNet d(4, 5);
  std::vector<TensorPtr> mags;
  for (int i = 0; i < 3; ++i) {
    auto m = make_tensor({1, 12, 17});
    for (auto& v : m->value) v = std::abs(rng.normal());
    mags.push_back(m);
  }

  SECTION("loss_clean") {
    Tape tape;
    const auto loss = loss_clean(&tape, d, mags);
    double expect = 0.0;
    for (const auto& m : mags) {
      const double out = d.forward(nullptr, m, m)->value[0];
      expect += (out - 1.0) * (out - 1.0);
    }
    expect /= 3.0;
    REQUIRE(loss->value[0] == Approx(expect).margin(1e-12));
  }

  SECTION("loss_vs_metric with constant q targets") {
    const std::vector<double> q{0.2, 0.5, 0.9};
    Tape tape;
    const auto loss = loss_vs_metric(&tape, d, mags, mags, q);
    double expect = 0.0;
    for (std::size_t i = 0; i < mags.size(); ++i) {
      const double out = d.forward(nullptr, mags[i], mags[i])->value[0];
      expect += (out - q[i]) * (out - q[i]);
    }
    expect /= 3.0;
    REQUIRE(loss->value[0] == Approx(expect).margin(1e-12));
  }
}

TEST_CASE("time loss", "[losses]") {
  SECTION("identical signals give zero") {
    Rng rng(3);
    const auto w = random_wave(rng, 1000);
    REQUIRE(time_loss(w, w) == 0.0);
  }
  SECTION("constant offset 0.1 gives 0.1") {
    dsp::Waveform a, b;
    a.samples.assign(500, 0.25);
    b.samples.assign(500, 0.35);
    REQUIRE(time_loss(a, b) == Approx(0.1));
  }
  SECTION("agrees with an independent long-double summation oracle") {
    Rng rng(5);
    const auto a = random_wave(rng, 4096);
    const auto b = random_wave(rng, 4096);
    long double acc = 0.0L;
    for (std::size_t i = 0; i < a.samples.size(); ++i)
      acc += std::abs(static_cast<long double>(a.samples[i]) - b.samples[i]);
    const double oracle = static_cast<double>(acc / 4096.0L);
    REQUIRE(time_loss(a, b) == Approx(oracle).margin(1e-12));
  }
  SECTION("length mismatch") {
    dsp::Waveform a, b;
    a.samples.assign(10, 0.0);
    b.samples.assign(11, 0.0);
    REQUIRE_THROWS_AS(time_loss(a, b), LengthMismatch);
  }
}

TEST_CASE("tf magnitude loss", "[losses]") {
  dsp::StftParams p;
  Rng rng(9);

  SECTION("identical spectrograms give zero") {
    const auto w = random_wave(rng, 2000);
    const auto s = dsp::stft(w, p);
    REQUIRE(tf_mag_loss(s, s, 0.3) == 0.0);
  }

  SECTION("c = 1 with magnitudes differing by 2 gives 4") {
    dsp::Spectrogram a, b;
    for (auto* s : {&a, &b}) {
      s->params = p;
      s->frames = 4;
      s->num_bins = 5;
      s->origin_length = 0;
      s->bins.assign(20, {0.0, 0.0});
    }
    for (auto& c : a.bins) c = {3.0, 0.0};
    for (auto& c : b.bins) c = {1.0, 0.0};
    REQUIRE(tf_mag_loss(a, b, 1.0) == Approx(4.0));
  }

  SECTION("c = 0.3 agrees with a direct elementwise oracle") {
    const auto wa = random_wave(rng, 3000);
    const auto wb = random_wave(rng, 3000);
    const auto a = dsp::stft(wa, p);
    const auto b = dsp::stft(wb, p);
    long double acc = 0.0L;
    for (std::size_t i = 0; i < a.bins.size(); ++i) {
      const long double d = std::pow(std::abs(a.bins[i]), 0.3) - std::pow(std::abs(b.bins[i]), 0.3);
      acc += d * d;
    }
    const double oracle = static_cast<double>(acc / static_cast<long double>(a.bins.size()));
    REQUIRE(tf_mag_loss(a, b, 0.3) == Approx(oracle).margin(1e-12));
  }

  SECTION("shape mismatch") {
    const auto a = dsp::stft(random_wave(rng, 2000), p);
    const auto b = dsp::stft(random_wave(rng, 3000), p);
    REQUIRE_THROWS_AS(tf_mag_loss(a, b, 0.3), ShapeMismatch);
  }
}

TEST_CASE("graph losses agree with the value-level ones", "[losses][graph]") {
  dsp::StftParams p;
  Rng rng(15);
  const auto wa = random_wave(rng, 2000);
  const auto wb = random_wave(rng, 2000);

  SECTION("time loss") {
    auto ta = make_const({2000}, wa.samples);
    auto tb = make_const({2000}, wb.samples);
    Tape tape;
    REQUIRE(time_loss_graph(&tape, ta, tb)->value[0] == Approx(time_loss(wa, wb)).margin(1e-12));
  }

  SECTION("tf magnitude loss through graph magnitudes") {
    const auto sa = dsp::stft(wa, p);
    const auto sb = dsp::stft(wb, p);
    Tape tape;
    const auto ma = compressed_mag_graph(&tape, const_spec(sa), 0.3);
    const auto mb = compressed_mag_graph(&tape, const_spec(sb), 0.3);
    const auto loss = tf_mag_loss_graph(&tape, ma, mb);
    REQUIRE(loss->value[0] == Approx(tf_mag_loss(sa, sb, 0.3)).margin(1e-9));
  }

  SECTION("graph istft/stft match the dsp module") {
    const auto plan = graph_plan(p, 2000);
    const auto S = dsp::stft(wa, p);
    Tape tape;
    const auto wave = istft_graph(&tape, const_spec(S), *plan);
    const auto direct = dsp::istft(S);
    for (std::size_t i = 0; i < direct.samples.size(); ++i)
      REQUIRE(wave->value[i] == Approx(direct.samples[i]).margin(1e-10));
    const auto re_spec = stft_graph(&tape, wave, *plan);
    const auto projected = dsp::consistency_project(S);
    for (std::size_t i = 0; i < projected.bins.size(); ++i) {
      REQUIRE(re_spec.re->value[i] == Approx(projected.bins[i].real()).margin(1e-10));
      REQUIRE(re_spec.im->value[i] == Approx(projected.bins[i].imag()).margin(1e-10));
    }
  }
}

TEST_CASE("cp_wrap", "[losses][cp]") {
  dsp::StftParams p;
  Rng rng(25);
  const auto clean = random_wave(rng, 3000);
  const auto clean_star_wave = dsp::istft(dsp::stft(clean, p));
  const auto clean_star = dsp::stft(clean_star_wave, p);
  const auto plan = graph_plan(p, 3000);

  SECTION("consistent input: CP losses equal naive losses to 1e-6") {
    const auto noisy = random_wave(rng, 3000);
    const auto S = dsp::stft(noisy, p);  // a true STFT is already consistent
    Tape tape;
    const auto cp = cp_wrap(&tape, const_spec(S), *plan);

    const auto mag_naive = compressed_mag_graph(&tape, const_spec(S), 0.3);
    const auto mag_cp = compressed_mag_graph(&tape, cp.consistent, 0.3);
    const auto target = compressed_mag_graph(&tape, const_spec(clean_star), 0.3);
    const double naive = tf_mag_loss_graph(&tape, mag_naive, target)->value[0];
    const double wrapped = tf_mag_loss_graph(&tape, mag_cp, target)->value[0];
    REQUIRE(wrapped == Approx(naive).epsilon(1e-6));
  }

  SECTION("enhanced equal to the clean path: time and mag losses vanish") {
    const auto S = dsp::stft(clean, p);
    Tape tape;
    const auto cp = cp_wrap(&tape, const_spec(S), *plan);
    auto star_t = make_const({3000}, clean_star_wave.samples);
    const double tl = time_loss_graph(&tape, cp.wave, star_t)->value[0];
    const auto mag_cp = compressed_mag_graph(&tape, cp.consistent, 0.3);
    const auto target = compressed_mag_graph(&tape, const_spec(clean_star), 0.3);
    const double ml = tf_mag_loss_graph(&tape, mag_cp, target)->value[0];
    REQUIRE(tl < 1e-10);
    REQUIRE(ml < 1e-10);
  }

  SECTION("inconsistent spectrogram: CP and naive magnitude losses differ") {
    dsp::Spectrogram S;
    S.params = p;
    S.origin_length = 3000;
    S.frames = dsp::make_frame_plan(p, 3000).frames;
    S.num_bins = p.bins();
    S.bins.resize(static_cast<std::size_t>(S.frames) * S.num_bins);
    for (auto& c : S.bins) c = std::polar(std::abs(rng.normal()), rng.uniform(0.0, 2.0 * M_PI));

    Tape tape;
    const auto cp = cp_wrap(&tape, const_spec(S), *plan);
    const auto mag_naive = compressed_mag_graph(&tape, const_spec(S), 0.3);
    const auto mag_cp = compressed_mag_graph(&tape, cp.consistent, 0.3);
    const auto target = compressed_mag_graph(&tape, const_spec(clean_star), 0.3);
    const double naive = tf_mag_loss_graph(&tape, mag_naive, target)->value[0];
    const double wrapped = tf_mag_loss_graph(&tape, mag_cp, target)->value[0];
    REQUIRE(std::abs(naive - wrapped) > 1e-3);
  }

  SECTION("idempotence at the loss level") {
    dsp::Spectrogram S;
    S.params = p;
    S.origin_length = 3000;
    S.frames = dsp::make_frame_plan(p, 3000).frames;
    S.num_bins = p.bins();
    S.bins.resize(static_cast<std::size_t>(S.frames) * S.num_bins);
    for (auto& c : S.bins) c = {rng.normal(), rng.normal()};

    Tape tape;
    const auto once = cp_wrap(&tape, const_spec(S), *plan);
    const auto twice = cp_wrap(&tape, once.consistent, *plan);
    auto star_t = make_const({3000}, clean_star_wave.samples);
    const auto target = compressed_mag_graph(&tape, const_spec(clean_star), 0.3);

    const double t1 = time_loss_graph(&tape, once.wave, star_t)->value[0];
    const double t2 = time_loss_graph(&tape, twice.wave, star_t)->value[0];
    const double m1 = tf_mag_loss_graph(&tape, compressed_mag_graph(&tape, once.consistent, 0.3), target)->value[0];
    const double m2 = tf_mag_loss_graph(&tape, compressed_mag_graph(&tape, twice.consistent, 0.3), target)->value[0];
    REQUIRE(t2 == Approx(t1).epsilon(1e-9));
    REQUIRE(m2 == Approx(m1).epsilon(1e-9));
  }
}

TEST_CASE("discriminator_direction", "[losses][direction]") {
  GradParts parts;
  parts.gc = {1.0, 0.0, 2.0};
  parts.ge = {0.5, 0.5, 1.0};  // acute with gc

  SECTION("baseline is the plain sum; sc2 on acute parts is identical") {
    const auto base = discriminator_direction(parts, ScMode::off);
    const auto sc2 = discriminator_direction(parts, ScMode::sc2);
    REQUIRE(base.direction == std::vector<double>{1.5, 0.5, 3.0});
    REQUIRE(base.direction == sc2.direction);
    REQUIRE_FALSE(base.sc_applied);
    REQUIRE(sc2.sc_applied);
  }

  SECTION("obtuse pair under sc2 is orthogonal to ge") {
    GradParts obtuse;
    obtuse.gc = {1.0, 0.0};
    obtuse.ge = {-1.0, 0.5};
    const auto r = discriminator_direction(obtuse, ScMode::sc2);
    REQUIRE(surgery::dot(r.direction, obtuse.ge) == Approx(0.0).margin(1e-12));
    REQUIRE(r.weights.w_e < 1.0);
  }

  SECTION("sc3 with a conflicting gn is orthogonal to gn") {
    parts.gn = surgery::GradVector{-1.0, -0.5, -2.0};
    const auto r = discriminator_direction(parts, ScMode::sc3);
    REQUIRE(surgery::dot(r.direction, *parts.gn) == Approx(0.0).margin(1e-12));
  }

  SECTION("sc3 without the noisy gradient is a mode mismatch") {
    GradParts two;
    two.gc = {1.0};
    two.ge = {1.0};
    REQUIRE_THROWS_AS(discriminator_direction(two, ScMode::sc3), ModeMismatch);
  }
}

TEST_CASE("gradient-level and loss-level weighting agree", "[losses][linearity]") {
  // baseline direction must equal the gradient of the summed loss
  Rng rng(33);
  autonn::DiscriminatorNet d(4, 44);
  auto m1 = make_tensor({1, 12, 17});
  auto m2 = make_tensor({1, 12, 17});
  for (auto& v : m1->value) v = std::abs(rng.normal());
  for (auto& v : m2->value) v = std::abs(rng.normal());

  GradParts parts;
  d.params.zero_grads();
  {
    Tape tape;
    auto l = metric_loss_term(&tape, d, m1, m1, 1.0);
    tape.backward(l);
    parts.gc = d.params.flatten_grads();
  }
  d.params.zero_grads();
  {
    Tape tape;
    auto l = metric_loss_term(&tape, d, m2, m1, 0.4);
    tape.backward(l);
    parts.ge = d.params.flatten_grads();
  }
  const auto dir = discriminator_direction(parts, ScMode::off);

  d.params.zero_grads();
  {
    Tape tape;
    auto sum = autonn::add(&tape, metric_loss_term(&tape, d, m1, m1, 1.0),
                           metric_loss_term(&tape, d, m2, m1, 0.4));
    tape.backward(sum);
  }
  const auto grad_sum = d.params.flatten_grads();
  for (std::size_t i = 0; i < grad_sum.size(); ++i)
    REQUIRE(dir.direction[i] == Approx(grad_sum[i]).margin(1e-10));
}

TEST_CASE("finite differences through the CP path on a micro generator", "[losses][fd]") {
  // ~100-parameter mask acting on a fixed spectrogram, losses fed only by
  // post-round-trip signals
  const auto r = checks::run_autodiff_check(3141, 2);
  REQUIRE(r.cp_path_rel_err < 1e-4);
}
