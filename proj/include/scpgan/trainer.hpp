#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <optional>

#include <json.hpp>

#include "scpgan/data.hpp"
#include "scpgan/losses.hpp"
#include "scpgan/metrics.hpp"

namespace scpgan::train {

namespace fs = std::filesystem;
using autonn::TensorPtr;
using losses::ScMode;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct ModeFlags {
  bool nd = false;
  ScMode sc = ScMode::off;
  bool cp = false;

  std::string name() const {
    std::string s;
    auto append = [&s](const char* p) {
      if (!s.empty()) s += "-";
      s += p;
    };
    if (nd) append("nd");
    if (sc == ScMode::sc2) append("sc2");
    if (sc == ScMode::sc3) append("sc3");
    if (cp) append("cp");
    return s.empty() ? "baseline" : s;
  }
};

// The eight ablation rows, in the reporting order of the study grid.
inline const std::vector<ModeFlags>& ablation_modes() {
  static const std::vector<ModeFlags> modes{
      {false, ScMode::off, false},  // baseline
      {true, ScMode::off, false},   // nd
      {false, ScMode::sc2, false},  // sc2
      {false, ScMode::off, true},   // cp
      {true, ScMode::sc3, false},   // nd-sc3
      {true, ScMode::off, true},    // nd-cp
      {false, ScMode::sc2, true},   // sc2-cp
      {true, ScMode::sc3, true},    // nd-sc3-cp
  };
  return modes;
}

inline ModeFlags parse_mode(const std::string& name) {
  for (const auto& m : ablation_modes())
    if (m.name() == name) return m;
  throw ConfigError("mode: '" + name + "' is not one of the supported ablation rows");
}

struct OptimParams {
  double lr = 5e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  ModeFlags mode;
  int epochs = 30;
  int batch_size = 4;
  std::uint64_t seed = 1;
  dsp::StftParams stft;
  losses::GenLossConfig gen_loss;
  OptimParams optimizer;
  metrics::SsnrParams ssnr;
  int eval_every = 5;
  int gen_channels = 8;
  int disc_channels = 8;
  std::string manifest_path;
  std::string out_dir = "runs/out";

  void validate() const {
    if (epochs < 1) throw ConfigError("epochs: must be >= 1");
    if (batch_size < 1) throw ConfigError("batch_size: must be >= 1");
    if (eval_every < 1) throw ConfigError("eval_every: must be >= 1");
    if (gen_channels < 1 || disc_channels < 1)
      throw ConfigError("gen_channels/disc_channels: must be >= 1");
    if (mode.sc == ScMode::sc3 && !mode.nd)
      throw ConfigError("mode.sc: sc3 requires mode.nd=true (the noisy loss part must exist)");
    if (optimizer.lr <= 0.0) throw ConfigError("optimizer.lr: must be > 0");
    try {
      stft.validate();
    } catch (const Error& e) {
      throw ConfigError(std::string("stft: ") + e.what());
    }
    try {
      gen_loss.validate();
    } catch (const ConfigError&) {
      throw;
    }
    try {
      ssnr.validate();
    } catch (const Error& e) {
      throw ConfigError(std::string("ssnr: ") + e.what());
    }
  }
};

namespace detail {

template <typename T>
T get_field(const nlohmann::json& j, const std::string& path, const char* key, T fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const nlohmann::json::exception&) {
    throw ConfigError(path + key + ": wrong type");
  }
}

inline void reject_unknown(const nlohmann::json& j, const std::string& path,
                           std::initializer_list<const char*> known) {
  for (const auto& [key, _] : j.items()) {
    bool ok = false;
    for (const char* k : known)
      if (key == k) ok = true;
    if (!ok) throw ConfigError(path + key + ": unknown field");
  }
}

}  // namespace detail

inline TrainConfig config_from_json(const nlohmann::json& j) {
  TrainConfig c;
  detail::reject_unknown(j, "", {"mode", "epochs", "batch_size", "seed", "stft", "gen_loss",
                                 "optimizer", "ssnr", "eval_every", "gen_channels",
                                 "disc_channels", "manifest", "out_dir"});
  if (j.contains("mode")) {
    const auto& m = j.at("mode");
    if (m.is_string()) {
      c.mode = parse_mode(m.get<std::string>());
    } else {
      detail::reject_unknown(m, "mode.", {"nd", "sc", "cp"});
      c.mode.nd = detail::get_field(m, "mode.", "nd", false);
      c.mode.cp = detail::get_field(m, "mode.", "cp", false);
      const std::string sc = detail::get_field<std::string>(m, "mode.", "sc", "off");
      if (sc == "off") c.mode.sc = ScMode::off;
      else if (sc == "sc2") c.mode.sc = ScMode::sc2;
      else if (sc == "sc3") c.mode.sc = ScMode::sc3;
      else throw ConfigError("mode.sc: must be off|sc2|sc3");
    }
  }
  c.epochs = detail::get_field(j, "", "epochs", c.epochs);
  c.batch_size = detail::get_field(j, "", "batch_size", c.batch_size);
  c.seed = detail::get_field(j, "", "seed", c.seed);
  if (j.contains("stft")) {
    const auto& s = j.at("stft");
    detail::reject_unknown(s, "stft.", {"fft_size", "hop", "window", "center_pad"});
    c.stft.fft_size = detail::get_field(s, "stft.", "fft_size", c.stft.fft_size);
    c.stft.hop = detail::get_field(s, "stft.", "hop", c.stft.hop);
    c.stft.center_pad = detail::get_field(s, "stft.", "center_pad", c.stft.center_pad);
    const std::string w = detail::get_field<std::string>(s, "stft.", "window", "sqrt_hann");
    if (w == "hann") c.stft.window = dsp::WindowKind::hann;
    else if (w == "sqrt_hann") c.stft.window = dsp::WindowKind::sqrt_hann;
    else throw ConfigError("stft.window: must be hann|sqrt_hann");
  }
  if (j.contains("gen_loss")) {
    const auto& g = j.at("gen_loss");
    detail::reject_unknown(g, "gen_loss.", {"lambda_adv", "lambda_time", "lambda_mag", "mag_compression"});
    c.gen_loss.lambda_adv = detail::get_field(g, "gen_loss.", "lambda_adv", c.gen_loss.lambda_adv);
    c.gen_loss.lambda_time = detail::get_field(g, "gen_loss.", "lambda_time", c.gen_loss.lambda_time);
    c.gen_loss.lambda_mag = detail::get_field(g, "gen_loss.", "lambda_mag", c.gen_loss.lambda_mag);
    c.gen_loss.mag_compression =
        detail::get_field(g, "gen_loss.", "mag_compression", c.gen_loss.mag_compression);
  }
  if (j.contains("optimizer")) {
    const auto& o = j.at("optimizer");
    detail::reject_unknown(o, "optimizer.", {"lr", "beta1", "beta2", "eps"});
    c.optimizer.lr = detail::get_field(o, "optimizer.", "lr", c.optimizer.lr);
    c.optimizer.beta1 = detail::get_field(o, "optimizer.", "beta1", c.optimizer.beta1);
    c.optimizer.beta2 = detail::get_field(o, "optimizer.", "beta2", c.optimizer.beta2);
    c.optimizer.eps = detail::get_field(o, "optimizer.", "eps", c.optimizer.eps);
  }
  if (j.contains("ssnr")) {
    const auto& s = j.at("ssnr");
    detail::reject_unknown(s, "ssnr.", {"frame_len", "clamp_lo", "clamp_hi", "silence_floor"});
    c.ssnr.frame_len = detail::get_field(s, "ssnr.", "frame_len", c.ssnr.frame_len);
    c.ssnr.clamp_lo = detail::get_field(s, "ssnr.", "clamp_lo", c.ssnr.clamp_lo);
    c.ssnr.clamp_hi = detail::get_field(s, "ssnr.", "clamp_hi", c.ssnr.clamp_hi);
    c.ssnr.silence_floor = detail::get_field(s, "ssnr.", "silence_floor", c.ssnr.silence_floor);
  }
  c.eval_every = detail::get_field(j, "", "eval_every", c.eval_every);
  c.gen_channels = detail::get_field(j, "", "gen_channels", c.gen_channels);
  c.disc_channels = detail::get_field(j, "", "disc_channels", c.disc_channels);
  c.manifest_path = detail::get_field<std::string>(j, "", "manifest", c.manifest_path);
  c.out_dir = detail::get_field<std::string>(j, "", "out_dir", c.out_dir);
  c.gen_loss.cp_enabled = c.mode.cp;
  c.validate();
  return c;
}

inline nlohmann::ordered_json config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["mode"] = {{"nd", c.mode.nd}, {"sc", losses::sc_mode_name(c.mode.sc)}, {"cp", c.mode.cp}};
  j["epochs"] = c.epochs;
  j["batch_size"] = c.batch_size;
  j["seed"] = c.seed;
  j["stft"] = {{"fft_size", c.stft.fft_size},
               {"hop", c.stft.hop},
               {"window", dsp::window_name(c.stft.window)},
               {"center_pad", c.stft.center_pad}};
  j["gen_loss"] = {{"lambda_adv", c.gen_loss.lambda_adv},
                   {"lambda_time", c.gen_loss.lambda_time},
                   {"lambda_mag", c.gen_loss.lambda_mag},
                   {"mag_compression", c.gen_loss.mag_compression}};
  j["optimizer"] = {{"lr", c.optimizer.lr},
                    {"beta1", c.optimizer.beta1},
                    {"beta2", c.optimizer.beta2},
                    {"eps", c.optimizer.eps}};
  j["ssnr"] = {{"frame_len", c.ssnr.frame_len},
               {"clamp_lo", c.ssnr.clamp_lo},
               {"clamp_hi", c.ssnr.clamp_hi},
               {"silence_floor", c.ssnr.silence_floor}};
  j["eval_every"] = c.eval_every;
  j["gen_channels"] = c.gen_channels;
  j["disc_channels"] = c.disc_channels;
  j["manifest"] = c.manifest_path;
  j["out_dir"] = c.out_dir;
  return j;
}

inline TrainConfig load_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("config: cannot open " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: invalid JSON: ") + e.what());
  }
  return config_from_json(j);
}

// ---------------------------------------------------------------------------
// Records and evaluation rows
// ---------------------------------------------------------------------------

struct StepRecord {
  int step = 0;
  int epoch = 0;
  double l_c = 0.0, l_e = 0.0;
  std::optional<double> l_n;
  double w_c = 1.0, w_e = 1.0;
  std::optional<double> w_n;
  std::string branch;
  bool degenerate = false;
  double norm_c = 0.0, norm_e = 0.0;
  std::optional<double> norm_n;
  double norm_dir = 0.0;
  double dot_dir_c = 0.0, dot_dir_e = 0.0;
  std::optional<double> dot_dir_n;
  double gen_adv = 0.0, gen_time = 0.0, gen_mag = 0.0, gen_total = 0.0;
  double gen_grad_norm = 0.0;
};

inline std::string step_csv_header() {
  return "step,epoch,l_c,l_e,l_n,w_c,w_e,w_n,branch,degenerate,norm_c,norm_e,norm_n,norm_dir,"
         "dot_dir_c,dot_dir_e,dot_dir_n,gen_adv,gen_time,gen_mag,gen_total,gen_grad_norm";
}

inline std::string step_csv_row(const StepRecord& r) {
  auto opt = [](const std::optional<double>& v) {
    if (!v) return std::string();
    char b[40];
    std::snprintf(b, sizeof(b), "%.10g", *v);
    return std::string(b);
  };
  char buf[640];
  std::snprintf(buf, sizeof(buf),
                "%d,%d,%.10g,%.10g,%s,%.10g,%.10g,%s,%s,%d,%.10g,%.10g,%s,%.10g,%.10g,%.10g,%s,"
                "%.10g,%.10g,%.10g,%.10g,%.10g",
                r.step, r.epoch, r.l_c, r.l_e, opt(r.l_n).c_str(), r.w_c, r.w_e, opt(r.w_n).c_str(),
                r.branch.c_str(), r.degenerate ? 1 : 0, r.norm_c, r.norm_e, opt(r.norm_n).c_str(),
                r.norm_dir, r.dot_dir_c, r.dot_dir_e, opt(r.dot_dir_n).c_str(), r.gen_adv,
                r.gen_time, r.gen_mag, r.gen_total, r.gen_grad_norm);
  return buf;
}

struct EvalRow {
  std::string clip_id;
  double snr_db = 0.0;
  double ssnr_noisy = 0.0, ssnr_enh = 0.0;
  double q_noisy = 0.0, q_enh = 0.0;
};

struct EvalResult {
  std::vector<EvalRow> rows;
  double mean_ssnr_noisy = 0.0, mean_ssnr_enh = 0.0;
  double mean_q_noisy = 0.0, mean_q_enh = 0.0;
};

inline std::string eval_csv_header() {
  return "clip_id,snr_db,ssnr_noisy,ssnr_enh,q_noisy,q_enh";
}

inline std::string eval_csv_row(const EvalRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%s,%.10g,%.10g,%.10g,%.10g,%.10g", r.clip_id.c_str(), r.snr_db,
                r.ssnr_noisy, r.ssnr_enh, r.q_noisy, r.q_enh);
  return buf;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline void save_train_checkpoint(const std::string& path, const autonn::GeneratorNet& g,
                                  const autonn::DiscriminatorNet& d, const autonn::AdamState& ag,
                                  const autonn::AdamState& ad, const dsp::StftParams& stft,
                                  double mag_compression) {
  std::vector<autonn::NamedArray> arrays;
  auto scalar = [&arrays](const std::string& name, double v) {
    arrays.push_back({name, {1}, {v}});
  };
  scalar("meta.gen_channels", g.channels);
  scalar("meta.disc_channels", d.channels);
  scalar("meta.stft.fft_size", stft.fft_size);
  scalar("meta.stft.hop", stft.hop);
  scalar("meta.stft.window", static_cast<double>(static_cast<int>(stft.window)));
  scalar("meta.stft.center_pad", stft.center_pad ? 1.0 : 0.0);
  scalar("meta.mag_compression", mag_compression);
  autonn::append_params(arrays, g.params);
  autonn::append_params(arrays, d.params);
  arrays.push_back({"adam_g.m", {ag.m.size()}, ag.m});
  arrays.push_back({"adam_g.v", {ag.v.size()}, ag.v});
  scalar("adam_g.step", static_cast<double>(ag.step));
  arrays.push_back({"adam_d.m", {ad.m.size()}, ad.m});
  arrays.push_back({"adam_d.v", {ad.v.size()}, ad.v});
  scalar("adam_d.step", static_cast<double>(ad.step));
  autonn::write_checkpoint(path, arrays);
}

struct LoadedCheckpoint {
  autonn::GeneratorNet g;
  autonn::DiscriminatorNet d;
  autonn::AdamState adam_g, adam_d;
  dsp::StftParams stft;
  double mag_compression = 0.3;
};

inline double meta_scalar(const std::vector<autonn::NamedArray>& arrays, const std::string& name) {
  const autonn::NamedArray* a = autonn::find_array(arrays, name);
  if (!a || a->data.size() != 1) throw BadCheckpoint("checkpoint: missing scalar " + name);
  return a->data[0];
}

inline LoadedCheckpoint load_train_checkpoint(const std::string& path) {
  const auto arrays = autonn::read_checkpoint(path);
  const int gc = static_cast<int>(meta_scalar(arrays, "meta.gen_channels"));
  const int dc = static_cast<int>(meta_scalar(arrays, "meta.disc_channels"));
  LoadedCheckpoint out{autonn::GeneratorNet(gc), autonn::DiscriminatorNet(dc), {}, {}, {}, 0.3};
  out.stft.fft_size = static_cast<int>(meta_scalar(arrays, "meta.stft.fft_size"));
  out.stft.hop = static_cast<int>(meta_scalar(arrays, "meta.stft.hop"));
  out.stft.window = static_cast<dsp::WindowKind>(static_cast<int>(meta_scalar(arrays, "meta.stft.window")));
  out.stft.center_pad = meta_scalar(arrays, "meta.stft.center_pad") != 0.0;
  out.mag_compression = meta_scalar(arrays, "meta.mag_compression");
  autonn::load_params(arrays, out.g.params);
  autonn::load_params(arrays, out.d.params);
  auto load_adam = [&arrays](const char* prefix, autonn::AdamState& st) {
    const autonn::NamedArray* m = autonn::find_array(arrays, std::string(prefix) + ".m");
    const autonn::NamedArray* v = autonn::find_array(arrays, std::string(prefix) + ".v");
    if (!m || !v) throw BadCheckpoint("checkpoint: missing optimizer state");
    st.m = m->data;
    st.v = v->data;
    st.step = static_cast<std::int64_t>(meta_scalar(arrays, std::string(prefix) + ".step"));
  };
  load_adam("adam_g", out.adam_g);
  load_adam("adam_d", out.adam_d);
  return out;
}

// ---------------------------------------------------------------------------
// Enhancement path shared by training and evaluation: mask the noisy
// magnitude, keep the noisy phase, resynthesize.
// ---------------------------------------------------------------------------

inline TensorPtr compressed_mag_const(const dsp::Spectrogram& spec, double compression,
                                      std::vector<int> shape) {
  std::vector<double> m(spec.bins.size());
  for (std::size_t i = 0; i < m.size(); ++i) m[i] = std::pow(std::abs(spec.bins[i]), compression);
  return autonn::make_const(std::move(shape), std::move(m));
}

struct Enhanced {
  dsp::Waveform wave;
  dsp::Spectrogram spec;  // mask * X (noisy phase)
};

inline Enhanced enhance(const autonn::GeneratorNet& g, const dsp::Waveform& x,
                        const dsp::StftParams& stft_params, double compression) {
  const dsp::Spectrogram X = dsp::stft(x, stft_params);
  auto g_in = compressed_mag_const(X, compression, {1, X.frames, X.num_bins});
  const TensorPtr mask = g.forward(nullptr, g_in);
  Enhanced e;
  e.spec = X;
  for (std::size_t i = 0; i < e.spec.bins.size(); ++i) e.spec.bins[i] *= mask->value[i];
  e.wave = dsp::istft(e.spec);
  return e;
}

inline EvalResult evaluate_entries(const autonn::GeneratorNet& g, const data::Manifest& manifest,
                                   const std::string& split, const dsp::StftParams& stft_params,
                                   double compression, const metrics::SsnrParams& ssnr_params) {
  EvalResult out;
  const auto entries = manifest.split_entries(split);
  if (entries.empty()) throw EmptyCorpus("evaluate: no entries in split " + split);
  for (const auto* e : entries) {
    const auto x = data::wav_read(data::resolve(manifest, e->mix_path));
    const auto y = data::wav_read(data::resolve(manifest, e->clean_path));
    const Enhanced enh = enhance(g, x, stft_params, compression);
    EvalRow row;
    row.clip_id = fs::path(e->mix_path).stem().string();
    row.snr_db = e->snr_db;
    row.ssnr_noisy = metrics::ssnr(x, y, ssnr_params);
    row.ssnr_enh = metrics::ssnr(enh.wave, y, ssnr_params);
    row.q_noisy = metrics::q_score(x, y, ssnr_params);
    row.q_enh = metrics::q_score(enh.wave, y, ssnr_params);
    out.mean_ssnr_noisy += row.ssnr_noisy;
    out.mean_ssnr_enh += row.ssnr_enh;
    out.mean_q_noisy += row.q_noisy;
    out.mean_q_enh += row.q_enh;
    out.rows.push_back(std::move(row));
  }
  const double n = static_cast<double>(out.rows.size());
  out.mean_ssnr_noisy /= n;
  out.mean_ssnr_enh /= n;
  out.mean_q_noisy /= n;
  out.mean_q_enh /= n;
  return out;
}

inline EvalResult evaluate_checkpoint(const std::string& ckpt_path, const data::Manifest& manifest,
                                      const std::string& split,
                                      const metrics::SsnrParams& ssnr_params = {}) {
  const LoadedCheckpoint ck = load_train_checkpoint(ckpt_path);
  return evaluate_entries(ck.g, manifest, split, ck.stft, ck.mag_compression, ssnr_params);
}

// ---------------------------------------------------------------------------
// Hooks (test instrumentation)
// ---------------------------------------------------------------------------

struct TrainHooks {
  // Replace the computed per-part discriminator gradients before weighting;
  // used to exercise the surgery path with synthetic geometry.
  std::function<std::optional<losses::GradParts>(int step, const losses::GradParts&)> inject_grads;
};

// ---------------------------------------------------------------------------
// Trainer
// ---------------------------------------------------------------------------

struct TrainResult {
  double final_ssnr_noisy = 0.0;
  double final_ssnr_enh = 0.0;
  double best_ssnr_enh = 0.0;
  int best_epoch = 0;
  int steps = 0;
  std::string best_checkpoint;
  std::string final_checkpoint;
};

class Trainer {
 public:
  Trainer(TrainConfig cfg, const data::Manifest& manifest, TrainHooks hooks = {})
      : cfg_(std::move(cfg)),
        hooks_(std::move(hooks)),
        gen_(cfg_.gen_channels, mix_seed(cfg_.seed, 11)),
        disc_(cfg_.disc_channels, mix_seed(cfg_.seed, 22)) {
    cfg_.validate();
    adam_g_.lr = cfg_.optimizer.lr;
    adam_g_.beta1 = cfg_.optimizer.beta1;
    adam_g_.beta2 = cfg_.optimizer.beta2;
    adam_g_.eps = cfg_.optimizer.eps;
    adam_d_ = adam_g_;
    load_clips(manifest);
  }

  autonn::GeneratorNet& generator() { return gen_; }
  autonn::DiscriminatorNet& discriminator() { return disc_; }
  const TrainConfig& config() const { return cfg_; }
  int step_count() const { return step_; }

  // One discriminator update on the given training-clip indices. The
  // generator stays frozen (it runs without a tape).
  StepRecord disc_step(const std::vector<int>& batch) {
    StepRecord rec;
    rec.step = step_;

    const double inv_b = 1.0 / static_cast<double>(batch.size());
    losses::GradParts parts;
    double loss_c = 0.0, loss_e = 0.0, loss_n = 0.0;

    struct Cand {
      TensorPtr enh_mag;  // D candidate for L_E
      double q_enh;
    };
    std::vector<Cand> cands;
    cands.reserve(batch.size());
    for (int idx : batch) {
      const Clip& c = clips_[static_cast<std::size_t>(idx)];
      Cand cd;
      const Enhanced enh = enhance(gen_, c.x_wave, cfg_.stft, cfg_.gen_loss.mag_compression);
      cd.q_enh = metrics::q_score(enh.wave, c.y_wave, cfg_.ssnr);
      if (cfg_.mode.cp) {
        // the loss input is the re-analyzed, consistent spectrogram
        const dsp::Spectrogram consistent = dsp::stft(enh.wave, cfg_.stft);
        cd.enh_mag = compressed_mag_const(consistent, cfg_.gen_loss.mag_compression,
                                          {1, consistent.frames, consistent.num_bins});
      } else {
        cd.enh_mag = compressed_mag_const(enh.spec, cfg_.gen_loss.mag_compression,
                                          {1, enh.spec.frames, enh.spec.num_bins});
      }
      cands.push_back(std::move(cd));
    }

    auto part_grads = [&](auto&& term_for_item, double& loss_accum) {
      disc_.params.zero_grads();
      for (std::size_t i = 0; i < batch.size(); ++i) {
        autonn::Tape tape;
        TensorPtr term = term_for_item(&tape, i);
        term = autonn::scale(&tape, term, inv_b);
        loss_accum += term->value[0];
        tape.backward(term);
      }
      return disc_.params.flatten_grads();
    };

    parts.gc = part_grads(
        [&](autonn::Tape* tape, std::size_t i) {
          const Clip& c = clips_[static_cast<std::size_t>(batch[i])];
          return losses::metric_loss_term(tape, disc_, c.ref_mag3d, c.ref_mag3d, 1.0);
        },
        loss_c);
    parts.ge = part_grads(
        [&](autonn::Tape* tape, std::size_t i) {
          const Clip& c = clips_[static_cast<std::size_t>(batch[i])];
          return losses::metric_loss_term(tape, disc_, cands[i].enh_mag, c.ref_mag3d,
                                          cands[i].q_enh);
        },
        loss_e);
    if (cfg_.mode.nd) {
      parts.gn = part_grads(
          [&](autonn::Tape* tape, std::size_t i) {
            const Clip& c = clips_[static_cast<std::size_t>(batch[i])];
            return losses::metric_loss_term(tape, disc_, c.noisy_mag3d, c.ref_mag3d, c.q_noisy);
          },
          loss_n);
    }

    if (hooks_.inject_grads) {
      auto replaced = hooks_.inject_grads(step_, parts);
      if (replaced) parts = std::move(*replaced);
    }

    const losses::DirectionResult dir = losses::discriminator_direction(parts, cfg_.mode.sc);
    autonn::adam_step(disc_.params, dir.direction, adam_d_);

    rec.l_c = loss_c;
    rec.l_e = loss_e;
    if (cfg_.mode.nd) rec.l_n = loss_n;
    rec.w_c = dir.weights.w_c;
    rec.w_e = dir.weights.w_e;
    if (dir.weights.w_n) rec.w_n = dir.weights.w_n;
    rec.branch = dir.sc_applied ? surgery::branch_name(dir.weights.branch) : "none";
    rec.degenerate = dir.weights.degenerate;
    rec.norm_c = l2_norm(parts.gc);
    rec.norm_e = l2_norm(parts.ge);
    if (parts.gn) rec.norm_n = l2_norm(*parts.gn);
    rec.norm_dir = l2_norm(dir.direction);
    rec.dot_dir_c = surgery::dot(dir.direction, parts.gc);
    rec.dot_dir_e = surgery::dot(dir.direction, parts.ge);
    if (parts.gn) rec.dot_dir_n = surgery::dot(dir.direction, *parts.gn);
    last_conflict_ = surgery::conflict_report(parts.gc, parts.ge, parts.gn ? &*parts.gn : nullptr);
    return rec;
  }

  // One generator update; the discriminator participates in the adversarial
  // term but its parameters are frozen for the duration.
  StepRecord gen_step(const std::vector<int>& batch) {
    StepRecord rec;
    rec.step = step_;
    const double inv_b = 1.0 / static_cast<double>(batch.size());

    struct Freeze {
      autonn::ParamSet& p;
      explicit Freeze(autonn::ParamSet& ps) : p(ps) {
        for (const auto& [_, t] : p.items()) t->requires_grad = false;
      }
      ~Freeze() {
        for (const auto& [_, t] : p.items()) t->requires_grad = true;
      }
    } freeze(disc_.params);

    gen_.params.zero_grads();
    double adv_sum = 0.0, time_sum = 0.0, mag_sum = 0.0, total_sum = 0.0;
    const auto plan = losses::graph_plan(cfg_.stft, clip_len_);

    for (int idx : batch) {
      const Clip& c = clips_[static_cast<std::size_t>(idx)];
      autonn::Tape tape;
      const TensorPtr mask3 = gen_.forward(&tape, c.g_input);
      const TensorPtr mask = autonn::reshape(&tape, mask3, {c.frames, c.bins});

      losses::SpecTensor enh;
      enh.re = autonn::mul(&tape, mask, c.Xre);
      enh.im = autonn::mul(&tape, mask, c.Xim);
      enh.frames = c.frames;
      enh.bins = c.bins;
      enh.params = cfg_.stft;
      enh.origin_length = clip_len_;
      enh.sample_rate = c.x_wave.sample_rate;

      const TensorPtr enh_wave = losses::istft_graph(&tape, enh, *plan);
      losses::SpecTensor spec_used = enh;
      if (cfg_.mode.cp)
        spec_used = losses::stft_graph(&tape, enh_wave, *plan, c.x_wave.sample_rate);

      const TensorPtr time_l = losses::time_loss_graph(&tape, enh_wave, c.ref_wave_t);
      const TensorPtr enh_mag =
          losses::compressed_mag_graph(&tape, spec_used, cfg_.gen_loss.mag_compression);
      const TensorPtr mag_l = losses::tf_mag_loss_graph(&tape, enh_mag, c.ref_mag2d);
      const TensorPtr enh_mag3 = autonn::reshape(&tape, enh_mag, {1, c.frames, c.bins});
      const TensorPtr adv_l = losses::gen_adv_loss(&tape, disc_, enh_mag3, c.ref_mag3d);

      TensorPtr total = autonn::add(
          &tape, autonn::scale(&tape, adv_l, cfg_.gen_loss.lambda_adv),
          autonn::add(&tape, autonn::scale(&tape, time_l, cfg_.gen_loss.lambda_time),
                      autonn::scale(&tape, mag_l, cfg_.gen_loss.lambda_mag)));
      total = autonn::scale(&tape, total, inv_b);
      adv_sum += adv_l->value[0] * inv_b;
      time_sum += time_l->value[0] * inv_b;
      mag_sum += mag_l->value[0] * inv_b;
      total_sum += total->value[0];
      tape.backward(total);
    }

    const auto grad = gen_.params.flatten_grads();
    autonn::adam_step(gen_.params, grad, adam_g_);

    rec.gen_adv = adv_sum;
    rec.gen_time = time_sum;
    rec.gen_mag = mag_sum;
    rec.gen_total = total_sum;
    rec.gen_grad_norm = l2_norm(grad);
    return rec;
  }

  EvalResult evaluate_split(const std::string& split) {
    EvalResult out;
    int count = 0;
    for (std::size_t i = 0; i < clips_.size(); ++i) {
      const Clip& c = clips_[i];
      if (c.split != split) continue;
      const Enhanced enh = enhance(gen_, c.x_wave, cfg_.stft, cfg_.gen_loss.mag_compression);
      EvalRow row;
      row.clip_id = c.id;
      row.snr_db = c.snr_db;
      row.ssnr_noisy = metrics::ssnr(c.x_wave, c.y_wave, cfg_.ssnr);
      row.ssnr_enh = metrics::ssnr(enh.wave, c.y_wave, cfg_.ssnr);
      row.q_noisy = metrics::q_score(c.x_wave, c.y_wave, cfg_.ssnr);
      row.q_enh = metrics::q_score(enh.wave, c.y_wave, cfg_.ssnr);
      out.mean_ssnr_noisy += row.ssnr_noisy;
      out.mean_ssnr_enh += row.ssnr_enh;
      out.mean_q_noisy += row.q_noisy;
      out.mean_q_enh += row.q_enh;
      out.rows.push_back(std::move(row));
      ++count;
    }
    if (count == 0) throw EmptyCorpus("evaluate_split: no clips in " + split);
    out.mean_ssnr_noisy /= count;
    out.mean_ssnr_enh /= count;
    out.mean_q_noisy /= count;
    out.mean_q_enh /= count;
    return out;
  }

  TrainResult run() {
    fs::create_directories(cfg_.out_dir);
    {
      std::ofstream cf(fs::path(cfg_.out_dir) / "config.json");
      cf << config_to_json(cfg_).dump(2) << "\n";
    }
    std::ofstream steps_csv(fs::path(cfg_.out_dir) / "steps.csv");
    std::ofstream conflicts_csv(fs::path(cfg_.out_dir) / "conflicts.csv");
    std::ofstream eval_csv(fs::path(cfg_.out_dir) / "eval.csv");
    steps_csv << step_csv_header() << "\n";
    conflicts_csv << surgery::conflict_csv_header() << "\n";
    eval_csv << "epoch," << eval_csv_header() << "\n";

    std::vector<int> train_idx;
    for (std::size_t i = 0; i < clips_.size(); ++i)
      if (clips_[i].split == "train") train_idx.push_back(static_cast<int>(i));
    if (train_idx.empty()) throw EmptyCorpus("train: no training clips");

    Rng shuffle_rng(mix_seed(cfg_.seed, 33));
    TrainResult result;
    result.best_checkpoint = (fs::path(cfg_.out_dir) / "best.ckpt").string();
    result.final_checkpoint = (fs::path(cfg_.out_dir) / "final.ckpt").string();
    double best = -1e300;

    for (int epoch = 1; epoch <= cfg_.epochs; ++epoch) {
      shuffle(train_idx, shuffle_rng);
      for (std::size_t pos = 0; pos < train_idx.size(); pos += static_cast<std::size_t>(cfg_.batch_size)) {
        std::vector<int> batch(train_idx.begin() + static_cast<std::ptrdiff_t>(pos),
                               train_idx.begin() + static_cast<std::ptrdiff_t>(std::min(
                                   train_idx.size(), pos + static_cast<std::size_t>(cfg_.batch_size))));
        StepRecord rec = disc_step(batch);
        const StepRecord grec = gen_step(batch);
        rec.epoch = epoch;
        rec.gen_adv = grec.gen_adv;
        rec.gen_time = grec.gen_time;
        rec.gen_mag = grec.gen_mag;
        rec.gen_total = grec.gen_total;
        rec.gen_grad_norm = grec.gen_grad_norm;
        steps_csv << step_csv_row(rec) << "\n";
        conflicts_csv << surgery::conflict_csv_row(step_, last_conflict_) << "\n";
        ++step_;
      }
      if (epoch % cfg_.eval_every == 0 || epoch == cfg_.epochs) {
        const EvalResult ev = evaluate_split("test");
        for (const auto& row : ev.rows) eval_csv << epoch << "," << eval_csv_row(row) << "\n";
        EvalRow mean_row{"mean", 0.0, ev.mean_ssnr_noisy, ev.mean_ssnr_enh, ev.mean_q_noisy,
                         ev.mean_q_enh};
        eval_csv << epoch << "," << eval_csv_row(mean_row) << "\n";
        SCPGAN_INFO("epoch %d: test ssnr noisy %.3f dB -> enhanced %.3f dB", epoch,
                    ev.mean_ssnr_noisy, ev.mean_ssnr_enh);
        if (ev.mean_ssnr_enh > best) {
          best = ev.mean_ssnr_enh;
          result.best_ssnr_enh = ev.mean_ssnr_enh;
          result.best_epoch = epoch;
          save_train_checkpoint(result.best_checkpoint, gen_, disc_, adam_g_, adam_d_, cfg_.stft,
                                cfg_.gen_loss.mag_compression);
        }
        if (epoch == cfg_.epochs) {
          result.final_ssnr_noisy = ev.mean_ssnr_noisy;
          result.final_ssnr_enh = ev.mean_ssnr_enh;
        }
      }
    }
    save_train_checkpoint(result.final_checkpoint, gen_, disc_, adam_g_, adam_d_, cfg_.stft,
                          cfg_.gen_loss.mag_compression);
    result.steps = step_;
    return result;
  }

  const surgery::ConflictReport& last_conflict() const { return last_conflict_; }

 private:
  struct Clip {
    std::string id;
    std::string split;
    double snr_db = 0.0;
    dsp::Waveform x_wave, y_wave;
    int frames = 0, bins = 0;
    TensorPtr Xre, Xim;       // noisy complex planes [T,B]
    TensorPtr g_input;        // [1,T,B] compressed |X|
    TensorPtr ref_mag2d;      // [T,B] compressed reference magnitude
    TensorPtr ref_mag3d;      // [1,T,B]
    TensorPtr noisy_mag3d;    // [1,T,B] D candidate for L_N (only when nd)
    TensorPtr ref_wave_t;     // [L] time-loss reference (clean or clean*)
    double q_noisy = 0.0;
  };

  static void shuffle(std::vector<int>& v, Rng& rng) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(rng.uniform_int(0, static_cast<std::int64_t>(i) - 1));
      std::swap(v[i - 1], v[j]);
    }
  }

  void load_clips(const data::Manifest& manifest) {
    if (manifest.entries.empty()) throw EmptyCorpus("train: empty manifest");
    data::CleanStarCache star_cache;
    clips_.reserve(manifest.entries.size());
    for (const auto& e : manifest.entries) {
      Clip c;
      c.id = fs::path(e.mix_path).stem().string();
      c.split = e.split;
      c.snr_db = e.snr_db;
      c.x_wave = data::wav_read(data::resolve(manifest, e.mix_path));
      c.y_wave = data::wav_read(data::resolve(manifest, e.clean_path));
      if (c.x_wave.samples.size() != c.y_wave.samples.size())
        throw LengthMismatch("train: mix/clean length mismatch for " + e.mix_path);
      if (clip_len_ == 0) clip_len_ = c.x_wave.length();
      if (c.x_wave.length() != clip_len_)
        throw LengthMismatch("train: clips must share one length");

      const dsp::Spectrogram X = dsp::stft(c.x_wave, cfg_.stft);
      c.frames = X.frames;
      c.bins = X.num_bins;
      {
        std::vector<double> re(X.bins.size()), im(X.bins.size());
        for (std::size_t i = 0; i < X.bins.size(); ++i) {
          re[i] = X.bins[i].real();
          im[i] = X.bins[i].imag();
        }
        c.Xre = autonn::make_const({c.frames, c.bins}, std::move(re));
        c.Xim = autonn::make_const({c.frames, c.bins}, std::move(im));
      }
      c.g_input = compressed_mag_const(X, cfg_.gen_loss.mag_compression, {1, c.frames, c.bins});

      dsp::Waveform ref_wave = c.y_wave;
      dsp::Spectrogram ref_spec;
      if (cfg_.mode.cp) {
        const auto star = star_cache.get(e.mix_path, c.y_wave, cfg_.stft);
        ref_wave = star->wave;
        ref_spec = star->spec;
      } else {
        ref_spec = dsp::stft(c.y_wave, cfg_.stft);
      }
      c.ref_mag2d = compressed_mag_const(ref_spec, cfg_.gen_loss.mag_compression, {c.frames, c.bins});
      c.ref_mag3d = compressed_mag_const(ref_spec, cfg_.gen_loss.mag_compression, {1, c.frames, c.bins});
      c.ref_wave_t = autonn::make_const({clip_len_}, ref_wave.samples);

      if (cfg_.mode.nd) {
        if (cfg_.mode.cp) {
          const dsp::Spectrogram xs = dsp::stft(dsp::istft(X), cfg_.stft);
          c.noisy_mag3d = compressed_mag_const(xs, cfg_.gen_loss.mag_compression, {1, c.frames, c.bins});
        } else {
          c.noisy_mag3d = compressed_mag_const(X, cfg_.gen_loss.mag_compression, {1, c.frames, c.bins});
        }
        c.q_noisy = metrics::q_score(c.x_wave, c.y_wave, cfg_.ssnr);
      }
      clips_.push_back(std::move(c));
    }
  }

  TrainConfig cfg_;
  TrainHooks hooks_;
  autonn::GeneratorNet gen_;
  autonn::DiscriminatorNet disc_;
  autonn::AdamState adam_g_, adam_d_;
  std::vector<Clip> clips_;
  int clip_len_ = 0;
  int step_ = 0;
  surgery::ConflictReport last_conflict_;
};

// ---------------------------------------------------------------------------
// Ablation grid: all eight modes over a seed list, summarized per mode in the
// reporting order of the study grid.
// ---------------------------------------------------------------------------

struct AblationCell {
  std::string mode;
  int runs = 0;
  int failures = 0;
  double ssnr_noisy_mean = 0.0;
  double ssnr_enh_mean = 0.0;
  double ssnr_enh_std = 0.0;
  double q_enh_mean = 0.0;
  double q_enh_std = 0.0;
};

inline std::vector<AblationCell> run_ablation(const TrainConfig& base,
                                              const data::Manifest& manifest,
                                              const std::vector<std::uint64_t>& seeds,
                                              const std::string& out_dir) {
  if (seeds.empty()) throw ConfigError("ablate: no seeds given");
  fs::create_directories(out_dir);

  auto mean_of = [](const std::vector<double>& v) {
    if (v.empty()) return 0.0;
    double s = 0.0;
    for (double x : v) s += x;
    return s / static_cast<double>(v.size());
  };
  auto std_of = [&](const std::vector<double>& v) {
    if (v.size() < 2) return 0.0;
    const double m = mean_of(v);
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return std::sqrt(s / static_cast<double>(v.size() - 1));
  };

  std::vector<AblationCell> cells;
  for (const auto& mode : ablation_modes()) {
    AblationCell cell;
    cell.mode = mode.name();
    std::vector<double> noisy, enh, q;
    for (std::uint64_t seed : seeds) {
      TrainConfig cfg = base;
      cfg.mode = mode;
      cfg.gen_loss.cp_enabled = mode.cp;
      cfg.seed = seed;
      cfg.out_dir = (fs::path(out_dir) / mode.name() / ("seed" + std::to_string(seed))).string();
      try {
        cfg.validate();
        Trainer trainer(cfg, manifest);
        const TrainResult result = trainer.run();
        const EvalResult ev = evaluate_checkpoint(result.best_checkpoint, manifest, "test", cfg.ssnr);
        noisy.push_back(ev.mean_ssnr_noisy);
        enh.push_back(ev.mean_ssnr_enh);
        q.push_back(ev.mean_q_enh);
        SCPGAN_INFO("[ablate] %s seed %llu: best ssnr %.3f dB", cell.mode.c_str(),
                    static_cast<unsigned long long>(seed), ev.mean_ssnr_enh);
      } catch (const std::exception& e) {
        ++cell.failures;
        SCPGAN_ERROR("[ablate] %s seed %llu failed: %s", cell.mode.c_str(),
                     static_cast<unsigned long long>(seed), e.what());
      }
    }
    cell.runs = static_cast<int>(enh.size());
    cell.ssnr_noisy_mean = mean_of(noisy);
    cell.ssnr_enh_mean = mean_of(enh);
    cell.ssnr_enh_std = std_of(enh);
    cell.q_enh_mean = mean_of(q);
    cell.q_enh_std = std_of(q);
    cells.push_back(std::move(cell));
  }
  return cells;
}

inline std::string ablation_csv_header() {
  return "mode,runs,failures,ssnr_noisy_mean,ssnr_enh_mean,ssnr_enh_std,q_enh_mean,q_enh_std";
}

inline std::string ablation_csv_row(const AblationCell& c) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%s,%d,%d,%.10g,%.10g,%.10g,%.10g,%.10g", c.mode.c_str(), c.runs,
                c.failures, c.ssnr_noisy_mean, c.ssnr_enh_mean, c.ssnr_enh_std, c.q_enh_mean,
                c.q_enh_std);
  return buf;
}

inline void write_ablation_summary(const std::string& path, const std::vector<AblationCell>& cells) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw IoError("cannot open for write: " + path);
  f << ablation_csv_header() << "\n";
  for (const auto& c : cells) f << ablation_csv_row(c) << "\n";
}

}  // namespace scpgan::train
