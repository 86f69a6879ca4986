// scpgan: data synthesis, training, evaluation and property checks for the
// self-correcting / consistency-preserving GAN speech-enhancement kit.

#include <CLI11.hpp>

#include "scpgan/checks.hpp"
#include "scpgan/data.hpp"
#include "scpgan/trainer.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitCheckFailed = 1;
constexpr int kExitUsage = 2;

struct CsvOut {
  std::ofstream f;
  explicit CsvOut(const std::string& path) : f(path, std::ios::trunc) {
    if (!f) throw scpgan::IoError("cannot open for write: " + path);
  }
};

int cmd_gen_data(const std::string& out, int clips, double seconds, int sr, std::uint64_t seed) {
  scpgan::data::GenDataConfig cfg;
  cfg.out_dir = out;
  cfg.clips = clips;
  cfg.seconds = seconds;
  cfg.sample_rate = sr;
  cfg.seed = seed;
  const auto r = scpgan::data::generate_corpus(cfg);
  std::printf("corpus: %d train + %d test clips, %.1f s total audio\n", r.n_train, r.n_test,
              r.total_duration_s);
  std::printf("manifest: %s (hash %016llx)\n", r.manifest_path.c_str(),
              static_cast<unsigned long long>(r.manifest_hash));
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& mode_name,
              std::optional<std::uint64_t> seed, const std::string& out_dir) {
  scpgan::train::TrainConfig cfg = scpgan::train::load_config(config_path);
  if (!mode_name.empty()) {
    cfg.mode = scpgan::train::parse_mode(mode_name);
    cfg.gen_loss.cp_enabled = cfg.mode.cp;
  }
  if (seed) cfg.seed = *seed;
  if (!out_dir.empty()) cfg.out_dir = out_dir;
  cfg.validate();
  const auto manifest = scpgan::data::load_manifest(cfg.manifest_path);
  scpgan::train::Trainer trainer(cfg, manifest);
  const auto result = trainer.run();
  std::printf("mode %s seed %llu: test ssnr noisy %.3f dB, enhanced %.3f dB (best %.3f @ epoch %d)\n",
              cfg.mode.name().c_str(), static_cast<unsigned long long>(cfg.seed),
              result.final_ssnr_noisy, result.final_ssnr_enh, result.best_ssnr_enh,
              result.best_epoch);
  std::printf("checkpoints: %s, %s\n", result.best_checkpoint.c_str(),
              result.final_checkpoint.c_str());
  return kExitOk;
}

int cmd_eval(const std::string& ckpt, const std::string& manifest_path, const std::string& split,
             const std::string& out_csv) {
  const auto manifest = scpgan::data::load_manifest(manifest_path);
  const auto ev = scpgan::train::evaluate_checkpoint(ckpt, manifest, split);
  CsvOut out(out_csv);
  out.f << scpgan::train::eval_csv_header() << "\n";
  for (const auto& row : ev.rows) out.f << scpgan::train::eval_csv_row(row) << "\n";
  scpgan::train::EvalRow mean{"mean", 0.0, ev.mean_ssnr_noisy, ev.mean_ssnr_enh, ev.mean_q_noisy,
                              ev.mean_q_enh};
  out.f << scpgan::train::eval_csv_row(mean) << "\n";
  std::printf(
      "%s split: %zu clips, mean ssnr noisy %.3f dB -> enhanced %.3f dB (q_ssnr %.4f -> %.4f)\n",
      split.c_str(), ev.rows.size(), ev.mean_ssnr_noisy, ev.mean_ssnr_enh, ev.mean_q_noisy,
      ev.mean_q_enh);
  return kExitOk;
}

int cmd_ablate(const std::string& config_path, const std::string& seeds_arg,
               const std::string& out_dir) {
  std::vector<std::uint64_t> seeds;
  {
    std::string tok;
    for (char ch : seeds_arg + ",") {
      if (ch == ',') {
        if (!tok.empty()) {
          try {
            seeds.push_back(std::stoull(tok));
          } catch (const std::exception&) {
            throw scpgan::ConfigError("ablate: bad seed '" + tok + "'");
          }
        }
        tok.clear();
      } else {
        tok += ch;
      }
    }
  }
  if (seeds.empty()) throw scpgan::ConfigError("ablate: no seeds given");

  const scpgan::train::TrainConfig base = scpgan::train::load_config(config_path);
  const auto manifest = scpgan::data::load_manifest(base.manifest_path);
  const auto cells = scpgan::train::run_ablation(base, manifest, seeds, out_dir);
  const std::string summary_path = (std::filesystem::path(out_dir) / "summary.csv").string();
  scpgan::train::write_ablation_summary(summary_path, cells);
  for (const auto& c : cells)
    std::printf("%-10s runs %d (failures %d): ssnr %.3f -> %.3f dB\n", c.mode.c_str(), c.runs,
                c.failures, c.ssnr_noisy_mean, c.ssnr_enh_mean);
  std::printf("ablation summary: %s\n", summary_path.c_str());
  return kExitOk;
}

int cmd_check(const std::string& suite, std::uint64_t seed) {
  std::printf("check seed: %llu\n", static_cast<unsigned long long>(seed));
  bool all_pass = true;
  int ran = 0;

  if (suite == "surgery" || suite == "all") {
    const auto r = scpgan::checks::run_surgery_check(seed);
    std::printf("surgery: %d trials, violations c/e/n %d/%d/%d, max weight err %.3g/%.3g (%.2fs) %s\n",
                r.trials, r.violations_c, r.violations_e, r.violations_n, r.max_we_rel_err,
                r.max_wn_rel_err, r.seconds, r.pass ? "PASS" : "FAIL");
    all_pass = all_pass && r.pass;
    ++ran;
  }
  if (suite == "dsp" || suite == "all") {
    const auto r = scpgan::checks::run_dsp_check(seed);
    std::printf("dsp: %d waves, roundtrip %.3g, idempotence %.3g, linearity %.3g, cola %.3g (%.2fs) %s\n",
                r.waves, r.max_roundtrip_rel, r.max_idempotence_rel, r.max_linearity_rel,
                r.max_cola_dev, r.seconds, r.pass ? "PASS" : "FAIL");
    all_pass = all_pass && r.pass;
    ++ran;
  }
  if (suite == "autodiff" || suite == "all") {
    const auto r = scpgan::checks::run_autodiff_check(seed);
    std::printf("autodiff: %d nets, max fd err %.3g (cp path %.3g) (%.2fs) %s\n", r.nets,
                r.max_rel_err, r.cp_path_rel_err, r.seconds, r.pass ? "PASS" : "FAIL");
    all_pass = all_pass && r.pass;
    ++ran;
  }
  if (ran == 0) throw scpgan::ConfigError("check: unknown suite " + suite);
  return all_pass ? kExitOk : kExitCheckFailed;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"toy GAN speech-enhancement kit: self-correcting discriminator optimization "
               "and consistency-preserving losses"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "synthesize a clean/noise/mixture corpus");
  std::string gen_out = "corpus";
  int gen_clips = 200;
  double gen_seconds = 1.0;
  int gen_sr = 16000;
  std::uint64_t gen_seed = 1234;
  gen->add_option("--out", gen_out, "output directory");
  gen->add_option("--clips", gen_clips, "number of training clips (test count derived)");
  gen->add_option("--seconds", gen_seconds, "clip duration in seconds");
  gen->add_option("--sr", gen_sr, "sample rate in Hz");
  gen->add_option("--seed", gen_seed, "corpus seed");

  // train
  auto* train = app.add_subcommand("train", "train one configuration");
  std::string train_config, train_mode, train_out;
  std::uint64_t train_seed = 0;
  bool train_seed_set = false;
  train->add_option("--config", train_config, "JSON config file")->required();
  train->add_option("--mode", train_mode,
                    "baseline|nd|sc2|cp|nd-sc3|nd-cp|sc2-cp|nd-sc3-cp (overrides config)");
  train->add_option("--seed", train_seed, "seed (overrides config)")
      ->each([&train_seed_set](const std::string&) { train_seed_set = true; });
  train->add_option("--out", train_out, "output directory (overrides config)");

  // eval
  auto* evalc = app.add_subcommand("eval", "evaluate a checkpoint on a manifest split");
  std::string eval_ckpt, eval_manifest, eval_split = "test", eval_out = "eval.csv";
  evalc->add_option("--ckpt", eval_ckpt, "checkpoint file")->required();
  evalc->add_option("--manifest", eval_manifest, "manifest file")->required();
  evalc->add_option("--split", eval_split, "train|test");
  evalc->add_option("--out", eval_out, "output CSV");

  // ablate
  auto* ablate = app.add_subcommand("ablate", "run the 8-mode ablation grid over seeds");
  std::string abl_config, abl_seeds = "1,2,3", abl_out = "ablation";
  ablate->add_option("--config", abl_config, "JSON config file")->required();
  ablate->add_option("--seeds", abl_seeds, "comma-separated seeds");
  ablate->add_option("--out", abl_out, "output directory");

  // check
  auto* check = app.add_subcommand("check", "run randomized property suites");
  std::string check_suite = "all";
  std::uint64_t check_seed = 20260811;
  check->add_option("--suite", check_suite, "surgery|dsp|autodiff|all");
  check->add_option("--seed", check_seed, "suite seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }

  try {
    if (gen->parsed()) return cmd_gen_data(gen_out, gen_clips, gen_seconds, gen_sr, gen_seed);
    if (train->parsed())
      return cmd_train(train_config, train_mode,
                       train_seed_set ? std::optional<std::uint64_t>(train_seed) : std::nullopt,
                       train_out);
    if (evalc->parsed()) return cmd_eval(eval_ckpt, eval_manifest, eval_split, eval_out);
    if (ablate->parsed()) return cmd_ablate(abl_config, abl_seeds, abl_out);
    if (check->parsed()) return cmd_check(check_suite, check_seed);
  } catch (const scpgan::ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitUsage;
  } catch (const scpgan::IoError& e) {
    std::fprintf(stderr, "io error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitCheckFailed;
  }
  return kExitUsage;
}
