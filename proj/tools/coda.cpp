// coda: dataset generation, training, ablation suites, evaluation, plots.
//
// Exit codes: 0 success, 2 configuration error, 3 runtime error.

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"

#include "coda/coda.hpp"

#ifndef CODA_VERSION
#define CODA_VERSION "unknown"
#endif

namespace fs = std::filesystem;
using namespace coda;

namespace {

struct Args {
  std::string config;
  std::string dataset;
  std::string out;
  std::string checkpoint;
  std::string suite = "all";
  std::optional<std::uint64_t> seed;
  int jobs = 1;
  std::vector<std::string> argv;
};

TrainConfig resolve_config(const Args& a) {
  TrainConfig cfg = a.config.empty() ? TrainConfig{} : io::load_train_config(a.config);
  if (a.seed) {
    cfg.seed = *a.seed;
    cfg.world.seed = *a.seed;
  }
  cfg.validate();
  return cfg;
}

void make_dir(const fs::path& p) {
  std::error_code ec;
  fs::create_directories(p, ec);
  if (ec) throw IoError("cannot create " + p.string() + ": " + ec.message());
}

void write_manifest(const std::string& command, const Args& a, std::uint64_t seed) {
  make_dir(a.out);
  io::RunManifest m{command, a.config, a.dataset, seed, a.out, CODA_VERSION, a.argv};
  io::save_run_manifest(fs::path(a.out) / "run_manifest.json", m);
}

// The dataset directory when given, otherwise the config's world generated in memory.
Dataset obtain_dataset(const Args& a, const TrainConfig& cfg) {
  if (!a.dataset.empty()) return io::load_dataset(a.dataset);
  return generate_dataset(cfg.world);
}

void check_dataset_matches(const TrainConfig& cfg, const Dataset& ds) {
  const auto text = encode_text(ds.vocab, cfg.encoder);
  if (text.dim != cfg.detector.feature_dim) throw ConfigError("encoder.dim must equal detector.feature_dim");
  if (ds.train.empty()) throw ConfigError("dataset has no training scenes");
}

int cmd_gen(const Args& a) {
  if (a.out.empty()) throw ConfigError("gen: --out is required");
  const TrainConfig cfg = resolve_config(a);
  write_manifest("gen", a, cfg.world.seed);
  const Dataset ds = generate_dataset(cfg.world);
  io::save_dataset(a.out, ds);
  std::printf("wrote %zu train + %zu val scenes to %s\n", ds.train.size(), ds.val.size(), a.out.c_str());
  return 0;
}

class RunWriter : public RunObserver {
 public:
  RunWriter(const fs::path& dir, const Vocabulary& vocab) : dir_(dir), vocab_(vocab), metrics_(dir / "metrics.csv") {
    make_dir(dir / "pool");
  }

  void on_metrics(const MetricsRow& r) override {
    metrics_.append(r);
    std::printf("epoch %4d  AP_Novel %6.2f  AP_Base %6.2f  AR_Novel %6.2f  AR_Base %6.2f  pool %zu\n", r.epoch,
                100 * r.ap_novel, 100 * r.ap_base, 100 * r.ar_novel, 100 * r.ar_base, r.pool_size);
    std::fflush(stdout);
  }

  void on_pool_update(int epoch, const LabelPool& pool, const DiscoveryReport& rep) override {
    char name[64];
    std::snprintf(name, sizeof name, "pool_epoch_%04d.json", epoch);
    io::save_pool(dir_ / "pool" / name, pool, vocab_);
    std::printf("discovery at epoch %d: %zu accepted, %zu added, %zu replaced, pool %zu\n", epoch, rep.accepted,
                rep.added, rep.replaced, pool.novel_size());
    std::fflush(stdout);
  }

 private:
  fs::path dir_;
  const Vocabulary& vocab_;
  io::MetricsWriter metrics_;
};

int cmd_train(const Args& a) {
  if (a.out.empty()) throw ConfigError("train: --out is required");
  const TrainConfig cfg = resolve_config(a);
  write_manifest("train", a, cfg.seed);
  io::save_train_config(fs::path(a.out) / "config.json", cfg);
  const Dataset ds = obtain_dataset(a, cfg);
  check_dataset_matches(cfg, ds);

  RunWriter writer(a.out, ds.vocab);
  const TrainContext ctx(ds, cfg);
  TrainState st = initial_state(cfg, ctx);
  run_stage(cfg, ctx, st, cfg.stage_a_epochs, false, &writer);
  run_stage(cfg, ctx, st, cfg.stage_b_epochs, true, &writer);
  io::save_pool(fs::path(a.out) / "pool.json", st.pool, ds.vocab);
  io::save_checkpoint(fs::path(a.out) / "checkpoint.bin", {st.params, st.optimizer, st.epoch});
  return 0;
}

int cmd_ablate(const Args& a) {
  if (a.out.empty()) throw ConfigError("ablate: --out is required");
  if (a.jobs < 1) throw ConfigError("ablate: --jobs must be >= 1");
  const TrainConfig cfg = resolve_config(a);
  std::vector<std::pair<std::string, std::vector<AblationVariant>>> suites;
  if (a.suite == "components" || a.suite == "all") suites.emplace_back("components", component_variants(cfg));
  if (a.suite == "thresholds" || a.suite == "all") suites.emplace_back("thresholds", threshold_variants(cfg));
  if (suites.empty()) throw ConfigError("ablate: --suite must be components, thresholds or all");
  write_manifest("ablate", a, cfg.seed);
  io::save_train_config(fs::path(a.out) / "config.json", cfg);
  const Dataset ds = obtain_dataset(a, cfg);
  check_dataset_matches(cfg, ds);

  std::vector<AblationVariant> all;
  std::vector<std::string> suite_of;
  for (auto& [name, vs] : suites)
    for (auto& v : vs) {
      suite_of.push_back(name);
      all.push_back(std::move(v));
    }
  auto rows = run_variants("", all, ds, a.jobs);

  std::ofstream table(fs::path(a.out) / "ablation.csv", std::ios::binary | std::ios::trunc);
  if (!table) throw IoError("cannot write ablation.csv");
  table << "suite,name,seed,semantic_threshold,objectness_threshold," << io::kMetricsHeader << '\n';
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].suite = suite_of[i];
    const fs::path dir = fs::path(a.out) / rows[i].suite / rows[i].name;
    make_dir(dir);
    io::save_train_config(dir / "config.json", all[i].config);
    {
      io::MetricsWriter w(dir / "metrics.csv");
      for (const auto& r : rows[i].history) w.append(r);
    }
    char prefix[160];
    std::snprintf(prefix, sizeof prefix, "%s,%s,%llu,%.2f,%.2f,", rows[i].suite.c_str(), rows[i].name.c_str(),
                  static_cast<unsigned long long>(rows[i].seed), rows[i].semantic_threshold,
                  rows[i].objectness_threshold);
    table << prefix << io::metrics_line(rows[i].final);
    std::printf("%-12s %-26s AP_Novel %6.2f  AR_Novel %6.2f  AP_Base %6.2f\n", rows[i].suite.c_str(),
                rows[i].name.c_str(), 100 * rows[i].final.ap_novel, 100 * rows[i].final.ar_novel,
                100 * rows[i].final.ap_base);
  }
  return 0;
}

int cmd_eval(const Args& a) {
  if (a.out.empty()) throw ConfigError("eval: --out is required");
  if (a.checkpoint.empty()) throw ConfigError("eval: --checkpoint is required");
  TrainConfig cfg = resolve_config(a);
  write_manifest("eval", a, cfg.seed);
  const io::Checkpoint ck = io::load_checkpoint(a.checkpoint);
  DetectorConfig arch = ck.params.config;
  arch.seed = cfg.detector.seed;
  if (!(arch == cfg.detector)) throw ConfigError("eval: checkpoint detector differs from the config");
  const Dataset ds = obtain_dataset(a, cfg);
  check_dataset_matches(cfg, ds);
  const TrainContext ctx(ds, cfg);
  const EvalResult r = evaluate_model(cfg, ctx, ck.params, cfg.seed * 1000003ull + static_cast<std::uint64_t>(ck.epoch));

  io::json per = io::json::array();
  for (std::size_t c = 0; c < ds.vocab.size(); ++c) {
    if (r.num_gt[c] == 0) continue;
    per.push_back({{"category", ds.vocab.names[c]},
                   {"seen", ds.vocab.is_seen(c)},
                   {"num_gt", r.num_gt[c]},
                   {"AP", 100 * r.ap[c]},
                   {"AR", 100 * r.ar[c]}});
  }
  const io::json out = {{"epoch", ck.epoch},
                        {"AP_Novel", 100 * r.ap_novel},
                        {"AP_Base", 100 * r.ap_base},
                        {"AP_Mean", 100 * r.ap_mean},
                        {"AR_Novel", 100 * r.ar_novel},
                        {"AR_Base", 100 * r.ar_base},
                        {"AR_Mean", 100 * r.ar_mean},
                        {"categories", per}};
  io::detail::write_json(fs::path(a.out) / "eval.json", out);
  std::printf("AP_Novel %.2f  AP_Base %.2f  AP_Mean %.2f  AR_Novel %.2f  AR_Base %.2f  AR_Mean %.2f\n",
              100 * r.ap_novel, 100 * r.ap_base, 100 * r.ap_mean, 100 * r.ar_novel, 100 * r.ar_base, 100 * r.ar_mean);
  return 0;
}

int cmd_plot(const Args& a, const std::string& run_dir) {
  const fs::path dir = run_dir.empty() ? fs::path(a.out) : fs::path(run_dir);
  if (dir.empty()) throw ConfigError("plot: a run directory is required");
  const auto rows = io::read_metrics_csv(dir / "metrics.csv");
  PlotOptions opt;
  if (fs::exists(dir / "config.json")) opt.stage_boundary = io::load_train_config(dir / "config.json").stage_a_epochs;
  const fs::path svg = dir / "novel_curves.svg";
  io::detail::write_text(svg, novel_curves_svg(rows, opt));
  std::printf("wrote %s\n", svg.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"open-vocabulary 3D detection with novel object discovery", "coda"};
  app.require_subcommand(1);
  app.set_version_flag("--version", CODA_VERSION);
  Args a;
  for (int i = 0; i < argc; ++i) a.argv.emplace_back(argv[i]);
  std::string run_dir;

  auto common = [&](CLI::App* sub, bool needs_dataset) {
    sub->add_option("--config", a.config, "JSON config (defaults apply to missing keys)");
    sub->add_option("--out", a.out, "output directory");
    sub->add_option("--seed", a.seed, "overrides the config seed");
    if (needs_dataset) sub->add_option("--dataset", a.dataset, "dataset directory (generated from the config if omitted)");
  };
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  common(gen, false);
  auto* train = app.add_subcommand("train", "two-stage training run");
  common(train, true);
  auto* ablate = app.add_subcommand("ablate", "component and threshold ablation suites");
  common(ablate, true);
  ablate->add_option("--jobs", a.jobs, "parallel Stage B runs");
  ablate->add_option("--suite", a.suite, "components, thresholds or all");
  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the validation split");
  common(eval, true);
  eval->add_option("--checkpoint", a.checkpoint, "checkpoint file");
  auto* plot = app.add_subcommand("plot", "SVG of novel AP/AR curves for a run directory");
  plot->add_option("run", run_dir, "run directory");
  plot->add_option("--out", a.out, "run directory (alternative to the positional)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForVersion& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 2;
  }

  try {
    if (*gen) return cmd_gen(a);
    if (*train) return cmd_train(a);
    if (*ablate) return cmd_ablate(a);
    if (*eval) return cmd_eval(a);
    if (*plot) return cmd_plot(a, run_dir);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 3;
  }
  return 3;
}
