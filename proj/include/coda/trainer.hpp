#pragma once

// Two-stage training.
//
// Stage A trains the class-agnostic detector on base annotations together
// with box-wise feature distillation. Stage B continues from the Stage A
// state and, depending on the configured variant, runs a discovery round
// every `update_period_epochs` epochs (growing the novel label pool that
// supervises detection) and adds contrastive alignment on matched queries.
//
// A run is a pure function of (config, dataset): every random draw comes from
// one generator seeded from the config seed, and evaluation uses its own
// per-epoch generator so it never perturbs training.

#include <algorithm>
#include <atomic>
#include <cstdint>
#include <exception>
#include <functional>
#include <future>
#include <mutex>
#include <random>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "coda/alignment.hpp"
#include "coda/detector.hpp"
#include "coda/discovery.hpp"
#include "coda/encoders.hpp"
#include "coda/errors.hpp"
#include "coda/eval.hpp"
#include "coda/matching.hpp"
#include "coda/world.hpp"

namespace coda {

enum class FeatureSource {
  /// Classify with the detector's own query features.
  kPoint,
  /// Classify with the image feature of each query's projected crop.
  kCrop,
};

struct StageBOptions {
  bool discovery = true;
  ContrastiveMode contrastive = ContrastiveMode::kDiscovery;

  friend bool operator==(const StageBOptions&, const StageBOptions&) = default;
};

struct EvalOptions {
  double iou_threshold = 0.25;
  ApInterpolation ap = ApInterpolation::kAllPoint;
  PostprocessOptions post{};
  FeatureSource features = FeatureSource::kPoint;
};

struct TrainConfig {
  WorldConfig world{};
  EncoderConfig encoder{};
  DetectorConfig detector{};
  DiscoveryConfig discovery{};
  MatchWeights matching{};
  DetectionLossWeights detection{};
  AlignmentBatchOptions alignment{};
  StageBOptions stage_b{};
  EvalOptions eval{};

  int stage_a_epochs = 60;
  int stage_b_epochs = 40;
  int eval_every = 5;
  int batch_size = 8;
  UpdateRule update_rule = UpdateRule::kAdam;
  double learning_rate = 0.003;
  double momentum = 0.9;
  double clip_norm = 50.0;
  double lambda_distill = 0.1;
  double lambda_contrastive = 1.0;
  /// Detection-loss weight of discovered boxes relative to base annotations.
  double discovered_weight = 1.0;
  std::uint64_t seed = 1;

  void validate() const {
    world.validate();
    encoder.validate();
    detector.validate();
    discovery.validate();
    if (stage_a_epochs < 1) throw ConfigError("train: stage_a_epochs must be >= 1");
    if (stage_b_epochs < 0) throw ConfigError("train: stage_b_epochs must be >= 0");
    if (eval_every < 1) throw ConfigError("train: eval_every must be >= 1");
    if (stage_a_epochs % eval_every != 0 || stage_b_epochs % eval_every != 0)
      throw ConfigError("train: eval_every must divide both stage lengths");
    if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
    if (!(learning_rate >= 0.0)) throw ConfigError("train: learning_rate must be >= 0");
    if (!(momentum >= 0.0 && momentum < 1.0)) throw ConfigError("train: momentum must be in [0,1)");
    if (!(clip_norm >= 0.0)) throw ConfigError("train: clip_norm must be >= 0");
    if (!(lambda_distill >= 0.0 && lambda_contrastive >= 0.0 && discovered_weight >= 0.0))
      throw ConfigError("train: loss weights must be >= 0");
    if (encoder.dim != detector.feature_dim)
      throw ConfigError("train: encoder.dim must equal detector.feature_dim");
    if (alignment.extra_queries < 0) throw ConfigError("train: alignment.extra_queries must be >= 0");
  }
};

struct MetricsRow {
  int epoch = 0;
  double ap_novel = 0, ap_base = 0, ap_mean = 0;
  double ar_novel = 0, ar_base = 0, ar_mean = 0;
  std::size_t pool_size = 0;

  friend bool operator==(const MetricsRow&, const MetricsRow&) = default;
};

struct EpochStats {
  int epoch = 0;
  double detection = 0, distill = 0, contrastive = 0;
  std::size_t pool_size = 0;
};

/// Hooks for streaming run outputs (metrics rows, pool snapshots).
struct RunObserver {
  virtual ~RunObserver() = default;
  virtual void on_metrics(const MetricsRow&) {}
  virtual void on_pool_update(int /*epoch*/, const LabelPool&, const DiscoveryReport&) {}
};

/// Immutable per-run inputs shared by both stages.
struct TrainContext {
  const Dataset& data;
  TextEmbeddings text;
  std::vector<QueryNeighborhoods> train_nb;
  std::vector<QueryNeighborhoods> val_nb;

  TrainContext(const Dataset& ds, const TrainConfig& cfg) : data(ds) {
    text = encode_text(ds.vocab, cfg.encoder);
    for (const Scene& s : ds.train)
      train_nb.push_back(build_neighborhoods(s, cfg.detector.num_queries, cfg.detector.k_neighbors));
    for (const Scene& s : ds.val)
      val_nb.push_back(build_neighborhoods(s, cfg.detector.num_queries, cfg.detector.k_neighbors));
  }
};

struct TrainState {
  DetectorParams params;
  Optimizer optimizer;
  LabelPool pool;
  std::mt19937_64 rng;
  int epoch = 0;
  long step = 0;
  std::vector<MetricsRow> history;
  std::vector<EpochStats> epochs;
  std::vector<DiscoveryReport> discovery_reports;
};

struct RunArtifacts {
  DetectorParams params;
  LabelPool pool;
  std::vector<MetricsRow> history;
  std::vector<EpochStats> epochs;
  std::vector<DiscoveryReport> discovery_reports;
  long steps = 0;
};

inline TrainState initial_state(const TrainConfig& cfg, const TrainContext& ctx) {
  TrainState st;
  DetectorConfig dc = cfg.detector;
  dc.seed = cfg.detector.seed ^ (cfg.seed * 0x9E3779B97F4A7C15ull);
  st.params = init_params(dc);
  st.optimizer.rule = cfg.update_rule;
  st.optimizer.learning_rate = cfg.learning_rate;
  st.optimizer.momentum = cfg.momentum;
  st.optimizer.clip_norm = cfg.clip_norm;
  st.pool = LabelPool::from_scenes(ctx.data.train);
  st.rng.seed(cfg.seed);
  return st;
}

inline ClassifyOptions classify_options(const TrainConfig& cfg) {
  return {cfg.encoder.temperature, cfg.encoder.normalize_features};
}

/// Evaluates the current parameters on the validation scenes.
inline EvalResult evaluate_model(const TrainConfig& cfg, const TrainContext& ctx, const DetectorParams& params,
                                 std::uint64_t eval_seed) {
  std::mt19937_64 rng(eval_seed);
  std::vector<std::vector<Detection>> dets;
  std::vector<std::vector<GroundTruthBox>> gts;
  for (std::size_t i = 0; i < ctx.data.val.size(); ++i) {
    const Scene& s = ctx.data.val[i];
    const auto preds = forward(s, ctx.val_nb[i], params);
    std::vector<Detection> d;
    if (cfg.eval.features == FeatureSource::kCrop) {
      std::vector<std::vector<double>> feats(preds.size());
      for (std::size_t q = 0; q < preds.size(); ++q) {
        try {
          feats[q] = encode_image_crop(s, project_box(preds[q].box, s.intrinsics), ctx.text, cfg.encoder, rng);
        } catch (const BehindCamera&) {
        } catch (const EmptyCrop&) {
        }
      }
      d = classify_predictions(preds, ctx.text, classify_options(cfg), feats);
    } else {
      d = classify_predictions(preds, ctx.text, classify_options(cfg));
    }
    dets.push_back(postprocess(std::move(d), cfg.eval.post));
    gts.push_back(ground_truth(s));
  }
  return evaluate(dets, gts, ctx.data.vocab, cfg.eval.iou_threshold, cfg.eval.ap);
}

namespace detail {

struct SceneStep {
  double detection = 0, distill = 0, contrastive = 0;
};

// Forward, losses and backward for one scene; gradients accumulate in `grad`.
inline SceneStep scene_step(const TrainConfig& cfg, const TrainContext& ctx, TrainState& st, std::size_t idx,
                            bool stage_b, std::vector<double>& grad, ForwardCache& cache) {
  const Scene& scene = ctx.data.train[idx];
  const auto preds = forward(scene, ctx.train_nb[idx], st.params, &cache);
  const bool with_novel = stage_b && cfg.stage_b.discovery;
  const auto entries = st.pool.labels(scene.scene_id, with_novel);
  std::vector<LabelBox> labels;
  labels.reserve(entries.size());
  for (const PoolEntry& e : entries)
    labels.push_back({e.box, e.source == EntrySource::kDiscovered ? cfg.discovered_weight : 1.0});

  const Assignment a = match(preds, labels, cfg.matching);
  DetectionLoss det = detection_loss(preds, labels, a.pairs, cfg.detection);
  SceneStep out;
  out.detection = det.value;

  const ContrastiveMode cmode = stage_b ? cfg.stage_b.contrastive : ContrastiveMode::kOff;
  const bool want_contrastive = cmode != ContrastiveMode::kOff && cfg.lambda_contrastive > 0.0;
  if (cfg.lambda_distill > 0.0 || want_contrastive) {
    const AlignmentBatch batch =
        build_alignment_batch(scene, preds, entries, a, ctx.text, cfg.encoder, cfg.alignment, st.rng);
    if (cfg.lambda_distill > 0.0) {
      const FeatureLoss dl = distill_loss(batch, preds);
      out.distill = dl.value;
      accumulate_feature_grads(det.grads, dl, cfg.lambda_distill);
    }
    if (want_contrastive) {
      const ContrastiveOptions co{cmode, cfg.encoder.temperature, cfg.encoder.normalize_features};
      const FeatureLoss cl = contrastive_loss(batch, preds, ctx.text, ctx.data.vocab, co);
      out.contrastive = cl.value;
      accumulate_feature_grads(det.grads, cl, cfg.lambda_contrastive);
    }
  }
  backward(st.params, cache, det.grads, grad);
  return out;
}

}  // namespace detail

/// Runs `epochs` epochs of the given stage, continuing from `st`.
inline void run_stage(const TrainConfig& cfg, const TrainContext& ctx, TrainState& st, int epochs, bool stage_b,
                      RunObserver* observer = nullptr) {
  const std::size_t n = ctx.data.train.size();
  std::vector<std::size_t> order(n);
  std::vector<double> grad(st.params.values.size(), 0.0);
  ForwardCache cache;

  for (int e = 0; e < epochs; ++e) {
    const int epoch = st.epoch + 1;
    if (stage_b && cfg.stage_b.discovery && e % cfg.discovery.update_period_epochs == 0) {
      Predictor predict = [&](const Scene& s, std::size_t i) { return forward(s, ctx.train_nb[i], st.params); };
      const DiscoveryReport rep = run_discovery_epoch(ctx.data.train, predict, st.pool, ctx.data.vocab, ctx.text,
                                                      cfg.encoder, cfg.discovery, epoch, st.rng);
      st.discovery_reports.push_back(rep);
      if (observer) observer->on_pool_update(epoch, st.pool, rep);
    }

    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), st.rng);
    EpochStats stats;
    stats.epoch = epoch;
    for (std::size_t b = 0; b < n; b += static_cast<std::size_t>(cfg.batch_size)) {
      std::fill(grad.begin(), grad.end(), 0.0);
      const std::size_t end = std::min(n, b + static_cast<std::size_t>(cfg.batch_size));
      for (std::size_t j = b; j < end; ++j) {
        const auto s = detail::scene_step(cfg, ctx, st, order[j], stage_b, grad, cache);
        stats.detection += s.detection;
        stats.distill += s.distill;
        stats.contrastive += s.contrastive;
      }
      const double inv = 1.0 / static_cast<double>(end - b);
      for (double& g : grad) g *= inv;
      try {
        apply_update(st.params, grad, st.optimizer);
      } catch (const NonFiniteGradient& ex) {
        throw NonFiniteGradient(ex.head(), "epoch " + std::to_string(epoch) + ", step " + std::to_string(st.step));
      }
      ++st.step;
    }
    if (n > 0) {
      stats.detection /= static_cast<double>(n);
      stats.distill /= static_cast<double>(n);
      stats.contrastive /= static_cast<double>(n);
    }
    stats.pool_size = st.pool.novel_size();
    st.epochs.push_back(stats);
    st.epoch = epoch;

    if (epoch % cfg.eval_every == 0) {
      const EvalResult r = evaluate_model(cfg, ctx, st.params, cfg.seed * 1000003ull + static_cast<std::uint64_t>(epoch));
      MetricsRow row{epoch, r.ap_novel, r.ap_base, r.ap_mean, r.ar_novel, r.ar_base, r.ar_mean, st.pool.novel_size()};
      st.history.push_back(row);
      if (observer) observer->on_metrics(row);
    }
  }
}

inline RunArtifacts to_artifacts(TrainState st) {
  return {std::move(st.params), std::move(st.pool), std::move(st.history), std::move(st.epochs),
          std::move(st.discovery_reports), st.step};
}

/// Stage A followed by Stage B.
inline RunArtifacts train(const TrainConfig& cfg, const Dataset& data, RunObserver* observer = nullptr) {
  cfg.validate();
  const TrainContext ctx(data, cfg);
  TrainState st = initial_state(cfg, ctx);
  run_stage(cfg, ctx, st, cfg.stage_a_epochs, false, observer);
  run_stage(cfg, ctx, st, cfg.stage_b_epochs, true, observer);
  return to_artifacts(std::move(st));
}

// ---------------------------------------------------------------------------
// Ablation suites

struct AblationVariant {
  std::string name;
  TrainConfig config;
};

struct AblationRow {
  std::string suite;
  std::string name;
  std::uint64_t seed = 0;
  double semantic_threshold = 0, objectness_threshold = 0;
  MetricsRow final;
  std::vector<MetricsRow> history;
};

/// Component ablation: 2D-classifier baseline, distillation only, discovery +
/// distillation, discovery + distillation + base-only alignment, full.
inline std::vector<AblationVariant> component_variants(const TrainConfig& base) {
  std::vector<AblationVariant> v;
  TrainConfig c = base;
  c.lambda_distill = 0.0;
  c.stage_b = {false, ContrastiveMode::kOff};
  c.eval.features = FeatureSource::kCrop;
  v.push_back({"detector_clip", c});

  c = base;
  c.stage_b = {false, ContrastiveMode::kOff};
  v.push_back({"distillation", c});

  c = base;
  c.stage_b = {true, ContrastiveMode::kOff};
  v.push_back({"nod_distillation", c});

  c = base;
  c.stage_b = {true, ContrastiveMode::kBaseOnly};
  v.push_back({"nod_distillation_plaina", c});

  c = base;
  c.stage_b = {true, ContrastiveMode::kDiscovery};
  v.push_back({"nod_dcma_full", c});
  return v;
}

/// Threshold grid {0.3, 0.5}^2 on the full model, plus gates saturated at 1.
inline std::vector<AblationVariant> threshold_variants(const TrainConfig& base) {
  std::vector<AblationVariant> v;
  TrainConfig c = base;
  c.stage_b = {true, ContrastiveMode::kDiscovery};
  c.discovery.semantic_threshold = 1.0;
  c.discovery.objectness_threshold = 1.0;
  v.push_back({"disabled", c});
  for (double s : {0.3, 0.5})
    for (double g : {0.3, 0.5}) {
      c.discovery.semantic_threshold = s;
      c.discovery.objectness_threshold = g;
      v.push_back({"sem" + std::to_string(s).substr(0, 3) + "_geo" + std::to_string(g).substr(0, 3), c});
    }
  return v;
}

namespace detail {

// Stage A only depends on these fields; variants that agree share one run.
inline bool same_stage_a(const TrainConfig& a, const TrainConfig& b) {
  return a.seed == b.seed && a.lambda_distill == b.lambda_distill && a.stage_a_epochs == b.stage_a_epochs &&
         a.eval.features == b.eval.features && a.update_rule == b.update_rule &&
         a.learning_rate == b.learning_rate && a.momentum == b.momentum && a.clip_norm == b.clip_norm &&
         a.batch_size == b.batch_size && a.eval_every == b.eval_every && a.detector == b.detector &&
         a.matching == b.matching && a.detection == b.detection;
}

}  // namespace detail

/// Runs every variant. Variants with an identical Stage A share its result,
/// which is the same state a fresh run would reach. Stage B runs fan out over
/// `jobs` threads; rows come back in variant order.
inline std::vector<AblationRow> run_variants(const std::string& suite, const std::vector<AblationVariant>& variants,
                                             const Dataset& data, int jobs = 1) {
  struct Prefix {
    TrainConfig cfg;
    TrainState state;
  };
  if (variants.empty()) return {};
  for (const auto& v : variants) v.config.validate();
  const TrainContext ctx(data, variants.front().config);
  std::vector<Prefix> prefixes;
  std::vector<std::size_t> prefix_of(variants.size());
  for (std::size_t i = 0; i < variants.size(); ++i) {
    std::size_t p = 0;
    for (; p < prefixes.size(); ++p)
      if (detail::same_stage_a(prefixes[p].cfg, variants[i].config)) break;
    if (p == prefixes.size()) {
      const TrainConfig& cfg = variants[i].config;
      TrainState st = initial_state(cfg, ctx);
      run_stage(cfg, ctx, st, cfg.stage_a_epochs, false);
      prefixes.push_back({cfg, std::move(st)});
    }
    prefix_of[i] = p;
  }

  std::vector<AblationRow> rows(variants.size());
  std::atomic<std::size_t> next{0};
  std::mutex error_mutex;
  std::exception_ptr error;
  auto worker = [&] {
    for (std::size_t i = next++; i < variants.size(); i = next++) {
      try {
        const TrainConfig& cfg = variants[i].config;
        TrainState st = prefixes[prefix_of[i]].state;
        run_stage(cfg, ctx, st, cfg.stage_b_epochs, true);
        AblationRow& r = rows[i];
        r.suite = suite;
        r.name = variants[i].name;
        r.seed = cfg.seed;
        r.semantic_threshold = cfg.discovery.semantic_threshold;
        r.objectness_threshold = cfg.discovery.objectness_threshold;
        r.history = st.history;
        r.final = st.history.empty() ? MetricsRow{} : st.history.back();
      } catch (...) {
        const std::lock_guard<std::mutex> lock(error_mutex);
        if (!error) error = std::current_exception();
        next = variants.size();
      }
    }
  };
  const int n_threads = std::max(1, std::min<int>(jobs, static_cast<int>(variants.size())));
  std::vector<std::thread> threads;
  for (int t = 1; t < n_threads; ++t) threads.emplace_back(worker);
  worker();
  for (auto& t : threads) t.join();
  if (error) std::rethrow_exception(error);
  return rows;
}

/// Both suites: component ablation rows first, then the threshold grid.
inline std::vector<AblationRow> run_ablation_suite(const TrainConfig& base, const Dataset& data, int jobs = 1) {
  std::vector<AblationVariant> all = component_variants(base);
  const std::size_t n_component = all.size();
  for (auto& v : threshold_variants(base)) all.push_back(std::move(v));
  auto rows = run_variants("", all, data, jobs);
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].suite = i < n_component ? "components" : "thresholds";
  return rows;
}

}  // namespace coda
