#pragma once

// Novel object discovery and the growing box label pool.
//
// A prediction becomes a discovered novel box when it clears four gates:
//   (a) its 3D IoU with every base annotation of the scene is below iou_gate,
//   (b) its objectness exceeds the geometry threshold,
//   (c) the image crop under its projected box gives a max semantic
//       probability above the semantic threshold,
//   (d) that argmax category is neither a seen category nor background.
// Discovered boxes are merged into the pool by union; a new box overlapping an
// existing novel box (IoU >= iou_gate) replaces it only if its semantic score
// is higher, otherwise it is dropped.

#include <cstdint>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "coda/detector.hpp"
#include "coda/encoders.hpp"
#include "coda/errors.hpp"
#include "coda/geometry.hpp"
#include "coda/vocabulary.hpp"
#include "coda/world.hpp"

namespace coda {

enum class EntrySource { kBase, kDiscovered };

struct PoolEntry {
  Box3D box;
  int category_id = 0;
  EntrySource source = EntrySource::kBase;
  int discovery_epoch = 0;
  double objectness = 1.0;  // geometry prior at discovery time
  double semantic = 1.0;    // semantic prior at discovery time

  friend bool operator==(const PoolEntry&, const PoolEntry&) = default;
};

struct DiscoveryConfig {
  double objectness_threshold = 0.3;
  double semantic_threshold = 0.3;
  double iou_gate = 0.25;
  int update_period_epochs = 5;

  void validate() const {
    auto in01 = [](double v) { return v >= 0.0 && v <= 1.0; };
    if (!in01(objectness_threshold) || !in01(semantic_threshold) || !in01(iou_gate))
      throw ConfigError("discovery: thresholds must be in [0,1]");
    if (update_period_epochs < 1) throw ConfigError("discovery: update_period_epochs must be >= 1");
  }

  friend bool operator==(const DiscoveryConfig&, const DiscoveryConfig&) = default;
};

/// Per-scene base annotations (fixed at construction) plus discovered boxes.
class LabelPool {
 public:
  struct SceneEntries {
    std::vector<PoolEntry> base;
    std::vector<PoolEntry> novel;

    friend bool operator==(const SceneEntries&, const SceneEntries&) = default;
  };

  LabelPool() = default;

  /// Seeds the pool with the base annotations of every scene.
  static LabelPool from_scenes(std::span<const Scene> scenes) {
    LabelPool pool;
    for (const Scene& s : scenes) {
      auto& e = pool.scenes_[s.scene_id];
      for (const SceneObject& o : base_annotations(s))
        e.base.push_back({o.box, o.category_id, EntrySource::kBase, 0, 1.0, 1.0});
    }
    return pool;
  }

  /// Used by deserialization; entries are taken verbatim.
  void restore_scene(const std::string& id, SceneEntries entries) { scenes_[id] = std::move(entries); }

  bool contains(const std::string& id) const { return scenes_.count(id) != 0; }

  const std::vector<PoolEntry>& base(const std::string& id) const { return scenes_.at(id).base; }
  const std::vector<PoolEntry>& novel(const std::string& id) const { return scenes_.at(id).novel; }

  /// Base entries followed by novel ones when `with_novel` is set.
  std::vector<PoolEntry> labels(const std::string& id, bool with_novel) const {
    const auto& e = scenes_.at(id);
    std::vector<PoolEntry> out = e.base;
    if (with_novel) out.insert(out.end(), e.novel.begin(), e.novel.end());
    return out;
  }

  std::size_t novel_size() const {
    std::size_t n = 0;
    for (const auto& [_, e] : scenes_) n += e.novel.size();
    return n;
  }

  std::size_t base_size() const {
    std::size_t n = 0;
    for (const auto& [_, e] : scenes_) n += e.base.size();
    return n;
  }

  const std::map<std::string, SceneEntries>& scenes() const { return scenes_; }

  friend bool operator==(const LabelPool&, const LabelPool&) = default;

 private:
  friend struct PoolUpdater;
  std::map<std::string, SceneEntries> scenes_;
};

struct DiscoveryReport {
  std::size_t candidates = 0;
  std::size_t rejected_base_overlap = 0;  // gate (a)
  std::size_t rejected_objectness = 0;    // gate (b)
  std::size_t rejected_semantic = 0;      // gate (c)
  std::size_t rejected_category = 0;      // gate (d)
  std::size_t skipped_unprojectable = 0;
  std::size_t accepted = 0;
  std::size_t added = 0;
  std::size_t replaced = 0;
  std::size_t dropped = 0;

  DiscoveryReport& operator+=(const DiscoveryReport& o) {
    candidates += o.candidates;
    rejected_base_overlap += o.rejected_base_overlap;
    rejected_objectness += o.rejected_objectness;
    rejected_semantic += o.rejected_semantic;
    rejected_category += o.rejected_category;
    skipped_unprojectable += o.skipped_unprojectable;
    accepted += o.accepted;
    added += o.added;
    replaced += o.replaced;
    dropped += o.dropped;
    return *this;
  }
};

enum class Gate { kAccepted, kBaseOverlap, kObjectness, kSemantic, kCategory };

/// The four gates, in order, on precomputed scores. With `sem` null only
/// gates (a) and (b) are checked.
inline Gate check_gates(double max_base_iou, double objectness, const SemanticResult* sem, const Vocabulary& vocab,
                        const DiscoveryConfig& cfg) {
  if (!(max_base_iou < cfg.iou_gate)) return Gate::kBaseOverlap;
  if (!(objectness > cfg.objectness_threshold)) return Gate::kObjectness;
  if (!sem) return Gate::kAccepted;
  if (!(sem->max_prob > cfg.semantic_threshold)) return Gate::kSemantic;
  if (sem->is_background || vocab.is_seen(sem->argmax)) return Gate::kCategory;
  return Gate::kAccepted;
}

/// Runs the four gates over one scene's predictions.
template <class Rng>
std::vector<PoolEntry> discover_scene(const Scene& scene, std::span<const QueryPrediction> preds,
                                      const LabelPool& pool, const Vocabulary& vocab, const TextEmbeddings& text,
                                      const EncoderConfig& enc, const DiscoveryConfig& cfg, int epoch, Rng& rng,
                                      DiscoveryReport* report = nullptr) {
  DiscoveryReport local;
  DiscoveryReport& rep = report ? *report : local;
  const auto& base = pool.base(scene.scene_id);
  const SemanticOptions opts = image_semantic_options(enc);
  std::vector<PoolEntry> out;
  for (const QueryPrediction& p : preds) {
    ++rep.candidates;
    double max_iou = 0.0;
    for (const PoolEntry& b : base) max_iou = std::max(max_iou, iou3d(p.box, b.box));
    // gates (a) and (b) need no crop
    const Gate early = check_gates(max_iou, p.objectness, nullptr, vocab, cfg);
    if (early == Gate::kBaseOverlap) {
      ++rep.rejected_base_overlap;
      continue;
    }
    if (early == Gate::kObjectness) {
      ++rep.rejected_objectness;
      continue;
    }
    std::vector<double> feat;
    try {
      const Box2D crop = project_box(p.box, scene.intrinsics);
      feat = encode_image_crop(scene, crop, text, enc, rng);
    } catch (const BehindCamera&) {
      ++rep.skipped_unprojectable;
      continue;
    } catch (const EmptyCrop&) {
      ++rep.skipped_unprojectable;
      continue;
    }
    const SemanticResult sem = semantic_distribution(feat, text, opts);
    const Gate g = check_gates(max_iou, p.objectness, &sem, vocab, cfg);
    if (g == Gate::kSemantic) {
      ++rep.rejected_semantic;
      continue;
    }
    if (g == Gate::kCategory) {
      ++rep.rejected_category;
      continue;
    }
    ++rep.accepted;
    out.push_back({p.box, static_cast<int>(sem.argmax), EntrySource::kDiscovered, epoch, p.objectness,
                   sem.max_prob});
  }
  return out;
}

struct PoolUpdater {
  static DiscoveryReport merge(LabelPool& pool, const std::string& scene_id, std::span<const PoolEntry> found,
                               const DiscoveryConfig& cfg) {
    DiscoveryReport rep;
    auto& novel = pool.scenes_.at(scene_id).novel;
    for (const PoolEntry& e : found) {
      int best = -1;
      double best_iou = 0.0;
      for (std::size_t i = 0; i < novel.size(); ++i) {
        const double iou = iou3d(e.box, novel[i].box);
        if (iou >= cfg.iou_gate && iou > best_iou) {
          best_iou = iou;
          best = static_cast<int>(i);
        }
      }
      if (best < 0) {
        novel.push_back(e);
        ++rep.added;
      } else if (e.semantic > novel[best].semantic) {
        novel[best] = e;
        ++rep.replaced;
      } else {
        ++rep.dropped;
      }
    }
    return rep;
  }
};

/// Union of the scene's novel pool with newly discovered entries.
inline DiscoveryReport update_pool(LabelPool& pool, const std::string& scene_id, std::span<const PoolEntry> found,
                                   const DiscoveryConfig& cfg) {
  return PoolUpdater::merge(pool, scene_id, found, cfg);
}

/// Predictions for the scene at position `index`; lets callers substitute
/// ground truth or a cached forward pass for the live detector.
using Predictor = std::function<std::vector<QueryPrediction>(const Scene&, std::size_t index)>;

/// One discovery round over every scene, merged in scene order.
template <class Rng>
DiscoveryReport run_discovery_epoch(std::span<const Scene> scenes, const Predictor& predict, LabelPool& pool,
                                    const Vocabulary& vocab, const TextEmbeddings& text, const EncoderConfig& enc,
                                    const DiscoveryConfig& cfg, int epoch, Rng& rng) {
  cfg.validate();
  DiscoveryReport total;
  for (std::size_t i = 0; i < scenes.size(); ++i) {
    const Scene& s = scenes[i];
    const auto preds = predict(s, i);
    DiscoveryReport rep;
    const auto found = discover_scene(s, preds, pool, vocab, text, enc, cfg, epoch, rng, &rep);
    const DiscoveryReport merged = update_pool(pool, s.scene_id, found, cfg);
    rep.added = merged.added;
    rep.replaced = merged.replaced;
    rep.dropped = merged.dropped;
    total += rep;
  }
  return total;
}

/// Ground-truth boxes dressed as confident predictions (perfect-oracle runs).
inline std::vector<QueryPrediction> ground_truth_predictions(const Scene& scene, int feature_dim) {
  std::vector<QueryPrediction> out;
  for (const SceneObject& o : scene.objects) {
    QueryPrediction p;
    p.box = o.box;
    p.objectness = 1.0;
    p.logit = 40.0;
    p.feature.assign(feature_dim, 0.0);
    p.seed = o.box.center;
    out.push_back(std::move(p));
  }
  return out;
}

}  // namespace coda
