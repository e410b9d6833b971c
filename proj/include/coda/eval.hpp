#pragma once

// Detection evaluation: per-category AP and AR at a 3D IoU threshold,
// aggregated over novel, base and all categories present in ground truth.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "coda/detector.hpp"
#include "coda/encoders.hpp"
#include "coda/geometry.hpp"
#include "coda/vocabulary.hpp"
#include "coda/world.hpp"

namespace coda {

struct Detection {
  Box3D box;
  int category = 0;
  double confidence = 0.0;
};

struct ClassifyOptions {
  double temperature = 1.0;
  bool normalize = true;
};

/// Labels each query with the argmax of its feature's similarity to the text
/// rows (background row included); confidence = objectness x max probability.
/// Queries whose argmax is background are dropped. `features`, when given,
/// replaces the query features (e.g. crop features for the 2D-classifier
/// baseline); an empty entry drops that query.
inline std::vector<Detection> classify_predictions(std::span<const QueryPrediction> preds, const TextEmbeddings& text,
                                                   const ClassifyOptions& opt = {},
                                                   std::span<const std::vector<double>> features = {}) {
  std::vector<Detection> out;
  const SemanticOptions so{opt.temperature, opt.normalize, true, {}};
  for (std::size_t q = 0; q < preds.size(); ++q) {
    const std::vector<double>& f = features.empty() ? preds[q].feature : features[q];
    if (f.empty()) continue;
    const SemanticResult r = semantic_distribution(f, text, so);
    if (r.is_background) continue;
    out.push_back({preds[q].box, static_cast<int>(r.argmax), preds[q].objectness * r.max_prob});
  }
  return out;
}

struct PostprocessOptions {
  double min_confidence = 0.05;
  /// Per-category NMS IoU; values >= 1 disable suppression.
  double nms_iou = 0.25;
};

/// Confidence floor followed by greedy per-category NMS.
inline std::vector<Detection> postprocess(std::vector<Detection> dets, const PostprocessOptions& opt) {
  std::erase_if(dets, [&](const Detection& d) { return d.confidence < opt.min_confidence; });
  std::stable_sort(dets.begin(), dets.end(),
                   [](const Detection& a, const Detection& b) { return a.confidence > b.confidence; });
  if (opt.nms_iou >= 1.0) return dets;
  std::vector<Detection> kept;
  for (const Detection& d : dets) {
    bool suppressed = false;
    for (const Detection& k : kept)
      if (k.category == d.category && iou3d(k.box, d.box) > opt.nms_iou) {
        suppressed = true;
        break;
      }
    if (!suppressed) kept.push_back(d);
  }
  return kept;
}

struct GroundTruthBox {
  Box3D box;
  int category = 0;
};

inline std::vector<GroundTruthBox> ground_truth(const Scene& scene) {
  std::vector<GroundTruthBox> out;
  for (const auto& o : scene.objects) out.push_back({o.box, o.category_id});
  return out;
}

struct EvalResult {
  std::vector<double> ap;  // per category; NaN when the category has no GT
  std::vector<double> ar;
  std::vector<int> num_gt;
  double ap_novel = 0.0, ap_base = 0.0, ap_mean = 0.0;
  double ar_novel = 0.0, ar_base = 0.0, ar_mean = 0.0;
};

enum class ApInterpolation {
  /// Area under the precision envelope (precision made monotone
  /// non-increasing in recall) over every operating point.
  kAllPoint,
  /// Mean of the envelope sampled at recall 0, 0.1, ..., 1.
  kElevenPoint,
};

inline double average_precision(std::span<const double> recall, std::span<const double> precision,
                                ApInterpolation mode = ApInterpolation::kAllPoint) {
  if (mode == ApInterpolation::kElevenPoint) {
    double ap = 0.0;
    for (int i = 0; i <= 10; ++i) {
      const double t = i / 10.0;
      double p = 0.0;
      for (std::size_t j = 0; j < recall.size(); ++j)
        if (recall[j] >= t) p = std::max(p, precision[j]);
      ap += p / 11.0;
    }
    return ap;
  }
  std::vector<double> mrec{0.0};
  std::vector<double> mpre{0.0};
  mrec.insert(mrec.end(), recall.begin(), recall.end());
  mpre.insert(mpre.end(), precision.begin(), precision.end());
  mrec.push_back(1.0);
  mpre.push_back(0.0);
  for (std::size_t i = mpre.size() - 1; i > 0; --i) mpre[i - 1] = std::max(mpre[i - 1], mpre[i]);
  double ap = 0.0;
  for (std::size_t i = 1; i < mrec.size(); ++i)
    if (mrec[i] != mrec[i - 1]) ap += (mrec[i] - mrec[i - 1]) * mpre[i];
  return ap;
}

/// Per category, detections are ranked by confidence (ties: scene order, then
/// detection order) and each is greedily matched to the still-unmatched GT box
/// of its category and scene with the highest IoU >= iou_threshold (ties:
/// lowest GT index). AR is the fraction of GT boxes matched.
inline EvalResult evaluate(std::span<const std::vector<Detection>> dets, std::span<const std::vector<GroundTruthBox>> gts,
                           const Vocabulary& vocab, double iou_threshold = 0.25,
                           ApInterpolation interpolation = ApInterpolation::kAllPoint) {
  const std::size_t C = vocab.size();
  EvalResult r;
  r.ap.assign(C, std::numeric_limits<double>::quiet_NaN());
  r.ar.assign(C, std::numeric_limits<double>::quiet_NaN());
  r.num_gt.assign(C, 0);
  for (const auto& scene : gts)
    for (const auto& g : scene)
      if (g.category >= 0 && static_cast<std::size_t>(g.category) < C) ++r.num_gt[g.category];

  struct Ranked {
    double conf;
    std::size_t scene, index;
  };
  for (std::size_t c = 0; c < C; ++c) {
    if (r.num_gt[c] == 0) continue;
    std::vector<Ranked> ranked;
    for (std::size_t s = 0; s < dets.size(); ++s)
      for (std::size_t i = 0; i < dets[s].size(); ++i)
        if (dets[s][i].category == static_cast<int>(c)) ranked.push_back({dets[s][i].confidence, s, i});
    std::stable_sort(ranked.begin(), ranked.end(), [](const Ranked& a, const Ranked& b) { return a.conf > b.conf; });

    std::vector<std::vector<char>> used(gts.size());
    for (std::size_t s = 0; s < gts.size(); ++s) used[s].assign(gts[s].size(), 0);
    std::vector<double> precision, recall;
    std::vector<char> hit;
    int tp = 0, fp = 0;
    for (const Ranked& d : ranked) {
      const Box3D& box = dets[d.scene][d.index].box;
      int best = -1;
      double best_iou = iou_threshold;
      if (d.scene < gts.size()) {
        for (std::size_t g = 0; g < gts[d.scene].size(); ++g) {
          if (used[d.scene][g] || gts[d.scene][g].category != static_cast<int>(c)) continue;
          const double iou = iou3d(box, gts[d.scene][g].box);
          if (iou >= best_iou && (best < 0 || iou > best_iou)) {
            best_iou = iou;
            best = static_cast<int>(g);
          }
        }
      }
      if (best >= 0) {
        used[d.scene][best] = 1;
        ++tp;
      } else {
        ++fp;
      }
      hit.push_back(best >= 0);
      precision.push_back(static_cast<double>(tp) / (tp + fp));
      recall.push_back(static_cast<double>(tp) / r.num_gt[c]);
    }
    if (interpolation == ApInterpolation::kAllPoint) {
      // recall rises by exactly 1/G at each true positive, so the area is the
      // envelope precision at those ranks over G
      double env = 0.0, ap = 0.0;
      std::vector<double> at_hit;
      for (std::size_t i = precision.size(); i-- > 0;) {
        env = std::max(env, precision[i]);
        if (hit[i]) at_hit.push_back(env);
      }
      for (std::size_t k = at_hit.size(); k-- > 0;) ap += at_hit[k] / r.num_gt[c];
      r.ap[c] = ap;
    } else {
      r.ap[c] = average_precision(recall, precision, interpolation);
    }
    r.ar[c] = static_cast<double>(tp) / r.num_gt[c];
  }

  auto mean_over = [&](const std::vector<double>& v, int split) {
    double sum = 0.0;
    int n = 0;
    for (std::size_t c = 0; c < C; ++c) {
      if (r.num_gt[c] == 0) continue;
      if (split == 0 && vocab.is_seen(c)) continue;
      if (split == 1 && !vocab.is_seen(c)) continue;
      sum += v[c];
      ++n;
    }
    return n ? sum / n : 0.0;
  };
  r.ap_novel = mean_over(r.ap, 0);
  r.ap_base = mean_over(r.ap, 1);
  r.ap_mean = mean_over(r.ap, 2);
  r.ar_novel = mean_over(r.ar, 0);
  r.ar_base = mean_over(r.ar, 1);
  r.ar_mean = mean_over(r.ar, 2);
  return r;
}

}  // namespace coda
