#pragma once

// Cross-modal alignment of the detector's query features.
//
// Two losses act on the feature head:
//   * box-wise distillation: sum over the batch of |F3d - F2d|_1, where F2d is
//     the frozen image feature of the crop under the query's projected box;
//   * contrastive alignment: for queries matched to a pool box, cross-entropy
//     between softmax(normalize(F3d) . text / temperature) and the one-hot of
//     the box's category. Unmatched queries contribute nothing.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <span>
#include <vector>

#include "coda/detector.hpp"
#include "coda/discovery.hpp"
#include "coda/encoders.hpp"
#include "coda/matching.hpp"

namespace coda {

struct AlignmentItem {
  int query = -1;
  std::vector<double> crop_feature;
  /// Index into the label list the assignment was computed against, or -1.
  int label = -1;
  /// Category of the matched label (one-hot target), or -1 when unmatched.
  int category = -1;
  EntrySource label_source = EntrySource::kBase;

  bool matched() const { return label >= 0; }
};

struct AlignmentBatch {
  std::vector<AlignmentItem> items;

  std::size_t matched_count() const {
    return static_cast<std::size_t>(
        std::count_if(items.begin(), items.end(), [](const AlignmentItem& i) { return i.matched(); }));
  }
};

inline std::vector<double> one_hot(int category, std::size_t num_categories) {
  std::vector<double> h(num_categories, 0.0);
  if (category >= 0 && static_cast<std::size_t>(category) < num_categories) h[category] = 1.0;
  return h;
}

enum class ExtraSelection { kTopObjectness, kRandom };

struct AlignmentBatchOptions {
  int extra_queries = 32;
  ExtraSelection selection = ExtraSelection::kTopObjectness;
};

/// Matched queries plus the `extra_queries` best unmatched ones, each with the
/// image feature of its projected crop. Queries whose box cannot be projected
/// (or projects to an empty crop) are left out.
template <class Rng>
AlignmentBatch build_alignment_batch(const Scene& scene, std::span<const QueryPrediction> preds,
                                     std::span<const PoolEntry> labels, const Assignment& assignment,
                                     const TextEmbeddings& text, const EncoderConfig& enc,
                                     const AlignmentBatchOptions& opt, Rng& rng) {
  std::vector<AlignmentItem> chosen;
  std::vector<char> is_matched(preds.size(), 0);
  for (const auto& [q, l] : assignment.pairs) {
    is_matched[q] = 1;
    AlignmentItem it;
    it.query = q;
    it.label = l;
    it.category = labels[l].category_id;
    it.label_source = labels[l].source;
    chosen.push_back(std::move(it));
  }
  std::vector<int> rest;
  for (std::size_t q = 0; q < preds.size(); ++q)
    if (!is_matched[q]) rest.push_back(static_cast<int>(q));
  if (opt.selection == ExtraSelection::kRandom) {
    std::shuffle(rest.begin(), rest.end(), rng);
  } else {
    std::stable_sort(rest.begin(), rest.end(),
                     [&](int a, int b) { return preds[a].objectness > preds[b].objectness; });
  }
  const std::size_t extra = std::min<std::size_t>(rest.size(), static_cast<std::size_t>(std::max(0, opt.extra_queries)));
  for (std::size_t i = 0; i < extra; ++i) {
    AlignmentItem it;
    it.query = rest[i];
    chosen.push_back(std::move(it));
  }

  AlignmentBatch batch;
  for (AlignmentItem& it : chosen) {
    try {
      const Box2D crop = project_box(preds[it.query].box, scene.intrinsics);
      it.crop_feature = encode_image_crop(scene, crop, text, enc, rng);
    } catch (const BehindCamera&) {
      continue;
    } catch (const EmptyCrop&) {
      continue;
    }
    batch.items.push_back(std::move(it));
  }
  return batch;
}

/// Loss value with gradients keyed by query index (same length as preds).
struct FeatureLoss {
  double value = 0.0;
  std::vector<std::vector<double>> grads;
};

/// Sum of L1 distances between query features and their crop features. The
/// sub-gradient at a zero difference is taken as 0.
inline FeatureLoss distill_loss(const AlignmentBatch& batch, std::span<const QueryPrediction> preds) {
  FeatureLoss out;
  out.grads.assign(preds.size(), {});
  for (const AlignmentItem& it : batch.items) {
    const auto& f = preds[it.query].feature;
    auto& g = out.grads[it.query];
    if (g.empty()) g.assign(f.size(), 0.0);
    for (std::size_t d = 0; d < f.size(); ++d) {
      const double diff = f[d] - it.crop_feature[d];
      out.value += std::abs(diff);
      g[d] += diff > 0.0 ? 1.0 : (diff < 0.0 ? -1.0 : 0.0);
    }
  }
  return out;
}

struct SimilarityOptions {
  double temperature = 1.0;
  bool normalize = true;
  /// Restrict to these categories (empty = full vocabulary).
  std::vector<std::size_t> subset;
};

/// softmax over text rows of the (optionally normalized) query feature.
inline std::vector<double> similarity(std::span<const double> feature, const TextEmbeddings& text,
                                      const SimilarityOptions& opt = {}) {
  SemanticOptions so{opt.temperature, opt.normalize, false, opt.subset};
  return semantic_distribution(feature, text, so).probs;
}

enum class ContrastiveMode {
  kOff,
  /// Matches to any pool box, full vocabulary.
  kDiscovery,
  /// Matches to base annotations only, softmax over seen categories only.
  kBaseOnly,
};

struct ContrastiveOptions {
  ContrastiveMode mode = ContrastiveMode::kDiscovery;
  double temperature = 1.0;
  bool normalize = true;
};

/// Cross-entropy between each matched query's similarity and the one-hot of
/// its label's category, summed over the batch.
inline FeatureLoss contrastive_loss(const AlignmentBatch& batch, std::span<const QueryPrediction> preds,
                                    const TextEmbeddings& text, const Vocabulary& vocab,
                                    const ContrastiveOptions& opt) {
  FeatureLoss out;
  out.grads.assign(preds.size(), {});
  if (opt.mode == ContrastiveMode::kOff) return out;

  std::vector<std::size_t> cats;
  if (opt.mode == ContrastiveMode::kBaseOnly) {
    cats = vocab.seen_indices();
  } else {
    cats.resize(text.size());
    std::iota(cats.begin(), cats.end(), std::size_t{0});
  }
  const int D = text.dim;
  for (const AlignmentItem& it : batch.items) {
    if (!it.matched()) continue;
    if (opt.mode == ContrastiveMode::kBaseOnly && it.label_source != EntrySource::kBase) continue;
    const auto target_pos = std::find(cats.begin(), cats.end(), static_cast<std::size_t>(it.category));
    if (target_pos == cats.end()) continue;
    const std::size_t target = static_cast<std::size_t>(target_pos - cats.begin());

    const auto& f = preds[it.query].feature;
    double n = 0.0;
    for (double v : f) n += v * v;
    n = std::sqrt(n);
    std::vector<double> fh(f.begin(), f.end());
    const bool norm = opt.normalize && n > 0.0;
    if (norm)
      for (double& v : fh) v /= n;

    std::vector<double> logits(cats.size());
    for (std::size_t i = 0; i < cats.size(); ++i) logits[i] = detail::dot(fh, text.row(cats[i])) / opt.temperature;
    const double m = *std::max_element(logits.begin(), logits.end());
    double z = 0.0;
    for (double l : logits) z += std::exp(l - m);
    const double lse = m + std::log(z);
    out.value += lse - logits[target];

    // d CE / d fh = sum_i (p_i - y_i) T_i / temperature
    std::vector<double> dfh(D, 0.0);
    for (std::size_t i = 0; i < cats.size(); ++i) {
      const double coef = (std::exp(logits[i] - lse) - (i == target ? 1.0 : 0.0)) / opt.temperature;
      const auto row = text.row(cats[i]);
      for (int d = 0; d < D; ++d) dfh[d] += coef * row[d];
    }
    auto& g = out.grads[it.query];
    if (g.empty()) g.assign(f.size(), 0.0);
    if (norm) {
      double proj = 0.0;
      for (int d = 0; d < D; ++d) proj += fh[d] * dfh[d];
      for (int d = 0; d < D; ++d) g[d] += (dfh[d] - fh[d] * proj) / n;
    } else {
      for (int d = 0; d < D; ++d) g[d] += dfh[d];
    }
  }
  return out;
}

/// Adds `scale * loss.grads` into the feature part of the output gradients.
inline void accumulate_feature_grads(std::vector<OutputGrad>& out, const FeatureLoss& loss, double scale) {
  for (std::size_t q = 0; q < out.size() && q < loss.grads.size(); ++q) {
    const auto& g = loss.grads[q];
    for (std::size_t d = 0; d < g.size(); ++d) out[q].feature[d] += scale * g[d];
  }
}

}  // namespace coda
