#pragma once

// Paired text / image-region encoders standing in for a frozen
// vision-language model. Text embeddings are seeded random unit vectors, one
// per category name; an image crop reads as a noisy copy of the embedding of
// the object it covers, with noise growing as the crop drifts off the object.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "coda/errors.hpp"
#include "coda/geometry.hpp"
#include "coda/vocabulary.hpp"
#include "coda/world.hpp"

namespace coda {

struct EncoderConfig {
  int dim = 32;
  /// 2D IoU below which a crop no longer reads as the object.
  double crop_iou_threshold = 0.4;
  double image_noise_sigma = 0.3;
  /// Softmax temperature applied to unit-vector dot products.
  double temperature = 0.1;
  /// L2-normalize features before the dot product with text rows.
  bool normalize_features = true;
  /// Bound on |cos| between distinct text rows.
  double max_abs_cosine = 0.5;
  int max_resample_attempts = 1000;
  std::uint64_t seed = 7;

  void validate() const {
    if (dim < 2) throw ConfigError("encoder: dim must be >= 2");
    if (!(crop_iou_threshold > 0.0 && crop_iou_threshold <= 1.0))
      throw ConfigError("encoder: crop_iou_threshold must be in (0,1]");
    if (!(image_noise_sigma >= 0.0)) throw ConfigError("encoder: image_noise_sigma must be >= 0");
    if (!(temperature > 0.0)) throw ConfigError("encoder: temperature must be > 0");
  }
};

/// C x D matrix of unit rows plus a background row that is not a category.
struct TextEmbeddings {
  std::vector<std::string> names;
  int dim = 0;
  std::vector<double> rows;
  std::vector<double> background;

  std::size_t size() const { return names.size(); }
  std::span<const double> row(std::size_t c) const {
    return {rows.data() + c * static_cast<std::size_t>(dim), static_cast<std::size_t>(dim)};
  }

  friend bool operator==(const TextEmbeddings&, const TextEmbeddings&) = default;
};

namespace detail {

/// FNV-1a, stable across platforms (std::hash is not).
inline std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

inline double dot(std::span<const double> a, std::span<const double> b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
  return acc;
}

inline double norm(std::span<const double> a) { return std::sqrt(dot(a, a)); }

inline void normalize_in_place(std::vector<double>& v) {
  const double n = norm(v);
  if (n > 0.0)
    for (double& x : v) x /= n;
}

template <class Rng>
std::vector<double> random_unit(int dim, Rng& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<double> v(dim);
  do {
    for (double& x : v) x = g(rng);
  } while (norm(v) == 0.0);
  normalize_in_place(v);
  return v;
}

}  // namespace detail

/// Deterministic per (name, seed); rows are resampled until every pairwise
/// |cos| is within the configured bound.
inline TextEmbeddings encode_text(const Vocabulary& vocab, const EncoderConfig& cfg) {
  cfg.validate();
  TextEmbeddings out;
  out.names = vocab.names;
  out.dim = cfg.dim;
  std::vector<std::vector<double>> accepted;

  auto draw = [&](const std::string& name) {
    std::mt19937_64 rng(detail::fnv1a(name) ^ (cfg.seed * 0x9E3779B97F4A7C15ull));
    for (int attempt = 0; attempt < cfg.max_resample_attempts; ++attempt) {
      auto v = detail::random_unit(cfg.dim, rng);
      bool ok = true;
      for (const auto& a : accepted)
        if (std::abs(detail::dot(a, v)) > cfg.max_abs_cosine) {
          ok = false;
          break;
        }
      if (ok) return v;
    }
    throw EmbeddingCollision("encode_text: could not place '" + name + "' with D=" +
                             std::to_string(cfg.dim) + ", C=" + std::to_string(vocab.size()));
  };

  for (const auto& name : vocab.names) {
    accepted.push_back(draw(name));
    out.rows.insert(out.rows.end(), accepted.back().begin(), accepted.back().end());
  }
  out.background = draw("__background__");
  return out;
}

/// Output of the semantic-probability computation.
struct SemanticResult {
  std::vector<double> probs;
  std::size_t argmax = 0;
  double max_prob = 0.0;
  /// True when the background row was included and won the argmax.
  bool is_background = false;
};

struct SemanticOptions {
  double temperature = 1.0;
  bool normalize = false;
  /// Append the background row as an extra, last entry.
  bool include_background = false;
  /// Restrict the softmax to these category indices (empty = all rows).
  std::span<const std::size_t> subset{};
};

/// softmax(feat . text_row / temperature) over the category rows.
inline SemanticResult semantic_distribution(std::span<const double> feat, const TextEmbeddings& text,
                                            const SemanticOptions& opt = {}) {
  std::vector<double> f(feat.begin(), feat.end());
  if (opt.normalize) detail::normalize_in_place(f);

  std::vector<std::size_t> idx;
  if (opt.subset.empty()) {
    idx.resize(text.size());
    for (std::size_t c = 0; c < text.size(); ++c) idx[c] = c;
  } else {
    idx.assign(opt.subset.begin(), opt.subset.end());
  }
  std::vector<double> logits;
  logits.reserve(idx.size() + 1);
  for (std::size_t c : idx) logits.push_back(detail::dot(f, text.row(c)) / opt.temperature);
  if (opt.include_background) logits.push_back(detail::dot(f, text.background) / opt.temperature);

  SemanticResult r;
  const double m = *std::max_element(logits.begin(), logits.end());
  double z = 0.0;
  r.probs.resize(logits.size());
  for (std::size_t i = 0; i < logits.size(); ++i) z += (r.probs[i] = std::exp(logits[i] - m));
  for (double& p : r.probs) p /= z;
  std::size_t best = 0;
  for (std::size_t i = 1; i < r.probs.size(); ++i)
    if (r.probs[i] > r.probs[best]) best = i;
  r.max_prob = r.probs[best];
  r.is_background = opt.include_background && best == idx.size();
  r.argmax = r.is_background ? text.size() : idx.at(best);
  return r;
}

/// Options used on the image side: the configured temperature, normalization
/// and the background row.
inline SemanticOptions image_semantic_options(const EncoderConfig& cfg) {
  return {cfg.temperature, cfg.normalize_features, true, {}};
}

/// Projected 2D box of the object that best overlaps `crop`, with that IoU.
struct CropMatch {
  int object = -1;
  double iou = 0.0;
};

inline CropMatch best_object_for_crop(const Scene& scene, const Box2D& crop) {
  CropMatch best;
  for (std::size_t i = 0; i < scene.objects.size(); ++i) {
    Box2D proj;
    try {
      proj = project_box(scene.objects[i].box, scene.intrinsics);
    } catch (const BehindCamera&) {
      continue;
    }
    const double iou = iou2d(proj, crop);
    if (iou > best.iou) best = {static_cast<int>(i), iou};
  }
  return best;
}

/// Image feature of a crop: normalize(text[c] + sigma * (1 - IoU) * N(0, I))
/// for the best-overlapping object, or the background row when that overlap
/// is under the crop threshold.
template <class Rng>
std::vector<double> encode_image_crop(const Scene& scene, const Box2D& crop, const TextEmbeddings& text,
                                      const EncoderConfig& cfg, Rng& rng) {
  if (!(crop.area() > 0.0)) throw EmptyCrop("encode_image_crop: zero-area crop");
  const CropMatch m = best_object_for_crop(scene, crop);
  if (m.object < 0 || m.iou < cfg.crop_iou_threshold) return text.background;

  const auto row = text.row(static_cast<std::size_t>(scene.objects[m.object].category_id));
  std::vector<double> f(row.begin(), row.end());
  const double scale = cfg.image_noise_sigma * (1.0 - m.iou);
  if (scale > 0.0) {
    std::normal_distribution<double> g(0.0, 1.0);
    for (double& x : f) x += scale * g(rng);
    detail::normalize_in_place(f);
  }
  return f;
}

}  // namespace coda
