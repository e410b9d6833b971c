#pragma once

// Miniature query-based 3D detector.
//
// Query seeds are picked by farthest-point sampling; each query gathers its k
// nearest points, lifts their seed-relative offsets through a two-layer
// point-wise perceptron, pools (max and mean) and feeds a shared trunk that
// drives three linear heads: box residuals, objectness logit, and the
// alignment feature.
//
// Canonical ordering: FPS starts at the lexicographically smallest point
// (x, then y, then z) and breaks distance ties the same way; kNN sorts by
// (distance, x, y, z). Outputs therefore depend only on the point set, not on
// the order points are stored in.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "coda/errors.hpp"
#include "coda/geometry.hpp"
#include "coda/world.hpp"

namespace coda {

struct DetectorConfig {
  int num_queries = 128;
  int k_neighbors = 32;
  int point_hidden = 32;
  int point_out = 32;
  int trunk = 64;
  int feature_dim = 32;
  double init_size = 0.7;  // decoded box size at zero residual, before training
  std::uint64_t seed = 11;

  void validate() const {
    if (num_queries < 1 || k_neighbors < 1 || point_hidden < 1 || point_out < 1 || trunk < 1 ||
        feature_dim < 1)
      throw ConfigError("detector: all sizes must be positive");
    if (!(init_size > 0.0)) throw ConfigError("detector: init_size must be positive");
  }

  friend bool operator==(const DetectorConfig&, const DetectorConfig&) = default;
};

/// A named contiguous slice of the flat parameter vector.
struct ParamSegment {
  std::string name;
  std::string head;
  std::size_t offset = 0;
  std::size_t size = 0;
};

struct DetectorParams {
  DetectorConfig config;
  std::vector<double> values;

  friend bool operator==(const DetectorParams&, const DetectorParams&) = default;
};

/// Parameter layout. Weight matrices are row-major (out x in).
struct DetectorLayout {
  std::size_t w1, b1, w2, b2, w3, b3, wb, bb, wo, bo, wf, bf, total;
  std::vector<ParamSegment> segments;

  explicit DetectorLayout(const DetectorConfig& c) {
    std::size_t at = 0;
    auto take = [&](const char* name, const char* head, std::size_t n) {
      segments.push_back({name, head, at, n});
      const std::size_t o = at;
      at += n;
      return o;
    };
    const std::size_t h1 = c.point_hidden, h2 = c.point_out, t = c.trunk, d = c.feature_dim;
    w1 = take("point.w1", "aggregation", h1 * 3);
    b1 = take("point.b1", "aggregation", h1);
    w2 = take("point.w2", "aggregation", h2 * h1);
    b2 = take("point.b2", "aggregation", h2);
    w3 = take("trunk.w", "aggregation", t * 2 * h2);
    b3 = take("trunk.b", "aggregation", t);
    wb = take("box.w", "box", 7 * t);
    bb = take("box.b", "box", 7);
    wo = take("objectness.w", "objectness", t);
    bo = take("objectness.b", "objectness", 1);
    wf = take("feature.w", "feature", d * t);
    bf = take("feature.b", "feature", d);
    total = at;
  }
};

/// Seeded He-style initialization.
inline DetectorParams init_params(const DetectorConfig& cfg) {
  cfg.validate();
  const DetectorLayout L(cfg);
  DetectorParams p{cfg, std::vector<double>(L.total, 0.0)};
  std::mt19937_64 rng(cfg.seed);
  auto fill = [&](std::size_t off, std::size_t n, std::size_t fan_in, double gain) {
    std::normal_distribution<double> g(0.0, gain / std::sqrt(static_cast<double>(fan_in)));
    for (std::size_t i = 0; i < n; ++i) p.values[off + i] = g(rng);
  };
  const std::size_t h1 = cfg.point_hidden, h2 = cfg.point_out, t = cfg.trunk, d = cfg.feature_dim;
  fill(L.w1, h1 * 3, 3, std::sqrt(2.0) * 2.0);
  fill(L.w2, h2 * h1, h1, std::sqrt(2.0));
  fill(L.w3, t * 2 * h2, 2 * h2, std::sqrt(2.0));
  fill(L.wb, 7 * t, t, 0.1);
  fill(L.wo, t, t, 0.1);
  fill(L.wf, d * t, t, 0.5);
  const double ls = std::log(cfg.init_size);
  for (int k = 3; k < 6; ++k) p.values[L.bb + k] = ls;
  return p;
}

/// Query seeds and neighbourhoods; depends only on the point set.
struct QueryNeighborhoods {
  int num_queries = 0;
  int k = 0;
  std::vector<int> seeds;      // point index per query
  std::vector<int> neighbors;  // num_queries x k point indices
};

namespace detail {

inline bool point_less(const Point& a, const Point& b) {
  if (a[0] != b[0]) return a[0] < b[0];
  if (a[1] != b[1]) return a[1] < b[1];
  return a[2] < b[2];
}

inline double sq_dist(const Point& a, const Point& b) {
  const double dx = static_cast<double>(a[0]) - b[0];
  const double dy = static_cast<double>(a[1]) - b[1];
  const double dz = static_cast<double>(a[2]) - b[2];
  return dx * dx + dy * dy + dz * dz;
}

}  // namespace detail

inline std::vector<int> farthest_point_sampling(std::span<const Point> pts, int count) {
  const int n = static_cast<int>(pts.size());
  std::vector<int> out;
  if (n == 0 || count <= 0) return out;
  int first = 0;
  for (int i = 1; i < n; ++i)
    if (detail::point_less(pts[i], pts[first])) first = i;
  std::vector<double> mind(n, INFINITY);
  out.push_back(first);
  int last = first;
  while (static_cast<int>(out.size()) < count) {
    int best = -1;
    double best_d = -1.0;
    for (int i = 0; i < n; ++i) {
      const double d = detail::sq_dist(pts[i], pts[last]);
      if (d < mind[i]) mind[i] = d;
      if (mind[i] > best_d || (mind[i] == best_d && detail::point_less(pts[i], pts[best]))) {
        best_d = mind[i];
        best = i;
      }
    }
    out.push_back(best);
    last = best;
  }
  return out;
}

inline QueryNeighborhoods build_neighborhoods(const Scene& scene, int num_queries, int k) {
  if (static_cast<int>(scene.points.size()) < std::max(num_queries, k))
    throw TooFewPoints("scene '" + scene.scene_id + "' has " + std::to_string(scene.points.size()) +
                       " points; need " + std::to_string(std::max(num_queries, k)));
  QueryNeighborhoods nb;
  nb.num_queries = num_queries;
  nb.k = k;
  nb.seeds = farthest_point_sampling(scene.points, num_queries);
  nb.neighbors.resize(static_cast<std::size_t>(num_queries) * k);
  const int n = static_cast<int>(scene.points.size());
  std::vector<std::pair<double, int>> d(n);
  for (int q = 0; q < num_queries; ++q) {
    const Point& s = scene.points[nb.seeds[q]];
    for (int i = 0; i < n; ++i) d[i] = {detail::sq_dist(scene.points[i], s), i};
    auto less = [&](const std::pair<double, int>& a, const std::pair<double, int>& b) {
      if (a.first != b.first) return a.first < b.first;
      return detail::point_less(scene.points[a.second], scene.points[b.second]);
    };
    std::nth_element(d.begin(), d.begin() + (k - 1), d.end(), less);
    std::sort(d.begin(), d.begin() + k, less);
    for (int j = 0; j < k; ++j) nb.neighbors[static_cast<std::size_t>(q) * k + j] = d[j].second;
  }
  return nb;
}

struct QueryPrediction {
  Box3D box;
  double objectness = 0.5;
  std::vector<double> feature;

  Vec3 seed{};
  std::array<double, 7> box_raw{};  // center residual (3), log size (3), yaw pre-activation
  double logit = 0.0;
};

/// Intermediate activations kept for the backward pass.
struct ForwardCache {
  int num_queries = 0, k = 0;
  std::vector<double> x;     // Q x k x 3
  std::vector<double> h1;    // Q x k x H1 (post-ReLU)
  std::vector<double> h2;    // Q x k x H2 (post-ReLU)
  std::vector<int> argmax;   // Q x H2
  std::vector<double> g;     // Q x 2H2
  std::vector<double> t;     // Q x T (post-ReLU)
};

/// Per-query gradient of a loss with respect to the raw head outputs.
struct OutputGrad {
  std::array<double, 7> box{};
  double logit = 0.0;
  std::vector<double> feature;
};

inline std::vector<OutputGrad> zero_output_grads(std::size_t n, int feature_dim) {
  std::vector<OutputGrad> g(n);
  for (auto& x : g) x.feature.assign(feature_dim, 0.0);
  return g;
}

inline Box3D decode_box(const Vec3& seed, const std::array<double, 7>& raw) {
  Box3D b;
  for (int i = 0; i < 3; ++i) {
    b.center[i] = seed[i] + raw[i];
    b.size[i] = std::exp(raw[3 + i]);
  }
  b.yaw = normalize_yaw(kPi * std::tanh(raw[6]));
  return b;
}

namespace detail {

inline double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

}  // namespace detail

inline std::vector<QueryPrediction> forward(const Scene& scene, const QueryNeighborhoods& nb,
                                            const DetectorParams& params, ForwardCache* cache = nullptr) {
  const DetectorConfig& c = params.config;
  const DetectorLayout L(c);
  const double* P = params.values.data();
  const int Q = nb.num_queries, K = nb.k, H1 = c.point_hidden, H2 = c.point_out, T = c.trunk,
            D = c.feature_dim;

  ForwardCache local;
  ForwardCache& fc = cache ? *cache : local;
  fc.num_queries = Q;
  fc.k = K;
  fc.x.assign(static_cast<std::size_t>(Q) * K * 3, 0.0);
  fc.h1.assign(static_cast<std::size_t>(Q) * K * H1, 0.0);
  fc.h2.assign(static_cast<std::size_t>(Q) * K * H2, 0.0);
  fc.argmax.assign(static_cast<std::size_t>(Q) * H2, 0);
  fc.g.assign(static_cast<std::size_t>(Q) * 2 * H2, 0.0);
  fc.t.assign(static_cast<std::size_t>(Q) * T, 0.0);

  std::vector<QueryPrediction> out(Q);
  for (int q = 0; q < Q; ++q) {
    const Point& sp = scene.points[nb.seeds[q]];
    const Vec3 seed{sp[0], sp[1], sp[2]};
    double* x = &fc.x[static_cast<std::size_t>(q) * K * 3];
    double* h1 = &fc.h1[static_cast<std::size_t>(q) * K * H1];
    double* h2 = &fc.h2[static_cast<std::size_t>(q) * K * H2];
    for (int j = 0; j < K; ++j) {
      const Point& p = scene.points[nb.neighbors[static_cast<std::size_t>(q) * K + j]];
      for (int a = 0; a < 3; ++a) x[j * 3 + a] = static_cast<double>(p[a]) - seed[a];
      for (int u = 0; u < H1; ++u) {
        const double* w = P + L.w1 + u * 3;
        const double v = P[L.b1 + u] + w[0] * x[j * 3] + w[1] * x[j * 3 + 1] + w[2] * x[j * 3 + 2];
        h1[j * H1 + u] = v > 0.0 ? v : 0.0;
      }
      for (int u = 0; u < H2; ++u) {
        const double* w = P + L.w2 + static_cast<std::size_t>(u) * H1;
        double v = P[L.b2 + u];
        for (int i = 0; i < H1; ++i) v += w[i] * h1[j * H1 + i];
        h2[j * H2 + u] = v > 0.0 ? v : 0.0;
      }
    }
    double* g = &fc.g[static_cast<std::size_t>(q) * 2 * H2];
    int* am = &fc.argmax[static_cast<std::size_t>(q) * H2];
    for (int u = 0; u < H2; ++u) {
      double m = h2[u];
      int arg = 0;
      double s = 0.0;
      for (int j = 0; j < K; ++j) {
        const double v = h2[j * H2 + u];
        if (v > m) {
          m = v;
          arg = j;
        }
        s += v;
      }
      g[u] = m;
      am[u] = arg;
      g[H2 + u] = s / K;
    }
    double* t = &fc.t[static_cast<std::size_t>(q) * T];
    for (int u = 0; u < T; ++u) {
      const double* w = P + L.w3 + static_cast<std::size_t>(u) * 2 * H2;
      double v = P[L.b3 + u];
      for (int i = 0; i < 2 * H2; ++i) v += w[i] * g[i];
      t[u] = v > 0.0 ? v : 0.0;
    }
    QueryPrediction& pred = out[q];
    pred.seed = seed;
    for (int o = 0; o < 7; ++o) {
      const double* w = P + L.wb + static_cast<std::size_t>(o) * T;
      double v = P[L.bb + o];
      for (int i = 0; i < T; ++i) v += w[i] * t[i];
      pred.box_raw[o] = v;
    }
    {
      double v = P[L.bo];
      for (int i = 0; i < T; ++i) v += P[L.wo + i] * t[i];
      pred.logit = v;
      pred.objectness = detail::sigmoid(v);
    }
    pred.feature.assign(D, 0.0);
    for (int o = 0; o < D; ++o) {
      const double* w = P + L.wf + static_cast<std::size_t>(o) * T;
      double v = P[L.bf + o];
      for (int i = 0; i < T; ++i) v += w[i] * t[i];
      pred.feature[o] = v;
    }
    pred.box = decode_box(seed, pred.box_raw);
  }
  return out;
}

/// Convenience overload that builds neighbourhoods on the fly.
inline std::vector<QueryPrediction> forward(const Scene& scene, const DetectorParams& params) {
  const auto nb = build_neighborhoods(scene, params.config.num_queries, params.config.k_neighbors);
  return forward(scene, nb, params);
}

/// Accumulates d(loss)/d(params) into `grad` given per-query output gradients.
inline void backward(const DetectorParams& params, const ForwardCache& fc, std::span<const OutputGrad> out_grads,
                     std::vector<double>& grad) {
  const DetectorConfig& c = params.config;
  const DetectorLayout L(c);
  const double* P = params.values.data();
  if (grad.size() != L.total) grad.assign(L.total, 0.0);
  double* G = grad.data();
  const int Q = fc.num_queries, K = fc.k, H1 = c.point_hidden, H2 = c.point_out, T = c.trunk,
            D = c.feature_dim;

  std::vector<double> dt(T), dg(2 * H2), dh2(static_cast<std::size_t>(K) * H2), dh1(H1);
  for (int q = 0; q < Q; ++q) {
    const OutputGrad& og = out_grads[q];
    bool any = og.logit != 0.0;
    for (double v : og.box) any = any || v != 0.0;
    for (double v : og.feature) any = any || v != 0.0;
    if (!any) continue;

    const double* t = &fc.t[static_cast<std::size_t>(q) * T];
    std::fill(dt.begin(), dt.end(), 0.0);
    for (int o = 0; o < 7; ++o) {
      const double go = og.box[o];
      if (go == 0.0) continue;
      G[L.bb + o] += go;
      double* gw = G + L.wb + static_cast<std::size_t>(o) * T;
      const double* w = P + L.wb + static_cast<std::size_t>(o) * T;
      for (int i = 0; i < T; ++i) {
        gw[i] += go * t[i];
        dt[i] += go * w[i];
      }
    }
    if (og.logit != 0.0) {
      G[L.bo] += og.logit;
      for (int i = 0; i < T; ++i) {
        G[L.wo + i] += og.logit * t[i];
        dt[i] += og.logit * P[L.wo + i];
      }
    }
    for (int o = 0; o < D; ++o) {
      const double go = og.feature[o];
      if (go == 0.0) continue;
      G[L.bf + o] += go;
      double* gw = G + L.wf + static_cast<std::size_t>(o) * T;
      const double* w = P + L.wf + static_cast<std::size_t>(o) * T;
      for (int i = 0; i < T; ++i) {
        gw[i] += go * t[i];
        dt[i] += go * w[i];
      }
    }
    // trunk
    const double* g = &fc.g[static_cast<std::size_t>(q) * 2 * H2];
    std::fill(dg.begin(), dg.end(), 0.0);
    for (int u = 0; u < T; ++u) {
      if (t[u] <= 0.0) continue;
      const double d = dt[u];
      if (d == 0.0) continue;
      G[L.b3 + u] += d;
      double* gw = G + L.w3 + static_cast<std::size_t>(u) * 2 * H2;
      const double* w = P + L.w3 + static_cast<std::size_t>(u) * 2 * H2;
      for (int i = 0; i < 2 * H2; ++i) {
        gw[i] += d * g[i];
        dg[i] += d * w[i];
      }
    }
    // pooling
    const int* am = &fc.argmax[static_cast<std::size_t>(q) * H2];
    std::fill(dh2.begin(), dh2.end(), 0.0);
    for (int u = 0; u < H2; ++u) {
      dh2[static_cast<std::size_t>(am[u]) * H2 + u] += dg[u];
      const double m = dg[H2 + u] / K;
      for (int j = 0; j < K; ++j) dh2[static_cast<std::size_t>(j) * H2 + u] += m;
    }
    // point-wise layers
    const double* x = &fc.x[static_cast<std::size_t>(q) * K * 3];
    const double* h1 = &fc.h1[static_cast<std::size_t>(q) * K * H1];
    const double* h2 = &fc.h2[static_cast<std::size_t>(q) * K * H2];
    for (int j = 0; j < K; ++j) {
      std::fill(dh1.begin(), dh1.end(), 0.0);
      for (int u = 0; u < H2; ++u) {
        if (h2[j * H2 + u] <= 0.0) continue;
        const double d = dh2[static_cast<std::size_t>(j) * H2 + u];
        if (d == 0.0) continue;
        G[L.b2 + u] += d;
        double* gw = G + L.w2 + static_cast<std::size_t>(u) * H1;
        const double* w = P + L.w2 + static_cast<std::size_t>(u) * H1;
        for (int i = 0; i < H1; ++i) {
          gw[i] += d * h1[j * H1 + i];
          dh1[i] += d * w[i];
        }
      }
      for (int u = 0; u < H1; ++u) {
        if (h1[j * H1 + u] <= 0.0) continue;
        const double d = dh1[u];
        if (d == 0.0) continue;
        G[L.b1 + u] += d;
        G[L.w1 + u * 3] += d * x[j * 3];
        G[L.w1 + u * 3 + 1] += d * x[j * 3 + 1];
        G[L.w1 + u * 3 + 2] += d * x[j * 3 + 2];
      }
    }
  }
}

/// A box the detector is supervised towards.
struct LabelBox {
  Box3D box;
  double weight = 1.0;
};

struct DetectionLossWeights {
  double center = 1.0;
  double size = 1.0;
  double yaw = 1.0;
  double objectness = 1.0;

  friend bool operator==(const DetectionLossWeights&, const DetectionLossWeights&) = default;
};

struct DetectionLoss {
  double value = 0.0;
  double regression = 0.0;
  double objectness = 0.0;
  std::vector<OutputGrad> grads;
};

namespace detail {

inline double sign(double v) { return v > 0.0 ? 1.0 : (v < 0.0 ? -1.0 : 0.0); }

inline double bce_with_logit(double z, double target) {
  return std::max(z, 0.0) - z * target + std::log1p(std::exp(-std::abs(z)));
}

}  // namespace detail

/// Class-agnostic detection loss: L1 on center, size and wrapped yaw for every
/// matched (query, label) pair, plus objectness BCE with target 1 for matched
/// and 0 for unmatched queries. No category term.
inline DetectionLoss detection_loss(std::span<const QueryPrediction> preds, std::span<const LabelBox> labels,
                                    std::span<const std::pair<int, int>> pairs,
                                    const DetectionLossWeights& w = {}) {
  DetectionLoss out;
  const int feat_dim = preds.empty() ? 0 : static_cast<int>(preds[0].feature.size());
  out.grads = zero_output_grads(preds.size(), feat_dim);
  std::vector<char> matched(preds.size(), 0);

  for (const auto& [qi, li] : pairs) {
    const QueryPrediction& p = preds[qi];
    const LabelBox& l = labels[li];
    OutputGrad& g = out.grads[qi];
    matched[qi] = 1;
    double reg = 0.0;
    for (int a = 0; a < 3; ++a) {
      const double dc = p.box.center[a] - l.box.center[a];
      reg += w.center * std::abs(dc);
      g.box[a] += l.weight * w.center * detail::sign(dc);
      const double ds = p.box.size[a] - l.box.size[a];
      reg += w.size * std::abs(ds);
      g.box[3 + a] += l.weight * w.size * detail::sign(ds) * p.box.size[a];
    }
    const double th = std::tanh(p.box_raw[6]);
    const double dyaw = normalize_yaw(kPi * th - l.box.yaw);
    reg += w.yaw * std::abs(dyaw);
    g.box[6] += l.weight * w.yaw * detail::sign(dyaw) * kPi * (1.0 - th * th);
    out.regression += l.weight * reg;
  }
  for (std::size_t q = 0; q < preds.size(); ++q) {
    const double target = matched[q] ? 1.0 : 0.0;
    out.objectness += w.objectness * detail::bce_with_logit(preds[q].logit, target);
    out.grads[q].logit += w.objectness * (detail::sigmoid(preds[q].logit) - target);
  }
  out.value = out.regression + out.objectness;
  return out;
}

enum class UpdateRule { kMomentum, kAdam };

/// Momentum SGD (momentum 0 gives a plain gradient step) or Adam.
struct Optimizer {
  UpdateRule rule = UpdateRule::kMomentum;
  double learning_rate = 0.01;
  /// Momentum coefficient; Adam's first-moment decay.
  double momentum = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Global L2 clip applied to the incoming gradient (<= 0 disables).
  double clip_norm = 0.0;
  std::vector<double> velocity;
  std::vector<double> second;
  std::int64_t steps = 0;

  friend bool operator==(const Optimizer&, const Optimizer&) = default;
};

/// Applies one update; throws NonFiniteGradient (naming the head) without
/// touching params if any gradient entry is not finite.
inline void apply_update(DetectorParams& params, std::span<const double> grad, Optimizer& opt) {
  const DetectorLayout L(params.config);
  if (grad.size() != params.values.size()) throw Error("apply_update: gradient shape mismatch");
  for (const auto& seg : L.segments)
    for (std::size_t i = 0; i < seg.size; ++i)
      if (!std::isfinite(grad[seg.offset + i])) throw NonFiniteGradient(seg.head, seg.name);
  double scale = 1.0;
  if (opt.clip_norm > 0.0) {
    double n2 = 0.0;
    for (double g : grad) n2 += g * g;
    const double n = std::sqrt(n2);
    if (n > opt.clip_norm) scale = opt.clip_norm / n;
  }
  ++opt.steps;
  if (opt.rule == UpdateRule::kAdam) {
    if (opt.velocity.size() != grad.size()) opt.velocity.assign(grad.size(), 0.0);
    if (opt.second.size() != grad.size()) opt.second.assign(grad.size(), 0.0);
    const double b1 = opt.momentum, b2 = opt.beta2;
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(opt.steps));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(opt.steps));
    for (std::size_t i = 0; i < grad.size(); ++i) {
      const double g = scale * grad[i];
      if (g == 0.0 && opt.velocity[i] == 0.0) continue;
      opt.velocity[i] = b1 * opt.velocity[i] + (1.0 - b1) * g;
      opt.second[i] = b2 * opt.second[i] + (1.0 - b2) * g * g;
      params.values[i] -= opt.learning_rate * (opt.velocity[i] / c1) / (std::sqrt(opt.second[i] / c2) + opt.epsilon);
    }
    return;
  }
  if (opt.momentum == 0.0) {
    for (std::size_t i = 0; i < grad.size(); ++i) params.values[i] -= opt.learning_rate * scale * grad[i];
    return;
  }
  if (opt.velocity.size() != grad.size()) opt.velocity.assign(grad.size(), 0.0);
  for (std::size_t i = 0; i < grad.size(); ++i) {
    opt.velocity[i] = opt.momentum * opt.velocity[i] + scale * grad[i];
    params.values[i] -= opt.learning_rate * opt.velocity[i];
  }
}

}  // namespace coda
