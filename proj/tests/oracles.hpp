#pragma once

// Independent reference implementations used by the tests.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "coda/coda.hpp"

namespace oracle {

using namespace coda;

inline bool inside(const Box3D& b, const Vec3& p) {
  const Vec3 l = world_to_box(b, p);
  return std::abs(l[0]) <= 0.5 * b.size[0] && std::abs(l[1]) <= 0.5 * b.size[2] && std::abs(l[2]) <= 0.5 * b.size[1];
}

/// Uniform samples over the joint axis-aligned bounding region.
inline double monte_carlo_iou(const Box3D& a, const Box3D& b, long samples, std::mt19937_64& rng) {
  Vec3 lo{INFINITY, INFINITY, INFINITY}, hi{-INFINITY, -INFINITY, -INFINITY};
  for (const Box3D* box : {&a, &b})
    for (const Vec3& c : corners(*box))
      for (int i = 0; i < 3; ++i) {
        lo[i] = std::min(lo[i], c[i]);
        hi[i] = std::max(hi[i], c[i]);
      }
  struct Frame {
    double c, s;
    const Box3D* box;
    bool contains(const Vec3& p) const {
      const double dx = p[0] - box->center[0], dz = p[2] - box->center[2];
      return std::abs(c * dx + s * dz) <= 0.5 * box->size[0] && std::abs(p[1] - box->center[1]) <= 0.5 * box->size[2] &&
             std::abs(-s * dx + c * dz) <= 0.5 * box->size[1];
    }
  };
  const Frame fa{std::cos(a.yaw), std::sin(a.yaw), &a}, fb{std::cos(b.yaw), std::sin(b.yaw), &b};
  std::uniform_real_distribution<double> u(0.0, 1.0);
  long in_a = 0, in_b = 0, both = 0;
  for (long s = 0; s < samples; ++s) {
    const Vec3 p{lo[0] + (hi[0] - lo[0]) * u(rng), lo[1] + (hi[1] - lo[1]) * u(rng), lo[2] + (hi[2] - lo[2]) * u(rng)};
    const bool ia = fa.contains(p), ib = fb.contains(p);
    in_a += ia;
    in_b += ib;
    both += ia && ib;
  }
  const long uni = in_a + in_b - both;
  return uni ? static_cast<double>(both) / uni : 0.0;
}

inline Box3D random_box(std::mt19937_64& rng, double spread = 1.0) {
  std::uniform_real_distribution<double> c(-spread, spread), s(0.3, 2.0), y(-kPi, kPi);
  return Box3D({c(rng), c(rng) * 0.5, c(rng)}, {s(rng), s(rng), s(rng)}, y(rng));
}

/// Minimum total cost over every injective map from the smaller side; each
/// candidate is summed in query (row) order like assignment_cost.
inline double brute_force_min_cost(const CostMatrix& m) {
  const bool transpose = m.rows > m.cols;
  const int small = transpose ? m.cols : m.rows, large = transpose ? m.rows : m.cols;
  std::vector<int> perm(large);
  std::iota(perm.begin(), perm.end(), 0);
  double best = std::numeric_limits<double>::infinity();
  std::vector<int> row_to_col(m.rows);
  do {
    std::fill(row_to_col.begin(), row_to_col.end(), -1);
    for (int i = 0; i < small; ++i) {
      if (transpose)
        row_to_col[perm[i]] = i;
      else
        row_to_col[i] = perm[i];
    }
    double c = 0.0;
    for (int r = 0; r < m.rows; ++r)
      if (row_to_col[r] >= 0) c += m(r, row_to_col[r]);
    best = std::min(best, c);
  } while (std::next_permutation(perm.begin(), perm.end()));
  return best;
}

/// AP/AR by exhaustive scanning: each detection's rank is the count of
/// detections that precede it under (confidence desc, scene, index); each
/// detection in rank order scans every GT box for the best admissible match;
/// all-point AP sums, over recall levels k/G, the best precision at any rank
/// reaching that level.
inline EvalResult exhaustive_evaluate(const std::vector<std::vector<Detection>>& dets,
                                      const std::vector<std::vector<GroundTruthBox>>& gts, const Vocabulary& vocab,
                                      double thr) {
  const std::size_t C = vocab.size();
  EvalResult r;
  r.ap.assign(C, std::numeric_limits<double>::quiet_NaN());
  r.ar.assign(C, std::numeric_limits<double>::quiet_NaN());
  r.num_gt.assign(C, 0);
  for (const auto& s : gts)
    for (const auto& g : s) ++r.num_gt[g.category];
  for (std::size_t c = 0; c < C; ++c) {
    const int G = r.num_gt[c];
    if (G == 0) continue;
    struct D {
      std::size_t s, i;
      double conf;
    };
    std::vector<D> ds;
    for (std::size_t s = 0; s < dets.size(); ++s)
      for (std::size_t i = 0; i < dets[s].size(); ++i)
        if (dets[s][i].category == static_cast<int>(c)) ds.push_back({s, i, dets[s][i].confidence});
    std::vector<D> order(ds.size());
    for (const D& a : ds) {
      std::size_t rank = 0;
      for (const D& b : ds) {
        const bool before = b.conf > a.conf || (b.conf == a.conf && (b.s < a.s || (b.s == a.s && b.i < a.i)));
        rank += before;
      }
      order[rank] = a;
    }
    std::vector<std::vector<bool>> used(gts.size());
    for (std::size_t s = 0; s < gts.size(); ++s) used[s].assign(gts[s].size(), false);
    std::vector<int> tp_at(order.size());
    std::vector<double> prec_at(order.size());
    int tp = 0;
    for (std::size_t k = 0; k < order.size(); ++k) {
      const D& d = order[k];
      int best = -1;
      double best_iou = -1.0;
      for (std::size_t g = 0; g < gts[d.s].size(); ++g) {
        if (used[d.s][g] || gts[d.s][g].category != static_cast<int>(c)) continue;
        const double iou = iou3d(dets[d.s][d.i].box, gts[d.s][g].box);
        if (iou < thr) continue;
        if (iou > best_iou) {
          best_iou = iou;
          best = static_cast<int>(g);
        }
      }
      if (best >= 0) {
        used[d.s][best] = true;
        ++tp;
      }
      tp_at[k] = tp;
      prec_at[k] = static_cast<double>(tp) / static_cast<double>(k + 1);
    }
    double ap = 0.0;
    for (int level = 1; level <= G; ++level) {
      double p = 0.0;
      bool reached = false;
      for (std::size_t k = 0; k < order.size(); ++k)
        if (tp_at[k] >= level) {
          reached = true;
          p = std::max(p, prec_at[k]);
        }
      if (reached) ap += p / G;
    }
    r.ap[c] = ap;
    r.ar[c] = static_cast<double>(tp) / G;
  }
  auto mean = [&](const std::vector<double>& v, int split) {
    double sum = 0.0;
    int n = 0;
    for (std::size_t c = 0; c < C; ++c) {
      if (r.num_gt[c] == 0) continue;
      if ((split == 0 && vocab.is_seen(c)) || (split == 1 && !vocab.is_seen(c))) continue;
      sum += v[c];
      ++n;
    }
    return n ? sum / n : 0.0;
  };
  r.ap_novel = mean(r.ap, 0);
  r.ap_base = mean(r.ap, 1);
  r.ap_mean = mean(r.ap, 2);
  r.ar_novel = mean(r.ar, 0);
  r.ar_base = mean(r.ar, 1);
  r.ar_mean = mean(r.ar, 2);
  return r;
}

/// Max relative error between an analytic gradient and central differences
/// of `f` at `x`; entries where both are below `floor` are skipped.
inline double gradient_check(const std::function<double(const std::vector<double>&)>& f, std::vector<double> x,
                             const std::vector<double>& analytic, double step = 1e-5, double floor = 1e-7) {
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = x[i];
    x[i] = keep + step;
    const double fp = f(x);
    x[i] = keep - step;
    const double fm = f(x);
    x[i] = keep;
    const double num = (fp - fm) / (2 * step);
    const double scale = std::max(std::abs(num), std::abs(analytic[i]));
    if (scale < floor) continue;
    worst = std::max(worst, std::abs(num - analytic[i]) / scale);
  }
  return worst;
}

inline Vocabulary numbered_vocab(int n, int seen) {
  Vocabulary v;
  for (int i = 0; i < n; ++i) {
    v.names.push_back("class" + std::to_string(i));
    v.seen.push_back(i < seen);
  }
  return v;
}

struct EvalInstance {
  Vocabulary vocab;
  std::vector<std::vector<Detection>> dets;
  std::vector<std::vector<GroundTruthBox>> gts;
};

/// At most ten GT boxes over up to three scenes and four categories, with
/// jittered, duplicated and spurious detections and coarse confidences (ties).
inline EvalInstance random_eval_instance(std::mt19937_64& rng) {
  std::uniform_int_distribution<int> n_scenes(1, 3), n_gt(0, 10), cat(0, 3), coin(0, 3), conf(1, 5);
  std::uniform_real_distribution<double> jitter(-0.3, 0.3), pos(-3, 3);
  EvalInstance e;
  e.vocab = numbered_vocab(4, 2);
  const int S = n_scenes(rng);
  e.gts.resize(S);
  e.dets.resize(S);
  const int total = n_gt(rng);
  for (int i = 0; i < total; ++i) {
    const int s = i % S;
    e.gts[s].push_back({Box3D({pos(rng), 0, pos(rng)}, {0.8, 0.8, 0.8}, jitter(rng)), cat(rng)});
  }
  for (int s = 0; s < S; ++s) {
    for (const auto& g : e.gts[s]) {
      const int copies = coin(rng);  // 0..3, duplicates included
      for (int k = 0; k < copies; ++k) {
        Box3D b = g.box;
        b.center[0] += jitter(rng);
        b.center[2] += jitter(rng);
        const int c = coin(rng) == 0 ? cat(rng) : g.category;
        e.dets[s].push_back({b, c, conf(rng) / 5.0});
      }
    }
    const int spurious = coin(rng);
    for (int k = 0; k < spurious; ++k)
      e.dets[s].push_back({Box3D({pos(rng), 0, pos(rng)}, {0.8, 0.8, 0.8}, 0), cat(rng), conf(rng) / 5.0});
  }
  return e;
}

/// Exact equality of every field, NaN matching NaN.
inline bool same_result(const EvalResult& a, const EvalResult& b) {
  auto same = [](const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) return false;
    for (std::size_t i = 0; i < x.size(); ++i)
      if (!(x[i] == y[i] || (std::isnan(x[i]) && std::isnan(y[i])))) return false;
    return true;
  };
  return same(a.ap, b.ap) && same(a.ar, b.ar) && a.num_gt == b.num_gt && a.ap_novel == b.ap_novel &&
         a.ap_base == b.ap_base && a.ap_mean == b.ap_mean && a.ar_novel == b.ar_novel && a.ar_base == b.ar_base &&
         a.ar_mean == b.ar_mean;
}

struct OracleDiscovery {
  std::size_t novel_in_image = 0;
  std::size_t recovered = 0;
  std::size_t false_accepts = 0;
  DiscoveryReport report;
};

/// One discovery epoch with noiseless crops and ground-truth boxes standing in
/// for predictions.
inline OracleDiscovery perfect_oracle_discovery(const WorldConfig& world, const DiscoveryConfig& cfg = {},
                                                EncoderConfig enc = {}) {
  const Dataset ds = generate_dataset(world);
  enc.image_noise_sigma = 0.0;
  const TextEmbeddings text = encode_text(ds.vocab, enc);
  LabelPool pool = LabelPool::from_scenes(ds.train);
  Predictor predict = [&](const Scene& s, std::size_t) { return ground_truth_predictions(s, enc.dim); };
  std::mt19937_64 rng(0);
  OracleDiscovery out;
  out.report = run_discovery_epoch(ds.train, predict, pool, ds.vocab, text, enc, cfg, 1, rng);
  for (const Scene& s : ds.train) {
    const auto& found = pool.novel(s.scene_id);
    for (const SceneObject& o : s.objects) {
      if (o.is_base) continue;
      const Box2D b = project_box(o.box, s.intrinsics);
      if (!(b.min[0] > 0 && b.min[1] > 0 && b.max[0] < s.intrinsics.width && b.max[1] < s.intrinsics.height))
        continue;
      ++out.novel_in_image;
      for (const PoolEntry& e : found)
        if (e.box == o.box && e.category_id == o.category_id) {
          ++out.recovered;
          break;
        }
    }
    for (const PoolEntry& e : found) {
      bool real = false;
      for (const SceneObject& o : s.objects) real = real || (!o.is_base && e.box == o.box && e.category_id == o.category_id);
      out.false_accepts += !real;
    }
  }
  return out;
}

// Seeded toy instances for the loss gradient checks. Each returns the max
// relative error of the analytic gradient against central differences.

/// Variables per query: 7 raw box outputs then the objectness logit.
inline double detection_loss_check(std::uint64_t seed, int queries = 6, int labels = 3) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  std::vector<Vec3> seeds(queries);
  std::vector<double> x(static_cast<std::size_t>(queries) * 8);
  for (int q = 0; q < queries; ++q) {
    seeds[q] = {2 * u(rng), u(rng), 4 + 2 * u(rng)};
    for (int a = 0; a < 3; ++a) x[q * 8 + a] = 0.3 * g(rng);
    for (int a = 3; a < 6; ++a) x[q * 8 + a] = 0.4 * u(rng) - 0.3;
    x[q * 8 + 6] = 0.5 * g(rng);
    x[q * 8 + 7] = 2 * g(rng);
  }
  auto build = [&](const std::vector<double>& v) {
    std::vector<QueryPrediction> preds(queries);
    for (int q = 0; q < queries; ++q) {
      QueryPrediction& p = preds[q];
      p.seed = seeds[q];
      for (int a = 0; a < 7; ++a) p.box_raw[a] = v[q * 8 + a];
      p.box = decode_box(p.seed, p.box_raw);
      p.logit = v[q * 8 + 7];
      p.objectness = coda::detail::sigmoid(p.logit);
      p.feature.assign(4, 0.0);
    }
    return preds;
  };
  std::vector<LabelBox> lb(labels);
  for (auto& l : lb) l.box = Box3D({2 * u(rng), u(rng), 4 + 2 * u(rng)}, {0.5 + u(rng) * 0.3, 0.6, 0.8}, u(rng) * 2);
  const auto preds0 = build(x);
  const Assignment asg = match(preds0, lb);
  DetectionLossWeights w{1.0, 0.7, 0.5, 1.3};
  const DetectionLoss at = detection_loss(preds0, lb, asg.pairs, w);
  std::vector<double> analytic(x.size());
  for (int q = 0; q < queries; ++q) {
    for (int a = 0; a < 7; ++a) analytic[q * 8 + a] = at.grads[q].box[a];
    analytic[q * 8 + 7] = at.grads[q].logit;
  }
  return gradient_check(
      [&](const std::vector<double>& v) { return detection_loss(build(v), lb, asg.pairs, w).value; }, x, analytic);
}

/// Distillation on a batch of four crops out of five queries.
inline double distill_loss_check(std::uint64_t seed, int dim = 8) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  const int queries = 5;
  AlignmentBatch batch;
  for (int q : {0, 2, 3, 4}) {
    AlignmentItem it;
    it.query = q;
    it.crop_feature = coda::detail::random_unit(dim, rng);
    batch.items.push_back(it);
  }
  std::vector<double> x(static_cast<std::size_t>(queries) * dim);
  for (double& v : x) v = 0.5 * g(rng);
  auto build = [&](const std::vector<double>& v) {
    std::vector<QueryPrediction> preds(queries);
    for (int q = 0; q < queries; ++q) preds[q].feature.assign(v.begin() + q * dim, v.begin() + (q + 1) * dim);
    return preds;
  };
  const FeatureLoss at = distill_loss(batch, build(x));
  std::vector<double> analytic(x.size(), 0.0);
  for (int q = 0; q < queries; ++q)
    for (std::size_t d = 0; d < at.grads[q].size(); ++d) analytic[q * dim + d] = at.grads[q][d];
  return gradient_check([&](const std::vector<double>& v) { return distill_loss(batch, build(v)).value; }, x,
                        analytic);
}

/// Contrastive alignment over a mix of base, discovered and unmatched items.
inline double contrastive_loss_check(std::uint64_t seed, ContrastiveMode mode, double temperature = 0.1,
                                     bool normalize = true) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  const Vocabulary vocab = numbered_vocab(6, 3);
  EncoderConfig enc;
  enc.dim = 8;
  enc.seed = seed;
  const TextEmbeddings text = encode_text(vocab, enc);
  const int queries = 6, dim = enc.dim;
  AlignmentBatch batch;
  const int cats[] = {0, 4, 2, -1, 5, 1};
  for (int q = 0; q < queries; ++q) {
    AlignmentItem it;
    it.query = q;
    it.crop_feature.assign(dim, 0.0);
    if (cats[q] >= 0) {
      it.label = q;
      it.category = cats[q];
      it.label_source = vocab.is_seen(cats[q]) ? EntrySource::kBase : EntrySource::kDiscovered;
    }
    batch.items.push_back(it);
  }
  std::vector<double> x(static_cast<std::size_t>(queries) * dim);
  for (double& v : x) v = g(rng);
  auto build = [&](const std::vector<double>& v) {
    std::vector<QueryPrediction> preds(queries);
    for (int q = 0; q < queries; ++q) preds[q].feature.assign(v.begin() + q * dim, v.begin() + (q + 1) * dim);
    return preds;
  };
  const ContrastiveOptions opt{mode, temperature, normalize};
  const FeatureLoss at = contrastive_loss(batch, build(x), text, vocab, opt);
  std::vector<double> analytic(x.size(), 0.0);
  for (int q = 0; q < queries; ++q)
    for (std::size_t d = 0; d < at.grads[q].size(); ++d) analytic[q * dim + d] = at.grads[q][d];
  return gradient_check(
      [&](const std::vector<double>& v) { return contrastive_loss(batch, build(v), text, vocab, opt).value; }, x,
      analytic);
}

}  // namespace oracle
