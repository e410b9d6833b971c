#pragma once

// Seeded synthetic indoor scenes: objects resting on a floor in front of a
// pinhole camera, sampled as noisy surface points plus floor/wall clutter.
// Categories carry distinct size signatures so class-agnostic geometry is
// enough to localize an object of any category.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "coda/errors.hpp"
#include "coda/geometry.hpp"
#include "coda/vocabulary.hpp"

namespace coda {

using Point = std::array<float, 3>;

struct CategorySpec {
  std::string name;
  Vec3 mean_size;  // width, depth, height
};

/// Built-in category table: 10 seen categories, 10 novel ones, and
/// distractors that exist only in the text vocabulary.
inline const std::vector<CategorySpec>& default_categories() {
  static const std::vector<CategorySpec> table = {
      // seen
      {"bed", {1.6, 1.1, 0.4}},
      {"table", {1.1, 0.7, 0.8}},
      {"sofa", {1.6, 0.7, 0.8}},
      {"chair", {0.4, 0.4, 0.8}},
      {"toilet", {0.4, 0.7, 0.8}},
      {"desk", {1.1, 0.4, 0.8}},
      {"dresser", {1.1, 0.4, 1.4}},
      {"night_stand", {0.4, 0.4, 0.4}},
      {"bookshelf", {0.7, 0.4, 1.4}},
      {"bathtub", {1.6, 0.7, 0.4}},
      // novel
      {"lamp", {0.4, 0.4, 1.4}},
      {"monitor", {0.7, 0.4, 0.4}},
      {"box", {0.7, 0.7, 0.4}},
      {"cabinet", {0.7, 0.7, 1.4}},
      {"stool", {0.4, 0.7, 0.4}},
      {"fridge", {1.1, 0.7, 1.4}},
      {"sink", {0.7, 0.4, 0.8}},
      {"tv_stand", {1.6, 0.4, 0.4}},
      {"counter", {1.6, 0.4, 0.8}},
      {"ottoman", {1.1, 1.1, 0.4}},
      // text-only distractors
      {"piano", {1.6, 0.7, 1.4}},
      {"oven", {0.7, 0.7, 0.8}},
      {"plant", {1.1, 0.7, 0.4}},
      {"bag", {0.4, 0.7, 1.4}},
  };
  return table;
}

struct WorldConfig {
  int num_base_categories = 10;
  int num_novel_categories = 10;
  /// Extra vocabulary entries that never occur in scenes.
  int num_distractor_categories = 4;
  /// Optional override of the category table (defaults to default_categories()).
  std::vector<CategorySpec> categories;

  int num_train_scenes = 200;
  int num_val_scenes = 50;
  int min_objects = 3;
  int max_objects = 6;

  int points_per_scene = 2048;
  double object_point_density = 20.0;  // points per m^2 of sampled surface
  int min_points_per_object = 40;
  int max_points_per_object = 96;
  double point_noise_sigma = 0.01;
  double size_jitter = 0.1;  // relative, uniform in [-j, j]
  double max_yaw = 0.5;

  double floor_y = 1.0;  // camera height above the floor (y points down)
  double min_depth = 3.0;
  double max_depth = 7.0;
  double min_gap = 0.2;  // BEV clearance between objects

  CameraIntrinsics camera{};
  std::uint64_t seed = 1;

  const std::vector<CategorySpec>& category_table() const {
    return categories.empty() ? default_categories() : categories;
  }

  void validate() const {
    const auto& table = category_table();
    if (num_base_categories < 0 || num_novel_categories < 0 || num_distractor_categories < 0)
      throw ConfigError("world: negative category count");
    if (num_base_categories + num_novel_categories < 1)
      throw ConfigError("world: need at least one category");
    if (static_cast<std::size_t>(num_base_categories + num_novel_categories +
                                 num_distractor_categories) > table.size())
      throw ConfigError("world: base + novel + distractor exceeds category table size");
    if (min_objects < 0 || max_objects < min_objects)
      throw ConfigError("world: inconsistent objects-per-scene range");
    if (num_train_scenes < 0 || num_val_scenes < 0) throw ConfigError("world: negative scene count");
    if (points_per_scene < 1) throw ConfigError("world: points_per_scene must be positive");
    if (min_points_per_object < 1 || max_points_per_object < min_points_per_object)
      throw ConfigError("world: inconsistent per-object point range");
    if (static_cast<long>(max_objects) * max_points_per_object > points_per_scene)
      throw ConfigError("world: object points can exceed points_per_scene");
    if (!(point_noise_sigma >= 0.0)) throw ConfigError("world: point_noise_sigma must be >= 0");
    if (!(size_jitter >= 0.0 && size_jitter < 1.0)) throw ConfigError("world: size_jitter must be in [0,1)");
    if (!(min_depth > 1.0 && max_depth > min_depth)) throw ConfigError("world: inconsistent depth range");
    if (!(floor_y > 0.0)) throw ConfigError("world: floor_y must be positive");
    if (!camera.valid()) throw ConfigError("world: invalid camera intrinsics");
    for (const auto& c : table)
      for (double s : c.mean_size)
        if (!(s > 0.0)) throw ConfigError("world: category '" + c.name + "' has non-positive size");
  }
};

struct SceneObject {
  Box3D box;
  int category_id = 0;
  bool is_base = false;

  friend bool operator==(const SceneObject&, const SceneObject&) = default;
};

struct Scene {
  std::string scene_id;
  std::vector<Point> points;
  std::vector<SceneObject> objects;
  CameraIntrinsics intrinsics;

  friend bool operator==(const Scene&, const Scene&) = default;
};

struct Dataset {
  Vocabulary vocab;
  WorldConfig config;
  std::vector<Scene> train;
  std::vector<Scene> val;
};

/// Vocabulary implied by a world config: base, novel, then distractor names.
/// With the built-in table, seen names come from its first ten rows and
/// novel/distractor names from the remainder.
inline Vocabulary make_vocabulary(const WorldConfig& cfg) {
  const auto& table = cfg.category_table();
  const std::size_t seen_pool = cfg.categories.empty() ? 10 : static_cast<std::size_t>(cfg.num_base_categories);
  if (static_cast<std::size_t>(cfg.num_base_categories) > seen_pool)
    throw ConfigError("world: more base categories than the seen section of the table");
  if (seen_pool + cfg.num_novel_categories + cfg.num_distractor_categories > table.size())
    throw ConfigError("world: novel + distractor categories exceed the category table");
  Vocabulary v;
  for (int i = 0; i < cfg.num_base_categories; ++i) {
    v.names.push_back(table[i].name);
    v.seen.push_back(true);
  }
  for (int i = 0; i < cfg.num_novel_categories + cfg.num_distractor_categories; ++i) {
    v.names.push_back(table[seen_pool + i].name);
    v.seen.push_back(false);
  }
  v.validate();
  return v;
}

inline std::vector<SceneObject> base_annotations(const Scene& scene) {
  std::vector<SceneObject> out;
  for (const auto& o : scene.objects)
    if (o.is_base) out.push_back(o);
  return out;
}

namespace detail {

inline std::mt19937_64 scene_rng(std::uint64_t seed, std::uint64_t split, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(split), static_cast<std::uint32_t>(index)};
  return std::mt19937_64(seq);
}

inline bool footprints_clear(const Box3D& a, const Box3D& b, double gap) {
  Box3D ga = a;
  ga.size[0] += gap;
  ga.size[1] += gap;
  return bev_intersection_area(ga, b) <= 0.0;
}

inline bool inside_image(const Box2D& b, const CameraIntrinsics& cam) {
  return b.min[0] > 0.0 && b.min[1] > 0.0 && b.max[0] < cam.width && b.max[1] < cam.height;
}

// Samples `n` points on the top and four side faces of the box.
template <class Rng>
void sample_box_surface(const Box3D& box, int n, double sigma, Rng& rng, std::vector<Point>& out) {
  const double w = box.size[0], d = box.size[1], h = box.size[2];
  const std::array<double, 5> area{w * d, w * h, w * h, d * h, d * h};
  std::discrete_distribution<int> face(area.begin(), area.end());
  std::uniform_real_distribution<double> u(-0.5, 0.5);
  std::normal_distribution<double> noise(0.0, sigma);
  for (int i = 0; i < n; ++i) {
    Vec3 local{};
    switch (face(rng)) {
      case 0: local = {u(rng) * w, -0.5 * h, u(rng) * d}; break;  // top (y down)
      case 1: local = {u(rng) * w, u(rng) * h, -0.5 * d}; break;
      case 2: local = {u(rng) * w, u(rng) * h, 0.5 * d}; break;
      case 3: local = {-0.5 * w, u(rng) * h, u(rng) * d}; break;
      default: local = {0.5 * w, u(rng) * h, u(rng) * d}; break;
    }
    Vec3 p = box_to_world(box, local);
    if (sigma > 0.0)
      for (auto& x : p) x += noise(rng);
    out.push_back({static_cast<float>(p[0]), static_cast<float>(p[1]), static_cast<float>(p[2])});
  }
}

inline bool point_in_footprint(const Box3D& box, double x, double z) {
  const Vec3 l = world_to_box(box, {x, box.center[1], z});
  return std::abs(l[0]) <= 0.5 * box.size[0] && std::abs(l[2]) <= 0.5 * box.size[1];
}

}  // namespace detail

/// One scene; deterministic in (cfg.seed, split, index).
inline Scene generate_scene(const WorldConfig& cfg, const Vocabulary& vocab, int split, int index) {
  auto rng = detail::scene_rng(cfg.seed, static_cast<std::uint64_t>(split), static_cast<std::uint64_t>(index));
  const auto& table = cfg.category_table();
  const CameraIntrinsics& cam = cfg.camera;
  const int num_present = cfg.num_base_categories + cfg.num_novel_categories;

  Scene scene;
  scene.scene_id = std::string(split == 0 ? "train_" : "val_") + std::to_string(100000 + index).substr(1);
  scene.intrinsics = cam;

  std::uniform_int_distribution<int> n_obj_dist(cfg.min_objects, cfg.max_objects);
  std::uniform_int_distribution<int> cat_dist(0, num_present - 1);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int wanted = n_obj_dist(rng);
  const double tan_half = (0.5 * cam.width) / cam.fx;

  for (int attempt = 0; attempt < 200 && static_cast<int>(scene.objects.size()) < wanted; ++attempt) {
    const int cat = cat_dist(rng);
    const std::string& name = vocab.names[cat];
    const CategorySpec* spec = nullptr;
    for (const auto& c : table)
      if (c.name == name) spec = &c;
    Vec3 size{};
    for (int k = 0; k < 3; ++k)
      size[k] = spec->mean_size[k] * (1.0 + cfg.size_jitter * (2.0 * unit(rng) - 1.0));
    const double yaw = cfg.max_yaw * (2.0 * unit(rng) - 1.0);
    const double z = cfg.min_depth + (cfg.max_depth - cfg.min_depth) * unit(rng);
    const double x_lim = std::max(0.0, 0.85 * z * tan_half - 0.5 * std::max(size[0], size[1]));
    const double x = x_lim * (2.0 * unit(rng) - 1.0);
    const Box3D box({x, cfg.floor_y - 0.5 * size[2], z}, size, yaw);

    bool ok = true;
    for (const auto& o : scene.objects)
      if (!detail::footprints_clear(box, o.box, cfg.min_gap)) ok = false;
    if (!ok) continue;
    try {
      if (!detail::inside_image(project_box(box, cam), cam)) continue;
    } catch (const BehindCamera&) {
      continue;
    }
    scene.objects.push_back({box, cat, vocab.is_seen(static_cast<std::size_t>(cat))});
  }

  for (const auto& o : scene.objects) {
    const double w = o.box.size[0], d = o.box.size[1], h = o.box.size[2];
    const double area = w * d + 2.0 * (w + d) * h;
    const int n = std::clamp(static_cast<int>(std::lround(area * cfg.object_point_density)),
                             cfg.min_points_per_object, cfg.max_points_per_object);
    detail::sample_box_surface(o.box, n, cfg.point_noise_sigma, rng, scene.points);
  }

  // Background: floor inside the viewing frustum plus a back wall.
  std::normal_distribution<double> noise(0.0, cfg.point_noise_sigma);
  const int remaining = cfg.points_per_scene - static_cast<int>(scene.points.size());
  const double z_near = cfg.min_depth - 1.0;
  const double z_far = cfg.max_depth + 1.0;
  const int wall_points = remaining / 4;
  for (int i = 0; i < remaining;) {
    double x = 0, y = 0, z = 0;
    if (i < remaining - wall_points) {
      z = z_near + (z_far - z_near) * unit(rng);
      x = (2.0 * unit(rng) - 1.0) * z * tan_half;
      y = cfg.floor_y;
      bool covered = false;
      for (const auto& o : scene.objects)
        if (detail::point_in_footprint(o.box, x, z)) covered = true;
      if (covered) continue;
    } else {
      z = z_far;
      x = (2.0 * unit(rng) - 1.0) * z * tan_half;
      y = cfg.floor_y - 2.5 * unit(rng);
    }
    if (cfg.point_noise_sigma > 0.0) {
      x += noise(rng);
      y += noise(rng);
      z += noise(rng);
    }
    scene.points.push_back({static_cast<float>(x), static_cast<float>(y), static_cast<float>(z)});
    ++i;
  }
  return scene;
}

inline Dataset generate_dataset(const WorldConfig& cfg) {
  cfg.validate();
  Dataset ds;
  ds.config = cfg;
  ds.vocab = make_vocabulary(cfg);
  ds.train.reserve(cfg.num_train_scenes);
  for (int i = 0; i < cfg.num_train_scenes; ++i) ds.train.push_back(generate_scene(cfg, ds.vocab, 0, i));
  for (int i = 0; i < cfg.num_val_scenes; ++i) ds.val.push_back(generate_scene(cfg, ds.vocab, 1, i));
  return ds;
}

}  // namespace coda
