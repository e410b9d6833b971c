#pragma once

// On-disk formats.
//
// Dataset directory:
//   manifest.json          vocabulary, world config, scene index
//   scenes/<id>.bin        little-endian float32, row-major P x 3
//   scenes/<id>.json       intrinsics and object list
// Text embeddings, label pools and configs are JSON. A checkpoint is one JSON
// header line followed by little-endian float64 blobs (parameters, then any
// optimizer moments). The metrics CSV reports AP/AR x100.

#include <bit>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "coda/detector.hpp"
#include "coda/discovery.hpp"
#include "coda/encoders.hpp"
#include "coda/errors.hpp"
#include "coda/trainer.hpp"
#include "coda/world.hpp"

namespace coda::io {

using json = nlohmann::json;
namespace fs = std::filesystem;

inline constexpr int kFormatVersion = 1;

namespace detail {

inline std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed: " + path.string());
}

inline json parse(const std::string& text, const std::string& what) {
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw IoError(what + ": " + e.what());
  }
}

inline json read_json(const fs::path& path) { return parse(read_text(path), path.string()); }

inline void write_json(const fs::path& path, const json& j) { write_text(path, j.dump(2) + "\n"); }

template <class T>
void put_le(std::string& buf, T v) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U u = std::bit_cast<U>(v);
  for (std::size_t i = 0; i < sizeof(U); ++i) buf.push_back(static_cast<char>((u >> (8 * i)) & 0xFF));
}

template <class T>
T get_le(const char* p) {
  using U = std::conditional_t<sizeof(T) == 4, std::uint32_t, std::uint64_t>;
  U u = 0;
  for (std::size_t i = 0; i < sizeof(U); ++i) u |= static_cast<U>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<T>(u);
}

/// Reads keys from a JSON object, remembering which were consumed so that
/// typos surface as ConfigError instead of silently keeping a default.
class ObjectReader {
 public:
  ObjectReader(const json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_ + ": expected an object");
  }

  template <class T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      out = it->template get<T>();
    } catch (const json::exception& e) {
      throw ConfigError(path_ + "." + key + ": " + e.what());
    }
  }

  const json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  std::string path(const char* key) const { return path_ + "." + key; }

  void finish() const {
    for (auto it = j_.begin(); it != j_.end(); ++it)
      if (!seen_.count(it.key())) throw ConfigError(path_ + ": unknown key '" + it.key() + "'");
  }

 private:
  const json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

template <class E>
struct EnumNames;

template <>
struct EnumNames<UpdateRule> {
  static constexpr std::pair<UpdateRule, const char*> values[] = {{UpdateRule::kMomentum, "momentum"},
                                                                  {UpdateRule::kAdam, "adam"}};
};
template <>
struct EnumNames<ContrastiveMode> {
  static constexpr std::pair<ContrastiveMode, const char*> values[] = {
      {ContrastiveMode::kOff, "off"}, {ContrastiveMode::kDiscovery, "discovery"}, {ContrastiveMode::kBaseOnly, "base_only"}};
};
template <>
struct EnumNames<FeatureSource> {
  static constexpr std::pair<FeatureSource, const char*> values[] = {{FeatureSource::kPoint, "point"},
                                                                     {FeatureSource::kCrop, "crop"}};
};
template <>
struct EnumNames<ApInterpolation> {
  static constexpr std::pair<ApInterpolation, const char*> values[] = {{ApInterpolation::kAllPoint, "all_point"},
                                                                       {ApInterpolation::kElevenPoint, "eleven_point"}};
};
template <>
struct EnumNames<ExtraSelection> {
  static constexpr std::pair<ExtraSelection, const char*> values[] = {
      {ExtraSelection::kTopObjectness, "top_objectness"}, {ExtraSelection::kRandom, "random"}};
};
template <>
struct EnumNames<EntrySource> {
  static constexpr std::pair<EntrySource, const char*> values[] = {{EntrySource::kBase, "base"},
                                                                   {EntrySource::kDiscovered, "discovered"}};
};

template <class E>
std::string enum_name(E v) {
  for (const auto& [e, n] : EnumNames<E>::values)
    if (e == v) return n;
  throw Error("unnamed enum value");
}

template <class E>
E enum_from(const std::string& s, const std::string& where) {
  std::string options;
  for (const auto& [e, n] : EnumNames<E>::values) {
    if (s == n) return e;
    options += options.empty() ? n : std::string("|") + n;
  }
  throw ConfigError(where + ": '" + s + "' is not one of " + options);
}

template <class E>
void get_enum(ObjectReader& r, const char* key, E& out) {
  std::string s = enum_name(out);
  r.get(key, s);
  out = enum_from<E>(s, r.path(key));
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Boxes

inline json to_json(const Box3D& b) { return {{"center", b.center}, {"size", b.size}, {"yaw", b.yaw}}; }

/// Stored yaw is taken verbatim so round-trips are exact.
inline Box3D box_from_json(const json& j) {
  Box3D b;
  try {
    b.center = j.at("center").get<Vec3>();
    b.size = j.at("size").get<Vec3>();
    b.yaw = j.at("yaw").get<double>();
  } catch (const json::exception& e) {
    throw IoError(std::string("box: ") + e.what());
  }
  if (!b.valid()) throw IoError("box: invalid size or yaw");
  return b;
}

// ---------------------------------------------------------------------------
// Configs

inline json to_json(const CameraIntrinsics& c) {
  return {{"fx", c.fx}, {"fy", c.fy}, {"cx", c.cx}, {"cy", c.cy}, {"width", c.width}, {"height", c.height}};
}

inline json to_json(const WorldConfig& c) {
  json j = {{"num_base_categories", c.num_base_categories},
            {"num_novel_categories", c.num_novel_categories},
            {"num_distractor_categories", c.num_distractor_categories},
            {"num_train_scenes", c.num_train_scenes},
            {"num_val_scenes", c.num_val_scenes},
            {"min_objects", c.min_objects},
            {"max_objects", c.max_objects},
            {"points_per_scene", c.points_per_scene},
            {"object_point_density", c.object_point_density},
            {"min_points_per_object", c.min_points_per_object},
            {"max_points_per_object", c.max_points_per_object},
            {"point_noise_sigma", c.point_noise_sigma},
            {"size_jitter", c.size_jitter},
            {"max_yaw", c.max_yaw},
            {"floor_y", c.floor_y},
            {"min_depth", c.min_depth},
            {"max_depth", c.max_depth},
            {"min_gap", c.min_gap},
            {"camera", to_json(c.camera)},
            {"seed", c.seed}};
  if (!c.categories.empty()) {
    json cats = json::array();
    for (const auto& s : c.categories) cats.push_back({{"name", s.name}, {"mean_size", s.mean_size}});
    j["categories"] = cats;
  }
  return j;
}

inline json to_json(const EncoderConfig& c) {
  return {{"dim", c.dim},
          {"crop_iou_threshold", c.crop_iou_threshold},
          {"image_noise_sigma", c.image_noise_sigma},
          {"temperature", c.temperature},
          {"normalize_features", c.normalize_features},
          {"max_abs_cosine", c.max_abs_cosine},
          {"max_resample_attempts", c.max_resample_attempts},
          {"seed", c.seed}};
}

inline json to_json(const DetectorConfig& c) {
  return {{"num_queries", c.num_queries}, {"k_neighbors", c.k_neighbors}, {"point_hidden", c.point_hidden},
          {"point_out", c.point_out},     {"trunk", c.trunk},             {"feature_dim", c.feature_dim},
          {"init_size", c.init_size},     {"seed", c.seed}};
}

inline json to_json(const TrainConfig& c) {
  using detail::enum_name;
  return {
      {"world", to_json(c.world)},
      {"encoder", to_json(c.encoder)},
      {"detector", to_json(c.detector)},
      {"discovery",
       {{"objectness_threshold", c.discovery.objectness_threshold},
        {"semantic_threshold", c.discovery.semantic_threshold},
        {"iou_gate", c.discovery.iou_gate},
        {"update_period_epochs", c.discovery.update_period_epochs}}},
      {"matching", {{"iou", c.matching.iou}, {"center", c.matching.center}, {"objectness", c.matching.objectness}}},
      {"detection",
       {{"center", c.detection.center},
        {"size", c.detection.size},
        {"yaw", c.detection.yaw},
        {"objectness", c.detection.objectness}}},
      {"alignment",
       {{"extra_queries", c.alignment.extra_queries}, {"selection", enum_name(c.alignment.selection)}}},
      {"stage_b", {{"discovery", c.stage_b.discovery}, {"contrastive", enum_name(c.stage_b.contrastive)}}},
      {"eval",
       {{"iou_threshold", c.eval.iou_threshold},
        {"ap", enum_name(c.eval.ap)},
        {"min_confidence", c.eval.post.min_confidence},
        {"nms_iou", c.eval.post.nms_iou},
        {"features", enum_name(c.eval.features)}}},
      {"stage_a_epochs", c.stage_a_epochs},
      {"stage_b_epochs", c.stage_b_epochs},
      {"eval_every", c.eval_every},
      {"batch_size", c.batch_size},
      {"update_rule", enum_name(c.update_rule)},
      {"learning_rate", c.learning_rate},
      {"momentum", c.momentum},
      {"clip_norm", c.clip_norm},
      {"lambda_distill", c.lambda_distill},
      {"lambda_contrastive", c.lambda_contrastive},
      {"discovered_weight", c.discovered_weight},
      {"seed", c.seed},
  };
}

inline void read_camera(const json& j, CameraIntrinsics& c, const std::string& path) {
  detail::ObjectReader r(j, path);
  r.get("fx", c.fx);
  r.get("fy", c.fy);
  r.get("cx", c.cx);
  r.get("cy", c.cy);
  r.get("width", c.width);
  r.get("height", c.height);
  r.finish();
}

inline void read_world(const json& j, WorldConfig& c, const std::string& path) {
  detail::ObjectReader r(j, path);
  r.get("num_base_categories", c.num_base_categories);
  r.get("num_novel_categories", c.num_novel_categories);
  r.get("num_distractor_categories", c.num_distractor_categories);
  r.get("num_train_scenes", c.num_train_scenes);
  r.get("num_val_scenes", c.num_val_scenes);
  r.get("min_objects", c.min_objects);
  r.get("max_objects", c.max_objects);
  r.get("points_per_scene", c.points_per_scene);
  r.get("object_point_density", c.object_point_density);
  r.get("min_points_per_object", c.min_points_per_object);
  r.get("max_points_per_object", c.max_points_per_object);
  r.get("point_noise_sigma", c.point_noise_sigma);
  r.get("size_jitter", c.size_jitter);
  r.get("max_yaw", c.max_yaw);
  r.get("floor_y", c.floor_y);
  r.get("min_depth", c.min_depth);
  r.get("max_depth", c.max_depth);
  r.get("min_gap", c.min_gap);
  r.get("seed", c.seed);
  if (const json* cam = r.child("camera")) read_camera(*cam, c.camera, r.path("camera"));
  if (const json* cats = r.child("categories")) {
    if (!cats->is_array()) throw ConfigError(r.path("categories") + ": expected an array");
    c.categories.clear();
    for (const json& e : *cats) {
      CategorySpec s;
      detail::ObjectReader cr(e, r.path("categories[]"));
      cr.get("name", s.name);
      cr.get("mean_size", s.mean_size);
      cr.finish();
      c.categories.push_back(s);
    }
  }
  r.finish();
}

inline void read_encoder(const json& j, EncoderConfig& c, const std::string& path) {
  detail::ObjectReader r(j, path);
  r.get("dim", c.dim);
  r.get("crop_iou_threshold", c.crop_iou_threshold);
  r.get("image_noise_sigma", c.image_noise_sigma);
  r.get("temperature", c.temperature);
  r.get("normalize_features", c.normalize_features);
  r.get("max_abs_cosine", c.max_abs_cosine);
  r.get("max_resample_attempts", c.max_resample_attempts);
  r.get("seed", c.seed);
  r.finish();
}

inline void read_detector(const json& j, DetectorConfig& c, const std::string& path) {
  detail::ObjectReader r(j, path);
  r.get("num_queries", c.num_queries);
  r.get("k_neighbors", c.k_neighbors);
  r.get("point_hidden", c.point_hidden);
  r.get("point_out", c.point_out);
  r.get("trunk", c.trunk);
  r.get("feature_dim", c.feature_dim);
  r.get("init_size", c.init_size);
  r.get("seed", c.seed);
  r.finish();
}

/// Missing keys keep their defaults; unknown keys are a ConfigError.
inline TrainConfig train_config_from_json(const json& j) {
  TrainConfig c;
  detail::ObjectReader r(j, "config");
  if (const json* w = r.child("world")) read_world(*w, c.world, "config.world");
  if (const json* e = r.child("encoder")) read_encoder(*e, c.encoder, "config.encoder");
  if (const json* d = r.child("detector")) read_detector(*d, c.detector, "config.detector");
  if (const json* d = r.child("discovery")) {
    detail::ObjectReader s(*d, "config.discovery");
    s.get("objectness_threshold", c.discovery.objectness_threshold);
    s.get("semantic_threshold", c.discovery.semantic_threshold);
    s.get("iou_gate", c.discovery.iou_gate);
    s.get("update_period_epochs", c.discovery.update_period_epochs);
    s.finish();
  }
  if (const json* m = r.child("matching")) {
    detail::ObjectReader s(*m, "config.matching");
    s.get("iou", c.matching.iou);
    s.get("center", c.matching.center);
    s.get("objectness", c.matching.objectness);
    s.finish();
  }
  if (const json* d = r.child("detection")) {
    detail::ObjectReader s(*d, "config.detection");
    s.get("center", c.detection.center);
    s.get("size", c.detection.size);
    s.get("yaw", c.detection.yaw);
    s.get("objectness", c.detection.objectness);
    s.finish();
  }
  if (const json* a = r.child("alignment")) {
    detail::ObjectReader s(*a, "config.alignment");
    s.get("extra_queries", c.alignment.extra_queries);
    detail::get_enum(s, "selection", c.alignment.selection);
    s.finish();
  }
  if (const json* b = r.child("stage_b")) {
    detail::ObjectReader s(*b, "config.stage_b");
    s.get("discovery", c.stage_b.discovery);
    detail::get_enum(s, "contrastive", c.stage_b.contrastive);
    s.finish();
  }
  if (const json* e = r.child("eval")) {
    detail::ObjectReader s(*e, "config.eval");
    s.get("iou_threshold", c.eval.iou_threshold);
    detail::get_enum(s, "ap", c.eval.ap);
    s.get("min_confidence", c.eval.post.min_confidence);
    s.get("nms_iou", c.eval.post.nms_iou);
    detail::get_enum(s, "features", c.eval.features);
    s.finish();
  }
  r.get("stage_a_epochs", c.stage_a_epochs);
  r.get("stage_b_epochs", c.stage_b_epochs);
  r.get("eval_every", c.eval_every);
  r.get("batch_size", c.batch_size);
  detail::get_enum(r, "update_rule", c.update_rule);
  r.get("learning_rate", c.learning_rate);
  r.get("momentum", c.momentum);
  r.get("clip_norm", c.clip_norm);
  r.get("lambda_distill", c.lambda_distill);
  r.get("lambda_contrastive", c.lambda_contrastive);
  r.get("discovered_weight", c.discovered_weight);
  r.get("seed", c.seed);
  r.finish();
  return c;
}

/// Loads and validates a config file. Any problem, including a missing file,
/// is reported as ConfigError naming the path.
inline TrainConfig load_train_config(const fs::path& path) {
  std::string text;
  try {
    text = detail::read_text(path);
  } catch (const IoError&) {
    throw ConfigError("cannot read config file " + path.string());
  }
  json j;
  try {
    j = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  TrainConfig c = train_config_from_json(j);
  c.validate();
  return c;
}

inline void save_train_config(const fs::path& path, const TrainConfig& c) { detail::write_json(path, to_json(c)); }

// ---------------------------------------------------------------------------
// Dataset directory

inline json to_json(const Vocabulary& v) {
  json seen = json::array();
  for (bool s : v.seen) seen.push_back(s);
  return {{"names", v.names}, {"seen", seen}};
}

inline Vocabulary vocabulary_from_json(const json& j) {
  Vocabulary v;
  try {
    v.names = j.at("names").get<std::vector<std::string>>();
    for (const json& s : j.at("seen")) v.seen.push_back(s.get<bool>());
  } catch (const json::exception& e) {
    throw IoError(std::string("vocabulary: ") + e.what());
  }
  v.validate();
  return v;
}

inline std::string encode_points(std::span<const Point> pts) {
  std::string buf;
  buf.reserve(pts.size() * 12);
  for (const Point& p : pts)
    for (float v : p) detail::put_le(buf, v);
  return buf;
}

inline std::vector<Point> decode_points(const std::string& buf, const std::string& what) {
  if (buf.size() % 12 != 0) throw IoError(what + ": size is not a multiple of 12 bytes");
  std::vector<Point> pts(buf.size() / 12);
  for (std::size_t i = 0; i < pts.size(); ++i)
    for (int a = 0; a < 3; ++a) pts[i][a] = detail::get_le<float>(buf.data() + i * 12 + a * 4);
  return pts;
}

inline json scene_objects_json(const Scene& s, const Vocabulary& vocab) {
  json objs = json::array();
  for (const SceneObject& o : s.objects) {
    json e = to_json(o.box);
    e["category"] = vocab.names.at(o.category_id);
    e["category_id"] = o.category_id;
    e["is_base"] = o.is_base;
    objs.push_back(e);
  }
  return {{"scene_id", s.scene_id}, {"intrinsics", to_json(s.intrinsics)}, {"objects", objs}};
}

/// Writes the dataset; the directory is created if needed and the output is
/// byte-identical for identical datasets.
inline void save_dataset(const fs::path& dir, const Dataset& ds) {
  std::error_code ec;
  fs::create_directories(dir / "scenes", ec);
  if (ec) throw IoError("cannot create " + (dir / "scenes").string() + ": " + ec.message());
  json index = json::array();
  auto put = [&](const Scene& s, const char* split) {
    const std::string bin = "scenes/" + s.scene_id + ".bin";
    const std::string obj = "scenes/" + s.scene_id + ".json";
    detail::write_text(dir / bin, encode_points(s.points));
    detail::write_json(dir / obj, scene_objects_json(s, ds.vocab));
    index.push_back({{"scene_id", s.scene_id},
                     {"split", split},
                     {"points", bin},
                     {"objects", obj},
                     {"num_points", s.points.size()},
                     {"num_objects", s.objects.size()}});
  };
  for (const Scene& s : ds.train) put(s, "train");
  for (const Scene& s : ds.val) put(s, "val");
  detail::write_json(dir / "manifest.json", {{"format", "coda-dataset"},
                                             {"version", kFormatVersion},
                                             {"vocabulary", to_json(ds.vocab)},
                                             {"world", to_json(ds.config)},
                                             {"scenes", index}});
}

inline Dataset load_dataset(const fs::path& dir) {
  const json m = detail::read_json(dir / "manifest.json");
  Dataset ds;
  try {
    if (m.at("format") != "coda-dataset") throw IoError("not a dataset manifest: " + (dir / "manifest.json").string());
    ds.vocab = vocabulary_from_json(m.at("vocabulary"));
    try {
      read_world(m.at("world"), ds.config, "manifest.world");
    } catch (const ConfigError& e) {
      throw IoError(e.what());
    }
    for (const json& e : m.at("scenes")) {
      Scene s;
      s.scene_id = e.at("scene_id").get<std::string>();
      const std::string bin = e.at("points").get<std::string>();
      s.points = decode_points(detail::read_text(dir / bin), bin);
      if (s.points.size() != e.at("num_points").get<std::size_t>()) throw IoError(bin + ": point count mismatch");
      const json o = detail::read_json(dir / e.at("objects").get<std::string>());
      try {
        read_camera(o.at("intrinsics"), s.intrinsics, s.scene_id + ".intrinsics");
      } catch (const ConfigError& ce) {
        throw IoError(ce.what());
      }
      for (const json& x : o.at("objects")) {
        SceneObject so;
        so.box = box_from_json(x);
        so.category_id = x.at("category_id").get<int>();
        so.is_base = x.at("is_base").get<bool>();
        if (so.category_id < 0 || static_cast<std::size_t>(so.category_id) >= ds.vocab.size() ||
            ds.vocab.names[so.category_id] != x.at("category").get<std::string>())
          throw IoError(s.scene_id + ": category does not match the vocabulary");
        s.objects.push_back(so);
      }
      const std::string split = e.at("split").get<std::string>();
      if (split == "train")
        ds.train.push_back(std::move(s));
      else if (split == "val")
        ds.val.push_back(std::move(s));
      else
        throw IoError("unknown split '" + split + "'");
    }
  } catch (const json::exception& e) {
    throw IoError((dir / "manifest.json").string() + ": " + e.what());
  }
  return ds;
}

// ---------------------------------------------------------------------------
// Text embeddings

inline json to_json(const TextEmbeddings& t) {
  json rows = json::array();
  for (std::size_t c = 0; c < t.size(); ++c) {
    const auto r = t.row(c);
    rows.push_back(std::vector<double>(r.begin(), r.end()));
  }
  return {{"names", t.names}, {"dim", t.dim}, {"rows", rows}, {"background", t.background}};
}

inline TextEmbeddings text_embeddings_from_json(const json& j) {
  TextEmbeddings t;
  try {
    t.names = j.at("names").get<std::vector<std::string>>();
    t.dim = j.at("dim").get<int>();
    for (const json& r : j.at("rows")) {
      const auto v = r.get<std::vector<double>>();
      if (v.size() != static_cast<std::size_t>(t.dim)) throw IoError("text embeddings: row length mismatch");
      t.rows.insert(t.rows.end(), v.begin(), v.end());
    }
    t.background = j.at("background").get<std::vector<double>>();
  } catch (const json::exception& e) {
    throw IoError(std::string("text embeddings: ") + e.what());
  }
  if (t.rows.size() != t.names.size() * static_cast<std::size_t>(t.dim))
    throw IoError("text embeddings: row count mismatch");
  return t;
}

// ---------------------------------------------------------------------------
// Label pool

inline json to_json(const PoolEntry& e, const Vocabulary& vocab) {
  json j = to_json(e.box);
  j["category"] = vocab.names.at(e.category_id);
  j["source"] = detail::enum_name(e.source);
  j["epoch"] = e.discovery_epoch;
  j["objectness"] = e.objectness;
  j["semantic"] = e.semantic;
  return j;
}

inline PoolEntry pool_entry_from_json(const json& j, const Vocabulary& vocab) {
  PoolEntry e;
  try {
    e.box = box_from_json(j);
    const std::string name = j.at("category").get<std::string>();
    const auto id = vocab.index_of(name);
    if (!id) throw IoError("pool: unknown category '" + name + "'");
    e.category_id = static_cast<int>(*id);
    e.source = detail::enum_from<EntrySource>(j.at("source").get<std::string>(), "pool.source");
    e.discovery_epoch = j.at("epoch").get<int>();
    e.objectness = j.at("objectness").get<double>();
    e.semantic = j.at("semantic").get<double>();
  } catch (const json::exception& ex) {
    throw IoError(std::string("pool: ") + ex.what());
  } catch (const ConfigError& ex) {
    throw IoError(ex.what());
  }
  return e;
}

inline json to_json(const LabelPool& pool, const Vocabulary& vocab) {
  json scenes = json::array();
  for (const auto& [id, e] : pool.scenes()) {
    json base = json::array(), novel = json::array();
    for (const auto& x : e.base) base.push_back(to_json(x, vocab));
    for (const auto& x : e.novel) novel.push_back(to_json(x, vocab));
    scenes.push_back({{"scene_id", id}, {"base", base}, {"novel", novel}});
  }
  return {{"format", "coda-pool"},
          {"version", kFormatVersion},
          {"base_size", pool.base_size()},
          {"novel_size", pool.novel_size()},
          {"scenes", scenes}};
}

inline LabelPool pool_from_json(const json& j, const Vocabulary& vocab) {
  LabelPool pool;
  try {
    if (j.at("format") != "coda-pool") throw IoError("not a label pool document");
    for (const json& s : j.at("scenes")) {
      LabelPool::SceneEntries e;
      for (const json& x : s.at("base")) e.base.push_back(pool_entry_from_json(x, vocab));
      for (const json& x : s.at("novel")) e.novel.push_back(pool_entry_from_json(x, vocab));
      pool.restore_scene(s.at("scene_id").get<std::string>(), std::move(e));
    }
  } catch (const json::exception& ex) {
    throw IoError(std::string("pool: ") + ex.what());
  }
  return pool;
}

inline void save_pool(const fs::path& path, const LabelPool& pool, const Vocabulary& vocab) {
  detail::write_json(path, to_json(pool, vocab));
}

inline LabelPool load_pool(const fs::path& path, const Vocabulary& vocab) {
  return pool_from_json(detail::read_json(path), vocab);
}

// ---------------------------------------------------------------------------
// Checkpoint

struct Checkpoint {
  DetectorParams params;
  Optimizer optimizer;
  int epoch = 0;

  friend bool operator==(const Checkpoint&, const Checkpoint&) = default;
};

inline void save_checkpoint(const fs::path& path, const Checkpoint& ck) {
  const DetectorLayout L(ck.params.config);
  if (ck.params.values.size() != L.total) throw Error("checkpoint: parameter count does not match the layout");
  json segs = json::array();
  for (const auto& s : L.segments)
    segs.push_back({{"name", s.name}, {"head", s.head}, {"offset", s.offset}, {"size", s.size}});
  const Optimizer& o = ck.optimizer;
  const json header = {{"format", "coda-checkpoint"},
                       {"version", kFormatVersion},
                       {"detector", to_json(ck.params.config)},
                       {"segments", segs},
                       {"num_params", L.total},
                       {"epoch", ck.epoch},
                       {"optimizer",
                        {{"rule", detail::enum_name(o.rule)},
                         {"learning_rate", o.learning_rate},
                         {"momentum", o.momentum},
                         {"beta2", o.beta2},
                         {"epsilon", o.epsilon},
                         {"clip_norm", o.clip_norm},
                         {"steps", o.steps},
                         {"velocity", o.velocity.size()},
                         {"second", o.second.size()}}}};
  std::string buf = header.dump() + "\n";
  for (const auto* v : {&ck.params.values, &o.velocity, &o.second})
    for (double x : *v) detail::put_le(buf, x);
  detail::write_text(path, buf);
}

inline Checkpoint load_checkpoint(const fs::path& path) {
  const std::string buf = detail::read_text(path);
  const auto nl = buf.find('\n');
  if (nl == std::string::npos) throw IoError(path.string() + ": missing checkpoint header");
  const json h = detail::parse(buf.substr(0, nl), path.string());
  Checkpoint ck;
  try {
    if (h.at("format") != "coda-checkpoint") throw IoError(path.string() + ": not a checkpoint");
    try {
      read_detector(h.at("detector"), ck.params.config, "checkpoint.detector");
    } catch (const ConfigError& e) {
      throw IoError(e.what());
    }
    const DetectorLayout L(ck.params.config);
    const auto n = h.at("num_params").get<std::size_t>();
    if (n != L.total) throw IoError(path.string() + ": parameter count does not match the layout");
    const json& o = h.at("optimizer");
    ck.optimizer.rule = detail::enum_from<UpdateRule>(o.at("rule").get<std::string>(), "checkpoint.optimizer.rule");
    ck.optimizer.learning_rate = o.at("learning_rate").get<double>();
    ck.optimizer.momentum = o.at("momentum").get<double>();
    ck.optimizer.beta2 = o.at("beta2").get<double>();
    ck.optimizer.epsilon = o.at("epsilon").get<double>();
    ck.optimizer.clip_norm = o.at("clip_norm").get<double>();
    ck.optimizer.steps = o.at("steps").get<std::int64_t>();
    ck.epoch = h.at("epoch").get<int>();
    const auto nv = o.at("velocity").get<std::size_t>();
    const auto ns = o.at("second").get<std::size_t>();
    if (buf.size() - nl - 1 != 8 * (n + nv + ns)) throw IoError(path.string() + ": truncated checkpoint body");
    const char* p = buf.data() + nl + 1;
    auto take = [&](std::vector<double>& v, std::size_t count) {
      v.resize(count);
      for (std::size_t i = 0; i < count; ++i, p += 8) v[i] = detail::get_le<double>(p);
    };
    take(ck.params.values, n);
    take(ck.optimizer.velocity, nv);
    take(ck.optimizer.second, ns);
  } catch (const json::exception& e) {
    throw IoError(path.string() + ": " + e.what());
  } catch (const ConfigError& e) {
    throw IoError(e.what());
  }
  return ck;
}

// ---------------------------------------------------------------------------
// Metrics CSV

inline constexpr const char* kMetricsHeader = "epoch,AP_Novel,AP_Base,AP_Mean,AR_Novel,AR_Base,AR_Mean,pool_size";

inline std::string metrics_line(const MetricsRow& r) {
  char buf[256];
  std::snprintf(buf, sizeof buf, "%d,%.4f,%.4f,%.4f,%.4f,%.4f,%.4f,%zu\n", r.epoch, 100.0 * r.ap_novel,
                100.0 * r.ap_base, 100.0 * r.ap_mean, 100.0 * r.ar_novel, 100.0 * r.ar_base, 100.0 * r.ar_mean,
                r.pool_size);
  return buf;
}

/// Appends one complete line per row and flushes it, so an interrupted run
/// leaves only whole rows behind.
class MetricsWriter {
 public:
  explicit MetricsWriter(const fs::path& path) : out_(path, std::ios::binary | std::ios::trunc) {
    if (!out_) throw IoError("cannot write " + path.string());
    out_ << kMetricsHeader << '\n' << std::flush;
  }

  void append(const MetricsRow& r) {
    out_ << metrics_line(r) << std::flush;
    if (!out_) throw IoError("metrics write failed");
  }

 private:
  std::ofstream out_;
};

/// Parsed rows (values as written, x100). A trailing partial line is ignored.
inline std::vector<MetricsRow> read_metrics_csv(const fs::path& path) {
  std::string text;
  try {
    text = detail::read_text(path);
  } catch (const IoError&) {
    throw MissingMetrics("no metrics file at " + path.string());
  }
  std::vector<MetricsRow> rows;
  std::size_t pos = 0;
  bool header = true;
  while (pos < text.size()) {
    const auto nl = text.find('\n', pos);
    if (nl == std::string::npos) break;
    const std::string line = text.substr(pos, nl - pos);
    pos = nl + 1;
    if (header) {
      if (line != kMetricsHeader) throw IoError(path.string() + ": unexpected header");
      header = false;
      continue;
    }
    if (line.empty()) continue;
    MetricsRow r;
    if (std::sscanf(line.c_str(), "%d,%lf,%lf,%lf,%lf,%lf,%lf,%zu", &r.epoch, &r.ap_novel, &r.ap_base, &r.ap_mean,
                    &r.ar_novel, &r.ar_base, &r.ar_mean, &r.pool_size) != 8)
      throw IoError(path.string() + ": malformed row '" + line + "'");
    rows.push_back(r);
  }
  if (rows.empty()) throw MissingMetrics(path.string() + " has no metrics rows");
  return rows;
}

// ---------------------------------------------------------------------------
// Run manifest

struct RunManifest {
  std::string command;
  std::string config_path;
  std::string dataset;
  std::uint64_t seed = 0;
  std::string out_dir;
  std::string version;
  std::vector<std::string> argv;
};

inline json to_json(const RunManifest& m) {
  return {{"command", m.command}, {"config", m.config_path}, {"dataset", m.dataset}, {"seed", m.seed},
          {"out", m.out_dir},     {"version", m.version},    {"argv", m.argv}};
}

inline RunManifest run_manifest_from_json(const json& j) {
  RunManifest m;
  try {
    m.command = j.at("command").get<std::string>();
    m.config_path = j.at("config").get<std::string>();
    m.dataset = j.at("dataset").get<std::string>();
    m.seed = j.at("seed").get<std::uint64_t>();
    m.out_dir = j.at("out").get<std::string>();
    m.version = j.at("version").get<std::string>();
    m.argv = j.at("argv").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    throw IoError(std::string("run manifest: ") + e.what());
  }
  return m;
}

inline void save_run_manifest(const fs::path& path, const RunManifest& m) { detail::write_json(path, to_json(m)); }

}  // namespace coda::io
