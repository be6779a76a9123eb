#pragma once

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "more/depthprior.hpp"
#include "more/error.hpp"
#include "more/eval/metrics.hpp"
#include "more/linalg/rotation.hpp"
#include "more/losses.hpp"
#include "more/stability.hpp"
#include "more/synth.hpp"
#include "more/train.hpp"

namespace more::config {

using Json = nlohmann::ordered_json;

inline constexpr int kSchemaVersion = 1;

struct EvalOptions {
  double alpha = depthprior::kDefaultAlpha;
  double tau = depthprior::kDefaultTau;
  std::size_t icp_max_iters = 50;
  double icp_tol = 1e-6;
  bool with_scale = true;
  std::size_t keyframe_stride = 1;
  eval::DepthAlignment depth_alignment = eval::DepthAlignment::median_scale;
  double pose_threshold_deg = 30.0;
  int auc_max_deg = 30;
  std::size_t rpe_stride = 1;
};

/// Everything a run needs; every key is optional in the file and unknown keys
/// are rejected.
struct RunConfig {
  std::uint64_t seed = 0;
  losses::LossWeights weights;
  train::TaskConfig task;
  train::MoeConfig moe;
  train::ScheduleConfig schedule;
  bool clip = true;
  stability::ClipperConfig clipper;
  EvalOptions eval;

  train::ToyConfig toy() const {
    train::ToyConfig t;
    t.seed = seed;
    t.task = task;
    t.moe = moe;
    t.schedule = schedule;
    t.lambda_moe = weights.moe;
    t.clip = clip;
    t.clipper = clipper;
    return t;
  }

  void validate() const {
    try {
      weights.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
    toy().validate();
    if (!(eval.alpha > 0.0)) throw ConfigError("eval.alpha must be positive");
    if (!(eval.tau > 0.0)) throw ConfigError("eval.tau must be positive");
    if (eval.icp_max_iters == 0) throw ConfigError("eval.icp_max_iters must be positive");
    if (!(eval.icp_tol >= 0.0)) throw ConfigError("eval.icp_tol must be nonnegative");
    if (eval.keyframe_stride == 0) throw ConfigError("eval.keyframe_stride must be positive");
    if (!(eval.pose_threshold_deg > 0.0)) throw ConfigError("eval.pose_threshold_deg must be positive");
    if (eval.auc_max_deg < 1) throw ConfigError("eval.auc_max_deg must be >= 1");
    if (eval.rpe_stride == 0) throw ConfigError("eval.rpe_stride must be positive");
  }
};

namespace detail {

inline void reject_unknown(const Json& obj, std::initializer_list<std::string_view> allowed, const std::string& where) {
  if (!obj.is_object()) throw ConfigError(where + ": expected an object");
  for (const auto& [key, _] : obj.items()) {
    bool ok = false;
    for (auto a : allowed) ok = ok || key == a;
    if (!ok) throw ConfigError(where + ": unknown key '" + key + "'");
  }
}

template <class T>
void read(const Json& obj, const char* key, T& out, const std::string& where) {
  if (!obj.contains(key)) return;
  const Json& v = obj.at(key);
  try {
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) throw ConfigError(where + "." + key + ": expected a boolean");
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) throw ConfigError(where + "." + key + ": expected an integer");
      if constexpr (std::is_unsigned_v<T>)
        if (v.is_number_integer() && !v.is_number_unsigned()) throw ConfigError(where + "." + key + ": must be nonnegative");
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) throw ConfigError(where + "." + key + ": expected a number");
    } else {
      if (!v.is_string()) throw ConfigError(where + "." + key + ": expected a string");
    }
    out = v.get<T>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(where + "." + key + ": " + e.what());
  }
}

inline Vec3 read_vec3(const Json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 3) throw ConfigError(where + ": expected an array of 3 numbers");
  Vec3 out;
  for (int i = 0; i < 3; ++i) {
    if (!v[i].is_number()) throw ConfigError(where + ": expected an array of 3 numbers");
    out[i] = v[i].get<double>();
  }
  return out;
}

inline Rotation read_quat(const Json& v, const std::string& where) {
  if (!v.is_array() || v.size() != 4) throw ConfigError(where + ": expected [w, x, y, z]");
  double q[4];
  for (int i = 0; i < 4; ++i) {
    if (!v[i].is_number()) throw ConfigError(where + ": expected [w, x, y, z]");
    q[i] = v[i].get<double>();
  }
  try {
    return Rotation(q[0], q[1], q[2], q[3]);
  } catch (const InvalidArgument& e) {
    throw ConfigError(where + ": " + e.what());
  }
}

inline Json vec_json(const Vec3& v) { return Json::array({v.x, v.y, v.z}); }
inline Json quat_json(const Rotation& r) { return Json::array({r.w(), r.x(), r.y(), r.z()}); }

inline void check_schema(const Json& j, const std::string& what) {
  if (!j.contains("schema_version")) throw ConfigError(what + ": missing schema_version");
  const Json& v = j.at("schema_version");
  if (!v.is_number_integer() || v.get<int>() != kSchemaVersion)
    throw ConfigError(what + ": unsupported schema_version (expected " + std::to_string(kSchemaVersion) + ")");
}

inline Json parse_text(const std::string& text, const std::string& what) {
  try {
    return Json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError(what + ": " + e.what());
  }
}

}  // namespace detail

inline std::string to_string(eval::DepthAlignment a) { return a == eval::DepthAlignment::none ? "none" : "median_scale"; }

inline eval::DepthAlignment depth_alignment_from_string(const std::string& s) {
  if (s == "none") return eval::DepthAlignment::none;
  if (s == "median_scale") return eval::DepthAlignment::median_scale;
  throw ConfigError("eval.depth_alignment: expected 'none' or 'median_scale', got '" + s + "'");
}

inline Json to_json(const RunConfig& c) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["seed"] = c.seed;
  j["loss_weights"] = {{"track", c.weights.track},
                       {"moe", c.weights.moe},
                       {"pts_local", c.weights.pts_local},
                       {"pts_n", c.weights.pts_n},
                       {"normal", c.weights.normal}};
  j["task"] = {{"domains", c.task.domains},
               {"dim", c.task.dim},
               {"out_dim", c.task.out_dim},
               {"center_scale", c.task.center_scale},
               {"spread", c.task.spread},
               {"tokens", c.task.tokens}};
  j["moe"] = {{"experts", c.moe.experts},
              {"k", c.moe.k},
              {"hidden", c.moe.hidden},
              {"jitter", c.moe.jitter},
              {"renormalize", c.moe.renormalize}};
  j["train"] = {{"steps", c.schedule.steps},
                {"stage1_fraction", c.schedule.stage1_fraction},
                {"learning_rate", c.schedule.learning_rate},
                {"log_every", c.schedule.log_every},
                {"clip", c.clip}};
  j["clipper"] = {{"capacity", c.clipper.capacity}, {"k", c.clipper.k}, {"warmup", c.clipper.warmup}};
  j["eval"] = {{"alpha", c.eval.alpha},
               {"tau", c.eval.tau},
               {"icp_max_iters", c.eval.icp_max_iters},
               {"icp_tol", c.eval.icp_tol},
               {"with_scale", c.eval.with_scale},
               {"keyframe_stride", c.eval.keyframe_stride},
               {"depth_alignment", to_string(c.eval.depth_alignment)},
               {"pose_threshold_deg", c.eval.pose_threshold_deg},
               {"auc_max_deg", c.eval.auc_max_deg},
               {"rpe_stride", c.eval.rpe_stride}};
  return j;
}

inline RunConfig run_config_from_json(const Json& j) {
  using detail::read;
  detail::reject_unknown(j, {"schema_version", "seed", "loss_weights", "task", "moe", "train", "clipper", "eval"}, "config");
  detail::check_schema(j, "config");
  RunConfig c;
  read(j, "seed", c.seed, "config");
  if (j.contains("loss_weights")) {
    const Json& w = j.at("loss_weights");
    detail::reject_unknown(w, {"track", "moe", "pts_local", "pts_n", "normal"}, "loss_weights");
    read(w, "track", c.weights.track, "loss_weights");
    read(w, "moe", c.weights.moe, "loss_weights");
    read(w, "pts_local", c.weights.pts_local, "loss_weights");
    read(w, "pts_n", c.weights.pts_n, "loss_weights");
    read(w, "normal", c.weights.normal, "loss_weights");
  }
  if (j.contains("task")) {
    const Json& t = j.at("task");
    detail::reject_unknown(t, {"domains", "dim", "out_dim", "center_scale", "spread", "tokens"}, "task");
    read(t, "domains", c.task.domains, "task");
    read(t, "dim", c.task.dim, "task");
    read(t, "out_dim", c.task.out_dim, "task");
    read(t, "center_scale", c.task.center_scale, "task");
    read(t, "spread", c.task.spread, "task");
    read(t, "tokens", c.task.tokens, "task");
  }
  if (j.contains("moe")) {
    const Json& m = j.at("moe");
    detail::reject_unknown(m, {"experts", "k", "hidden", "jitter", "renormalize"}, "moe");
    read(m, "experts", c.moe.experts, "moe");
    read(m, "k", c.moe.k, "moe");
    read(m, "hidden", c.moe.hidden, "moe");
    read(m, "jitter", c.moe.jitter, "moe");
    read(m, "renormalize", c.moe.renormalize, "moe");
  }
  if (j.contains("train")) {
    const Json& t = j.at("train");
    detail::reject_unknown(t, {"steps", "stage1_fraction", "learning_rate", "log_every", "clip"}, "train");
    read(t, "steps", c.schedule.steps, "train");
    read(t, "stage1_fraction", c.schedule.stage1_fraction, "train");
    read(t, "learning_rate", c.schedule.learning_rate, "train");
    read(t, "log_every", c.schedule.log_every, "train");
    read(t, "clip", c.clip, "train");
  }
  if (j.contains("clipper")) {
    const Json& k = j.at("clipper");
    detail::reject_unknown(k, {"capacity", "k", "warmup"}, "clipper");
    read(k, "capacity", c.clipper.capacity, "clipper");
    read(k, "k", c.clipper.k, "clipper");
    read(k, "warmup", c.clipper.warmup, "clipper");
  }
  if (j.contains("eval")) {
    const Json& e = j.at("eval");
    detail::reject_unknown(e,
                           {"alpha", "tau", "icp_max_iters", "icp_tol", "with_scale", "keyframe_stride",
                            "depth_alignment", "pose_threshold_deg", "auc_max_deg", "rpe_stride"},
                           "eval");
    read(e, "alpha", c.eval.alpha, "eval");
    read(e, "tau", c.eval.tau, "eval");
    read(e, "icp_max_iters", c.eval.icp_max_iters, "eval");
    read(e, "icp_tol", c.eval.icp_tol, "eval");
    read(e, "with_scale", c.eval.with_scale, "eval");
    read(e, "keyframe_stride", c.eval.keyframe_stride, "eval");
    std::string align = to_string(c.eval.depth_alignment);
    read(e, "depth_alignment", align, "eval");
    c.eval.depth_alignment = depth_alignment_from_string(align);
    read(e, "pose_threshold_deg", c.eval.pose_threshold_deg, "eval");
    read(e, "auc_max_deg", c.eval.auc_max_deg, "eval");
    read(e, "rpe_stride", c.eval.rpe_stride, "eval");
  }
  c.validate();
  return c;
}

inline RunConfig parse_run_config(const std::string& text) {
  return run_config_from_json(detail::parse_text(text, "config"));
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open for reading: " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline RunConfig load_run_config(const std::filesystem::path& path) { return parse_run_config(read_text(path)); }

// ---------------------------------------------------------------------------
// Scene description
// ---------------------------------------------------------------------------

inline Json to_json(const synth::Scene& s) {
  Json j;
  j["schema_version"] = kSchemaVersion;
  j["height"] = s.height;
  j["width"] = s.width;
  Json surfaces = Json::array();
  for (const auto& surf : s.surfaces) {
    std::visit(
        [&](const auto& p) {
          using T = std::decay_t<decltype(p)>;
          if constexpr (std::is_same_v<T, synth::Plane>)
            surfaces.push_back({{"type", "plane"}, {"point", detail::vec_json(p.point)}, {"normal", detail::vec_json(p.normal)}});
          else if constexpr (std::is_same_v<T, synth::Sphere>)
            surfaces.push_back({{"type", "sphere"}, {"center", detail::vec_json(p.center)}, {"radius", p.radius}});
          else
            surfaces.push_back({{"type", "box"},
                                {"center", detail::vec_json(p.center)},
                                {"half_extents", detail::vec_json(p.half_extents)},
                                {"rotation", detail::quat_json(p.rotation)}});
        },
        surf);
  }
  j["surfaces"] = std::move(surfaces);
  Json cams = Json::array();
  for (const auto& c : s.cameras)
    cams.push_back({{"rotation", detail::quat_json(c.rotation)},
                    {"translation", detail::vec_json(c.translation)},
                    {"fx", c.fx},
                    {"fy", c.fy}});
  j["cameras"] = std::move(cams);
  return j;
}

inline synth::Scene scene_from_json(const Json& j) {
  using detail::read;
  detail::reject_unknown(j, {"schema_version", "height", "width", "surfaces", "cameras"}, "scene");
  detail::check_schema(j, "scene");
  synth::Scene s;
  if (!j.contains("height") || !j.contains("width")) throw ConfigError("scene: height and width are required");
  read(j, "height", s.height, "scene");
  read(j, "width", s.width, "scene");
  if (!j.contains("surfaces") || !j.at("surfaces").is_array()) throw ConfigError("scene: 'surfaces' must be an array");
  std::size_t idx = 0;
  for (const Json& sj : j.at("surfaces")) {
    const std::string where = "surfaces[" + std::to_string(idx++) + "]";
    if (!sj.is_object() || !sj.contains("type") || !sj.at("type").is_string()) throw ConfigError(where + ": missing type");
    const std::string type = sj.at("type").get<std::string>();
    auto need = [&](const char* key) -> const Json& {
      if (!sj.contains(key)) throw ConfigError(where + ": missing '" + key + "'");
      return sj.at(key);
    };
    if (type == "plane") {
      detail::reject_unknown(sj, {"type", "point", "normal"}, where);
      s.surfaces.push_back(synth::Plane{detail::read_vec3(need("point"), where + ".point"),
                                        detail::read_vec3(need("normal"), where + ".normal")});
    } else if (type == "sphere") {
      detail::reject_unknown(sj, {"type", "center", "radius"}, where);
      synth::Sphere sp;
      sp.center = detail::read_vec3(need("center"), where + ".center");
      read(sj, "radius", sp.radius, where);
      s.surfaces.push_back(sp);
    } else if (type == "box") {
      detail::reject_unknown(sj, {"type", "center", "half_extents", "rotation"}, where);
      synth::Box b;
      b.center = detail::read_vec3(need("center"), where + ".center");
      if (sj.contains("half_extents")) b.half_extents = detail::read_vec3(sj.at("half_extents"), where + ".half_extents");
      if (sj.contains("rotation")) b.rotation = detail::read_quat(sj.at("rotation"), where + ".rotation");
      s.surfaces.push_back(b);
    } else {
      throw ConfigError(where + ": unknown surface type '" + type + "'");
    }
  }
  if (!j.contains("cameras") || !j.at("cameras").is_array()) throw ConfigError("scene: 'cameras' must be an array");
  idx = 0;
  for (const Json& cj : j.at("cameras")) {
    const std::string where = "cameras[" + std::to_string(idx++) + "]";
    detail::reject_unknown(cj, {"rotation", "translation", "fx", "fy"}, where);
    if (!cj.contains("rotation") || !cj.contains("translation")) throw ConfigError(where + ": rotation and translation are required");
    synth::CameraParams c{detail::read_quat(cj.at("rotation"), where + ".rotation"),
                          detail::read_vec3(cj.at("translation"), where + ".translation")};
    read(cj, "fx", c.fx, where);
    read(cj, "fy", c.fy, where);
    s.cameras.push_back(c);
  }
  try {
    s.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError(e.what());
  }
  return s;
}

inline synth::Scene parse_scene(const std::string& text) { return scene_from_json(detail::parse_text(text, "scene")); }
inline synth::Scene load_scene(const std::filesystem::path& path) { return parse_scene(read_text(path)); }

}  // namespace more::config
