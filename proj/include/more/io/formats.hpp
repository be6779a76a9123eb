#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "more/depthprior.hpp"
#include "more/error.hpp"
#include "more/io/tensor_file.hpp"
#include "more/linalg/rotation.hpp"
#include "more/maps.hpp"
#include "more/moe.hpp"
#include "more/synth.hpp"

namespace more::io {

// Map files store invalid pixels as NaN:
//   depth    f64 [H, W]
//   points   f64 [H, W, 3]
//   normals  f64 [H, W, 3]
//   mask     u8  [H, W]
//   trajectory  f64 [N, 7]  (qw qx qy qz tx ty tz, camera-to-world)
//   cameras     f64 [N, 9]  (qw qx qy qz tx ty tz fx fy)

inline Tensor depth_to_tensor(const DepthMap& d) {
  std::vector<double> v(d.size());
  for (std::size_t f = 0; f < d.size(); ++f)
    v[f] = d.valid(f) ? d[f] : std::numeric_limits<double>::quiet_NaN();
  return Tensor::from_f64({d.height(), d.width()}, v);
}

inline DepthMap depth_from_tensor(const Tensor& t) {
  if (t.dims.size() != 2) throw FormatError("depth tensor must have rank 2");
  const auto v = t.to_f64();
  DepthMap d(t.dims[0], t.dims[1]);
  for (std::size_t f = 0; f < v.size(); ++f)
    if (std::isfinite(v[f])) d.set(f / d.width(), f % d.width(), v[f]);
  return d;
}

inline Tensor vec3_grid_to_tensor(const MaskedGrid<Vec3>& g) {
  std::vector<double> v(g.size() * 3, std::numeric_limits<double>::quiet_NaN());
  for (std::size_t f = 0; f < g.size(); ++f)
    if (g.valid(f))
      for (int c = 0; c < 3; ++c) v[3 * f + c] = g[f][c];
  return Tensor::from_f64({g.height(), g.width(), 3}, v);
}

inline MaskedGrid<Vec3> vec3_grid_from_tensor(const Tensor& t) {
  if (t.dims.size() != 3 || t.dims[2] != 3) throw FormatError("point/normal tensor must have shape [H, W, 3]");
  const auto v = t.to_f64();
  MaskedGrid<Vec3> g(t.dims[0], t.dims[1]);
  for (std::size_t f = 0; f < g.size(); ++f) {
    const Vec3 p{v[3 * f], v[3 * f + 1], v[3 * f + 2]};
    if (is_finite(p)) g.set(f / g.width(), f % g.width(), p);
  }
  return g;
}

inline Tensor mask_to_tensor(const depthprior::ConfidenceMask& m) { return Tensor::from_u8({m.height, m.width}, m.mask); }

inline Tensor trajectory_to_tensor(std::span<const Pose> traj) {
  std::vector<double> v;
  for (const auto& p : traj) {
    const auto& r = p.rotation;
    v.insert(v.end(), {r.w(), r.x(), r.y(), r.z(), p.translation.x, p.translation.y, p.translation.z});
  }
  return Tensor::from_f64({traj.size(), 7}, v);
}

inline std::vector<Pose> trajectory_from_tensor(const Tensor& t) {
  if (t.dims.size() != 2 || t.dims[1] != 7) throw FormatError("trajectory tensor must have shape [N, 7]");
  const auto v = t.to_f64();
  std::vector<Pose> out;
  for (std::size_t i = 0; i < t.dims[0]; ++i) {
    const double* r = v.data() + 7 * i;
    out.push_back({Rotation(r[0], r[1], r[2], r[3]), {r[4], r[5], r[6]}});
  }
  return out;
}

inline Tensor cameras_to_tensor(std::span<const synth::CameraParams> cams) {
  std::vector<double> v;
  for (const auto& c : cams) {
    const auto a = c.to_vector();
    v.insert(v.end(), a.begin(), a.end());
  }
  return Tensor::from_f64({cams.size(), 9}, v);
}

inline std::vector<synth::CameraParams> cameras_from_tensor(const Tensor& t) {
  if (t.dims.size() != 2 || t.dims[1] != 9) throw FormatError("camera tensor must have shape [N, 9]");
  const auto v = t.to_f64();
  std::vector<synth::CameraParams> out;
  for (std::size_t i = 0; i < t.dims[0]; ++i) out.push_back(synth::CameraParams::from_vector(std::span<const double, 9>(v.data() + 9 * i, 9)));
  return out;
}

/// ASCII PLY with optional per-vertex normals.
inline void write_ply(const std::filesystem::path& path, std::span<const Vec3> points, std::span<const Vec3> normals = {}) {
  if (!normals.empty() && normals.size() != points.size()) throw InvalidArgument("ply: normal count mismatch");
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f << "ply\nformat ascii 1.0\nelement vertex " << points.size() << "\nproperty double x\nproperty double y\nproperty double z\n";
  if (!normals.empty()) f << "property double nx\nproperty double ny\nproperty double nz\n";
  f << "end_header\n";
  f.precision(17);
  for (std::size_t i = 0; i < points.size(); ++i) {
    f << points[i].x << ' ' << points[i].y << ' ' << points[i].z;
    if (!normals.empty()) f << ' ' << normals[i].x << ' ' << normals[i].y << ' ' << normals[i].z;
    f << '\n';
  }
  if (!f) throw IoError("write failed: " + path.string());
}

/// Binary 8-bit PGM (P5); mask-true pixels are 255.
inline void write_pgm(const std::filesystem::path& path, const depthprior::ConfidenceMask& m) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open for writing: " + path.string());
  f << "P5\n" << m.width << ' ' << m.height << "\n255\n";
  for (auto v : m.mask) f.put(static_cast<char>(v ? 255 : 0));
  if (!f) throw IoError("write failed: " + path.string());
}

// ---------------------------------------------------------------------------
// MoE layer parameters: a directory holding manifest.json plus one tensor per
// parameter (router.mrtf, expert<i>_{w1,b1,w2,b2}.mrtf).
// ---------------------------------------------------------------------------

inline void save_moe_layer(const std::filesystem::path& dir, const moe::MoeLayer& layer) {
  layer.validate();
  std::filesystem::create_directories(dir);
  nlohmann::ordered_json manifest;
  manifest["format"] = "moe-layer";
  manifest["version"] = 1;
  manifest["experts"] = layer.num_experts();
  manifest["k"] = layer.k;
  manifest["dim"] = layer.dim();
  manifest["hidden"] = layer.hidden();
  manifest["renormalize"] = layer.renormalize;
  save_tensor(dir / "router.mrtf", Tensor::from_f64({layer.num_experts(), layer.dim()}, layer.router.weight.data()));
  for (std::size_t e = 0; e < layer.num_experts(); ++e) {
    const auto& ex = layer.experts[e];
    const std::string p = "expert" + std::to_string(e) + "_";
    save_tensor(dir / (p + "w1.mrtf"), Tensor::from_f64({ex.hidden(), ex.dim()}, ex.w1.data()));
    save_tensor(dir / (p + "b1.mrtf"), Tensor::from_f64({ex.hidden()}, ex.b1));
    save_tensor(dir / (p + "w2.mrtf"), Tensor::from_f64({ex.dim(), ex.hidden()}, ex.w2.data()));
    save_tensor(dir / (p + "b2.mrtf"), Tensor::from_f64({ex.dim()}, ex.b2));
  }
  std::ofstream f(dir / "manifest.json");
  if (!f) throw IoError("cannot write manifest in " + dir.string());
  f << manifest.dump(2) << '\n';
}

inline moe::MoeLayer load_moe_layer(const std::filesystem::path& dir) {
  std::ifstream f(dir / "manifest.json");
  if (!f) throw IoError("cannot read manifest in " + dir.string());
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(f);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("moe manifest: ") + e.what());
  }
  const auto E = m.at("experts").get<std::size_t>();
  const auto d = m.at("dim").get<std::size_t>();
  const auto h = m.at("hidden").get<std::size_t>();
  auto load = [&](const std::string& name, std::vector<std::uint64_t> dims) {
    const Tensor t = load_tensor(dir / name);
    if (t.dims != dims) throw FormatError("moe: " + name + " has unexpected shape");
    return t.to_f64();
  };
  moe::MoeLayer layer;
  layer.k = m.at("k").get<std::size_t>();
  layer.renormalize = m.value("renormalize", false);
  layer.router.weight = Matrix(E, d, load("router.mrtf", {E, d}));
  for (std::size_t e = 0; e < E; ++e) {
    const std::string p = "expert" + std::to_string(e) + "_";
    layer.experts.push_back({Matrix(h, d, load(p + "w1.mrtf", {h, d})), load(p + "b1.mrtf", {h}),
                             Matrix(d, h, load(p + "w2.mrtf", {d, h})), load(p + "b2.mrtf", {d})});
  }
  layer.validate();
  return layer;
}

}  // namespace more::io
