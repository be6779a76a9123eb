#pragma once

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "more/error.hpp"
#include "more/linalg/matrix.hpp"
#include "more/linalg/rotation.hpp"
#include "more/maps.hpp"

namespace more::synth {

/// Pinhole camera: camera-to-world rotation (4) + camera centre (3) + focal
/// lengths in pixels (2). The principal point is the image centre.
struct CameraParams {
  Rotation rotation;
  Vec3 translation;
  double fx = 1.0;
  double fy = 1.0;

  Pose pose() const { return {rotation, translation}; }

  std::array<double, 9> to_vector() const {
    return {rotation.w(), rotation.x(), rotation.y(), rotation.z(), translation.x, translation.y, translation.z, fx, fy};
  }

  static CameraParams from_vector(std::span<const double, 9> v) {
    CameraParams c{Rotation(v[0], v[1], v[2], v[3]), {v[4], v[5], v[6]}, v[7], v[8]};
    c.validate();
    return c;
  }

  void validate() const {
    if (!(fx > 0.0) || !(fy > 0.0) || !std::isfinite(fx) || !std::isfinite(fy))
      throw InvalidArgument("camera: focal lengths must be positive");
    if (!is_finite(translation)) throw InvalidArgument("camera: non-finite translation");
  }
};

/// Camera at `eye` looking at `target`; image y points along `down` (projected).
inline Rotation look_at(const Vec3& eye, const Vec3& target, const Vec3& down = {0.0, 1.0, 0.0}) {
  const Vec3 z = normalized(target - eye);
  const Vec3 x = normalized(cross(down, z));
  const Vec3 y = cross(z, x);
  return Rotation::from_matrix(Mat3::from_columns(x, y, z));
}

struct Plane {
  Vec3 point;
  Vec3 normal;
};

struct Sphere {
  Vec3 center;
  double radius = 1.0;
};

struct Box {
  Vec3 center;
  Vec3 half_extents{0.5, 0.5, 0.5};
  Rotation rotation;  // box-to-world
};

using Surface = std::variant<Plane, Sphere, Box>;

struct Scene {
  std::vector<Surface> surfaces;
  std::vector<CameraParams> cameras;
  std::size_t height = 0;
  std::size_t width = 0;

  void validate() const {
    if (height < 2 || width < 2) throw InvalidArgument("scene: resolution must be at least 2x2");
    if (surfaces.empty()) throw InvalidArgument("scene: no surfaces");
    if (cameras.empty()) throw InvalidArgument("scene: no cameras");
    for (const auto& c : cameras) c.validate();
    for (const auto& s : surfaces) {
      if (const auto* sp = std::get_if<Sphere>(&s); sp && !(sp->radius > 0.0))
        throw InvalidArgument("scene: sphere radius must be positive");
      if (const auto* pl = std::get_if<Plane>(&s); pl && !(norm(pl->normal) > 0.0))
        throw InvalidArgument("scene: plane normal must be nonzero");
      if (const auto* bx = std::get_if<Box>(&s);
          bx && !(bx->half_extents.x > 0.0 && bx->half_extents.y > 0.0 && bx->half_extents.z > 0.0))
        throw InvalidArgument("scene: box extents must be positive");
    }
  }
};

struct RenderOutput {
  DepthMap depth;
  PointMap points;    // camera frame
  NormalMap normals;  // camera frame, facing the camera
};

namespace detail {

struct Hit {
  double t = std::numeric_limits<double>::infinity();
  Vec3 normal;  // world frame, not yet oriented
};

inline constexpr double kMinHit = 1e-9;

inline Hit intersect(const Plane& p, const Vec3& o, const Vec3& d) {
  const double den = dot(p.normal, d);
  if (den == 0.0) return {};
  const double t = dot(p.normal, p.point - o) / den;
  if (!(t > kMinHit)) return {};
  return {t, normalized(p.normal)};
}

inline Hit intersect(const Sphere& s, const Vec3& o, const Vec3& d) {
  const Vec3 oc = o - s.center;
  const double a = dot(d, d);
  const double b = dot(oc, d);
  const double c = dot(oc, oc) - s.radius * s.radius;
  const double disc = b * b - a * c;
  if (disc < 0.0) return {};
  const double sq = std::sqrt(disc);
  double t = (-b - sq) / a;
  if (!(t > kMinHit)) t = (-b + sq) / a;
  if (!(t > kMinHit)) return {};
  return {t, normalized(oc + t * d)};
}

inline Hit intersect(const Box& b, const Vec3& o, const Vec3& d) {
  const Rotation inv = b.rotation.inverse();
  const Vec3 lo = inv.rotate(o - b.center);
  const Vec3 ld = inv.rotate(d);
  double tnear = -std::numeric_limits<double>::infinity(), tfar = std::numeric_limits<double>::infinity();
  int near_axis = -1, far_axis = -1;
  for (int a = 0; a < 3; ++a) {
    const double h = b.half_extents[a];
    if (ld[a] == 0.0) {
      if (std::abs(lo[a]) > h) return {};
      continue;
    }
    double t1 = (-h - lo[a]) / ld[a], t2 = (h - lo[a]) / ld[a];
    if (t1 > t2) std::swap(t1, t2);
    if (t1 > tnear) {
      tnear = t1;
      near_axis = a;
    }
    if (t2 < tfar) {
      tfar = t2;
      far_axis = a;
    }
  }
  if (tnear > tfar || !(tfar > kMinHit)) return {};
  const bool inside = !(tnear > kMinHit);
  const double t = inside ? tfar : tnear;
  const int axis = inside ? far_axis : near_axis;
  Vec3 ln;
  ln[axis] = ld[axis] > 0.0 ? (inside ? 1.0 : -1.0) : (inside ? -1.0 : 1.0);
  return {t, b.rotation.rotate(ln)};
}

}  // namespace detail

// Viewing ray through the centre of pixel (i, j) in camera coordinates, z = 1.
inline Vec3 pixel_ray(const CameraParams& cam, std::size_t height, std::size_t width, std::size_t i, std::size_t j) {
  const double cx = 0.5 * static_cast<double>(width), cy = 0.5 * static_cast<double>(height);
  return {(static_cast<double>(j) + 0.5 - cx) / cam.fx, (static_cast<double>(i) + 0.5 - cy) / cam.fy, 1.0};
}

/// Ray-casts every pixel against the analytic surfaces. Depth is camera-frame
/// z; misses are invalid. Throws if the camera sees no surface.
inline RenderOutput render(const Scene& scene, std::size_t camera_index) {
  scene.validate();
  if (camera_index >= scene.cameras.size()) throw InvalidArgument("render: camera index out of range");
  const CameraParams& cam = scene.cameras[camera_index];
  const std::size_t H = scene.height, W = scene.width;
  RenderOutput out{DepthMap(H, W), PointMap(H, W), NormalMap(H, W)};
  const Rotation inv = cam.rotation.inverse();
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      const Vec3 dc = pixel_ray(cam, H, W, i, j);
      const Vec3 dw = cam.rotation.rotate(dc);
      detail::Hit best;
      for (const auto& s : scene.surfaces) {
        const detail::Hit h = std::visit([&](const auto& prim) { return detail::intersect(prim, cam.translation, dw); }, s);
        if (h.t < best.t) best = h;
      }
      if (!std::isfinite(best.t)) continue;
      Vec3 n = inv.rotate(best.normal);
      if (dot(n, dc) > 0.0) n = -n;
      out.depth.set(i, j, best.t);
      out.points.set(i, j, best.t * dc);
      out.normals.set(i, j, normalized(n));
    }
  if (out.depth.valid_count() == 0) throw InvalidArgument("render: camera sees no surface");
  return out;
}

/// Back-projects a depth map to camera-frame points.
inline PointMap unproject(const DepthMap& depth, const CameraParams& cam) {
  const std::size_t H = depth.height(), W = depth.width();
  const double cx = 0.5 * static_cast<double>(W), cy = 0.5 * static_cast<double>(H);
  PointMap pm(H, W);
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      if (!depth.valid(i, j)) continue;
      const double z = depth(i, j);
      pm.set(i, j, {(static_cast<double>(j) + 0.5 - cx) * z / cam.fx, (static_cast<double>(i) + 0.5 - cy) * z / cam.fy, z});
    }
  return pm;
}

/// A small asymmetric scene: back wall, floor, sphere and rotated box seen by
/// `num_cameras` cameras on an arc, all looking at the scene centre.
inline Scene default_scene(std::size_t num_cameras = 4, std::size_t height = 48, std::size_t width = 64) {
  Scene s;
  s.height = height;
  s.width = width;
  s.surfaces.push_back(Plane{{0.0, 0.0, 7.0}, {0.0, 0.0, -1.0}});
  s.surfaces.push_back(Plane{{0.0, 1.5, 0.0}, {0.0, -1.0, 0.0}});
  s.surfaces.push_back(Sphere{{-0.8, 0.3, 4.5}, 0.9});
  s.surfaces.push_back(Box{{1.2, 0.6, 4.0}, {0.5, 0.9, 0.6}, Rotation::from_axis_angle({0.2, 1.0, 0.1}, 0.6)});
  const Vec3 target{0.0, 0.4, 4.5};
  for (std::size_t c = 0; c < num_cameras; ++c) {
    const double a = num_cameras > 1 ? -0.35 + 0.7 * static_cast<double>(c) / static_cast<double>(num_cameras - 1) : 0.0;
    const Vec3 eye{4.5 * std::sin(a), -0.6 - 0.1 * static_cast<double>(c), 4.5 - 4.5 * std::cos(a)};
    s.cameras.push_back({look_at(eye, target), eye, 0.9 * static_cast<double>(width), 0.9 * static_cast<double>(width)});
  }
  return s;
}

// ---------------------------------------------------------------------------
// Perturbations
// ---------------------------------------------------------------------------

namespace detail {

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

// Uniform in (0, 1), a pure function of (seed, stream, index): no shared RNG state.
inline double hash_uniform(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  const std::uint64_t h = splitmix64(splitmix64(splitmix64(seed) ^ stream) ^ index);
  return (static_cast<double>(h >> 11) + 0.5) * (1.0 / 9007199254740992.0);
}

inline double hash_normal(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  const double u1 = hash_uniform(seed, stream, 2 * index);
  const double u2 = hash_uniform(seed, stream, 2 * index + 1);
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline Vec3 hash_unit_vector(std::uint64_t seed, std::uint64_t stream, std::uint64_t index) {
  const double z = 2.0 * hash_uniform(seed, stream, 2 * index) - 1.0;
  const double phi = 2.0 * std::numbers::pi * hash_uniform(seed, stream, 2 * index + 1);
  const double r = std::sqrt(std::max(0.0, 1.0 - z * z));
  return {r * std::cos(phi), r * std::sin(phi), z};
}

enum Stream : std::uint64_t { kDepth = 1, kNormal = 2, kPoseRot = 3, kPoseAngle = 4, kPoseTrans = 5 };

}  // namespace detail

struct NoiseSpec {
  std::uint64_t seed = 0;
  Sim3 transform;                // applied to pointmaps and trajectories
  double depth_noise = 0.0;      // relative std of multiplicative depth noise
  double normal_tilt_deg = 0.0;  // every valid normal is tilted by exactly this angle
  double pose_rot_deg = 0.0;     // per-pose rotation noise, angle uniform in [0, pose_rot_deg]
  double pose_trans = 0.0;       // per-pose translation noise std
};

struct PerturbationRecord {
  Sim3 transform;
  std::vector<double> depth_factors;      // per pixel, 1 where invalid
  std::vector<Rotation> normal_rotations;  // per pixel, identity where invalid
};

struct Perturbed {
  RenderOutput output;
  PerturbationRecord record;
};

/// Applies spec.transform to the pointmap, a per-pixel factor
/// (1 + depth_noise * n) to depth, and an exact tilt of normal_tilt_deg about
/// a random tangent axis to each view-space normal (the global transform does
/// not touch the normal map). Randomness is derived per pixel from
/// (seed, frame, pixel).
inline Perturbed perturb(const RenderOutput& in, const NoiseSpec& spec, std::size_t frame = 0) {
  if (!(spec.transform.scale > 0.0)) throw InvalidArgument("perturb: scale must be positive");
  Perturbed p{in, {spec.transform, std::vector<double>(in.depth.size(), 1.0),
                   std::vector<Rotation>(in.normals.size())}};
  const std::uint64_t base = static_cast<std::uint64_t>(frame) << 32;
  for (std::size_t f = 0; f < in.points.size(); ++f)
    if (in.points.valid(f)) p.output.points[f] = spec.transform.apply(in.points[f]);
  if (spec.depth_noise > 0.0) {
    for (std::size_t f = 0; f < in.depth.size(); ++f) {
      if (!in.depth.valid(f)) continue;
      const double factor = 1.0 + spec.depth_noise * detail::hash_normal(spec.seed, detail::kDepth, base + f);
      if (!(factor > 0.0)) {
        p.output.depth.set_valid(f, false);
        continue;
      }
      p.record.depth_factors[f] = factor;
      p.output.depth[f] = in.depth[f] * factor;
    }
  }
  const double tilt = deg2rad(spec.normal_tilt_deg);
  for (std::size_t f = 0; f < in.normals.size(); ++f) {
    if (!in.normals.valid(f)) continue;
    Rotation r;
    if (tilt != 0.0) {
      const Vec3 n = in.normals[f];
      const Vec3 t1 = normalized(cross(n, std::abs(n.x) < 0.9 ? Vec3{1.0, 0.0, 0.0} : Vec3{0.0, 1.0, 0.0}));
      const Vec3 t2 = cross(n, t1);
      const double phi = 2.0 * std::numbers::pi * detail::hash_uniform(spec.seed, detail::kNormal, base + f);
      r = Rotation::from_axis_angle(std::cos(phi) * t1 + std::sin(phi) * t2, tilt);
    }
    p.record.normal_rotations[f] = r;
    p.output.normals[f] = r.rotate(in.normals[f]);
  }
  return p;
}

/// Inverts perturb() using its record.
inline RenderOutput restore(const RenderOutput& perturbed, const PerturbationRecord& rec) {
  RenderOutput out = perturbed;
  const Sim3 inv = rec.transform.inverse();
  for (std::size_t f = 0; f < out.points.size(); ++f)
    if (out.points.valid(f)) out.points[f] = inv.apply(perturbed.points[f]);
  for (std::size_t f = 0; f < out.depth.size(); ++f)
    if (out.depth.valid(f)) out.depth[f] = perturbed.depth[f] / rec.depth_factors[f];
  for (std::size_t f = 0; f < out.normals.size(); ++f)
    if (out.normals.valid(f)) out.normals[f] = rec.normal_rotations[f].inverse().rotate(perturbed.normals[f]);
  return out;
}

struct TrajectoryRecord {
  Sim3 transform;
  std::vector<Rotation> rotation_noise;
  std::vector<Vec3> translation_noise;
};

/// Per-pose noise (R' = dR R, t' = t + dt) followed by the global similarity.
inline std::pair<std::vector<Pose>, TrajectoryRecord> perturb_trajectory(const std::vector<Pose>& traj,
                                                                        const NoiseSpec& spec) {
  TrajectoryRecord rec{spec.transform, {}, {}};
  std::vector<Pose> out;
  for (std::size_t i = 0; i < traj.size(); ++i) {
    Rotation dr;
    Vec3 dt;
    if (spec.pose_rot_deg > 0.0) {
      const double ang = deg2rad(spec.pose_rot_deg) * detail::hash_uniform(spec.seed, detail::kPoseAngle, i);
      dr = Rotation::from_axis_angle(detail::hash_unit_vector(spec.seed, detail::kPoseRot, i), ang);
    }
    if (spec.pose_trans > 0.0)
      for (int a = 0; a < 3; ++a) dt[a] = spec.pose_trans * detail::hash_normal(spec.seed, detail::kPoseTrans, 3 * i + a);
    rec.rotation_noise.push_back(dr);
    rec.translation_noise.push_back(dt);
    out.push_back(transform_pose(spec.transform, Pose{dr * traj[i].rotation, traj[i].translation + dt}));
  }
  return {out, rec};
}

inline std::vector<Pose> restore_trajectory(const std::vector<Pose>& traj, const TrajectoryRecord& rec) {
  const Sim3 inv = rec.transform.inverse();
  std::vector<Pose> out;
  for (std::size_t i = 0; i < traj.size(); ++i) {
    const Pose p = transform_pose(inv, traj[i]);
    out.push_back({rec.rotation_noise[i].inverse() * p.rotation, p.translation - rec.translation_noise[i]});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Multi-domain token task for the MoE experiments
// ---------------------------------------------------------------------------

/// D domains, each with its own input cluster (centre + isotropic spread) and
/// its own target map y = tanh(A_c x + b_c).
struct DomainTaskSpec {
  std::size_t domains = 4;
  std::size_t dim = 8;
  std::size_t out_dim = 4;
  double spread = 0.5;
  std::vector<std::vector<double>> centers;
  std::vector<Matrix> maps;                  // out_dim x dim
  std::vector<std::vector<double>> offsets;  // out_dim

  static DomainTaskSpec random(std::size_t domains, std::size_t dim, std::size_t out_dim, double center_scale,
                               double spread, std::uint64_t seed) {
    if (domains < 2) throw InvalidArgument("task: need at least 2 domains");
    if (dim == 0 || out_dim == 0) throw InvalidArgument("task: dimensions must be positive");
    DomainTaskSpec s;
    s.domains = domains;
    s.dim = dim;
    s.out_dim = out_dim;
    s.spread = spread;
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> n01(0.0, 1.0);
    const double wscale = 1.5 / std::sqrt(static_cast<double>(dim));
    for (std::size_t c = 0; c < domains; ++c) {
      std::vector<double> center(dim);
      for (double& v : center) v = center_scale * n01(rng);
      s.centers.push_back(std::move(center));
      Matrix a(out_dim, dim);
      for (double& v : a.data()) v = wscale * n01(rng);
      s.maps.push_back(std::move(a));
      std::vector<double> b(out_dim);
      for (double& v : b) v = 0.5 * n01(rng);
      s.offsets.push_back(std::move(b));
    }
    return s;
  }

  std::vector<double> target(std::size_t domain, std::span<const double> x) const {
    std::vector<double> y(out_dim);
    matvec(maps.at(domain), x, y);
    for (std::size_t o = 0; o < out_dim; ++o) y[o] = std::tanh(y[o] + offsets[domain][o]);
    return y;
  }
};

struct MoeTask {
  Matrix tokens;   // n x dim
  Matrix targets;  // n x out_dim
  std::vector<std::size_t> labels;
};

/// Token t belongs to domain t mod D, so domains are balanced within one token.
inline MoeTask make_moe_task(const DomainTaskSpec& spec, std::size_t n_tokens, std::uint64_t seed) {
  if (spec.centers.size() != spec.domains) throw InvalidArgument("task: spec not initialized");
  MoeTask task{Matrix(n_tokens, spec.dim), Matrix(n_tokens, spec.out_dim), std::vector<std::size_t>(n_tokens)};
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n01(0.0, 1.0);
  for (std::size_t t = 0; t < n_tokens; ++t) {
    const std::size_t c = t % spec.domains;
    task.labels[t] = c;
    auto x = task.tokens.row(t);
    for (std::size_t i = 0; i < spec.dim; ++i) x[i] = spec.centers[c][i] + spec.spread * n01(rng);
    const auto y = spec.target(c, x);
    std::copy(y.begin(), y.end(), task.targets.row(t).begin());
  }
  return task;
}

}  // namespace more::synth
