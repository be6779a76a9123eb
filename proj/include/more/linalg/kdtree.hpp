#pragma once

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <span>
#include <vector>

#include "more/error.hpp"
#include "more/linalg/vec3.hpp"

namespace more {

struct Neighbor {
  std::size_t index = 0;
  double squared_distance = std::numeric_limits<double>::infinity();
};

/// Balanced 3-d tree over a fixed point set.
///
/// Built once by recursive median split on the widest axis; the tree is stored
/// implicitly in a permutation of point indices, so nodes carry no pointers.
/// Exact nearest-neighbour queries; ties go to the lowest original index.
class KdTree3 {
 public:
  KdTree3() = default;

  explicit KdTree3(std::span<const Vec3> points) : points_(points.begin(), points.end()) {
    perm_.resize(points_.size());
    std::iota(perm_.begin(), perm_.end(), std::size_t{0});
    axis_.assign(points_.size(), 0);
    build(0, perm_.size());
  }

  std::size_t size() const { return points_.size(); }
  bool empty() const { return points_.empty(); }
  const Vec3& point(std::size_t i) const { return points_[i]; }

  Neighbor nearest(const Vec3& query) const {
    if (points_.empty()) throw InvalidArgument("empty index");
    Neighbor best;
    search(0, perm_.size(), query, best);
    return best;
  }

 private:
  void build(std::size_t lo, std::size_t hi) {
    if (hi - lo <= 1) return;
    Vec3 mn = points_[perm_[lo]], mx = mn;
    for (std::size_t i = lo; i < hi; ++i) {
      const Vec3& p = points_[perm_[i]];
      for (int a = 0; a < 3; ++a) {
        mn[a] = std::min(mn[a], p[a]);
        mx[a] = std::max(mx[a], p[a]);
      }
    }
    int axis = 0;
    for (int a = 1; a < 3; ++a)
      if (mx[a] - mn[a] > mx[axis] - mn[axis]) axis = a;

    const std::size_t mid = lo + (hi - lo) / 2;
    std::nth_element(perm_.begin() + lo, perm_.begin() + mid, perm_.begin() + hi,
                     [&](std::size_t i, std::size_t j) {
                       const double pi = points_[i][axis], pj = points_[j][axis];
                       return pi < pj || (pi == pj && i < j);
                     });
    axis_[mid] = static_cast<unsigned char>(axis);
    build(lo, mid);
    build(mid + 1, hi);
  }

  void consider(std::size_t idx, const Vec3& q, Neighbor& best) const {
    const double d2 = squared_norm(points_[idx] - q);
    if (d2 < best.squared_distance || (d2 == best.squared_distance && idx < best.index)) best = {idx, d2};
  }

  void search(std::size_t lo, std::size_t hi, const Vec3& q, Neighbor& best) const {
    if (lo >= hi) return;
    const std::size_t mid = lo + (hi - lo) / 2;
    const std::size_t idx = perm_[mid];
    consider(idx, q, best);
    if (hi - lo == 1) return;

    const int axis = axis_[mid];
    const double diff = q[axis] - points_[idx][axis];
    const bool go_left = diff < 0.0;
    if (go_left)
      search(lo, mid, q, best);
    else
      search(mid + 1, hi, q, best);
    // Equal distance to the splitting plane must still be visited for the tie rule.
    if (diff * diff <= best.squared_distance) {
      if (go_left)
        search(mid + 1, hi, q, best);
      else
        search(lo, mid, q, best);
    }
  }

  std::vector<Vec3> points_;
  std::vector<std::size_t> perm_;
  std::vector<unsigned char> axis_;
};

// Free-function form of KdTree3::nearest.
inline Neighbor nearest(const KdTree3& tree, const Vec3& query) { return tree.nearest(query); }

}  // namespace more
