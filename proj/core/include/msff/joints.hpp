#pragma once

#include <array>
#include <cmath>

namespace msff {

inline constexpr int kJointCount = 21;

struct Point2 {
  double x = 0.0;
  double y = 0.0;

  friend bool operator==(const Point2&, const Point2&) = default;
};

inline double distance(const Point2& a, const Point2& b) {
  return std::hypot(a.x - b.x, a.y - b.y);
}

using JointSet = std::array<Point2, kJointCount>;

/// true marks an occluded joint (ground truth annotated as exactly (0,0)).
using OcclusionMask = std::array<bool, kJointCount>;

inline bool is_occluded_coord(const Point2& p) { return p.x == 0.0 && p.y == 0.0; }

inline OcclusionMask occlusion_mask(const JointSet& joints) {
  OcclusionMask mask{};
  for (int k = 0; k < kJointCount; ++k) mask[k] = is_occluded_coord(joints[k]);
  return mask;
}

inline int visible_count(const OcclusionMask& mask) {
  int n = 0;
  for (bool occluded : mask) n += occluded ? 0 : 1;
  return n;
}

}  // namespace msff
