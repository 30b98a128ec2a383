#pragma once

#include <optional>
#include <string>
#include <vector>

#include "msff/joints.hpp"

namespace msff {

/// Axis-aligned box in source-image pixels.
struct HandRegion {
  double x = 0.0;
  double y = 0.0;
  double w = 0.0;
  double h = 0.0;

  bool contains(const Point2& p) const {
    return p.x >= x && p.x <= x + w && p.y >= y && p.y <= y + h;
  }
  friend bool operator==(const HandRegion&, const HandRegion&) = default;
};

struct HandInstance {
  /// Pixel coordinates, origin top-left; (0,0) marks an occluded joint.
  JointSet joints{};
  std::optional<HandRegion> bbox;
};

struct HandAnnotation {
  std::string image_path;
  std::vector<HandInstance> hands;
};

/// Tight box around the visible joints, or nullopt when none is visible.
std::optional<HandRegion> visible_bounds(const JointSet& joints);

}  // namespace msff
