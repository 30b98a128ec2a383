#include "msff/stage1.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace msff {

namespace {

constexpr double kMinRegionSide = 8.0;
constexpr double kMinCropSide = 4.0;

float sample_clamped(const Image& img, int c, double x, double y) {
  const double cx = std::clamp(x, 0.0, img.width() - 1.0);
  const double cy = std::clamp(y, 0.0, img.height() - 1.0);
  const int x0 = static_cast<int>(std::floor(cx));
  const int y0 = static_cast<int>(std::floor(cy));
  const int x1 = std::min(x0 + 1, img.width() - 1);
  const int y1 = std::min(y0 + 1, img.height() - 1);
  const double fx = cx - x0;
  const double fy = cy - y0;
  const double top = img.at(c, y0, x0) * (1.0 - fx) + img.at(c, y0, x1) * fx;
  const double bot = img.at(c, y1, x0) * (1.0 - fx) + img.at(c, y1, x1) * fx;
  return static_cast<float>(top * (1.0 - fy) + bot * fy);
}

}  // namespace

std::optional<HandRegion> visible_bounds(const JointSet& joints) {
  bool any = false;
  double x0 = 0, y0 = 0, x1 = 0, y1 = 0;
  for (const Point2& p : joints) {
    if (is_occluded_coord(p)) continue;
    if (!any) {
      x0 = x1 = p.x;
      y0 = y1 = p.y;
      any = true;
    } else {
      x0 = std::min(x0, p.x);
      x1 = std::max(x1, p.x);
      y0 = std::min(y0, p.y);
      y1 = std::max(y1, p.y);
    }
  }
  if (!any) return std::nullopt;
  return HandRegion{x0, y0, x1 - x0, y1 - y0};
}

OracleDetection detect_hands_oracle(const HandAnnotation& annotation, int image_width,
                                    int image_height, double margin) {
  if (margin < 0.0) throw ArgumentError("margin must be non-negative");
  OracleDetection out;
  for (std::size_t i = 0; i < annotation.hands.size(); ++i) {
    const auto tight = visible_bounds(annotation.hands[i].joints);
    if (!tight) {
      out.warnings.push_back(annotation.image_path + ": hand " + std::to_string(i) +
                             " has no visible joints; skipped");
      continue;
    }
    const double cx = tight->x + tight->w / 2.0;
    const double cy = tight->y + tight->h / 2.0;
    double side = std::max(tight->w, tight->h) * (1.0 + 2.0 * margin);
    side = std::max(side, kMinRegionSide);
    side = std::min({side, static_cast<double>(image_width), static_cast<double>(image_height)});
    double x = std::clamp(cx - side / 2.0, 0.0, image_width - side);
    double y = std::clamp(cy - side / 2.0, 0.0, image_height - side);
    // centring can round past a tight edge by one ulp
    x = std::min(x, tight->x);
    y = std::min(y, tight->y);
    while (x + side < tight->x + tight->w || y + side < tight->y + tight->h) {
      side = std::nextafter(side, std::numeric_limits<double>::infinity());
    }
    out.regions.push_back({x, y, side, side});
    out.hand_index.push_back(static_cast<int>(i));
  }
  return out;
}

std::vector<HandRegion> OracleDetector::detect(const Image& image) const {
  return detect_hands_oracle(annotation_, image.width(), image.height(), margin_).regions;
}

std::vector<HandRegion> FullFrameDetector::detect(const Image& image) const {
  const double side = std::min(image.width(), image.height());
  return {{(image.width() - side) / 2.0, (image.height() - side) / 2.0, side, side}};
}

HandCrop crop_hand(const Image& image, const HandRegion& region, int crop_size) {
  if (image.channels() != 3) throw ContractViolation("crop_hand: expected an RGB image");
  if (region.w < kMinCropSide || region.h < kMinCropSide) {
    throw ArgumentError("crop_hand: degenerate region " + std::to_string(region.w) + "x" +
                        std::to_string(region.h) + " (minimum 4 px)");
  }
  if (crop_size < 1) throw ArgumentError("crop_hand: crop_size must be positive");
  HandCrop crop;
  crop.transform = {region.x, region.y, std::max(region.w, region.h) / crop_size};
  crop.pixels = Image(3, crop_size, crop_size);
  for (int v = 0; v < crop_size; ++v) {
    for (int u = 0; u < crop_size; ++u) {
      const Point2 src = crop.transform.to_source({static_cast<double>(u), static_cast<double>(v)});
      for (int c = 0; c < 3; ++c) {
        crop.pixels.at(c, v, u) = std::clamp(sample_clamped(image, c, src.x, src.y), 0.0f, 1.0f);
      }
    }
  }
  return crop;
}

Point2 map_to_source(const Point2& heatmap, const CropTransform& transform,
                     const ModelConfig& config) {
  const double stride = static_cast<double>(config.crop_size) / config.heatmap_size;
  return transform.to_source({heatmap.x * stride, heatmap.y * stride});
}

Point2 map_to_heatmap(const Point2& source, const CropTransform& transform,
                      const ModelConfig& config) {
  const double stride = static_cast<double>(config.crop_size) / config.heatmap_size;
  const Point2 crop = transform.to_crop(source);
  return {crop.x / stride, crop.y / stride};
}

JointSet map_joints_to_source(const JointSet& heatmap, const CropTransform& transform,
                              const ModelConfig& config) {
  JointSet out{};
  for (int k = 0; k < kJointCount; ++k) out[k] = map_to_source(heatmap[k], transform, config);
  return out;
}

}  // namespace msff
