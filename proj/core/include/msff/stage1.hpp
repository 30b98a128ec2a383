#pragma once

#include <memory>
#include <string>
#include <vector>

#include "msff/annotation.hpp"
#include "msff/model.hpp"
#include "msff/volume.hpp"

namespace msff {

/// Maps crop pixels to source pixels: source = offset + crop * scale.
struct CropTransform {
  double offset_x = 0.0;
  double offset_y = 0.0;
  double scale = 1.0;

  Point2 to_source(const Point2& crop_px) const {
    return {offset_x + crop_px.x * scale, offset_y + crop_px.y * scale};
  }
  Point2 to_crop(const Point2& source_px) const {
    return {(source_px.x - offset_x) / scale, (source_px.y - offset_y) / scale};
  }
};

struct HandCrop {
  Image pixels;
  CropTransform transform;
};

/// Anything that proposes hand regions for an image. The oracle below is one
/// implementation; a learned detector can replace it without touching the
/// rest of the pipeline.
class HandDetector {
 public:
  virtual ~HandDetector() = default;
  virtual std::vector<HandRegion> detect(const Image& image) const = 0;
};

struct OracleDetection {
  std::vector<HandRegion> regions;
  /// Index into annotation.hands for each region.
  std::vector<int> hand_index;
  std::vector<std::string> warnings;
};

inline constexpr double kDefaultRegionMargin = 0.25;

/// Regions derived from ground truth: the tight box of the visible joints,
/// grown by `margin` of its size on every side, padded to a square and moved
/// (not shrunk, unless larger than the image) to lie inside the image.
OracleDetection detect_hands_oracle(const HandAnnotation& annotation, int image_width,
                                    int image_height, double margin = kDefaultRegionMargin);

class OracleDetector final : public HandDetector {
 public:
  OracleDetector(HandAnnotation annotation, double margin = kDefaultRegionMargin)
      : annotation_(std::move(annotation)), margin_(margin) {}
  std::vector<HandRegion> detect(const Image& image) const override;

 private:
  HandAnnotation annotation_;
  double margin_;
};

/// Treats the largest centred square of the image as a single hand.
class FullFrameDetector final : public HandDetector {
 public:
  std::vector<HandRegion> detect(const Image& image) const override;
};

/// Bilinear resample of a square region to crop_size x crop_size.
HandCrop crop_hand(const Image& image, const HandRegion& region, int crop_size = 256);

/// Heatmap grid units -> crop pixels -> source pixels.
Point2 map_to_source(const Point2& heatmap, const CropTransform& transform,
                     const ModelConfig& config);
Point2 map_to_heatmap(const Point2& source, const CropTransform& transform,
                      const ModelConfig& config);

JointSet map_joints_to_source(const JointSet& heatmap, const CropTransform& transform,
                              const ModelConfig& config);

}  // namespace msff
