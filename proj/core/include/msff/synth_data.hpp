#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "msff/annotation.hpp"
#include "msff/joints.hpp"
#include "msff/volume.hpp"

namespace msff {

inline constexpr int kManifestVersion = 1;
inline constexpr double kDefaultTargetSigma = 2.0;

/// Procedural hand generator settings. Lengths are in "palm units": one unit
/// is unit_length * image_size pixels at palm scale 1.
struct GeneratorConfig {
  int image_size = 128;
  double two_hand_probability = 0.25;
  double unit_length = 0.07;
  double palm_scale_min = 0.8;
  double palm_scale_max = 1.2;
  /// Per finger (thumb .. pinky): wrist->base, then the three phalanges.
  std::array<std::array<double, 4>, 5> segment_lengths{{{1.0, 1.0, 0.8, 0.7},
                                                        {2.0, 1.1, 0.7, 0.6},
                                                        {2.1, 1.2, 0.8, 0.6},
                                                        {2.0, 1.1, 0.75, 0.6},
                                                        {1.8, 0.9, 0.6, 0.5}}};
  /// Direction of each wrist->base segment relative to the hand axis.
  std::array<double, 5> finger_angles_deg{-55.0, -20.0, -3.0, 14.0, 30.0};
  double max_rotation_deg = 180.0;
  double max_flexion_deg = 30.0;
  double max_abduction_deg = 8.0;
  /// Where the hand centre may fall, as a fraction of the image side.
  double center_min = 0.3;
  double center_max = 0.7;
  double bone_radius = 0.22;
  double joint_radius = 0.3;
  double background_noise = 0.08;

  void validate() const;
  friend bool operator==(const GeneratorConfig&, const GeneratorConfig&) = default;
};

struct HandPose {
  /// Annotation view: off-canvas joints replaced by (0,0).
  JointSet joints{};
  OcclusionMask occluded{};
  /// Unclipped forward-kinematics positions.
  JointSet raw_joints{};
  Point2 wrist;
  double rotation = 0.0;
  double palm_scale = 1.0;
  bool mirrored = false;
  std::array<double, 5> abduction{};
  std::array<std::array<double, 3>, 5> flexion{};
};

/// Places the 21 joints by 2D forward kinematics along the skeleton tree.
/// Angles in radians. Joints outside [0, image_size) are marked occluded.
HandPose forward_kinematics(const Point2& wrist, double rotation, double palm_scale,
                            bool mirrored, const std::array<double, 5>& abduction,
                            const std::array<std::array<double, 3>, 5>& flexion,
                            const GeneratorConfig& config);

/// Random plausible pose, deterministic in seed.
HandPose sample_hand_pose(std::uint64_t seed, const GeneratorConfig& config);

/// Renders hands (raw joint positions; (0,0) joints are skipped) over a
/// textured background. Deterministic in seed.
Image render_hand(const std::vector<JointSet>& hands, const GeneratorConfig& config,
                  std::uint64_t seed);

/// exp(-d^2 / 2 sigma^2) around the nearest grid cell of every joint (given in
/// heatmap grid units); occluded joints produce all-zero maps.
template <typename T>
HeatmapStack<T> gaussian_targets(const JointSet& joints, double sigma, int size,
                                 const OcclusionMask& occluded) {
  if (!(sigma > 0.0)) throw ArgumentError("gaussian_targets: sigma must be positive");
  HeatmapStack<T> maps(kJointCount, size, size);
  for (int k = 0; k < kJointCount; ++k) {
    if (occluded[k]) continue;
    const double cx = std::round(joints[k].x);
    const double cy = std::round(joints[k].y);
    for (int y = 0; y < size; ++y) {
      for (int x = 0; x < size; ++x) {
        const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
        maps.at(k, y, x) = static_cast<T>(std::exp(-d2 / (2.0 * sigma * sigma)));
      }
    }
  }
  return maps;
}

struct DatasetManifest {
  int version = kManifestVersion;
  std::uint64_t seed = 0;
  int image_size = 0;
  GeneratorConfig generator_params;
  std::vector<HandAnnotation> samples;
};

/// Canonical, byte-stable serialization.
std::string manifest_to_json(const DatasetManifest& manifest);
/// `source` is used to name the file in errors.
DatasetManifest manifest_from_json(const std::string& text, const std::string& source);

/// Writes images/NNNNNN.png plus manifest.json under out_dir.
DatasetManifest generate_dataset(int n_images, std::uint64_t seed,
                                 const std::filesystem::path& out_dir,
                                 const GeneratorConfig& config);

struct Sample {
  Image image;
  HandAnnotation annotation;
};

struct Dataset {
  std::filesystem::path root;
  DatasetManifest manifest;
  std::vector<Sample> samples;
};

/// Loads manifest.json and every image it references, validating both.
Dataset load_dataset(const std::filesystem::path& dir);

/// Stateless 64-bit mixer used to derive independent per-item seeds.
std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream);

}  // namespace msff
