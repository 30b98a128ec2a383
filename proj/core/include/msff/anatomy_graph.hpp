#pragma once

#include <Eigen/Core>

#include <array>
#include <utility>
#include <vector>

#include "msff/joints.hpp"
#include "msff/nn.hpp"
#include "msff/volume.hpp"

namespace msff {

using JointMatrix = Eigen::Matrix<double, kJointCount, kJointCount>;

/// 21-joint hand skeleton as an undirected tree rooted at the wrist.
///
/// Joint 0 is the wrist. Finger f (0 = thumb .. 4 = pinky) owns joints
/// 4f+1 .. 4f+4, ordered base to tip.
struct SkeletonGraph {
  int joint_count = kJointCount;
  std::vector<std::pair<int, int>> edges;
  JointMatrix adjacency = JointMatrix::Zero();
  JointMatrix degree = JointMatrix::Zero();
  /// D^{-1/2} A D^{-1/2}
  JointMatrix laplacian = JointMatrix::Zero();

  /// Parent of each joint in the wrist-rooted tree; -1 for the wrist.
  std::array<int, kJointCount> parent{};
};

SkeletonGraph build_hand_skeleton();

/// Shared immutable instance of build_hand_skeleton().
const SkeletonGraph& hand_skeleton();

/// Row-major I + L (L has a zero diagonal), the channel-mixing matrix that
/// realises mutual reinforcement.
std::vector<double> reinforcement_matrix(const SkeletonGraph& graph);

/// Map k becomes hm_k + sum_{q != k} L[k][q] * hm_q.
template <typename T>
HeatmapStack<T> mutual_reinforce(const HeatmapStack<T>& heatmaps, const SkeletonGraph& graph) {
  if (heatmaps.channels() != graph.joint_count) {
    throw ContractViolation("mutual_reinforce: expected " + std::to_string(graph.joint_count) +
                            " maps, got " + std::to_string(heatmaps.channels()));
  }
  nn::Tape<T> tape;
  return nn::mix_channels(tape, nn::make_var(heatmaps), reinforcement_matrix(graph))->value;
}

/// Per-map factors Ed_k / sum_j Ed_j over visible joints. Occluded joints get
/// 0. When every visible distance is zero each visible joint gets
/// 1/|visible|. All-occluded input yields all zeros.
std::array<double, kJointCount> reweight_factors(const JointSet& pred, const JointSet& gt,
                                                 const OcclusionMask& occluded);

template <typename T>
HeatmapStack<T> error_reweight(const HeatmapStack<T>& heatmaps, const JointSet& pred,
                               const JointSet& gt, const OcclusionMask& occluded) {
  if (heatmaps.channels() != kJointCount) {
    throw ContractViolation("error_reweight: expected 21 maps");
  }
  const auto factors = reweight_factors(pred, gt, occluded);
  nn::Tape<T> tape;
  return nn::scale_channels(tape, nn::make_var(heatmaps),
                            std::vector<double>(factors.begin(), factors.end()))
      ->value;
}

}  // namespace msff
