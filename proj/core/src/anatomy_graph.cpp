#include "msff/anatomy_graph.hpp"

#include <cmath>

namespace msff {

SkeletonGraph build_hand_skeleton() {
  SkeletonGraph g;
  g.parent.fill(-1);
  for (int finger = 0; finger < 5; ++finger) {
    int previous = 0;
    for (int segment = 1; segment <= 4; ++segment) {
      const int joint = 4 * finger + segment;
      g.edges.emplace_back(previous, joint);
      g.parent[joint] = previous;
      previous = joint;
    }
  }
  for (const auto& [a, b] : g.edges) {
    g.adjacency(a, b) = 1.0;
    g.adjacency(b, a) = 1.0;
  }
  for (int i = 0; i < kJointCount; ++i) g.degree(i, i) = g.adjacency.row(i).sum();
  for (int i = 0; i < kJointCount; ++i) {
    for (int j = 0; j < kJointCount; ++j) {
      if (g.adjacency(i, j) != 0.0) {
        g.laplacian(i, j) = g.adjacency(i, j) / std::sqrt(g.degree(i, i) * g.degree(j, j));
      }
    }
  }
  return g;
}

const SkeletonGraph& hand_skeleton() {
  static const SkeletonGraph graph = build_hand_skeleton();
  return graph;
}

std::vector<double> reinforcement_matrix(const SkeletonGraph& graph) {
  const int n = graph.joint_count;
  std::vector<double> m(static_cast<std::size_t>(n) * n, 0.0);
  for (int k = 0; k < n; ++k) {
    for (int q = 0; q < n; ++q) m[k * n + q] = (k == q) ? 1.0 : graph.laplacian(k, q);
  }
  return m;
}

std::array<double, kJointCount> reweight_factors(const JointSet& pred, const JointSet& gt,
                                                 const OcclusionMask& occluded) {
  std::array<double, kJointCount> factors{};
  double total = 0.0;
  int visible = 0;
  for (int k = 0; k < kJointCount; ++k) {
    if (occluded[k]) continue;
    factors[k] = distance(pred[k], gt[k]);
    total += factors[k];
    ++visible;
  }
  if (visible == 0) return factors;
  for (int k = 0; k < kJointCount; ++k) {
    if (occluded[k]) continue;
    factors[k] = total > 0.0 ? factors[k] / total : 1.0 / visible;
  }
  return factors;
}

}  // namespace msff
