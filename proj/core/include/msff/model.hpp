#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "msff/joints.hpp"
#include "msff/nn.hpp"
#include "msff/volume.hpp"

namespace msff {

using nn::Activation;

inline constexpr int kSshfrLayers = 10;

/// Architecture hyperparameters and ablation switches.
struct ModelConfig {
  int num_msff = 3;          // N, cascaded MSFF modules
  int blocks_per_fec = 1;    // p, convolution blocks per branch
  int units_per_block = 1;   // q, residual units per block
  int branch_channels = 96;  // C, channels of every branch output
  int crop_size = 256;
  int heatmap_size = 64;
  int joint_count = kJointCount;
  Activation activation = Activation::Rectifier;
  /// Output width of each of the ten shallow feature layers. The last entry
  /// is also the channel count carried between MSFF modules.
  std::array<int, kSshfrLayers> sshfr_channels{32, 64, 64, 128, 128, 128, 256, 256, 256, 256};

  bool use_sshfr = true;
  bool use_transpose = true;
  bool use_attention = true;
  bool use_losswise = true;
  bool use_aomr = true;

  /// Throws ConfigError naming the first invalid field.
  void validate() const;

  int feature_channels() const { return sshfr_channels.back(); }
  int fused_channels() const { return 6 * branch_channels; }
  int feature_stride() const { return crop_size / heatmap_size; }

  /// Small test configuration: 64x64 crops, 16x16 heatmaps, C = 6, N = 1.
  static ModelConfig micro();

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

/// One convolution layer of the parameter table.
struct LayerSpec {
  std::string name;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;

  std::size_t parameter_count() const {
    return static_cast<std::size_t>(out_channels) * in_channels * kernel * kernel + out_channels;
  }
};

/// Every convolution of the network in initialization order. The shapes are
/// fully determined by the config.
std::vector<LayerSpec> layer_table(const ModelConfig& config);

template <typename T>
struct ModelParams {
  nn::ParameterMap<T> tensors;

  std::size_t count() const {
    std::size_t n = 0;
    for (const auto& [name, p] : tensors) n += p.size();
    return n;
  }

  /// Same names and shapes, all values zero.
  ModelParams zeros_like() const {
    ModelParams out;
    for (const auto& [name, p] : tensors) {
      out.tensors[name] = nn::Parameter<T>{p.shape, std::vector<T>(p.size(), T(0))};
    }
    return out;
  }

  template <typename U>
  ModelParams<U> cast() const {
    ModelParams<U> out;
    for (const auto& [name, p] : tensors) {
      nn::Parameter<U> q{p.shape, std::vector<U>(p.size())};
      for (std::size_t i = 0; i < p.size(); ++i) q.values[i] = static_cast<U>(p.values[i]);
      out.tensors[name] = std::move(q);
    }
    return out;
  }

  friend bool operator==(const ModelParams& a, const ModelParams& b) {
    if (a.tensors.size() != b.tensors.size()) return false;
    for (const auto& [name, p] : a.tensors) {
      auto it = b.tensors.find(name);
      if (it == b.tensors.end() || it->second.shape != p.shape || it->second.values != p.values) {
        return false;
      }
    }
    return true;
  }
};

/// Variance-preserving weight scale for the activation (2 for rectifier).
double init_gain(Activation activation);

/// Kernels ~ N(0, init_gain / fan_in), biases zero. Deterministic in (config, seed).
template <typename T>
ModelParams<T> init_model(const ModelConfig& config, std::uint64_t seed);

/// Checks that `params` has exactly the tensors layer_table(config) implies.
template <typename T>
void check_params(const ModelParams<T>& params, const ModelConfig& config);

/// Ground truth consumed by the error-based reweighting during training, in
/// heatmap grid units.
struct StageTargets {
  JointSet joints{};
  OcclusionMask occluded{};
};

/// Per-map argmax, ties resolved to the smallest row-major index.
template <typename T>
JointSet decode_joints(const HeatmapStack<T>& heatmaps);

// ---------------------------------------------------------------------------
// Differentiable building blocks. With a forward-only tape these are plain
// forward passes; with a recording tape they support Tape::backward().

namespace graph {

/// Expects a zero-centred crop (pixels minus 0.5); model() does the shift.
template <typename T>
nn::Var<T> sshfr(nn::Tape<T>& tape, const nn::Var<T>& crop, const ModelParams<T>& params,
                 const ModelConfig& config);

template <typename T>
nn::Var<T> branch(nn::Tape<T>& tape, const nn::Var<T>& input, int stage, int branch_index,
                  const ModelParams<T>& params, const ModelConfig& config);

template <typename T>
nn::Var<T> fuse_transpose(nn::Tape<T>& tape, const nn::Var<T>& fine, const nn::Var<T>& mid,
                          const nn::Var<T>& coarse, const ModelConfig& config);

template <typename T>
nn::Var<T> channel_attention(nn::Tape<T>& tape, const nn::Var<T>& features,
                             const ModelConfig& config);

/// 1x1 convolution to one response map per joint, before any normalization.
template <typename T>
nn::Var<T> head_responses(nn::Tape<T>& tape, const nn::Var<T>& features, int stage,
                          const ModelParams<T>& params);

/// head_responses followed by per-map min-max normalization.
template <typename T>
nn::Var<T> heatmap_head(nn::Tape<T>& tape, const nn::Var<T>& features, int stage,
                        const ModelParams<T>& params, const ModelConfig& config);

template <typename T>
struct StageOutput {
  /// Input of the next stage; null when not requested.
  nn::Var<T> next_input;
  /// Head responses, mixed along the skeleton when use_aomr. The regression
  /// loss is taken on these.
  nn::Var<T> responses;
  /// min-max normalized responses, in [0,1] per map.
  nn::Var<T> heatmaps;
};

/// One MSFF stage. With `targets` (training) the heatmaps forwarded to the
/// next stage are scaled by the per-joint error factors.
template <typename T>
StageOutput<T> msff(nn::Tape<T>& tape, const nn::Var<T>& input, int stage,
                    const ModelParams<T>& params, const ModelConfig& config,
                    const StageTargets* targets, bool emit_next = true);

/// Every stage, first to last, for a crop with pixels in [0,1]. The last
/// stage does not build next_input.
template <typename T>
std::vector<StageOutput<T>> model(nn::Tape<T>& tape, const nn::Var<T>& crop,
                                  const ModelParams<T>& params, const ModelConfig& config,
                                  const StageTargets* targets);

}  // namespace graph

// ---------------------------------------------------------------------------
// Forward-only entry points.

/// 3 x crop x crop -> feature_channels x heatmap x heatmap. The input is
/// taken as is, so callers pass crop pixels minus 0.5 to match model_forward.
template <typename T>
FeatureVolume<T> sshfr_forward(const FeatureVolume<T>& crop, const ModelParams<T>& params,
                               const ModelConfig& config);

/// branch_index 1..3; output is C x (H / 2^(j-1)) x (W / 2^(j-1)).
template <typename T>
FeatureVolume<T> branch_forward(const FeatureVolume<T>& input, int branch_index,
                                const ModelParams<T>& params, const ModelConfig& config,
                                int stage = 1);

template <typename T>
FeatureVolume<T> fuse_transpose(const FeatureVolume<T>& fine, const FeatureVolume<T>& mid,
                                const FeatureVolume<T>& coarse, const ModelConfig& config);

template <typename T>
FeatureVolume<T> channel_attention(const FeatureVolume<T>& features, const ModelConfig& config);

template <typename T>
HeatmapStack<T> heatmap_head(const FeatureVolume<T>& features, const ModelParams<T>& params,
                             const ModelConfig& config, int stage = 1);

template <typename T>
std::pair<FeatureVolume<T>, HeatmapStack<T>> msff_forward(const FeatureVolume<T>& input,
                                                          int stage,
                                                          const ModelParams<T>& params,
                                                          const ModelConfig& config,
                                                          const StageTargets* targets = nullptr);

template <typename T>
std::vector<HeatmapStack<T>> model_forward(const FeatureVolume<T>& crop,
                                           const ModelParams<T>& params,
                                           const ModelConfig& config,
                                           const StageTargets* targets = nullptr);

}  // namespace msff
