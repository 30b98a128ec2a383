#include "msff/model.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "msff/anatomy_graph.hpp"

namespace msff {

namespace {

constexpr std::array<int, kSshfrLayers> kSshfrKernels{5, 5, 5, 5, 5, 3, 3, 3, 3, 3};
constexpr std::array<int, kSshfrLayers> kSshfrStrides{2, 1, 2, 1, 1, 1, 1, 1, 1, 1};

std::string stage_prefix(int stage) { return "msff" + std::to_string(stage); }

std::string unit_prefix(int stage, int branch, int block, int unit) {
  return stage_prefix(stage) + ".b" + std::to_string(branch) + ".cb" + std::to_string(block) +
         ".ru" + std::to_string(unit);
}

}  // namespace

void ModelConfig::validate() const {
  if (num_msff < 1) throw ConfigError("num_msff", "must be >= 1");
  if (blocks_per_fec < 1 || blocks_per_fec > 4) {
    throw ConfigError("blocks_per_fec", "must be in [1,4]");
  }
  if (units_per_block < 1 || units_per_block > 4) {
    throw ConfigError("units_per_block", "must be in [1,4]");
  }
  if (branch_channels < 1) throw ConfigError("branch_channels", "must be >= 1");
  if (joint_count != kJointCount) throw ConfigError("joint_count", "must be 21");
  if (heatmap_size < 4 || heatmap_size % 4 != 0) {
    throw ConfigError("heatmap_size", "must be a positive multiple of 4");
  }
  if (crop_size != 4 * heatmap_size) {
    throw ConfigError("crop_size", "must equal 4 * heatmap_size");
  }
  for (int c : sshfr_channels) {
    if (c < 1) throw ConfigError("sshfr_channels", "every width must be >= 1");
  }
}

ModelConfig ModelConfig::micro() {
  ModelConfig c;
  c.num_msff = 1;
  c.blocks_per_fec = 1;
  c.units_per_block = 1;
  c.branch_channels = 6;
  c.crop_size = 64;
  c.heatmap_size = 16;
  c.sshfr_channels = {8, 8, 16, 16, 16, 16, 16, 16, 16, 16};
  return c;
}

std::vector<LayerSpec> layer_table(const ModelConfig& config) {
  config.validate();
  std::vector<LayerSpec> layers;
  const int features = config.feature_channels();
  const int c = config.branch_channels;
  if (config.use_sshfr) {
    int in = 3;
    for (int l = 0; l < kSshfrLayers; ++l) {
      layers.push_back({"sshfr.conv" + std::to_string(l + 1), in, config.sshfr_channels[l],
                        kSshfrKernels[l], kSshfrStrides[l]});
      in = config.sshfr_channels[l];
    }
  } else {
    layers.push_back({"stem", 3, features, 5, 4});
  }
  for (int i = 1; i <= config.num_msff; ++i) {
    const std::string s = stage_prefix(i);
    layers.push_back({s + ".b1.entry", features, c, 1, 1});
    layers.push_back({s + ".b2.dsc1", features, c, 3, 2});
    layers.push_back({s + ".b3.dsc1", features, c, 3, 2});
    layers.push_back({s + ".b3.dsc2", c, c, 3, 2});
    for (int j = 1; j <= 3; ++j) {
      for (int b = 1; b <= config.blocks_per_fec; ++b) {
        for (int u = 1; u <= config.units_per_block; ++u) {
          const std::string p = unit_prefix(i, j, b, u);
          layers.push_back({p + ".conv1", c, c, 3, 1});
          layers.push_back({p + ".conv2", c, c, 3, 1});
        }
      }
    }
    layers.push_back({s + ".head", config.fused_channels(), config.joint_count, 1, 1});
    layers.push_back({s + ".proj", config.fused_channels() + config.joint_count, features, 1, 1});
  }
  return layers;
}

double init_gain(Activation activation) {
  // 1 / E[f(z)^2] for z ~ N(0,1): keeps activations at unit scale through a
  // stack of layers. The smooth value was integrated numerically.
  return activation == Activation::Rectifier ? 2.0 : 3.519;
}

template <typename T>
ModelParams<T> init_model(const ModelConfig& config, std::uint64_t seed) {
  ModelParams<T> params;
  std::mt19937_64 rng(seed);
  const double gain = init_gain(config.activation);
  for (const LayerSpec& layer : layer_table(config)) {
    const int fan_in = layer.in_channels * layer.kernel * layer.kernel;
    std::normal_distribution<double> dist(0.0, std::sqrt(gain / fan_in));
    nn::Parameter<T> w{{layer.out_channels, layer.in_channels, layer.kernel, layer.kernel}, {}};
    w.values.resize(static_cast<std::size_t>(layer.out_channels) * fan_in);
    for (T& v : w.values) v = static_cast<T>(dist(rng));
    params.tensors[layer.name + ".weight"] = std::move(w);
    params.tensors[layer.name + ".bias"] =
        nn::Parameter<T>{{layer.out_channels}, std::vector<T>(layer.out_channels, T(0))};
  }
  return params;
}

template <typename T>
void check_params(const ModelParams<T>& params, const ModelConfig& config) {
  std::set<std::string> expected;
  for (const LayerSpec& layer : layer_table(config)) {
    const std::vector<int> wshape{layer.out_channels, layer.in_channels, layer.kernel,
                                  layer.kernel};
    for (const auto& [suffix, shape] :
         {std::pair{std::string(".weight"), wshape},
          std::pair{std::string(".bias"), std::vector<int>{layer.out_channels}}}) {
      const std::string name = layer.name + suffix;
      expected.insert(name);
      auto it = params.tensors.find(name);
      if (it == params.tensors.end()) throw ConfigError(name, "parameter missing for this config");
      if (it->second.shape != shape) throw ConfigError(name, "parameter shape does not match config");
    }
  }
  for (const auto& [name, p] : params.tensors) {
    if (!expected.count(name)) throw ConfigError(name, "unexpected parameter for this config");
  }
}

template <typename T>
JointSet decode_joints(const HeatmapStack<T>& heatmaps) {
  if (heatmaps.channels() != kJointCount) {
    throw ContractViolation("decode_joints: expected 21 maps, got " + heatmaps.shape_string());
  }
  JointSet joints{};
  const int w = heatmaps.width();
  for (int k = 0; k < kJointCount; ++k) {
    const auto ch = heatmaps.channel(k);
    const auto idx = static_cast<int>(std::max_element(ch.begin(), ch.end()) - ch.begin());
    joints[k] = {static_cast<double>(idx % w), static_cast<double>(idx / w)};
  }
  return joints;
}

namespace graph {

// Pixels in [0,1] are shifted to [-0.5,0.5] so that zero padding looks like a
// mid-grey border instead of a dark frame.
template <typename T>
nn::Var<T> centered(nn::Tape<T>& tape, const nn::Var<T>& crop) {
  Volume<T> shift(crop->value.channels(), crop->value.height(), crop->value.width());
  shift.fill(T(-0.5));
  return nn::add(tape, crop, nn::make_var(std::move(shift)));
}

template <typename T>
nn::Var<T> sshfr(nn::Tape<T>& tape, const nn::Var<T>& crop, const ModelParams<T>& params,
                 const ModelConfig& config) {
  const Volume<T>& in = crop->value;
  if (in.channels() != 3 || in.height() != config.crop_size || in.width() != config.crop_size) {
    throw ContractViolation("sshfr: expected 3x" + std::to_string(config.crop_size) + "x" +
                            std::to_string(config.crop_size) + " crop, got " + in.shape_string());
  }
  if (!config.use_sshfr) {
    return nn::activation(tape, nn::conv2d(tape, crop, params.tensors, "stem", 4),
                          config.activation);
  }
  nn::Var<T> x = crop;
  for (int l = 0; l < kSshfrLayers; ++l) {
    x = nn::conv2d(tape, x, params.tensors, "sshfr.conv" + std::to_string(l + 1), kSshfrStrides[l]);
    x = nn::activation(tape, x, config.activation);
  }
  return x;
}

template <typename T>
nn::Var<T> branch(nn::Tape<T>& tape, const nn::Var<T>& input, int stage, int branch_index,
                  const ModelParams<T>& params, const ModelConfig& config) {
  const std::string s = stage_prefix(stage);
  const auto& p = params.tensors;
  const Activation act = config.activation;
  nn::Var<T> x;
  switch (branch_index) {
    case 1:
      x = nn::activation(tape, nn::conv2d(tape, input, p, s + ".b1.entry", 1), act);
      break;
    case 2:
      x = nn::activation(tape, nn::conv2d(tape, input, p, s + ".b2.dsc1", 2), act);
      break;
    case 3:
      x = nn::activation(tape, nn::conv2d(tape, input, p, s + ".b3.dsc1", 2), act);
      x = nn::activation(tape, nn::conv2d(tape, x, p, s + ".b3.dsc2", 2), act);
      break;
    default:
      throw ContractViolation("branch index must be 1, 2 or 3, got " + std::to_string(branch_index));
  }
  for (int b = 1; b <= config.blocks_per_fec; ++b) {
    for (int u = 1; u <= config.units_per_block; ++u) {
      const std::string unit = unit_prefix(stage, branch_index, b, u);
      nn::Var<T> h = nn::activation(tape, nn::conv2d(tape, x, p, unit + ".conv1", 1), act);
      x = nn::add(tape, x, nn::conv2d(tape, h, p, unit + ".conv2", 1));
    }
  }
  return x;
}

template <typename T>
nn::Var<T> fuse_transpose(nn::Tape<T>& tape, const nn::Var<T>& fine, const nn::Var<T>& mid,
                          const nn::Var<T>& coarse, const ModelConfig& config) {
  const int c = fine->value.channels();
  if (mid->value.channels() != c || coarse->value.channels() != c) {
    throw ContractViolation("fuse_transpose: branch channel counts differ (" +
                            fine->value.shape_string() + ", " + mid->value.shape_string() + ", " +
                            coarse->value.shape_string() + ")");
  }
  const int h = fine->value.height();
  const int w = fine->value.width();
  nn::Var<T> fused = nn::concat_channels<T>(
      tape, {fine, nn::resize_bilinear(tape, mid, h, w), nn::resize_bilinear(tape, coarse, h, w)});
  if (!config.use_transpose) return nn::concat_channels<T>(tape, {fused, fused});

  // (m = 3, n = C) -> (n, m): output channel n*3 + m reads input m*C + n.
  std::vector<int> order(static_cast<std::size_t>(3 * c));
  for (int n = 0; n < c; ++n) {
    for (int m = 0; m < 3; ++m) order[n * 3 + m] = m * c + n;
  }
  return nn::concat_channels<T>(tape, {nn::select_channels(tape, fused, std::move(order)), fused});
}

template <typename T>
nn::Var<T> channel_attention(nn::Tape<T>& tape, const nn::Var<T>& features,
                             const ModelConfig& config) {
  if (!config.use_attention) return features;
  return nn::max_mean_attention(tape, features);
}

template <typename T>
nn::Var<T> head_responses(nn::Tape<T>& tape, const nn::Var<T>& features, int stage,
                          const ModelParams<T>& params) {
  return nn::conv2d(tape, features, params.tensors, stage_prefix(stage) + ".head", 1);
}

template <typename T>
nn::Var<T> heatmap_head(nn::Tape<T>& tape, const nn::Var<T>& features, int stage,
                        const ModelParams<T>& params, const ModelConfig& config) {
  (void)config;
  return nn::minmax_normalize(tape, head_responses(tape, features, stage, params));
}

template <typename T>
StageOutput<T> msff(nn::Tape<T>& tape, const nn::Var<T>& input, int stage,
                    const ModelParams<T>& params, const ModelConfig& config,
                    const StageTargets* targets, bool emit_next) {
  const Volume<T>& in = input->value;
  if (in.channels() != config.feature_channels() || in.height() != config.heatmap_size ||
      in.width() != config.heatmap_size) {
    throw ContractViolation("msff: expected " + std::to_string(config.feature_channels()) + "x" +
                            std::to_string(config.heatmap_size) + "x" +
                            std::to_string(config.heatmap_size) + " input, got " +
                            in.shape_string());
  }
  nn::Var<T> b1 = branch(tape, input, stage, 1, params, config);
  nn::Var<T> b2 = branch(tape, input, stage, 2, params, config);
  nn::Var<T> b3 = branch(tape, input, stage, 3, params, config);
  nn::Var<T> fused = fuse_transpose(tape, b1, b2, b3, config);
  nn::Var<T> attended = channel_attention(tape, fused, config);

  StageOutput<T> out;
  out.responses = head_responses(tape, attended, stage, params);
  if (config.use_aomr) {
    out.responses = nn::mix_channels(tape, out.responses, reinforcement_matrix(hand_skeleton()));
  }
  out.heatmaps = nn::minmax_normalize(tape, out.responses);
  if (!emit_next) return out;

  nn::Var<T> forwarded = out.heatmaps;
  if (config.use_aomr && targets != nullptr) {
    const auto factors =
        reweight_factors(decode_joints(out.heatmaps->value), targets->joints, targets->occluded);
    forwarded = nn::scale_channels(tape, out.heatmaps,
                                   std::vector<double>(factors.begin(), factors.end()));
  }
  nn::Var<T> next = nn::concat_channels<T>(tape, {attended, forwarded});
  out.next_input = nn::activation(
      tape, nn::conv2d(tape, next, params.tensors, stage_prefix(stage) + ".proj", 1),
      config.activation);
  return out;
}

template <typename T>
std::vector<StageOutput<T>> model(nn::Tape<T>& tape, const nn::Var<T>& crop,
                                  const ModelParams<T>& params, const ModelConfig& config,
                                  const StageTargets* targets) {
  nn::Var<T> x = sshfr(tape, centered(tape, crop), params, config);
  std::vector<StageOutput<T>> stages;
  stages.reserve(config.num_msff);
  for (int i = 1; i <= config.num_msff; ++i) {
    stages.push_back(msff(tape, x, i, params, config, targets, i < config.num_msff));
    x = stages.back().next_input;
  }
  return stages;
}

}  // namespace graph

template <typename T>
FeatureVolume<T> sshfr_forward(const FeatureVolume<T>& crop, const ModelParams<T>& params,
                               const ModelConfig& config) {
  nn::Tape<T> tape;
  return graph::sshfr(tape, nn::make_var(crop), params, config)->value;
}

template <typename T>
FeatureVolume<T> branch_forward(const FeatureVolume<T>& input, int branch_index,
                                const ModelParams<T>& params, const ModelConfig& config,
                                int stage) {
  nn::Tape<T> tape;
  return graph::branch(tape, nn::make_var(input), stage, branch_index, params, config)->value;
}

template <typename T>
FeatureVolume<T> fuse_transpose(const FeatureVolume<T>& fine, const FeatureVolume<T>& mid,
                                const FeatureVolume<T>& coarse, const ModelConfig& config) {
  nn::Tape<T> tape;
  return graph::fuse_transpose(tape, nn::make_var(fine), nn::make_var(mid), nn::make_var(coarse),
                               config)
      ->value;
}

template <typename T>
FeatureVolume<T> channel_attention(const FeatureVolume<T>& features, const ModelConfig& config) {
  nn::Tape<T> tape;
  return graph::channel_attention(tape, nn::make_var(features), config)->value;
}

template <typename T>
HeatmapStack<T> heatmap_head(const FeatureVolume<T>& features, const ModelParams<T>& params,
                             const ModelConfig& config, int stage) {
  nn::Tape<T> tape;
  return graph::heatmap_head(tape, nn::make_var(features), stage, params, config)->value;
}

template <typename T>
std::pair<FeatureVolume<T>, HeatmapStack<T>> msff_forward(const FeatureVolume<T>& input,
                                                          int stage,
                                                          const ModelParams<T>& params,
                                                          const ModelConfig& config,
                                                          const StageTargets* targets) {
  nn::Tape<T> tape;
  auto out = graph::msff(tape, nn::make_var(input), stage, params, config, targets, true);
  return {std::move(out.next_input->value), std::move(out.heatmaps->value)};
}

template <typename T>
std::vector<HeatmapStack<T>> model_forward(const FeatureVolume<T>& crop,
                                           const ModelParams<T>& params,
                                           const ModelConfig& config,
                                           const StageTargets* targets) {
  nn::Tape<T> tape;
  std::vector<HeatmapStack<T>> out;
  for (auto& stage : graph::model(tape, nn::make_var(crop), params, config, targets)) {
    out.push_back(std::move(stage.heatmaps->value));
  }
  return out;
}

#define MSFF_INSTANTIATE(T)                                                                       \
  template ModelParams<T> init_model<T>(const ModelConfig&, std::uint64_t);                      \
  template void check_params<T>(const ModelParams<T>&, const ModelConfig&);                      \
  template JointSet decode_joints<T>(const HeatmapStack<T>&);                                    \
  template nn::Var<T> graph::sshfr<T>(nn::Tape<T>&, const nn::Var<T>&, const ModelParams<T>&,    \
                                      const ModelConfig&);                                       \
  template nn::Var<T> graph::branch<T>(nn::Tape<T>&, const nn::Var<T>&, int, int,                \
                                       const ModelParams<T>&, const ModelConfig&);               \
  template nn::Var<T> graph::fuse_transpose<T>(nn::Tape<T>&, const nn::Var<T>&,                  \
                                               const nn::Var<T>&, const nn::Var<T>&,             \
                                               const ModelConfig&);                              \
  template nn::Var<T> graph::channel_attention<T>(nn::Tape<T>&, const nn::Var<T>&,               \
                                                  const ModelConfig&);                           \
  template nn::Var<T> graph::head_responses<T>(nn::Tape<T>&, const nn::Var<T>&, int,             \
                                               const ModelParams<T>&);                           \
  template nn::Var<T> graph::heatmap_head<T>(nn::Tape<T>&, const nn::Var<T>&, int,               \
                                             const ModelParams<T>&, const ModelConfig&);         \
  template graph::StageOutput<T> graph::msff<T>(nn::Tape<T>&, const nn::Var<T>&, int,            \
                                                const ModelParams<T>&, const ModelConfig&,       \
                                                const StageTargets*, bool);                      \
  template std::vector<graph::StageOutput<T>> graph::model<T>(nn::Tape<T>&, const nn::Var<T>&,              \
                                                   const ModelParams<T>&, const ModelConfig&,    \
                                                   const StageTargets*);                         \
  template FeatureVolume<T> sshfr_forward<T>(const FeatureVolume<T>&, const ModelParams<T>&,     \
                                             const ModelConfig&);                                \
  template FeatureVolume<T> branch_forward<T>(const FeatureVolume<T>&, int,                      \
                                              const ModelParams<T>&, const ModelConfig&, int);   \
  template FeatureVolume<T> fuse_transpose<T>(const FeatureVolume<T>&, const FeatureVolume<T>&,  \
                                              const FeatureVolume<T>&, const ModelConfig&);      \
  template FeatureVolume<T> channel_attention<T>(const FeatureVolume<T>&, const ModelConfig&);   \
  template HeatmapStack<T> heatmap_head<T>(const FeatureVolume<T>&, const ModelParams<T>&,       \
                                           const ModelConfig&, int);                             \
  template std::pair<FeatureVolume<T>, HeatmapStack<T>> msff_forward<T>(                         \
      const FeatureVolume<T>&, int, const ModelParams<T>&, const ModelConfig&,                   \
      const StageTargets*);                                                                      \
  template std::vector<HeatmapStack<T>> model_forward<T>(                                        \
      const FeatureVolume<T>&, const ModelParams<T>&, const ModelConfig&, const StageTargets*);

MSFF_INSTANTIATE(float)
MSFF_INSTANTIATE(double)

#undef MSFF_INSTANTIATE

}  // namespace msff
