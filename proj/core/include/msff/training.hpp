#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "msff/model.hpp"
#include "msff/stage1.hpp"
#include "msff/synth_data.hpp"

namespace msff {

enum class OptimizerKind { PlainGradient, Momentum, AdaptiveMoment };

struct TrainConfig {
  int epochs = 10;
  int batch_size = 8;
  double learning_rate = 1e-3;
  OptimizerKind optimizer = OptimizerKind::AdaptiveMoment;
  std::uint64_t seed = 0;
  /// Floor added to every stage error before the stage weights are normalized.
  double losswise_epsilon = 1e-3;
  /// Use the unnormalized mean joint errors as stage weights.
  bool raw_losswise = false;
  /// Checkpoint period in optimizer steps; 0 disables periodic checkpoints.
  int checkpoint_every = 0;
  /// Hard cap on optimizer steps; 0 means epochs * batches_per_epoch.
  int max_steps = 0;
  double momentum = 0.9;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_epsilon = 1e-8;
  /// Gaussian target width in heatmap cells.
  double target_sigma = kDefaultTargetSigma;
  /// Oracle localizer margin.
  double region_margin = kDefaultRegionMargin;

  void validate() const;
  friend bool operator==(const TrainConfig&, const TrainConfig&) = default;
};

/// One hand, cropped and ready for the network.
struct TrainingExample {
  Image crop;
  CropTransform transform;
  /// Ground truth in heatmap grid units.
  StageTargets targets;
  HeatmapStack<float> target_maps;
  /// Ground truth in source pixels.
  JointSet source_joints{};
  /// max(width, height) of the visible-joint bounding box, source pixels.
  double normalizer = 1.0;
  int sample_index = 0;
  int hand_index = 0;
};

/// Oracle-localizes and crops every hand of the dataset. Hands without
/// visible joints are skipped with a warning.
std::vector<TrainingExample> prepare_examples(const Dataset& dataset, const ModelConfig& model,
                                              double target_sigma, double margin);

/// Mean squared difference over the maps of visible joints only. If `grad` is
/// given it receives d(mse)/d(pred), zero on occluded maps. All joints
/// occluded -> 0 and a warning.
template <typename T>
double heatmap_mse(const HeatmapStack<T>& pred, const HeatmapStack<T>& target,
                   const OcclusionMask& occluded, HeatmapStack<T>* grad = nullptr);

/// Per-stage importance: mean visible-joint distance of each stage's
/// prediction to the ground truth, plus epsilon, normalized to sum to one.
/// use_losswise = false gives (0, ..., 0, 1); raw = true skips the epsilon
/// floor and the normalization.
std::vector<double> msff_weights(const std::vector<JointSet>& stage_predictions,
                                 const JointSet& gt, const OcclusionMask& occluded,
                                 double epsilon, bool use_losswise = true, bool raw = false);

double total_loss(const std::vector<double>& stage_losses, const std::vector<double>& weights);

struct LossBreakdown {
  std::vector<double> stage_losses;
  std::vector<double> weights;
  double total = 0.0;
  std::vector<JointSet> stage_predictions;
};

/// Training-mode forward pass and loss for one example. If `grads` is given
/// (zero-initialized, same layout as params), grad_scale * dLoss/dParams is
/// accumulated into it. Stage weights are constants of the pass.
template <typename T>
LossBreakdown example_loss(const ModelParams<T>& params, const ModelConfig& config,
                           const Volume<T>& crop, const StageTargets& targets,
                           const HeatmapStack<T>& target_maps, const TrainConfig& train,
                           ModelParams<T>* grads = nullptr, double grad_scale = 1.0);

struct OptimizerState {
  OptimizerKind kind = OptimizerKind::AdaptiveMoment;
  std::int64_t t = 0;
  /// Momentum buffer or first moment.
  ModelParams<float> first;
  /// Second moment (adaptive-moment only).
  ModelParams<float> second;
};

OptimizerState make_optimizer(const ModelParams<float>& params, OptimizerKind kind);

void optimizer_step(ModelParams<float>& params, const ModelParams<float>& grads,
                    OptimizerState& state, const TrainConfig& config);

struct LogRow {
  int step = 0;
  int epoch = 0;
  std::vector<double> stage_losses;
  std::vector<double> weights;
  double total = 0.0;
  /// Mean distance (heatmap cells) of the last stage's prediction over the
  /// batch, measured during the forward pass of this step.
  double mean_joint_error = 0.0;
};

struct TrainState {
  ModelConfig model_config;
  TrainConfig train_config;
  ModelParams<float> params;
  OptimizerState optimizer;
  int step = 0;
  int epoch = 0;
  /// Serialized shuffling engine of the current epoch.
  std::string rng_state;
  std::vector<double> loss_history;
};

/// Raised when a loss becomes NaN or infinite.
class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& what, std::string dump_path)
      : Error(what), dump_path_(std::move(dump_path)) {}
  const std::string& dump_path() const noexcept { return dump_path_; }

 private:
  std::string dump_path_;
};

struct TrainHooks {
  std::function<void(const LogRow&)> on_step;
  /// Called every checkpoint_every steps with the updated state.
  std::function<void(const TrainState&)> on_checkpoint;
  /// Where the state is written if training diverges; empty to skip.
  std::filesystem::path divergence_dump;
};

struct TrainResult {
  TrainState state;
  std::vector<LogRow> log;
};

/// Fresh state: params from init_model(model, train.seed).
TrainState initial_state(const ModelConfig& model, const TrainConfig& train);

/// Runs from `state.step` up to the configured step budget. Batches are drawn
/// from a per-epoch permutation derived from (seed, epoch), so a resumed run
/// sees exactly the batches an uninterrupted one would.
TrainResult train(const std::vector<TrainingExample>& examples, TrainState state,
                  const TrainHooks& hooks = {});

TrainResult train(const std::vector<TrainingExample>& examples, const ModelConfig& model,
                  const TrainConfig& config, const TrainHooks& hooks = {});

int batches_per_epoch(std::size_t example_count, const TrainConfig& config);
int total_steps(std::size_t example_count, const TrainConfig& config);

// ---------------------------------------------------------------------------
// Checkpoints: versioned little-endian container with a JSON header and
// float32 tensors.

inline constexpr std::uint32_t kCheckpointVersion = 1;

void save_checkpoint(const TrainState& state, const std::filesystem::path& path);
TrainState load_checkpoint(const std::filesystem::path& path);
/// Also checks that the stored model config equals `expected`.
TrainState load_checkpoint(const std::filesystem::path& path, const ModelConfig& expected);

}  // namespace msff
