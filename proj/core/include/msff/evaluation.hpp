#pragma once

#include <array>
#include <cmath>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "msff/model.hpp"
#include "msff/synth_data.hpp"
#include "msff/training.hpp"

namespace msff {

/// A rate was requested over an empty set (no visible joint).
class UndefinedRate : public Error {
 public:
  using Error::Error;
};

inline constexpr double kReferenceTau = 0.2;
inline constexpr double kSpreadThreshold = 1e-6;

/// 0, 0.1, ..., 0.5
std::vector<double> default_taus();

/// Fraction of visible joints with distance / normalizer < tau. One
/// normalizer per hand. Throws UndefinedRate when nothing is visible.
double pck(const std::vector<JointSet>& preds, const std::vector<JointSet>& gts,
           const std::vector<OcclusionMask>& occluded, double tau,
           const std::vector<double>& normalizers);

std::vector<double> pck_curve(const std::vector<JointSet>& preds,
                              const std::vector<JointSet>& gts,
                              const std::vector<OcclusionMask>& occluded,
                              const std::vector<double>& normalizers,
                              const std::vector<double>& taus = default_taus());

/// Per-joint-type PCK at one tau; joints never visible get nullopt.
std::array<std::optional<double>, kJointCount> per_joint_pck(
    const std::vector<JointSet>& preds, const std::vector<JointSet>& gts,
    const std::vector<OcclusionMask>& occluded, double tau,
    const std::vector<double>& normalizers);

/// Mean distance from every cell of `map` above kSpreadThreshold to `peak`,
/// divided by the map diagonal. 0 when no cell qualifies.
template <typename T>
double spread(const HeatmapStack<T>& maps, int channel, const Point2& peak) {
  if (channel < 0 || channel >= maps.channels()) {
    throw ContractViolation("spread: channel out of range");
  }
  const auto values = maps.channel(channel);
  const int w = maps.width();
  const int h = maps.height();
  double sum = 0.0;
  std::size_t n = 0;
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      if (static_cast<double>(values[static_cast<std::size_t>(y) * w + x]) > kSpreadThreshold) {
        sum += std::hypot(x - peak.x, y - peak.y);
        ++n;
      }
    }
  }
  if (n == 0) return 0.0;
  return sum / static_cast<double>(n) / std::hypot(static_cast<double>(w), static_cast<double>(h));
}

/// One joint instance as seen by the spread analysis.
struct JointRecord {
  int joint = 0;
  double spread = 0.0;
  bool correct = false;
};

struct SpreadBin {
  double lower = 0.0;
  double upper = 0.0;
  std::size_t count = 0;
  /// Mean correctness over the bin.
  double mean_accuracy = 0.0;
  /// Extremes of the per-joint-type accuracy inside the bin.
  double min_accuracy = 0.0;
  double max_accuracy = 0.0;
};

/// Buckets joints by spread quantile. Empty buckets are left out, so the
/// result has at most n_bins entries, ordered by spread.
std::vector<SpreadBin> spread_accuracy_bins(const std::vector<JointRecord>& records, int n_bins);

struct RuntimeStats {
  double seconds = 0.0;
  double hands_per_second = 0.0;
};

struct EvalReport {
  std::string variant = "model";
  std::vector<double> taus;
  std::vector<double> pck_curve;
  double reference_tau = kReferenceTau;
  std::array<std::optional<double>, kJointCount> per_joint_pck{};
  std::vector<SpreadBin> spread_bins;
  std::size_t images = 0;
  std::size_t hands = 0;
  std::size_t visible_joints = 0;
  /// Mean visible-joint error in source pixels and in normalizer units.
  double mean_error_px = 0.0;
  double mean_error_normalized = 0.0;
  std::size_t parameter_count = 0;
  nlohmann::json config;
  RuntimeStats runtime;

  double pck_at(double tau) const;
};

/// Runtime stats are omitted when include_runtime is false, which makes two
/// reports of one checkpoint compare equal as JSON.
nlohmann::json report_to_json(const EvalReport& report, bool include_runtime = true);

/// "tau,pck" header then one row per tau.
std::string pck_csv(const EvalReport& report);

struct EvalOptions {
  double reference_tau = kReferenceTau;
  int spread_bins = 5;
  double region_margin = kDefaultRegionMargin;
  std::vector<double> taus = default_taus();
};

/// Per-hand result of the full inference pipeline.
struct HandPrediction {
  int sample_index = 0;
  int hand_index = 0;
  JointSet predicted{};
  JointSet ground_truth{};
  OcclusionMask occluded{};
  double normalizer = 1.0;
  std::array<double, kJointCount> spreads{};
};

/// Oracle localize, crop, forward, decode the last stage and map back to
/// source pixels, for every hand of the dataset.
std::vector<HandPrediction> predict_dataset(const Dataset& dataset,
                                            const ModelParams<float>& params,
                                            const ModelConfig& config, double region_margin);

EvalReport evaluate(const Dataset& dataset, const ModelParams<float>& params,
                    const ModelConfig& config, const EvalOptions& options = {});

/// Loads the checkpoint and checks it against `config`.
EvalReport evaluate(const Dataset& dataset, const std::filesystem::path& checkpoint,
                    const ModelConfig& config, const EvalOptions& options = {});

struct AblationVariant {
  std::string name;
  ModelConfig config;
};

/// full, del_sshfr, del_tp, del_at, del_lw, del_aomr, then n1..n4.
std::vector<AblationVariant> ablation_variants(const ModelConfig& base);

struct AblationResult {
  std::vector<std::string> order;
  std::map<std::string, EvalReport> reports;
  /// Variant name -> error message for variants that failed.
  std::map<std::string, std::string> failures;
  std::map<std::string, std::vector<LogRow>> logs;
};

struct AblationHooks {
  std::function<void(const std::string& variant)> on_start;
  /// Called after each variant trains, with its final state.
  std::function<void(const std::string& variant, const TrainState&)> on_trained;
};

/// Trains every variant from the same seed on `dataset` and evaluates it on
/// the same data. A failing variant is recorded and the rest still run.
AblationResult run_ablation(const Dataset& dataset, const ModelConfig& base,
                            const TrainConfig& train_config, const EvalOptions& options = {},
                            const AblationHooks& hooks = {});

/// variant,pck@0.1,pck@ref,pck@0.5,mean_error_px,parameters,status
std::string ablation_table(const AblationResult& result);

}  // namespace msff
