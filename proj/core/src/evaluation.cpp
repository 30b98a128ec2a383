#include "msff/evaluation.hpp"

#include <algorithm>
#include <chrono>
#include <iomanip>
#include <sstream>

#include "msff/json_io.hpp"
#include "msff/log.hpp"
#include "msff/stage1.hpp"

namespace msff {

std::vector<double> default_taus() { return {0.0, 0.1, 0.2, 0.3, 0.4, 0.5}; }

namespace {

void check_sizes(const std::vector<JointSet>& preds, const std::vector<JointSet>& gts,
                 const std::vector<OcclusionMask>& occluded,
                 const std::vector<double>& normalizers) {
  if (preds.size() != gts.size() || preds.size() != occluded.size() ||
      preds.size() != normalizers.size()) {
    throw ContractViolation("pck: preds, gts, masks and normalizers differ in length");
  }
  for (double n : normalizers) {
    if (!(n > 0.0)) throw ContractViolation("pck: normalizers must be positive");
  }
}

}  // namespace

double pck(const std::vector<JointSet>& preds, const std::vector<JointSet>& gts,
           const std::vector<OcclusionMask>& occluded, double tau,
           const std::vector<double>& normalizers) {
  if (!(tau >= 0.0)) throw ContractViolation("pck: tau must be >= 0");
  check_sizes(preds, gts, occluded, normalizers);
  std::size_t hits = 0;
  std::size_t total = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    for (int k = 0; k < kJointCount; ++k) {
      if (occluded[i][k]) continue;
      ++total;
      if (distance(preds[i][k], gts[i][k]) / normalizers[i] < tau) ++hits;
    }
  }
  if (total == 0) throw UndefinedRate("pck: no visible joints");
  return static_cast<double>(hits) / static_cast<double>(total);
}

std::vector<double> pck_curve(const std::vector<JointSet>& preds,
                              const std::vector<JointSet>& gts,
                              const std::vector<OcclusionMask>& occluded,
                              const std::vector<double>& normalizers,
                              const std::vector<double>& taus) {
  std::vector<double> curve;
  curve.reserve(taus.size());
  for (double tau : taus) curve.push_back(pck(preds, gts, occluded, tau, normalizers));
  return curve;
}

std::array<std::optional<double>, kJointCount> per_joint_pck(
    const std::vector<JointSet>& preds, const std::vector<JointSet>& gts,
    const std::vector<OcclusionMask>& occluded, double tau,
    const std::vector<double>& normalizers) {
  check_sizes(preds, gts, occluded, normalizers);
  std::array<std::optional<double>, kJointCount> out{};
  for (int k = 0; k < kJointCount; ++k) {
    std::size_t hits = 0;
    std::size_t total = 0;
    for (std::size_t i = 0; i < preds.size(); ++i) {
      if (occluded[i][k]) continue;
      ++total;
      if (distance(preds[i][k], gts[i][k]) / normalizers[i] < tau) ++hits;
    }
    if (total > 0) out[k] = static_cast<double>(hits) / static_cast<double>(total);
  }
  return out;
}

std::vector<SpreadBin> spread_accuracy_bins(const std::vector<JointRecord>& records, int n_bins) {
  if (n_bins < 2) throw ContractViolation("spread_accuracy_bins: n_bins must be >= 2");
  if (records.empty()) return {};

  std::vector<double> sorted;
  sorted.reserve(records.size());
  for (const auto& r : records) sorted.push_back(r.spread);
  std::sort(sorted.begin(), sorted.end());

  // Interior edges at the i/n_bins quantiles (nearest rank).
  std::vector<double> edges;
  for (int i = 1; i < n_bins; ++i) {
    const std::size_t rank = static_cast<std::size_t>(
        std::ceil(static_cast<double>(i) * sorted.size() / n_bins));
    edges.push_back(sorted[std::min(sorted.size() - 1, rank == 0 ? 0 : rank - 1)]);
  }

  struct Accumulator {
    std::size_t count = 0;
    std::size_t correct = 0;
    double lower = 0.0;
    double upper = 0.0;
    std::array<std::size_t, kJointCount> joint_count{};
    std::array<std::size_t, kJointCount> joint_correct{};
  };
  std::vector<Accumulator> acc(n_bins);
  for (const auto& r : records) {
    const auto bucket = static_cast<std::size_t>(
        std::count_if(edges.begin(), edges.end(), [&](double e) { return e < r.spread; }));
    Accumulator& a = acc[bucket];
    if (a.count == 0) {
      a.lower = a.upper = r.spread;
    } else {
      a.lower = std::min(a.lower, r.spread);
      a.upper = std::max(a.upper, r.spread);
    }
    ++a.count;
    a.correct += r.correct ? 1 : 0;
    if (r.joint >= 0 && r.joint < kJointCount) {
      ++a.joint_count[r.joint];
      a.joint_correct[r.joint] += r.correct ? 1 : 0;
    }
  }

  std::vector<SpreadBin> bins;
  for (const auto& a : acc) {
    if (a.count == 0) continue;
    SpreadBin b;
    b.lower = a.lower;
    b.upper = a.upper;
    b.count = a.count;
    b.mean_accuracy = static_cast<double>(a.correct) / static_cast<double>(a.count);
    b.min_accuracy = 1.0;
    b.max_accuracy = 0.0;
    bool any = false;
    for (int k = 0; k < kJointCount; ++k) {
      if (a.joint_count[k] == 0) continue;
      const double rate = static_cast<double>(a.joint_correct[k]) / a.joint_count[k];
      b.min_accuracy = std::min(b.min_accuracy, rate);
      b.max_accuracy = std::max(b.max_accuracy, rate);
      any = true;
    }
    if (!any) b.min_accuracy = b.max_accuracy = b.mean_accuracy;
    bins.push_back(b);
  }
  return bins;
}

double EvalReport::pck_at(double tau) const {
  for (std::size_t i = 0; i < taus.size(); ++i) {
    if (std::abs(taus[i] - tau) < 1e-12) return pck_curve[i];
  }
  throw ArgumentError("EvalReport: no PCK value for tau " + std::to_string(tau));
}

nlohmann::json report_to_json(const EvalReport& report, bool include_runtime) {
  Json curve = Json::array();
  for (std::size_t i = 0; i < report.taus.size(); ++i) {
    curve.push_back({{"tau", report.taus[i]}, {"pck", report.pck_curve[i]}});
  }
  Json per_joint = Json::array();
  for (const auto& v : report.per_joint_pck) per_joint.push_back(v ? Json(*v) : Json(nullptr));
  Json bins = Json::array();
  for (const auto& b : report.spread_bins) {
    bins.push_back({{"lower", b.lower},
                    {"upper", b.upper},
                    {"count", b.count},
                    {"mean_accuracy", b.mean_accuracy},
                    {"min_accuracy", b.min_accuracy},
                    {"max_accuracy", b.max_accuracy}});
  }
  Json j{{"variant", report.variant},
         {"pck_curve", curve},
         {"reference_tau", report.reference_tau},
         {"per_joint_pck", per_joint},
         {"spread_bins", bins},
         {"images", report.images},
         {"hands", report.hands},
         {"visible_joints", report.visible_joints},
         {"mean_error_px", report.mean_error_px},
         {"mean_error_normalized", report.mean_error_normalized},
         {"parameter_count", report.parameter_count},
         {"config", report.config}};
  if (include_runtime) {
    j["runtime"] = {{"seconds", report.runtime.seconds},
                    {"hands_per_second", report.runtime.hands_per_second}};
  }
  return j;
}

std::string pck_csv(const EvalReport& report) {
  std::ostringstream out;
  out << "tau,pck\n" << std::setprecision(17);
  for (std::size_t i = 0; i < report.taus.size(); ++i) {
    out << report.taus[i] << ',' << report.pck_curve[i] << '\n';
  }
  return out.str();
}

std::vector<HandPrediction> predict_dataset(const Dataset& dataset,
                                            const ModelParams<float>& params,
                                            const ModelConfig& config, double region_margin) {
  config.validate();
  check_params(params, config);
  std::vector<HandPrediction> out;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const Sample& sample = dataset.samples[i];
    const OracleDetection detection = detect_hands_oracle(
        sample.annotation, sample.image.width(), sample.image.height(), region_margin);
    for (const std::string& w : detection.warnings) log::warn(w);
    for (std::size_t r = 0; r < detection.regions.size(); ++r) {
      const HandInstance& hand = sample.annotation.hands[detection.hand_index[r]];
      const HandCrop crop = crop_hand(sample.image, detection.regions[r], config.crop_size);
      const auto stages = model_forward(crop.pixels, params, config);
      const HeatmapStack<float>& last = stages.back();
      const JointSet decoded = decode_joints(last);

      HandPrediction p;
      p.sample_index = static_cast<int>(i);
      p.hand_index = detection.hand_index[r];
      p.predicted = map_joints_to_source(decoded, crop.transform, config);
      p.ground_truth = hand.joints;
      p.occluded = occlusion_mask(hand.joints);
      const auto bounds = visible_bounds(hand.joints);
      p.normalizer = std::max({bounds->w, bounds->h, 1.0});
      for (int k = 0; k < kJointCount; ++k) p.spreads[k] = spread(last, k, decoded[k]);
      out.push_back(p);
    }
  }
  return out;
}

EvalReport evaluate(const Dataset& dataset, const ModelParams<float>& params,
                    const ModelConfig& config, const EvalOptions& options) {
  const auto start = std::chrono::steady_clock::now();
  const auto predictions = predict_dataset(dataset, params, config, options.region_margin);

  std::vector<JointSet> preds;
  std::vector<JointSet> gts;
  std::vector<OcclusionMask> masks;
  std::vector<double> norms;
  std::vector<JointRecord> records;
  double error_px = 0.0;
  double error_norm = 0.0;
  std::size_t visible = 0;
  for (const auto& p : predictions) {
    preds.push_back(p.predicted);
    gts.push_back(p.ground_truth);
    masks.push_back(p.occluded);
    norms.push_back(p.normalizer);
    for (int k = 0; k < kJointCount; ++k) {
      if (p.occluded[k]) continue;
      const double d = distance(p.predicted[k], p.ground_truth[k]);
      error_px += d;
      error_norm += d / p.normalizer;
      ++visible;
      records.push_back({k, p.spreads[k], d / p.normalizer < options.reference_tau});
    }
  }

  EvalReport report;
  report.taus = options.taus;
  report.pck_curve = pck_curve(preds, gts, masks, norms, options.taus);
  report.reference_tau = options.reference_tau;
  report.per_joint_pck = per_joint_pck(preds, gts, masks, options.reference_tau, norms);
  report.spread_bins = spread_accuracy_bins(records, options.spread_bins);
  report.images = dataset.samples.size();
  report.hands = predictions.size();
  report.visible_joints = visible;
  report.mean_error_px = error_px / static_cast<double>(visible);
  report.mean_error_normalized = error_norm / static_cast<double>(visible);
  report.parameter_count = params.count();
  report.config = {{"model", to_json(config)},
                   {"dataset", dataset.root.string()},
                   {"dataset_seed", dataset.manifest.seed},
                   {"region_margin", options.region_margin},
                   {"spread_bins", options.spread_bins}};
  const double seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  report.runtime.seconds = seconds;
  report.runtime.hands_per_second = seconds > 0.0 ? predictions.size() / seconds : 0.0;
  return report;
}

EvalReport evaluate(const Dataset& dataset, const std::filesystem::path& checkpoint,
                    const ModelConfig& config, const EvalOptions& options) {
  const TrainState state = load_checkpoint(checkpoint, config);
  EvalReport report = evaluate(dataset, state.params, config, options);
  report.config["checkpoint"] = checkpoint.string();
  report.config["checkpoint_step"] = state.step;
  return report;
}

std::vector<AblationVariant> ablation_variants(const ModelConfig& base) {
  std::vector<AblationVariant> out;
  out.push_back({"full", base});
  ModelConfig c = base;
  c.use_sshfr = false;
  out.push_back({"del_sshfr", c});
  c = base;
  c.use_transpose = false;
  out.push_back({"del_tp", c});
  c = base;
  c.use_attention = false;
  out.push_back({"del_at", c});
  c = base;
  c.use_losswise = false;
  out.push_back({"del_lw", c});
  c = base;
  c.use_aomr = false;
  out.push_back({"del_aomr", c});
  for (int n = 1; n <= 4; ++n) {
    c = base;
    c.num_msff = n;
    out.push_back({"n" + std::to_string(n), c});
  }
  return out;
}

AblationResult run_ablation(const Dataset& dataset, const ModelConfig& base,
                            const TrainConfig& train_config, const EvalOptions& options,
                            const AblationHooks& hooks) {
  base.validate();
  train_config.validate();
  AblationResult result;
  for (const auto& variant : ablation_variants(base)) {
    result.order.push_back(variant.name);
    if (hooks.on_start) hooks.on_start(variant.name);
    try {
      const auto examples = prepare_examples(dataset, variant.config, train_config.target_sigma,
                                             train_config.region_margin);
      TrainResult trained = train(examples, variant.config, train_config);
      if (hooks.on_trained) hooks.on_trained(variant.name, trained.state);
      EvalReport report = evaluate(dataset, trained.state.params, variant.config, options);
      report.variant = variant.name;
      report.config["train"] = to_json(train_config);
      result.logs[variant.name] = std::move(trained.log);
      result.reports.emplace(variant.name, std::move(report));
    } catch (const std::exception& e) {
      log::warn("ablation variant " + variant.name + " failed: " + e.what());
      result.failures[variant.name] = e.what();
    }
  }
  return result;
}

std::string ablation_table(const AblationResult& result) {
  std::ostringstream out;
  out << "variant,pck@0.1,pck@ref,pck@0.5,mean_error_px,parameters,status\n";
  for (const auto& name : result.order) {
    auto it = result.reports.find(name);
    if (it == result.reports.end()) {
      out << name << ",,,,,,failed\n";
      continue;
    }
    const EvalReport& r = it->second;
    auto at = [&](double tau) -> std::string {
      try {
        std::ostringstream s;
        s << r.pck_at(tau);
        return s.str();
      } catch (const ArgumentError&) {
        return "";
      }
    };
    out << name << ',' << at(0.1) << ',' << at(r.reference_tau) << ',' << at(0.5) << ','
        << r.mean_error_px << ',' << r.parameter_count << ",ok\n";
  }
  return out.str();
}

}  // namespace msff
