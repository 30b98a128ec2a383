#include "msff/training.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <sstream>

#include "msff/log.hpp"

namespace msff {

void TrainConfig::validate() const {
  if (epochs < 0) throw ConfigError("train.epochs", "must be >= 0");
  if (batch_size < 1) throw ConfigError("train.batch_size", "must be >= 1");
  if (!(learning_rate > 0.0)) throw ConfigError("train.learning_rate", "must be > 0");
  if (!(losswise_epsilon > 0.0)) throw ConfigError("train.losswise_epsilon", "must be > 0");
  if (checkpoint_every < 0) throw ConfigError("train.checkpoint_every", "must be >= 0");
  if (max_steps < 0) throw ConfigError("train.max_steps", "must be >= 0");
  if (momentum < 0.0 || momentum >= 1.0) throw ConfigError("train.momentum", "must be in [0,1)");
  if (beta1 < 0.0 || beta1 >= 1.0) throw ConfigError("train.beta1", "must be in [0,1)");
  if (beta2 < 0.0 || beta2 >= 1.0) throw ConfigError("train.beta2", "must be in [0,1)");
  if (!(adam_epsilon > 0.0)) throw ConfigError("train.adam_epsilon", "must be > 0");
  if (!(target_sigma > 0.0)) throw ConfigError("train.target_sigma", "must be > 0");
  if (region_margin < 0.0) throw ConfigError("train.region_margin", "must be >= 0");
}

std::vector<TrainingExample> prepare_examples(const Dataset& dataset, const ModelConfig& model,
                                              double target_sigma, double margin) {
  model.validate();
  std::vector<TrainingExample> examples;
  for (std::size_t i = 0; i < dataset.samples.size(); ++i) {
    const Sample& sample = dataset.samples[i];
    const OracleDetection detection = detect_hands_oracle(
        sample.annotation, sample.image.width(), sample.image.height(), margin);
    for (const std::string& w : detection.warnings) log::warn(w);
    for (std::size_t r = 0; r < detection.regions.size(); ++r) {
      const HandInstance& hand = sample.annotation.hands[detection.hand_index[r]];
      TrainingExample ex;
      HandCrop crop = crop_hand(sample.image, detection.regions[r], model.crop_size);
      ex.crop = std::move(crop.pixels);
      ex.transform = crop.transform;
      ex.source_joints = hand.joints;
      ex.targets.occluded = occlusion_mask(hand.joints);
      for (int k = 0; k < kJointCount; ++k) {
        if (!ex.targets.occluded[k]) {
          ex.targets.joints[k] = map_to_heatmap(hand.joints[k], ex.transform, model);
        }
      }
      ex.target_maps = gaussian_targets<float>(ex.targets.joints, target_sigma, model.heatmap_size,
                                               ex.targets.occluded);
      const auto bounds = visible_bounds(hand.joints);
      ex.normalizer = std::max({bounds->w, bounds->h, 1.0});
      ex.sample_index = static_cast<int>(i);
      ex.hand_index = detection.hand_index[r];
      examples.push_back(std::move(ex));
    }
  }
  return examples;
}

template <typename T>
double heatmap_mse(const HeatmapStack<T>& pred, const HeatmapStack<T>& target,
                   const OcclusionMask& occluded, HeatmapStack<T>* grad) {
  if (!pred.same_shape(target) || pred.channels() != kJointCount) {
    throw ContractViolation("heatmap_mse: shape mismatch " + pred.shape_string() + " vs " +
                            target.shape_string());
  }
  if (grad != nullptr) *grad = HeatmapStack<T>(pred.channels(), pred.height(), pred.width());
  const int visible = visible_count(occluded);
  if (visible == 0) {
    log::warn("heatmap_mse: every joint is occluded; loss defined as 0");
    return 0.0;
  }
  const std::size_t plane = pred.plane();
  const double count = static_cast<double>(visible) * plane;
  double sum = 0.0;
  for (int k = 0; k < kJointCount; ++k) {
    if (occluded[k]) continue;
    const auto p = pred.channel(k);
    const auto t = target.channel(k);
    for (std::size_t i = 0; i < plane; ++i) {
      const double d = static_cast<double>(p[i]) - static_cast<double>(t[i]);
      sum += d * d;
      if (grad != nullptr) grad->channel(k)[i] = static_cast<T>(2.0 * d / count);
    }
  }
  return sum / count;
}

std::vector<double> msff_weights(const std::vector<JointSet>& stage_predictions,
                                 const JointSet& gt, const OcclusionMask& occluded,
                                 double epsilon, bool use_losswise, bool raw) {
  const std::size_t n = stage_predictions.size();
  if (n == 0) throw ContractViolation("msff_weights: need at least one stage");
  std::vector<double> weights(n, 0.0);
  if (!use_losswise) {
    weights.back() = 1.0;
    return weights;
  }
  const int visible = visible_count(occluded);
  for (std::size_t i = 0; i < n; ++i) {
    double sum = 0.0;
    for (int k = 0; k < kJointCount; ++k) {
      if (!occluded[k]) sum += distance(stage_predictions[i][k], gt[k]);
    }
    weights[i] = visible > 0 ? sum / visible : 0.0;
  }
  if (raw) return weights;
  double total = 0.0;
  for (double& w : weights) {
    w += epsilon;
    total += w;
  }
  for (double& w : weights) w /= total;
  return weights;
}

double total_loss(const std::vector<double>& stage_losses, const std::vector<double>& weights) {
  if (stage_losses.size() != weights.size()) {
    throw ContractViolation("total_loss: " + std::to_string(stage_losses.size()) + " losses vs " +
                            std::to_string(weights.size()) + " weights");
  }
  double total = 0.0;
  for (std::size_t i = 0; i < weights.size(); ++i) total += stage_losses[i] * weights[i];
  return total;
}

template <typename T>
LossBreakdown example_loss(const ModelParams<T>& params, const ModelConfig& config,
                           const Volume<T>& crop, const StageTargets& targets,
                           const HeatmapStack<T>& target_maps, const TrainConfig& train,
                           ModelParams<T>* grads, double grad_scale) {
  nn::Tape<T> tape(grads != nullptr ? &grads->tensors : nullptr);
  const auto stages = graph::model(tape, nn::make_var(crop), params, config, &targets);

  LossBreakdown out;
  std::vector<HeatmapStack<T>> stage_grads(stages.size());
  for (std::size_t i = 0; i < stages.size(); ++i) {
    out.stage_losses.push_back(heatmap_mse(stages[i].responses->value, target_maps,
                                           targets.occluded,
                                           grads != nullptr ? &stage_grads[i] : nullptr));
    out.stage_predictions.push_back(decode_joints(stages[i].heatmaps->value));
  }
  out.weights = msff_weights(out.stage_predictions, targets.joints, targets.occluded,
                             train.losswise_epsilon, config.use_losswise, train.raw_losswise);
  out.total = total_loss(out.stage_losses, out.weights);

  if (grads != nullptr) {
    for (std::size_t i = 0; i < stages.size(); ++i) {
      const T factor = static_cast<T>(out.weights[i] * grad_scale);
      if (factor == T(0)) continue;
      T* g = stages[i].responses->grad_buffer().data();
      const T* src = stage_grads[i].data();
      for (std::size_t j = 0; j < stage_grads[i].size(); ++j) g[j] += factor * src[j];
    }
    tape.backward();
  }
  return out;
}

OptimizerState make_optimizer(const ModelParams<float>& params, OptimizerKind kind) {
  OptimizerState state;
  state.kind = kind;
  if (kind != OptimizerKind::PlainGradient) state.first = params.zeros_like();
  if (kind == OptimizerKind::AdaptiveMoment) state.second = params.zeros_like();
  return state;
}

void optimizer_step(ModelParams<float>& params, const ModelParams<float>& grads,
                    OptimizerState& state, const TrainConfig& config) {
  ++state.t;
  const double lr = config.learning_rate;
  const double bias1 = 1.0 - std::pow(config.beta1, static_cast<double>(state.t));
  const double bias2 = 1.0 - std::pow(config.beta2, static_cast<double>(state.t));
  for (auto& [name, p] : params.tensors) {
    const std::vector<float>& g = grads.tensors.at(name).values;
    switch (state.kind) {
      case OptimizerKind::PlainGradient:
        for (std::size_t i = 0; i < p.size(); ++i) {
          p.values[i] = static_cast<float>(p.values[i] - lr * g[i]);
        }
        break;
      case OptimizerKind::Momentum: {
        std::vector<float>& v = state.first.tensors.at(name).values;
        for (std::size_t i = 0; i < p.size(); ++i) {
          v[i] = static_cast<float>(config.momentum * v[i] + g[i]);
          p.values[i] = static_cast<float>(p.values[i] - lr * v[i]);
        }
        break;
      }
      case OptimizerKind::AdaptiveMoment: {
        std::vector<float>& m = state.first.tensors.at(name).values;
        std::vector<float>& v = state.second.tensors.at(name).values;
        for (std::size_t i = 0; i < p.size(); ++i) {
          const double gi = g[i];
          m[i] = static_cast<float>(config.beta1 * m[i] + (1.0 - config.beta1) * gi);
          v[i] = static_cast<float>(config.beta2 * v[i] + (1.0 - config.beta2) * gi * gi);
          const double mhat = m[i] / bias1;
          const double vhat = v[i] / bias2;
          p.values[i] = static_cast<float>(p.values[i] - lr * mhat / (std::sqrt(vhat) + config.adam_epsilon));
        }
        break;
      }
    }
  }
}

int batches_per_epoch(std::size_t example_count, const TrainConfig& config) {
  return static_cast<int>((example_count + config.batch_size - 1) / config.batch_size);
}

int total_steps(std::size_t example_count, const TrainConfig& config) {
  const int planned = config.epochs * batches_per_epoch(example_count, config);
  return config.max_steps > 0 ? std::min(planned, config.max_steps) : planned;
}

TrainState initial_state(const ModelConfig& model, const TrainConfig& train) {
  model.validate();
  train.validate();
  TrainState state;
  state.model_config = model;
  state.train_config = train;
  state.params = init_model<float>(model, train.seed);
  state.optimizer = make_optimizer(state.params, train.optimizer);
  return state;
}

TrainResult train(const std::vector<TrainingExample>& examples, TrainState state,
                  const TrainHooks& hooks) {
  const TrainConfig& cfg = state.train_config;
  const ModelConfig& model = state.model_config;
  cfg.validate();
  model.validate();
  check_params(state.params, model);
  if (examples.empty()) throw ArgumentError("train: dataset has no usable hands");
  if (state.optimizer.kind != cfg.optimizer) {
    throw ConfigError("train.optimizer", "differs from the optimizer state being resumed");
  }

  const int per_epoch = batches_per_epoch(examples.size(), cfg);
  const int budget = total_steps(examples.size(), cfg);
  TrainResult result;
  std::vector<std::size_t> order(examples.size());

  while (state.step < budget) {
    const int epoch = state.step / per_epoch;
    const int position = state.step % per_epoch;
    std::mt19937_64 rng(split_seed(cfg.seed, static_cast<std::uint64_t>(epoch)));
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    std::ostringstream engine;
    engine << rng;
    state.rng_state = engine.str();

    const std::size_t begin = static_cast<std::size_t>(position) * cfg.batch_size;
    const std::size_t end = std::min(begin + cfg.batch_size, examples.size());
    const double scale = 1.0 / static_cast<double>(end - begin);

    ModelParams<float> grads = state.params.zeros_like();
    LogRow row;
    row.step = state.step;
    row.epoch = epoch;
    row.stage_losses.assign(model.num_msff, 0.0);
    row.weights.assign(model.num_msff, 0.0);
    for (std::size_t b = begin; b < end; ++b) {
      const TrainingExample& ex = examples[order[b]];
      const LossBreakdown loss =
          example_loss(state.params, model, ex.crop, ex.targets, ex.target_maps, cfg, &grads, scale);
      for (int i = 0; i < model.num_msff; ++i) {
        row.stage_losses[i] += loss.stage_losses[i] * scale;
        row.weights[i] += loss.weights[i] * scale;
      }
      row.total += loss.total * scale;
      const JointSet& last = loss.stage_predictions.back();
      const int visible = visible_count(ex.targets.occluded);
      double err = 0.0;
      for (int k = 0; k < kJointCount; ++k) {
        if (!ex.targets.occluded[k]) err += distance(last[k], ex.targets.joints[k]);
      }
      row.mean_joint_error += (visible > 0 ? err / visible : 0.0) * scale;
    }

    if (!std::isfinite(row.total)) {
      std::string dump;
      if (!hooks.divergence_dump.empty()) {
        dump = hooks.divergence_dump.string();
        save_checkpoint(state, hooks.divergence_dump);
      }
      throw TrainingDiverged("non-finite loss at step " + std::to_string(state.step) +
                                 (dump.empty() ? "" : "; state written to " + dump),
                             dump);
    }

    optimizer_step(state.params, grads, state.optimizer, cfg);
    ++state.step;
    state.epoch = epoch;
    state.loss_history.push_back(row.total);
    if (hooks.on_step) hooks.on_step(row);
    result.log.push_back(std::move(row));
    if (cfg.checkpoint_every > 0 && state.step % cfg.checkpoint_every == 0 && hooks.on_checkpoint) {
      hooks.on_checkpoint(state);
    }
  }
  result.state = std::move(state);
  return result;
}

TrainResult train(const std::vector<TrainingExample>& examples, const ModelConfig& model,
                  const TrainConfig& config, const TrainHooks& hooks) {
  return train(examples, initial_state(model, config), hooks);
}

template double heatmap_mse<float>(const HeatmapStack<float>&, const HeatmapStack<float>&,
                                   const OcclusionMask&, HeatmapStack<float>*);
template double heatmap_mse<double>(const HeatmapStack<double>&, const HeatmapStack<double>&,
                                    const OcclusionMask&, HeatmapStack<double>*);
template LossBreakdown example_loss<float>(const ModelParams<float>&, const ModelConfig&,
                                           const Volume<float>&, const StageTargets&,
                                           const HeatmapStack<float>&, const TrainConfig&,
                                           ModelParams<float>*, double);
template LossBreakdown example_loss<double>(const ModelParams<double>&, const ModelConfig&,
                                            const Volume<double>&, const StageTargets&,
                                            const HeatmapStack<double>&, const TrainConfig&,
                                            ModelParams<double>*, double);

}  // namespace msff
