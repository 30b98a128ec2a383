#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

#include "msff/log.hpp"
#include "msff/stage1.hpp"
#include "msff/training.hpp"
#include "support.hpp"

namespace msff {
namespace {

// Captures warnings for the lifetime of the object.
class WarningCapture {
 public:
  WarningCapture() {
    previous_ = log::set_sink([this](log::Level level, const std::string& m) {
      if (level == log::Level::Warning) messages.push_back(m);
    });
  }
  ~WarningCapture() { log::set_sink(previous_); }
  std::vector<std::string> messages;

 private:
  log::Sink previous_;
};

HeatmapStack<double> filled(double v, int size = 6) {
  return HeatmapStack<double>(kJointCount, size, size, v);
}

TEST(HeatmapMse, ZeroForEqualMaps) {
  const auto a = filled(0.3);
  EXPECT_EQ(heatmap_mse(a, a, OcclusionMask{}), 0.0);
}

TEST(HeatmapMse, ConstantOffset) {
  EXPECT_NEAR(heatmap_mse(filled(0.6), filled(0.5), OcclusionMask{}), 0.01, 1e-15);
}

TEST(HeatmapMse, OccludedMapsAreIgnored) {
  auto pred = filled(0.5);
  std::fill(pred.channel(3).begin(), pred.channel(3).end(), 9.0);
  OcclusionMask occ{};
  occ[3] = true;
  HeatmapStack<double> grad;
  EXPECT_NEAR(heatmap_mse(pred, filled(0.4), occ, &grad), 0.01, 1e-15);
  for (double g : grad.channel(3)) EXPECT_EQ(g, 0.0);
  // d/dp of mean((p - t)^2) over 20 maps of 36 cells
  EXPECT_NEAR(grad.channel(0)[0], 2.0 * 0.1 / (20.0 * 36.0), 1e-15);
}

TEST(HeatmapMse, AllOccludedIsZeroWithWarning) {
  WarningCapture warnings;
  OcclusionMask occ{};
  occ.fill(true);
  EXPECT_EQ(heatmap_mse(filled(1.0), filled(0.0), occ), 0.0);
  ASSERT_EQ(warnings.messages.size(), 1u);
}

TEST(MsffWeights, TwoStageExampleWithoutEpsilon) {
  JointSet gt{};
  JointSet p1{}, p2{};
  for (int k = 0; k < kJointCount; ++k) {
    gt[k] = {10.0, 10.0};
    p1[k] = {12.0, 10.0};  // error 2
    p2[k] = {10.0, 16.0};  // error 6
  }
  const auto w = msff_weights({p1, p2}, gt, OcclusionMask{}, 0.0);
  EXPECT_DOUBLE_EQ(w[0], 0.25);
  EXPECT_DOUBLE_EQ(w[1], 0.75);
  const auto raw = msff_weights({p1, p2}, gt, OcclusionMask{}, 0.0, true, true);
  EXPECT_DOUBLE_EQ(raw[0], 2.0);
  EXPECT_DOUBLE_EQ(raw[1], 6.0);
}

TEST(MsffWeights, PerfectStagesGiveUniformWeights) {
  JointSet gt{};
  for (int k = 0; k < kJointCount; ++k) gt[k] = {1.0 * k, 2.0};
  const auto w = msff_weights({gt, gt, gt}, gt, OcclusionMask{}, 1e-3);
  for (double v : w) EXPECT_DOUBLE_EQ(v, 1.0 / 3.0);
  EXPECT_EQ(msff_weights({gt}, gt, OcclusionMask{}, 1e-3), std::vector<double>{1.0});
}

TEST(MsffWeights, LastStageOnlyWhenDisabled) {
  std::mt19937_64 rng(3);
  std::vector<JointSet> preds;
  for (int i = 0; i < 4; ++i) preds.push_back(testing::random_joints(rng, 0, 16));
  const auto w = msff_weights(preds, testing::random_joints(rng, 0, 16), OcclusionMask{}, 1e-3,
                              false);
  EXPECT_EQ(w, (std::vector<double>{0, 0, 0, 1}));
}

TEST(MsffWeights, ConvexAndPermutationEquivariant) {
  std::mt19937_64 rng(8);
  std::bernoulli_distribution hide(0.25);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<JointSet> preds;
    for (int i = 0; i < 4; ++i) preds.push_back(testing::random_joints(rng, 0, 16));
    const JointSet gt = testing::random_joints(rng, 0, 16);
    OcclusionMask occ{};
    for (auto& o : occ) o = hide(rng);
    const auto w = msff_weights(preds, gt, occ, 1e-3);
    EXPECT_NEAR(std::accumulate(w.begin(), w.end(), 0.0), 1.0, 1e-12);
    for (double v : w) EXPECT_GE(v, 0.0);

    std::vector<int> perm{0, 1, 2, 3};
    std::shuffle(perm.begin(), perm.end(), rng);
    std::vector<JointSet> shuffled;
    for (int i : perm) shuffled.push_back(preds[i]);
    const auto ws = msff_weights(shuffled, gt, occ, 1e-3);
    for (int i = 0; i < 4; ++i) EXPECT_DOUBLE_EQ(ws[i], w[perm[i]]);
  }
}

TEST(TotalLoss, WeightedSum) {
  EXPECT_NEAR(total_loss({0.2, 0.4}, {0.25, 0.75}), 0.35, 1e-12);
  EXPECT_EQ(total_loss({0.7, 0.1, 0.9}, {0, 0, 1}), 0.9);
  EXPECT_EQ(total_loss({0.0, 0.0}, {0.5, 0.5}), 0.0);
  EXPECT_THROW(total_loss({1.0}, {0.5, 0.5}), ContractViolation);
}

TEST(Optimizer, PlainGradientStep) {
  ModelParams<float> p;
  p.tensors["w"] = {{2}, {1.0f, -2.0f}};
  ModelParams<float> g;
  g.tensors["w"] = {{2}, {0.5f, 4.0f}};
  TrainConfig cfg;
  cfg.optimizer = OptimizerKind::PlainGradient;
  cfg.learning_rate = 0.1;
  auto state = make_optimizer(p, cfg.optimizer);
  optimizer_step(p, g, state, cfg);
  EXPECT_FLOAT_EQ(p.tensors["w"].values[0], 0.95f);
  EXPECT_FLOAT_EQ(p.tensors["w"].values[1], -2.4f);
}

TEST(Optimizer, AdaptiveMomentFirstStepIsSignTimesRate) {
  ModelParams<float> p;
  p.tensors["w"] = {{3}, {1.0f, 1.0f, 1.0f}};
  ModelParams<float> g;
  g.tensors["w"] = {{3}, {0.5f, -30.0f, 1e-3f}};
  TrainConfig cfg;
  cfg.learning_rate = 0.01;
  auto state = make_optimizer(p, cfg.optimizer);
  optimizer_step(p, g, state, cfg);
  EXPECT_NEAR(p.tensors["w"].values[0], 0.99, 1e-6);
  EXPECT_NEAR(p.tensors["w"].values[1], 1.01, 1e-6);
  EXPECT_NEAR(p.tensors["w"].values[2], 0.99, 1e-5);
  EXPECT_EQ(state.t, 1);
}

TEST(Schedule, StepCounts) {
  TrainConfig cfg;
  cfg.batch_size = 4;
  cfg.epochs = 3;
  EXPECT_EQ(batches_per_epoch(10, cfg), 3);
  EXPECT_EQ(total_steps(10, cfg), 9);
  cfg.max_steps = 5;
  EXPECT_EQ(total_steps(10, cfg), 5);
}

TEST(TrainConfig, ValidationNamesTheField) {
  TrainConfig cfg;
  cfg.batch_size = 0;
  try {
    cfg.validate();
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_NE(e.field().find("batch_size"), std::string::npos);
  }
}

class TrainingRun : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = new testing::TempDir("msff_train");
    data_ = new Dataset(testing::small_dataset(dir_->path(), 6, 13));
  }
  static void TearDownTestSuite() {
    delete data_;
    delete dir_;
  }

  static ModelConfig model() {
    ModelConfig c = ModelConfig::micro();
    c.num_msff = 2;
    return c;
  }
  static TrainConfig config(int steps) {
    TrainConfig t;
    t.batch_size = 3;
    t.epochs = 100;
    t.max_steps = steps;
    t.seed = 4;
    return t;
  }
  static std::vector<TrainingExample> examples() {
    const TrainConfig t;
    return prepare_examples(*data_, model(), t.target_sigma, t.region_margin);
  }

  static testing::TempDir* dir_;
  static Dataset* data_;
};
testing::TempDir* TrainingRun::dir_ = nullptr;
Dataset* TrainingRun::data_ = nullptr;

TEST_F(TrainingRun, ExamplesCarryHeatmapTargets) {
  const auto ex = examples();
  std::size_t hands = 0;
  for (const auto& s : data_->samples) hands += s.annotation.hands.size();
  EXPECT_EQ(ex.size(), hands);
  const ModelConfig c = model();
  for (const auto& e : ex) {
    EXPECT_EQ(e.crop.shape_string(), "3x64x64");
    EXPECT_EQ(e.target_maps.shape_string(), "21x16x16");
    for (int k = 0; k < kJointCount; ++k) {
      if (e.targets.occluded[k]) continue;
      const Point2 expect = map_to_heatmap(e.source_joints[k], e.transform, c);
      EXPECT_NEAR(e.targets.joints[k].x, expect.x, 1e-9);
      EXPECT_NEAR(e.targets.joints[k].y, expect.y, 1e-9);
    }
  }
}

TEST_F(TrainingRun, FirstLoggedLossMatchesRecomputation) {
  const auto ex = examples();
  TrainConfig t = config(1);
  t.batch_size = static_cast<int>(ex.size());  // the whole set, order irrelevant
  const auto result = train(ex, model(), t);
  ASSERT_EQ(result.log.size(), 1u);

  const auto init = init_model<float>(model(), t.seed);
  double sum = 0.0;
  for (const auto& e : ex) {
    sum += example_loss(init, model(), e.crop, e.targets, e.target_maps, t).total;
  }
  EXPECT_NEAR(result.log[0].total, sum / static_cast<double>(ex.size()), 1e-12);
}

TEST_F(TrainingRun, SameSeedSameTrajectory) {
  const auto ex = examples();
  const auto a = train(ex, model(), config(6));
  const auto b = train(ex, model(), config(6));
  ASSERT_EQ(a.log.size(), 6u);
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    EXPECT_LE(testing::relative_error(a.log[i].total, b.log[i].total), 1e-6);
  }
  EXPECT_EQ(a.state.params, b.state.params);
}

TEST_F(TrainingRun, ResumeMatchesUninterruptedRun) {
  const auto ex = examples();
  const auto straight = train(ex, model(), config(10));

  testing::TempDir tmp("msff_resume");
  const auto first = train(ex, model(), config(4));
  save_checkpoint(first.state, tmp / "half.ckpt");
  TrainState resumed = load_checkpoint(tmp / "half.ckpt", model());
  resumed.train_config.max_steps = 10;
  const auto second = train(ex, resumed);

  EXPECT_EQ(second.state.step, 10);
  EXPECT_EQ(second.state.params, straight.state.params);
  ASSERT_EQ(first.log.size() + second.log.size(), straight.log.size());
  for (std::size_t i = 0; i < second.log.size(); ++i) {
    EXPECT_EQ(second.log[i].total, straight.log[4 + i].total);
  }
}

TEST_F(TrainingRun, NonFiniteLossStopsWithDump) {
  const auto ex = examples();
  TrainState state = initial_state(model(), config(3));
  state.params.tensors.at("msff1.head.bias").values[0] = std::nanf("");
  testing::TempDir tmp("msff_nan");
  TrainHooks hooks;
  hooks.divergence_dump = tmp / "diverged.ckpt";
  try {
    train(ex, state, hooks);
    FAIL() << "expected TrainingDiverged";
  } catch (const TrainingDiverged& e) {
    EXPECT_EQ(e.dump_path(), hooks.divergence_dump.string());
    EXPECT_TRUE(std::filesystem::exists(hooks.divergence_dump));
  }
}

TEST_F(TrainingRun, CheckpointHookFiresOnSchedule) {
  const auto ex = examples();
  TrainConfig t = config(6);
  t.checkpoint_every = 2;
  std::vector<int> steps;
  TrainHooks hooks;
  hooks.on_checkpoint = [&](const TrainState& s) { steps.push_back(s.step); };
  train(ex, model(), t, hooks);
  EXPECT_EQ(steps, (std::vector<int>{2, 4, 6}));
}

TEST_F(TrainingRun, LastStageOnlyLossWhenLosswiseDisabled) {
  const auto ex = examples();
  ModelConfig c = model();
  c.use_losswise = false;
  const auto params = init_model<float>(c, 1);
  const auto loss = example_loss(params, c, ex[0].crop, ex[0].targets, ex[0].target_maps,
                                 TrainConfig{});
  EXPECT_EQ(loss.weights, (std::vector<double>{0.0, 1.0}));
  EXPECT_EQ(loss.total, loss.stage_losses[1]);
}

}  // namespace
}  // namespace msff
