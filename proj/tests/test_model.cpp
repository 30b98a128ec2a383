#include <gtest/gtest.h>

#include <cmath>
#include <random>
#include <set>

#include "msff/anatomy_graph.hpp"
#include "msff/model.hpp"
#include "msff/synth_data.hpp"
#include "msff/training.hpp"
#include "support.hpp"

namespace msff {
namespace {

template <typename T>
Volume<T> random_volume(std::mt19937_64& rng, int c, int h, int w, double lo = 0.0,
                        double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Volume<T> v(c, h, w);
  for (auto& x : v.values()) x = static_cast<T>(u(rng));
  return v;
}

ModelConfig micro_n(int n) {
  ModelConfig c = ModelConfig::micro();
  c.num_msff = n;
  return c;
}

TEST(ModelConfig, MicroPresetValidates) {
  EXPECT_NO_THROW(ModelConfig::micro().validate());
  EXPECT_NO_THROW(ModelConfig{}.validate());
  ModelConfig bad = ModelConfig::micro();
  bad.branch_channels = 0;
  try {
    bad.validate();
    FAIL() << "expected ConfigError";
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "branch_channels");
  }
}

TEST(InitModel, DeterministicInSeed) {
  const auto c = ModelConfig::micro();
  EXPECT_EQ(init_model<float>(c, 9), init_model<float>(c, 9));
  EXPECT_FALSE(init_model<float>(c, 9) == init_model<float>(c, 10));
}

TEST(InitModel, BiasesAreZero) {
  const auto params = init_model<float>(ModelConfig::micro(), 2);
  int biases = 0;
  for (const auto& [name, p] : params.tensors) {
    if (name.ends_with(".bias")) {
      ++biases;
      for (float v : p.values) EXPECT_EQ(v, 0.0f) << name;
    }
  }
  EXPECT_GT(biases, 0);
}

TEST(InitModel, MicroParameterCountMatchesHandTally) {
  // weights + biases, layer by layer (C = 6, sshfr widths 8,8,16 x 8)
  const int sshfr = (8 * 3 * 25 + 8) + (8 * 8 * 25 + 8) + (16 * 8 * 25 + 16) +
                    2 * (16 * 16 * 25 + 16) + 5 * (16 * 16 * 9 + 16);
  const int entry = 6 * 16 + 6;
  const int down_from_features = 6 * 16 * 9 + 6;  // branch 2 and first of branch 3
  const int down_inner = 6 * 6 * 9 + 6;
  const int residual_conv = 6 * 6 * 9 + 6;
  const int head = 21 * 36 + 21;     // 6C = 36 fused channels
  const int proj = 16 * 57 + 16;     // 36 + 21 in, back to 16
  const int stage = entry + 2 * down_from_features + down_inner + 3 * 2 * residual_conv + head + proj;
  ASSERT_EQ(sshfr, 29864);
  ASSERT_EQ(stage, 5857);
  EXPECT_EQ(init_model<float>(ModelConfig::micro(), 0).count(), std::size_t(sshfr + stage));

  std::size_t tally = 0;
  for (const auto& layer : layer_table(ModelConfig::micro())) tally += layer.parameter_count();
  EXPECT_EQ(tally, std::size_t(sshfr + stage));
}

TEST(InitModel, KernelScaleFollowsFanIn) {
  ModelConfig c;  // full size: plenty of samples per layer
  const auto params = init_model<double>(c, 4);
  const auto& w = params.tensors.at("sshfr.conv7.weight");
  double sq = 0.0;
  for (double v : w.values) sq += v * v;
  const double var = sq / static_cast<double>(w.size());
  const double expected = 2.0 / (128.0 * 9.0);  // conv7 reads the 128-channel conv6 output
  EXPECT_NEAR(var / expected, 1.0, 0.02);
}

TEST(InitModel, SmoothGainKeepsUnitSecondMoment) {
  // 1 / E[f(z)^2], f = softplus - ln 2, z ~ N(0,1), by trapezoid quadrature
  double moment = 0.0;
  const double dz = 1e-4;
  for (double z = -12.0; z <= 12.0; z += dz) {
    const double f = std::log1p(std::exp(z)) - std::log(2.0);
    moment += f * f * std::exp(-0.5 * z * z) / std::sqrt(2.0 * M_PI) * dz;
  }
  EXPECT_NEAR(init_gain(Activation::Smooth), 1.0 / moment, 2e-3);
  EXPECT_EQ(init_gain(Activation::Rectifier), 2.0);
}

TEST(Sshfr, ZeroInputAndBiasesGiveZeroOutput) {
  const auto c = ModelConfig::micro();
  const auto params = init_model<float>(c, 1);
  const FeatureVolume<float> zero(3, 64, 64);
  const auto out = sshfr_forward(zero, params, c);
  EXPECT_EQ(out.shape_string(), "16x16x16");
  for (float v : out.values()) EXPECT_EQ(v, 0.0f);
}

TEST(Sshfr, RejectsWrongCropSize) {
  const auto c = ModelConfig::micro();
  const auto params = init_model<float>(c, 1);
  EXPECT_THROW(sshfr_forward(FeatureVolume<float>(3, 32, 32), params, c), ContractViolation);
  ModelConfig full;
  const auto full_params = init_model<float>(full, 1);
  EXPECT_THROW(sshfr_forward(FeatureVolume<float>(3, 128, 128), full_params, full),
               ContractViolation);
}

TEST(Sshfr, FullScaleShape) {
  ModelConfig full;
  const auto params = init_model<float>(full, 1);
  std::mt19937_64 rng(1);
  const auto out = sshfr_forward(random_volume<float>(rng, 3, 256, 256, -0.5, 0.5), params, full);
  EXPECT_EQ(out.shape_string(), "256x64x64");
}

TEST(Branch, OutputSizesHalvePerLevel) {
  const auto c = ModelConfig::micro();
  const auto params = init_model<float>(c, 1);
  std::mt19937_64 rng(2);
  const auto in = random_volume<float>(rng, 16, 16, 16);
  EXPECT_EQ(branch_forward(in, 1, params, c).shape_string(), "6x16x16");
  EXPECT_EQ(branch_forward(in, 2, params, c).shape_string(), "6x8x8");
  EXPECT_EQ(branch_forward(in, 3, params, c).shape_string(), "6x4x4");
  EXPECT_THROW(branch_forward(in, 4, params, c), ContractViolation);
}

TEST(Branch, ZeroResidualWeightsGiveIdentityUnits) {
  ModelConfig c = ModelConfig::micro();
  c.blocks_per_fec = 2;
  c.units_per_block = 3;
  auto params = init_model<double>(c, 5);
  for (auto& [name, p] : params.tensors) {
    if (name.find(".ru") != std::string::npos) std::fill(p.values.begin(), p.values.end(), 0.0);
  }
  std::mt19937_64 rng(3);
  const auto in = random_volume<double>(rng, 16, 16, 16, -1.0, 1.0);
  const auto out = branch_forward(in, 1, params, c);

  // 1x1 entry convolution + rectifier written out directly
  const auto& w = params.tensors.at("msff1.b1.entry.weight").values;
  for (int o = 0; o < 6; ++o) {
    for (int y = 0; y < 16; ++y) {
      for (int x = 0; x < 16; ++x) {
        double acc = 0.0;
        for (int i = 0; i < 16; ++i) acc += w[o * 16 + i] * in.at(i, y, x);
        EXPECT_NEAR(out.at(o, y, x), std::max(acc, 0.0), 1e-12);
      }
    }
  }
}

TEST(FuseTranspose, ChannelPermutationTracedByHand) {
  ModelConfig c = ModelConfig::micro();
  c.branch_channels = 3;
  // a1..a3 = 1..3, b1..b3 = 11..13, c1..c3 = 21..23, each constant per channel
  FeatureVolume<double> a(3, 8, 8), b(3, 4, 4), cc(3, 2, 2);
  for (int k = 0; k < 3; ++k) {
    std::fill(a.channel(k).begin(), a.channel(k).end(), 1.0 + k);
    std::fill(b.channel(k).begin(), b.channel(k).end(), 11.0 + k);
    std::fill(cc.channel(k).begin(), cc.channel(k).end(), 21.0 + k);
  }
  const auto out = fuse_transpose(a, b, cc, c);
  ASSERT_EQ(out.shape_string(), "18x8x8");
  const double expected[18] = {1, 11, 21, 2, 12, 22, 3, 13, 23,   // transposed
                               1, 2, 3, 11, 12, 13, 21, 22, 23};  // original
  for (int k = 0; k < 18; ++k) {
    for (double v : out.channel(k)) EXPECT_NEAR(v, expected[k], 1e-12) << "channel " << k;
  }

  c.use_transpose = false;
  const auto dup = fuse_transpose(a, b, cc, c);
  ASSERT_EQ(dup.shape_string(), "18x8x8");
  for (int k = 0; k < 9; ++k) {
    for (double v : dup.channel(k)) EXPECT_NEAR(v, expected[9 + k], 1e-12);
    for (double v : dup.channel(9 + k)) EXPECT_NEAR(v, expected[9 + k], 1e-12);
  }
}

TEST(FuseTranspose, FullWidthChannelCount) {
  ModelConfig c;
  FeatureVolume<float> a(96, 64, 64), b(96, 32, 32), cc(96, 16, 16);
  EXPECT_EQ(fuse_transpose(a, b, cc, c).channels(), 576);
}

TEST(ResizeBilinear, ConstantStaysConstant) {
  FeatureVolume<double> v(2, 32, 32, 0.37);
  const auto up = nn::kernels::resize_bilinear(v, 64, 64);
  ASSERT_EQ(up.shape_string(), "2x64x64");
  for (double x : up.values()) EXPECT_NEAR(x, 0.37, 1e-15);
}

TEST(ChannelAttention, ScalesByMaxPlusMean) {
  const auto c = ModelConfig::micro();
  FeatureVolume<double> half(3, 5, 5, 0.5);
  EXPECT_EQ(channel_attention(half, c), half);

  FeatureVolume<double> zero(3, 5, 5);
  EXPECT_EQ(channel_attention(zero, c), zero);

  std::mt19937_64 rng(8);
  const auto v = random_volume<double>(rng, 4, 6, 7, -1.0, 2.0);
  const auto out = channel_attention(v, c);
  for (int k = 0; k < 4; ++k) {
    double mx = -1e300, sum = 0.0;
    for (double x : v.channel(k)) {
      mx = std::max(mx, x);
      sum += x;
    }
    const double s = mx + sum / 42.0;
    for (int i = 0; i < 42; ++i) EXPECT_NEAR(out.channel(k)[i], v.channel(k)[i] * s, 1e-12);
  }

  ModelConfig off = c;
  off.use_attention = false;
  EXPECT_EQ(channel_attention(v, off), v);
}

TEST(MinMaxNormalize, RangeArgmaxAndConstantMaps) {
  std::mt19937_64 rng(12);
  auto v = random_volume<double>(rng, kJointCount, 9, 9, -4.0, 7.0);
  std::fill(v.channel(3).begin(), v.channel(3).end(), 2.5);  // constant map
  nn::Tape<double> tape;
  const auto out = nn::minmax_normalize(tape, nn::make_var(v))->value;
  for (int k = 0; k < kJointCount; ++k) {
    const auto ch = out.channel(k);
    if (k == 3) {
      for (double x : ch) EXPECT_EQ(x, 0.0);
      continue;
    }
    EXPECT_DOUBLE_EQ(*std::max_element(ch.begin(), ch.end()), 1.0);
    EXPECT_DOUBLE_EQ(*std::min_element(ch.begin(), ch.end()), 0.0);
  }
  const auto before = decode_joints(v);
  const auto after = decode_joints(out);
  for (int k = 0; k < kJointCount; ++k) {
    if (k != 3) {
      EXPECT_EQ(before[k], after[k]);
    }
  }
}

TEST(HeatmapHead, OutputInUnitRange) {
  const auto c = ModelConfig::micro();
  const auto params = init_model<float>(c, 3);
  std::mt19937_64 rng(4);
  const auto out = heatmap_head(random_volume<float>(rng, 36, 16, 16), params, c);
  ASSERT_EQ(out.shape_string(), "21x16x16");
  for (float v : out.values()) {
    EXPECT_GE(v, 0.0f);
    EXPECT_LE(v, 1.0f);
  }
}

TEST(MsffForward, ShapesForEveryStage) {
  const auto c = micro_n(3);
  const auto params = init_model<float>(c, 3);
  std::mt19937_64 rng(5);
  auto x = random_volume<float>(rng, 16, 16, 16);
  for (int stage = 1; stage <= 3; ++stage) {
    auto [next, maps] = msff_forward(x, stage, params, c);
    EXPECT_EQ(next.shape_string(), "16x16x16");
    EXPECT_EQ(maps.shape_string(), "21x16x16");
    x = next;
  }
}

TEST(MsffForward, WithoutReinforcementHeatmapsEqualHead) {
  ModelConfig c = ModelConfig::micro();
  c.use_aomr = false;
  const auto params = init_model<double>(c, 6);
  std::mt19937_64 rng(6);
  const auto x = random_volume<double>(rng, 16, 16, 16);
  const auto maps = msff_forward(x, 1, params, c).second;

  // rebuild the stage by hand from the public pieces
  const auto b1 = branch_forward(x, 1, params, c);
  const auto b2 = branch_forward(x, 2, params, c);
  const auto b3 = branch_forward(x, 3, params, c);
  const auto head = heatmap_head(channel_attention(fuse_transpose(b1, b2, b3, c), c), params, c);
  EXPECT_EQ(maps, head);
}

TEST(MsffForward, ReinforcementMixesBeforeNormalizing) {
  const auto c = ModelConfig::micro();
  const auto params = init_model<double>(c, 6);
  std::mt19937_64 rng(6);
  const auto x = random_volume<double>(rng, 16, 16, 16);
  const auto maps = msff_forward(x, 1, params, c).second;

  const auto fused = channel_attention(
      fuse_transpose(branch_forward(x, 1, params, c), branch_forward(x, 2, params, c),
                     branch_forward(x, 3, params, c), c),
      c);
  nn::Tape<double> tape;
  const auto raw = graph::head_responses(tape, nn::make_var(fused), 1, params)->value;
  const auto mixed = mutual_reinforce(raw, hand_skeleton());
  const auto expected = nn::minmax_normalize(tape, nn::make_var(mixed))->value;
  ASSERT_TRUE(maps.same_shape(expected));
  for (std::size_t i = 0; i < maps.size(); ++i) {
    EXPECT_NEAR(maps.values()[i], expected.values()[i], 1e-12);
  }
}

TEST(MsffForward, ReweightingOnlyAffectsTheForwardedInput) {
  const auto c = ModelConfig::micro();
  const auto params = init_model<double>(c, 7);
  std::mt19937_64 rng(7);
  const auto x = random_volume<double>(rng, 16, 16, 16);
  StageTargets targets;
  targets.joints = testing::random_joints(rng, 0.0, 15.0);
  const auto plain = msff_forward(x, 1, params, c);
  const auto trained = msff_forward(x, 1, params, c, &targets);
  EXPECT_EQ(plain.second, trained.second);
  EXPECT_FALSE(plain.first == trained.first);

  ModelConfig no_aomr = c;
  no_aomr.use_aomr = false;
  EXPECT_EQ(msff_forward(x, 1, params, no_aomr).first,
            msff_forward(x, 1, params, no_aomr, &targets).first);
}

TEST(ModelForward, OneStackPerStage) {
  for (int n : {1, 3}) {
    const auto c = micro_n(n);
    const auto params = init_model<float>(c, 1);
    std::mt19937_64 rng(n);
    const auto out = model_forward(random_volume<float>(rng, 3, 64, 64), params, c);
    ASSERT_EQ(static_cast<int>(out.size()), n);
    for (const auto& m : out) EXPECT_EQ(m.shape_string(), "21x16x16");
  }
}

TEST(ModelForward, PureAndDeterministic) {
  const auto c = micro_n(2);
  const auto params = init_model<float>(c, 1);
  const auto copy = params;
  std::mt19937_64 rng(9);
  const auto crop = random_volume<float>(rng, 3, 64, 64);
  const auto crop_copy = crop;
  const auto a = model_forward(crop, params, c);
  const auto b = model_forward(crop, params, c);
  EXPECT_EQ(a, b);
  EXPECT_EQ(params, copy);
  EXPECT_EQ(crop, crop_copy);
}

TEST(AblationSwitches, ChangeOnlyTheirOwnPart) {
  const auto base = micro_n(2);
  ModelConfig no_at = base;
  no_at.use_attention = false;
  const auto pa = init_model<float>(base, 1);
  const auto pb = init_model<float>(no_at, 1);
  ASSERT_EQ(pa.tensors.size(), pb.tensors.size());
  for (const auto& [name, p] : pa.tensors) EXPECT_EQ(p.shape, pb.tensors.at(name).shape) << name;

  ModelConfig no_tp = base;
  no_tp.use_transpose = false;
  std::mt19937_64 rng(1);
  const auto crop = random_volume<float>(rng, 3, 64, 64);
  const auto oa = model_forward(crop, pa, base);
  const auto ob = model_forward(crop, init_model<float>(no_tp, 1), no_tp);
  ASSERT_EQ(oa.size(), ob.size());
  for (std::size_t i = 0; i < oa.size(); ++i) EXPECT_TRUE(oa[i].same_shape(ob[i]));

  ModelConfig no_sshfr = base;
  no_sshfr.use_sshfr = false;
  const auto oc = model_forward(crop, init_model<float>(no_sshfr, 1), no_sshfr);
  for (const auto& m : oc) EXPECT_EQ(m.shape_string(), "21x16x16");
}

TEST(DecodeJoints, DeltaGaussianAndTies) {
  HeatmapStack<float> maps(kJointCount, 64, 64);
  maps.at(0, 20, 10) = 1.0f;
  OcclusionMask none{};
  JointSet centre{};
  centre[1] = {32.0, 32.0};
  const auto g = gaussian_targets<float>(centre, 3.0, 64, none);
  std::copy(g.channel(1).begin(), g.channel(1).end(), maps.channel(1).begin());
  maps.channel(2)[5] = 0.8f;
  maps.channel(2)[9] = 0.8f;
  const auto j = decode_joints(maps);
  EXPECT_EQ(j[0], (Point2{10.0, 20.0}));
  EXPECT_EQ(j[1], (Point2{32.0, 32.0}));
  EXPECT_EQ(j[2], (Point2{5.0, 0.0}));
  EXPECT_EQ(j[3], (Point2{0.0, 0.0}));  // all-zero map: first cell
}

// Finite-difference check of the full training loss in double precision.
TEST(Gradients, MatchCentralDifferences) {
  testing::TempDir dir("msff_grad");
  const Dataset data = testing::small_dataset(dir.path(), 2, 21);
  ModelConfig c = micro_n(2);
  c.activation = Activation::Smooth;
  TrainConfig tc;
  const auto examples = prepare_examples(data, c, tc.target_sigma, tc.region_margin);
  ASSERT_FALSE(examples.empty());
  const auto& ex = examples.front();
  auto params = init_model<double>(c, 3);
  const auto crop = ex.crop.cast<double>();
  const auto maps = ex.target_maps.cast<double>();

  auto grads = params.zeros_like();
  example_loss(params, c, crop, ex.targets, maps, tc, &grads);

  // the last stage feeds nothing forward, so its projection is inert
  std::vector<std::string> names;
  for (const auto& [name, p] : params.tensors) {
    if (!name.starts_with("msff2.proj")) names.push_back(name);
  }
  std::mt19937_64 rng(17);
  const double h = 1e-5;
  for (int s = 0; s < 20; ++s) {
    const std::string& name = names[std::uniform_int_distribution<std::size_t>(0, names.size() - 1)(rng)];
    auto& values = params.tensors.at(name).values;
    const std::size_t i = std::uniform_int_distribution<std::size_t>(0, values.size() - 1)(rng);
    const double old = values[i];
    values[i] = old + h;
    const double up = example_loss(params, c, crop, ex.targets, maps, tc).total;
    values[i] = old - h;
    const double down = example_loss(params, c, crop, ex.targets, maps, tc).total;
    values[i] = old;
    const double numeric = (up - down) / (2.0 * h);
    const double analytic = grads.tensors.at(name).values[i];
    if (std::abs(numeric) < 1e-10 && std::abs(analytic) < 1e-10) continue;
    EXPECT_LT(testing::relative_error(numeric, analytic), 1e-3)
        << name << "[" << i << "] numeric " << numeric << " analytic " << analytic;
  }
}

}  // namespace
}  // namespace msff
