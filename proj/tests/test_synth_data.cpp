#include <gtest/gtest.h>

#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

#include "msff/anatomy_graph.hpp"
#include "msff/synth_data.hpp"
#include "support.hpp"

namespace msff {
namespace {

std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void spit(const std::filesystem::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary);
  out << text;
}

double configured_length(const GeneratorConfig& g, int child) {
  const int f = (child - 1) / 4;
  const int s = (child - 1) % 4;
  return g.segment_lengths[f][s] * g.unit_length * g.image_size;
}

TEST(ForwardKinematics, StraightFingersAreCollinearWithBaseDirection) {
  GeneratorConfig g;
  g.image_size = 400;
  const Point2 wrist{200, 300};
  const auto pose = forward_kinematics(wrist, 0.0, 1.0, false, {}, {}, g);
  for (int f = 0; f < 5; ++f) {
    const double angle = g.finger_angles_deg[f] * std::numbers::pi / 180.0;
    for (int s = 0; s < 4; ++s) {
      const Point2 p = pose.raw_joints[4 * f + 1 + s];
      // cross product with the base direction vanishes
      const double cross = (p.x - wrist.x) * std::cos(angle) + (p.y - wrist.y) * std::sin(angle);
      EXPECT_NEAR(cross, 0.0, 1e-9) << "finger " << f << " joint " << s;
      double reach = 0.0;
      for (int t = 0; t <= s; ++t) reach += configured_length(g, 4 * f + 1 + t);
      EXPECT_NEAR(distance(p, wrist), reach, 1e-9);
    }
  }
}

TEST(ForwardKinematics, BoneLengthsScaleWithPalm) {
  GeneratorConfig g;
  const auto& graph = hand_skeleton();
  std::mt19937_64 rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const auto pose = sample_hand_pose(rng(), g);
    for (const auto& [a, b] : graph.edges) {
      const int child = std::max(a, b);
      EXPECT_NEAR(distance(pose.raw_joints[a], pose.raw_joints[b]),
                  configured_length(g, child) * pose.palm_scale, 1e-9);
    }
  }
}

TEST(SampleHandPose, DeterministicAndDistinctAcrossSeeds) {
  GeneratorConfig g;
  const auto a = sample_hand_pose(42, g);
  const auto b = sample_hand_pose(42, g);
  EXPECT_EQ(a.raw_joints, b.raw_joints);
  EXPECT_EQ(a.flexion, b.flexion);

  std::set<std::pair<double, double>> draws;
  for (std::uint64_t s = 0; s < 100; ++s) {
    const auto p = sample_hand_pose(s, g);
    draws.insert({p.rotation, p.palm_scale});
  }
  EXPECT_EQ(draws.size(), 100u);
}

TEST(SampleHandPose, OffCanvasJointsAreOccludedAtOrigin) {
  GeneratorConfig g;
  g.image_size = 64;
  const auto pose = forward_kinematics({2, 32}, std::numbers::pi, 1.0, false, {}, {}, g);
  int hidden = 0;
  for (int k = 0; k < kJointCount; ++k) {
    const Point2 r = pose.raw_joints[k];
    const bool inside = r.x >= 0 && r.x < 64 && r.y >= 0 && r.y < 64;
    EXPECT_EQ(pose.occluded[k], !inside);
    if (!inside) {
      ++hidden;
      EXPECT_EQ(pose.joints[k], (Point2{0, 0}));
    } else {
      EXPECT_EQ(pose.joints[k], r);
    }
  }
  EXPECT_GT(hidden, 0);
}

TEST(RenderHand, DeterministicAndBackgroundOnlyWithoutHands) {
  GeneratorConfig g;
  g.image_size = 96;
  const auto pose = sample_hand_pose(5, g);
  EXPECT_EQ(render_hand({pose.raw_joints}, g, 77), render_hand({pose.raw_joints}, g, 77));
  const Image bg = render_hand({}, g, 77);
  // background red channel is capped well below skin tones
  for (float v : bg.channel(0)) EXPECT_LE(v, 0.38f + 1e-6f);
}

TEST(RenderHand, JointCentresContrastWithBackground) {
  GeneratorConfig g;
  std::mt19937_64 rng(9);
  for (int trial = 0; trial < 20; ++trial) {
    const std::uint64_t seed = rng();
    const auto pose = sample_hand_pose(seed, g);
    const Image img = render_hand({pose.raw_joints}, g, seed);
    const Image bg = render_hand({}, g, seed);
    for (int k = 0; k < kJointCount; ++k) {
      if (pose.occluded[k]) continue;
      const int x = static_cast<int>(pose.joints[k].x);
      const int y = static_cast<int>(pose.joints[k].y);
      double best = 0.0;
      for (int c = 0; c < 3; ++c) best = std::max(best, double(std::abs(img.at(c, y, x) - bg.at(c, y, x))));
      EXPECT_GE(best, 0.2) << "seed " << seed << " joint " << k;
    }
  }
}

TEST(GaussianTargets, PeakHalfMaximumAndOcclusion) {
  const double sigma = 2.0;
  JointSet j{};
  j[0] = {10.2, 9.8};  // nearest cell (10, 10)
  OcclusionMask occ{};
  occ[1] = true;
  const auto maps = gaussian_targets<double>(j, sigma, 32, occ);
  EXPECT_EQ(maps.at(0, 10, 10), 1.0);

  // half maximum at distance sigma * sqrt(2 ln 2); probe along the diagonal
  // using a sigma that puts that distance on a lattice point (3, 4) -> 5
  const double half_sigma = 5.0 / std::sqrt(2.0 * std::log(2.0));
  const auto wide = gaussian_targets<double>(j, half_sigma, 32, occ);
  EXPECT_NEAR(wide.at(0, 14, 13), 0.5, 1e-12);
  for (double v : maps.channel(1)) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(gaussian_targets<double>(j, 0.0, 32, occ), ArgumentError);
}

TEST(GenerateDataset, ByteIdenticalManifestsForOneSeed) {
  testing::TempDir a("msff_gen_a"), b("msff_gen_b");
  GeneratorConfig g;
  g.image_size = 64;
  generate_dataset(16, 7, a.path(), g);
  generate_dataset(16, 7, b.path(), g);
  EXPECT_EQ(slurp(a / "manifest.json"), slurp(b / "manifest.json"));
  for (const auto& entry : std::filesystem::directory_iterator(a / "images")) {
    EXPECT_EQ(slurp(entry.path()), slurp(b / "images" / entry.path().filename()));
  }
}

TEST(GenerateDataset, VisibleJointsLieInsideTheImage) {
  testing::TempDir dir("msff_gen");
  const Dataset d = testing::small_dataset(dir.path(), 24, 3, 96);
  bool saw_two = false;
  for (const auto& s : d.samples) {
    saw_two = saw_two || s.annotation.hands.size() == 2;
    for (const auto& h : s.annotation.hands) {
      for (const auto& p : h.joints) {
        if (is_occluded_coord(p)) continue;
        EXPECT_GE(p.x, 0.0);
        EXPECT_GE(p.y, 0.0);
        EXPECT_LT(p.x, 96.0);
        EXPECT_LT(p.y, 96.0);
      }
    }
  }
  EXPECT_TRUE(saw_two);
}

TEST(GenerateDataset, RejectsEmptyRequest) {
  testing::TempDir dir;
  EXPECT_THROW(generate_dataset(0, 1, dir.path(), GeneratorConfig{}), ArgumentError);
}

TEST(LoadDataset, RoundTripPreservesCoordinates) {
  testing::TempDir dir("msff_load");
  GeneratorConfig g;
  g.image_size = 64;
  const auto manifest = generate_dataset(4, 12, dir.path(), g);
  const Dataset d = load_dataset(dir.path());
  ASSERT_EQ(d.samples.size(), 4u);
  for (std::size_t i = 0; i < 4; ++i) {
    const auto& want = manifest.samples[i];
    const auto& got = d.samples[i].annotation;
    EXPECT_EQ(got.image_path, want.image_path);
    ASSERT_EQ(got.hands.size(), want.hands.size());
    for (std::size_t h = 0; h < want.hands.size(); ++h) {
      EXPECT_EQ(got.hands[h].joints, want.hands[h].joints);  // exact, not approximate
    }
    EXPECT_EQ(d.samples[i].image.shape_string(), "3x64x64");
  }
}

TEST(LoadDataset, MissingImageNamesThePath) {
  testing::TempDir dir("msff_missing");
  GeneratorConfig g;
  g.image_size = 48;
  const auto manifest = generate_dataset(2, 1, dir.path(), g);
  std::filesystem::remove(dir.path() / manifest.samples[1].image_path);
  try {
    load_dataset(dir.path());
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find(manifest.samples[1].image_path), std::string::npos)
        << e.what();
  }
}

TEST(LoadDataset, UnknownVersionIsAFormatError) {
  testing::TempDir dir("msff_version");
  GeneratorConfig g;
  g.image_size = 48;
  generate_dataset(1, 1, dir.path(), g);
  auto j = nlohmann::json::parse(slurp(dir / "manifest.json"));
  j["version"] = 99;
  spit(dir / "manifest.json", j.dump());
  EXPECT_THROW(load_dataset(dir.path()), FormatError);
}

TEST(Manifest, SerializationRoundTrip) {
  DatasetManifest m;
  m.seed = 3;
  m.image_size = 50;
  m.generator_params.image_size = 50;
  HandAnnotation a;
  a.image_path = "images/000000.png";
  JointSet j{};
  j[4] = {1.0 / 3.0, 17.25};
  a.hands.push_back({j, HandRegion{1, 2, 3, 4}});
  m.samples.push_back(a);
  const std::string text = manifest_to_json(m);
  const auto back = manifest_from_json(text, "mem");
  EXPECT_EQ(manifest_to_json(back), text);
  EXPECT_EQ(back.samples[0].hands[0].joints[4].x, 1.0 / 3.0);
  EXPECT_THROW(manifest_from_json("{not json", "mem"), FormatError);
}

TEST(SplitSeed, Deterministic) {
  EXPECT_EQ(split_seed(1, 2), split_seed(1, 2));
  EXPECT_NE(split_seed(1, 2), split_seed(1, 3));
  EXPECT_NE(split_seed(1, 2), split_seed(2, 2));
}

}  // namespace
}  // namespace msff
