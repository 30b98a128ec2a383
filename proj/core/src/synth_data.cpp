#include "msff/synth_data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <sstream>

#include "msff/anatomy_graph.hpp"
#include "msff/image_io.hpp"
#include "msff/json_io.hpp"

namespace msff {

namespace fs = std::filesystem;

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;
// Palm outline: wrist, then the base joint of every finger.
constexpr std::array<int, 6> kPalmOutline{0, 1, 5, 9, 13, 17};

Point2 direction(double angle) { return {std::sin(angle), -std::cos(angle)}; }

double uniform(std::mt19937_64& rng, double lo, double hi) {
  return std::uniform_real_distribution<double>(lo, hi)(rng);
}

double segment_distance(const Point2& p, const Point2& a, const Point2& b) {
  const double dx = b.x - a.x;
  const double dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0.0 ? ((p.x - a.x) * dx + (p.y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(p.x - (a.x + t * dx), p.y - (a.y + t * dy));
}

using Color = std::array<float, 3>;

void blend(Image& img, int x, int y, const Color& color, double coverage) {
  const auto a = static_cast<float>(coverage);
  for (int c = 0; c < 3; ++c) img.at(c, y, x) = img.at(c, y, x) * (1.0f - a) + color[c] * a;
}

void draw_capsule(Image& img, const Point2& a, const Point2& b, double radius, const Color& color) {
  const int x0 = std::max(0, static_cast<int>(std::floor(std::min(a.x, b.x) - radius - 1)));
  const int x1 = std::min(img.width() - 1, static_cast<int>(std::ceil(std::max(a.x, b.x) + radius + 1)));
  const int y0 = std::max(0, static_cast<int>(std::floor(std::min(a.y, b.y) - radius - 1)));
  const int y1 = std::min(img.height() - 1, static_cast<int>(std::ceil(std::max(a.y, b.y) + radius + 1)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      const double d = segment_distance({double(x), double(y)}, a, b);
      const double coverage = std::clamp(radius + 0.5 - d, 0.0, 1.0);
      if (coverage > 0.0) blend(img, x, y, color, coverage);
    }
  }
}

bool inside_polygon(const Point2& p, const std::vector<Point2>& poly) {
  bool inside = false;
  for (std::size_t i = 0, j = poly.size() - 1; i < poly.size(); j = i++) {
    const Point2& a = poly[i];
    const Point2& b = poly[j];
    if ((a.y > p.y) != (b.y > p.y) && p.x < (b.x - a.x) * (p.y - a.y) / (b.y - a.y) + a.x) {
      inside = !inside;
    }
  }
  return inside;
}

void fill_polygon(Image& img, const std::vector<Point2>& poly, const Color& color) {
  double x0 = poly[0].x, x1 = poly[0].x, y0 = poly[0].y, y1 = poly[0].y;
  for (const Point2& p : poly) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  for (int y = std::max(0, int(std::floor(y0))); y <= std::min(img.height() - 1, int(std::ceil(y1))); ++y) {
    for (int x = std::max(0, int(std::floor(x0))); x <= std::min(img.width() - 1, int(std::ceil(x1))); ++x) {
      if (inside_polygon({double(x), double(y)}, poly)) blend(img, x, y, color, 1.0);
    }
  }
}

/// Pixels per palm unit, estimated from the drawn bone lengths.
double estimate_unit(const JointSet& joints, const GeneratorConfig& config) {
  const SkeletonGraph& g = hand_skeleton();
  std::vector<double> ratios;
  for (const auto& [a, b] : g.edges) {
    if (is_occluded_coord(joints[a]) || is_occluded_coord(joints[b])) continue;
    const int finger = (b - 1) / 4;
    const int segment = (b - 1) % 4;
    ratios.push_back(distance(joints[a], joints[b]) / config.segment_lengths[finger][segment]);
  }
  if (ratios.empty()) return config.unit_length * config.image_size;
  std::nth_element(ratios.begin(), ratios.begin() + ratios.size() / 2, ratios.end());
  return ratios[ratios.size() / 2];
}

void require(bool ok, const char* field, const char* what) {
  if (!ok) throw ConfigError(std::string("generator.") + field, what);
}

[[noreturn]] void format_fail(const fs::path& path, const std::string& field, const std::string& what) {
  throw FormatError(path.string(), field, what);
}

Json region_json(const HandRegion& r) { return Json{{"x", r.x}, {"y", r.y}, {"w", r.w}, {"h", r.h}}; }

}  // namespace

void GeneratorConfig::validate() const {
  require(image_size >= 16, "image_size", "must be >= 16");
  require(two_hand_probability >= 0.0 && two_hand_probability <= 1.0, "two_hand_probability",
          "must be in [0,1]");
  require(unit_length > 0.0, "unit_length", "must be positive");
  require(palm_scale_min > 0.0 && palm_scale_min <= palm_scale_max, "palm_scale_min",
          "need 0 < palm_scale_min <= palm_scale_max");
  for (const auto& finger : segment_lengths) {
    for (double len : finger) require(len > 0.0, "segment_lengths", "every length must be positive");
  }
  require(max_rotation_deg >= 0.0, "max_rotation_deg", "must be non-negative");
  require(max_flexion_deg >= 0.0, "max_flexion_deg", "must be non-negative");
  require(max_abduction_deg >= 0.0, "max_abduction_deg", "must be non-negative");
  require(center_min >= 0.0 && center_min <= center_max && center_max <= 1.0, "center_min",
          "need 0 <= center_min <= center_max <= 1");
  require(bone_radius > 0.0, "bone_radius", "must be positive");
  require(joint_radius > 0.0, "joint_radius", "must be positive");
  require(background_noise >= 0.0, "background_noise", "must be non-negative");
}

std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ull * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ull;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBull;
  return z ^ (z >> 31);
}

HandPose forward_kinematics(const Point2& wrist, double rotation, double palm_scale,
                            bool mirrored, const std::array<double, 5>& abduction,
                            const std::array<std::array<double, 3>, 5>& flexion,
                            const GeneratorConfig& config) {
  HandPose pose;
  pose.wrist = wrist;
  pose.rotation = rotation;
  pose.palm_scale = palm_scale;
  pose.mirrored = mirrored;
  pose.abduction = abduction;
  pose.flexion = flexion;

  const double unit = config.unit_length * config.image_size * palm_scale;
  const double side = mirrored ? -1.0 : 1.0;
  pose.raw_joints[0] = wrist;
  for (int f = 0; f < 5; ++f) {
    const double base_angle = rotation + side * config.finger_angles_deg[f] * kDegToRad;
    const Point2 u = direction(base_angle);
    Point2 p{wrist.x + config.segment_lengths[f][0] * unit * u.x,
             wrist.y + config.segment_lengths[f][0] * unit * u.y};
    pose.raw_joints[4 * f + 1] = p;
    // The thumb curls towards the fingers, the fingers towards the thumb.
    const double curl = (f == 0 ? 1.0 : -1.0) * side;
    double angle = base_angle + side * abduction[f];
    for (int s = 0; s < 3; ++s) {
      angle += curl * flexion[f][s];
      const Point2 d = direction(angle);
      const double len = config.segment_lengths[f][s + 1] * unit;
      p = {p.x + len * d.x, p.y + len * d.y};
      pose.raw_joints[4 * f + 2 + s] = p;
    }
  }
  const double limit = config.image_size;
  for (int k = 0; k < kJointCount; ++k) {
    const Point2& p = pose.raw_joints[k];
    pose.occluded[k] = !(p.x >= 0.0 && p.x < limit && p.y >= 0.0 && p.y < limit);
    pose.joints[k] = pose.occluded[k] ? Point2{0.0, 0.0} : p;
  }
  return pose;
}

HandPose sample_hand_pose(std::uint64_t seed, const GeneratorConfig& config) {
  config.validate();
  std::mt19937_64 rng(seed);
  const double rotation = uniform(rng, -config.max_rotation_deg, config.max_rotation_deg) * kDegToRad;
  const double scale = uniform(rng, config.palm_scale_min, config.palm_scale_max);
  const bool mirrored = uniform(rng, 0.0, 1.0) < 0.5;
  std::array<double, 5> abduction{};
  std::array<std::array<double, 3>, 5> flexion{};
  for (int f = 0; f < 5; ++f) {
    abduction[f] = uniform(rng, -config.max_abduction_deg, config.max_abduction_deg) * kDegToRad;
    for (double& a : flexion[f]) a = uniform(rng, 0.0, config.max_flexion_deg) * kDegToRad;
  }
  const double cx = uniform(rng, config.center_min, config.center_max) * config.image_size;
  const double cy = uniform(rng, config.center_min, config.center_max) * config.image_size;
  // Put the middle of the middle finger chain on the sampled centre.
  const auto& middle = config.segment_lengths[2];
  const double half_reach =
      0.5 * (middle[0] + middle[1] + middle[2] + middle[3]) * config.unit_length * config.image_size * scale;
  const Point2 u = direction(rotation);
  const Point2 wrist{cx - half_reach * u.x, cy - half_reach * u.y};
  return forward_kinematics(wrist, rotation, scale, mirrored, abduction, flexion, config);
}

Image render_hand(const std::vector<JointSet>& hands, const GeneratorConfig& config,
                  std::uint64_t seed) {
  config.validate();
  const int size = config.image_size;
  std::mt19937_64 rng(seed);
  Image img(3, size, size);

  const Color base{static_cast<float>(uniform(rng, 0.05, 0.25)),
                   static_cast<float>(uniform(rng, 0.25, 0.55)),
                   static_cast<float>(uniform(rng, 0.30, 0.65))};
  constexpr int kGrid = 6;
  std::array<double, (kGrid + 1) * (kGrid + 1)> lattice{};
  for (double& v : lattice) v = uniform(rng, -1.0, 1.0);
  const double cell = static_cast<double>(size) / kGrid;
  for (int y = 0; y < size; ++y) {
    for (int x = 0; x < size; ++x) {
      const double gx = x / cell;
      const double gy = y / cell;
      const int ix = std::min(static_cast<int>(gx), kGrid - 1);
      const int iy = std::min(static_cast<int>(gy), kGrid - 1);
      const double fx = gx - ix;
      const double fy = gy - iy;
      const auto at = [&](int a, int b) { return lattice[b * (kGrid + 1) + a]; };
      const double smooth = (at(ix, iy) * (1 - fx) + at(ix + 1, iy) * fx) * (1 - fy) +
                            (at(ix, iy + 1) * (1 - fx) + at(ix + 1, iy + 1) * fx) * fy;
      for (int c = 0; c < 3; ++c) {
        const double grain = uniform(rng, -0.5, 0.5) * config.background_noise;
        double v = base[c] + 0.1 * smooth + grain;
        // keep the red channel well below any skin tone
        if (c == 0) v = std::min(v, 0.38);
        img.at(c, y, x) = static_cast<float>(std::clamp(v, 0.0, 1.0));
      }
    }
  }

  const SkeletonGraph& graph = hand_skeleton();
  for (const JointSet& joints : hands) {
    const Color skin{static_cast<float>(uniform(rng, 0.78, 0.95)),
                     static_cast<float>(uniform(rng, 0.50, 0.68)),
                     static_cast<float>(uniform(rng, 0.38, 0.55))};
    const Color knuckle{skin[0] * 0.8f, skin[1] * 0.8f, skin[2] * 0.8f};
    const double unit = estimate_unit(joints, config);

    std::vector<Point2> palm;
    for (int k : kPalmOutline) {
      if (!is_occluded_coord(joints[k])) palm.push_back(joints[k]);
    }
    if (palm.size() == kPalmOutline.size()) fill_polygon(img, palm, skin);

    for (const auto& [a, b] : graph.edges) {
      if (is_occluded_coord(joints[a]) || is_occluded_coord(joints[b])) continue;
      const bool palm_bone = (a == 0);
      const double radius = (palm_bone ? 0.45 : config.bone_radius) * unit;
      draw_capsule(img, joints[a], joints[b], std::max(radius, 0.75), skin);
    }
    for (const Point2& p : joints) {
      if (is_occluded_coord(p)) continue;
      draw_capsule(img, p, p, std::max(config.joint_radius * unit, 1.5), knuckle);
    }
  }
  return img;
}

std::string manifest_to_json(const DatasetManifest& m) {
  Json samples = Json::array();
  for (const HandAnnotation& a : m.samples) {
    Json hands = Json::array();
    for (const HandInstance& h : a.hands) {
      Json joints = Json::array();
      for (const Point2& p : h.joints) joints.push_back(Json::array({p.x, p.y}));
      Json hand{{"joints", joints}};
      if (h.bbox) hand["bbox"] = region_json(*h.bbox);
      hands.push_back(std::move(hand));
    }
    samples.push_back(Json{{"image_path", a.image_path}, {"hands", hands}});
  }
  Json j{{"version", m.version},
         {"seed", m.seed},
         {"image_size", m.image_size},
         {"generator_params", to_json(m.generator_params)},
         {"samples", samples}};
  return j.dump(2) + "\n";
}

DatasetManifest manifest_from_json(const std::string& text, const std::string& source) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    format_fail(source, "", std::string("invalid JSON: ") + e.what());
  }
  if (!j.is_object()) format_fail(source, "", "manifest must be a JSON object");
  DatasetManifest m;
  const auto number = [&](const Json& v, const std::string& field) {
    if (!v.is_number()) format_fail(source, field, "expected a number");
    return v.get<double>();
  };
  if (!j.contains("version") || !j["version"].is_number_integer()) {
    format_fail(source, "version", "missing or not an integer");
  }
  m.version = j["version"].get<int>();
  if (m.version != kManifestVersion) {
    format_fail(source, "version", "unsupported manifest version " + std::to_string(m.version));
  }
  if (j.contains("seed")) {
    if (!j["seed"].is_number_integer()) format_fail(source, "seed", "expected an integer");
    m.seed = j["seed"].get<std::uint64_t>();
  }
  if (!j.contains("image_size") || !j["image_size"].is_number_integer()) {
    format_fail(source, "image_size", "missing or not an integer");
  }
  m.image_size = j["image_size"].get<int>();
  if (m.image_size < 0) format_fail(source, "image_size", "must be >= 0");
  if (j.contains("generator_params")) {
    try {
      update_from_json(m.generator_params, j["generator_params"], "generator_params");
    } catch (const ConfigError& e) {
      format_fail(source, e.field(), e.what());
    }
  }
  if (!j.contains("samples") || !j["samples"].is_array()) {
    format_fail(source, "samples", "missing or not an array");
  }
  const auto& samples = j["samples"];
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const std::string sfield = "samples[" + std::to_string(i) + "]";
    const Json& s = samples[i];
    if (!s.is_object()) format_fail(source, sfield, "expected an object");
    HandAnnotation a;
    if (!s.contains("image_path") || !s["image_path"].is_string()) {
      format_fail(source, sfield + ".image_path", "missing or not a string");
    }
    a.image_path = s["image_path"].get<std::string>();
    if (!s.contains("hands") || !s["hands"].is_array()) {
      format_fail(source, sfield + ".hands", "missing or not an array");
    }
    for (std::size_t h = 0; h < s["hands"].size(); ++h) {
      const std::string hfield = sfield + ".hands[" + std::to_string(h) + "]";
      const Json& hj = s["hands"][h];
      if (!hj.is_object() || !hj.contains("joints") || !hj["joints"].is_array() ||
          hj["joints"].size() != kJointCount) {
        format_fail(source, hfield + ".joints", "expected 21 [x, y] pairs");
      }
      HandInstance hand;
      for (int k = 0; k < kJointCount; ++k) {
        const std::string jfield = hfield + ".joints[" + std::to_string(k) + "]";
        const Json& p = hj["joints"][k];
        if (!p.is_array() || p.size() != 2) format_fail(source, jfield, "expected [x, y]");
        hand.joints[k] = {number(p[0], jfield), number(p[1], jfield)};
      }
      if (hj.contains("bbox")) {
        const Json& b = hj["bbox"];
        const std::string bfield = hfield + ".bbox";
        if (!b.is_object()) format_fail(source, bfield, "expected {x, y, w, h}");
        for (const char* key : {"x", "y", "w", "h"}) {
          if (!b.contains(key)) format_fail(source, bfield, std::string("missing ") + key);
        }
        hand.bbox = HandRegion{number(b["x"], bfield), number(b["y"], bfield),
                               number(b["w"], bfield), number(b["h"], bfield)};
      }
      a.hands.push_back(hand);
    }
    m.samples.push_back(std::move(a));
  }
  return m;
}

DatasetManifest generate_dataset(int n_images, std::uint64_t seed, const fs::path& out_dir,
                                 const GeneratorConfig& config) {
  if (n_images <= 0) throw ArgumentError("generate_dataset: n must be positive, got " + std::to_string(n_images));
  config.validate();
  try {
    fs::create_directories(out_dir / "images");
  } catch (const fs::filesystem_error& e) {
    throw IoError("cannot create " + (out_dir / "images").string() + ": " + e.what());
  }

  DatasetManifest manifest;
  manifest.seed = seed;
  manifest.image_size = config.image_size;
  manifest.generator_params = config;
  for (int i = 0; i < n_images; ++i) {
    const std::uint64_t image_seed = split_seed(seed, static_cast<std::uint64_t>(i));
    std::mt19937_64 rng(image_seed);
    const int hand_count = uniform(rng, 0.0, 1.0) < config.two_hand_probability ? 2 : 1;

    HandAnnotation annotation;
    char name[32];
    std::snprintf(name, sizeof(name), "images/%06d.png", i);
    annotation.image_path = name;
    std::vector<JointSet> raw;
    for (int h = 0; h < hand_count; ++h) {
      const HandPose pose = sample_hand_pose(split_seed(image_seed, 1 + h), config);
      raw.push_back(pose.raw_joints);
      annotation.hands.push_back({pose.joints, visible_bounds(pose.joints)});
    }
    write_png(out_dir / annotation.image_path, render_hand(raw, config, split_seed(image_seed, 100)));
    manifest.samples.push_back(std::move(annotation));
  }

  const fs::path manifest_path = out_dir / "manifest.json";
  std::ofstream out(manifest_path, std::ios::binary);
  if (!out) throw IoError("cannot write " + manifest_path.string());
  out << manifest_to_json(manifest);
  if (!out) throw IoError("write failed for " + manifest_path.string());
  return manifest;
}

Dataset load_dataset(const fs::path& dir) {
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path, std::ios::binary);
  if (!in) format_fail(manifest_path, "", "manifest not found");
  std::stringstream buffer;
  buffer << in.rdbuf();

  Dataset ds;
  ds.root = dir;
  ds.manifest = manifest_from_json(buffer.str(), manifest_path.string());
  for (std::size_t i = 0; i < ds.manifest.samples.size(); ++i) {
    const HandAnnotation& a = ds.manifest.samples[i];
    const std::string sfield = "samples[" + std::to_string(i) + "]";
    const fs::path image_path = dir / a.image_path;
    if (!fs::exists(image_path)) {
      format_fail(manifest_path, sfield + ".image_path", "missing image " + image_path.string());
    }
    Image image = read_png(image_path);
    if (ds.manifest.image_size > 0 &&
        (image.width() != ds.manifest.image_size || image.height() != ds.manifest.image_size)) {
      format_fail(manifest_path, sfield + ".image_path",
                  image_path.string() + " is " + std::to_string(image.width()) + "x" +
                      std::to_string(image.height()) + ", manifest says " +
                      std::to_string(ds.manifest.image_size));
    }
    for (std::size_t h = 0; h < a.hands.size(); ++h) {
      for (int k = 0; k < kJointCount; ++k) {
        const Point2& p = a.hands[h].joints[k];
        if (is_occluded_coord(p)) continue;
        if (!(p.x >= 0.0 && p.x < image.width() && p.y >= 0.0 && p.y < image.height())) {
          format_fail(manifest_path,
                      sfield + ".hands[" + std::to_string(h) + "].joints[" + std::to_string(k) + "]",
                      "coordinate outside the image and not the (0,0) occlusion marker");
        }
      }
    }
    ds.samples.push_back({std::move(image), a});
  }
  return ds;
}

}  // namespace msff
