#include "msff/json_io.hpp"

#include <set>

namespace msff {

namespace {

class Reader {
 public:
  Reader(const Json& j, std::string section) : j_(j), section_(std::move(section)) {
    if (!j_.is_object()) throw ConfigError(section_, "expected an object");
  }

  template <typename T>
  void get(const char* key, T& out) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    try {
      if constexpr (std::is_same_v<T, bool>) {
        if (!it->is_boolean()) throw ConfigError(field(key), "expected a boolean");
      } else if constexpr (std::is_integral_v<T>) {
        if (!it->is_number_integer()) throw ConfigError(field(key), "expected an integer");
      } else if constexpr (std::is_floating_point_v<T>) {
        if (!it->is_number()) throw ConfigError(field(key), "expected a number");
      }
      out = it->template get<T>();
    } catch (const Json::exception& e) {
      throw ConfigError(field(key), e.what());
    }
  }

  template <typename E>
  void get_enum(const char* key, E& out, std::initializer_list<std::pair<const char*, E>> names) {
    seen_.insert(key);
    auto it = j_.find(key);
    if (it == j_.end()) return;
    if (it->is_string()) {
      for (const auto& [name, value] : names) {
        if (*it == name) {
          out = value;
          return;
        }
      }
    }
    std::string allowed;
    for (const auto& [name, value] : names) allowed += std::string(allowed.empty() ? "" : "|") + name;
    throw ConfigError(field(key), "expected one of " + allowed);
  }

  const Json* child(const char* key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void finish() const {
    for (const auto& [key, value] : j_.items()) {
      if (!seen_.count(key)) throw ConfigError(field(key.c_str()), "unknown key");
    }
  }

  std::string field(const char* key) const { return section_ + "." + key; }

 private:
  const Json& j_;
  std::string section_;
  std::set<std::string> seen_;
};

}  // namespace

std::string to_string(Activation a) {
  return a == Activation::Rectifier ? "rectifier" : "smooth";
}

std::string to_string(OptimizerKind k) {
  switch (k) {
    case OptimizerKind::PlainGradient:
      return "plain-gradient";
    case OptimizerKind::Momentum:
      return "momentum";
    case OptimizerKind::AdaptiveMoment:
      break;
  }
  return "adaptive-moment";
}

Json to_json(const ModelConfig& c) {
  return Json{{"num_msff", c.num_msff},
              {"blocks_per_fec", c.blocks_per_fec},
              {"units_per_block", c.units_per_block},
              {"branch_channels", c.branch_channels},
              {"crop_size", c.crop_size},
              {"heatmap_size", c.heatmap_size},
              {"joint_count", c.joint_count},
              {"activation", to_string(c.activation)},
              {"sshfr_channels", c.sshfr_channels},
              {"use_sshfr", c.use_sshfr},
              {"use_transpose", c.use_transpose},
              {"use_attention", c.use_attention},
              {"use_losswise", c.use_losswise},
              {"use_aomr", c.use_aomr}};
}

void update_from_json(ModelConfig& c, const Json& j, const std::string& section) {
  Reader r(j, section);
  r.get("num_msff", c.num_msff);
  r.get("blocks_per_fec", c.blocks_per_fec);
  r.get("units_per_block", c.units_per_block);
  r.get("branch_channels", c.branch_channels);
  r.get("crop_size", c.crop_size);
  r.get("heatmap_size", c.heatmap_size);
  r.get("joint_count", c.joint_count);
  r.get_enum("activation", c.activation,
             {{"rectifier", Activation::Rectifier}, {"smooth", Activation::Smooth}});
  if (const Json* widths = r.child("sshfr_channels")) {
    if (!widths->is_array() || widths->size() != kSshfrLayers) {
      throw ConfigError(r.field("sshfr_channels"), "expected an array of 10 integers");
    }
    for (int l = 0; l < kSshfrLayers; ++l) {
      if (!(*widths)[l].is_number_integer()) {
        throw ConfigError(r.field("sshfr_channels"), "expected an array of 10 integers");
      }
      c.sshfr_channels[l] = (*widths)[l].get<int>();
    }
  }
  r.get("use_sshfr", c.use_sshfr);
  r.get("use_transpose", c.use_transpose);
  r.get("use_attention", c.use_attention);
  r.get("use_losswise", c.use_losswise);
  r.get("use_aomr", c.use_aomr);
  r.finish();
}

Json to_json(const GeneratorConfig& c) {
  return Json{{"image_size", c.image_size},
              {"two_hand_probability", c.two_hand_probability},
              {"unit_length", c.unit_length},
              {"palm_scale_min", c.palm_scale_min},
              {"palm_scale_max", c.palm_scale_max},
              {"segment_lengths", c.segment_lengths},
              {"finger_angles_deg", c.finger_angles_deg},
              {"max_rotation_deg", c.max_rotation_deg},
              {"max_flexion_deg", c.max_flexion_deg},
              {"max_abduction_deg", c.max_abduction_deg},
              {"center_min", c.center_min},
              {"center_max", c.center_max},
              {"bone_radius", c.bone_radius},
              {"joint_radius", c.joint_radius},
              {"background_noise", c.background_noise}};
}

void update_from_json(GeneratorConfig& c, const Json& j, const std::string& section) {
  Reader r(j, section);
  r.get("image_size", c.image_size);
  r.get("two_hand_probability", c.two_hand_probability);
  r.get("unit_length", c.unit_length);
  r.get("palm_scale_min", c.palm_scale_min);
  r.get("palm_scale_max", c.palm_scale_max);
  r.get("segment_lengths", c.segment_lengths);
  r.get("finger_angles_deg", c.finger_angles_deg);
  r.get("max_rotation_deg", c.max_rotation_deg);
  r.get("max_flexion_deg", c.max_flexion_deg);
  r.get("max_abduction_deg", c.max_abduction_deg);
  r.get("center_min", c.center_min);
  r.get("center_max", c.center_max);
  r.get("bone_radius", c.bone_radius);
  r.get("joint_radius", c.joint_radius);
  r.get("background_noise", c.background_noise);
  r.finish();
}

Json to_json(const TrainConfig& c) {
  return Json{{"epochs", c.epochs},
              {"batch_size", c.batch_size},
              {"learning_rate", c.learning_rate},
              {"optimizer", to_string(c.optimizer)},
              {"seed", c.seed},
              {"losswise_epsilon", c.losswise_epsilon},
              {"raw_losswise", c.raw_losswise},
              {"checkpoint_every", c.checkpoint_every},
              {"max_steps", c.max_steps},
              {"momentum", c.momentum},
              {"beta1", c.beta1},
              {"beta2", c.beta2},
              {"adam_epsilon", c.adam_epsilon},
              {"target_sigma", c.target_sigma},
              {"region_margin", c.region_margin}};
}

void update_from_json(TrainConfig& c, const Json& j, const std::string& section) {
  Reader r(j, section);
  r.get("epochs", c.epochs);
  r.get("batch_size", c.batch_size);
  r.get("learning_rate", c.learning_rate);
  r.get_enum("optimizer", c.optimizer,
             {{"plain-gradient", OptimizerKind::PlainGradient},
              {"momentum", OptimizerKind::Momentum},
              {"adaptive-moment", OptimizerKind::AdaptiveMoment}});
  r.get("seed", c.seed);
  r.get("losswise_epsilon", c.losswise_epsilon);
  r.get("raw_losswise", c.raw_losswise);
  r.get("checkpoint_every", c.checkpoint_every);
  r.get("max_steps", c.max_steps);
  r.get("momentum", c.momentum);
  r.get("beta1", c.beta1);
  r.get("beta2", c.beta2);
  r.get("adam_epsilon", c.adam_epsilon);
  r.get("target_sigma", c.target_sigma);
  r.get("region_margin", c.region_margin);
  r.finish();
}

}  // namespace msff
