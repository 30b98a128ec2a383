#include "cli.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iomanip>
#include <iostream>
#include <sstream>

#include "msff/anatomy_graph.hpp"
#include "msff/evaluation.hpp"
#include "msff/image_io.hpp"
#include "msff/log.hpp"
#include "msff/plot.hpp"
#include "msff/stage1.hpp"

namespace msff::cli {

namespace fs = std::filesystem;

void RunConfig::validate() const {
  if (preset != "default" && preset != "micro") {
    throw ConfigError("preset", "expected \"default\" or \"micro\"");
  }
  model.validate();
  train.validate();
  generator.validate();
}

RunConfig run_config_from_json(const Json& j) {
  if (!j.is_object()) throw ConfigError("config", "expected a JSON object");
  RunConfig c;
  for (const auto& [key, value] : j.items()) {
    if (key != "preset" && key != "model" && key != "train" && key != "generator" &&
        key != "invocation") {
      throw ConfigError(key, "unknown key");
    }
  }
  if (auto it = j.find("preset"); it != j.end()) {
    if (!it->is_string()) throw ConfigError("preset", "expected a string");
    c.preset = it->get<std::string>();
    if (c.preset == "micro") {
      c.model = ModelConfig::micro();
    } else if (c.preset != "default") {
      throw ConfigError("preset", "expected \"default\" or \"micro\"");
    }
  }
  if (auto it = j.find("model"); it != j.end()) update_from_json(c.model, *it, "model");
  if (auto it = j.find("train"); it != j.end()) update_from_json(c.train, *it, "train");
  if (auto it = j.find("generator"); it != j.end()) {
    update_from_json(c.generator, *it, "generator");
  }
  c.validate();
  return c;
}

Json to_json(const RunConfig& config) {
  return {{"preset", config.preset},
          {"model", msff::to_json(config.model)},
          {"train", msff::to_json(config.train)},
          {"generator", msff::to_json(config.generator)}};
}

RunConfig load_run_config(const fs::path& path, const std::vector<std::string>& overrides) {
  Json doc = Json::object();
  if (!path.empty()) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot read config " + path.string());
    try {
      doc = Json::parse(in);
    } catch (const Json::exception& e) {
      throw FormatError(path.string(), "", e.what());
    }
  }
  for (const std::string& item : overrides) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw ConfigError(item, "override must look like section.key=value");
    const std::string key = item.substr(0, eq);
    const std::string text = item.substr(eq + 1);
    Json value;
    try {
      value = Json::parse(text);
    } catch (const Json::exception&) {
      value = text;
    }
    const auto dot = key.find('.');
    if (dot == std::string::npos) {
      doc[key] = value;
    } else {
      const std::string section = key.substr(0, dot);
      if (doc.contains(section) && !doc[section].is_object()) {
        throw ConfigError(section, "expected an object");
      }
      doc[section][key.substr(dot + 1)] = value;
    }
  }
  return run_config_from_json(doc);
}

namespace {

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  if (!out) throw IoError("write failed for " + path.string());
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw IoError("cannot create directory " + dir.string() + ": " + ec.message());
}

std::string csv_header(int stages) {
  std::ostringstream out;
  out << "step,epoch,total,mean_joint_error";
  for (int s = 1; s <= stages; ++s) out << ",loss_" << s;
  for (int s = 1; s <= stages; ++s) out << ",weight_" << s;
  out << '\n';
  return out.str();
}

std::string csv_row(const LogRow& row) {
  std::ostringstream out;
  out << std::setprecision(10) << row.step << ',' << row.epoch << ',' << row.total << ','
      << row.mean_joint_error;
  for (double v : row.stage_losses) out << ',' << v;
  for (double v : row.weights) out << ',' << v;
  out << '\n';
  return out.str();
}

std::string log_csv(const std::vector<LogRow>& rows, int stages) {
  std::string text = csv_header(stages);
  for (const auto& r : rows) text += csv_row(r);
  return text;
}

void write_report(const fs::path& dir, const EvalReport& report) {
  write_text(dir / "report.json", report_to_json(report).dump(2) + "\n");
  write_text(dir / "pck.csv", pck_csv(report));
}

std::string step_name(int step) {
  std::ostringstream s;
  s << "step_" << std::setw(6) << std::setfill('0') << step << ".ckpt";
  return s.str();
}

// --- subcommands ----------------------------------------------------------

struct GenArgs {
  int n = 0;
  std::uint64_t seed = 0;
  fs::path out;
  fs::path config;
  std::vector<std::string> overrides;
};

int gen_data(const GenArgs& a, std::ostream& out) {
  RunConfig cfg = load_run_config(a.config, a.overrides);
  if (a.n < 1) throw ConfigError("n", "must be >= 1");
  ensure_dir(a.out);
  const DatasetManifest manifest = generate_dataset(a.n, a.seed, a.out, cfg.generator);
  Json echo{{"invocation", {{"command", "gen-data"}, {"n", a.n}, {"seed", a.seed}}},
            {"generator", msff::to_json(cfg.generator)}};
  write_text(a.out / "config.json", echo.dump(2) + "\n");
  std::size_t hands = 0;
  for (const auto& s : manifest.samples) hands += s.hands.size();
  out << "generated " << manifest.samples.size() << " images, " << hands << " hands in "
      << a.out.string() << '\n';
  return 0;
}

struct TrainArgs {
  fs::path data;
  fs::path config;
  fs::path out;
  fs::path resume;
  std::vector<std::string> overrides;
};

int train_cmd(const TrainArgs& a, std::ostream& out) {
  RunConfig cfg = load_run_config(a.config, a.overrides);
  TrainState state;
  if (!a.resume.empty()) {
    state = load_checkpoint(a.resume, cfg.model);
    // Hyperparameters come from the checkpoint; only the stopping limits may move.
    TrainConfig stored = state.train_config;
    stored.max_steps = cfg.train.max_steps;
    stored.epochs = cfg.train.epochs;
    if (!(stored == cfg.train)) {
      log::warn("resuming with the train section stored in " + a.resume.string());
    }
    cfg.train = stored;
    state.train_config = stored;
  }
  const Dataset dataset = load_dataset(a.data);
  const auto examples =
      prepare_examples(dataset, cfg.model, cfg.train.target_sigma, cfg.train.region_margin);
  if (examples.empty()) throw ArgumentError("dataset " + a.data.string() + " has no usable hands");
  if (a.resume.empty()) state = initial_state(cfg.model, cfg.train);

  ensure_dir(a.out);
  ensure_dir(a.out / "checkpoints");
  Json echo = to_json(cfg);
  echo["invocation"] = {{"command", "train"}, {"data", a.data.string()}};
  if (!a.resume.empty()) echo["invocation"]["resume"] = a.resume.string();
  write_text(a.out / "config.json", echo.dump(2) + "\n");

  std::ofstream log_file(a.out / "log.csv", std::ios::trunc);
  if (!log_file) throw IoError("cannot write " + (a.out / "log.csv").string());
  log_file << csv_header(cfg.model.num_msff);

  TrainHooks hooks;
  hooks.on_step = [&](const LogRow& row) { log_file << csv_row(row) << std::flush; };
  hooks.on_checkpoint = [&](const TrainState& s) {
    save_checkpoint(s, a.out / "checkpoints" / step_name(s.step));
  };
  hooks.divergence_dump = a.out / "diverged.ckpt";
  const TrainResult result = train(examples, std::move(state), hooks);
  save_checkpoint(result.state, a.out / "model.ckpt");

  out << "trained " << result.state.step << " steps on " << examples.size() << " hands";
  if (!result.log.empty()) {
    out << ", final loss " << result.log.back().total << ", joint error "
        << result.log.back().mean_joint_error;
  }
  out << "; checkpoint " << (a.out / "model.ckpt").string() << '\n';
  return 0;
}

struct EvalArgs {
  fs::path data;
  fs::path checkpoint;
  fs::path out;
};

int eval_cmd(const EvalArgs& a, std::ostream& out) {
  const TrainState state = load_checkpoint(a.checkpoint);
  const Dataset dataset = load_dataset(a.data);
  EvalOptions options;
  options.region_margin = state.train_config.region_margin;
  EvalReport report = evaluate(dataset, state.params, state.model_config, options);
  report.config["checkpoint"] = a.checkpoint.string();
  report.config["checkpoint_step"] = state.step;

  ensure_dir(a.out);
  Json echo{{"command", "eval"},
            {"data", a.data.string()},
            {"checkpoint", a.checkpoint.string()},
            {"model", msff::to_json(state.model_config)},
            {"train", msff::to_json(state.train_config)}};
  write_text(a.out / "config.json", echo.dump(2) + "\n");
  write_report(a.out, report);
  write_png(a.out / "pck.png", plot::pck_plot({report}));
  write_png(a.out / "spread.png", plot::spread_plot(report));

  out << "evaluated " << report.hands << " hands: ";
  for (std::size_t i = 0; i < report.taus.size(); ++i) {
    out << (i ? " " : "") << "PCK@" << report.taus[i] << "=" << report.pck_curve[i];
  }
  out << '\n';
  return 0;
}

struct PredictArgs {
  fs::path image;
  fs::path checkpoint;
  fs::path out;
};

int predict_cmd(const PredictArgs& a, std::ostream& out) {
  const TrainState state = load_checkpoint(a.checkpoint);
  const ModelConfig& config = state.model_config;
  const Image image = read_png(a.image);
  const FullFrameDetector detector;
  const auto regions = detector.detect(image);

  Image overlay = image;
  const plot::Color bone{0.0f, 0.9f, 0.2f};
  const plot::Color joint{1.0f, 0.1f, 0.1f};
  const plot::Color box{1.0f, 0.9f, 0.0f};
  Json hands = Json::array();
  for (const HandRegion& region : regions) {
    const HandCrop crop = crop_hand(image, region, config.crop_size);
    const auto stages = model_forward(crop.pixels, state.params, config);
    const JointSet decoded = decode_joints(stages.back());
    const JointSet joints = map_joints_to_source(decoded, crop.transform, config);

    Json coords = Json::array();
    Json spreads = Json::array();
    for (int k = 0; k < kJointCount; ++k) {
      coords.push_back({joints[k].x, joints[k].y});
      spreads.push_back(spread(stages.back(), k, decoded[k]));
    }
    hands.push_back({{"region", {{"x", region.x}, {"y", region.y}, {"w", region.w}, {"h", region.h}}},
                     {"joints", coords},
                     {"spread", spreads}});

    const auto px = [](double v) { return static_cast<int>(std::lround(v)); };
    plot::draw_line(overlay, px(region.x), px(region.y), px(region.x + region.w), px(region.y), box);
    plot::draw_line(overlay, px(region.x), px(region.y + region.h), px(region.x + region.w),
                    px(region.y + region.h), box);
    plot::draw_line(overlay, px(region.x), px(region.y), px(region.x), px(region.y + region.h), box);
    plot::draw_line(overlay, px(region.x + region.w), px(region.y), px(region.x + region.w),
                    px(region.y + region.h), box);
    for (const auto& [i, j] : hand_skeleton().edges) {
      plot::draw_line(overlay, px(joints[i].x), px(joints[i].y), px(joints[j].x), px(joints[j].y),
                      bone);
    }
    const double radius = std::max(1.0, image.width() / 128.0);
    for (const Point2& p : joints) plot::draw_disc(overlay, p.x, p.y, radius, joint);
  }

  ensure_dir(a.out);
  write_png(a.out / "overlay.png", overlay);
  Json doc{{"image", a.image.string()},
           {"checkpoint", a.checkpoint.string()},
           {"model", msff::to_json(config)},
           {"hands", hands}};
  write_text(a.out / "joints.json", doc.dump(2) + "\n");
  out << "predicted " << regions.size() << " hand(s); wrote " << (a.out / "overlay.png").string()
      << '\n';
  return 0;
}

struct AblateArgs {
  fs::path data;
  fs::path config;
  fs::path out;
  std::vector<std::string> overrides;
};

int ablate_cmd(const AblateArgs& a, std::ostream& out, std::ostream& err) {
  const RunConfig cfg = load_run_config(a.config, a.overrides);
  const Dataset dataset = load_dataset(a.data);
  ensure_dir(a.out);
  Json echo = to_json(cfg);
  echo["invocation"] = {{"command", "ablate"}, {"data", a.data.string()}};
  write_text(a.out / "config.json", echo.dump(2) + "\n");

  EvalOptions options;
  options.region_margin = cfg.train.region_margin;
  AblationHooks hooks;
  hooks.on_start = [&](const std::string& name) { out << "variant " << name << "..." << std::endl; };
  hooks.on_trained = [&](const std::string& name, const TrainState& s) {
    ensure_dir(a.out / "variants" / name);
    save_checkpoint(s, a.out / "variants" / name / "model.ckpt");
  };
  const AblationResult result = run_ablation(dataset, cfg.model, cfg.train, options, hooks);

  Json all = Json::object();
  std::vector<EvalReport> ablations;
  std::vector<std::pair<int, EvalReport>> counts;
  for (const auto& name : result.order) {
    const fs::path dir = a.out / "variants" / name;
    ensure_dir(dir);
    auto it = result.reports.find(name);
    if (it == result.reports.end()) {
      all[name] = {{"error", result.failures.at(name)}};
      continue;
    }
    write_report(dir, it->second);
    const auto logs = result.logs.find(name);
    if (logs != result.logs.end()) {
      write_text(dir / "log.csv", log_csv(logs->second, it->second.config["model"]["num_msff"]));
    }
    all[name] = report_to_json(it->second);
    if (name.size() == 2 && name[0] == 'n') {
      counts.emplace_back(name[1] - '0', it->second);
    } else {
      ablations.push_back(it->second);
    }
  }
  write_text(a.out / "ablation.csv", ablation_table(result));
  write_text(a.out / "report.json", all.dump(2) + "\n");
  if (auto full = result.reports.find("full"); full != result.reports.end()) {
    write_text(a.out / "pck.csv", pck_csv(full->second));
    write_png(a.out / "spread.png", plot::spread_plot(full->second));
  }
  if (!ablations.empty()) write_png(a.out / "pck.png", plot::pck_plot(ablations));
  if (!counts.empty()) write_png(a.out / "msff_count.png", plot::msff_count_plot(counts));

  out << ablation_table(result);
  if (!result.failures.empty()) {
    std::string names;
    for (const auto& [name, what] : result.failures) names += (names.empty() ? "" : ",") + name;
    err << Json{{"error", "ablation"}, {"field", "variants"}, {"message", "failed: " + names}}.dump()
        << '\n';
    return 1;
  }
  return 0;
}

void report_error(std::ostream& err, const std::string& kind, const std::string& field,
                  const std::string& path, const std::string& message) {
  Json j{{"error", kind}};
  if (!field.empty()) j["field"] = field;
  if (!path.empty()) j["path"] = path;
  j["message"] = message;
  err << j.dump() << '\n';
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Multi-scale hand joint detector: data generation, training, evaluation"};
  app.name("msff");
  app.require_subcommand(1);

  GenArgs gen;
  auto* gen_cmd = app.add_subcommand("gen-data", "Generate a synthetic hand dataset");
  gen_cmd->add_option("--n", gen.n, "Number of images")->required();
  gen_cmd->add_option("--seed", gen.seed, "Generator seed")->required();
  gen_cmd->add_option("--out", gen.out, "Output directory")->required();
  gen_cmd->add_option("--config", gen.config, "JSON config (generator section is used)");
  gen_cmd->add_option("--set", gen.overrides, "Override, e.g. generator.image_size=96");

  TrainArgs tr;
  auto* train_sub = app.add_subcommand("train", "Train a model");
  train_sub->add_option("--data", tr.data, "Dataset directory")->required();
  train_sub->add_option("--config", tr.config, "JSON run config");
  train_sub->add_option("--out", tr.out, "Run directory")->required();
  train_sub->add_option("--resume", tr.resume, "Continue from a checkpoint");
  train_sub->add_option("--set", tr.overrides, "Override, e.g. train.epochs=5");

  EvalArgs ev;
  auto* eval_sub = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
  eval_sub->add_option("--data", ev.data, "Dataset directory")->required();
  eval_sub->add_option("--checkpoint", ev.checkpoint, "Checkpoint file")->required();
  eval_sub->add_option("--out", ev.out, "Report directory")->required();

  PredictArgs pr;
  auto* predict_sub = app.add_subcommand("predict", "Detect joints in one image");
  predict_sub->add_option("--image", pr.image, "PNG image")->required();
  predict_sub->add_option("--checkpoint", pr.checkpoint, "Checkpoint file")->required();
  predict_sub->add_option("--out", pr.out, "Output directory")->required();

  AblateArgs ab;
  auto* ablate_sub = app.add_subcommand("ablate", "Train and evaluate every ablation variant");
  ablate_sub->add_option("--data", ab.data, "Dataset directory")->required();
  ablate_sub->add_option("--config", ab.config, "JSON run config");
  ablate_sub->add_option("--out", ab.out, "Output directory")->required();
  ablate_sub->add_option("--set", ab.overrides, "Override, e.g. train.max_steps=20");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp&) {
    out << app.help();
    return 0;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return 0;
  } catch (const CLI::ParseError& e) {
    report_error(err, "usage", "", "", e.what());
    err << app.help();
    return 2;
  }

  try {
    if (*gen_cmd) return gen_data(gen, out);
    if (*train_sub) return train_cmd(tr, out);
    if (*eval_sub) return eval_cmd(ev, out);
    if (*predict_sub) return predict_cmd(pr, out);
    if (*ablate_sub) return ablate_cmd(ab, out, err);
  } catch (const ConfigError& e) {
    report_error(err, "config", e.field(), "", e.what());
    return 1;
  } catch (const FormatError& e) {
    report_error(err, "format", e.field(), e.path(), e.what());
    return 1;
  } catch (const TrainingDiverged& e) {
    report_error(err, "diverged", "", e.dump_path(), e.what());
    return 1;
  } catch (const IoError& e) {
    report_error(err, "io", "", "", e.what());
    return 1;
  } catch (const std::exception& e) {
    report_error(err, "runtime", "", "", e.what());
    return 1;
  }
  return 2;
}

}  // namespace msff::cli
