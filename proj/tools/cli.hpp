#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "msff/json_io.hpp"
#include "msff/model.hpp"
#include "msff/synth_data.hpp"
#include "msff/training.hpp"

namespace msff::cli {

/// Everything needed to reproduce a run. The config file is a JSON object
/// with optional "preset" ("default" or "micro") and "model", "train" and
/// "generator" sections whose keys mirror the struct members. An
/// "invocation" object (written by the run directories' config echo) is
/// accepted and ignored, so an echo can be fed back in as a config.
struct RunConfig {
  std::string preset = "default";
  ModelConfig model;
  TrainConfig train;
  GeneratorConfig generator;

  void validate() const;
};

RunConfig run_config_from_json(const Json& j);
Json to_json(const RunConfig& config);

/// Reads `path` (may be empty for defaults) then applies "section.key=value"
/// overrides, whose values are parsed as JSON (bare words become strings).
RunConfig load_run_config(const std::filesystem::path& path,
                          const std::vector<std::string>& overrides);

/// Entry point shared by the executable and the tests. Returns the exit code:
/// 0 success, 1 validation or runtime failure, 2 usage error.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace msff::cli
