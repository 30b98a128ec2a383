#pragma once

// Helpers shared by the test executables.

#include <atomic>
#include <chrono>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "msff/synth_data.hpp"

namespace msff::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "msff") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& leaf) const { return path_ / leaf; }

 private:
  std::filesystem::path path_;
};

/// Generates and loads a small synthetic dataset.
inline Dataset small_dataset(const std::filesystem::path& dir, int n, std::uint64_t seed,
                             int image_size = 128) {
  GeneratorConfig gen;
  gen.image_size = image_size;
  generate_dataset(n, seed, dir, gen);
  return load_dataset(dir);
}

inline JointSet random_joints(std::mt19937_64& rng, double lo, double hi) {
  std::uniform_real_distribution<double> u(lo, hi);
  JointSet j{};
  for (auto& p : j) p = {u(rng), u(rng)};
  return j;
}

inline double relative_error(double a, double b) {
  const double scale = std::max({std::abs(a), std::abs(b), 1e-300});
  return std::abs(a - b) / scale;
}

}  // namespace msff::testing
