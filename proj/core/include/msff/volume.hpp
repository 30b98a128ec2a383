#pragma once

#include <algorithm>
#include <cstddef>
#include <span>
#include <string>
#include <vector>

#include "msff/error.hpp"

namespace msff {

/// Dense channels x height x width array, channel-major then row-major.
/// Used for images (3 channels), feature volumes and heatmap stacks.
template <typename T>
class Volume {
 public:
  Volume() = default;
  Volume(int channels, int height, int width, T fill = T(0))
      : channels_(channels), height_(height), width_(width) {
    if (channels < 0 || height < 0 || width < 0) {
      throw ContractViolation("Volume: negative dimension");
    }
    values_.assign(static_cast<std::size_t>(channels) * height * width, fill);
  }

  int channels() const noexcept { return channels_; }
  int height() const noexcept { return height_; }
  int width() const noexcept { return width_; }
  std::size_t plane() const noexcept {
    return static_cast<std::size_t>(height_) * width_;
  }
  std::size_t size() const noexcept { return values_.size(); }
  bool empty() const noexcept { return values_.empty(); }

  T& at(int c, int y, int x) noexcept {
    return values_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
  }
  const T& at(int c, int y, int x) const noexcept {
    return values_[(static_cast<std::size_t>(c) * height_ + y) * width_ + x];
  }

  std::span<T> channel(int c) noexcept {
    return {values_.data() + c * plane(), plane()};
  }
  std::span<const T> channel(int c) const noexcept {
    return {values_.data() + c * plane(), plane()};
  }

  T* data() noexcept { return values_.data(); }
  const T* data() const noexcept { return values_.data(); }
  std::vector<T>& values() noexcept { return values_; }
  const std::vector<T>& values() const noexcept { return values_; }

  bool same_shape(const Volume& other) const noexcept {
    return channels_ == other.channels_ && height_ == other.height_ &&
           width_ == other.width_;
  }

  std::string shape_string() const {
    return std::to_string(channels_) + "x" + std::to_string(height_) + "x" +
           std::to_string(width_);
  }

  void fill(T v) { std::fill(values_.begin(), values_.end(), v); }

  template <typename U>
  Volume<U> cast() const {
    Volume<U> out(channels_, height_, width_);
    std::transform(values_.begin(), values_.end(), out.data(),
                   [](T v) { return static_cast<U>(v); });
    return out;
  }

  friend bool operator==(const Volume& a, const Volume& b) {
    return a.same_shape(b) && a.values_ == b.values_;
  }

 private:
  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<T> values_;
};

template <typename T>
using FeatureVolume = Volume<T>;

/// K per-joint maps; values in [0,1] after normalization.
template <typename T>
using HeatmapStack = Volume<T>;

/// RGB image, 3 x height x width, values in [0,1].
using Image = Volume<float>;

}  // namespace msff
