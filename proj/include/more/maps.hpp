#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "more/error.hpp"
#include "more/linalg/vec3.hpp"

namespace more {

/// H x W grid of values with a per-pixel validity flag, row-major.
template <class T>
class MaskedGrid {
 public:
  MaskedGrid() = default;
  MaskedGrid(std::size_t height, std::size_t width, T fill = T{}, bool valid = false)
      : height_(height), width_(width), values_(height * width, fill), valid_(height * width, valid ? 1 : 0) {}

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t size() const { return values_.size(); }

  const T& operator()(std::size_t i, std::size_t j) const { return values_[i * width_ + j]; }
  T& operator()(std::size_t i, std::size_t j) { return values_[i * width_ + j]; }
  const T& operator[](std::size_t flat) const { return values_[flat]; }
  T& operator[](std::size_t flat) { return values_[flat]; }

  bool valid(std::size_t i, std::size_t j) const { return valid_[i * width_ + j] != 0; }
  bool valid(std::size_t flat) const { return valid_[flat] != 0; }
  void set_valid(std::size_t i, std::size_t j, bool v) { valid_[i * width_ + j] = v ? 1 : 0; }
  void set_valid(std::size_t flat, bool v) { valid_[flat] = v ? 1 : 0; }

  // Sets value and marks the pixel valid.
  void set(std::size_t i, std::size_t j, const T& v) {
    values_[i * width_ + j] = v;
    valid_[i * width_ + j] = 1;
  }

  std::size_t valid_count() const {
    std::size_t n = 0;
    for (auto v : valid_) n += v;
    return n;
  }

  bool same_shape(const auto& other) const { return height_ == other.height() && width_ == other.width(); }

  const std::vector<T>& values() const { return values_; }
  std::vector<T>& values() { return values_; }
  const std::vector<std::uint8_t>& validity() const { return valid_; }

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::vector<T> values_;
  std::vector<std::uint8_t> valid_;
};

using DepthMap = MaskedGrid<double>;
using PointMap = MaskedGrid<Vec3>;
using NormalMap = MaskedGrid<Vec3>;

inline void require_same_shape(const auto& a, const auto& b, const char* what) {
  if (!a.same_shape(b)) throw InvalidArgument(std::string(what) + ": dimension mismatch");
}

/// H x W x C real features, channel-last.
class FeatureGrid {
 public:
  FeatureGrid() = default;
  FeatureGrid(std::size_t height, std::size_t width, std::size_t channels, double fill = 0.0)
      : height_(height), width_(width), channels_(channels), data_(height * width * channels, fill) {}

  std::size_t height() const { return height_; }
  std::size_t width() const { return width_; }
  std::size_t channels() const { return channels_; }

  double operator()(std::size_t i, std::size_t j, std::size_t c) const { return data_[(i * width_ + j) * channels_ + c]; }
  double& operator()(std::size_t i, std::size_t j, std::size_t c) { return data_[(i * width_ + j) * channels_ + c]; }

  const std::vector<double>& data() const { return data_; }

 private:
  std::size_t height_ = 0;
  std::size_t width_ = 0;
  std::size_t channels_ = 0;
  std::vector<double> data_;
};

}  // namespace more
