#pragma once

#include <cmath>
#include <cstddef>
#include <deque>
#include <optional>

#include "more/error.hpp"

namespace more::stability {

struct ClipperConfig {
  std::size_t capacity = 256;
  double k = 3.0;
  std::size_t warmup = 16;

  void validate() const {
    if (warmup < 2) throw InvalidArgument("clipper: warmup must be >= 2");
    if (capacity < warmup) throw InvalidArgument("clipper: capacity must be >= warmup");
    if (!(k > 0.0) || !std::isfinite(k)) throw InvalidArgument("clipper: k must be positive");
  }
};

struct ClipResult {
  double value = 0.0;          // loss to use for this step
  bool was_clipped = false;
  std::optional<double> threshold;  // mu + k sigma, once warmup is reached
};

/// Adaptive k-sigma loss clipping over a sliding window of recent raw losses.
///
/// The threshold is computed from the window before the incoming value is
/// added; the raw value (not the clipped one) then enters the window, so a
/// persistent shift in the loss level is eventually accepted.
class LossClipper {
 public:
  explicit LossClipper(ClipperConfig cfg = {}) : cfg_(cfg) { cfg_.validate(); }

  const ClipperConfig& config() const { return cfg_; }
  std::size_t size() const { return window_.size(); }

  // Population mean and standard deviation of the current window.
  std::optional<double> threshold() const {
    if (window_.size() < cfg_.warmup) return std::nullopt;
    const double n = static_cast<double>(window_.size());
    double mu = 0.0;
    for (double v : window_) mu += v;
    mu /= n;
    double var = 0.0;
    for (double v : window_) var += (v - mu) * (v - mu);
    var /= n;
    return mu + cfg_.k * std::sqrt(var);
  }

  ClipResult observe_and_clip(double loss) {
    if (!std::isfinite(loss)) throw InvalidArgument("non-finite loss");
    if (loss < 0.0) throw InvalidArgument("clipper: loss must be nonnegative");
    ClipResult r{loss, false, threshold()};
    if (r.threshold && loss > *r.threshold) {
      r.value = *r.threshold;
      r.was_clipped = true;
    }
    window_.push_back(loss);
    if (window_.size() > cfg_.capacity) window_.pop_front();
    return r;
  }

 private:
  ClipperConfig cfg_;
  std::deque<double> window_;
};

}  // namespace more::stability
