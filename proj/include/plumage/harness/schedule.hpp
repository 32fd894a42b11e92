#pragma once

#include <cmath>
#include <numbers>

#include "plumage/harness/config.hpp"

namespace plumage::harness {

inline constexpr double kCosineFloor = 0.1;

inline long warmup_steps(double warmup_fraction, long total_steps) {
  return std::lround(warmup_fraction * static_cast<double>(total_steps));
}

/// Learning rate at step s in [0, N]. Warmup ramps linearly from base/W at
/// s = 0 to base at s = W; cosine_with_floor then decays to 10% at s = N.
inline double learning_rate(LrSchedule kind, double base, long step, long total_steps, double warmup_fraction) {
  const long w = warmup_steps(warmup_fraction, total_steps);
  if (w > 0 && step < w) {
    const double start = 1.0 / static_cast<double>(w);
    return base * (start + (1.0 - start) * static_cast<double>(step) / static_cast<double>(w));
  }
  if (kind == LrSchedule::constant) return base;
  const long span = total_steps - w;
  if (span <= 0) return base * kCosineFloor;
  const double q = std::min(1.0, static_cast<double>(step - w) / static_cast<double>(span));
  return base * (kCosineFloor + (1.0 - kCosineFloor) * 0.5 * (1.0 + std::cos(std::numbers::pi * q)));
}

inline double learning_rate(const RunConfig& c, long step) {
  return learning_rate(c.schedule, c.lr, step, c.steps, c.warmup_fraction);
}

}  // namespace plumage::harness
