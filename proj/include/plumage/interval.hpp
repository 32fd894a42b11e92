#pragma once

// Subspace overlap between consecutive projections and the hysteresis rule
// that adapts the SVD interval from it.

#include <algorithm>
#include <string>

#include "plumage/linalg.hpp"
#include "plumage/sampler.hpp"

namespace plumage {

struct IntervalConfig {
  int tau_min = 200;
  int tau_max = 1000;
  int tau_initial = 200;
  double gamma_reset = 0.3;
  double gamma_shrink = 0.4;
  double gamma_expand = 0.6;
  Index truncation_rank = 64;

  void validate() const {
    if (tau_min < 1 || tau_min > tau_initial || tau_initial > tau_max) {
      throw NumericError("IntervalConfig: need 1 <= tau_min <= tau_initial <= tau_max");
    }
    const auto in_unit = [](double g) { return g >= 0.0 && g <= 1.0; };
    if (!in_unit(gamma_reset) || !in_unit(gamma_shrink) || !in_unit(gamma_expand) ||
        !(gamma_reset <= gamma_shrink && gamma_shrink < gamma_expand)) {
      throw NumericError("IntervalConfig: need 0 <= gamma_reset <= gamma_shrink < gamma_expand <= 1");
    }
    if (truncation_rank < 1) throw NumericError("IntervalConfig: truncation_rank must be positive");
  }
};

/// tau_max as 5% of the planned run length when known, else 32 * tau_initial.
inline int default_tau_max(int tau_initial, long total_steps) {
  if (total_steps > 0) return std::max(tau_initial, static_cast<int>(total_steps / 20));
  return 32 * tau_initial;
}

/// Mean cosine of the principal angles between span(a) and span(b), using at
/// most `truncation_rank` leading columns of each basis. The mean runs over
/// min(r1, r2) cosines.
inline double mean_cosine_principal_angle(const Matrix& a, const Matrix& b, Index truncation_rank = 64) {
  if (a.rows() != b.rows()) {
    throw NumericError("mean_cosine_principal_angle: ambient dimensions differ (" + std::to_string(a.rows()) +
                       " vs " + std::to_string(b.rows()) + ")");
  }
  const Index r1 = std::min(a.cols(), truncation_rank);
  const Index r2 = std::min(b.cols(), truncation_rank);
  if (r1 == 0 || r2 == 0) return 0.0;
  const Vector cosines = singular_values(a.leftCols(r1).transpose() * b.leftCols(r2));
  return cosines.head(std::min(r1, r2)).mean();
}

inline double mean_cosine_principal_angle(const LowRankProjection& p1, const LowRankProjection& p2,
                                          Index truncation_rank = 64) {
  if (p1.side != p2.side) throw NumericError("mean_cosine_principal_angle: projections on different sides");
  return mean_cosine_principal_angle(p1.basis, p2.basis, truncation_rank);
}

/// One step of the hysteresis controller.
inline int update_interval(int tau, double rho, const IntervalConfig& cfg) {
  if (rho < cfg.gamma_reset) return cfg.tau_min;
  if (rho < cfg.gamma_shrink) return std::max(tau / 2, cfg.tau_min);
  if (rho > cfg.gamma_expand) return std::min(2 * tau, cfg.tau_max);
  return tau;
}

}  // namespace plumage
