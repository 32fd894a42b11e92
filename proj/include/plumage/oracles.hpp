#pragma once

// Slow reference implementations. Tests use them to check the fast paths;
// they are shipped so downstream users can re-run the same checks.

#include <cmath>
#include <limits>
#include <utility>
#include <vector>

#include "plumage/linalg.hpp"
#include "plumage/random.hpp"
#include "plumage/sampler.hpp"

namespace plumage::oracle {

struct SimplexGrid {
  Index dimension = 0;
  double resolution = 0.01;
};

struct GridMinimum {
  Vector p;
  double objective = std::numeric_limits<double>::infinity();  ///< sum sigma_i^2 / p_i

  /// The same point expressed as estimator variance, sum (1/p_i - 1) sigma_i^2.
  double variance(const Vector& sigma) const { return objective - sigma.squaredNorm(); }
};

namespace detail {

inline double grid_objective(const Vector& sigma, const Vector& p) {
  double f = 0.0;
  for (Index i = 0; i < sigma.size(); ++i) {
    if (sigma[i] != 0.0) f += sigma[i] * sigma[i] / p[i];
  }
  return f;
}

inline void enumerate(const Vector& sigma, double k, double h, Index pos, Vector& p, double used, GridMinimum& best) {
  const Index d = sigma.size();
  if (pos == d - 1) {
    const double last = k - used;
    const double lo = sigma[pos] == 0.0 ? -h / 2 : h / 2;
    if (last <= lo || last > 1.0 + 1e-12) return;
    if (sigma[pos] == 0.0 && last < h / 2) {
      p[pos] = 0.0;
      const double f = grid_objective(sigma, p);
      if (f < best.objective) {
        best.objective = f;
        best.p = p;
      }
      return;
    }
    p[pos] = std::min(last, 1.0);
    const double f = grid_objective(sigma, p);
    if (f < best.objective) {
      best.objective = f;
      best.p = p;
    }
    return;
  }
  const int steps = static_cast<int>(std::lround(1.0 / h));
  // A direction with sigma = 0 contributes nothing and may take p = 0.
  for (int s = sigma[pos] == 0.0 ? 0 : 1; s <= steps; ++s) {
    const double v = s * h;
    if (used + v > k) break;
    p[pos] = v;
    enumerate(sigma, k, h, pos + 1, p, used + v, best);
  }
}

}  // namespace detail

/// Exhaustive minimum of sum sigma^2 / p over the grid points of
/// {sum p = k, 0 < p <= 1}; directions with sigma = 0 may also take p = 0.
/// Refuses d > 4.
inline GridMinimum brute_force_min_variance(const Vector& sigma, Index k, SimplexGrid grid = {}) {
  const Index d = sigma.size();
  if (grid.dimension == 0) grid.dimension = d;
  if (grid.dimension != d) throw NumericError("brute_force_min_variance: grid dimension does not match sigma");
  if (d < 1 || d > 4) throw NumericError("brute_force_min_variance: refusing d > 4 (grid grows as h^-(d-1))");
  if (k < 1 || k > d) throw NumericError("brute_force_min_variance: need 1 <= k <= d");
  if (!(grid.resolution > 0.0 && grid.resolution <= 0.5)) throw NumericError("brute_force_min_variance: bad resolution");

  GridMinimum best;
  Vector p(d);
  detail::enumerate(sigma, static_cast<double>(k), grid.resolution, 0, p, 0.0, best);
  if (best.p.size() == 0) throw NumericError("brute_force_min_variance: no feasible grid point");
  return best;
}

/// Fraction of `trials` draws of sample_indices(p, k) that contain each index.
inline Vector empirical_inclusion_frequencies(const Vector& p, Index k, long trials, Rng& rng) {
  Vector counts = Vector::Zero(p.size());
  for (long t = 0; t < trials; ++t) {
    for (Index i : sample_indices(p, k, rng)) counts[i] += 1.0;
  }
  return counts / static_cast<double>(trials);
}

/// sum_{i in sampled} (1/p_i) sigma_i u_i v_i^T, built term by term.
inline Matrix dense_reference_estimate(const SingularDecomposition& decomp, const std::vector<Index>& sampled,
                                       const SamplingPlan& plan) {
  Matrix out = Matrix::Zero(decomp.U.rows(), decomp.V.rows());
  for (Index i : sampled) {
    if (i < 0 || i >= decomp.sigma.size()) throw NumericError("dense_reference_estimate: index out of range");
    const double w = decomp.sigma[i] / plan.p[i];
    for (Index c = 0; c < out.cols(); ++c) {
      for (Index r = 0; r < out.rows(); ++r) out(r, c) += w * decomp.U(r, i) * decomp.V(c, i);
    }
  }
  return out;
}

inline Matrix dense_reference_estimate(const Matrix& g, const std::vector<Index>& sampled, const SamplingPlan& plan) {
  return dense_reference_estimate(svd(g), sampled, plan);
}

}  // namespace plumage::oracle
