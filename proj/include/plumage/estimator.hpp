#pragma once

// Applying one-sided projections: compress a gradient into the projected
// space, map a projected update back, and the biased baselines (top-k
// truncation and raw Gaussian sketches) used for comparison.

#include <cmath>
#include <numeric>
#include <string>

#include "plumage/linalg.hpp"
#include "plumage/random.hpp"
#include "plumage/sampler.hpp"

namespace plumage {

namespace detail {

inline void require_compatible(const Matrix& g, const LowRankProjection& proj, const char* who) {
  const Index ambient = proj.side == Side::left ? g.rows() : g.cols();
  if (ambient != proj.ambient_dim()) {
    throw NumericError(std::string(who) + ": " + shape_str(g) + " gradient incompatible with " +
                       to_string(proj.side) + " projection of ambient dimension " +
                       std::to_string(proj.ambient_dim()));
  }
}

}  // namespace detail

/// Compressed gradient: P^T G (k x n) for the left side, G P (m x k) for the right.
inline Matrix project(const Matrix& g, const LowRankProjection& proj) {
  detail::require_compatible(g, proj, "project");
  if (proj.side == Side::left) return proj.basis.transpose() * g;
  return g * proj.basis;
}

/// Maps a projected-space matrix back to the weight shape, applying the
/// inverse-probability scaling: P D^-1 Z (left) or Z D^-1 P^T (right).
inline Matrix back_project(const Matrix& z, const LowRankProjection& proj) {
  if ((proj.d_scale.array() <= 0.0).any()) throw NumericError("back_project: scaling entries must be positive");
  const Vector inv = proj.d_scale.cwiseInverse();
  if (proj.side == Side::left) {
    if (z.rows() != proj.rank()) throw NumericError("back_project: expected " + std::to_string(proj.rank()) + " rows");
    return proj.basis * (inv.asDiagonal() * z);
  }
  if (z.cols() != proj.rank()) throw NumericError("back_project: expected " + std::to_string(proj.rank()) + " cols");
  return (z * inv.asDiagonal()) * proj.basis.transpose();
}

/// Low-rank estimate of G: P D^-1 P^T G (or its right-sided mirror).
inline Matrix estimate(const Matrix& g, const LowRankProjection& proj) { return back_project(project(g, proj), proj); }

/// Variance of the sampled estimator, sum over sigma_i > 0 of (1/p_i - 1) sigma_i^2.
inline double analytic_variance(const Vector& sigma, const Vector& p) {
  if (sigma.size() != p.size()) throw NumericError("analytic_variance: length mismatch");
  double v = 0.0;
  for (Index i = 0; i < sigma.size(); ++i) {
    if (sigma[i] > 0.0) {
      if (!(p[i] > 0.0)) throw NumericError("analytic_variance: p must be positive where sigma is positive");
      v += (1.0 / p[i] - 1.0) * sigma[i] * sigma[i];
    }
  }
  return v;
}

/// Deterministic top-k singular directions with unit scaling (biased).
inline LowRankProjection topk_projection(const SingularDecomposition& decomp, Index k, Side side) {
  const Index d = decomp.sigma.size();
  if (k < 1 || k > d) throw NumericError("topk_projection: need 1 <= k <= min(m, n)");
  const Matrix& vectors = side == Side::left ? decomp.U : decomp.V;
  LowRankProjection proj;
  proj.side = side;
  proj.kind = EstimatorKind::topk_deterministic;
  proj.basis = vectors.leftCols(k);
  proj.d_scale = Vector::Ones(k);
  proj.indices.resize(static_cast<std::size_t>(k));
  std::iota(proj.indices.begin(), proj.indices.end(), Index{0});
  return proj;
}

/// Raw Gaussian sketch with i.i.d. N(0, 1/k) entries; columns are not
/// orthonormalized. E[P P^T] = I over the ambient space.
inline LowRankProjection gaussian_projection(Index ambient, Index k, Side side, Rng& rng) {
  if (k < 1 || k > ambient) throw NumericError("gaussian_projection: need 1 <= k <= ambient dimension");
  LowRankProjection proj;
  proj.side = side;
  proj.kind = EstimatorKind::gaussian_random;
  proj.basis.resize(ambient, k);
  const double scale = 1.0 / std::sqrt(static_cast<double>(k));
  for (Index j = 0; j < k; ++j) {
    for (Index i = 0; i < ambient; ++i) proj.basis(i, j) = scale * rng.normal();
  }
  proj.d_scale = Vector::Ones(k);
  proj.indices.resize(static_cast<std::size_t>(k));
  std::iota(proj.indices.begin(), proj.indices.end(), Index{0});
  return proj;
}

}  // namespace plumage
