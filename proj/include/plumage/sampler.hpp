#pragma once

// Minimum-variance inclusion probabilities for rank-k singular-vector
// sampling, exact-k systematic ("wheel of fortune") sampling, and the
// construction of the sampled one-sided projection.

#include <algorithm>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <vector>

#include "plumage/linalg.hpp"
#include "plumage/random.hpp"

namespace plumage {

enum class Side { left, right };

enum class EstimatorKind { plumage, topk_deterministic, gaussian_random };

inline const char* to_string(Side s) { return s == Side::left ? "left" : "right"; }

inline const char* to_string(EstimatorKind k) {
  switch (k) {
    case EstimatorKind::plumage: return "plumage";
    case EstimatorKind::topk_deterministic: return "topk_deterministic";
    case EstimatorKind::gaussian_random: return "gaussian_random";
  }
  return "?";
}

/// Project the shorter dimension so the stored basis has min(m, n) rows.
inline Side choose_side(Index rows, Index cols) { return rows <= cols ? Side::left : Side::right; }

struct SamplingPlan {
  Index r_star = 0;  ///< leading directions included with probability one
  Vector p;          ///< inclusion probability per singular direction
  Index k = 0;       ///< target rank
};

/// One-sided projection. `basis` is always stored column-stacked with the
/// ambient dimension as rows: m x k holding u_i for the left side, n x k
/// holding v_i for the right side.
struct LowRankProjection {
  Matrix basis;
  Vector d_scale;               ///< p of each sampled direction; ones for biased kinds
  Side side = Side::left;
  std::vector<Index> indices;   ///< singular-direction index of each column, ascending
  EstimatorKind kind = EstimatorKind::plumage;

  Index rank() const { return basis.cols(); }
  Index ambient_dim() const { return basis.rows(); }
};

namespace detail {

inline void require_descending_nonneg(const Vector& sigma, const char* who) {
  for (Index i = 0; i < sigma.size(); ++i) {
    if (!std::isfinite(sigma[i]) || sigma[i] < 0.0) {
      throw NumericError(std::string(who) + ": singular values must be finite and nonnegative");
    }
    if (i > 0 && sigma[i] > sigma[i - 1]) {
      throw NumericError(std::string(who) + ": singular values must be sorted descending");
    }
  }
}

}  // namespace detail

/// Minimum-variance inclusion probabilities under the exact-rank-k constraint.
///
/// r* is the smallest r with (k - r) * sigma[r] / sum_{i>=r} sigma[i] < 1
/// (0-based; tail sums clipped below by eps). Directions before r* get p = 1
/// and the rest share the remaining mass k - r* in proportion to sigma.
///
/// When fewer than k singular values are nonzero, the first k directions are
/// all taken deterministically (r* = k): the zero-valued ones carry no
/// gradient mass but keep the projection at exactly rank k. Exact-zero
/// directions beyond that get p = 0 and are never sampled. Values at or below
/// d * machine-epsilon * sigma[0] are round-off from the SVD and count as zero.
inline SamplingPlan compute_sampling_probabilities(const Vector& sigma, Index k, double eps = 1e-12) {
  const Index d = sigma.size();
  if (k < 1 || k > d) {
    throw NumericError("compute_sampling_probabilities: need 1 <= k <= " + std::to_string(d) +
                       ", got k = " + std::to_string(k));
  }
  if (!(eps > 0.0)) throw NumericError("compute_sampling_probabilities: eps must be positive");
  detail::require_descending_nonneg(sigma, "compute_sampling_probabilities");

  SamplingPlan plan;
  plan.k = k;
  plan.p = Vector::Zero(d);

  const double floor = static_cast<double>(d) * std::numeric_limits<double>::epsilon() * sigma[0];
  const Vector eff = (sigma.array() > floor).select(sigma, 0.0);
  const Index nonzero = static_cast<Index>((eff.array() > 0.0).count());
  if (nonzero <= k) {
    plan.r_star = k;
    plan.p.head(k).setOnes();
    return plan;
  }

  Vector tail(d);
  double acc = 0.0;
  for (Index i = d - 1; i >= 0; --i) {
    acc += eff[i];
    tail[i] = std::max(acc, eps);
  }

  Index r_star = d;
  for (Index r = 0; r < d; ++r) {
    const double score = static_cast<double>(k - r) * eff[r] / tail[r];
    if (score < 1.0) {
      r_star = r;
      break;
    }
  }
  plan.r_star = r_star;
  plan.p.head(r_star).setOnes();
  if (r_star < d) {
    const double scale = static_cast<double>(k - r_star) / tail[r_star];
    for (Index i = r_star; i < d; ++i) plan.p[i] = std::min(1.0, scale * eff[i]);
  }
  return plan;
}

/// Systematic sampling over a fixed permutation and arm offset. Exposed so
/// the arm placement can be traced exactly; `offset` must lie in (0, delta]
/// where delta = sum(p) / k.
inline std::vector<Index> systematic_sample(const Vector& p, Index k, const std::vector<Index>& perm,
                                            double offset) {
  const Index n = p.size();
  std::vector<double> cum(static_cast<std::size_t>(n));
  double acc = 0.0;
  for (Index j = 0; j < n; ++j) {
    acc += p[perm[static_cast<std::size_t>(j)]];
    cum[static_cast<std::size_t>(j)] = acc;
  }
  const double delta = acc / static_cast<double>(k);

  std::vector<Index> out;
  out.reserve(static_cast<std::size_t>(k));
  // Arms are sorted, so the search resumes from the previous hit.
  auto from = cum.begin();
  for (Index a = 0; a < k; ++a) {
    const double arm = offset + static_cast<double>(a) * delta;
    auto it = std::lower_bound(from, cum.end(), arm);
    if (it == cum.end()) {
      // Rounding pushed the last arm past the total; it belongs to the last
      // entry with positive mass.
      it = std::prev(cum.end());
      while (it != cum.begin() && p[perm[static_cast<std::size_t>(it - cum.begin())]] <= 0.0) --it;
    }
    from = it;
    out.push_back(perm[static_cast<std::size_t>(it - cum.begin())]);
  }
  return out;
}

/// Draws exactly k distinct indices with P(i in sample) = p[i].
inline std::vector<Index> sample_indices(const Vector& p, Index k, Rng& rng) {
  const Index n = p.size();
  if (k < 1 || k > n) throw NumericError("sample_indices: need 1 <= k <= len(p)");
  for (Index i = 0; i < n; ++i) {
    if (!(p[i] >= 0.0 && p[i] <= 1.0)) throw NumericError("sample_indices: probabilities must lie in [0, 1]");
  }
  const double total = p.sum();
  if (std::abs(total - static_cast<double>(k)) > 1e-6) {
    throw NumericError("sample_indices: probabilities sum to " + std::to_string(total) + ", expected " +
                       std::to_string(k));
  }

  std::vector<Index> perm(static_cast<std::size_t>(n));
  std::iota(perm.begin(), perm.end(), Index{0});
  rng.shuffle(perm);
  const double delta = total / static_cast<double>(k);
  // Offset in (0, delta] keeps a zero-probability leading entry unreachable.
  const double offset = delta * rng.uniform01_open_closed();

  auto out = systematic_sample(p, k, perm, offset);
  std::vector<Index> sorted = out;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw NumericError("sample_indices: duplicate index drawn (probabilities exceed 1 after rounding?)");
  }
  return out;
}

/// Samples k singular directions from `decomp` according to `plan` and
/// stacks them (in ascending index order) into a one-sided projection.
inline LowRankProjection sample_projections(const SingularDecomposition& decomp, const SamplingPlan& plan, Index k,
                                            Side side, Rng& rng) {
  const Index d = decomp.sigma.size();
  if (plan.p.size() != d) throw NumericError("sample_projections: plan does not match decomposition");
  if (k < 1 || k > d) throw NumericError("sample_projections: need 1 <= k <= min(m, n)");

  auto idx = sample_indices(plan.p, k, rng);
  std::sort(idx.begin(), idx.end());

  const Matrix& vectors = side == Side::left ? decomp.U : decomp.V;
  LowRankProjection proj;
  proj.side = side;
  proj.kind = EstimatorKind::plumage;
  proj.basis.resize(vectors.rows(), k);
  proj.d_scale.resize(k);
  for (Index j = 0; j < k; ++j) {
    const Index i = idx[static_cast<std::size_t>(j)];
    if (!(plan.p[i] > 0.0)) {
      throw NumericError("sample_projections: sampled direction " + std::to_string(i) + " has zero probability");
    }
    proj.basis.col(j) = vectors.col(i);
    proj.d_scale[j] = plan.p[i];
  }
  proj.indices = std::move(idx);
  return proj;
}

}  // namespace plumage
