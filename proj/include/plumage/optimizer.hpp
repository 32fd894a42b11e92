#pragma once

// Per-layer optimizers: full-rank Adam/SGDM and their low-rank counterparts
// that keep moments in a projected space, refresh the projection on an
// (optionally adaptive) interval and realign the moments when it changes.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <utility>

#include "plumage/estimator.hpp"
#include "plumage/interval.hpp"
#include "plumage/linalg.hpp"
#include "plumage/random.hpp"
#include "plumage/sampler.hpp"
#include "plumage/serialize.hpp"

namespace plumage {

enum class RealignMode { none, mp, s_mp };

enum class MomentRule { adam, sgdm };

inline const char* to_string(RealignMode m) {
  switch (m) {
    case RealignMode::none: return "none";
    case RealignMode::mp: return "MP";
    case RealignMode::s_mp: return "S_MP";
  }
  return "?";
}

struct OptimizerHyperparams {
  double lr = 1e-3;
  double beta1 = 0.9;  ///< also the SGDM momentum coefficient
  double beta2 = 0.999;
  double epsilon = 1e-8;
  Index rank = 8;
  int svd_interval = 200;
  int resample_interval = 0;  ///< 0: resample only when the SVD is recomputed
  RealignMode realign = RealignMode::s_mp;
  bool adaptive_interval = false;
  IntervalConfig interval{};
  EstimatorKind estimator = EstimatorKind::plumage;
  double galore_scale = 1.0;  ///< learning-rate multiplier, top-k estimator only
  double prob_eps = 1e-12;

  void validate() const {
    if (!(lr > 0.0)) throw NumericError("hyperparams: learning rate must be positive");
    if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0)) {
      throw NumericError("hyperparams: betas must lie in [0, 1)");
    }
    if (!(epsilon > 0.0)) throw NumericError("hyperparams: epsilon must be positive");
    if (rank < 1) throw NumericError("hyperparams: rank must be positive");
    if (svd_interval < 1) throw NumericError("hyperparams: svd_interval must be positive");
    if (resample_interval < 0 || resample_interval > svd_interval) {
      throw NumericError("hyperparams: resample interval must satisfy kappa <= tau");
    }
    if (adaptive_interval) {
      interval.validate();
      if (svd_interval < interval.tau_min || svd_interval > interval.tau_max) {
        throw NumericError("hyperparams: svd_interval outside [tau_min, tau_max]");
      }
    }
  }
};

// ---------------------------------------------------------------------------
// Full-rank baselines

struct FullRankState {
  Matrix m;
  Matrix v;
  long t = 0;
};

namespace detail {

inline void check_step_inputs(const Matrix& w, const Matrix& g, std::string_view name) {
  if (w.rows() != g.rows() || w.cols() != g.cols()) {
    throw NumericError(std::string(name) + ": gradient shape " + shape_str(g) + " does not match weight " +
                       shape_str(w));
  }
  if (!g.allFinite()) throw NumericError(std::string(name) + ": non-finite gradient");
}

inline void check_updated(const Matrix& w, std::string_view name) {
  if (!w.allFinite()) throw NumericError(std::string(name) + ": non-finite weights after update");
}

inline void ensure_moments(FullRankState& s, const Matrix& w, bool second) {
  if (s.m.rows() != w.rows() || s.m.cols() != w.cols()) s.m = Matrix::Zero(w.rows(), w.cols());
  if (second && (s.v.rows() != w.rows() || s.v.cols() != w.cols())) s.v = Matrix::Zero(w.rows(), w.cols());
}

/// sqrt(1 - beta2^t) / (1 - beta1^t) for a 1-based step count t.
inline double bias_correction(double beta1, double beta2, long t) {
  const auto td = static_cast<double>(t);
  return std::sqrt(1.0 - std::pow(beta2, td)) / (1.0 - std::pow(beta1, td));
}

}  // namespace detail

inline void adam_step_full(Matrix& w, const Matrix& g, FullRankState& s, const OptimizerHyperparams& hp, double lr,
                           std::string_view name = "layer") {
  detail::check_step_inputs(w, g, name);
  detail::ensure_moments(s, w, true);
  s.m = hp.beta1 * s.m + (1.0 - hp.beta1) * g;
  s.v = hp.beta2 * s.v + (1.0 - hp.beta2) * g.cwiseAbs2();
  ++s.t;
  const double c = detail::bias_correction(hp.beta1, hp.beta2, s.t);
  w.array() -= lr * c * s.m.array() / (s.v.array().sqrt() + hp.epsilon);
  detail::check_updated(w, name);
}

inline void adam_step_full(Matrix& w, const Matrix& g, FullRankState& s, const OptimizerHyperparams& hp) {
  adam_step_full(w, g, s, hp, hp.lr);
}

inline void sgdm_step_full(Matrix& w, const Matrix& g, FullRankState& s, const OptimizerHyperparams& hp, double lr,
                           std::string_view name = "layer") {
  detail::check_step_inputs(w, g, name);
  detail::ensure_moments(s, w, false);
  s.m = hp.beta1 * s.m + (1.0 - hp.beta1) * g;
  ++s.t;
  w -= lr * s.m;
  detail::check_updated(w, name);
}

inline void sgdm_step_full(Matrix& w, const Matrix& g, FullRankState& s, const OptimizerHyperparams& hp) {
  sgdm_step_full(w, g, s, hp, hp.lr);
}

// ---------------------------------------------------------------------------
// Moment realignment

/// B = P_new^T P_old, mapping old projected coordinates to new ones.
inline Matrix transition_matrix(const LowRankProjection& p_old, const LowRankProjection& p_new) {
  if (p_old.side != p_new.side || p_old.ambient_dim() != p_new.ambient_dim()) {
    throw NumericError("transition_matrix: projections are not comparable");
  }
  return p_new.basis.transpose() * p_old.basis;
}

/// Re-expresses a projected first moment in the new projection's coordinates.
inline Matrix realign_first_moment(const Matrix& m_lr, const LowRankProjection& p_old,
                                   const LowRankProjection& p_new) {
  const Matrix b = transition_matrix(p_old, p_new);
  if (p_old.side == Side::left) {
    if (m_lr.rows() != b.cols()) throw NumericError("realign_first_moment: moment has " + shape_str(m_lr) + " shape");
    return b * m_lr;
  }
  if (m_lr.cols() != b.cols()) throw NumericError("realign_first_moment: moment has " + shape_str(m_lr) + " shape");
  return m_lr * b.transpose();
}

/// Second-moment realignment under a diagonal second-moment approximation:
/// (B o B) V. Nonnegative input gives nonnegative output.
inline Matrix realign_second_moment(const Matrix& v_lr, const Matrix& b, Side side = Side::left) {
  if ((v_lr.array() < 0.0).any()) throw NumericError("realign_second_moment: second moment has negative entries");
  const Matrix b2 = b.cwiseAbs2();
  if (side == Side::left) {
    if (v_lr.rows() != b.cols()) throw NumericError("realign_second_moment: moment has " + shape_str(v_lr) + " shape");
    return b2 * v_lr;
  }
  if (v_lr.cols() != b.cols()) throw NumericError("realign_second_moment: moment has " + shape_str(v_lr) + " shape");
  return v_lr * b2.transpose();
}

// ---------------------------------------------------------------------------
// Low-rank optimizer

struct LowRankOptimizerState {
  Index rows = 0;
  Index cols = 0;
  Side side = Side::left;
  Matrix m;  ///< k x n (left) or m x k (right)
  Matrix v;
  LowRankProjection proj;
  bool initialized = false;
  long t = 0;  ///< completed steps; never reset on projection changes
  int tau_current = 0;
  long last_svd_step = 0;
  long last_sample_step = 0;
  std::optional<SingularDecomposition> cached_svd;
  std::optional<SamplingPlan> cached_plan;
};

/// What happened to the projection during one step.
struct StepEvent {
  bool svd = false;
  bool resampled = false;
  std::optional<double> rho;
  std::optional<Index> r_star;
  int tau = 0;
};

inline LowRankOptimizerState make_low_rank_state(Index rows, Index cols, const OptimizerHyperparams& hp) {
  hp.validate();
  if (hp.rank > std::min(rows, cols)) {
    throw NumericError("low-rank state: rank " + std::to_string(hp.rank) + " exceeds min(" + std::to_string(rows) +
                       ", " + std::to_string(cols) + ")");
  }
  LowRankOptimizerState s;
  s.rows = rows;
  s.cols = cols;
  s.side = choose_side(rows, cols);
  s.tau_current = hp.svd_interval;
  return s;
}

namespace detail {

inline LowRankProjection draw_projection(const LowRankOptimizerState& s, const OptimizerHyperparams& hp, Rng& rng) {
  switch (hp.estimator) {
    case EstimatorKind::plumage:
      return sample_projections(*s.cached_svd, *s.cached_plan, hp.rank, s.side, rng);
    case EstimatorKind::topk_deterministic:
      return topk_projection(*s.cached_svd, hp.rank, s.side);
    case EstimatorKind::gaussian_random:
      return gaussian_projection(s.side == Side::left ? s.rows : s.cols, hp.rank, s.side, rng);
  }
  throw NumericError("draw_projection: unknown estimator kind");
}

inline void realign(LowRankOptimizerState& s, const LowRankProjection& old_proj, RealignMode mode) {
  if (mode == RealignMode::none) return;
  const Matrix b = transition_matrix(old_proj, s.proj);
  s.m = realign_first_moment(s.m, old_proj, s.proj);
  if (mode == RealignMode::s_mp) s.v = realign_second_moment(s.v, b, s.side);
}

}  // namespace detail

/// One optimizer step on a low-rank layer. Refreshes the SVD when the
/// current interval has elapsed (always on the first step), otherwise
/// redraws the projection from the cached SVD when the resample interval
/// has elapsed; then updates the projected moments and the weights.
inline StepEvent low_rank_step(Matrix& w, const Matrix& g, LowRankOptimizerState& s, const OptimizerHyperparams& hp,
                               MomentRule rule, Rng& rng, double lr, std::string_view name = "layer") {
  detail::check_step_inputs(w, g, name);
  if (w.rows() != s.rows || w.cols() != s.cols) {
    throw NumericError(std::string(name) + ": weight shape " + shape_str(w) + " does not match optimizer state");
  }

  StepEvent ev;
  const long since_svd = s.t - s.last_svd_step;
  const long since_sample = s.t - s.last_sample_step;
  const int kappa = hp.resample_interval > 0 ? hp.resample_interval : s.tau_current;
  const bool svd_due = !s.initialized || since_svd >= s.tau_current;
  const bool resample_due = !svd_due && since_sample >= kappa && hp.estimator != EstimatorKind::topk_deterministic;

  if (svd_due || resample_due) {
    std::optional<LowRankProjection> old_proj;
    if (s.initialized) old_proj = std::move(s.proj);

    if (svd_due) {
      ev.svd = true;
      if (hp.estimator != EstimatorKind::gaussian_random) {
        s.cached_svd = svd(g);
        s.cached_plan = compute_sampling_probabilities(s.cached_svd->sigma, hp.rank, hp.prob_eps);
        ev.r_star = s.cached_plan->r_star;
        if (old_proj) {
          const Matrix& fresh = s.side == Side::left ? s.cached_svd->U : s.cached_svd->V;
          // Leading unsampled singular vectors of the new gradient, at the same rank.
          const Index cols = std::min({fresh.cols(), hp.rank, hp.interval.truncation_rank});
          ev.rho = mean_cosine_principal_angle(old_proj->basis, fresh.leftCols(cols), hp.interval.truncation_rank);
        }
      }
      s.last_svd_step = s.t;
    }
    s.proj = detail::draw_projection(s, hp, rng);
    ev.resampled = true;
    s.last_sample_step = s.t;

    const Index k = hp.rank;
    if (!s.initialized) {
      s.m = s.side == Side::left ? Matrix::Zero(k, s.cols) : Matrix::Zero(s.rows, k);
      s.v = Matrix::Zero(s.m.rows(), s.m.cols());
      s.initialized = true;
    } else {
      detail::realign(s, *old_proj, hp.realign);
    }
    if (ev.svd && hp.adaptive_interval && ev.rho) s.tau_current = update_interval(s.tau_current, *ev.rho, hp.interval);
  }
  ev.tau = s.tau_current;

  const Matrix r = project(g, s.proj);
  s.m = hp.beta1 * s.m + (1.0 - hp.beta1) * r;
  ++s.t;
  const double scale = hp.estimator == EstimatorKind::topk_deterministic ? hp.galore_scale : 1.0;
  if (rule == MomentRule::adam) {
    s.v = hp.beta2 * s.v + (1.0 - hp.beta2) * r.cwiseAbs2();
    const double c = detail::bias_correction(hp.beta1, hp.beta2, s.t);
    const Matrix z = c * (s.m.array() / (s.v.array().sqrt() + hp.epsilon)).matrix();
    w -= (lr * scale) * back_project(z, s.proj);
  } else {
    w -= (lr * scale) * back_project(s.m, s.proj);
  }
  detail::check_updated(w, name);
  return ev;
}

inline StepEvent plumage_adam_step(Matrix& w, const Matrix& g, LowRankOptimizerState& s,
                                   const OptimizerHyperparams& hp, Rng& rng) {
  return low_rank_step(w, g, s, hp, MomentRule::adam, rng, hp.lr);
}

inline StepEvent plumage_sgdm_step(Matrix& w, const Matrix& g, LowRankOptimizerState& s,
                                   const OptimizerHyperparams& hp, Rng& rng) {
  return low_rank_step(w, g, s, hp, MomentRule::sgdm, rng, hp.lr);
}

// ---------------------------------------------------------------------------
// Checkpointing

inline void save_projection(BinaryWriter& out, const LowRankProjection& p) {
  out.put(p.basis);
  out.put(p.d_scale);
  out.put(static_cast<std::int32_t>(p.side));
  out.put(p.indices);
  out.put(static_cast<std::int32_t>(p.kind));
}

inline LowRankProjection load_projection(BinaryReader& in) {
  LowRankProjection p;
  p.basis = in.get_matrix();
  p.d_scale = in.get_vector();
  p.side = static_cast<Side>(in.get<std::int32_t>());
  p.indices = in.get_indices();
  p.kind = static_cast<EstimatorKind>(in.get<std::int32_t>());
  return p;
}

inline void save_state(BinaryWriter& out, const FullRankState& s) {
  out.put(s.m);
  out.put(s.v);
  out.put<std::int64_t>(s.t);
}

inline FullRankState load_full_rank_state(BinaryReader& in) {
  FullRankState s;
  s.m = in.get_matrix();
  s.v = in.get_matrix();
  s.t = in.get<std::int64_t>();
  return s;
}

inline void save_state(BinaryWriter& out, const LowRankOptimizerState& s) {
  out.put<std::int64_t>(s.rows);
  out.put<std::int64_t>(s.cols);
  out.put(static_cast<std::int32_t>(s.side));
  out.put(s.m);
  out.put(s.v);
  out.put<std::uint8_t>(s.initialized ? 1 : 0);
  if (s.initialized) save_projection(out, s.proj);
  out.put<std::int64_t>(s.t);
  out.put<std::int32_t>(s.tau_current);
  out.put<std::int64_t>(s.last_svd_step);
  out.put<std::int64_t>(s.last_sample_step);
  out.put<std::uint8_t>(s.cached_svd ? 1 : 0);
  if (s.cached_svd) {
    out.put(s.cached_svd->U);
    out.put(s.cached_svd->sigma);
    out.put(s.cached_svd->V);
  }
  out.put<std::uint8_t>(s.cached_plan ? 1 : 0);
  if (s.cached_plan) {
    out.put<std::int64_t>(s.cached_plan->r_star);
    out.put(s.cached_plan->p);
    out.put<std::int64_t>(s.cached_plan->k);
  }
}

inline LowRankOptimizerState load_low_rank_state(BinaryReader& in) {
  LowRankOptimizerState s;
  s.rows = in.get<std::int64_t>();
  s.cols = in.get<std::int64_t>();
  s.side = static_cast<Side>(in.get<std::int32_t>());
  s.m = in.get_matrix();
  s.v = in.get_matrix();
  s.initialized = in.get<std::uint8_t>() != 0;
  if (s.initialized) s.proj = load_projection(in);
  s.t = in.get<std::int64_t>();
  s.tau_current = in.get<std::int32_t>();
  s.last_svd_step = in.get<std::int64_t>();
  s.last_sample_step = in.get<std::int64_t>();
  if (in.get<std::uint8_t>() != 0) {
    SingularDecomposition d;
    d.U = in.get_matrix();
    d.sigma = in.get_vector();
    d.V = in.get_matrix();
    s.cached_svd = std::move(d);
  }
  if (in.get<std::uint8_t>() != 0) {
    SamplingPlan p;
    p.r_star = in.get<std::int64_t>();
    p.p = in.get_vector();
    p.k = in.get<std::int64_t>();
    s.cached_plan = std::move(p);
  }
  return s;
}

}  // namespace plumage
