#pragma once

// Acceptance suite shared by the `acceptance` test binary and `plumage verify`.
// Each criterion returns a pass flag plus the measured numbers.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iterator>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "plumage/estimator.hpp"
#include "plumage/harness/compare.hpp"
#include "plumage/harness/trainer.hpp"
#include "plumage/interval.hpp"
#include "plumage/optimizer.hpp"
#include "plumage/oracles.hpp"
#include "plumage/sampler.hpp"

namespace plumage::harness {

struct CriterionResult {
  int id = 0;
  std::string name;
  bool passed = false;
  std::string detail;
  double seconds = 0.0;
};

struct VerifyOptions {
  std::set<int> only;  ///< empty: run all
  std::string work_dir = "verify_work";
  std::ostream* log = nullptr;  ///< progress lines for the slow criteria
};

namespace verify_detail {

inline Matrix random_matrix(Index m, Index n, Rng& rng) {
  Matrix a(m, n);
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < m; ++i) a(i, j) = rng.normal();
  return a;
}

inline Matrix random_orthonormal(Index m, Index k, Rng& rng) {
  Eigen::HouseholderQR<Matrix> qr(random_matrix(m, k, rng));
  return qr.householderQ() * Matrix::Identity(m, k);
}

inline LowRankProjection as_projection(const Matrix& basis, Side side = Side::left) {
  LowRankProjection p;
  p.basis = basis;
  p.d_scale = Vector::Ones(basis.cols());
  p.side = side;
  for (Index i = 0; i < basis.cols(); ++i) p.indices.push_back(i);
  return p;
}

struct Outcome {
  bool passed = true;
  std::ostringstream detail;

  void check(bool ok, const std::string& what) {
    if (!ok) {
      passed = false;
      detail << "FAILED " << what << "; ";
    }
  }
};

inline std::string sci(double x) {
  std::ostringstream os;
  os.precision(3);
  os << std::scientific << x;
  return os.str();
}

inline bool files_equal(const std::string& a, const std::string& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  if (!fa || !fb) return false;
  return std::string(std::istreambuf_iterator<char>(fa), {}) == std::string(std::istreambuf_iterator<char>(fb), {});
}

}  // namespace verify_detail

/// Settings of the desk-scale comparison (criterion 8).
inline RunConfig desk_scale_config(OptimizerKind opt, std::uint64_t seed) {
  RunConfig c;
  c.task = TaskKind::synthetic_lowrank_regression;
  c.optimizer = opt;
  c.seed = seed;
  c.steps = 2000;
  c.rank = 8;
  c.svd_interval = 20;
  c.realign = RealignMode::s_mp;
  c.schedule = LrSchedule::cosine_with_floor;
  c.warmup_fraction = 0.1;
  c.dims.init_scale = 0.0;
  c.beta2 = 0.95;
  c.lr = c.uses_adam() ? 5e-4 : 0.05;
  return c;
}

inline CriterionResult criterion_1() {
  verify_detail::Outcome o;
  Vector sigma(4);
  sigma << 4, 2, 1, 1;
  const auto plan = compute_sampling_probabilities(sigma, 2);
  Vector expect(4);
  expect << 1, 0.5, 0.25, 0.25;
  const double perr = (plan.p - expect).cwiseAbs().maxCoeff();
  const double var = analytic_variance(sigma, plan.p);
  const auto grid = oracle::brute_force_min_variance(sigma, 2, {4, 0.01});
  const double gap = var - grid.variance(sigma);
  o.check(plan.r_star == 1, "r* == 1");
  o.check(perr <= 1e-12, "p exact");
  o.check(std::abs(var - 10.0) <= 1e-12, "variance == 10");
  o.check(gap <= 1e-6, "grid oracle not below optimum");
  o.detail << "r*=" << plan.r_star << " max|p-p_ref|=" << verify_detail::sci(perr) << " variance=" << var
           << " grid_best=" << grid.variance(sigma) << " (gap " << verify_detail::sci(gap) << ")";
  return {1, "MVUE closed form", o.passed, o.detail.str()};
}

inline CriterionResult criterion_2() {
  verify_detail::Outcome o;
  struct Case {
    const char* name;
    Vector p;
    Index k;
  };
  std::vector<Case> cases;
  {
    Vector p(6);
    p << 1, 1, 1, 0, 0, 0;
    cases.push_back({"deterministic", p, 3});
  }
  cases.push_back({"uniform", Vector::Constant(10, 0.4), 4});
  {
    Vector p(4);
    p << 1, 0.5, 0.25, 0.25;
    cases.push_back({"mixed", p, 2});
  }
  const long trials = 100000;
  Rng rng{2024, 2};
  for (const auto& c : cases) {
    Vector counts = Vector::Zero(c.p.size());
    bool exact_k = true;
    for (long t = 0; t < trials; ++t) {
      auto idx = sample_indices(c.p, c.k, rng);
      std::set<Index> distinct(idx.begin(), idx.end());
      if (static_cast<Index>(idx.size()) != c.k || static_cast<Index>(distinct.size()) != c.k) exact_k = false;
      for (Index i : idx) counts[i] += 1.0;
    }
    double worst = 0.0;
    bool within = true;
    for (Index i = 0; i < c.p.size(); ++i) {
      const double f = counts[i] / trials;
      const double tol = 4.0 * std::sqrt(c.p[i] * (1.0 - c.p[i]) / trials);
      const double dev = std::abs(f - c.p[i]);
      if (dev > tol) within = false;
      worst = std::max(worst, tol > 0 ? dev / tol : (dev > 0 ? INFINITY : 0.0));
    }
    o.check(exact_k, std::string(c.name) + " exact k");
    o.check(within, std::string(c.name) + " marginals");
    o.detail << c.name << ": worst deviation " << worst << " of bound; ";
  }
  return {2, "Exact-k sampling and marginals", o.passed, o.detail.str()};
}

inline CriterionResult criterion_3() {
  verify_detail::Outcome o;
  Rng rng{2024, 3};
  const Matrix g = verify_detail::random_matrix(8, 12, rng);
  const auto dec = svd(g);
  const auto plan = compute_sampling_probabilities(dec.sigma, 4);
  const double var = analytic_variance(dec.sigma, plan.p);
  const long draws = 50000;
  Matrix mean = Matrix::Zero(8, 12);
  double sq = 0.0;
  for (long t = 0; t < draws; ++t) {
    const auto proj = sample_projections(dec, plan, 4, choose_side(8, 12), rng);
    const Matrix est = estimate(g, proj);
    mean += est;
    sq += (est - g).squaredNorm();
  }
  mean /= static_cast<double>(draws);
  sq /= static_cast<double>(draws);
  const double bias = (mean - g).norm() / g.norm();
  const double vrel = std::abs(sq - var) / var;
  o.check(bias <= 0.01, "mean within 1%");
  o.check(vrel <= 0.02, "variance within 2%");
  o.detail << "r*=" << plan.r_star << " rel_bias=" << verify_detail::sci(bias) << " empirical_var=" << sq
           << " analytic_var=" << var << " rel_diff=" << verify_detail::sci(vrel);
  return {3, "Unbiasedness and variance", o.passed, o.detail.str()};
}

inline CriterionResult criterion_4() {
  verify_detail::Outcome o;
  Rng rng{2024, 4};
  double worst = 0.0;
  for (int inst = 0; inst < 100; ++inst) {
    const Index m = 3 + static_cast<Index>(rng.below(8));
    const Index n = 3 + static_cast<Index>(rng.below(8));
    const Index k = 1 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(std::min(m, n))));
    const Matrix g = verify_detail::random_matrix(m, n, rng);
    const auto dec = svd(g);
    const auto plan = compute_sampling_probabilities(dec.sigma, k);
    const auto proj = sample_projections(dec, plan, k, choose_side(m, n), rng);
    const double err = (estimate(g, proj) - oracle::dense_reference_estimate(dec, proj.indices, plan)).norm() / g.norm();
    worst = std::max(worst, err);
  }
  o.check(worst <= 1e-10, "one-sided equals dense reference");
  o.detail << "100 instances, worst relative error " << verify_detail::sci(worst);
  return {4, "One-sided equivalence", o.passed, o.detail.str()};
}

inline CriterionResult criterion_5() {
  using verify_detail::as_projection;
  using verify_detail::random_matrix;
  using verify_detail::random_orthonormal;
  verify_detail::Outcome o;
  Rng rng{2024, 5};

  const auto p = as_projection(random_orthonormal(10, 4, rng));
  const Matrix m = random_matrix(4, 7, rng);
  const Matrix v = random_matrix(4, 7, rng).cwiseAbs2();
  const Matrix b_same = transition_matrix(p, p);
  const double same_m = (realign_first_moment(m, p, p) - m).cwiseAbs().maxCoeff();
  const double same_v = (realign_second_moment(v, b_same) - v).cwiseAbs().maxCoeff();
  o.check(same_m <= 1e-12 && same_v <= 1e-12, "identical projections");

  const Matrix q = random_orthonormal(10, 8, rng);
  const auto p_old = as_projection(q.leftCols(4));
  const auto p_orth = as_projection(q.rightCols(4));
  const double orth = realign_first_moment(m, p_old, p_orth).cwiseAbs().maxCoeff();
  o.check(orth <= 1e-12, "orthogonal projections zero M");

  Matrix permuted(10, 4);
  const int perm[4] = {2, 0, 3, 1};
  for (int j = 0; j < 4; ++j) permuted.col(j) = p_old.basis.col(perm[j]);
  const double norm_diff =
      std::abs(realign_first_moment(m, p_old, as_projection(permuted)).norm() - m.norm());
  o.check(norm_diff <= 1e-12, "permutation preserves ||M||_F");

  double min_entry = INFINITY;
  for (int t = 0; t < 1000; ++t) {
    const Index amb = 4 + static_cast<Index>(rng.below(12));
    const Index k = 1 + static_cast<Index>(rng.below(static_cast<std::uint64_t>(amb)));
    const Side side = rng.below(2) == 0 ? Side::left : Side::right;
    const auto a = as_projection(random_orthonormal(amb, k, rng), side);
    const auto b = as_projection(random_orthonormal(amb, k, rng), side);
    const Matrix vr = random_matrix(side == Side::left ? k : 5, side == Side::left ? 5 : k, rng).cwiseAbs2();
    min_entry = std::min(min_entry, realign_second_moment(vr, transition_matrix(a, b), side).minCoeff());
  }
  o.check(min_entry >= 0.0, "V nonnegative");
  o.detail << "identity dM=" << verify_detail::sci(same_m) << " dV=" << verify_detail::sci(same_v)
           << "; orthogonal max|M|=" << verify_detail::sci(orth) << "; permuted d||M||=" << verify_detail::sci(norm_diff)
           << "; min V entry over 1000 realignments=" << verify_detail::sci(min_entry);
  return {5, "Realignment identities", o.passed, o.detail.str()};
}

inline CriterionResult criterion_6() {
  verify_detail::Outcome o;
  Rng rng{2024, 6};
  const Matrix p = verify_detail::random_orthonormal(12, 5, rng);
  const double self = mean_cosine_principal_angle(p, p);
  Matrix e1 = Matrix::Zero(2, 1);
  e1(0, 0) = 1.0;
  Matrix diag(2, 1);
  diag << 1.0 / std::sqrt(2.0), 1.0 / std::sqrt(2.0);
  const double angle45 = mean_cosine_principal_angle(e1, diag);
  o.check(std::abs(self - 1.0) <= 1e-12, "rho(P,P) == 1");
  o.check(std::abs(angle45 - 1.0 / std::sqrt(2.0)) <= 1e-9, "45 degree case");

  IntervalConfig cfg;
  cfg.tau_min = 200;
  cfg.tau_max = 1000;
  cfg.tau_initial = 200;
  cfg.gamma_shrink = 0.4;
  cfg.gamma_expand = 0.6;
  cfg.gamma_reset = 0.3;
  struct Row {
    int tau;
    double rho;
    int expect;
  };
  const Row table[] = {{400, 0.25, 200}, {800, 0.35, 400}, {400, 0.7, 800}, {800, 0.7, 1000}, {400, 0.5, 400}};
  for (const auto& r : table) {
    const int got = update_interval(r.tau, r.rho, cfg);
    o.check(got == r.expect, "controller tau=" + std::to_string(r.tau) + " rho=" + std::to_string(r.rho));
    o.detail << "(" << r.tau << "," << r.rho << ")->" << got << " ";
  }
  o.detail << "; rho(P,P)-1=" << verify_detail::sci(self - 1.0)
           << " rho45-1/sqrt2=" << verify_detail::sci(angle45 - 1.0 / std::sqrt(2.0));
  return {6, "Principal-angle metric and controller", o.passed, o.detail.str()};
}

inline CriterionResult criterion_7() {
  verify_detail::Outcome o;
  Rng rng{2024, 7};
  // Separable quadratic 0.5 * sum_i a_i (W_ii - T_ii)^2 on a 4x6 weight with
  // diagonal support, so the gradient stays diagonal.
  Matrix curv = Matrix::Zero(4, 6), target = Matrix::Zero(4, 6), w_full = Matrix::Zero(4, 6);
  for (Index i = 0; i < 4; ++i) {
    curv(i, i) = 0.5 + 2.0 * rng.uniform01();
    target(i, i) = rng.normal();
    w_full(i, i) = rng.normal();
  }
  OptimizerHyperparams hp;
  hp.lr = 0.05;
  hp.rank = 4;
  hp.svd_interval = 1;
  hp.realign = RealignMode::s_mp;
  Matrix w_low = w_full;
  FullRankState full;
  auto state = make_low_rank_state(4, 6, hp);
  double worst = 0.0;
  for (int t = 0; t < 50; ++t) {
    adam_step_full(w_full, curv.cwiseProduct(w_full - target), full, hp);
    plumage_adam_step(w_low, curv.cwiseProduct(w_low - target), state, hp, rng);
    worst = std::max(worst, (w_full - w_low).cwiseAbs().maxCoeff());
  }
  o.check(worst <= 1e-6, "per-step weight difference");
  o.detail << "k=4 tau=1 S_MP, 50 steps, max per-step |W_adam - W_plumage| = " << verify_detail::sci(worst);
  return {7, "Full-rank degeneracy", o.passed, o.detail.str()};
}

inline CriterionResult criterion_8(std::ostream* log) {
  verify_detail::Outcome o;
  const OptimizerKind kinds[] = {OptimizerKind::sgdm, OptimizerKind::plumage_sgdm, OptimizerKind::adam,
                                 OptimizerKind::plumage_adam, OptimizerKind::galore_topk_adam};
  std::vector<RunSummary> all;
  int sgdm_ok = 0, order_ok = 0;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    std::map<OptimizerKind, double> term;
    for (auto k : kinds) {
      RunOptions opt;
      opt.write_files = false;
      const auto r = run_experiment(desk_scale_config(k, seed), opt);
      term[k] = r.summary.diverged ? INFINITY : r.summary.terminal_loss;
      all.push_back(r.summary);
    }
    const double sg = term[OptimizerKind::sgdm];
    const bool a = std::abs(term[OptimizerKind::plumage_sgdm] - sg) <= 0.1 * sg;
    const bool b = term[OptimizerKind::adam] <= term[OptimizerKind::plumage_adam] &&
                   term[OptimizerKind::plumage_adam] <= term[OptimizerKind::galore_topk_adam];
    sgdm_ok += a;
    order_ok += b;
    if (log) {
      *log << "  seed " << seed << ": sgdm=" << sg << " plumage_sgdm=" << term[OptimizerKind::plumage_sgdm]
           << " adam=" << term[OptimizerKind::adam] << " plumage_adam=" << term[OptimizerKind::plumage_adam]
           << " galore_topk_adam=" << term[OptimizerKind::galore_topk_adam] << (a ? "" : " [sgdm gap > 10%]")
           << (b ? "" : " [ordering violated]") << '\n';
    }
  }
  o.check(sgdm_ok >= 4, "plumage_sgdm within 10% of sgdm on >= 4/5 seeds");
  o.check(order_ok >= 3, "adam <= plumage_adam <= galore_topk_adam on >= 3/5 seeds");
  o.detail << "(a) " << sgdm_ok << "/5 seeds within 10%; (b) ordering on " << order_ok << "/5 seeds";
  return {8, "Desk-scale ordering", o.passed, o.detail.str()};
}

inline CriterionResult criterion_9(const std::string& work_dir) {
  namespace fs = std::filesystem;
  verify_detail::Outcome o;
  const fs::path root = fs::path(work_dir) / "determinism";
  fs::remove_all(root);

  struct Case {
    const char* name;
    RunConfig cfg;
  };
  std::vector<Case> cases;
  {
    RunConfig c = desk_scale_config(OptimizerKind::plumage_adam, 11);
    c.steps = 400;
    c.adaptive_interval = true;
    cases.push_back({"regression_plumage_adam", c});
  }
  {
    RunConfig c;
    c.task = TaskKind::mlp_classification;
    c.optimizer = OptimizerKind::plumage_sgdm;
    c.rank = 4;
    c.svd_interval = 10;
    c.resample_interval = 5;
    c.lr = 0.1;
    c.steps = 300;
    c.seed = 12;
    c.parallel_layers = true;
    cases.push_back({"mlp_plumage_sgdm_parallel", c});
  }

  for (auto& c : cases) {
    const fs::path dir = root / c.name;
    RunConfig a = c.cfg, b = c.cfg, h = c.cfg;
    a.out_dir = (dir / "run_a").string();
    b.out_dir = (dir / "run_b").string();
    h.out_dir = (dir / "resumed").string();
    const auto ra = run_experiment(a);
    run_experiment(b);
    const bool same_files = verify_detail::files_equal((fs::path(a.out_dir) / "metrics.jsonl").string(),
                                                       (fs::path(b.out_dir) / "metrics.jsonl").string()) &&
                            verify_detail::files_equal((fs::path(a.out_dir) / "summary.csv").string(),
                                                       (fs::path(b.out_dir) / "summary.csv").string());
    RunOptions halt;
    halt.halt_at = c.cfg.steps / 2;
    const auto rh = run_experiment(h, halt);
    RunOptions resume;
    resume.resume_from = rh.checkpoint_path;
    const auto rr = run_experiment(h, resume);
    double wdiff = 0.0;
    for (std::size_t i = 0; i < ra.parameters.size(); ++i) {
      wdiff = std::max(wdiff, (ra.parameters[i].value - rr.parameters[i].value).cwiseAbs().maxCoeff());
    }
    const bool resumed_metrics = verify_detail::files_equal((fs::path(a.out_dir) / "metrics.jsonl").string(),
                                                            (fs::path(h.out_dir) / "metrics.jsonl").string());
    o.check(same_files, std::string(c.name) + " repeated run bit-identical");
    o.check(wdiff <= 1e-12, std::string(c.name) + " resume weight difference");
    o.check(resumed_metrics, std::string(c.name) + " resumed metric stream identical");
    o.detail << c.name << ": repeat identical=" << (same_files ? "yes" : "no")
             << " resume max|dW|=" << verify_detail::sci(wdiff)
             << " resumed metrics identical=" << (resumed_metrics ? "yes" : "no") << "; ";
  }
  return {9, "Determinism and resume", o.passed, o.detail.str()};
}

inline std::vector<CriterionResult> run_acceptance(const VerifyOptions& opt = {}) {
  const std::vector<std::pair<int, std::function<CriterionResult()>>> all = {
      {1, criterion_1},
      {2, criterion_2},
      {3, criterion_3},
      {4, criterion_4},
      {5, criterion_5},
      {6, criterion_6},
      {7, criterion_7},
      {8, [&] { return criterion_8(opt.log); }},
      {9, [&] { return criterion_9(opt.work_dir); }},
  };
  std::vector<CriterionResult> out;
  for (const auto& [id, fn] : all) {
    if (!opt.only.empty() && !opt.only.count(id)) continue;
    const auto t0 = std::chrono::steady_clock::now();
    CriterionResult r;
    try {
      r = fn();
    } catch (const std::exception& e) {
      r.id = id;
      r.name = "criterion " + std::to_string(id);
      r.passed = false;
      r.detail = std::string("exception: ") + e.what();
    }
    r.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    out.push_back(r);
  }
  return out;
}

inline std::string format_result(const CriterionResult& r) {
  std::ostringstream os;
  os.precision(2);
  os << std::fixed << (r.passed ? "PASS" : "FAIL") << " criterion " << r.id << " [" << r.name << "] (" << r.seconds
     << " s): " << r.detail;
  return os.str();
}

}  // namespace plumage::harness
