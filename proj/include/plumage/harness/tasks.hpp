#pragma once

// Desk-scale training problems. Each task owns its data: the batch used at
// step t is a pure function of (seed, t), so runs replay exactly and resumed
// runs see the same data as uninterrupted ones.

#include <cmath>
#include <memory>
#include <string>
#include <vector>

#include "plumage/harness/config.hpp"
#include "plumage/linalg.hpp"
#include "plumage/random.hpp"

namespace plumage::harness {

struct Parameter {
  std::string name;
  Matrix value;
  bool matrix_weight = true;  ///< 2-D weight; biases are stored as n x 1 and flagged false
};

using ParamList = std::vector<Parameter>;
using GradList = std::vector<Matrix>;

class Task {
 public:
  virtual ~Task() = default;
  virtual std::string name() const = 0;
  virtual ParamList initial_parameters() const = 0;
  /// Loss on the batch of `step`; fills `grads` (one per parameter) when non-null.
  virtual double loss_and_gradient(const ParamList& params, long step, GradList* grads) const = 0;
  /// Loss on a fixed held-out set.
  virtual double eval_loss(const ParamList& params) const = 0;
};

namespace detail {

inline constexpr std::uint64_t kInitStream = 0x1a17;
inline constexpr std::uint64_t kTeacherStream = 0x7eac;
inline constexpr std::uint64_t kBatchStream = 0xba7c;
inline constexpr std::uint64_t kEvalStream = 0xe7a1;
inline constexpr std::uint64_t kCheckStream = 0xfdc4;

inline Matrix gaussian(Index m, Index n, double scale, Rng& rng) {
  Matrix a(m, n);
  for (Index j = 0; j < n; ++j)
    for (Index i = 0; i < m; ++i) a(i, j) = scale * rng.normal();
  return a;
}

}  // namespace detail

/// loss = ||W - W*||_F^2 with a random W0 and W* = 0.
class QuadraticBowl final : public Task {
 public:
  QuadraticBowl(const ModelDims& d, std::uint64_t seed) : dims_(d), seed_(seed) {
    target_ = Matrix::Zero(d.rows, d.cols);
  }

  std::string name() const override { return "quadratic_bowl"; }

  ParamList initial_parameters() const override {
    Rng rng{seed_, detail::kInitStream};
    return {{"w", detail::gaussian(dims_.rows, dims_.cols, dims_.init_scale, rng), true}};
  }

  double loss_and_gradient(const ParamList& params, long, GradList* grads) const override {
    const Matrix diff = params.at(0).value - target_;
    if (grads) *grads = {2.0 * diff};
    return diff.squaredNorm();
  }

  double eval_loss(const ParamList& params) const override { return (params.at(0).value - target_).squaredNorm(); }

 private:
  ModelDims dims_;
  std::uint64_t seed_;
  Matrix target_;
};

/// y = W* x + b* + noise with rank(W*) = true_rank; model y_hat = W x + b.
/// loss = 1/(2B) sum_b ||W x_b + b - y_b||^2.
class LowRankRegression final : public Task {
 public:
  LowRankRegression(const ModelDims& d, std::uint64_t seed) : dims_(d), seed_(seed) {
    Rng rng{seed, detail::kTeacherStream};
    const Matrix a = detail::gaussian(d.rows, d.true_rank, 1.0, rng);
    const Matrix b = detail::gaussian(d.cols, d.true_rank, 1.0, rng);
    // Unit output variance per coordinate for x ~ N(0, I).
    w_star_ = a * b.transpose() / std::sqrt(static_cast<double>(d.true_rank * d.cols));
    b_star_ = detail::gaussian(d.rows, 1, 0.5, rng);
    Rng erng{seed, detail::kEvalStream};
    input_scale_ = Vector(d.cols);
    for (Index j = 0; j < d.cols; ++j) input_scale_[j] = std::pow(static_cast<double>(j + 1), -0.5 * d.input_decay);
    eval_x_ = inputs(d.eval_samples, erng);
    eval_y_ = targets(eval_x_, erng);
  }

  std::string name() const override { return "synthetic_lowrank_regression"; }

  const Matrix& teacher() const { return w_star_; }

  ParamList initial_parameters() const override {
    Rng rng{seed_, detail::kInitStream};
    const double s = dims_.init_scale / std::sqrt(static_cast<double>(dims_.cols));
    return {{"w", detail::gaussian(dims_.rows, dims_.cols, s, rng), true},
            {"b", Matrix::Zero(dims_.rows, 1), false}};
  }

  double loss_and_gradient(const ParamList& params, long step, GradList* grads) const override {
    Rng rng{seed_, detail::kBatchStream, static_cast<std::uint64_t>(step)};
    const Matrix x = inputs(dims_.batch, rng);
    const Matrix y = targets(x, rng);
    return fit(params, x, y, grads);
  }

  double eval_loss(const ParamList& params) const override { return fit(params, eval_x_, eval_y_, nullptr); }

 private:
  Matrix inputs(Index n, Rng& rng) const {
    return input_scale_.asDiagonal() * detail::gaussian(dims_.cols, n, 1.0, rng);
  }

  Matrix targets(const Matrix& x, Rng& rng) const {
    Matrix y = w_star_ * x;
    y.colwise() += b_star_.col(0);
    return y + detail::gaussian(y.rows(), y.cols(), dims_.noise, rng);
  }

  static double fit(const ParamList& params, const Matrix& x, const Matrix& y, GradList* grads) {
    const Matrix& w = params.at(0).value;
    const Matrix& b = params.at(1).value;
    Matrix e = w * x - y;
    e.colwise() += b.col(0);
    const double n = static_cast<double>(x.cols());
    if (grads) *grads = {e * x.transpose() / n, e.rowwise().sum() / n};
    return 0.5 * e.squaredNorm() / n;
  }

  ModelDims dims_;
  std::uint64_t seed_;
  Matrix w_star_;
  Matrix b_star_;
  Vector input_scale_;
  Matrix eval_x_;
  Matrix eval_y_;
};

/// Two-layer tanh network trained with softmax cross-entropy on labels from
/// a random teacher network of the same shape.
class MlpClassification final : public Task {
 public:
  MlpClassification(const ModelDims& d, std::uint64_t seed) : dims_(d), seed_(seed) {
    Rng rng{seed, detail::kTeacherStream};
    t1_ = detail::gaussian(d.hidden, d.inputs, 2.0 / std::sqrt(static_cast<double>(d.inputs)), rng);
    t2_ = detail::gaussian(d.classes, d.hidden, 2.0 / std::sqrt(static_cast<double>(d.hidden)), rng);
    Rng erng{seed, detail::kEvalStream};
    eval_x_ = detail::gaussian(d.inputs, d.eval_samples, 1.0, erng);
    eval_labels_ = labels(eval_x_);
  }

  std::string name() const override { return "mlp_classification"; }

  ParamList initial_parameters() const override {
    Rng rng{seed_, detail::kInitStream};
    const double s1 = dims_.init_scale / std::sqrt(static_cast<double>(dims_.inputs));
    const double s2 = dims_.init_scale / std::sqrt(static_cast<double>(dims_.hidden));
    return {{"w1", detail::gaussian(dims_.hidden, dims_.inputs, s1, rng), true},
            {"b1", Matrix::Zero(dims_.hidden, 1), false},
            {"w2", detail::gaussian(dims_.classes, dims_.hidden, s2, rng), true},
            {"b2", Matrix::Zero(dims_.classes, 1), false}};
  }

  double loss_and_gradient(const ParamList& params, long step, GradList* grads) const override {
    Rng rng{seed_, detail::kBatchStream, static_cast<std::uint64_t>(step)};
    const Matrix x = detail::gaussian(dims_.inputs, dims_.batch, 1.0, rng);
    return forward_backward(params, x, labels(x), grads);
  }

  double eval_loss(const ParamList& params) const override {
    return forward_backward(params, eval_x_, eval_labels_, nullptr);
  }

 private:
  std::vector<Index> labels(const Matrix& x) const {
    const Matrix logits = t2_ * (t1_ * x).array().tanh().matrix();
    std::vector<Index> out(static_cast<std::size_t>(x.cols()));
    for (Index j = 0; j < x.cols(); ++j) logits.col(j).maxCoeff(&out[static_cast<std::size_t>(j)]);
    return out;
  }

  static double forward_backward(const ParamList& params, const Matrix& x, const std::vector<Index>& y,
                                 GradList* grads) {
    const Matrix& w1 = params.at(0).value;
    const Matrix& b1 = params.at(1).value;
    const Matrix& w2 = params.at(2).value;
    const Matrix& b2 = params.at(3).value;
    Matrix pre = w1 * x;
    pre.colwise() += b1.col(0);
    const Matrix h = pre.array().tanh().matrix();
    Matrix logits = w2 * h;
    logits.colwise() += b2.col(0);

    const double n = static_cast<double>(x.cols());
    double loss = 0.0;
    Matrix dlogits(logits.rows(), logits.cols());
    for (Index j = 0; j < logits.cols(); ++j) {
      const double mx = logits.col(j).maxCoeff();
      const Vector ex = (logits.col(j).array() - mx).exp().matrix();
      const double z = ex.sum();
      const Index label = y[static_cast<std::size_t>(j)];
      loss += std::log(z) - (logits(label, j) - mx);
      dlogits.col(j) = ex / z;
      dlogits(label, j) -= 1.0;
    }
    if (grads) {
      dlogits /= n;
      const Matrix dh = w2.transpose() * dlogits;
      const Matrix dpre = (dh.array() * (1.0 - h.array().square())).matrix();
      *grads = {dpre * x.transpose(), dpre.rowwise().sum(), dlogits * h.transpose(), dlogits.rowwise().sum()};
    }
    return loss / n;
  }

  ModelDims dims_;
  std::uint64_t seed_;
  Matrix t1_;
  Matrix t2_;
  Matrix eval_x_;
  std::vector<Index> eval_labels_;
};

struct GradientCheck {
  double max_relative_error = 0.0;
  int coordinates = 0;
};

/// Central-difference check of the analytic gradient on `coords` random
/// coordinates of the step-0 batch. Throws if any relative error is >= tol.
inline GradientCheck check_gradient(const Task& task, const ParamList& params, std::uint64_t seed, int coords = 10,
                                    double tol = 1e-4) {
  GradList grads;
  task.loss_and_gradient(params, 0, &grads);
  Rng rng{seed, detail::kCheckStream};
  ParamList probe = params;
  GradientCheck out;
  for (int c = 0; c < coords; ++c) {
    const auto pi = static_cast<std::size_t>(rng.below(params.size()));
    Matrix& w = probe[pi].value;
    const auto flat = static_cast<Index>(rng.below(static_cast<std::uint64_t>(w.size())));
    double& x = w.data()[flat];
    const double orig = x;
    const double h = 1e-5 * std::max(1.0, std::abs(orig));
    x = orig + h;
    const double up = task.loss_and_gradient(probe, 0, nullptr);
    x = orig - h;
    const double down = task.loss_and_gradient(probe, 0, nullptr);
    x = orig;
    const double fd = (up - down) / (2.0 * h);
    const double an = grads[pi].data()[flat];
    const double denom = std::max({std::abs(fd), std::abs(an), 1e-6});
    const double rel = std::abs(fd - an) / denom;
    out.max_relative_error = std::max(out.max_relative_error, rel);
    ++out.coordinates;
    if (!(rel < tol)) {
      throw std::runtime_error(task.name() + ": gradient check failed on " + params[pi].name + "[" +
                               std::to_string(flat) + "]: analytic " + std::to_string(an) + ", finite difference " +
                               std::to_string(fd));
    }
  }
  return out;
}

/// Builds the task for `cfg` and verifies its gradient by finite differences.
inline std::unique_ptr<Task> make_task(const RunConfig& cfg) {
  std::unique_ptr<Task> task;
  switch (cfg.task) {
    case TaskKind::quadratic_bowl: task = std::make_unique<QuadraticBowl>(cfg.dims, cfg.seed); break;
    case TaskKind::synthetic_lowrank_regression:
      task = std::make_unique<LowRankRegression>(cfg.dims, cfg.seed);
      break;
    case TaskKind::mlp_classification: task = std::make_unique<MlpClassification>(cfg.dims, cfg.seed); break;
  }
  if (!task) throw ConfigError("unknown task");
  check_gradient(*task, task->initial_parameters(), cfg.seed);
  return task;
}

}  // namespace plumage::harness
