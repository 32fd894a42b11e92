#pragma once

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <future>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "plumage/harness/config.hpp"
#include "plumage/harness/metrics.hpp"
#include "plumage/harness/schedule.hpp"
#include "plumage/harness/tasks.hpp"
#include "plumage/optimizer.hpp"
#include "plumage/serialize.hpp"

namespace plumage::harness {

enum class LayerKind { full_rank, low_rank };

inline const char* to_string(LayerKind k) { return k == LayerKind::low_rank ? "low_rank" : "full_rank"; }

struct RunSummary {
  std::string task;
  std::string optimizer;
  std::uint64_t seed = 0;
  long steps = 0;
  long steps_completed = 0;
  double terminal_loss = std::numeric_limits<double>::quiet_NaN();  ///< mean train loss over the trailing window
  double best_loss = std::numeric_limits<double>::quiet_NaN();
  double final_eval_loss = std::numeric_limits<double>::quiet_NaN();
  bool diverged = false;
  long divergence_step = -1;
  std::string divergence_reason;
};

namespace detail {

inline constexpr char kCheckpointMagic[] = "PLUMAGE-CKPT";
inline constexpr std::uint32_t kCheckpointVersion = 1;
inline constexpr std::uint64_t kLayerStream = 0x1a7e;

/// Settings a checkpoint must agree on to be resumed.
inline std::string identity(const RunConfig& c) {
  auto j = to_json(c);
  j.erase("out_dir");
  j.erase("parallel_layers");
  j.erase("record_wall_time");
  return j.dump();
}

inline std::string fmt_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

}  // namespace detail

class Trainer {
 public:
  explicit Trainer(RunConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    task_ = make_task(cfg_);
    params_ = task_->initial_parameters();
    hp_ = cfg_.hyperparams();
    for (std::size_t i = 0; i < params_.size(); ++i) {
      const Parameter& p = params_[i];
      Layer layer;
      layer.name = p.name;
      layer.kind = cfg_.low_rank() && p.matrix_weight ? LayerKind::low_rank : LayerKind::full_rank;
      if (layer.kind == LayerKind::low_rank) {
        if (cfg_.rank > std::min(p.value.rows(), p.value.cols())) {
          throw ConfigError("rank " + std::to_string(cfg_.rank) + " exceeds the smaller dimension of layer " + p.name +
                            " (" + shape_str(p.value) + ")");
        }
        layer.low = make_low_rank_state(p.value.rows(), p.value.cols(), hp_);
      }
      layer.rng = Rng{cfg_.seed, detail::kLayerStream, static_cast<std::uint64_t>(i)};
      layers_.push_back(std::move(layer));
    }
  }

  const RunConfig& config() const { return cfg_; }
  const Task& task() const { return *task_; }
  const ParamList& parameters() const { return params_; }
  long current_step() const { return step_; }
  bool diverged() const { return diverged_; }
  bool done() const { return diverged_ || step_ >= cfg_.steps; }
  const std::vector<double>& loss_history() const { return losses_; }

  std::vector<std::pair<std::string, LayerKind>> layer_kinds() const {
    std::vector<std::pair<std::string, LayerKind>> out;
    for (const auto& l : layers_) out.emplace_back(l.name, l.kind);
    return out;
  }

  const LowRankOptimizerState* low_rank_state(std::size_t i) const {
    return layers_.at(i).kind == LayerKind::low_rank ? &layers_[i].low : nullptr;
  }

  /// Runs one step and emits its records. Returns false once the run is over.
  bool step(MetricsSink* sink = nullptr) {
    if (done()) return false;
    const long s = step_;
    const double lr = learning_rate(cfg_, s);
    GradList grads;
    const double loss = task_->loss_and_gradient(params_, s, &grads);
    if (!std::isfinite(loss)) return fail(s, "non-finite training loss");

    double gsq = 0.0;
    for (const auto& g : grads) gsq += g.squaredNorm();

    std::vector<StepEvent> events(layers_.size());
    try {
      if (cfg_.parallel_layers && layers_.size() > 1) {
        std::vector<std::future<StepEvent>> jobs;
        for (std::size_t i = 0; i < layers_.size(); ++i) {
          jobs.push_back(std::async(std::launch::async, [this, i, &grads, lr] { return step_layer(i, grads[i], lr); }));
        }
        // Collect every job before rethrowing so no thread outlives the step.
        std::exception_ptr err;
        for (std::size_t i = 0; i < jobs.size(); ++i) {
          try {
            events[i] = jobs[i].get();
          } catch (...) {
            if (!err) err = std::current_exception();
          }
        }
        if (err) std::rethrow_exception(err);
      } else {
        for (std::size_t i = 0; i < layers_.size(); ++i) events[i] = step_layer(i, grads[i], lr);
      }
    } catch (const NumericError& e) {
      return fail(s, e.what());
    }

    losses_.push_back(loss);
    ++step_;
    if (sink) {
      for (std::size_t i = 0; i < layers_.size(); ++i) {
        const StepEvent& ev = events[i];
        if (layers_[i].kind != LayerKind::low_rank || !ev.svd) continue;
        MetricRecord r;
        r.step = s;
        r.layer = layers_[i].name;
        r.r_star = ev.r_star;
        r.rho = ev.rho;
        r.tau = ev.tau;
        sink->append(r);
      }
      MetricRecord r;
      r.step = s;
      r.train_loss = loss;
      r.grad_norm = std::sqrt(gsq);
      r.lr = lr;
      if (step_ % cfg_.eval_every == 0 || step_ == cfg_.steps) r.eval_loss = task_->eval_loss(params_);
      if (cfg_.record_wall_time) {
        r.wall_time_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - start_).count();
      }
      sink->append(r);
      sink->flush();
    }
    return !done();
  }

  RunSummary summary() const {
    RunSummary out;
    out.task = enum_name(cfg_.task);
    out.optimizer = enum_name(cfg_.optimizer);
    out.seed = cfg_.seed;
    out.steps = cfg_.steps;
    out.steps_completed = step_;
    out.diverged = diverged_;
    out.divergence_step = divergence_step_;
    out.divergence_reason = divergence_reason_;
    if (!losses_.empty()) {
      const auto window = std::min<std::size_t>(losses_.size(), static_cast<std::size_t>(cfg_.terminal_window));
      out.terminal_loss =
          std::accumulate(losses_.end() - static_cast<long>(window), losses_.end(), 0.0) / static_cast<double>(window);
      out.best_loss = *std::min_element(losses_.begin(), losses_.end());
    }
    if (!diverged_) out.final_eval_loss = task_->eval_loss(params_);
    return out;
  }

  void save_checkpoint(const std::string& path) const {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("cannot write checkpoint: " + path);
    BinaryWriter out(os);
    out.put(std::string(detail::kCheckpointMagic));
    out.put(detail::kCheckpointVersion);
    out.put(detail::identity(cfg_));
    out.put<std::int64_t>(step_);
    out.put<std::uint64_t>(params_.size());
    for (const auto& p : params_) out.put(p.value);
    for (const auto& l : layers_) {
      out.put<std::int32_t>(static_cast<std::int32_t>(l.kind));
      if (l.kind == LayerKind::low_rank) {
        save_state(out, l.low);
      } else {
        save_state(out, l.full);
      }
      out.put(l.rng.state());
    }
    out.put(losses_);
    if (!os) throw std::runtime_error("error while writing checkpoint: " + path);
  }

  void load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open checkpoint: " + path);
    BinaryReader in(is);
    if (in.get_string() != detail::kCheckpointMagic) throw FormatError(path + ": not a checkpoint file");
    if (in.get<std::uint32_t>() != detail::kCheckpointVersion) throw FormatError(path + ": unsupported version");
    if (in.get_string() != detail::identity(cfg_)) {
      throw FormatError(path + ": checkpoint was written by a different configuration");
    }
    const long step = in.get<std::int64_t>();
    if (in.get<std::uint64_t>() != params_.size()) throw FormatError(path + ": parameter count mismatch");
    ParamList params = params_;
    for (auto& p : params) {
      Matrix m = in.get_matrix();
      if (m.rows() != p.value.rows() || m.cols() != p.value.cols()) {
        throw FormatError(path + ": shape mismatch for " + p.name);
      }
      p.value = std::move(m);
    }
    std::vector<Layer> layers = layers_;
    for (auto& l : layers) {
      if (static_cast<LayerKind>(in.get<std::int32_t>()) != l.kind) throw FormatError(path + ": layer kind mismatch");
      if (l.kind == LayerKind::low_rank) {
        l.low = load_low_rank_state(in);
      } else {
        l.full = load_full_rank_state(in);
      }
      l.rng.set_state(in.get_string());
    }
    auto losses = in.get_doubles();
    if (static_cast<long>(losses.size()) != step) throw FormatError(path + ": loss history does not match step");
    params_ = std::move(params);
    layers_ = std::move(layers);
    losses_ = std::move(losses);
    step_ = step;
  }

 private:
  struct Layer {
    std::string name;
    LayerKind kind = LayerKind::full_rank;
    FullRankState full;
    LowRankOptimizerState low;
    Rng rng;
  };

  StepEvent step_layer(std::size_t i, const Matrix& g, double lr) {
    Layer& l = layers_[i];
    Matrix& w = params_[i].value;
    const bool adam = cfg_.uses_adam();
    if (l.kind == LayerKind::low_rank) {
      return low_rank_step(w, g, l.low, hp_, adam ? MomentRule::adam : MomentRule::sgdm, l.rng, lr, l.name);
    }
    if (adam) {
      adam_step_full(w, g, l.full, hp_, lr, l.name);
    } else {
      sgdm_step_full(w, g, l.full, hp_, lr, l.name);
    }
    return {};
  }

  bool fail(long s, std::string reason) {
    diverged_ = true;
    divergence_step_ = s;
    divergence_reason_ = std::move(reason);
    return false;
  }

  RunConfig cfg_;
  std::unique_ptr<Task> task_;
  ParamList params_;
  OptimizerHyperparams hp_;
  std::vector<Layer> layers_;
  std::vector<double> losses_;
  long step_ = 0;
  bool diverged_ = false;
  long divergence_step_ = -1;
  std::string divergence_reason_;
  std::chrono::steady_clock::time_point start_ = std::chrono::steady_clock::now();
};

inline std::string summary_csv_header() {
  return "task,optimizer,seed,steps,steps_completed,terminal_loss,best_loss,final_eval_loss,diverged,divergence_step";
}

inline std::string summary_csv_row(const RunSummary& s) {
  std::ostringstream os;
  os << s.task << ',' << s.optimizer << ',' << s.seed << ',' << s.steps << ',' << s.steps_completed << ','
     << detail::fmt_double(s.terminal_loss) << ',' << detail::fmt_double(s.best_loss) << ','
     << detail::fmt_double(s.final_eval_loss) << ',' << (s.diverged ? 1 : 0) << ',' << s.divergence_step;
  return os.str();
}

struct RunOptions {
  std::optional<std::string> resume_from;  ///< checkpoint to continue from
  std::optional<long> halt_at;             ///< stop (and checkpoint) after this many steps
  bool write_files = true;
};

struct RunResult {
  std::vector<MetricRecord> records;
  RunSummary summary;
  ParamList parameters;
  std::string checkpoint_path;
};

/// Runs (or resumes) an experiment. With write_files, the output directory
/// receives metrics.jsonl, summary.csv, checkpoint.bin and config.resolved.
inline RunResult run_experiment(const RunConfig& cfg, const RunOptions& opt = {}) {
  Trainer trainer(cfg);
  if (opt.resume_from) trainer.load_checkpoint(*opt.resume_from);

  namespace fs = std::filesystem;
  const fs::path dir(cfg.out_dir);
  std::unique_ptr<MetricsSink> sink;
  if (opt.write_files) {
    fs::create_directories(dir);
    std::ofstream(dir / "config.resolved") << to_json(cfg).dump(2) << '\n';
    sink = std::make_unique<MetricsSink>((dir / "metrics.jsonl").string(), opt.resume_from.has_value());
  } else {
    sink = std::make_unique<MetricsSink>();
  }

  const long stop = opt.halt_at ? std::min(*opt.halt_at, cfg.steps) : cfg.steps;
  while (!trainer.done() && trainer.current_step() < stop) trainer.step(sink.get());

  RunResult result;
  result.summary = trainer.summary();
  result.parameters = trainer.parameters();
  result.records = sink->take();
  if (opt.write_files) {
    std::ofstream(dir / "summary.csv") << summary_csv_header() << '\n' << summary_csv_row(result.summary) << '\n';
    if (!trainer.diverged()) {
      result.checkpoint_path = (dir / "checkpoint.bin").string();
      trainer.save_checkpoint(result.checkpoint_path);
    }
  }
  return result;
}

}  // namespace plumage::harness
