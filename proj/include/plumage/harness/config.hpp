#pragma once

// Experiment description. A run is fully determined by its RunConfig; the
// resolved config is echoed next to the outputs.

#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "plumage/optimizer.hpp"

namespace plumage::harness {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class TaskKind { synthetic_lowrank_regression, mlp_classification, quadratic_bowl };

enum class OptimizerKind { adam, sgdm, plumage_adam, plumage_sgdm, galore_topk_adam, gaussian_adam };

enum class LrSchedule { constant, cosine_with_floor };

NLOHMANN_JSON_SERIALIZE_ENUM(TaskKind, {{TaskKind::synthetic_lowrank_regression, "synthetic_lowrank_regression"},
                                        {TaskKind::mlp_classification, "mlp_classification"},
                                        {TaskKind::quadratic_bowl, "quadratic_bowl"}})

NLOHMANN_JSON_SERIALIZE_ENUM(OptimizerKind, {{OptimizerKind::adam, "adam"},
                                             {OptimizerKind::sgdm, "sgdm"},
                                             {OptimizerKind::plumage_adam, "plumage_adam"},
                                             {OptimizerKind::plumage_sgdm, "plumage_sgdm"},
                                             {OptimizerKind::galore_topk_adam, "galore_topk_adam"},
                                             {OptimizerKind::gaussian_adam, "gaussian_adam"}})

NLOHMANN_JSON_SERIALIZE_ENUM(LrSchedule,
                             {{LrSchedule::constant, "constant"}, {LrSchedule::cosine_with_floor, "cosine_with_floor"}})

}  // namespace plumage::harness

namespace plumage {
NLOHMANN_JSON_SERIALIZE_ENUM(RealignMode, {{RealignMode::none, "none"}, {RealignMode::mp, "MP"}, {RealignMode::s_mp, "S_MP"}})
}

namespace plumage::harness {

template <class E>
std::string enum_name(E e) {
  return nlohmann::json(e).get<std::string>();
}

/// Parses an enum from its string name, rejecting unknown names.
template <class E>
E parse_enum(const std::string& name, const char* what) {
  const nlohmann::json j = name;
  const E e = j.get<E>();
  if (nlohmann::json(e).get<std::string>() != name) throw ConfigError(std::string("unknown ") + what + ": " + name);
  return e;
}

struct ModelDims {
  long rows = 64;  ///< weight rows (regression outputs / quadratic rows)
  long cols = 64;  ///< weight cols (regression inputs / quadratic cols)
  long true_rank = 8;
  long batch = 32;
  double noise = 0.1;       ///< label noise std for regression
  double init_scale = 1.0;  ///< std of initial weights, relative to 1/sqrt(fan_in)
  double input_decay = 0.0; ///< regression input j has variance (j+1)^-input_decay
  long inputs = 16;         ///< MLP
  long hidden = 32;
  long classes = 4;
  long eval_samples = 256;
};

struct RunConfig {
  TaskKind task = TaskKind::synthetic_lowrank_regression;
  ModelDims dims{};
  OptimizerKind optimizer = OptimizerKind::plumage_adam;
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  long rank = 8;
  int svd_interval = 200;
  int resample_interval = 0;
  double galore_alpha = 1.0;
  RealignMode realign = RealignMode::s_mp;
  bool adaptive_interval = false;
  int tau_min = 0;  ///< 0: equal to svd_interval
  int tau_max = 0;  ///< 0: 5% of the run length
  double gamma_reset = 0.3;
  double gamma_shrink = 0.4;
  double gamma_expand = 0.6;
  long truncation_rank = 64;
  long steps = 2000;
  double warmup_fraction = 0.0;
  LrSchedule schedule = LrSchedule::constant;
  std::uint64_t seed = 0;
  long eval_every = 50;
  long terminal_window = 50;  ///< trailing steps averaged into the terminal train loss
  bool parallel_layers = false;
  bool record_wall_time = false;  ///< wall time breaks byte-identical metric files
  std::string out_dir = "runs/default";

  bool low_rank() const {
    return optimizer != OptimizerKind::adam && optimizer != OptimizerKind::sgdm;
  }

  bool uses_adam() const { return optimizer != OptimizerKind::sgdm && optimizer != OptimizerKind::plumage_sgdm; }

  /// Hyperparameters handed to each per-layer optimizer.
  OptimizerHyperparams hyperparams() const {
    OptimizerHyperparams hp;
    hp.lr = lr;
    hp.beta1 = beta1;
    hp.beta2 = beta2;
    hp.epsilon = epsilon;
    hp.rank = rank;
    hp.svd_interval = svd_interval;
    hp.resample_interval = resample_interval;
    hp.realign = realign;
    hp.adaptive_interval = adaptive_interval;
    hp.interval.tau_initial = svd_interval;
    hp.interval.tau_min = tau_min > 0 ? tau_min : svd_interval;
    hp.interval.tau_max = tau_max > 0 ? tau_max : default_tau_max(svd_interval, steps);
    hp.interval.gamma_reset = gamma_reset;
    hp.interval.gamma_shrink = gamma_shrink;
    hp.interval.gamma_expand = gamma_expand;
    hp.interval.truncation_rank = truncation_rank;
    hp.galore_scale = galore_alpha;
    switch (optimizer) {
      case OptimizerKind::galore_topk_adam: hp.estimator = EstimatorKind::topk_deterministic; break;
      case OptimizerKind::gaussian_adam: hp.estimator = EstimatorKind::gaussian_random; break;
      default: hp.estimator = EstimatorKind::plumage; break;
    }
    return hp;
  }

  void validate() const {
    if (steps < 1) throw ConfigError("steps must be positive");
    if (!(warmup_fraction >= 0.0 && warmup_fraction < 1.0)) throw ConfigError("warmup fraction must lie in [0, 1)");
    if (eval_every < 1) throw ConfigError("eval_every must be positive");
    if (terminal_window < 1) throw ConfigError("terminal_window must be positive");
    if (dims.rows < 1 || dims.cols < 1 || dims.batch < 1 || dims.inputs < 1 || dims.hidden < 1 || dims.classes < 2 ||
        dims.eval_samples < 1) {
      throw ConfigError("model dimensions must be positive (classes >= 2)");
    }
    if (task == TaskKind::synthetic_lowrank_regression &&
        (dims.true_rank < 1 || dims.true_rank > std::min(dims.rows, dims.cols))) {
      throw ConfigError("true_rank must lie in [1, min(rows, cols)]");
    }
    try {
      hyperparams().validate();
    } catch (const NumericError& e) {
      throw ConfigError(e.what());
    }
  }
};

inline void to_json(nlohmann::json& j, const ModelDims& d) {
  j = nlohmann::json{{"rows", d.rows},           {"cols", d.cols},     {"true_rank", d.true_rank},
                     {"batch", d.batch},         {"noise", d.noise},   {"init_scale", d.init_scale}, {"input_decay", d.input_decay},
                     {"inputs", d.inputs},       {"hidden", d.hidden}, {"classes", d.classes},
                     {"eval_samples", d.eval_samples}};
}

inline void from_json(const nlohmann::json& j, ModelDims& d) {
  const ModelDims def;
  d.rows = j.value("rows", def.rows);
  d.cols = j.value("cols", def.cols);
  d.true_rank = j.value("true_rank", def.true_rank);
  d.batch = j.value("batch", def.batch);
  d.noise = j.value("noise", def.noise);
  d.init_scale = j.value("init_scale", def.init_scale);
  d.input_decay = j.value("input_decay", def.input_decay);
  d.inputs = j.value("inputs", def.inputs);
  d.hidden = j.value("hidden", def.hidden);
  d.classes = j.value("classes", def.classes);
  d.eval_samples = j.value("eval_samples", def.eval_samples);
}

inline nlohmann::json to_json(const RunConfig& c) {
  return nlohmann::json{{"task", c.task},
                        {"dims", c.dims},
                        {"optimizer", c.optimizer},
                        {"lr", c.lr},
                        {"beta1", c.beta1},
                        {"beta2", c.beta2},
                        {"epsilon", c.epsilon},
                        {"rank", c.rank},
                        {"svd_interval", c.svd_interval},
                        {"resample_interval", c.resample_interval},
                        {"galore_alpha", c.galore_alpha},
                        {"realign", c.realign},
                        {"adaptive_interval", c.adaptive_interval},
                        {"tau_min", c.tau_min},
                        {"tau_max", c.tau_max},
                        {"gamma_reset", c.gamma_reset},
                        {"gamma_shrink", c.gamma_shrink},
                        {"gamma_expand", c.gamma_expand},
                        {"truncation_rank", c.truncation_rank},
                        {"steps", c.steps},
                        {"warmup_fraction", c.warmup_fraction},
                        {"schedule", c.schedule},
                        {"seed", c.seed},
                        {"eval_every", c.eval_every},
                        {"terminal_window", c.terminal_window},
                        {"parallel_layers", c.parallel_layers},
                        {"record_wall_time", c.record_wall_time},
                        {"out_dir", c.out_dir}};
}

inline RunConfig config_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known = {
      "task",           "dims",         "optimizer",    "lr",           "beta1",           "beta2",
      "epsilon",        "rank",         "svd_interval", "resample_interval", "galore_alpha", "realign",
      "adaptive_interval", "tau_min",   "tau_max",      "gamma_reset",  "gamma_shrink",    "gamma_expand",
      "truncation_rank", "steps",       "warmup_fraction", "schedule",  "seed",            "eval_every",
      "terminal_window", "parallel_layers", "record_wall_time", "out_dir"};
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError("unknown config key: " + key);
  }
  RunConfig c;
  try {
    if (j.contains("task")) c.task = parse_enum<TaskKind>(j.at("task").get<std::string>(), "task");
    if (j.contains("optimizer")) {
      c.optimizer = parse_enum<OptimizerKind>(j.at("optimizer").get<std::string>(), "optimizer");
    }
    if (j.contains("realign")) c.realign = parse_enum<RealignMode>(j.at("realign").get<std::string>(), "realign mode");
    if (j.contains("schedule")) c.schedule = parse_enum<LrSchedule>(j.at("schedule").get<std::string>(), "schedule");
    if (j.contains("dims")) c.dims = j.at("dims").get<ModelDims>();
    c.lr = j.value("lr", c.lr);
    c.beta1 = j.value("beta1", c.beta1);
    c.beta2 = j.value("beta2", c.beta2);
    c.epsilon = j.value("epsilon", c.epsilon);
    c.rank = j.value("rank", c.rank);
    c.svd_interval = j.value("svd_interval", c.svd_interval);
    c.resample_interval = j.value("resample_interval", c.resample_interval);
    c.galore_alpha = j.value("galore_alpha", c.galore_alpha);
    c.adaptive_interval = j.value("adaptive_interval", c.adaptive_interval);
    c.tau_min = j.value("tau_min", c.tau_min);
    c.tau_max = j.value("tau_max", c.tau_max);
    c.gamma_reset = j.value("gamma_reset", c.gamma_reset);
    c.gamma_shrink = j.value("gamma_shrink", c.gamma_shrink);
    c.gamma_expand = j.value("gamma_expand", c.gamma_expand);
    c.truncation_rank = j.value("truncation_rank", c.truncation_rank);
    c.steps = j.value("steps", c.steps);
    c.warmup_fraction = j.value("warmup_fraction", c.warmup_fraction);
    c.seed = j.value("seed", c.seed);
    c.eval_every = j.value("eval_every", c.eval_every);
    c.terminal_window = j.value("terminal_window", c.terminal_window);
    c.parallel_layers = j.value("parallel_layers", c.parallel_layers);
    c.record_wall_time = j.value("record_wall_time", c.record_wall_time);
    c.out_dir = j.value("out_dir", c.out_dir);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  return c;
}

inline RunConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file: " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError("cannot parse config file " + path + ": " + e.what());
  }
  return config_from_json(j);
}

/// Learning-rate grid used for pre-training sweeps.
inline std::vector<double> lr_sweep_grid() { return {0.05, 0.01, 0.005, 0.0025, 0.001, 0.0075}; }

}  // namespace plumage::harness
