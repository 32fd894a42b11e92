// plumage: train / compare / verify

#include <CLI11.hpp>

#include <filesystem>
#include <functional>
#include <iostream>
#include <string>
#include <vector>

#include "plumage/harness/compare.hpp"
#include "plumage/harness/config.hpp"
#include "plumage/harness/trainer.hpp"
#include "plumage/harness/verify.hpp"

using namespace plumage::harness;

namespace {

constexpr int kExitError = 1;
constexpr int kExitDiverged = 2;

/// Remembers which override flags were given so they can be applied on top
/// of the config file after parsing.
struct Overrides {
  RunConfig values;
  std::string task, optimizer, realign, schedule;
  std::vector<std::pair<CLI::Option*, std::function<void(RunConfig&)>>> setters;

  template <class T>
  void add(CLI::App& app, const std::string& flag, T RunConfig::*member, const std::string& help) {
    auto* opt = app.add_option(flag, values.*member, help);
    setters.emplace_back(opt, [this, member](RunConfig& c) { c.*member = values.*member; });
  }

  template <class T>
  void add_dim(CLI::App& app, const std::string& flag, T ModelDims::*member, const std::string& help) {
    auto* opt = app.add_option(flag, values.dims.*member, help);
    setters.emplace_back(opt, [this, member](RunConfig& c) { c.dims.*member = values.dims.*member; });
  }

  template <class E>
  void add_enum(CLI::App& app, const std::string& flag, std::string& raw, E RunConfig::*member, const char* what,
                const std::string& help) {
    auto* opt = app.add_option(flag, raw, help);
    setters.emplace_back(opt, [&raw, member, what](RunConfig& c) { c.*member = parse_enum<E>(raw, what); });
  }

  void apply(RunConfig& c) const {
    for (const auto& [opt, set] : setters) {
      if (opt->count() > 0) set(c);
    }
  }
};

void register_overrides(CLI::App& app, Overrides& o) {
  o.add_enum(app, "--task", o.task, &RunConfig::task, "task",
             "synthetic_lowrank_regression | mlp_classification | quadratic_bowl");
  o.add_enum(app, "--optimizer", o.optimizer, &RunConfig::optimizer, "optimizer",
             "adam | sgdm | plumage_adam | plumage_sgdm | galore_topk_adam | gaussian_adam");
  o.add_enum(app, "--realign", o.realign, &RunConfig::realign, "realign mode", "none | MP | S_MP");
  o.add_enum(app, "--schedule", o.schedule, &RunConfig::schedule, "schedule", "constant | cosine_with_floor");
  o.add(app, "--lr", &RunConfig::lr, "learning rate");
  o.add(app, "--beta1", &RunConfig::beta1, "first-moment decay");
  o.add(app, "--beta2", &RunConfig::beta2, "second-moment decay");
  o.add(app, "--epsilon", &RunConfig::epsilon, "Adam epsilon");
  o.add(app, "--rank", &RunConfig::rank, "projection rank k");
  o.add(app, "--interval", &RunConfig::svd_interval, "SVD interval tau");
  o.add(app, "--kappa", &RunConfig::resample_interval, "resample interval (0: same as tau)");
  o.add(app, "--alpha", &RunConfig::galore_alpha, "GaLoRE learning-rate scale (top-k only)");
  o.add(app, "--adaptive", &RunConfig::adaptive_interval, "adaptive SVD interval (true/false)");
  o.add(app, "--tau-min", &RunConfig::tau_min, "adaptive interval lower bound (0: tau)");
  o.add(app, "--tau-max", &RunConfig::tau_max, "adaptive interval upper bound (0: 5% of steps)");
  o.add(app, "--gamma-reset", &RunConfig::gamma_reset, "reset threshold");
  o.add(app, "--gamma-shrink", &RunConfig::gamma_shrink, "shrink threshold");
  o.add(app, "--gamma-expand", &RunConfig::gamma_expand, "expand threshold");
  o.add(app, "--truncation-rank", &RunConfig::truncation_rank, "columns used for the principal-angle metric");
  o.add(app, "--steps", &RunConfig::steps, "number of steps N");
  o.add(app, "--warmup", &RunConfig::warmup_fraction, "warmup fraction in [0, 1)");
  o.add(app, "--seed", &RunConfig::seed, "run seed");
  o.add(app, "--eval-every", &RunConfig::eval_every, "steps between held-out evaluations");
  o.add(app, "--terminal-window", &RunConfig::terminal_window, "trailing steps averaged into the terminal loss");
  o.add(app, "--parallel-layers", &RunConfig::parallel_layers, "step layers concurrently (true/false)");
  o.add(app, "--wall-time", &RunConfig::record_wall_time, "record wall time in metrics (true/false)");
  o.add(app, "--out", &RunConfig::out_dir, "output directory");
  o.add_dim(app, "--rows", &ModelDims::rows, "weight rows");
  o.add_dim(app, "--cols", &ModelDims::cols, "weight columns");
  o.add_dim(app, "--true-rank", &ModelDims::true_rank, "rank of the regression teacher");
  o.add_dim(app, "--batch", &ModelDims::batch, "batch size");
  o.add_dim(app, "--noise", &ModelDims::noise, "label noise std");
  o.add_dim(app, "--init-scale", &ModelDims::init_scale, "initial weight scale");
  o.add_dim(app, "--input-decay", &ModelDims::input_decay, "regression input spectrum decay");
  o.add_dim(app, "--inputs", &ModelDims::inputs, "MLP inputs");
  o.add_dim(app, "--hidden", &ModelDims::hidden, "MLP hidden units");
  o.add_dim(app, "--classes", &ModelDims::classes, "MLP classes");
  o.add_dim(app, "--eval-samples", &ModelDims::eval_samples, "held-out set size");
}

std::string lr_tag(double lr) {
  std::ostringstream os;
  os << "lr_" << lr;
  return os.str();
}

int run_train(const RunConfig& cfg, const RunOptions& opt) {
  const auto r = run_experiment(cfg, opt);
  const auto& s = r.summary;
  if (s.diverged) {
    std::cerr << "diverged at step " << s.divergence_step << ": " << s.divergence_reason << '\n';
    return kExitDiverged;
  }
  std::cout << cfg.out_dir << ": " << s.optimizer << " seed " << s.seed << " steps " << s.steps_completed
            << " terminal_loss " << s.terminal_loss << " best_loss " << s.best_loss << " eval_loss "
            << s.final_eval_loss << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"plumage: low-rank unbiased gradient estimation experiments"};
  app.require_subcommand(1);

  auto* train = app.add_subcommand("train", "run one experiment");
  std::string config_path, resume;
  long halt_at = 0;
  bool sweep = false;
  Overrides ov;
  train->add_option("--config", config_path, "JSON config file")->check(CLI::ExistingFile);
  train->add_option("--resume", resume, "checkpoint to resume from")->check(CLI::ExistingFile);
  train->add_option("--halt-at", halt_at, "stop after this many steps and write a checkpoint");
  train->add_flag("--lr-sweep", sweep, "run the learning-rate grid into <out>/lr_<value>");
  register_overrides(*train, ov);

  auto* compare = app.add_subcommand("compare", "summarize finished runs");
  std::vector<std::string> run_dirs;
  std::string compare_out;
  compare->add_option("runs", run_dirs, "run directories")->required();
  compare->add_option("--out", compare_out, "write the per-optimizer table as CSV");

  auto* verify = app.add_subcommand("verify", "run the acceptance suite");
  std::vector<int> only;
  std::string work = "verify_work";
  verify->add_option("--only", only, "criterion ids to run");
  verify->add_option("--work-dir", work, "scratch directory for run outputs");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) {
      RunConfig cfg = config_path.empty() ? RunConfig{} : load_config(config_path);
      ov.apply(cfg);
      cfg.validate();
      RunOptions opt;
      if (!resume.empty()) opt.resume_from = resume;
      if (halt_at > 0) opt.halt_at = halt_at;
      if (!sweep) return run_train(cfg, opt);
      int worst = 0;
      const std::string base = cfg.out_dir;
      for (double lr : lr_sweep_grid()) {
        RunConfig c = cfg;
        c.lr = lr;
        c.out_dir = (std::filesystem::path(base) / lr_tag(lr)).string();
        worst = std::max(worst, run_train(c, opt));
      }
      return worst;
    }
    if (*compare) {
      const auto rep = compare_runs(run_dirs);
      std::cout << rep.to_text();
      if (!compare_out.empty()) {
        std::ofstream out(compare_out);
        if (!out) throw std::runtime_error("cannot write " + compare_out);
        out << rep.to_csv();
      }
      return 0;
    }
    if (*verify) {
      VerifyOptions opt;
      opt.only.insert(only.begin(), only.end());
      opt.work_dir = work;
      opt.log = &std::cout;
      bool ok = true;
      for (const auto& r : run_acceptance(opt)) {
        std::cout << format_result(r) << std::endl;
        ok = ok && r.passed;
      }
      return ok ? 0 : kExitError;
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitError;
  }
  return 0;
}
