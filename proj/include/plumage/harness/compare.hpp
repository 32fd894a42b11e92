#pragma once

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "plumage/harness/trainer.hpp"

namespace plumage::harness {

struct OptimizerAggregate {
  std::string optimizer;
  int runs = 0;
  double mean_terminal = 0.0;
  double mean_best = 0.0;
  int diverged = 0;
};

struct SeedOrdering {
  std::uint64_t seed = 0;
  std::vector<std::string> optimizers;  ///< ascending terminal loss; diverged runs last
  std::string verdict;                  ///< e.g. "adam < plumage_adam < galore_topk_adam"
};

struct ComparisonReport {
  std::string task;
  std::vector<RunSummary> runs;
  std::vector<OptimizerAggregate> per_optimizer;
  std::vector<SeedOrdering> per_seed;

  std::string to_csv() const {
    std::ostringstream os;
    os << "optimizer,runs,mean_terminal_loss,mean_best_loss,diverged\n";
    for (const auto& a : per_optimizer) {
      os << a.optimizer << ',' << a.runs << ',' << detail::fmt_double(a.mean_terminal) << ','
         << detail::fmt_double(a.mean_best) << ',' << a.diverged << '\n';
    }
    return os.str();
  }

  std::string to_text() const {
    std::ostringstream os;
    os << "task: " << task << "\n\nper run\n";
    for (const auto& r : runs) {
      os << "  " << r.optimizer << " seed=" << r.seed << " terminal=" << detail::fmt_double(r.terminal_loss)
         << " best=" << detail::fmt_double(r.best_loss) << (r.diverged ? " DIVERGED" : "") << '\n';
    }
    os << "\nper optimizer (seeds aggregated)\n";
    for (const auto& a : per_optimizer) {
      os << "  " << a.optimizer << " runs=" << a.runs << " mean_terminal=" << detail::fmt_double(a.mean_terminal)
         << " mean_best=" << detail::fmt_double(a.mean_best) << " diverged=" << a.diverged << '\n';
    }
    os << "\nordering per seed\n";
    for (const auto& s : per_seed) os << "  seed " << s.seed << ": " << s.verdict << '\n';
    return os.str();
  }
};

namespace detail {

inline std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace detail

/// Reads <dir>/summary.csv as written by run_experiment.
inline RunSummary read_summary(const std::string& run_dir) {
  const auto path = (std::filesystem::path(run_dir) / "summary.csv").string();
  if (!std::filesystem::exists(run_dir)) throw std::runtime_error("run directory does not exist: " + run_dir);
  std::ifstream in(path);
  if (!in) throw std::runtime_error("missing run summary: " + path);
  std::string header, row;
  std::getline(in, header);
  std::getline(in, row);
  if (header != summary_csv_header()) throw std::runtime_error("unrecognised summary header in " + path);
  const auto c = detail::split_csv(row);
  if (c.size() != 10) throw std::runtime_error("malformed summary row in " + path);
  RunSummary s;
  try {
    s.task = c[0];
    s.optimizer = c[1];
    s.seed = std::stoull(c[2]);
    s.steps = std::stol(c[3]);
    s.steps_completed = std::stol(c[4]);
    s.terminal_loss = std::stod(c[5]);
    s.best_loss = std::stod(c[6]);
    s.final_eval_loss = std::stod(c[7]);
    s.diverged = c[8] == "1";
    s.divergence_step = std::stol(c[9]);
  } catch (const std::exception&) {
    throw std::runtime_error("malformed summary row in " + path);
  }
  return s;
}

inline ComparisonReport compare_summaries(std::vector<RunSummary> runs) {
  if (runs.size() < 2) throw std::runtime_error("compare needs at least two runs");
  ComparisonReport rep;
  rep.task = runs.front().task;
  for (const auto& r : runs) {
    if (r.task != rep.task) throw std::runtime_error("cannot compare runs on different tasks: " + rep.task + " vs " + r.task);
  }

  std::map<std::string, OptimizerAggregate> agg;
  std::vector<std::string> order;
  for (const auto& r : runs) {
    auto [it, fresh] = agg.try_emplace(r.optimizer);
    if (fresh) {
      order.push_back(r.optimizer);
      it->second.optimizer = r.optimizer;
    }
    auto& a = it->second;
    ++a.runs;
    a.mean_terminal += r.terminal_loss;
    a.mean_best += r.best_loss;
    if (r.diverged) ++a.diverged;
  }
  for (const auto& name : order) {
    auto a = agg[name];
    a.mean_terminal /= a.runs;
    a.mean_best /= a.runs;
    rep.per_optimizer.push_back(a);
  }

  std::map<std::uint64_t, std::vector<const RunSummary*>> by_seed;
  for (const auto& r : runs) by_seed[r.seed].push_back(&r);
  for (auto& [seed, group] : by_seed) {
    std::stable_sort(group.begin(), group.end(), [](const RunSummary* a, const RunSummary* b) {
      if (a->diverged != b->diverged) return !a->diverged;
      return a->terminal_loss < b->terminal_loss;
    });
    SeedOrdering so;
    so.seed = seed;
    for (std::size_t i = 0; i < group.size(); ++i) {
      so.optimizers.push_back(group[i]->optimizer);
      if (i > 0) so.verdict += group[i]->terminal_loss == group[i - 1]->terminal_loss ? " = " : " < ";
      so.verdict += group[i]->optimizer + (group[i]->diverged ? "(diverged)" : "");
    }
    rep.per_seed.push_back(std::move(so));
  }
  rep.runs = std::move(runs);
  return rep;
}

inline ComparisonReport compare_runs(const std::vector<std::string>& run_dirs) {
  std::vector<RunSummary> runs;
  for (const auto& d : run_dirs) runs.push_back(read_summary(d));
  return compare_summaries(std::move(runs));
}

}  // namespace plumage::harness
