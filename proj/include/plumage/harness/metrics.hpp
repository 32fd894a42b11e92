#pragma once

#include <json.hpp>

#include <fstream>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "plumage/linalg.hpp"

namespace plumage::harness {

/// One telemetry line. Step records carry the losses; layer records carry
/// the projection telemetry emitted on SVD refreshes.
struct MetricRecord {
  long step = 0;
  std::optional<std::string> layer;
  std::optional<double> train_loss;
  std::optional<double> eval_loss;
  std::optional<Index> r_star;
  std::optional<double> rho;
  std::optional<int> tau;
  std::optional<double> grad_norm;
  std::optional<double> lr;
  std::optional<double> wall_time_ms;

  nlohmann::ordered_json to_json() const {
    nlohmann::ordered_json j;
    j["step"] = step;
    if (layer) j["layer"] = *layer;
    if (train_loss) j["train_loss"] = *train_loss;
    if (eval_loss) j["eval_loss"] = *eval_loss;
    if (r_star) j["r_star"] = *r_star;
    if (rho) j["rho"] = *rho;
    if (tau) j["tau"] = *tau;
    if (grad_norm) j["grad_norm"] = *grad_norm;
    if (lr) j["lr"] = *lr;
    if (wall_time_ms) j["wall_time_ms"] = *wall_time_ms;
    return j;
  }

  static MetricRecord from_json(const nlohmann::json& j) {
    MetricRecord r;
    r.step = j.at("step").get<long>();
    if (j.contains("layer")) r.layer = j["layer"].get<std::string>();
    if (j.contains("train_loss")) r.train_loss = j["train_loss"].get<double>();
    if (j.contains("eval_loss")) r.eval_loss = j["eval_loss"].get<double>();
    if (j.contains("r_star")) r.r_star = j["r_star"].get<Index>();
    if (j.contains("rho")) r.rho = j["rho"].get<double>();
    if (j.contains("tau")) r.tau = j["tau"].get<int>();
    if (j.contains("grad_norm")) r.grad_norm = j["grad_norm"].get<double>();
    if (j.contains("lr")) r.lr = j["lr"].get<double>();
    if (j.contains("wall_time_ms")) r.wall_time_ms = j["wall_time_ms"].get<double>();
    return r;
  }
};

/// JSON Lines sink. Appends are serialized so concurrent layers can emit.
class MetricsSink {
 public:
  MetricsSink() = default;

  /// Opens `path`; `append` keeps existing lines (resumed runs).
  MetricsSink(const std::string& path, bool append) {
    out_.open(path, append ? std::ios::app : std::ios::trunc);
    if (!out_) throw std::runtime_error("cannot open metrics file: " + path);
  }

  void append(const MetricRecord& r) {
    const std::string line = r.to_json().dump();
    std::lock_guard<std::mutex> lock(mu_);
    if (out_.is_open()) out_ << line << '\n';
    records_.push_back(r);
  }

  void flush() {
    std::lock_guard<std::mutex> lock(mu_);
    if (out_.is_open()) out_.flush();
  }

  std::vector<MetricRecord> take() {
    std::lock_guard<std::mutex> lock(mu_);
    return std::move(records_);
  }

 private:
  std::mutex mu_;
  std::ofstream out_;
  std::vector<MetricRecord> records_;
};

inline std::vector<MetricRecord> read_metrics(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open metrics file: " + path);
  std::vector<MetricRecord> out;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty()) out.push_back(MetricRecord::from_json(nlohmann::json::parse(line)));
  }
  return out;
}

}  // namespace plumage::harness
