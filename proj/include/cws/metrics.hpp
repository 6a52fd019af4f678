#pragma once

// Training metrics as JSON lines, one object per row. The writer only ever
// appends, so a resumed run extends the file of the interrupted one.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "cws/error.hpp"

namespace cws {

struct MetricRow {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double wall_time = 0.0;
  double loss_p = 0.0;
  double loss_phi = 0.0;
  double ess_mean = 0.0;
  double grad_norm_theta = 0.0;
  double grad_norm_phi = 0.0;
  bool eval = false;
  std::optional<double> val_accuracy;
  std::optional<double> val_loss_p;
  std::map<std::size_t, double> val_topk;
};

namespace metrics_detail {

// JSON has no NaN or infinity; they are written as null and read back as NaN.
inline nlohmann::json number(double v) { return std::isfinite(v) ? nlohmann::json(v) : nlohmann::json(nullptr); }

inline double read_number(const nlohmann::json& j, const char* key) {
  const auto& v = j.at(key);
  return v.is_null() ? std::nan("") : v.get<double>();
}

}  // namespace metrics_detail

inline nlohmann::json to_json(const MetricRow& r) {
  using metrics_detail::number;
  nlohmann::json j{{"step", r.step},
                   {"epoch", r.epoch},
                   {"wall_time", number(r.wall_time)},
                   {"loss_p", number(r.loss_p)},
                   {"loss_phi", number(r.loss_phi)},
                   {"ess_mean", number(r.ess_mean)},
                   {"grad_norm_theta", number(r.grad_norm_theta)},
                   {"grad_norm_phi", number(r.grad_norm_phi)},
                   {"eval", r.eval}};
  if (r.val_accuracy) j["val_accuracy"] = number(*r.val_accuracy);
  if (r.val_loss_p) j["val_loss_p"] = number(*r.val_loss_p);
  if (!r.val_topk.empty()) {
    nlohmann::json topk = nlohmann::json::object();
    for (const auto& [k, v] : r.val_topk) topk[std::to_string(k)] = number(v);
    j["val_topk"] = topk;
  }
  return j;
}

inline MetricRow metric_row_from_json(const nlohmann::json& j) {
  using metrics_detail::read_number;
  MetricRow r;
  r.step = j.at("step").get<std::size_t>();
  r.epoch = j.at("epoch").get<std::size_t>();
  r.wall_time = read_number(j, "wall_time");
  r.loss_p = read_number(j, "loss_p");
  r.loss_phi = read_number(j, "loss_phi");
  r.ess_mean = read_number(j, "ess_mean");
  r.grad_norm_theta = read_number(j, "grad_norm_theta");
  r.grad_norm_phi = read_number(j, "grad_norm_phi");
  r.eval = j.at("eval").get<bool>();
  if (j.contains("val_accuracy")) r.val_accuracy = read_number(j, "val_accuracy");
  if (j.contains("val_loss_p")) r.val_loss_p = read_number(j, "val_loss_p");
  if (j.contains("val_topk")) {
    for (const auto& [k, v] : j.at("val_topk").items()) r.val_topk[std::stoul(k)] = v.is_null() ? std::nan("") : v.get<double>();
  }
  return r;
}

struct MetricsLog {
  std::vector<MetricRow> rows;
  std::size_t skipped = 0;  // lines that failed to parse
};

// Reads a metrics file, skipping (and counting) corrupt lines. A missing file
// reads as empty.
inline MetricsLog read_metrics(const std::filesystem::path& path) {
  MetricsLog log;
  std::ifstream in(path);
  if (!in) return log;
  std::string line;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    try {
      log.rows.push_back(metric_row_from_json(nlohmann::json::parse(line)));
    } catch (const std::exception&) {
      ++log.skipped;
    }
  }
  return log;
}

class MetricsWriter {
 public:
  MetricsWriter() = default;

  // Rows at or before the last step already in the file are not rewritten.
  explicit MetricsWriter(const std::filesystem::path& path) : path_(path) {
    for (const auto& r : read_metrics(path).rows) last_step_ = std::max(last_step_.value_or(0), r.step);
    out_.open(path, std::ios::app);
    if (!out_) throw std::runtime_error("cannot open metrics file " + path.string());
  }

  bool is_open() const { return out_.is_open(); }

  void write(const MetricRow& r) {
    if (!out_.is_open()) return;
    if (last_step_ && r.step <= *last_step_) return;
    out_ << to_json(r).dump() << '\n';
    out_.flush();
  }

 private:
  std::filesystem::path path_;
  std::ofstream out_;
  std::optional<std::size_t> last_step_;
};

}  // namespace cws
