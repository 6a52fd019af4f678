#pragma once

// Plot data: long-format CSV (run, step, metric, value), one file per figure.
// Nothing is rendered.

#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cws/error.hpp"
#include "cws/metrics.hpp"

namespace cws {

struct PlotRow {
  std::string run;
  std::size_t step = 0;
  std::string metric;
  double value = 0.0;

  bool operator==(const PlotRow& o) const {
    return run == o.run && step == o.step && metric == o.metric &&
           (value == o.value || (std::isnan(value) && std::isnan(o.value)));
  }
};

struct RunMetrics {
  std::string run;
  MetricsLog log;
};

// Figure name -> rows. "accuracy" has one row per evaluation point.
inline std::map<std::string, std::vector<PlotRow>> plot_tables(const std::vector<RunMetrics>& runs) {
  std::map<std::string, std::vector<PlotRow>> out;
  auto& acc = out["accuracy"];
  auto& topk = out["topk"];
  auto& train = out["training"];
  for (const auto& r : runs) {
    for (const auto& m : r.log.rows) {
      if (m.eval && m.val_accuracy) {
        acc.push_back({r.run, m.step, "val_accuracy", *m.val_accuracy});
        for (const auto& [k, v] : m.val_topk) topk.push_back({r.run, m.step, "top" + std::to_string(k), v});
        if (m.val_loss_p) train.push_back({r.run, m.step, "val_loss_p", *m.val_loss_p});
      }
      train.push_back({r.run, m.step, "loss_p", m.loss_p});
      train.push_back({r.run, m.step, "loss_phi", m.loss_phi});
      train.push_back({r.run, m.step, "ess_mean", m.ess_mean});
      train.push_back({r.run, m.step, "grad_norm_theta", m.grad_norm_theta});
      train.push_back({r.run, m.step, "grad_norm_phi", m.grad_norm_phi});
    }
  }
  return out;
}

namespace plot_detail {

inline std::string quote(const std::string& s) {
  if (s.find_first_of(",\"\n\r") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) q += c == '"' ? std::string("\"\"") : std::string(1, c);
  return q + "\"";
}

inline std::string number(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, r.ptr);
}

// Splits one CSV record; fields may be quoted with doubled inner quotes.
inline std::vector<std::string> split(const std::string& line) {
  std::vector<std::string> out(1);
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        out.back() += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        out.back() += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.emplace_back();
    } else {
      out.back() += c;
    }
  }
  if (quoted) throw FormatError("unterminated quote in CSV line: " + line);
  return out;
}

}  // namespace plot_detail

inline std::string plot_csv(const std::vector<PlotRow>& rows) {
  std::string s = "run,step,metric,value\n";
  for (const auto& r : rows)
    s += plot_detail::quote(r.run) + "," + std::to_string(r.step) + "," + plot_detail::quote(r.metric) + "," +
         plot_detail::number(r.value) + "\n";
  return s;
}

inline std::vector<PlotRow> parse_plot_csv(const std::string& text, const std::string& source = "<csv>") {
  std::stringstream ss(text);
  std::string line;
  std::vector<PlotRow> rows;
  if (!std::getline(ss, line) || line != "run,step,metric,value") throw FormatError(source + ": missing CSV header");
  std::size_t lineno = 1;
  while (std::getline(ss, line)) {
    ++lineno;
    if (line.empty()) continue;
    auto f = plot_detail::split(line);
    if (f.size() != 4) throw FormatError(source + ":" + std::to_string(lineno) + ": expected 4 fields");
    PlotRow r;
    r.run = f[0];
    r.metric = f[2];
    try {
      r.step = std::stoull(f[1]);
      r.value = f[3] == "nan" ? std::nan("") : std::stod(f[3]);
    } catch (const std::exception&) {
      throw FormatError(source + ":" + std::to_string(lineno) + ": bad number");
    }
    rows.push_back(r);
  }
  return rows;
}

}  // namespace cws
