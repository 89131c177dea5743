#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <tuple>
#include <vector>

#include "clbias/runner/runner.hpp"

namespace clbias::runner {

struct ReportRow {
  std::string method;
  std::string variant;  // "" or "+bgs" (+ "+groupdro")
  int k = 0;            // exemplar memory size, 0 when none
  double avg_acc_mean = 0.0;
  double avg_acc_std = 0.0;
  std::optional<double> avg_bmr_mean;
  std::optional<double> avg_bmr_std;
  int seeds = 0;
};

namespace detail {

inline std::pair<double, double> mean_std(const std::vector<double>& xs) {
  const double n = static_cast<double>(xs.size());
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= n;
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  return {mean, std::sqrt(var / n)};  // population std: one seed -> 0
}

inline int record_memory_size(const RunRecord& r) {
  const json& cfg = r.config_echo;
  if (cfg.at("bgs").at("enabled").get<bool>())
    return cfg.at("bgs").at("capacity").get<int>();
  const std::string method = cfg.at("method").get<std::string>();
  if (method == "er" || method == "gdumb") {
    const double fraction = cfg.at("hyper").at("memory_fraction").get<double>();
    const int task_size = cfg.at("scenario").at("classes_per_task").get<int>() *
                          cfg.at("scenario").at("n_train").get<int>();
    return static_cast<int>(std::lround(fraction * task_size));
  }
  return 0;
}

inline std::string record_variant(const RunRecord& r) {
  std::string v;
  if (r.config_echo.at("bgs").at("enabled").get<bool>()) v += "+bgs";
  if (r.config_echo.at("groupdro").get<bool>()) v += "+groupdro";
  return v;
}

}  // namespace detail

// Aggregates per-(method, variant, k) means and stds over seeds. Rows come
// out in a stable deterministic order.
inline std::vector<ReportRow> report(const std::vector<RunRecord>& records) {
  if (records.empty()) throw std::invalid_argument("report: no records");
  // records must share one scenario family
  const json family = records.front().config_echo.at("scenario").at("preset");
  for (const auto& r : records)
    if (r.config_echo.at("scenario").at("preset") != family)
      throw std::invalid_argument("report: mixed scenario presets");

  std::map<std::tuple<std::string, std::string, int>,
           std::pair<std::vector<double>, std::vector<double>>>
      groups;  // key -> (avg_acc values, avg_bmr values)
  std::map<std::tuple<std::string, std::string, int>, int> seen;
  for (const auto& r : records) {
    const std::string method = r.config_echo.at("method").get<std::string>();
    const auto key =
        std::make_tuple(method, detail::record_variant(r), detail::record_memory_size(r));
    groups[key].first.push_back(r.metrics_doc.at("avg_accuracy").get<double>());
    if (const auto b = record_avg_bmr(r)) groups[key].second.push_back(*b);
    seen[key] += 1;
  }
  std::vector<ReportRow> rows;
  for (const auto& [key, values] : groups) {
    ReportRow row;
    row.method = std::get<0>(key);
    row.variant = std::get<1>(key);
    row.k = std::get<2>(key);
    row.seeds = seen[key];
    const auto [am, as] = detail::mean_std(values.first);
    row.avg_acc_mean = am;
    row.avg_acc_std = as;
    if (!values.second.empty()) {
      const auto [bm, bs] = detail::mean_std(values.second);
      row.avg_bmr_mean = bm;
      row.avg_bmr_std = bs;
    }
    rows.push_back(std::move(row));
  }
  return rows;  // std::map iteration: already sorted by (method, variant, k)
}

inline std::string format_csv_double(double v) {
  std::ostringstream os;
  os.precision(10);
  os << v;
  return os.str();
}

inline void write_report_csv(const std::vector<ReportRow>& rows, std::ostream& out) {
  out << "method,variant,k,avg_acc_mean,avg_acc_std,avg_bmr_mean,avg_bmr_std\n";
  for (const auto& r : rows) {
    out << r.method << ',' << r.variant << ',' << r.k << ','
        << format_csv_double(r.avg_acc_mean) << ',' << format_csv_double(r.avg_acc_std)
        << ',' << (r.avg_bmr_mean ? format_csv_double(*r.avg_bmr_mean) : "") << ','
        << (r.avg_bmr_std ? format_csv_double(*r.avg_bmr_std) : "") << '\n';
  }
}

inline void write_report_csv(const std::vector<ReportRow>& rows, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_report_csv: cannot open " + path);
  write_report_csv(rows, out);
}

// Curve file for the figure-style plots: one point per grid value.
inline void write_curve_csv(const SweepResult& sweep_result, const std::string& method,
                            int bias_level, std::ostream& out) {
  out << "normalized_fi,bmr,method,bias_level\n";
  for (std::size_t g = 0; g < sweep_result.grid.values.size(); ++g) {
    out << format_csv_double(sweep_result.normalized.values[g]) << ','
        << (sweep_result.bmr_mean[g] ? format_csv_double(*sweep_result.bmr_mean[g]) : "")
        << ',' << method << ',' << bias_level << '\n';
  }
}

inline void write_curve_csv(const SweepResult& sweep_result, const std::string& method,
                            int bias_level, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("write_curve_csv: cannot open " + path);
  write_curve_csv(sweep_result, method, bias_level, out);
}

}  // namespace clbias::runner
