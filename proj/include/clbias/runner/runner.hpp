#pragma once

#include <chrono>
#include <cmath>
#include <cstdint>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "clbias/metrics/cka.hpp"
#include "clbias/metrics/metrics.hpp"
#include "clbias/runner/config.hpp"
#include "clbias/trainers/trainer.hpp"

namespace clbias::runner {

constexpr const char* kVersion = "clbias 0.1.0";

struct RunRecord {
  json config_echo;
  std::uint64_t seed = 0;
  json metrics_doc;  // deterministic given (config, seed)
  double wall_seconds = 0.0;

  json to_json() const {
    return json{{"config", config_echo},
                {"seed", seed},
                {"metrics", metrics_doc},
                {"wall_seconds", wall_seconds},
                {"version", kVersion}};
  }

  static RunRecord from_json(const json& j) {
    RunRecord r;
    r.config_echo = j.at("config");
    r.seed = j.at("seed").get<std::uint64_t>();
    r.metrics_doc = j.at("metrics");
    r.wall_seconds = j.value("wall_seconds", 0.0);
    return r;
  }
};

namespace detail {

inline std::vector<data::BiasedSample> originals_of(const data::TaskStream& stream, int task) {
  std::vector<data::BiasedSample> out;
  out.reserve(stream.test[task].size());
  for (const auto& [o, f] : stream.test[task]) out.push_back(o);
  return out;
}

inline json optional_to_json(const std::optional<double>& v) {
  if (v) return *v;
  return nullptr;
}

struct StageSnapshot {
  int stage = 0;
  std::vector<double> accuracy;                // per trained task
  std::vector<std::optional<double>> bmr;      // per trained task

  json to_json() const {
    json j{{"stage", stage}, {"accuracy", accuracy}, {"bmr", json::array()}};
    for (const auto& v : bmr) j["bmr"].push_back(optional_to_json(v));
    return j;
  }
};

inline StageSnapshot snapshot_stage(int stage, const trainers::TrainerState& st,
                                    const data::TaskStream& stream, int tasks_done) {
  StageSnapshot snap;
  snap.stage = stage;
  for (int j = 0; j < tasks_done; ++j) {
    const nn::MlpModel m = trainers::eval_model(st, j);
    snap.accuracy.push_back(metrics::accuracy(m, st.layout, originals_of(stream, j), j));
    snap.bmr.push_back(metrics::bmr(m, st.layout, stream.test[j], j));
  }
  return snap;
}

// Fine-tuning reference diagonal for the intransigence measure: the same
// stream and seed, trained without any CL mechanism.
inline std::vector<double> reference_diagonal(const data::TaskStream& stream,
                                              const trainers::HyperConfig& hyper,
                                              std::uint64_t trainer_seed) {
  trainers::TrainerState st = trainers::init_trainer(
      stream, trainers::MethodId::kFineTuning, hyper, false, {}, trainer_seed);
  std::vector<double> diag;
  for (int t = 0; t < stream.task_count(); ++t) {
    trainers::train_task(st, stream, t);
    diag.push_back(metrics::accuracy(st.model, st.layout, originals_of(stream, t), t));
  }
  return diag;
}

}  // namespace detail

// Runs one configured scenario end to end and assembles the metric bundle.
inline RunRecord run_scenario(const RunConfig& config, std::uint64_t seed) {
  const auto t0 = std::chrono::steady_clock::now();
  config.validate();

  data::ScenarioConfig scenario = config.scenario;
  scenario.seed = substream(seed, "data");
  const data::TaskStream stream = data::make_scenario(scenario);
  const std::uint64_t trainer_seed = substream(seed, "trainer");

  trainers::TrainerState st = trainers::init_trainer(stream, config.method, config.hyper,
                                                     config.groupdro, config.bgs,
                                                     trainer_seed);
  const bool staged = config.scenario.preset == "naive-debias-3stage";
  std::vector<detail::StageSnapshot> stages;

  metrics::AccuracyMatrix matrix;
  for (int t = 0; t < stream.task_count(); ++t) {
    trainers::train_task(st, stream, t);
    std::vector<double> row;
    for (int j = 0; j <= t; ++j) {
      const nn::MlpModel m = trainers::eval_model(st, j);
      row.push_back(metrics::accuracy(m, st.layout, detail::originals_of(stream, j), j));
    }
    matrix.rows.push_back(std::move(row));
    if (staged) stages.push_back(detail::snapshot_stage(t + 1, st, stream, t + 1));
  }

  const int tasks = stream.task_count();
  if (config.bgs.enabled) {
    trainers::bgs_retrain_heads(st, *st.bgs_memory, config.hyper.epochs);
    // the final row reflects the deployed (retrained) model
    for (int j = 0; j < tasks; ++j) {
      const nn::MlpModel m = trainers::eval_model(st, j);
      matrix.rows.back()[static_cast<std::size_t>(j)] =
          metrics::accuracy(m, st.layout, detail::originals_of(stream, j), j);
    }
  }
  if (staged) {
    trainers::groupdro_retrain(st, stream, tasks - 1);
    stages.push_back(detail::snapshot_stage(tasks + 1, st, stream, tasks));
  }

  if (config.metrics.intransigence) {
    matrix.reference_diag =
        (config.method == trainers::MethodId::kFineTuning && !config.bgs.enabled &&
         !config.groupdro && !staged)
            ? [&] {
                std::vector<double> d;
                for (int j = 0; j < tasks; ++j) d.push_back(matrix.at(j, j));
                return d;
              }()
            : detail::reference_diagonal(stream, config.hyper, trainer_seed);
  }

  // final-model metrics
  json doc;
  doc["accuracy_matrix"] = matrix.rows;
  if (!matrix.reference_diag.empty()) doc["reference_diag"] = matrix.reference_diag;
  double avg = 0.0;
  for (int j = 0; j < tasks; ++j) avg += matrix.at(tasks - 1, j);
  doc["avg_accuracy"] = avg / tasks;
  if (tasks >= 2) doc["forgetting"] = metrics::forgetting(matrix, tasks);
  if (!matrix.reference_diag.empty()) {
    doc["intransigence"] = metrics::intransigence(matrix, tasks);
    if (tasks >= 2)
      doc["fi"] = metrics::forgetting(matrix, tasks) - metrics::intransigence(matrix, tasks);
  }

  json bmr_arr = json::array();
  json dca_arr = json::array();
  json dca1_arr = json::array();
  json cka_arr = json::array();
  for (int j = 0; j < tasks; ++j) {
    const nn::MlpModel m = trainers::eval_model(st, j);
    bmr_arr.push_back(detail::optional_to_json(metrics::bmr(m, st.layout, stream.test[j], j)));
    const auto originals = detail::originals_of(stream, j);
    if (!stream.geometry.watermark) {
      dca_arr.push_back(metrics::dca(m, st.layout, originals, j, 0));
      if (stream.geometry.attributes > 1)
        dca1_arr.push_back(metrics::dca(m, st.layout, originals, j, 1));
    }
    if (config.metrics.cka)
      cka_arr.push_back(metrics::cka_bias_probe(m, stream.test[j]));
  }
  doc["bmr"] = bmr_arr;
  if (!dca_arr.empty()) doc["dca"] = dca_arr;
  if (!dca1_arr.empty()) doc["dca_attr1"] = dca1_arr;
  if (config.metrics.cka) doc["cka"] = cka_arr;

  if (config.metrics.breakdown) {
    // old classes = earlier tasks, new classes = the final task, bias class
    // separated out
    metrics::ClassPartition partition;
    int bias_class = -1;
    for (const auto& spec : stream.specs)
      if (spec.has_bias_class) bias_class = spec.bias_class;
    partition.bias_class = bias_class;
    for (int t = 0; t < tasks; ++t)
      for (int c : stream.specs[t].classes) {
        if (c == bias_class) continue;
        (t + 1 < tasks ? partition.old_classes : partition.new_classes).insert(c);
      }
    json breakdown = json::array();
    for (int j = 0; j < tasks; ++j) {
      const nn::MlpModel m = trainers::eval_model(st, j);
      const auto b = metrics::misclass_breakdown(m, st.layout, stream.test[j], j, partition);
      breakdown.push_back(json{{"task", j},
                               {"correct", b.correct},
                               {"old_rate", b.old_rate()},
                               {"new_rate", b.new_rate()},
                               {"bias_rate", b.bias_rate()},
                               {"total", detail::optional_to_json(b.total())}});
    }
    doc["breakdown"] = breakdown;
  }

  if (staged) {
    json st_arr = json::array();
    for (const auto& s : stages) st_arr.push_back(s.to_json());
    doc["stages"] = st_arr;
  }

  RunRecord record;
  record.config_echo = run_config_to_json(config);
  record.seed = seed;
  record.metrics_doc = std::move(doc);
  record.wall_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return record;
}

// ---------------------------------------------------------------------------
// sweep

struct SweepGrid {
  std::string param;            // lambda | memory_fraction | pruning_ratio | groupdro_lr
  std::vector<double> values;   // explicit grid, or log-spaced via below
};

inline std::vector<double> log_spaced(double lo, double hi, int count) {
  if (count < 2) throw std::invalid_argument("log_spaced: need >= 2 points");
  if (!(lo > 0.0) || !(hi > lo)) throw std::invalid_argument("log_spaced: bad range");
  std::vector<double> out;
  for (int i = 0; i < count; ++i)
    out.push_back(lo * std::pow(hi / lo, static_cast<double>(i) / (count - 1)));
  return out;
}

inline void apply_sweep_value(trainers::HyperConfig& hyper, const std::string& param,
                              double value) {
  if (param == "lambda")
    hyper.lambda = value;
  else if (param == "memory_fraction")
    hyper.memory_fraction = value;
  else if (param == "pruning_ratio")
    hyper.pruning_ratio = value;
  else if (param == "groupdro_lr")
    hyper.groupdro_lr = value;
  else
    throw std::invalid_argument("unknown sweep parameter: " + param);
}

struct SweepResult {
  SweepGrid grid;
  std::vector<std::vector<RunRecord>> records;  // [grid point][seed]
  std::vector<double> fi_mean;                  // mean F - I per grid point
  metrics::NormalizedFi normalized;
  std::vector<double> avg_accuracy;             // mean over tasks x seeds
  std::vector<std::optional<double>> bmr_mean;  // mean final avg BMR per grid point
  std::vector<int> representatives;             // <= 3 grid indices, one per third
};

inline std::optional<double> record_avg_bmr(const RunRecord& r) {
  double sum = 0.0;
  int n = 0;
  for (const auto& v : r.metrics_doc.at("bmr")) {
    if (v.is_null()) continue;
    sum += v.get<double>();
    n += 1;
  }
  if (n == 0) return std::nullopt;
  return sum / n;
}

// Executes all (grid x seed) runs, normalizes F - I over grid means and
// selects, per normalized third, the grid point with the highest average
// accuracy over tasks and seeds.
inline SweepResult sweep(const RunConfig& base, const SweepGrid& grid,
                         const std::vector<std::uint64_t>& seeds) {
  if (grid.values.size() < 2) throw std::invalid_argument("sweep: need >= 2 grid points");
  if (seeds.empty()) throw std::invalid_argument("sweep: no seeds");
  if (grid.param != "groupdro_lr") {
    const auto [lo, hi] = trainers::sweep_range(base.method);
    for (double v : grid.values)
      if (v < lo || v > hi)
        throw std::invalid_argument("sweep: value outside the method's search range");
  } else {
    const auto [lo, hi] = trainers::groupdro_lr_range();
    for (double v : grid.values)
      if (v < lo || v > hi) throw std::invalid_argument("sweep: groupdro_lr outside range");
  }

  SweepResult result;
  result.grid = grid;
  for (double value : grid.values) {
    RunConfig cfg = base;
    cfg.metrics.intransigence = true;  // F - I needs the reference diagonal
    apply_sweep_value(cfg.hyper, grid.param, value);
    std::vector<RunRecord> row;
    double fi_sum = 0.0, acc_sum = 0.0, bmr_sum = 0.0;
    int bmr_n = 0;
    for (std::uint64_t seed : seeds) {
      RunRecord rec = run_scenario(cfg, seed);
      fi_sum += rec.metrics_doc.value("fi", 0.0);
      acc_sum += rec.metrics_doc.at("avg_accuracy").get<double>();
      if (const auto b = record_avg_bmr(rec)) {
        bmr_sum += *b;
        bmr_n += 1;
      }
      row.push_back(std::move(rec));
    }
    result.records.push_back(std::move(row));
    result.fi_mean.push_back(fi_sum / static_cast<double>(seeds.size()));
    result.avg_accuracy.push_back(acc_sum / static_cast<double>(seeds.size()));
    result.bmr_mean.push_back(bmr_n > 0 ? std::optional<double>(bmr_sum / bmr_n)
                                        : std::nullopt);
  }
  result.normalized = metrics::normalize_fi(result.fi_mean);

  // one representative per normalized-F-I third: highest average accuracy
  for (int third = 0; third < 3; ++third) {
    const double lo = third / 3.0;
    const double hi = (third + 1) / 3.0;
    int best = -1;
    for (std::size_t g = 0; g < grid.values.size(); ++g) {
      const double v = result.normalized.values[g];
      const bool inside = (v >= lo && v < hi) || (third == 2 && v == 1.0);
      if (!inside) continue;
      if (best < 0 || result.avg_accuracy[g] > result.avg_accuracy[static_cast<std::size_t>(best)])
        best = static_cast<int>(g);
    }
    if (best >= 0) result.representatives.push_back(best);
  }
  return result;
}

}  // namespace clbias::runner
