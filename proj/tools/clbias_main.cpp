// clbias: synthetic continual-learning bias-transfer workbench.
//
//   clbias gen     write a generated task stream to a record file
//   clbias run     execute one run config (all its seeds)
//   clbias sweep   hyperparameter sweep with normalized F-I selection
//   clbias report  aggregate run records into CSV tables

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "clbias/data/io.hpp"
#include "clbias/data/scenario.hpp"
#include "clbias/runner/config.hpp"
#include "clbias/runner/report.hpp"
#include "clbias/runner/runner.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open config file: " + path);
  json j;
  in >> j;
  return j;
}

struct CliOverrides {
  std::string config_path;
  std::optional<std::uint64_t> seed;
  std::string preset;
  std::string method;
  std::string out;
  bool bgs = false;
  bool groupdro = false;
};

clbias::runner::RunConfig resolve_config(const CliOverrides& o) {
  json j = o.config_path.empty() ? json::object() : load_json(o.config_path);
  clbias::runner::RunConfig cfg = clbias::runner::run_config_from_json(j);
  if (!o.preset.empty()) cfg.scenario.preset = o.preset;
  if (!o.method.empty()) cfg.method = clbias::trainers::parse_method(o.method);
  if (o.seed) cfg.seeds = {*o.seed};
  if (!o.out.empty()) cfg.output = o.out;
  if (o.bgs) cfg.bgs.enabled = true;
  if (o.groupdro) cfg.groupdro = true;
  cfg.validate();
  return cfg;
}

std::string record_filename(const clbias::runner::RunConfig& cfg, std::uint64_t seed) {
  std::string name = "run_" + clbias::trainers::method_name(cfg.method);
  if (cfg.bgs.enabled) name += "_bgs";
  if (cfg.groupdro) name += "_groupdro";
  name += "_seed" + std::to_string(seed) + ".json";
  return name;
}

int cmd_gen(const CliOverrides& o) {
  json j = o.config_path.empty() ? json::object() : load_json(o.config_path);
  clbias::data::ScenarioConfig scenario =
      j.contains("scenario") ? clbias::runner::scenario_from_json(j.at("scenario"))
                             : clbias::runner::scenario_from_json(j);
  if (!o.preset.empty()) scenario.preset = o.preset;
  if (o.seed) scenario.seed = *o.seed;
  const clbias::data::TaskStream stream = clbias::data::make_scenario(scenario);
  const std::string out = o.out.empty() ? "stream.jsonl" : o.out;
  clbias::data::export_stream(stream, out);
  std::cout << "wrote " << stream.task_count() << " tasks to " << out << "\n";
  return 0;
}

int cmd_run(const CliOverrides& o) {
  const clbias::runner::RunConfig cfg = resolve_config(o);
  fs::create_directories(cfg.output);
  for (std::uint64_t seed : cfg.seeds) {
    const clbias::runner::RunRecord record = clbias::runner::run_scenario(cfg, seed);
    const fs::path path = fs::path(cfg.output) / record_filename(cfg, seed);
    std::ofstream out(path);
    out << record.to_json().dump(2) << "\n";
    std::cout << path.string() << "  avg_acc="
              << record.metrics_doc.at("avg_accuracy").get<double>();
    if (const auto bmr = clbias::runner::record_avg_bmr(record))
      std::cout << "  avg_bmr=" << *bmr;
    std::cout << "  (" << record.wall_seconds << "s)\n";
  }
  return 0;
}

int cmd_sweep(const CliOverrides& o) {
  json j = load_json(o.config_path);
  if (!j.contains("sweep")) throw std::runtime_error("sweep: config needs a 'sweep' section");
  const json& s = j.at("sweep");
  clbias::runner::SweepGrid grid;
  grid.param = s.at("param").get<std::string>();
  if (s.contains("values")) {
    grid.values = s.at("values").get<std::vector<double>>();
  } else {
    grid.values = clbias::runner::log_spaced(s.at("min").get<double>(),
                                             s.at("max").get<double>(),
                                             s.at("count").get<int>());
  }
  clbias::runner::RunConfig cfg = resolve_config(o);
  fs::create_directories(cfg.output);
  const clbias::runner::SweepResult result = clbias::runner::sweep(cfg, grid, cfg.seeds);

  json summary{{"param", grid.param},
               {"values", grid.values},
               {"fi_mean", result.fi_mean},
               {"normalized_fi", result.normalized.values},
               {"degenerate", result.normalized.degenerate},
               {"avg_accuracy", result.avg_accuracy},
               {"representatives", result.representatives}};
  const fs::path dir(cfg.output);
  {
    std::ofstream out(dir / "sweep_summary.json");
    out << summary.dump(2) << "\n";
  }
  for (std::size_t g = 0; g < result.records.size(); ++g)
    for (const auto& rec : result.records[g]) {
      std::ofstream out(dir / ("sweep_" + grid.param + "_" + std::to_string(g) + "_seed" +
                               std::to_string(rec.seed) + ".json"));
      out << rec.to_json().dump(2) << "\n";
    }
  const int bias_level = cfg.scenario.levels.empty() ? 0 : cfg.scenario.levels.front();
  clbias::runner::write_curve_csv(result, clbias::trainers::method_name(cfg.method),
                                  bias_level, (dir / "curve.csv").string());
  std::cout << "sweep_summary.json and curve.csv written to " << cfg.output << "\n";
  return 0;
}

int cmd_report(const std::vector<std::string>& inputs, const std::string& out) {
  std::vector<clbias::runner::RunRecord> records;
  for (const auto& input : inputs) {
    if (fs::is_directory(input)) {
      std::vector<fs::path> paths;
      for (const auto& entry : fs::directory_iterator(input))
        if (entry.path().extension() == ".json" &&
            entry.path().filename().string().rfind("run_", 0) == 0)
          paths.push_back(entry.path());
      std::sort(paths.begin(), paths.end());
      for (const auto& p : paths)
        records.push_back(clbias::runner::RunRecord::from_json(load_json(p.string())));
    } else {
      records.push_back(clbias::runner::RunRecord::from_json(load_json(input)));
    }
  }
  const auto rows = clbias::runner::report(records);
  if (out.empty()) {
    clbias::runner::write_report_csv(rows, std::cout);
  } else {
    clbias::runner::write_report_csv(rows, out);
    std::cout << "wrote " << rows.size() << " rows to " << out << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"synthetic continual-learning bias-transfer workbench"};
  app.require_subcommand(1);

  CliOverrides gen_o, run_o, sweep_o;
  std::vector<std::string> report_inputs;
  std::string report_out;

  auto add_common = [](CLI::App* cmd, CliOverrides& o, bool config_required) {
    auto* copt = cmd->add_option("--config", o.config_path, "JSON run config");
    if (config_required) copt->required();
    cmd->add_option("--seed", o.seed, "override: use this single seed");
    cmd->add_option("--preset", o.preset, "override: scenario preset");
    cmd->add_option("--method", o.method, "override: method id");
    cmd->add_option("--out", o.out, "output file/directory");
    cmd->add_flag("--bgs", o.bgs, "enable BGS memory + head retraining");
    cmd->add_flag("--groupdro", o.groupdro, "wrap the objective with Group DRO");
  };

  add_common(app.add_subcommand("gen", "generate a task stream file"), gen_o, false);
  add_common(app.add_subcommand("run", "execute one run config"), run_o, false);
  add_common(app.add_subcommand("sweep", "hyperparameter sweep"), sweep_o, true);
  auto* report_cmd = app.add_subcommand("report", "aggregate run records into CSV");
  report_cmd->add_option("inputs", report_inputs, "record files or directories")->required();
  report_cmd->add_option("--out", report_out, "output CSV path");

  CLI11_PARSE(app, argc, argv);

  try {
    if (app.got_subcommand("gen")) return cmd_gen(gen_o);
    if (app.got_subcommand("run")) return cmd_run(run_o);
    if (app.got_subcommand("sweep")) return cmd_sweep(sweep_o);
    if (app.got_subcommand("report")) return cmd_report(report_inputs, report_out);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
