#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "clbias/data/stream.hpp"

namespace clbias::data {

// Scenario families. Presets fix the task layout; the seed fixes everything
// else.
//
//   two-task-forward        T1 at `levels[0]`, T2 at level 0
//   two-task-backward       T1 at level 0, T2 at `levels[1]`
//   ten-task-endpoints      N tasks, first or last at `endpoint_level`
//   accumulation-same-bias  5 tasks, `biased_tasks` of the first four at level 4
//   accumulation-two-attributes  3 tasks, two attributes, T1/T2 biased on
//                           attribute 0/1 at `levels`, T3 unbiased
//   random-levels           N tasks with seeded uniform levels in 0..6
//   naive-debias-3stage     2 tasks at levels {0, 6}; the runner adds the
//                           debiasing stage
struct ScenarioConfig {
  std::string preset = "two-task-forward";
  std::optional<Regime> regime;  // preset default when unset
  int tasks = -1;                // preset default when < 0
  int classes_per_task = 2;
  int n_train = 100;  // per class
  int n_test = 100;   // per class
  std::vector<int> levels;
  int biased_tasks = 0;
  int biased_level = 4;
  std::string endpoint = "first";
  int endpoint_level = 6;
  bool bias_class = false;  // watermark analogue; biased tasks carry the carton class
  StreamGeometry geometry;
  std::uint64_t seed = 0;
};

namespace detail {

inline Regime default_regime(const std::string& preset) {
  if (preset == "accumulation-two-attributes") return Regime::kDomainIl;
  return Regime::kTaskIl;
}

inline int default_tasks(const std::string& preset) {
  if (preset == "two-task-forward" || preset == "two-task-backward" ||
      preset == "naive-debias-3stage")
    return 2;
  if (preset == "ten-task-endpoints") return 10;
  if (preset == "accumulation-same-bias") return 5;
  if (preset == "accumulation-two-attributes") return 3;
  if (preset == "random-levels") return 10;
  throw std::invalid_argument("unknown scenario preset: " + preset);
}

}  // namespace detail

// Per-task bias levels for a preset (attribute-0 levels; two-attribute
// presets are handled separately).
inline std::vector<int> preset_levels(const ScenarioConfig& cfg, int tasks) {
  std::vector<int> levels(tasks, 0);
  if (cfg.preset == "two-task-forward") {
    levels[0] = cfg.levels.empty() ? 6 : cfg.levels[0];
  } else if (cfg.preset == "two-task-backward") {
    levels[tasks - 1] = cfg.levels.size() > 1 ? cfg.levels[1]
                        : (cfg.levels.size() == 1 ? cfg.levels[0] : 6);
  } else if (cfg.preset == "ten-task-endpoints") {
    if (cfg.endpoint == "first")
      levels[0] = cfg.endpoint_level;
    else if (cfg.endpoint == "last")
      levels[tasks - 1] = cfg.endpoint_level;
    else
      throw std::invalid_argument("ten-task-endpoints: endpoint must be first|last");
  } else if (cfg.preset == "accumulation-same-bias") {
    if (cfg.biased_tasks < 0 || cfg.biased_tasks > tasks - 1)
      throw std::invalid_argument("accumulation-same-bias: biased_tasks out of range");
    std::vector<int> candidates;
    for (int t = 0; t < tasks - 1; ++t) candidates.push_back(t);
    Rng pick(substream(cfg.seed, "biased-tasks"));
    pick.shuffle(candidates);
    for (int i = 0; i < cfg.biased_tasks; ++i) levels[candidates[i]] = cfg.biased_level;
  } else if (cfg.preset == "random-levels") {
    Rng lvl_rng(substream(cfg.seed, "levels"));
    for (int t = 0; t < tasks; ++t) levels[t] = static_cast<int>(lvl_rng.below(7));
  } else if (cfg.preset == "naive-debias-3stage") {
    levels = {0, 6};
  } else {
    throw std::invalid_argument("unknown scenario preset: " + cfg.preset);
  }
  if (static_cast<int>(cfg.levels.size()) == tasks) {
    // explicit full level vector overrides the preset pattern
    levels = cfg.levels;
  }
  return levels;
}

// Fully generates a deterministic stream for one preset.
inline TaskStream make_scenario(const ScenarioConfig& cfg) {
  const int tasks = cfg.tasks > 0 ? cfg.tasks : detail::default_tasks(cfg.preset);
  const Regime regime = cfg.regime.value_or(detail::default_regime(cfg.preset));
  const bool two_attr = cfg.preset == "accumulation-two-attributes";
  if (tasks < 1) throw std::invalid_argument("make_scenario: need at least one task");
  if (two_attr && tasks != 3)
    throw std::invalid_argument("accumulation-two-attributes: exactly 3 tasks");
  if (cfg.bias_class && regime != Regime::kClassIl)
    throw std::invalid_argument("bias-class streams require the class-il regime");

  TaskStream stream;
  stream.geometry = cfg.geometry;
  stream.geometry.attributes = two_attr ? 2 : 1;
  stream.geometry.watermark = cfg.bias_class;
  stream.geometry.prototype_seed = substream(cfg.seed, "prototypes");
  stream.geometry.validate();

  std::vector<int> levels;
  if (!two_attr) levels = preset_levels(cfg, tasks);

  for (int t = 0; t < tasks; ++t) {
    TaskSpec spec;
    spec.scenario = regime;
    spec.n_train = cfg.n_train;
    spec.n_test = cfg.n_test;
    spec.seed = substream(cfg.seed, "task", static_cast<std::uint64_t>(t));
    if (regime == Regime::kDomainIl) {
      for (int c = 0; c < cfg.classes_per_task; ++c) spec.classes.push_back(c);
    } else {
      for (int c = 0; c < cfg.classes_per_task; ++c)
        spec.classes.push_back(t * cfg.classes_per_task + c);
    }
    if (two_attr) {
      const int l0 = cfg.levels.size() > 0 ? cfg.levels[0] : 6;
      const int l1 = cfg.levels.size() > 1 ? cfg.levels[1] : 6;
      if (t == 0)
        spec.bias_level = {l0, 0};
      else if (t == 1)
        spec.bias_level = {0, l1};
      else
        spec.bias_level = {0, 0};
    } else {
      spec.bias_level = {levels[t]};
    }
    if (cfg.bias_class && spec.bias_level[0] > 0) {
      spec.has_bias_class = true;
      spec.bias_class = spec.classes.back();
    }
    stream.specs.push_back(std::move(spec));
  }

  for (int t = 0; t < tasks; ++t) {
    GeneratedTask gen = generate_task(stream.specs[t], stream.geometry,
                                      stream.attribute_values, t);
    // interleave classes/groups so memory samplers see a mixed arrival order
    Rng order(substream(cfg.seed, "train-order", static_cast<std::uint64_t>(t)));
    order.shuffle(gen.train);
    stream.train.push_back(std::move(gen.train));
    stream.test.push_back(std::move(gen.test));
  }
  return stream;
}

}  // namespace clbias::data
