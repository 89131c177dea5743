#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "clbias/data/io.hpp"
#include "clbias/data/scenario.hpp"
#include "clbias/trainers/trainer.hpp"

namespace clbias::runner {

using nlohmann::json;

struct MetricsSelect {
  bool intransigence = true;
  bool cka = true;
  bool breakdown = false;
};

struct RunConfig {
  data::ScenarioConfig scenario;
  trainers::MethodId method = trainers::MethodId::kFineTuning;
  trainers::HyperConfig hyper;
  bool groupdro = false;
  trainers::BgsConfig bgs;
  MetricsSelect metrics;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::string output = "out";

  void validate() const {
    if (seeds.empty()) throw std::invalid_argument("RunConfig: no seeds");
    // make_scenario enforces bias_class => class-il
    if (metrics.breakdown && !scenario.bias_class)
      throw std::invalid_argument(
          "RunConfig: misclassification breakdown needs a class-il bias-class stream");
  }
};

inline data::ScenarioConfig scenario_from_json(const json& j) {
  data::ScenarioConfig cfg;
  cfg.preset = j.value("preset", cfg.preset);
  if (j.contains("regime")) cfg.regime = data::parse_regime(j.at("regime").get<std::string>());
  cfg.tasks = j.value("tasks", cfg.tasks);
  cfg.classes_per_task = j.value("classes_per_task", cfg.classes_per_task);
  cfg.n_train = j.value("n_train", cfg.n_train);
  cfg.n_test = j.value("n_test", cfg.n_test);
  if (j.contains("levels")) cfg.levels = j.at("levels").get<std::vector<int>>();
  cfg.biased_tasks = j.value("biased_tasks", cfg.biased_tasks);
  cfg.biased_level = j.value("biased_level", cfg.biased_level);
  cfg.endpoint = j.value("endpoint", cfg.endpoint);
  cfg.endpoint_level = j.value("endpoint_level", cfg.endpoint_level);
  cfg.bias_class = j.value("bias_class", cfg.bias_class);
  if (j.contains("geometry")) cfg.geometry = data::geometry_from_json(j.at("geometry"));
  return cfg;
}

inline json scenario_to_json(const data::ScenarioConfig& cfg) {
  json j{{"preset", cfg.preset},
         {"tasks", cfg.tasks},
         {"classes_per_task", cfg.classes_per_task},
         {"n_train", cfg.n_train},
         {"n_test", cfg.n_test},
         {"levels", cfg.levels},
         {"biased_tasks", cfg.biased_tasks},
         {"biased_level", cfg.biased_level},
         {"endpoint", cfg.endpoint},
         {"endpoint_level", cfg.endpoint_level},
         {"bias_class", cfg.bias_class},
         {"geometry", data::geometry_to_json(cfg.geometry)}};
  if (cfg.regime) j["regime"] = data::regime_name(*cfg.regime);
  return j;
}

inline trainers::HyperConfig hyper_from_json(const json& j) {
  trainers::HyperConfig h;
  h.lambda = j.value("lambda", h.lambda);
  h.memory_fraction = j.value("memory_fraction", h.memory_fraction);
  h.pruning_ratio = j.value("pruning_ratio", h.pruning_ratio);
  h.groupdro_lr = j.value("groupdro_lr", h.groupdro_lr);
  h.distill_temperature = j.value("distill_temperature", h.distill_temperature);
  h.epochs = j.value("epochs", h.epochs);
  h.batch_size = j.value("batch_size", h.batch_size);
  if (j.contains("hidden")) h.hidden = j.at("hidden").get<std::vector<int>>();
  h.optimizer.learning_rate = j.value("learning_rate", h.optimizer.learning_rate);
  h.optimizer.weight_decay = j.value("weight_decay", h.optimizer.weight_decay);
  h.optimizer.beta1 = j.value("beta1", h.optimizer.beta1);
  h.optimizer.beta2 = j.value("beta2", h.optimizer.beta2);
  h.optimizer.epsilon = j.value("epsilon", h.optimizer.epsilon);
  return h;
}

inline json hyper_to_json(const trainers::HyperConfig& h) {
  return json{{"lambda", h.lambda},
              {"memory_fraction", h.memory_fraction},
              {"pruning_ratio", h.pruning_ratio},
              {"groupdro_lr", h.groupdro_lr},
              {"distill_temperature", h.distill_temperature},
              {"epochs", h.epochs},
              {"batch_size", h.batch_size},
              {"hidden", h.hidden},
              {"learning_rate", h.optimizer.learning_rate},
              {"weight_decay", h.optimizer.weight_decay},
              {"beta1", h.optimizer.beta1},
              {"beta2", h.optimizer.beta2},
              {"epsilon", h.optimizer.epsilon}};
}

inline RunConfig run_config_from_json(const json& j) {
  RunConfig cfg;
  if (j.contains("scenario")) cfg.scenario = scenario_from_json(j.at("scenario"));
  if (j.contains("method")) cfg.method = trainers::parse_method(j.at("method").get<std::string>());
  if (j.contains("hyper")) cfg.hyper = hyper_from_json(j.at("hyper"));
  if (j.contains("metrics")) {
    const json& m = j.at("metrics");
    cfg.metrics.intransigence = m.value("intransigence", cfg.metrics.intransigence);
    cfg.metrics.cka = m.value("cka", cfg.metrics.cka);
    cfg.metrics.breakdown = m.value("breakdown", cfg.metrics.breakdown);
  }
  if (j.contains("seeds")) cfg.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
  cfg.output = j.value("output", cfg.output);
  cfg.groupdro = j.value("groupdro", cfg.groupdro);
  if (j.contains("bgs")) {
    cfg.bgs.enabled = j.at("bgs").value("enabled", true);
    cfg.bgs.capacity = j.at("bgs").value("capacity", cfg.bgs.capacity);
  }
  cfg.validate();
  return cfg;
}

inline json run_config_to_json(const RunConfig& cfg) {
  return json{{"scenario", scenario_to_json(cfg.scenario)},
              {"method", trainers::method_name(cfg.method)},
              {"hyper", hyper_to_json(cfg.hyper)},
              {"metrics",
               {{"intransigence", cfg.metrics.intransigence},
                {"cka", cfg.metrics.cka},
                {"breakdown", cfg.metrics.breakdown}}},
              {"seeds", cfg.seeds},
              {"output", cfg.output},
              {"groupdro", cfg.groupdro},
              {"bgs", {{"enabled", cfg.bgs.enabled}, {"capacity", cfg.bgs.capacity}}}};
}

}  // namespace clbias::runner
