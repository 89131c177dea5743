#pragma once

#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

#include <json.hpp>

#include "clbias/data/stream.hpp"
#include "clbias/memory/exemplar.hpp"

namespace clbias::data {

using nlohmann::json;

inline json geometry_to_json(const StreamGeometry& g) {
  return json{{"core_dim", g.core_dim},
              {"spurious_dim", g.spurious_dim},
              {"attributes", g.attributes},
              {"watermark", g.watermark},
              {"spurious_strength", g.spurious_strength},
              {"core_noise", g.core_noise},
              {"prototype_scale", g.prototype_scale},
              {"prototype_seed", g.prototype_seed}};
}

inline StreamGeometry geometry_from_json(const json& j) {
  StreamGeometry g;
  g.core_dim = j.value("core_dim", g.core_dim);
  g.spurious_dim = j.value("spurious_dim", g.spurious_dim);
  g.attributes = j.value("attributes", g.attributes);
  g.watermark = j.value("watermark", g.watermark);
  g.spurious_strength = j.value("spurious_strength", g.spurious_strength);
  g.core_noise = j.value("core_noise", g.core_noise);
  g.prototype_scale = j.value("prototype_scale", g.prototype_scale);
  g.prototype_seed = j.value("prototype_seed", g.prototype_seed);
  return g;
}

inline json spec_to_json(const TaskSpec& s) {
  return json{{"scenario", regime_name(s.scenario)},
              {"classes", s.classes},
              {"bias_level", s.bias_level},
              {"n_train", s.n_train},
              {"n_test", s.n_test},
              {"has_bias_class", s.has_bias_class},
              {"bias_class", s.bias_class},
              {"seed", s.seed}};
}

inline TaskSpec spec_from_json(const json& j) {
  TaskSpec s;
  s.scenario = parse_regime(j.at("scenario").get<std::string>());
  s.classes = j.at("classes").get<std::vector<int>>();
  s.bias_level = j.at("bias_level").get<std::vector<int>>();
  s.n_train = j.at("n_train").get<int>();
  s.n_test = j.at("n_test").get<int>();
  s.has_bias_class = j.at("has_bias_class").get<bool>();
  s.bias_class = j.at("bias_class").get<int>();
  s.seed = j.at("seed").get<std::uint64_t>();
  return s;
}

inline json sample_record(const char* split, const BiasedSample& s) {
  std::vector<double> feats(s.features.data(), s.features.data() + s.features.size());
  return json{{"split", split},
              {"task", s.task},
              {"class", s.cls},
              {"group", s.group},
              {"features", feats}};
}

inline BiasedSample sample_from_record(const json& j) {
  BiasedSample s;
  const auto feats = j.at("features").get<std::vector<double>>();
  s.features = Eigen::Map<const Eigen::VectorXd>(feats.data(), static_cast<long>(feats.size()));
  s.task = j.at("task").get<int>();
  s.cls = j.at("class").get<int>();
  s.group = j.at("group").get<int>();
  return s;
}

// Line-delimited stream file: a leading meta record followed by one record
// per sample with fields {split, task, class, group, features}. Test samples
// are immediately followed by their bias-flipped counterpart (split
// "test_flip").
inline void export_stream(const TaskStream& stream, std::ostream& out) {
  json meta{{"record", "stream-meta"},
            {"geometry", geometry_to_json(stream.geometry)},
            {"attribute_values", stream.attribute_values},
            {"specs", json::array()}};
  for (const auto& spec : stream.specs) meta["specs"].push_back(spec_to_json(spec));
  out << meta.dump() << '\n';
  for (int t = 0; t < stream.task_count(); ++t) {
    for (const auto& s : stream.train[t]) out << sample_record("train", s).dump() << '\n';
    for (const auto& [orig, flip] : stream.test[t]) {
      out << sample_record("test", orig).dump() << '\n';
      out << sample_record("test_flip", flip).dump() << '\n';
    }
  }
}

inline void export_stream(const TaskStream& stream, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("export_stream: cannot open " + path);
  export_stream(stream, out);
}

inline TaskStream import_stream(std::istream& in) {
  std::string line;
  if (!std::getline(in, line)) throw std::runtime_error("import_stream: empty file");
  const json meta = json::parse(line);
  if (meta.value("record", "") != "stream-meta")
    throw std::runtime_error("import_stream: missing stream-meta record");
  TaskStream stream;
  stream.geometry = geometry_from_json(meta.at("geometry"));
  stream.attribute_values = meta.at("attribute_values").get<int>();
  for (const auto& j : meta.at("specs")) stream.specs.push_back(spec_from_json(j));
  stream.train.resize(stream.specs.size());
  stream.test.resize(stream.specs.size());

  bool expect_flip = false;
  BiasedSample pending;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    const std::string split = j.at("split").get<std::string>();
    BiasedSample s = sample_from_record(j);
    if (s.task < 0 || s.task >= stream.task_count())
      throw std::runtime_error("import_stream: record with unknown task");
    if (expect_flip) {
      if (split != "test_flip")
        throw std::runtime_error("import_stream: test record without its flipped pair");
      stream.test[static_cast<std::size_t>(pending.task)].emplace_back(pending, std::move(s));
      expect_flip = false;
      continue;
    }
    if (split == "train") {
      stream.train[static_cast<std::size_t>(s.task)].push_back(std::move(s));
    } else if (split == "test") {
      pending = std::move(s);
      expect_flip = true;
    } else {
      throw std::runtime_error("import_stream: unexpected split '" + split + "'");
    }
  }
  if (expect_flip) throw std::runtime_error("import_stream: dangling test record");
  return stream;
}

inline TaskStream import_stream(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("import_stream: cannot open " + path);
  return import_stream(in);
}

// Memory snapshot in the same record format (split "memory").
inline void export_memory(const memory::ExemplarMemory& mem, std::ostream& out) {
  for (const auto& s : mem.snapshot()) out << sample_record("memory", s).dump() << '\n';
}

inline void export_memory(const memory::ExemplarMemory& mem, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("export_memory: cannot open " + path);
  export_memory(mem, out);
}

}  // namespace clbias::data
