#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "clbias/rng.hpp"

namespace clbias::data {

enum class Regime { kTaskIl, kDomainIl, kClassIl };

inline std::string regime_name(Regime r) {
  switch (r) {
    case Regime::kTaskIl: return "task-il";
    case Regime::kDomainIl: return "domain-il";
    case Regime::kClassIl: return "class-il";
  }
  return "?";
}

inline Regime parse_regime(const std::string& s) {
  if (s == "task-il") return Regime::kTaskIl;
  if (s == "domain-il") return Regime::kDomainIl;
  if (s == "class-il") return Regime::kClassIl;
  throw std::invalid_argument("unknown regime: " + s);
}

// One instance: core features plus per-attribute spurious block (and an
// optional watermark indicator coordinate). `group` packs one bit per
// attribute.
struct BiasedSample {
  Eigen::VectorXd features;
  int group = 0;
  int cls = 0;
  int task = 0;

  int attribute_bit(int attr) const { return (group >> attr) & 1; }
};

// Feature-space layout shared by every task of a stream:
//
//   [ core (core_dim) | spurious attr 0 | spurious attr 1 | ... | watermark ]
//
// The spurious block of attribute k is +/- strength * u_k where u_k is the
// normalized all-ones direction on that block; the sign encodes the group
// bit. In watermark streams the group label is instead the presence of the
// indicator coordinate (the carton-class analogue) and the spurious blocks
// stay zero.
struct StreamGeometry {
  int core_dim = 16;
  int spurious_dim = 4;
  int attributes = 1;
  bool watermark = false;
  double spurious_strength = 0.5;
  double core_noise = 0.75;
  double prototype_scale = 1.0;
  std::uint64_t prototype_seed = 0;  // stream-level, keeps classes stable across tasks

  int dim() const { return core_dim + spurious_dim * attributes + (watermark ? 1 : 0); }
  int spurious_offset(int attr) const {
    if (attr < 0 || attr >= attributes)
      throw std::out_of_range("StreamGeometry: unknown attribute");
    return core_dim + attr * spurious_dim;
  }
  int watermark_index() const {
    if (!watermark) throw std::logic_error("StreamGeometry: no watermark coordinate");
    return dim() - 1;
  }

  void validate() const {
    if (core_dim < 1 || spurious_dim < 1) throw std::invalid_argument("geometry: bad dims");
    if (attributes < 1 || attributes > 2)
      throw std::invalid_argument("geometry: 1 or 2 attributes supported");
  }
};

struct TaskSpec {
  Regime scenario = Regime::kTaskIl;
  std::vector<int> classes;        // ordered global class ids
  std::vector<int> bias_level;     // one entry per attribute, each in 0..6
  int n_train = 100;               // per class
  int n_test = 100;                // per class
  bool has_bias_class = false;     // watermark analogue (carton class)
  int bias_class = -1;             // designated class id when has_bias_class
  std::uint64_t seed = 0;
};

struct TaskStream {
  StreamGeometry geometry;
  int attribute_values = 2;  // |A| per attribute (binary groups only)
  std::vector<TaskSpec> specs;
  std::vector<std::vector<BiasedSample>> train;
  // test sample paired with its bias-flipped counterpart (attribute 0)
  std::vector<std::vector<std::pair<BiasedSample, BiasedSample>>> test;

  int task_count() const { return static_cast<int>(specs.size()); }
};

// Skew ratio for a bias level: the minority-group fraction 1 - alpha
// interpolates geometrically from 0.5 (level 0) to 0.01 (level 6).
inline double skew_ratio(int level) {
  if (level < 0 || level > 6) throw std::invalid_argument("skew_ratio: level must be in 0..6");
  return 1.0 - 0.5 * std::pow(0.02, static_cast<double>(level) / 6.0);
}

// Fixed unit direction of a spurious block (normalized all-ones).
inline Eigen::VectorXd spurious_direction(const StreamGeometry& g) {
  return Eigen::VectorXd::Constant(
      g.spurious_dim, 1.0 / std::sqrt(static_cast<double>(g.spurious_dim)));
}

// Replaces the spurious component by the opposite group's (or toggles the
// watermark indicator); core coordinates, class and task are untouched.
inline BiasedSample bias_flip(const BiasedSample& sample, const StreamGeometry& geometry,
                              int attribute_values, int attr = 0) {
  if (attribute_values != 2)
    throw std::invalid_argument("bias_flip: only binary groups supported");
  BiasedSample out = sample;
  if (geometry.watermark) {
    const int w = geometry.watermark_index();
    out.features[w] = (sample.features[w] == 0.0) ? geometry.spurious_strength : 0.0;
    out.group = sample.group ^ 1;
    return out;
  }
  const int off = geometry.spurious_offset(attr);
  out.features.segment(off, geometry.spurious_dim) =
      -sample.features.segment(off, geometry.spurious_dim);
  out.group = sample.group ^ (1 << attr);
  return out;
}

namespace detail {

// Seeded orthogonal rotation of the core block (QR of a Gaussian matrix with
// the sign convention fixed for determinism).
inline Eigen::MatrixXd random_rotation(int dim, Rng& rng) {
  Eigen::MatrixXd a(dim, dim);
  for (int r = 0; r < dim; ++r)
    for (int c = 0; c < dim; ++c) a(r, c) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ();
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (int i = 0; i < dim; ++i)
    if (r(i, i) < 0.0) q.col(i) = -q.col(i);
  return q;
}

inline Eigen::VectorXd class_prototype(const StreamGeometry& g, int cls) {
  Rng rng(substream(g.prototype_seed, "prototype", static_cast<std::uint64_t>(cls)));
  Eigen::VectorXd p(g.core_dim);
  for (int i = 0; i < g.core_dim; ++i) p[i] = rng.normal();
  p.normalize();
  return p * g.prototype_scale;
}

}  // namespace detail

// Builds one sample. `group_code` holds the attribute bits; `watermarked`
// only applies in watermark streams (where it defines the group label).
inline BiasedSample make_sample(const StreamGeometry& g, const Eigen::MatrixXd& rotation,
                                int cls, int task, int group_code, bool watermarked,
                                Rng& noise_rng) {
  BiasedSample s;
  s.cls = cls;
  s.task = task;
  s.group = group_code;
  s.features = Eigen::VectorXd::Zero(g.dim());
  Eigen::VectorXd core = detail::class_prototype(g, cls);
  if (rotation.size() > 0) core = rotation * core;
  for (int i = 0; i < g.core_dim; ++i)
    s.features[i] = core[i] + g.core_noise * noise_rng.normal();
  if (g.watermark) {
    s.features[g.watermark_index()] = watermarked ? g.spurious_strength : 0.0;
    s.group = watermarked ? 1 : 0;
  } else {
    const Eigen::VectorXd u = spurious_direction(g);
    for (int attr = 0; attr < g.attributes; ++attr) {
      const double sign = (((group_code >> attr) & 1) == 0) ? 1.0 : -1.0;
      s.features.segment(g.spurious_offset(attr), g.spurious_dim) =
          sign * g.spurious_strength * u;
    }
  }
  return s;
}

struct GeneratedTask {
  std::vector<BiasedSample> train;
  std::vector<std::pair<BiasedSample, BiasedSample>> test;
};

// Generates one task. Training groups are skewed per class by the skew ratio
// of the task's bias level (half the classes toward each group, as in Split
// CIFAR-100S); the test set is group-balanced and paired with bias-flipped
// copies. In watermark streams the designated bias class carries the
// indicator in an alpha fraction of its training samples instead.
inline GeneratedTask generate_task(const TaskSpec& spec, const StreamGeometry& geometry,
                                   int attribute_values, int task_index) {
  geometry.validate();
  if (attribute_values != 2)
    throw std::invalid_argument("generate_task: only binary groups supported");
  if (spec.classes.empty()) throw std::invalid_argument("generate_task: no classes");
  if (static_cast<int>(spec.bias_level.size()) != geometry.attributes)
    throw std::invalid_argument("generate_task: one bias level per attribute required");
  for (int lvl : spec.bias_level)
    if (lvl < 0 || lvl > 6)
      throw std::invalid_argument("generate_task: bias level out of range");
  if (spec.n_train < attribute_values || spec.n_test < attribute_values)
    throw std::invalid_argument("generate_task: n_train/n_test must be >= |A|");
  const bool skewed =
      std::any_of(spec.bias_level.begin(), spec.bias_level.end(), [](int l) { return l > 0; });
  if (!geometry.watermark && skewed && spec.classes.size() % 2 != 0)
    throw std::invalid_argument(
        "generate_task: skewed task needs an even class count to split halves");

  Eigen::MatrixXd rotation;  // empty = identity
  if (spec.scenario == Regime::kDomainIl) {
    Rng rot_rng(substream(spec.seed, "rotation"));
    rotation = detail::random_rotation(geometry.core_dim, rot_rng);
  }

  GeneratedTask out;
  Rng train_rng(substream(spec.seed, "train-noise"));
  Rng test_rng(substream(spec.seed, "test-noise"));

  const int half = static_cast<int>(spec.classes.size()) / 2;
  for (std::size_t ci = 0; ci < spec.classes.size(); ++ci) {
    const int cls = spec.classes[ci];
    if (geometry.watermark) {
      const bool is_bias_class = spec.has_bias_class && cls == spec.bias_class;
      const double alpha = skew_ratio(spec.bias_level[0]);
      const int n_marked =
          is_bias_class ? static_cast<int>(std::lround(alpha * spec.n_train)) : 0;
      for (int i = 0; i < spec.n_train; ++i) {
        out.train.push_back(
            make_sample(geometry, rotation, cls, task_index, 0, i < n_marked, train_rng));
      }
      for (int i = 0; i < spec.n_test; ++i) {
        BiasedSample original =
            make_sample(geometry, rotation, cls, task_index, 0, false, test_rng);
        BiasedSample flipped = bias_flip(original, geometry, attribute_values);
        out.test.emplace_back(std::move(original), std::move(flipped));
      }
      continue;
    }

    // Majority group per attribute: first half of the class list skews to
    // group 0, the second half to group 1.
    const int majority_bit = (static_cast<int>(ci) < half) ? 0 : 1;
    std::vector<int> bits_per_attr[2];
    for (int attr = 0; attr < geometry.attributes; ++attr) {
      const double alpha = skew_ratio(spec.bias_level[attr]);
      const int n_major = static_cast<int>(std::lround(alpha * spec.n_train));
      std::vector<int> bits(spec.n_train, majority_bit);
      for (int i = n_major; i < spec.n_train; ++i) bits[i] = majority_bit ^ 1;
      // decorrelate attribute assignments while keeping exact marginals
      Rng perm_rng(substream(spec.seed, "group-perm", static_cast<std::uint64_t>(cls),
                             static_cast<std::uint64_t>(attr)));
      perm_rng.shuffle(bits);
      bits_per_attr[attr] = std::move(bits);
    }
    for (int i = 0; i < spec.n_train; ++i) {
      int code = 0;
      for (int attr = 0; attr < geometry.attributes; ++attr)
        code |= bits_per_attr[attr][i] << attr;
      out.train.push_back(
          make_sample(geometry, rotation, cls, task_index, code, false, train_rng));
    }
    // group-balanced test set: equal count per attribute-bit combination
    const int cells = 1 << geometry.attributes;
    const int per_cell = spec.n_test / cells;
    if (per_cell * cells != spec.n_test)
      throw std::invalid_argument("generate_task: n_test must divide evenly into group cells");
    for (int code = 0; code < cells; ++code) {
      for (int i = 0; i < per_cell; ++i) {
        BiasedSample original =
            make_sample(geometry, rotation, cls, task_index, code, false, test_rng);
        BiasedSample flipped = bias_flip(original, geometry, attribute_values);
        out.test.emplace_back(std::move(original), std::move(flipped));
      }
    }
  }
  return out;
}

}  // namespace clbias::data
