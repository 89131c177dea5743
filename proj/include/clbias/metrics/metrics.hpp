#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <map>
#include <optional>
#include <set>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "clbias/layout.hpp"
#include "clbias/nn/mlp.hpp"

namespace clbias::metrics {

using data::BiasedSample;
using nn::MlpModel;

// Lower-triangular accuracies: rows[l][j] is the accuracy on task j of the
// model after learning task l (0-based, j <= l). `reference_diag` carries the
// paired fine-tuning run's A*[j][j].
struct AccuracyMatrix {
  std::vector<std::vector<double>> rows;
  std::vector<double> reference_diag;

  int tasks() const { return static_cast<int>(rows.size()); }

  double at(int l, int j) const {
    if (l < 0 || l >= tasks() || j < 0 || j > l)
      throw std::out_of_range("AccuracyMatrix: index outside lower triangle");
    return rows[static_cast<std::size_t>(l)][static_cast<std::size_t>(j)];
  }
};

// Predicted global class ids. Task-IL restricts the argmax to the task's
// head; single-head modes take the argmax over every class seen (first index
// wins ties).
inline std::vector<int> predict(const MlpModel& model, const HeadLayout& layout,
                                const std::vector<BiasedSample>& samples, int task) {
  if (samples.empty()) throw std::invalid_argument("predict: empty dataset");
  const nn::Batch batch = to_batch(samples);
  const int head = layout.head_for_task(task);
  const Eigen::MatrixXd logits = nn::forward(model, batch.inputs, head);
  std::vector<int> out;
  out.reserve(samples.size());
  for (long i = 0; i < logits.rows(); ++i) {
    int best = 0;
    for (int j = 1; j < logits.cols(); ++j)
      if (logits(i, j) > logits(i, best)) best = j;
    out.push_back(layout.global_label(task, best));
  }
  return out;
}

// Fraction of argmax-correct predictions.
inline double accuracy(const MlpModel& model, const HeadLayout& layout,
                       const std::vector<BiasedSample>& samples, int task) {
  const std::vector<int> preds = predict(model, layout, samples, task);
  int correct = 0;
  for (std::size_t i = 0; i < samples.size(); ++i)
    if (preds[i] == samples[i].cls) ++correct;
  return static_cast<double>(correct) / static_cast<double>(samples.size());
}

// Eq.-style forgetting after learning `t` tasks (t >= 2, 1-based count):
// mean over old tasks of (best earlier accuracy - final accuracy).
inline double forgetting(const AccuracyMatrix& a, int t) {
  if (t < 2) throw std::invalid_argument("forgetting: needs at least two tasks");
  if (a.tasks() < t) throw std::invalid_argument("forgetting: matrix too small");
  double sum = 0.0;
  for (int j = 0; j < t - 1; ++j) {
    double best = a.at(j, j);
    for (int l = j; l <= t - 2; ++l) best = std::max(best, a.at(l, j));
    sum += best - a.at(t - 1, j);
  }
  return sum / static_cast<double>(t - 1);
}

// Accuracy sacrificed relative to the paired fine-tuning reference diagonal.
inline double intransigence(const AccuracyMatrix& a, int t) {
  if (t < 1) throw std::invalid_argument("intransigence: needs at least one task");
  if (a.tasks() < t || static_cast<int>(a.reference_diag.size()) < t)
    throw std::invalid_argument("intransigence: missing reference diagonal");
  double sum = 0.0;
  for (int j = 0; j < t; ++j) sum += a.reference_diag[static_cast<std::size_t>(j)] - a.at(j, j);
  return sum / static_cast<double>(t);
}

struct NormalizedFi {
  std::vector<double> values;
  bool degenerate = false;  // all inputs equal; values pinned to 0.5
};

// Min-max normalization of F - I values across a hyperparameter sweep.
inline NormalizedFi normalize_fi(const std::vector<double>& values) {
  if (values.size() < 2) throw std::invalid_argument("normalize_fi: need >= 2 values");
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  NormalizedFi out;
  out.values.reserve(values.size());
  if (lo == hi) {
    out.degenerate = true;
    out.values.assign(values.size(), 0.5);
    return out;
  }
  for (double v : values) out.values.push_back((v - lo) / (hi - lo));
  return out;
}

// Bias-flipped misclassification rate over a paired test set: among samples
// the model classifies correctly, the fraction whose flipped counterpart is
// misclassified. Undefined (absent) when nothing is classified correctly.
inline std::optional<double> bmr(const MlpModel& model, const HeadLayout& layout,
                                 const std::vector<std::pair<BiasedSample, BiasedSample>>& pairs,
                                 int task) {
  if (pairs.empty()) throw std::invalid_argument("bmr: empty paired test set");
  std::vector<BiasedSample> originals, flipped;
  originals.reserve(pairs.size());
  flipped.reserve(pairs.size());
  for (const auto& [o, f] : pairs) {
    originals.push_back(o);
    flipped.push_back(f);
  }
  const std::vector<int> pred_o = predict(model, layout, originals, task);
  const std::vector<int> pred_f = predict(model, layout, flipped, task);
  long correct = 0, flipped_wrong = 0;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pred_o[i] != originals[i].cls) continue;
    ++correct;
    if (pred_f[i] != originals[i].cls) ++flipped_wrong;
  }
  if (correct == 0) return std::nullopt;
  return static_cast<double>(flipped_wrong) / static_cast<double>(correct);
}

// Difference of classwise accuracy: mean over classes of the largest
// per-class accuracy gap between groups of one attribute.
inline double dca(const MlpModel& model, const HeadLayout& layout,
                  const std::vector<BiasedSample>& samples, int task, int attr = 0) {
  if (samples.empty()) throw std::invalid_argument("dca: empty dataset");
  const std::vector<int> preds = predict(model, layout, samples, task);
  std::map<std::pair<int, int>, std::pair<long, long>> cells;  // (cls, bit) -> (correct, total)
  std::set<int> classes;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    const int bit = samples[i].attribute_bit(attr);
    auto& cell = cells[{samples[i].cls, bit}];
    cell.second += 1;
    if (preds[i] == samples[i].cls) cell.first += 1;
    classes.insert(samples[i].cls);
  }
  double sum = 0.0;
  for (int cls : classes) {
    double acc[2];
    for (int bit = 0; bit < 2; ++bit) {
      const auto it = cells.find({cls, bit});
      if (it == cells.end() || it->second.second == 0)
        throw std::invalid_argument("dca: empty (class " + std::to_string(cls) + ", group " +
                                    std::to_string(bit) + ") cell");
      acc[bit] = static_cast<double>(it->second.first) /
                 static_cast<double>(it->second.second);
    }
    sum += std::abs(acc[0] - acc[1]);
  }
  return sum / static_cast<double>(classes.size());
}

// Appendix-style breakdown of bias-flipped misclassifications into old /
// new / bias-class predictions. `old_classes` and `new_classes` together
// with `bias_class` must cover every class the head can emit.
struct ClassPartition {
  std::set<int> old_classes;
  std::set<int> new_classes;
  int bias_class = -1;
};

struct MisclassBreakdown {
  long correct = 0;
  long to_old = 0;
  long to_new = 0;
  long to_bias = 0;

  double old_rate() const { return correct ? static_cast<double>(to_old) / correct : 0.0; }
  double new_rate() const { return correct ? static_cast<double>(to_new) / correct : 0.0; }
  double bias_rate() const { return correct ? static_cast<double>(to_bias) / correct : 0.0; }
  std::optional<double> total() const {
    if (correct == 0) return std::nullopt;
    return static_cast<double>(to_old + to_new + to_bias) / static_cast<double>(correct);
  }
};

inline MisclassBreakdown misclass_breakdown(
    const MlpModel& model, const HeadLayout& layout,
    const std::vector<std::pair<BiasedSample, BiasedSample>>& pairs, int task,
    const ClassPartition& partition) {
  if (layout.mode != nn::HeadMode::kSingle)
    throw std::invalid_argument("misclass_breakdown: class-IL (single head) only");
  // the partition must cover the prediction space
  for (int cls : layout.single_rows) {
    const bool in_old = partition.old_classes.count(cls) > 0;
    const bool in_new = partition.new_classes.count(cls) > 0;
    const bool is_bias = cls == partition.bias_class;
    if (static_cast<int>(in_old) + static_cast<int>(in_new) + static_cast<int>(is_bias) != 1)
      throw std::invalid_argument("misclass_breakdown: partition does not cover class " +
                                  std::to_string(cls));
  }
  std::vector<BiasedSample> originals, flipped;
  for (const auto& [o, f] : pairs) {
    originals.push_back(o);
    flipped.push_back(f);
  }
  const std::vector<int> pred_o = predict(model, layout, originals, task);
  const std::vector<int> pred_f = predict(model, layout, flipped, task);
  MisclassBreakdown out;
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    if (pred_o[i] != originals[i].cls) continue;
    out.correct += 1;
    const int p = pred_f[i];
    if (p == originals[i].cls) continue;
    if (p == partition.bias_class)
      out.to_bias += 1;
    else if (partition.old_classes.count(p) > 0)
      out.to_old += 1;
    else
      out.to_new += 1;
  }
  return out;
}

}  // namespace clbias::metrics
