#pragma once

#include <algorithm>
#include <stdexcept>
#include <string>
#include <vector>

#include "clbias/data/stream.hpp"
#include "clbias/nn/mlp.hpp"

namespace clbias {

inline nn::HeadMode head_mode_for(data::Regime regime) {
  return regime == data::Regime::kTaskIl ? nn::HeadMode::kMulti : nn::HeadMode::kSingle;
}

// Translates (task, global class id) into (head index, logit row) for the
// active head mode. Multi-head: one head per task over that task's classes.
// Single-head: one head whose rows are the classes in order of first
// appearance (class-IL growth keeps old rows in place).
struct HeadLayout {
  nn::HeadMode mode = nn::HeadMode::kMulti;
  std::vector<std::vector<int>> task_classes;
  std::vector<int> single_rows;

  int tasks_seen() const { return static_cast<int>(task_classes.size()); }

  void add_task(const std::vector<int>& classes) {
    task_classes.push_back(classes);
    if (mode == nn::HeadMode::kSingle) {
      for (int c : classes)
        if (std::find(single_rows.begin(), single_rows.end(), c) == single_rows.end())
          single_rows.push_back(c);
    }
  }

  int head_for_task(int task) const {
    check_task(task);
    return mode == nn::HeadMode::kMulti ? task : 0;
  }

  // number of logits the head serving `task` must provide
  int head_width(int task) const {
    check_task(task);
    return mode == nn::HeadMode::kMulti ? static_cast<int>(task_classes[task].size())
                                        : static_cast<int>(single_rows.size());
  }

  int local_label(int task, int cls) const {
    check_task(task);
    const auto& rows = (mode == nn::HeadMode::kMulti) ? task_classes[task] : single_rows;
    const auto it = std::find(rows.begin(), rows.end(), cls);
    if (it == rows.end())
      throw std::invalid_argument("HeadLayout: class " + std::to_string(cls) +
                                  " unknown for task " + std::to_string(task));
    return static_cast<int>(it - rows.begin());
  }

  int global_label(int task, int row) const {
    check_task(task);
    const auto& rows = (mode == nn::HeadMode::kMulti) ? task_classes[task] : single_rows;
    if (row < 0 || row >= static_cast<int>(rows.size()))
      throw std::out_of_range("HeadLayout: row out of range");
    return rows[row];
  }

 private:
  void check_task(int task) const {
    if (task < 0 || task >= tasks_seen())
      throw std::out_of_range("HeadLayout: unknown task " + std::to_string(task));
  }
};

inline HeadLayout make_layout(const data::TaskStream& stream, int tasks_seen) {
  HeadLayout layout;
  layout.mode = head_mode_for(stream.specs.at(0).scenario);
  for (int t = 0; t < tasks_seen; ++t) layout.add_task(stream.specs.at(t).classes);
  return layout;
}

// Stacks samples into an evaluation batch (global class labels).
inline nn::Batch to_batch(const std::vector<data::BiasedSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("to_batch: empty sample list");
  nn::Batch batch;
  const auto d = samples.front().features.size();
  batch.inputs.resize(static_cast<long>(samples.size()), d);
  batch.class_labels.reserve(samples.size());
  batch.group_labels.reserve(samples.size());
  batch.task_ids.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].features.size() != d)
      throw std::invalid_argument("to_batch: inconsistent feature dims");
    batch.inputs.row(static_cast<long>(i)) = samples[i].features.transpose();
    batch.class_labels.push_back(samples[i].cls);
    batch.group_labels.push_back(samples[i].group);
    batch.task_ids.push_back(samples[i].task);
  }
  return batch;
}

}  // namespace clbias
