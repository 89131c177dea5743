#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <memory>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "clbias/data/scenario.hpp"
#include "clbias/data/stream.hpp"
#include "clbias/layout.hpp"
#include "clbias/memory/exemplar.hpp"
#include "clbias/nn/mlp.hpp"
#include "clbias/nn/optim.hpp"
#include "clbias/trainers/objectives.hpp"

namespace clbias::trainers {

using data::BiasedSample;
using data::Regime;
using data::TaskStream;
using nn::AdamWState;
using nn::DenseLayer;

enum class MethodId { kFineTuning, kFreezing, kEwc, kLwf, kEr, kPackNet, kGdumb };

inline MethodId parse_method(const std::string& s) {
  if (s == "finetune" || s == "fine-tuning") return MethodId::kFineTuning;
  if (s == "freezing" || s == "model-freezing") return MethodId::kFreezing;
  if (s == "ewc") return MethodId::kEwc;
  if (s == "lwf") return MethodId::kLwf;
  if (s == "er") return MethodId::kEr;
  if (s == "packnet") return MethodId::kPackNet;
  if (s == "gdumb") return MethodId::kGdumb;
  throw std::invalid_argument("unknown method: " + s);
}

inline std::string method_name(MethodId m) {
  switch (m) {
    case MethodId::kFineTuning: return "finetune";
    case MethodId::kFreezing: return "freezing";
    case MethodId::kEwc: return "ewc";
    case MethodId::kLwf: return "lwf";
    case MethodId::kEr: return "er";
    case MethodId::kPackNet: return "packnet";
    case MethodId::kGdumb: return "gdumb";
  }
  return "?";
}

struct HyperConfig {
  double lambda = 1.0;            // EWC / LWF regularization strength
  double memory_fraction = 0.1;   // ER / GDumb memory as fraction of one task
  double pruning_ratio = 0.5;     // PackNet
  double groupdro_lr = 0.01;      // eta, learning rate of q
  double distill_temperature = 2.0;
  int epochs = 30;
  int batch_size = 32;
  std::vector<int> hidden = {64, 64};
  nn::AdamWHyper optimizer;
};

// Paper search ranges; enforced when sweeping a hyperparameter.
inline std::pair<double, double> sweep_range(MethodId m) {
  switch (m) {
    case MethodId::kEwc: return {1e0, 1e9};
    case MethodId::kLwf: return {1e-2, 3e2};
    case MethodId::kEr: return {1e-3, 1e0};
    case MethodId::kGdumb: return {1e-3, 1e0};
    case MethodId::kPackNet: return {1e-1, 8e-1};
    default: throw std::invalid_argument("no sweep range for " + method_name(m));
  }
}

inline std::pair<double, double> groupdro_lr_range() { return {1e-8, 1e2}; }

// PackNet ownership masks over trunk entries: 0 = free, k = owned by task k
// (1-based).
struct IntLayer {
  Eigen::MatrixXi W;
  Eigen::VectorXi b;
};
using MaskSet = std::vector<IntLayer>;

inline MaskSet zero_masks_like(const std::vector<DenseLayer>& trunk) {
  MaskSet masks;
  masks.reserve(trunk.size());
  for (const auto& layer : trunk)
    masks.push_back({Eigen::MatrixXi::Zero(layer.W.rows(), layer.W.cols()),
                     Eigen::VectorXi::Zero(layer.b.size())});
  return masks;
}

// Assigns the largest-magnitude fraction `ratio` of each layer's free
// entries (W and b pooled) to `owner`. Entries owned by earlier tasks are
// untouched; the rest stay free.
inline MaskSet packnet_prune(const std::vector<DenseLayer>& trunk, MaskSet mask, int owner,
                             double ratio) {
  if (owner < 1) throw std::invalid_argument("packnet_prune: owner must be >= 1");
  if (ratio < 0.0 || ratio > 1.0) throw std::invalid_argument("packnet_prune: bad ratio");
  if (mask.size() != trunk.size())
    throw std::invalid_argument("packnet_prune: mask layout mismatch");
  for (std::size_t i = 0; i < trunk.size(); ++i) {
    const auto& layer = trunk[i];
    auto& m = mask[i];
    if (m.W.rows() != layer.W.rows() || m.W.cols() != layer.W.cols() ||
        m.b.size() != layer.b.size())
      throw std::invalid_argument("packnet_prune: mask shape mismatch");
    // (|value|, linear index) over free entries; index: W first, then b
    std::vector<std::pair<double, long>> free_entries;
    const long wsize = layer.W.size();
    for (long k = 0; k < wsize; ++k)
      if (m.W(k) == 0) free_entries.emplace_back(std::abs(layer.W(k)), k);
    for (long k = 0; k < layer.b.size(); ++k)
      if (m.b(k) == 0) free_entries.emplace_back(std::abs(layer.b(k)), wsize + k);
    if (free_entries.empty())
      throw std::runtime_error("packnet_prune: no free weights remaining in layer " +
                               std::to_string(i));
    const long keep = std::lround(ratio * static_cast<double>(free_entries.size()));
    std::sort(free_entries.begin(), free_entries.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    for (long j = 0; j < keep; ++j) {
      const long k = free_entries[static_cast<std::size_t>(j)].second;
      if (k < wsize)
        m.W(k) = owner;
      else
        m.b(k - wsize) = owner;
    }
  }
  return mask;
}

struct EwcAux {
  MlpModel anchors;
  GradSet fisher;
  bool valid = false;
};

struct BgsConfig {
  bool enabled = false;
  int capacity = 80;
};

struct TrainerState {
  MlpModel model;
  MethodId method = MethodId::kFineTuning;
  HyperConfig hyper;
  bool groupdro = false;
  Regime regime = Regime::kTaskIl;
  int attribute_values = 2;
  HeadLayout layout;
  std::uint64_t seed = 0;
  int tasks_trained = 0;
  long stream_position = 0;  // reservoir position across tasks

  EwcAux ewc;
  std::shared_ptr<const MlpModel> lwf_snapshot;
  std::optional<memory::ExemplarMemory> memory;      // ER / GDumb
  std::optional<memory::ExemplarMemory> bgs_memory;  // plug-in
  MaskSet packnet_mask;
  Eigen::VectorXd dro_q;
};

inline TrainerState init_trainer(const TaskStream& stream, MethodId method,
                                 const HyperConfig& hyper, bool groupdro,
                                 const BgsConfig& bgs, std::uint64_t seed) {
  if (stream.task_count() == 0) throw std::invalid_argument("init_trainer: empty stream");
  TrainerState st;
  st.method = method;
  st.hyper = hyper;
  st.groupdro = groupdro;
  st.regime = stream.specs[0].scenario;
  st.attribute_values = stream.attribute_values;
  st.layout.mode = head_mode_for(st.regime);
  st.seed = seed;
  if (method == MethodId::kPackNet && st.regime != Regime::kTaskIl)
    throw std::invalid_argument("PackNet is designed only for task-IL scenarios");
  if (groupdro && (method == MethodId::kEr || method == MethodId::kPackNet ||
                   method == MethodId::kGdumb))
    throw std::invalid_argument("Group DRO wrapper supports fine-tuning, freezing, EWC, LWF");
  Rng init_rng(substream(seed, "init"));
  st.model = nn::make_mlp(stream.geometry.dim(), hyper.hidden, st.layout.mode, init_rng);
  if (method == MethodId::kEr || method == MethodId::kGdumb) {
    const int task_size =
        static_cast<int>(stream.specs[0].classes.size()) * stream.specs[0].n_train;
    const int k = static_cast<int>(std::lround(hyper.memory_fraction * task_size));
    st.memory.emplace(k, substream(seed, "memory-evict"));
  }
  if (bgs.enabled) st.bgs_memory.emplace(bgs.capacity, substream(seed, "bgs-evict"));
  if (method == MethodId::kPackNet) st.packnet_mask = zero_masks_like(st.model.trunk);
  return st;
}

namespace detail {

// 0/1 trainability over parameter blocks for the task about to be trained.
inline GradSet build_trainable(const TrainerState& st, int task, int single_rows_before) {
  GradSet mask = nn::constant_like(st.model, 1.0);
  // old task heads are never revisited
  if (st.layout.mode == nn::HeadMode::kMulti) {
    for (std::size_t h = 0; h < mask.heads.size(); ++h) {
      if (static_cast<int>(h) != task) {
        mask.heads[h].W.setZero();
        mask.heads[h].b.setZero();
      }
    }
  }
  if (st.method == MethodId::kFreezing && task > 0) {
    for (auto& layer : mask.trunk) {
      layer.W.setZero();
      layer.b.setZero();
    }
    if (st.layout.mode == nn::HeadMode::kSingle) {
      // only rows added for this task stay trainable (none in domain-IL)
      mask.heads[0].W.topRows(single_rows_before).setZero();
      mask.heads[0].b.head(single_rows_before).setZero();
    }
  }
  if (st.method == MethodId::kPackNet) {
    for (std::size_t i = 0; i < mask.trunk.size(); ++i) {
      mask.trunk[i].W = (st.packnet_mask[i].W.array() == 0).cast<double>().matrix();
      mask.trunk[i].b = (st.packnet_mask[i].b.array() == 0).cast<double>().matrix();
    }
  }
  return mask;
}

inline nn::Batch gather_batch(const std::vector<BiasedSample>& data,
                              const std::vector<int>& order, std::size_t lo, std::size_t hi,
                              const std::vector<BiasedSample>& extra) {
  std::vector<BiasedSample> rows;
  rows.reserve(hi - lo + extra.size());
  for (std::size_t i = lo; i < hi; ++i) rows.push_back(data[order[i]]);
  rows.insert(rows.end(), extra.begin(), extra.end());
  return to_batch(rows);
}

// Plain routed-CE fit used by GDumb training and BGS head retraining.
inline void fit_ce(MlpModel& model, const HeadLayout& layout,
                   const std::vector<BiasedSample>& data, int epochs, int batch_size,
                   const nn::AdamWHyper& opt_hyper, const GradSet* trainable,
                   std::uint64_t order_seed) {
  if (data.empty()) throw std::invalid_argument("fit_ce: no data");
  AdamWState opt = nn::make_adamw_state(model, opt_hyper);
  const CeObjective objective(layout);
  Rng order_rng(order_seed);
  std::vector<int> order(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) order[i] = static_cast<int>(i);
  for (int epoch = 0; epoch < epochs; ++epoch) {
    const double lr = nn::cosine_lr(epoch, epochs, opt_hyper.learning_rate);
    order_rng.shuffle(order);
    for (std::size_t lo = 0; lo < order.size(); lo += batch_size) {
      const std::size_t hi = std::min(order.size(), lo + batch_size);
      const nn::Batch batch = gather_batch(data, order, lo, hi, {});
      nn::train_step(model, opt, batch, objective, lr, trainable);
    }
  }
}

}  // namespace detail

// Model used to evaluate `task`. PackNet zeroes every trunk entry not owned
// by tasks <= task, which makes old-task predictions invariant to all later
// training.
inline MlpModel eval_model(const TrainerState& st, int task) {
  if (st.method != MethodId::kPackNet) return st.model;
  // r = 0 keeps nothing per task: the method degenerates to fine-tuning
  if (st.hyper.pruning_ratio == 0.0) return st.model;
  MlpModel m = st.model;
  const int limit = task + 1;
  for (std::size_t i = 0; i < m.trunk.size(); ++i) {
    const auto& mask = st.packnet_mask[i];
    for (long k = 0; k < m.trunk[i].W.size(); ++k)
      if (mask.W(k) == 0 || mask.W(k) > limit) m.trunk[i].W(k) = 0.0;
    for (long k = 0; k < m.trunk[i].b.size(); ++k)
      if (mask.b(k) == 0 || mask.b(k) > limit) m.trunk[i].b(k) = 0.0;
  }
  return m;
}

// Trains a fresh model on the memory contents only (all stored tasks
// jointly); any prior model state is ignored.
inline MlpModel gdumb_train(const memory::ExemplarMemory& mem, const HeadLayout& layout,
                            int input_dim, const HyperConfig& hyper, std::uint64_t seed) {
  if (mem.empty()) throw std::invalid_argument("gdumb_train: empty memory");
  Rng init_rng(substream(seed, "gdumb-init"));
  MlpModel model = nn::make_mlp(input_dim, hyper.hidden, layout.mode, init_rng);
  if (layout.mode == nn::HeadMode::kMulti) {
    for (int t = 0; t < layout.tasks_seen(); ++t)
      nn::add_head(model, layout.head_width(t), input_dim, init_rng);
  } else {
    nn::add_head(model, layout.head_width(layout.tasks_seen() - 1), input_dim, init_rng);
  }
  detail::fit_ce(model, layout, mem.snapshot(), hyper.epochs, hyper.batch_size,
                 hyper.optimizer, nullptr, substream(seed, "gdumb-order"));
  return model;
}

// BGS stage two: re-optimizes every classification head from its current
// values on the group-class balanced memory; the trunk stays bit-identical.
inline void bgs_retrain_heads(TrainerState& st, const memory::ExemplarMemory& mem,
                              int epochs) {
  if (mem.empty()) throw std::invalid_argument("bgs_retrain_heads: empty memory");
  GradSet trainable = nn::constant_like(st.model, 1.0);
  for (auto& layer : trainable.trunk) {
    layer.W.setZero();
    layer.b.setZero();
  }
  detail::fit_ce(st.model, st.layout, mem.snapshot(), epochs, st.hyper.batch_size,
                 st.hyper.optimizer, &trainable, substream(st.seed, "bgs-order"));
}

// Runs one task of the method's continual-learning procedure.
inline void train_task(TrainerState& st, const TaskStream& stream, int task) {
  if (task != st.tasks_trained)
    throw std::invalid_argument("train_task: task " + std::to_string(task) +
                                " out of sequence");
  if (task >= stream.task_count()) throw std::out_of_range("train_task: no such task");
  const data::TaskSpec& spec = stream.specs[task];
  if (spec.scenario != st.regime)
    throw std::invalid_argument("train_task: scenario mismatch");

  // extend heads
  const int input_dim = stream.geometry.dim();
  int single_rows_before = 0;
  st.layout.add_task(spec.classes);
  Rng head_rng(substream(st.seed, "head-init", static_cast<std::uint64_t>(task)));
  if (st.layout.mode == nn::HeadMode::kMulti) {
    nn::add_head(st.model, st.layout.head_width(task), input_dim, head_rng);
  } else if (task == 0) {
    nn::add_head(st.model, st.layout.head_width(0), input_dim, head_rng);
  } else {
    single_rows_before = static_cast<int>(st.model.heads[0].W.rows());
    const int extra = st.layout.head_width(task) - single_rows_before;
    if (extra > 0) nn::widen_head(st.model, 0, extra, head_rng);
  }

  const std::vector<BiasedSample>& data = stream.train[task];

  if (st.method == MethodId::kGdumb) {
    for (const auto& s : data) {
      st.memory->gdumb_update(s, task);
      if (st.bgs_memory) st.bgs_memory->bgs_update(s, task, st.attribute_values);
    }
    st.model = gdumb_train(*st.memory, st.layout, input_dim, st.hyper,
                           substream(st.seed, "gdumb", static_cast<std::uint64_t>(task)));
    st.tasks_trained += 1;
    return;
  }

  const GradSet trainable = detail::build_trainable(st, task, single_rows_before);

  // per-batch objective assembly (shared pieces are immutable this task)
  const auto layout_copy = st.layout;
  auto ce = std::make_shared<CeObjective>(layout_copy);
  std::shared_ptr<const MlpModel> anchors;
  std::shared_ptr<const GradSet> fisher;
  if (st.method == MethodId::kEwc && st.ewc.valid && st.hyper.lambda != 0.0) {
    anchors = std::make_shared<const MlpModel>(st.ewc.anchors);
    fisher = std::make_shared<const GradSet>(st.ewc.fisher);
  }
  auto build_objective = [&](const Eigen::VectorXd* q) -> std::shared_ptr<const nn::Objective> {
    std::shared_ptr<const nn::Objective> base;
    if (q != nullptr) {
      base = std::make_shared<GroupDroObjective>(layout_copy, task, st.attribute_values, *q);
    } else {
      base = ce;
    }
    if (st.method == MethodId::kLwf && task > 0 && st.hyper.lambda != 0.0) {
      base = std::make_shared<DistillObjective>(base, layout_copy, st.lwf_snapshot, task,
                                                st.hyper.lambda, st.hyper.distill_temperature);
    }
    if (anchors != nullptr) {
      base = std::make_shared<EwcObjective>(base, anchors, fisher, st.hyper.lambda);
    }
    return base;
  };

  if (st.groupdro) {
    const int cells = st.attribute_values * st.layout.head_width(task);
    st.dro_q = Eigen::VectorXd::Constant(cells, 1.0 / cells);
  }

  AdamWState opt = nn::make_adamw_state(st.model, st.hyper.optimizer);
  Rng order_rng(substream(st.seed, "batch-order", static_cast<std::uint64_t>(task)));
  Rng replay_rng(substream(st.seed, "replay", static_cast<std::uint64_t>(task)));
  std::vector<int> order(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) order[i] = static_cast<int>(i);

  for (int epoch = 0; epoch < st.hyper.epochs; ++epoch) {
    const double lr = nn::cosine_lr(epoch, st.hyper.epochs, st.hyper.optimizer.learning_rate);
    order_rng.shuffle(order);
    const bool replay =
        st.method == MethodId::kEr && st.memory && st.memory->has_samples_before_task(task);
    const std::size_t chunk = replay
                                  ? std::max<std::size_t>(1, st.hyper.batch_size / 2)
                                  : static_cast<std::size_t>(st.hyper.batch_size);
    for (std::size_t lo = 0; lo < order.size(); lo += chunk) {
      const std::size_t hi = std::min(order.size(), lo + chunk);
      std::vector<BiasedSample> extra;
      if (replay) {
        const std::size_t want = st.hyper.batch_size - chunk;
        for (std::size_t i = 0; i < want; ++i) {
          auto drawn = st.memory->sample_before_task(task, replay_rng);
          if (!drawn) break;
          extra.push_back(std::move(*drawn));
        }
      }
      const nn::Batch batch = detail::gather_batch(data, order, lo, hi, extra);
      std::shared_ptr<const nn::Objective> objective;
      if (st.groupdro) {
        GroupDroObjective probe(layout_copy, task, st.attribute_values, st.dro_q);
        st.dro_q = groupdro_reweight(st.dro_q, probe.cell_losses(st.model, batch),
                                     st.hyper.groupdro_lr);
        objective = build_objective(&st.dro_q);
      } else {
        objective = build_objective(nullptr);
      }
      nn::train_step(st.model, opt, batch, *objective, lr, &trainable);
      if (epoch == 0) {
        // stream this batch's new samples into the exemplar memories
        for (std::size_t i = lo; i < hi; ++i) {
          const BiasedSample& s = data[order[i]];
          if (st.method == MethodId::kEr && st.memory) {
            st.stream_position += 1;
            st.memory->reservoir_update(s, st.stream_position);
          }
          if (st.bgs_memory) st.bgs_memory->bgs_update(s, task, st.attribute_values);
        }
      }
    }
  }

  // per-method consolidation
  if (st.method == MethodId::kEwc) {
    const GradSet fisher_task = empirical_fisher(st.model, st.layout, data);
    st.ewc.fisher =
        ewc_consolidate(st.ewc.valid ? &st.ewc.fisher : nullptr, fisher_task, task);
    st.ewc.anchors = st.model;
    st.ewc.valid = true;
  }
  if (st.method == MethodId::kLwf) {
    st.lwf_snapshot = std::make_shared<const MlpModel>(st.model);
  }
  if (st.method == MethodId::kPackNet && st.hyper.pruning_ratio > 0.0) {
    st.packnet_mask =
        packnet_prune(st.model.trunk, std::move(st.packnet_mask), task + 1,
                      st.hyper.pruning_ratio);
    // zero free entries so the kept subnetwork retrains under the exact
    // inference-time forward
    for (std::size_t i = 0; i < st.model.trunk.size(); ++i) {
      const auto& mask = st.packnet_mask[i];
      for (long k = 0; k < st.model.trunk[i].W.size(); ++k)
        if (mask.W(k) == 0) st.model.trunk[i].W(k) = 0.0;
      for (long k = 0; k < st.model.trunk[i].b.size(); ++k)
        if (mask.b(k) == 0) st.model.trunk[i].b(k) = 0.0;
    }
    GradSet retrain_mask = nn::constant_like(st.model, 0.0);
    for (std::size_t i = 0; i < retrain_mask.trunk.size(); ++i) {
      retrain_mask.trunk[i].W =
          (st.packnet_mask[i].W.array() == task + 1).cast<double>().matrix();
      retrain_mask.trunk[i].b =
          (st.packnet_mask[i].b.array() == task + 1).cast<double>().matrix();
    }
    retrain_mask.heads[static_cast<std::size_t>(task)].W.setOnes();
    retrain_mask.heads[static_cast<std::size_t>(task)].b.setOnes();
    const int retrain_epochs =
        std::max(1, static_cast<int>(std::lround(0.2 * st.hyper.epochs)));
    detail::fit_ce(st.model, st.layout, data, retrain_epochs, st.hyper.batch_size,
                   st.hyper.optimizer, &retrain_mask,
                   substream(st.seed, "packnet-retrain", static_cast<std::uint64_t>(task)));
    // freshly released capacity for the next task
    Rng reinit_rng(substream(st.seed, "packnet-reinit", static_cast<std::uint64_t>(task)));
    for (std::size_t i = 0; i < st.model.trunk.size(); ++i) {
      const auto& mask = st.packnet_mask[i];
      const double scale = std::sqrt(2.0 / static_cast<double>(st.model.trunk[i].W.cols()));
      for (long c = 0; c < st.model.trunk[i].W.cols(); ++c)
        for (long r = 0; r < st.model.trunk[i].W.rows(); ++r)
          if (mask.W(r, c) == 0) st.model.trunk[i].W(r, c) = scale * reinit_rng.normal();
      for (long k = 0; k < st.model.trunk[i].b.size(); ++k)
        if (mask.b(k) == 0) st.model.trunk[i].b(k) = 0.0;
    }
  }
  st.tasks_trained += 1;
}

// Naive-debiasing stage three: re-trains the network on one task's data with
// the Group DRO objective (fresh optimizer, same epoch budget).
inline void groupdro_retrain(TrainerState& st, const TaskStream& stream, int task) {
  if (task >= st.tasks_trained) throw std::invalid_argument("groupdro_retrain: task not trained");
  const std::vector<BiasedSample>& data = stream.train[task];
  const GradSet trainable = detail::build_trainable(st, task, 0);
  const int cells = st.attribute_values * st.layout.head_width(task);
  st.dro_q = Eigen::VectorXd::Constant(cells, 1.0 / cells);
  AdamWState opt = nn::make_adamw_state(st.model, st.hyper.optimizer);
  Rng order_rng(substream(st.seed, "dro-retrain-order", static_cast<std::uint64_t>(task)));
  std::vector<int> order(data.size());
  for (std::size_t i = 0; i < data.size(); ++i) order[i] = static_cast<int>(i);
  for (int epoch = 0; epoch < st.hyper.epochs; ++epoch) {
    const double lr = nn::cosine_lr(epoch, st.hyper.epochs, st.hyper.optimizer.learning_rate);
    order_rng.shuffle(order);
    for (std::size_t lo = 0; lo < order.size(); lo += st.hyper.batch_size) {
      const std::size_t hi =
          std::min(order.size(), lo + static_cast<std::size_t>(st.hyper.batch_size));
      const nn::Batch batch = detail::gather_batch(data, order, lo, hi, {});
      GroupDroObjective probe(st.layout, task, st.attribute_values, st.dro_q);
      st.dro_q = groupdro_reweight(st.dro_q, probe.cell_losses(st.model, batch),
                                   st.hyper.groupdro_lr);
      const GroupDroObjective objective(st.layout, task, st.attribute_values, st.dro_q);
      nn::train_step(st.model, opt, batch, objective, lr, &trainable);
    }
  }
}

}  // namespace clbias::trainers
