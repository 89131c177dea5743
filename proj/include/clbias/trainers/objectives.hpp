#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

#include "clbias/layout.hpp"
#include "clbias/nn/losses.hpp"
#include "clbias/nn/mlp.hpp"
#include "clbias/nn/optim.hpp"

namespace clbias::trainers {

using nn::Batch;
using nn::GradSet;
using nn::MlpModel;

// Mean cross-entropy with per-sample head routing; sample i contributes with
// weight w_i (default 1/n). When dlogits is non-null it must hold one (n x
// c_h) zero matrix per head; gradients are scattered into it.
inline double routed_cross_entropy(const MlpModel& model, const nn::ForwardTrace& trace,
                                   const Batch& batch, const HeadLayout& layout,
                                   std::vector<Eigen::MatrixXd>* dlogits,
                                   const Eigen::VectorXd* sample_weights = nullptr) {
  const int n = batch.size();
  const Eigen::VectorXd weights =
      sample_weights ? *sample_weights : Eigen::VectorXd::Constant(n, 1.0 / n);
  // rows per head
  std::vector<std::vector<int>> rows(model.heads.size());
  for (int i = 0; i < n; ++i) {
    const int head = layout.head_for_task(batch.task_ids[i]);
    if (head < 0 || head >= static_cast<int>(model.heads.size()))
      throw std::invalid_argument("routed_cross_entropy: no head for task " +
                                  std::to_string(batch.task_ids[i]));
    rows[head].push_back(i);
  }
  double loss = 0.0;
  for (std::size_t h = 0; h < rows.size(); ++h) {
    if (rows[h].empty()) continue;
    const Eigen::MatrixXd feats = trace.features()(rows[h], Eigen::all);
    const Eigen::MatrixXd logits = nn::head_logits(model, feats, static_cast<int>(h));
    std::vector<int> targets;
    Eigen::VectorXd w(rows[h].size());
    targets.reserve(rows[h].size());
    for (std::size_t j = 0; j < rows[h].size(); ++j) {
      const int i = rows[h][j];
      targets.push_back(layout.local_label(batch.task_ids[i], batch.class_labels[i]));
      w[static_cast<long>(j)] = weights[i];
    }
    if (dlogits == nullptr) {
      loss += nn::cross_entropy(logits, targets, w, nullptr);
    } else {
      Eigen::MatrixXd dsub = Eigen::MatrixXd::Zero(logits.rows(), logits.cols());
      loss += nn::cross_entropy(logits, targets, w, &dsub);
      Eigen::MatrixXd& dst = (*dlogits)[h];
      if (dst.size() == 0) dst = Eigen::MatrixXd::Zero(n, logits.cols());
      for (std::size_t j = 0; j < rows[h].size(); ++j)
        dst.row(rows[h][j]) += dsub.row(static_cast<long>(j));
    }
  }
  return loss;
}

// Plain supervised objective (fine-tuning and friends).
class CeObjective : public nn::Objective {
 public:
  explicit CeObjective(HeadLayout layout) : layout_(std::move(layout)) {}

  double eval(const MlpModel& model, const Batch& batch, GradSet* grads) const override {
    batch.validate();
    const nn::ForwardTrace trace = nn::trunk_forward(model, batch.inputs);
    if (grads == nullptr) return routed_cross_entropy(model, trace, batch, layout_, nullptr);
    std::vector<Eigen::MatrixXd> dlogits(model.heads.size());
    const double loss = routed_cross_entropy(model, trace, batch, layout_, &dlogits);
    nn::backward(model, trace, dlogits, *grads);
    return loss;
  }

 private:
  HeadLayout layout_;
};

// ---------------------------------------------------------------------------
// Group DRO

// Exponentiated-gradient update of the group weights: q'_g propto q_g *
// exp(eta * loss_g). Groups absent from the batch keep their entry.
inline Eigen::VectorXd groupdro_reweight(const Eigen::VectorXd& q,
                                         const std::vector<std::optional<double>>& group_losses,
                                         double eta) {
  if (q.size() != static_cast<long>(group_losses.size()))
    throw std::invalid_argument("groupdro_reweight: size mismatch");
  Eigen::VectorXd next(q.size());
  for (long g = 0; g < q.size(); ++g) {
    const double l = group_losses[static_cast<std::size_t>(g)].value_or(0.0);
    next[g] = q[g] * std::exp(eta * l);
  }
  const double z = next.sum();
  if (!(z > 0.0)) throw std::runtime_error("groupdro_reweight: degenerate weights");
  return next / z;
}

// Worst-group weighted cross-entropy over (group, class) cells of one task.
// Cell index = group * n_classes + local_class. q is fixed for the duration
// of one evaluation; the trainer re-weights it between steps.
class GroupDroObjective : public nn::Objective {
 public:
  GroupDroObjective(HeadLayout layout, int task, int attribute_values, Eigen::VectorXd q)
      : layout_(std::move(layout)), task_(task), groups_(attribute_values), q_(std::move(q)) {
    const int cells = groups_ * layout_.head_width(task_);
    if (q_.size() != cells)
      throw std::invalid_argument("GroupDroObjective: q must have one entry per cell");
  }

  int cell_of(int group, int local_label) const {
    return group * layout_.head_width(task_) + local_label;
  }

  // Per-cell mean losses (forward only), for the q update.
  std::vector<std::optional<double>> cell_losses(const MlpModel& model,
                                                 const Batch& batch) const {
    const Eigen::VectorXd weights = Eigen::VectorXd::Ones(batch.size());
    std::vector<double> sums(static_cast<std::size_t>(q_.size()), 0.0);
    std::vector<int> counts(static_cast<std::size_t>(q_.size()), 0);
    const nn::ForwardTrace trace = nn::trunk_forward(model, batch.inputs);
    const int head = layout_.head_for_task(task_);
    const Eigen::MatrixXd logits = nn::head_logits(model, trace.features(), head);
    const Eigen::VectorXd lse = nn::log_sum_exp_rows(logits);
    for (int i = 0; i < batch.size(); ++i) {
      if (batch.task_ids[i] != task_) continue;
      const int local = layout_.local_label(task_, batch.class_labels[i]);
      const int cell = cell_of(batch.group_labels[i], local);
      sums[static_cast<std::size_t>(cell)] += lse[i] - logits(i, local);
      counts[static_cast<std::size_t>(cell)] += 1;
    }
    std::vector<std::optional<double>> out(static_cast<std::size_t>(q_.size()));
    for (std::size_t c = 0; c < out.size(); ++c)
      if (counts[c] > 0) out[c] = sums[c] / counts[c];
    return out;
  }

  double eval(const MlpModel& model, const Batch& batch, GradSet* grads) const override {
    batch.validate();
    // weight_i = q_cell / n_cell: the loss becomes sum_g q_g * mean-ce(g)
    std::vector<int> cell(batch.size());
    std::vector<int> counts(static_cast<std::size_t>(q_.size()), 0);
    for (int i = 0; i < batch.size(); ++i) {
      if (batch.task_ids[i] != task_)
        throw std::invalid_argument("GroupDroObjective: batch contains foreign-task samples");
      const int local = layout_.local_label(task_, batch.class_labels[i]);
      cell[i] = cell_of(batch.group_labels[i], local);
      counts[static_cast<std::size_t>(cell[i])] += 1;
    }
    Eigen::VectorXd weights(batch.size());
    for (int i = 0; i < batch.size(); ++i)
      weights[i] = q_[cell[i]] / counts[static_cast<std::size_t>(cell[i])];
    const nn::ForwardTrace trace = nn::trunk_forward(model, batch.inputs);
    if (grads == nullptr)
      return routed_cross_entropy(model, trace, batch, layout_, nullptr, &weights);
    std::vector<Eigen::MatrixXd> dlogits(model.heads.size());
    const double loss =
        routed_cross_entropy(model, trace, batch, layout_, &dlogits, &weights);
    nn::backward(model, trace, dlogits, *grads);
    return loss;
  }

  const Eigen::VectorXd& q() const { return q_; }

 private:
  HeadLayout layout_;
  int task_;
  int groups_;
  Eigen::VectorXd q_;
};

// ---------------------------------------------------------------------------
// LWF

// Spec-level loss: cross-entropy on the current head plus lambda times the
// mean over previous heads of the temperature-scaled distillation term.
// `new_logits` carries one matrix per head with the current head last;
// `old_logits` one matrix per previous head.
inline double lwf_loss(const std::vector<Eigen::MatrixXd>& new_logits,
                       const std::vector<Eigen::MatrixXd>& old_logits,
                       const std::vector<int>& targets, double lambda, double temperature) {
  if (new_logits.empty()) throw std::invalid_argument("lwf_loss: no logits");
  if (old_logits.size() + 1 != new_logits.size())
    throw std::invalid_argument("lwf_loss: need exactly one old logits matrix per previous head");
  double loss = nn::cross_entropy_mean(new_logits.back(), targets);
  if (old_logits.empty() || lambda == 0.0) return loss;
  const int n = static_cast<int>(new_logits.back().rows());
  const Eigen::VectorXd w = Eigen::VectorXd::Constant(n, 1.0 / n);
  double distill = 0.0;
  for (std::size_t h = 0; h < old_logits.size(); ++h)
    distill += nn::kl_distill(new_logits[h], old_logits[h], temperature, w, nullptr);
  return loss + lambda * distill / static_cast<double>(old_logits.size());
}

// Adds the learning-without-forgetting term to a base objective: lambda
// times the mean over previous heads of the temperature-scaled distillation
// of the frozen snapshot's outputs. In single-head regimes the snapshot head
// (or its old-class slice, class-IL) is the one distillation target.
class DistillObjective : public nn::Objective {
 public:
  DistillObjective(std::shared_ptr<const nn::Objective> base, HeadLayout layout,
                   std::shared_ptr<const MlpModel> snapshot, int task, double lambda,
                   double temperature)
      : base_(std::move(base)),
        layout_(std::move(layout)),
        snapshot_(std::move(snapshot)),
        task_(task),
        lambda_(lambda),
        temperature_(temperature) {
    if (task_ > 0 && snapshot_ == nullptr)
      throw std::invalid_argument("DistillObjective: missing old-model snapshot");
  }

  double eval(const MlpModel& model, const Batch& batch, GradSet* grads) const override {
    batch.validate();
    double loss = base_->eval(model, batch, grads);
    if (task_ > 0 && lambda_ != 0.0) {
      const nn::ForwardTrace trace = nn::trunk_forward(model, batch.inputs);
      std::vector<Eigen::MatrixXd> dlogits(model.heads.size());
      const int n = batch.size();
      const Eigen::VectorXd w = Eigen::VectorXd::Constant(n, 1.0 / n);
      const Eigen::MatrixXd old_feats = nn::extract_features(*snapshot_, batch.inputs);
      const int terms = layout_.mode == nn::HeadMode::kMulti
                            ? static_cast<int>(snapshot_->heads.size())
                            : 1;
      const double scale = lambda_ / static_cast<double>(terms);
      double distill = 0.0;
      if (layout_.mode == nn::HeadMode::kMulti) {
        for (int h = 0; h < terms; ++h) {
          const Eigen::MatrixXd old_logits = nn::head_logits(*snapshot_, old_feats, h);
          const Eigen::MatrixXd new_logits = nn::head_logits(model, trace.features(), h);
          Eigen::MatrixXd dnew = Eigen::MatrixXd::Zero(n, new_logits.cols());
          distill += nn::kl_distill(new_logits, old_logits, temperature_, w,
                                    grads != nullptr ? &dnew : nullptr);
          if (grads != nullptr) {
            if (dlogits[h].size() == 0)
              dlogits[h] = Eigen::MatrixXd::Zero(n, new_logits.cols());
            dlogits[h] += scale * dnew;
          }
        }
      } else {
        // single head: distill against the snapshot's (possibly narrower)
        // output slice
        const Eigen::MatrixXd old_logits = nn::head_logits(*snapshot_, old_feats, 0);
        const long c_old = old_logits.cols();
        const Eigen::MatrixXd new_slice =
            nn::head_logits(model, trace.features(), 0).leftCols(c_old);
        Eigen::MatrixXd dnew = Eigen::MatrixXd::Zero(n, c_old);
        distill += nn::kl_distill(new_slice, old_logits, temperature_, w,
                                  grads != nullptr ? &dnew : nullptr);
        if (grads != nullptr) {
          const long c_new = model.heads[0].W.rows();
          if (dlogits[0].size() == 0) dlogits[0] = Eigen::MatrixXd::Zero(n, c_new);
          dlogits[0].leftCols(c_old) += scale * dnew;
        }
      }
      loss += scale * distill;
      if (grads != nullptr) nn::backward(model, trace, dlogits, *grads);
    }
    return loss;
  }

 private:
  std::shared_ptr<const nn::Objective> base_;
  HeadLayout layout_;
  std::shared_ptr<const MlpModel> snapshot_;
  int task_;
  double lambda_;
  double temperature_;
};

// ---------------------------------------------------------------------------
// EWC

// (lambda/2) * sum_i F_i (theta_i - theta*_i)^2 over the blocks that existed
// when the anchor was taken (head growth keeps old entries in place).
inline double ewc_penalty(const MlpModel& params, const MlpModel& anchors,
                          const GradSet& fisher, double lambda, GradSet* grads = nullptr) {
  if (anchors.trunk.size() != params.trunk.size() ||
      fisher.trunk.size() != anchors.trunk.size() || fisher.heads.size() != anchors.heads.size())
    throw std::invalid_argument("ewc_penalty: layout mismatch");
  double acc = 0.0;
  auto block = [&](const Eigen::MatrixXd& cur, const Eigen::MatrixXd& ref,
                   const Eigen::MatrixXd& f, Eigen::MatrixXd* g) {
    const long r = std::min(cur.rows(), ref.rows());
    const long c = std::min(cur.cols(), ref.cols());
    if (f.rows() < r || f.cols() < c)
      throw std::invalid_argument("ewc_penalty: fisher shape mismatch");
    const Eigen::ArrayXXd diff =
        cur.topLeftCorner(r, c).array() - ref.topLeftCorner(r, c).array();
    acc += (f.topLeftCorner(r, c).array() * diff.square()).sum();
    if (g != nullptr)
      g->topLeftCorner(r, c).array() += lambda * f.topLeftCorner(r, c).array() * diff;
  };
  auto vec_block = [&](const Eigen::VectorXd& cur, const Eigen::VectorXd& ref,
                       const Eigen::VectorXd& f, Eigen::VectorXd* g) {
    const long m = std::min(cur.size(), ref.size());
    const Eigen::ArrayXd diff = cur.head(m).array() - ref.head(m).array();
    acc += (f.head(m).array() * diff.square()).sum();
    if (g != nullptr) g->head(m).array() += lambda * f.head(m).array() * diff;
  };
  for (std::size_t i = 0; i < anchors.trunk.size(); ++i) {
    block(params.trunk[i].W, anchors.trunk[i].W, fisher.trunk[i].W,
          grads ? &grads->trunk[i].W : nullptr);
    vec_block(params.trunk[i].b, anchors.trunk[i].b, fisher.trunk[i].b,
              grads ? &grads->trunk[i].b : nullptr);
  }
  const std::size_t nh = std::min(params.heads.size(), anchors.heads.size());
  for (std::size_t i = 0; i < nh; ++i) {
    block(params.heads[i].W, anchors.heads[i].W, fisher.heads[i].W,
          grads ? &grads->heads[i].W : nullptr);
    vec_block(params.heads[i].b, anchors.heads[i].b, fisher.heads[i].b,
              grads ? &grads->heads[i].b : nullptr);
  }
  return 0.5 * lambda * acc;
}

// Online EWC: running mean of per-task diagonal Fisher estimates. Blocks or
// entries absent from the old estimate (freshly added heads) count as zero.
inline GradSet ewc_consolidate(const GradSet* fisher_old, const GradSet& fisher_task,
                               int tasks_seen) {
  for (const auto& layer : fisher_task.trunk)
    if ((layer.W.array() < 0.0).any() || (layer.b.array() < 0.0).any())
      throw std::runtime_error("ewc_consolidate: negative Fisher entry");
  for (const auto& head : fisher_task.heads)
    if ((head.W.array() < 0.0).any() || (head.b.array() < 0.0).any())
      throw std::runtime_error("ewc_consolidate: negative Fisher entry");
  GradSet out = fisher_task;
  const double n = static_cast<double>(tasks_seen);
  auto merge = [&](Eigen::MatrixXd& dst, const Eigen::MatrixXd* old_block) {
    Eigen::MatrixXd padded = Eigen::MatrixXd::Zero(dst.rows(), dst.cols());
    if (old_block != nullptr) {
      const long r = std::min(dst.rows(), old_block->rows());
      const long c = std::min(dst.cols(), old_block->cols());
      padded.topLeftCorner(r, c) = old_block->topLeftCorner(r, c);
    }
    dst = (n * padded + dst) / (n + 1.0);
  };
  auto merge_vec = [&](Eigen::VectorXd& dst, const Eigen::VectorXd* old_block) {
    Eigen::VectorXd padded = Eigen::VectorXd::Zero(dst.size());
    if (old_block != nullptr) {
      const long m = std::min(dst.size(), old_block->size());
      padded.head(m) = old_block->head(m);
    }
    dst = (n * padded + dst) / (n + 1.0);
  };
  for (std::size_t i = 0; i < out.trunk.size(); ++i) {
    const bool has = fisher_old != nullptr && i < fisher_old->trunk.size();
    merge(out.trunk[i].W, has ? &fisher_old->trunk[i].W : nullptr);
    merge_vec(out.trunk[i].b, has ? &fisher_old->trunk[i].b : nullptr);
  }
  for (std::size_t i = 0; i < out.heads.size(); ++i) {
    const bool has = fisher_old != nullptr && i < fisher_old->heads.size();
    merge(out.heads[i].W, has ? &fisher_old->heads[i].W : nullptr);
    merge_vec(out.heads[i].b, has ? &fisher_old->heads[i].b : nullptr);
  }
  return out;
}

// Adds the quadratic anchor penalty to a base objective.
class EwcObjective : public nn::Objective {
 public:
  EwcObjective(std::shared_ptr<const nn::Objective> base, std::shared_ptr<const MlpModel> anchors,
               std::shared_ptr<const GradSet> fisher, double lambda)
      : base_(std::move(base)), anchors_(std::move(anchors)), fisher_(std::move(fisher)),
        lambda_(lambda) {}

  double eval(const MlpModel& model, const Batch& batch, GradSet* grads) const override {
    double loss = base_->eval(model, batch, grads);
    loss += ewc_penalty(model, *anchors_, *fisher_, lambda_, grads);
    return loss;
  }

 private:
  std::shared_ptr<const nn::Objective> base_;
  std::shared_ptr<const MlpModel> anchors_;
  std::shared_ptr<const GradSet> fisher_;
  double lambda_;
};

// Diagonal empirical Fisher: mean over the task's training samples of the
// squared per-sample log-likelihood gradient at the end of the task.
inline GradSet empirical_fisher(const MlpModel& model, const HeadLayout& layout,
                                const std::vector<data::BiasedSample>& samples) {
  if (samples.empty()) throw std::invalid_argument("empirical_fisher: no samples");
  GradSet fisher = nn::zero_grads_like(model);
  const CeObjective ce(layout);
  for (const auto& s : samples) {
    nn::Batch one = to_batch({s});
    GradSet g = nn::zero_grads_like(model);
    ce.eval(model, one, &g);
    auto acc = [](auto& dst, const auto& src) { dst.array() += src.array().square(); };
    nn::zip_blocks(fisher, g, [&](auto& fb, const auto& gb) { acc(fb, gb); });
  }
  const double inv = 1.0 / static_cast<double>(samples.size());
  nn::for_each_block(fisher, [&](auto& blk) { blk *= inv; });
  return fisher;
}

}  // namespace clbias::trainers
