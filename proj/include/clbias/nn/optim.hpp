#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <numbers>
#include <stdexcept>

#include "clbias/nn/mlp.hpp"

namespace clbias::nn {

struct AdamWHyper {
  double learning_rate = 1e-3;
  double weight_decay = 1e-2;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;

  void validate() const {
    if (beta1 < 0.0 || beta1 >= 1.0 || beta2 < 0.0 || beta2 >= 1.0)
      throw std::invalid_argument("AdamWHyper: betas must lie in [0, 1)");
  }
};

struct AdamWState {
  GradSet m;
  GradSet v;
  long step_count = 0;
  AdamWHyper hyper;
};

inline AdamWState make_adamw_state(const MlpModel& model, const AdamWHyper& hyper) {
  hyper.validate();
  return AdamWState{zero_grads_like(model), zero_grads_like(model), 0, hyper};
}

// Per-epoch cosine annealing down to zero.
inline double cosine_lr(int epoch, int total_epochs, double base_lr) {
  if (total_epochs < 1) throw std::invalid_argument("cosine_lr: total_epochs must be >= 1");
  if (epoch < 0 || epoch > total_epochs)
    throw std::invalid_argument("cosine_lr: epoch out of range");
  const double x = std::numbers::pi * static_cast<double>(epoch) / total_epochs;
  return base_lr * (1.0 + std::cos(x)) / 2.0;
}

// Decoupled AdamW update of one parameter block:
//   m <- b1 m + (1-b1) g,  v <- b2 v + (1-b2) g^2
//   p <- p - lr (m_hat / (sqrt(v_hat) + eps) + wd p)
// `step` is the 1-based step index used for bias correction. When `mask` is
// non-null the update (including weight decay) applies only where mask != 0.
template <typename TBlock>
void adamw_apply_block(TBlock& param, const TBlock& grad, TBlock& m, TBlock& v, long step,
                       const AdamWHyper& hp, double lr, const TBlock* mask = nullptr) {
  if (param.rows() != grad.rows() || param.cols() != grad.cols())
    throw std::invalid_argument("adamw_apply_block: shape mismatch");
  m = hp.beta1 * m + (1.0 - hp.beta1) * grad;
  v.array() = hp.beta2 * v.array() + (1.0 - hp.beta2) * grad.array().square();
  const double bc1 = 1.0 - std::pow(hp.beta1, static_cast<double>(step));
  const double bc2 = 1.0 - std::pow(hp.beta2, static_cast<double>(step));
  auto update = (lr * ((m.array() / bc1) / ((v.array() / bc2).sqrt() + hp.epsilon) +
                       hp.weight_decay * param.array()))
                    .eval();
  if (mask != nullptr) update *= mask->array();
  param.array() -= update;
}

// One AdamW step over the whole model. `trainable` (optional) holds 0/1
// entries; frozen entries are left bit-identical.
inline void adamw_step(MlpModel& model, const GradSet& grads, AdamWState& state, double lr,
                       const GradSet* trainable = nullptr) {
  if (grads.trunk.size() != model.trunk.size() || grads.heads.size() != model.heads.size())
    throw std::invalid_argument("adamw_step: gradient layout mismatch");
  state.step_count += 1;
  const long step = state.step_count;
  for (std::size_t i = 0; i < model.trunk.size(); ++i) {
    adamw_apply_block(model.trunk[i].W, grads.trunk[i].W, state.m.trunk[i].W,
                      state.v.trunk[i].W, step, state.hyper, lr,
                      trainable ? &trainable->trunk[i].W : nullptr);
    adamw_apply_block(model.trunk[i].b, grads.trunk[i].b, state.m.trunk[i].b,
                      state.v.trunk[i].b, step, state.hyper, lr,
                      trainable ? &trainable->trunk[i].b : nullptr);
  }
  for (std::size_t i = 0; i < model.heads.size(); ++i) {
    adamw_apply_block(model.heads[i].W, grads.heads[i].W, state.m.heads[i].W,
                      state.v.heads[i].W, step, state.hyper, lr,
                      trainable ? &trainable->heads[i].W : nullptr);
    adamw_apply_block(model.heads[i].b, grads.heads[i].b, state.m.heads[i].b,
                      state.v.heads[i].b, step, state.hyper, lr,
                      trainable ? &trainable->heads[i].b : nullptr);
  }
}

// Training objective over a batch. Implementations must be pure functions of
// (model, batch) so they can be checked against finite differences.
class Objective {
 public:
  virtual ~Objective() = default;
  // Returns the batch loss; when grads is non-null, accumulates dLoss/dparam
  // into it (caller supplies zeroed storage shaped like the model).
  virtual double eval(const MlpModel& model, const Batch& batch, GradSet* grads) const = 0;
};

inline bool all_finite(const GradSet& g) {
  for (const auto& layer : g.trunk)
    if (!layer.W.allFinite() || !layer.b.allFinite()) return false;
  for (const auto& head : g.heads)
    if (!head.W.allFinite() || !head.b.allFinite()) return false;
  return true;
}

// One optimization step on the mean objective. Returns the pre-update loss.
inline double train_step(MlpModel& model, AdamWState& state, const Batch& batch,
                         const Objective& objective, double lr,
                         const GradSet* trainable = nullptr) {
  GradSet grads = zero_grads_like(model);
  const double loss = objective.eval(model, batch, &grads);
  if (!std::isfinite(loss))
    throw std::runtime_error("train_step: non-finite loss (" + std::to_string(loss) + ")");
  if (!all_finite(grads)) throw std::runtime_error("train_step: non-finite gradient");
  adamw_step(model, grads, state, lr, trainable);
  return loss;
}

}  // namespace clbias::nn
