#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>
#include <vector>

#include "clbias/rng.hpp"

namespace clbias::nn {

enum class HeadMode { kSingle, kMulti };

struct DenseLayer {
  Eigen::MatrixXd W;  // out x in
  Eigen::VectorXd b;  // out
};

// One evaluation batch. All label arrays share the leading dimension of
// `inputs`.
struct Batch {
  Eigen::MatrixXd inputs;  // n x d
  std::vector<int> class_labels;
  std::vector<int> group_labels;
  std::vector<int> task_ids;

  int size() const { return static_cast<int>(inputs.rows()); }

  void validate() const {
    const std::size_t n = static_cast<std::size_t>(inputs.rows());
    if (n < 1) throw std::invalid_argument("Batch: empty batch");
    if (class_labels.size() != n || group_labels.size() != n || task_ids.size() != n)
      throw std::invalid_argument("Batch: label arrays must match inputs rows");
  }
};

// Dense trunk with ReLU between layers plus one or more linear
// classification heads reading the trunk output. An empty trunk acts as the
// identity (features == inputs).
struct MlpModel {
  std::vector<DenseLayer> trunk;
  std::vector<DenseLayer> heads;
  HeadMode head_mode = HeadMode::kSingle;

  int feature_dim(int input_dim_hint = -1) const {
    if (!trunk.empty()) return static_cast<int>(trunk.back().W.rows());
    return input_dim_hint;
  }

  void validate() const {
    for (std::size_t i = 0; i + 1 < trunk.size(); ++i) {
      if (trunk[i].W.rows() != trunk[i + 1].W.cols())
        throw std::invalid_argument("MlpModel: trunk layer dimensions do not chain");
    }
    for (const auto& layer : trunk) {
      if (layer.b.size() != layer.W.rows())
        throw std::invalid_argument("MlpModel: bias size must match layer output dim");
    }
    if (!trunk.empty()) {
      const auto p = trunk.back().W.rows();
      for (const auto& head : heads) {
        if (head.W.cols() != p)
          throw std::invalid_argument("MlpModel: head input dim must equal trunk output dim");
      }
    }
    for (const auto& head : heads) {
      if (head.b.size() != head.W.rows())
        throw std::invalid_argument("MlpModel: head bias size must match head output dim");
    }
    if (head_mode == HeadMode::kSingle && heads.size() > 1)
      throw std::invalid_argument("MlpModel: single-head mode allows exactly one head");
  }
};

inline DenseLayer he_init_layer(int out, int in, Rng& rng) {
  DenseLayer layer;
  layer.W.resize(out, in);
  const double scale = std::sqrt(2.0 / static_cast<double>(in));
  for (int r = 0; r < out; ++r)
    for (int c = 0; c < in; ++c) layer.W(r, c) = scale * rng.normal();
  layer.b = Eigen::VectorXd::Zero(out);
  return layer;
}

inline MlpModel make_mlp(int input_dim, const std::vector<int>& hidden, HeadMode mode,
                         Rng& rng) {
  MlpModel model;
  model.head_mode = mode;
  int in = input_dim;
  for (int width : hidden) {
    model.trunk.push_back(he_init_layer(width, in, rng));
    in = width;
  }
  return model;
}

inline void add_head(MlpModel& model, int out_dim, int input_dim_hint, Rng& rng) {
  const int p = model.feature_dim(input_dim_hint);
  if (p <= 0) throw std::invalid_argument("add_head: unknown feature dim");
  model.heads.push_back(he_init_layer(out_dim, p, rng));
}

// Class-IL growth: append rows (new classes) to an existing head; old-class
// rows are retained untouched.
inline void widen_head(MlpModel& model, int head, int extra_classes, Rng& rng) {
  if (head < 0 || head >= static_cast<int>(model.heads.size()))
    throw std::out_of_range("widen_head: unknown head index");
  DenseLayer& h = model.heads[head];
  const int old_rows = static_cast<int>(h.W.rows());
  const int cols = static_cast<int>(h.W.cols());
  DenseLayer fresh = he_init_layer(extra_classes, cols, rng);
  h.W.conservativeResize(old_rows + extra_classes, cols);
  h.W.bottomRows(extra_classes) = fresh.W;
  h.b.conservativeResize(old_rows + extra_classes);
  h.b.tail(extra_classes) = fresh.b;
}

struct ForwardTrace {
  std::vector<Eigen::MatrixXd> pre;  // per trunk layer, n x out
  std::vector<Eigen::MatrixXd> act;  // act[0] = inputs, act[i+1] = relu(pre[i])

  const Eigen::MatrixXd& features() const { return act.back(); }
};

inline ForwardTrace trunk_forward(const MlpModel& model, const Eigen::MatrixXd& inputs) {
  if (!model.trunk.empty() && inputs.cols() != model.trunk.front().W.cols())
    throw std::invalid_argument("trunk_forward: input dim " + std::to_string(inputs.cols()) +
                                " does not match first layer " +
                                std::to_string(model.trunk.front().W.cols()));
  ForwardTrace tr;
  tr.act.reserve(model.trunk.size() + 1);
  tr.pre.reserve(model.trunk.size());
  tr.act.push_back(inputs);
  for (const auto& layer : model.trunk) {
    Eigen::MatrixXd z = (tr.act.back() * layer.W.transpose()).rowwise() + layer.b.transpose();
    tr.act.push_back(z.cwiseMax(0.0));
    tr.pre.push_back(std::move(z));
  }
  return tr;
}

inline Eigen::MatrixXd head_logits(const MlpModel& model, const Eigen::MatrixXd& features,
                                   int head) {
  if (head < 0 || head >= static_cast<int>(model.heads.size()))
    throw std::out_of_range("head_logits: unknown head index " + std::to_string(head));
  const DenseLayer& h = model.heads[head];
  if (features.cols() != h.W.cols())
    throw std::invalid_argument("head_logits: feature dim does not match head input dim");
  return (features * h.W.transpose()).rowwise() + h.b.transpose();
}

// Trunk output (penultimate representation); no head applied.
inline Eigen::MatrixXd extract_features(const MlpModel& model, const Eigen::MatrixXd& inputs) {
  return trunk_forward(model, inputs).features();
}

inline Eigen::MatrixXd forward(const MlpModel& model, const Eigen::MatrixXd& inputs, int head) {
  const ForwardTrace tr = trunk_forward(model, inputs);
  return head_logits(model, tr.features(), head);
}

inline Eigen::MatrixXd forward(const MlpModel& model, const Batch& batch, int head) {
  batch.validate();
  return forward(model, batch.inputs, head);
}

// Parameter-shaped container used for gradients, Adam moments, Fisher
// diagonals and trainability masks.
struct GradSet {
  std::vector<DenseLayer> trunk;
  std::vector<DenseLayer> heads;
};

inline GradSet zero_grads_like(const MlpModel& model) {
  GradSet g;
  g.trunk.reserve(model.trunk.size());
  for (const auto& layer : model.trunk)
    g.trunk.push_back({Eigen::MatrixXd::Zero(layer.W.rows(), layer.W.cols()),
                       Eigen::VectorXd::Zero(layer.b.size())});
  g.heads.reserve(model.heads.size());
  for (const auto& head : model.heads)
    g.heads.push_back({Eigen::MatrixXd::Zero(head.W.rows(), head.W.cols()),
                       Eigen::VectorXd::Zero(head.b.size())});
  return g;
}

inline GradSet constant_like(const MlpModel& model, double value) {
  GradSet g = zero_grads_like(model);
  for (auto& layer : g.trunk) {
    layer.W.setConstant(value);
    layer.b.setConstant(value);
  }
  for (auto& head : g.heads) {
    head.W.setConstant(value);
    head.b.setConstant(value);
  }
  return g;
}

// Applies f to every parameter block of the model paired with the matching
// block of `other` (same layout required).
template <typename Model, typename Other, typename F>
void zip_blocks(Model& model, Other& other, F&& f) {
  for (std::size_t i = 0; i < model.trunk.size(); ++i) {
    f(model.trunk[i].W, other.trunk[i].W);
    f(model.trunk[i].b, other.trunk[i].b);
  }
  for (std::size_t i = 0; i < model.heads.size(); ++i) {
    f(model.heads[i].W, other.heads[i].W);
    f(model.heads[i].b, other.heads[i].b);
  }
}

template <typename Model, typename F>
void for_each_block(Model& model, F&& f) {
  for (auto& layer : model.trunk) {
    f(layer.W);
    f(layer.b);
  }
  for (auto& head : model.heads) {
    f(head.W);
    f(head.b);
  }
}

// Backprop through trunk + heads. dlogits holds one matrix per head (empty
// matrix = head unused in the loss). Gradients are accumulated into `grads`.
inline void backward(const MlpModel& model, const ForwardTrace& tr,
                     const std::vector<Eigen::MatrixXd>& dlogits, GradSet& grads) {
  if (dlogits.size() > model.heads.size())
    throw std::invalid_argument("backward: more dlogits entries than heads");
  const Eigen::MatrixXd& feats = tr.features();
  Eigen::MatrixXd dact = Eigen::MatrixXd::Zero(feats.rows(), feats.cols());
  for (std::size_t h = 0; h < dlogits.size(); ++h) {
    const Eigen::MatrixXd& dz = dlogits[h];
    if (dz.size() == 0) continue;
    if (dz.rows() != feats.rows() || dz.cols() != model.heads[h].W.rows())
      throw std::invalid_argument("backward: dlogits shape mismatch on head " +
                                  std::to_string(h));
    grads.heads[h].W += dz.transpose() * feats;
    grads.heads[h].b += dz.colwise().sum().transpose();
    dact += dz * model.heads[h].W;
  }
  for (int i = static_cast<int>(model.trunk.size()) - 1; i >= 0; --i) {
    const Eigen::MatrixXd mask = (tr.pre[i].array() > 0.0).cast<double>();
    const Eigen::MatrixXd dz = dact.cwiseProduct(mask);
    grads.trunk[i].W += dz.transpose() * tr.act[i];
    grads.trunk[i].b += dz.colwise().sum().transpose();
    if (i > 0) dact = dz * model.trunk[i].W;
  }
}

}  // namespace clbias::nn
