#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>
#include <vector>

namespace clbias::nn {

inline Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& logits) {
  const Eigen::VectorXd rowmax = logits.rowwise().maxCoeff();
  Eigen::MatrixXd p = (logits.array().colwise() - rowmax.array()).exp();
  const Eigen::VectorXd norm = p.rowwise().sum();
  return p.array().colwise() / norm.array();
}

inline Eigen::VectorXd log_sum_exp_rows(const Eigen::MatrixXd& logits) {
  const Eigen::VectorXd rowmax = logits.rowwise().maxCoeff();
  const Eigen::VectorXd sums =
      (logits.array().colwise() - rowmax.array()).exp().rowwise().sum();
  return rowmax.array() + sums.array().log();
}

// Weighted softmax cross-entropy: returns sum_i w_i * ce_i. When dlogits is
// non-null, accumulates w_i * (softmax_i - onehot_i) into it.
inline double cross_entropy(const Eigen::MatrixXd& logits, const std::vector<int>& targets,
                            const Eigen::VectorXd& weights, Eigen::MatrixXd* dlogits) {
  const int n = static_cast<int>(logits.rows());
  const int c = static_cast<int>(logits.cols());
  if (static_cast<int>(targets.size()) != n || weights.size() != n)
    throw std::invalid_argument("cross_entropy: targets/weights must match logits rows");
  const Eigen::VectorXd lse = log_sum_exp_rows(logits);
  double loss = 0.0;
  for (int i = 0; i < n; ++i) {
    const int y = targets[i];
    if (y < 0 || y >= c) throw std::invalid_argument("cross_entropy: target out of range");
    loss += weights[i] * (lse[i] - logits(i, y));
  }
  if (dlogits != nullptr) {
    Eigen::MatrixXd p = softmax_rows(logits);
    for (int i = 0; i < n; ++i) {
      p(i, targets[i]) -= 1.0;
      p.row(i) *= weights[i];
    }
    *dlogits += p;
  }
  return loss;
}

inline double cross_entropy_mean(const Eigen::MatrixXd& logits, const std::vector<int>& targets,
                                 Eigen::MatrixXd* dlogits = nullptr) {
  const Eigen::VectorXd w =
      Eigen::VectorXd::Constant(logits.rows(), 1.0 / static_cast<double>(logits.rows()));
  return cross_entropy(logits, targets, w, dlogits);
}

// Temperature-scaled distillation term: sum_i w_i * T^2 * KL(p_old || p_new)
// with p = softmax(logits / T). Accumulates the gradient wrt new_logits,
// w_i * T * (softmax(new/T) - softmax(old/T)), into dnew when non-null.
inline double kl_distill(const Eigen::MatrixXd& new_logits, const Eigen::MatrixXd& old_logits,
                         double temperature, const Eigen::VectorXd& weights,
                         Eigen::MatrixXd* dnew) {
  if (new_logits.rows() != old_logits.rows() || new_logits.cols() != old_logits.cols())
    throw std::invalid_argument("kl_distill: logit shapes must match");
  if (weights.size() != new_logits.rows())
    throw std::invalid_argument("kl_distill: weights must match logits rows");
  const double t = temperature;
  const Eigen::MatrixXd zn = new_logits / t;
  const Eigen::MatrixXd zo = old_logits / t;
  const Eigen::MatrixXd pn = softmax_rows(zn);
  const Eigen::MatrixXd po = softmax_rows(zo);
  const Eigen::VectorXd lse_n = log_sum_exp_rows(zn);
  const Eigen::VectorXd lse_o = log_sum_exp_rows(zo);
  double loss = 0.0;
  for (int i = 0; i < new_logits.rows(); ++i) {
    double kl = 0.0;
    for (int j = 0; j < new_logits.cols(); ++j) {
      const double log_po = zo(i, j) - lse_o[i];
      const double log_pn = zn(i, j) - lse_n[i];
      kl += po(i, j) * (log_po - log_pn);
    }
    loss += weights[i] * t * t * kl;
  }
  if (dnew != nullptr) {
    Eigen::MatrixXd g = (pn - po) * t;
    for (int i = 0; i < g.rows(); ++i) g.row(i) *= weights[i];
    *dnew += g;
  }
  return loss;
}

}  // namespace clbias::nn
