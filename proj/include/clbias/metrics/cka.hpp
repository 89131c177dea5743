#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <utility>
#include <vector>

#include "clbias/layout.hpp"
#include "clbias/metrics/metrics.hpp"
#include "clbias/nn/mlp.hpp"

namespace clbias::metrics {

// Linear centered kernel alignment between two row-aligned representation
// matrices: ||Yc' Xc||_F^2 / (||Xc' Xc||_F ||Yc' Yc||_F). Invariant to
// orthogonal rotation and isotropic scaling of either argument.
inline double cka_linear(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y) {
  if (x.rows() != y.rows()) throw std::invalid_argument("cka_linear: row counts differ");
  if (x.rows() < 2) throw std::invalid_argument("cka_linear: need n >= 2");
  const Eigen::MatrixXd xc = x.rowwise() - x.colwise().mean();
  const Eigen::MatrixXd yc = y.rowwise() - y.colwise().mean();
  const double cross = (yc.transpose() * xc).squaredNorm();
  const double nx = (xc.transpose() * xc).norm();
  const double ny = (yc.transpose() * yc).norm();
  if (nx == 0.0 || ny == 0.0)
    throw std::invalid_argument("cka_linear: zero-variance input");
  return cross / (nx * ny);
}

// CKA between the trunk representations of the original and bias-flipped
// halves of a paired test set. Low values mean the representation separates
// the two groups, i.e. the model reads the spurious feature.
inline double cka_bias_probe(const nn::MlpModel& model,
                             const std::vector<std::pair<data::BiasedSample,
                                                         data::BiasedSample>>& pairs) {
  if (pairs.empty()) throw std::invalid_argument("cka_bias_probe: pairing missing");
  std::vector<data::BiasedSample> originals, flipped;
  originals.reserve(pairs.size());
  flipped.reserve(pairs.size());
  for (const auto& [o, f] : pairs) {
    originals.push_back(o);
    flipped.push_back(f);
  }
  const Eigen::MatrixXd fo = nn::extract_features(model, to_batch(originals).inputs);
  const Eigen::MatrixXd ff = nn::extract_features(model, to_batch(flipped).inputs);
  return cka_linear(fo, ff);
}

}  // namespace clbias::metrics
