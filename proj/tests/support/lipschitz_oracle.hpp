#pragma once

#include <Eigen/SVD>
#include <vector>

#include "revmap/training.hpp"

namespace revmap::testing {

// Input-norm bound A of every projected layer, recomputed from the weights:
// the first layer sees the action bound, later layers the norm of the
// activated absolute row sums of the previous weight.
inline std::vector<double> input_bounds(const Decoder& dec, double max_action_norm) {
  std::vector<double> out;
  double a = max_action_norm;
  const auto ws = projected_weights(dec);
  const auto acts = projected_activations(dec);
  for (std::size_t i = 0; i < ws.size(); ++i) {
    out.push_back(a);
    Vec sums = ws[i].cwiseAbs().rowwise().sum();
    for (Eigen::Index k = 0; k < sums.size(); ++k) sums(k) = activate(acts[i], sums(k));
    a = sums.norm();
  }
  return out;
}

inline double svd_norm(const Mat& m) { return Eigen::JacobiSVD<Mat>(m).singularValues()(0); }

// Largest A_i ||W_i||_2 - lambda over the projected layers.
inline double projection_excess(const Decoder& dec, double max_action_norm, double layer_bound) {
  const auto ws = projected_weights(dec);
  const auto as = input_bounds(dec, max_action_norm);
  double worst = -layer_bound;
  for (std::size_t i = 0; i < ws.size(); ++i) worst = std::max(worst, as[i] * svd_norm(ws[i]) - layer_bound);
  return worst;
}

}  // namespace revmap::testing
