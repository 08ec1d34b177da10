#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "revmap/autodiff.hpp"

namespace revmap {

struct AdamConfig {
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<Mat> first_moment;
  std::vector<Mat> second_moment;
  long step = 0;

  AdamState() = default;
  explicit AdamState(AdamConfig cfg) : config(cfg) {}
};

// One bias-corrected Adam update. Moment buffers are created lazily to
// mirror the parameter shapes. No parameter is touched when any gradient is
// nonfinite.
inline void adam_step(std::span<Parameter* const> params, std::span<const Mat> grads, AdamState& state) {
  if (params.size() != grads.size()) throw ShapeError("adam_step: parameter and gradient counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].rows() != params[i]->value.rows() || grads[i].cols() != params[i]->value.cols())
      throw ShapeError("adam_step: gradient shape mismatch for '" + params[i]->name + "'");
    if (!grads[i].allFinite()) throw TrainingError("nonfinite gradient for parameter '" + params[i]->name + "'");
  }
  if (state.first_moment.empty()) {
    for (auto* p : params) {
      state.first_moment.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
      state.second_moment.push_back(Mat::Zero(p->value.rows(), p->value.cols()));
    }
  }
  if (state.first_moment.size() != params.size()) throw ShapeError("adam_step: optimizer state does not match parameters");

  ++state.step;
  const auto& c = state.config;
  const double t = static_cast<double>(state.step);
  const double correction1 = 1.0 - std::pow(c.beta1, t);
  const double correction2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Mat& m = state.first_moment[i];
    Mat& v = state.second_moment[i];
    m = c.beta1 * m + (1.0 - c.beta1) * grads[i];
    v = c.beta2 * v + (1.0 - c.beta2) * grads[i].cwiseProduct(grads[i]);
    params[i]->value.array() -=
        c.learning_rate * (m.array() / correction1) / ((v.array() / correction2).sqrt() + c.epsilon);
  }
}

}  // namespace revmap
