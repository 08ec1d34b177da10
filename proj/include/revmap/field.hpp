#pragma once

// Vector-field concepts shared by rollouts, bound estimation and the
// linearization analysis. A field maps (state x, action a) to a velocity.
// Trained decoders are adapted through DecoderField (action_maps.hpp);
// analytic fields used in tests implement the same interface directly.

#include <concepts>

#include "revmap/autodiff.hpp"

namespace revmap {

// Gradient of u^T f(x, a) with respect to x and a.
struct FieldGrad {
  Vec state;
  Vec action;
};

template <class F>
concept VectorField = requires(const F& f, const Vec& x, const Vec& a) {
  { f.state_dim() } -> std::convertible_to<Eigen::Index>;
  { f.action_dim() } -> std::convertible_to<Eigen::Index>;
  { f(x, a) } -> std::convertible_to<Vec>;
};

template <class F>
concept DifferentiableField = VectorField<F> && requires(const F& f, const Vec& x, const Vec& a, const Vec& u) {
  { f.vjp(x, a, u) } -> std::convertible_to<FieldGrad>;
};

template <class F>
concept BatchField = VectorField<F> && requires(const F& f, const Mat& xs, const Mat& as) {
  { f.eval_batch(xs, as) } -> std::convertible_to<Mat>;
};

// Rows of `xs` and `as` are paired samples; returns one velocity per row.
template <VectorField F>
Mat eval_batch(const F& f, const Mat& xs, const Mat& as) {
  if (xs.rows() != as.rows()) throw ShapeError("eval_batch: row count mismatch");
  if constexpr (BatchField<F>) {
    return f.eval_batch(xs, as);
  } else {
    Mat out(xs.rows(), f.state_dim());
    for (Eigen::Index r = 0; r < xs.rows(); ++r) out.row(r) = f(Vec(xs.row(r).transpose()), Vec(as.row(r).transpose())).transpose();
    return out;
  }
}

// d x d Jacobian of f with respect to the state, one reverse pass per row.
template <DifferentiableField F>
Mat state_jacobian(const F& f, const Vec& x, const Vec& a) {
  const Eigen::Index d = f.state_dim();
  Mat jac(d, x.size());
  for (Eigen::Index i = 0; i < d; ++i) jac.row(i) = f.vjp(x, a, Vec::Unit(d, i)).state.transpose();
  return jac;
}

// d x n Jacobian of f with respect to the action.
template <DifferentiableField F>
Mat action_jacobian(const F& f, const Vec& x, const Vec& a) {
  const Eigen::Index d = f.state_dim();
  Mat jac(d, a.size());
  for (Eigen::Index i = 0; i < d; ++i) jac.row(i) = f.vjp(x, a, Vec::Unit(d, i)).action.transpose();
  return jac;
}

}  // namespace revmap
