#pragma once

// Minimal reverse-mode differentiation over batched dense matrices.
//
// Every node value is a (batch x features) matrix. A Tape records one forward
// evaluation; backward() replays it in reverse and accumulates gradients for
// every node that depends on a differentiable leaf (input or parameter).

#include <Eigen/Dense>

#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

#include "revmap/errors.hpp"

namespace revmap {

using Mat = Eigen::MatrixXd;
using Vec = Eigen::VectorXd;

// A named trainable array. Vectors (biases) are stored as n x 1 matrices.
struct Parameter {
  std::string name;
  Mat value;
};

// Registered activations. All of them are odd with sigma(0) = 0.
enum class Activation { tanh, sin, identity };

inline Activation parse_activation(std::string_view name) {
  if (name == "tanh") return Activation::tanh;
  if (name == "sin") return Activation::sin;
  if (name == "identity") return Activation::identity;
  throw ConfigError("unregistered activation '" + std::string(name) + "'");
}

inline std::string to_string(Activation kind) {
  switch (kind) {
    case Activation::tanh: return "tanh";
    case Activation::sin: return "sin";
    case Activation::identity: return "identity";
  }
  throw ConfigError("unregistered activation");
}

inline double activate(Activation kind, double z) {
  switch (kind) {
    case Activation::tanh: return std::tanh(z);
    case Activation::sin: return std::sin(z);
    case Activation::identity: return z;
  }
  throw ConfigError("unregistered activation");
}

template <class Derived>
Mat activate(Activation kind, const Eigen::MatrixBase<Derived>& z) {
  switch (kind) {
    case Activation::tanh: return z.array().tanh().matrix();
    case Activation::sin: return z.array().sin().matrix();
    case Activation::identity: return z;
  }
  throw ConfigError("unregistered activation");
}

namespace ad {

struct Var {
  std::size_t id = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Mat& out_grad)>;

  Tape() { nodes_.reserve(64); }
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = default;
  Tape& operator=(Tape&&) = default;

  // Leaf that never receives a gradient.
  Var constant(Mat value) { return push(std::move(value), false, {}); }

  // Differentiable leaf (e.g. the state fed to a Jacobian query).
  Var input(Mat value) { return push(std::move(value), true, {}); }

  // Parameter leaf. Repeated lookups of the same Parameter share one node so
  // gradients of shared weights accumulate.
  Var param(const Parameter& p) {
    if (auto it = params_.find(&p); it != params_.end()) return Var{it->second};
    Node n;
    n.ref = &p.value;
    n.needs_grad = true;
    nodes_.push_back(std::move(n));
    const std::size_t id = nodes_.size() - 1;
    params_.emplace(&p, id);
    return Var{id};
  }

  // Appends an operation node. `fn` is called during backward with the
  // accumulated gradient of this node.
  Var record(Mat value, bool needs_grad, Backward fn) {
    return push(std::move(value), needs_grad, needs_grad ? std::move(fn) : Backward{});
  }

  const Mat& value(Var v) const {
    const Node& n = nodes_.at(v.id);
    return n.ref ? *n.ref : n.value;
  }

  bool requires_grad(Var v) const { return nodes_.at(v.id).needs_grad; }

  std::size_t size() const noexcept { return nodes_.size(); }
  bool consumed() const noexcept { return consumed_; }

  void accumulate(Var v, const Mat& g) {
    Node& n = nodes_[v.id];
    if (!n.needs_grad) return;
    if (n.grad.size() == 0) {
      n.grad = g;
    } else {
      n.grad += g;
    }
  }

  // Propagates `seed` (same shape as the output) back through the tape.
  void backward(Var out, const Mat& seed) {
    if (consumed_) throw UsageError("tape already consumed by a previous backward pass");
    const Mat& v = value(out);
    if (seed.rows() != v.rows() || seed.cols() != v.cols())
      throw ShapeError("backward seed shape does not match output");
    consumed_ = true;
    if (!nodes_[out.id].needs_grad) return;
    accumulate(out, seed);
    for (std::size_t i = out.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.back || n.grad.size() == 0) continue;
      // The closure may append to other nodes' grads but never to this one.
      n.back(*this, n.grad);
    }
  }

  // Scalar convenience: seed 1.
  void backward(Var scalar_out) { backward(scalar_out, Mat::Ones(1, 1)); }

  // Gradient of the seeded output with respect to `v`; zeros when `v` did
  // not influence the output.
  Mat grad(Var v) const {
    const Node& n = nodes_.at(v.id);
    if (n.grad.size() == 0) {
      const Mat& val = value(v);
      return Mat::Zero(val.rows(), val.cols());
    }
    return n.grad;
  }

  Mat grad(const Parameter& p) const {
    if (auto it = params_.find(&p); it != params_.end()) return grad(Var{it->second});
    return Mat::Zero(p.value.rows(), p.value.cols());
  }

 private:
  struct Node {
    Mat value;
    const Mat* ref = nullptr;
    Mat grad;
    bool needs_grad = false;
    Backward back;
  };

  Var push(Mat value, bool needs_grad, Backward fn) {
    Node n;
    n.value = std::move(value);
    n.needs_grad = needs_grad;
    n.back = std::move(fn);
    nodes_.push_back(std::move(n));
    return Var{nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> params_;
  bool consumed_ = false;
};

inline void require_same_shape(const Mat& a, const Mat& b, const char* op) {
  if (a.rows() != b.rows() || a.cols() != b.cols())
    throw ShapeError(std::string(op) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
}

// x (B x in) times W^T for W (out x in).
inline Var linear(Tape& t, Var x, Var w) {
  const Mat& xv = t.value(x);
  const Mat& wv = t.value(w);
  if (xv.cols() != wv.cols())
    throw ShapeError("linear: input width " + std::to_string(xv.cols()) + " != weight in-dimension " +
                     std::to_string(wv.cols()));
  Mat out = xv * wv.transpose();
  const bool ng = t.requires_grad(x) || t.requires_grad(w);
  return t.record(std::move(out), ng, [x, w](Tape& tp, const Mat& g) {
    if (tp.requires_grad(x)) tp.accumulate(x, g * tp.value(w));
    if (tp.requires_grad(w)) tp.accumulate(w, g.transpose() * tp.value(x));
  });
}

// Adds a column-vector bias (out x 1) to every row.
inline Var add_bias(Tape& t, Var y, Var b) {
  const Mat& yv = t.value(y);
  const Mat& bv = t.value(b);
  if (bv.cols() != 1 || bv.rows() != yv.cols()) throw ShapeError("add_bias: bias length mismatch");
  Mat out = yv.rowwise() + bv.col(0).transpose();
  const bool ng = t.requires_grad(y) || t.requires_grad(b);
  return t.record(std::move(out), ng, [y, b](Tape& tp, const Mat& g) {
    tp.accumulate(y, g);
    if (tp.requires_grad(b)) tp.accumulate(b, g.colwise().sum().transpose());
  });
}

inline Var activation(Tape& t, Activation kind, Var x) {
  if (kind == Activation::identity) return x;
  const Mat& xv = t.value(x);
  Mat out = activate(kind, xv);
  const bool ng = t.requires_grad(x);
  if (kind == Activation::tanh) {
    const std::size_t self = t.size();
    return t.record(std::move(out), ng, [x, self](Tape& tp, const Mat& g) {
      const Mat& y = tp.value(Var{self});
      tp.accumulate(x, (g.array() * (1.0 - y.array().square())).matrix());
    });
  }
  return t.record(std::move(out), ng, [x](Tape& tp, const Mat& g) {
    tp.accumulate(x, (g.array() * tp.value(x).array().cos()).matrix());
  });
}

// Column-wise concatenation [a | b].
inline Var concat(Tape& t, Var a, Var b) {
  const Mat& av = t.value(a);
  const Mat& bv = t.value(b);
  if (av.rows() != bv.rows()) throw ShapeError("concat: row count mismatch");
  Mat out(av.rows(), av.cols() + bv.cols());
  out << av, bv;
  const Eigen::Index na = av.cols();
  const Eigen::Index nb = bv.cols();
  const bool ng = t.requires_grad(a) || t.requires_grad(b);
  return t.record(std::move(out), ng, [a, b, na, nb](Tape& tp, const Mat& g) {
    tp.accumulate(a, g.leftCols(na));
    tp.accumulate(b, g.rightCols(nb));
  });
}

// Row-wise flattened outer product: out(r, k*n + j) = phi(r, k) * u(r, j).
// Contracting this with a reshaped (h x w*n) tensor realizes W(x) u.
inline Var outer_flat(Tape& t, Var phi, Var u) {
  const Mat& pv = t.value(phi);
  const Mat& uv = t.value(u);
  if (pv.rows() != uv.rows()) throw ShapeError("outer_flat: row count mismatch");
  const Eigen::Index rows = pv.rows(), w = pv.cols(), n = uv.cols();
  Mat out(rows, w * n);
  for (Eigen::Index k = 0; k < w; ++k)
    for (Eigen::Index j = 0; j < n; ++j) out.col(k * n + j) = pv.col(k).cwiseProduct(uv.col(j));
  const bool ng = t.requires_grad(phi) || t.requires_grad(u);
  return t.record(std::move(out), ng, [phi, u, w, n](Tape& tp, const Mat& g) {
    const Mat& p = tp.value(phi);
    const Mat& a = tp.value(u);
    if (tp.requires_grad(phi)) {
      Mat gp = Mat::Zero(p.rows(), w);
      for (Eigen::Index k = 0; k < w; ++k)
        for (Eigen::Index j = 0; j < n; ++j) gp.col(k) += g.col(k * n + j).cwiseProduct(a.col(j));
      tp.accumulate(phi, gp);
    }
    if (tp.requires_grad(u)) {
      Mat gu = Mat::Zero(a.rows(), n);
      for (Eigen::Index k = 0; k < w; ++k)
        for (Eigen::Index j = 0; j < n; ++j) gu.col(j) += g.col(k * n + j).cwiseProduct(p.col(k));
      tp.accumulate(u, gu);
    }
  });
}

// Per-row matrix-vector product with row-major flattened matrices:
// out(r, i) = sum_j hflat(r, i*n + j) * a(r, j).
inline Var batched_matvec(Tape& t, Var hflat, Var a, Eigen::Index rows_d, Eigen::Index cols_n) {
  const Mat& hv = t.value(hflat);
  const Mat& av = t.value(a);
  if (hv.cols() != rows_d * cols_n || av.cols() != cols_n || hv.rows() != av.rows())
    throw ShapeError("batched_matvec: shape mismatch");
  Mat out = Mat::Zero(hv.rows(), rows_d);
  for (Eigen::Index i = 0; i < rows_d; ++i)
    for (Eigen::Index j = 0; j < cols_n; ++j) out.col(i) += hv.col(i * cols_n + j).cwiseProduct(av.col(j));
  const bool ng = t.requires_grad(hflat) || t.requires_grad(a);
  return t.record(std::move(out), ng, [hflat, a, rows_d, cols_n](Tape& tp, const Mat& g) {
    const Mat& h = tp.value(hflat);
    const Mat& act = tp.value(a);
    if (tp.requires_grad(hflat)) {
      Mat gh(h.rows(), h.cols());
      for (Eigen::Index i = 0; i < rows_d; ++i)
        for (Eigen::Index j = 0; j < cols_n; ++j) gh.col(i * cols_n + j) = g.col(i).cwiseProduct(act.col(j));
      tp.accumulate(hflat, gh);
    }
    if (tp.requires_grad(a)) {
      Mat ga = Mat::Zero(act.rows(), cols_n);
      for (Eigen::Index i = 0; i < rows_d; ++i)
        for (Eigen::Index j = 0; j < cols_n; ++j) ga.col(j) += g.col(i).cwiseProduct(h.col(i * cols_n + j));
      tp.accumulate(a, ga);
    }
  });
}

inline Var add(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "add");
  Mat out = t.value(a) + t.value(b);
  const bool ng = t.requires_grad(a) || t.requires_grad(b);
  return t.record(std::move(out), ng, [a, b](Tape& tp, const Mat& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, g);
  });
}

inline Var sub(Tape& t, Var a, Var b) {
  require_same_shape(t.value(a), t.value(b), "sub");
  Mat out = t.value(a) - t.value(b);
  const bool ng = t.requires_grad(a) || t.requires_grad(b);
  return t.record(std::move(out), ng, [a, b](Tape& tp, const Mat& g) {
    tp.accumulate(a, g);
    tp.accumulate(b, -g);
  });
}

inline Var neg(Tape& t, Var a) {
  Mat out = -t.value(a);
  return t.record(std::move(out), t.requires_grad(a), [a](Tape& tp, const Mat& g) { tp.accumulate(a, -g); });
}

inline Var scale(Tape& t, Var a, double c) {
  Mat out = c * t.value(a);
  return t.record(std::move(out), t.requires_grad(a), [a, c](Tape& tp, const Mat& g) { tp.accumulate(a, c * g); });
}

// Sum of all squared entries, as a 1 x 1 node.
inline Var sum_squares(Tape& t, Var a) {
  Mat out(1, 1);
  out(0, 0) = t.value(a).squaredNorm();
  return t.record(std::move(out), t.requires_grad(a), [a](Tape& tp, const Mat& g) {
    tp.accumulate(a, (2.0 * g(0, 0)) * tp.value(a));
  });
}

}  // namespace ad
}  // namespace revmap
