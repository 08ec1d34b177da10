#pragma once

#include <cmath>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "revmap/autodiff.hpp"

namespace revmap {

using Rng = std::mt19937_64;

// y = W x (+ b). Weight is out x in, bias out x 1.
struct DenseLayer {
  Parameter weight;
  std::optional<Parameter> bias;

  Eigen::Index in_dim() const { return weight.value.cols(); }
  Eigen::Index out_dim() const { return weight.value.rows(); }
};

// W(phi) = H (x) phi + B with H stored reshaped as h x (w*n): element
// H[i, k, j] lives at column k*n + j of row i. B is h x n and optional.
struct TensorLayer {
  Parameter h_bar;
  std::optional<Parameter> matrix_bias;
  Eigen::Index h = 0, w = 0, n = 0;
};

inline void fill_uniform(Mat& m, double bound, Rng& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index j = 0; j < m.cols(); ++j)
    for (Eigen::Index i = 0; i < m.rows(); ++i) m(i, j) = dist(rng);
}

// Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) initialization.
inline DenseLayer make_dense(const std::string& name, Eigen::Index in, Eigen::Index out, bool with_bias, Rng& rng) {
  if (in < 1 || out < 1) throw ConfigError("dense layer '" + name + "' needs positive dimensions");
  DenseLayer layer;
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  layer.weight = Parameter{name + ".weight", Mat(out, in)};
  fill_uniform(layer.weight.value, bound, rng);
  if (with_bias) {
    layer.bias = Parameter{name + ".bias", Mat(out, 1)};
    fill_uniform(layer.bias->value, bound, rng);
  }
  return layer;
}

// Tensor layers use fan_in = w * n.
inline TensorLayer make_tensor(const std::string& name, Eigen::Index h, Eigen::Index w, Eigen::Index n,
                               bool with_matrix_bias, Rng& rng) {
  if (h < 1 || w < 1 || n < 1) throw ConfigError("tensor layer '" + name + "' needs positive dimensions");
  TensorLayer layer;
  layer.h = h;
  layer.w = w;
  layer.n = n;
  const double bound = 1.0 / std::sqrt(static_cast<double>(w * n));
  layer.h_bar = Parameter{name + ".H", Mat(h, w * n)};
  fill_uniform(layer.h_bar.value, bound, rng);
  if (with_matrix_bias) {
    layer.matrix_bias = Parameter{name + ".B", Mat(h, n)};
    fill_uniform(layer.matrix_bias->value, bound, rng);
  }
  return layer;
}

inline Vec dense_forward(const DenseLayer& layer, const Vec& input) {
  if (input.size() != layer.in_dim())
    throw ShapeError("dense_forward: input length " + std::to_string(input.size()) + " != " +
                     std::to_string(layer.in_dim()));
  Vec out = layer.weight.value * input;
  if (layer.bias) out += layer.bias->value.col(0);
  return out;
}

inline Mat tensor_contract(const TensorLayer& layer, const Vec& phi) {
  if (phi.size() != layer.w)
    throw ShapeError("tensor_contract: phi length " + std::to_string(phi.size()) + " != " + std::to_string(layer.w));
  Mat out = Mat::Zero(layer.h, layer.n);
  for (Eigen::Index k = 0; k < layer.w; ++k) out += phi(k) * layer.h_bar.value.middleCols(k * layer.n, layer.n);
  if (layer.matrix_bias) out += layer.matrix_bias->value;
  return out;
}

namespace ad {

inline Var dense(Tape& t, const DenseLayer& layer, Var x) {
  Var y = linear(t, x, t.param(layer.weight));
  if (layer.bias) y = add_bias(t, y, t.param(*layer.bias));
  return y;
}

// Batched W(phi_r) u_r for every row r.
inline Var tensor(Tape& t, const TensorLayer& layer, Var phi, Var u) {
  if (t.value(phi).cols() != layer.w) throw ShapeError("tensor layer: feature width mismatch");
  if (t.value(u).cols() != layer.n) throw ShapeError("tensor layer: input width mismatch");
  Var y = linear(t, outer_flat(t, phi, u), t.param(layer.h_bar));
  if (layer.matrix_bias) y = add(t, y, linear(t, u, t.param(*layer.matrix_bias)));
  return y;
}

}  // namespace ad

// Stack of dense layers with one activation between layers. With
// `activate_output` the activation is also applied after the last layer.
struct Mlp {
  std::vector<DenseLayer> layers;
  Activation act = Activation::tanh;
  bool activate_output = false;

  static Mlp make(const std::string& name, const std::vector<Eigen::Index>& sizes, Activation act, bool with_bias,
                  bool activate_output, Rng& rng) {
    if (sizes.size() < 2) throw ConfigError("mlp '" + name + "' needs at least input and output sizes");
    Mlp m;
    m.act = act;
    m.activate_output = activate_output;
    for (std::size_t i = 0; i + 1 < sizes.size(); ++i)
      m.layers.push_back(make_dense(name + "." + std::to_string(i), sizes[i], sizes[i + 1], with_bias, rng));
    return m;
  }

  Eigen::Index in_dim() const { return layers.front().in_dim(); }
  Eigen::Index out_dim() const { return layers.back().out_dim(); }

  ad::Var forward(ad::Tape& t, ad::Var x) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = ad::dense(t, layers[i], x);
      if (i + 1 < layers.size() || activate_output) x = ad::activation(t, act, x);
    }
    return x;
  }

  Vec operator()(Vec x) const {
    for (std::size_t i = 0; i < layers.size(); ++i) {
      x = dense_forward(layers[i], x);
      if (i + 1 < layers.size() || activate_output) x = activate(act, x);
    }
    return x;
  }

  template <class Fn>
  void for_each_parameter(Fn&& fn) {
    for (auto& l : layers) {
      fn(l.weight);
      if (l.bias) fn(*l.bias);
    }
  }
  template <class Fn>
  void for_each_parameter(Fn&& fn) const {
    for (const auto& l : layers) {
      fn(l.weight);
      if (l.bias) fn(*l.bias);
    }
  }
};

}  // namespace revmap
