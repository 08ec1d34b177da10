#pragma once

// Encoders and the three decoder families:
//   * end-to-end MLP decoder over the concatenation [x, a]          (AE)
//   * hyper-linear decoder f(x, a) = H(x) a from a hypernetwork       (SCL)
//   * state-conditioned nonlinear decoder built from tensor layers    (SCN)
// plus Taylor-linearization analysis around a = 0.

#include <algorithm>
#include <cmath>
#include <random>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "revmap/autodiff.hpp"
#include "revmap/field.hpp"
#include "revmap/layers.hpp"

namespace revmap {

// Actions live in [-c, c]^n and are norm-clamped to max_norm at deployment.
struct ActionSpace {
  Eigen::Index n = 2;
  double c = 1.0;
  double max_norm = std::sqrt(2.0);

  void validate() const {
    if (n < 1) throw ConfigError("action space: n must be >= 1");
    if (!(c > 0.0)) throw ConfigError("action space: c must be > 0");
    if (!(max_norm > 0.0)) throw ConfigError("action space: max_norm must be > 0");
  }
};

// Componentwise clamp to [-c, c] followed by a norm clamp to max_norm.
inline Vec clamp_action(const ActionSpace& space, Vec a) {
  a = a.cwiseMax(-space.c).cwiseMin(space.c);
  const double norm = a.norm();
  if (norm > space.max_norm) a *= space.max_norm / norm;
  return a;
}

enum class DecoderFamily { ae, hyperlinear, scn };

inline DecoderFamily parse_family(std::string_view s) {
  if (s == "ae") return DecoderFamily::ae;
  if (s == "scl" || s == "hyperlinear") return DecoderFamily::hyperlinear;
  if (s == "scn") return DecoderFamily::scn;
  throw ConfigError("unknown decoder family '" + std::string(s) + "'");
}

inline std::string to_string(DecoderFamily f) {
  switch (f) {
    case DecoderFamily::ae: return "ae";
    case DecoderFamily::hyperlinear: return "scl";
    case DecoderFamily::scn: return "scn";
  }
  return "?";
}

// Architecture descriptor. Defaults follow the reference experiments: three
// linear layers with tanh, 256 units for MLP/hypernetwork models, 32-unit
// tensor layers over a 48-wide shared state projection for SCN.
struct Architecture {
  DecoderFamily family = DecoderFamily::scn;
  Eigen::Index state_dim = 5;
  Eigen::Index action_dim = 2;
  Activation activation = Activation::tanh;
  std::vector<Eigen::Index> encoder_hidden{256, 256};
  std::vector<Eigen::Index> decoder_hidden{256, 256};
  Eigen::Index feature_width = 48;
  std::vector<Eigen::Index> feature_hidden{};
  std::vector<Eigen::Index> tensor_hidden{32, 32};
  // SCN only: drop the matrix bias B on every tensor layer.
  bool strict_odd = true;
  ActionSpace action_space{};

  void validate() const {
    if (state_dim < 1 || action_dim < 1) throw ConfigError("architecture: dimensions must be positive");
    if (action_space.n != action_dim) throw ConfigError("architecture: action space dimension != action_dim");
    action_space.validate();
  }
};

struct Encoder {
  Mlp net;
  Eigen::Index state_dim = 0;
  Eigen::Index action_dim = 0;
};

struct AeDecoder {
  Mlp net;
  Eigen::Index state_dim = 0;
  Eigen::Index action_dim = 0;
};

// The hypernetwork output of length d*n is reshaped row-major:
// H(x)[i, j] = out[i * n + j].
struct HyperLinearDecoder {
  Mlp net;
  Eigen::Index state_dim = 0;
  Eigen::Index action_dim = 0;
};

// phi(x) is shared by every tensor layer; the action path carries no bias
// when strict_odd is set, so the decoder is exactly odd in a.
struct ScnDecoder {
  Mlp features;
  std::vector<TensorLayer> layers;
  Activation act = Activation::tanh;
  bool strict_odd = true;
  Eigen::Index state_dim = 0;
  Eigen::Index action_dim = 0;
};

using Decoder = std::variant<AeDecoder, HyperLinearDecoder, ScnDecoder>;

inline Eigen::Index decoder_state_dim(const Decoder& d) {
  return std::visit([](const auto& m) { return m.state_dim; }, d);
}
inline Eigen::Index decoder_action_dim(const Decoder& d) {
  return std::visit([](const auto& m) { return m.action_dim; }, d);
}

template <class Fn>
void for_each_parameter(Decoder& dec, Fn&& fn) {
  std::visit(
      [&](auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ScnDecoder>) {
          m.features.for_each_parameter(fn);
          for (auto& l : m.layers) {
            fn(l.h_bar);
            if (l.matrix_bias) fn(*l.matrix_bias);
          }
        } else {
          m.net.for_each_parameter(fn);
        }
      },
      dec);
}

template <class Fn>
void for_each_parameter(const Decoder& dec, Fn&& fn) {
  std::visit(
      [&](const auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ScnDecoder>) {
          m.features.for_each_parameter(fn);
          for (const auto& l : m.layers) {
            fn(l.h_bar);
            if (l.matrix_bias) fn(*l.matrix_bias);
          }
        } else {
          m.net.for_each_parameter(fn);
        }
      },
      dec);
}

inline std::vector<Eigen::Index> layer_sizes(Eigen::Index in, const std::vector<Eigen::Index>& hidden, Eigen::Index out) {
  std::vector<Eigen::Index> sizes{in};
  sizes.insert(sizes.end(), hidden.begin(), hidden.end());
  sizes.push_back(out);
  return sizes;
}

inline Encoder make_encoder(const Architecture& arch, Rng& rng) {
  return Encoder{Mlp::make("encoder", layer_sizes(2 * arch.state_dim, arch.encoder_hidden, arch.action_dim),
                           arch.activation, true, false, rng),
                 arch.state_dim, arch.action_dim};
}

inline Decoder make_decoder(const Architecture& arch, Rng& rng) {
  const auto d = arch.state_dim;
  const auto n = arch.action_dim;
  switch (arch.family) {
    case DecoderFamily::ae:
      return AeDecoder{
          Mlp::make("decoder", layer_sizes(d + n, arch.decoder_hidden, d), arch.activation, true, false, rng), d, n};
    case DecoderFamily::hyperlinear:
      return HyperLinearDecoder{
          Mlp::make("decoder", layer_sizes(d, arch.decoder_hidden, d * n), arch.activation, true, false, rng), d, n};
    case DecoderFamily::scn: {
      ScnDecoder scn;
      scn.features = Mlp::make("decoder.phi", layer_sizes(d, arch.feature_hidden, arch.feature_width),
                               arch.activation, true, true, rng);
      scn.act = arch.activation;
      scn.strict_odd = arch.strict_odd;
      scn.state_dim = d;
      scn.action_dim = n;
      const auto sizes = layer_sizes(n, arch.tensor_hidden, d);
      for (std::size_t i = 0; i + 1 < sizes.size(); ++i)
        scn.layers.push_back(make_tensor("decoder.tensor." + std::to_string(i), sizes[i + 1], arch.feature_width,
                                         sizes[i], !arch.strict_odd, rng));
      return scn;
    }
  }
  throw ConfigError("unknown decoder family");
}

// Encoder and decoder trained together, with the descriptor that built them.
struct Model {
  std::string kind;  // roster label, e.g. "scn-reg"
  Architecture arch;
  Encoder encoder;
  Decoder decoder;

  static Model build(std::string kind, const Architecture& arch, std::uint64_t seed) {
    arch.validate();
    Rng rng(seed);
    Model m;
    m.kind = std::move(kind);
    m.arch = arch;
    m.encoder = make_encoder(arch, rng);
    m.decoder = make_decoder(arch, rng);
    return m;
  }

  // Declaration order: encoder parameters first, then decoder.
  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    encoder.net.for_each_parameter([&](Parameter& p) { out.push_back(&p); });
    for_each_parameter(decoder, [&](Parameter& p) { out.push_back(&p); });
    return out;
  }
  std::vector<const Parameter*> parameters() const {
    std::vector<const Parameter*> out;
    encoder.net.for_each_parameter([&](const Parameter& p) { out.push_back(&p); });
    for_each_parameter(decoder, [&](const Parameter& p) { out.push_back(&p); });
    return out;
  }
};

namespace ad {

inline Var encode(Tape& t, const Encoder& enc, Var x, Var xdot) {
  if (t.value(x).cols() != enc.state_dim || t.value(xdot).cols() != enc.state_dim)
    throw ShapeError("encode: state/velocity dimension mismatch");
  return enc.net.forward(t, concat(t, x, xdot));
}

inline Var decode(Tape& t, const AeDecoder& dec, Var x, Var a) {
  return dec.net.forward(t, concat(t, x, a));
}

inline Var decode(Tape& t, const HyperLinearDecoder& dec, Var x, Var a) {
  return batched_matvec(t, dec.net.forward(t, x), a, dec.state_dim, dec.action_dim);
}

inline Var decode(Tape& t, const ScnDecoder& dec, Var x, Var a) {
  Var phi = dec.features.forward(t, x);
  Var u = a;
  for (std::size_t i = 0; i < dec.layers.size(); ++i) {
    u = tensor(t, dec.layers[i], phi, u);
    if (i + 1 < dec.layers.size()) u = activation(t, dec.act, u);
  }
  return u;
}

inline Var decode(Tape& t, const Decoder& dec, Var x, Var a) {
  return std::visit(
      [&](const auto& m) {
        if (t.value(x).cols() != m.state_dim || t.value(a).cols() != m.action_dim)
          throw ShapeError("decode: state/action dimension mismatch");
        if (t.value(x).rows() != t.value(a).rows()) throw ShapeError("decode: batch size mismatch");
        return decode(t, m, x, a);
      },
      dec);
}

}  // namespace ad

inline Mat row_of(const Vec& v) { return v.transpose(); }

inline Vec encode(const Encoder& enc, const Vec& x, const Vec& xdot) {
  ad::Tape t;
  return t.value(ad::encode(t, enc, t.constant(row_of(x)), t.constant(row_of(xdot)))).row(0).transpose();
}

template <class D>
Vec decode_value(const D& dec, const Vec& x, const Vec& a) {
  if (x.size() != dec.state_dim || a.size() != dec.action_dim) throw ShapeError("decode: dimension mismatch");
  ad::Tape t;
  return t.value(ad::decode(t, dec, t.constant(row_of(x)), t.constant(row_of(a)))).row(0).transpose();
}

inline Vec decode_ae(const AeDecoder& dec, const Vec& x, const Vec& a) { return decode_value(dec, x, a); }
inline Vec decode_scn(const ScnDecoder& dec, const Vec& x, const Vec& a) { return decode_value(dec, x, a); }

// H(x) as a d x n matrix.
inline Mat hyper_matrix(const HyperLinearDecoder& dec, const Vec& x) {
  if (x.size() != dec.state_dim) throw ShapeError("hyper_matrix: state dimension mismatch");
  const Vec flat = dec.net(x);
  Mat h(dec.state_dim, dec.action_dim);
  for (Eigen::Index i = 0; i < dec.state_dim; ++i)
    for (Eigen::Index j = 0; j < dec.action_dim; ++j) h(i, j) = flat(i * dec.action_dim + j);
  return h;
}

inline constexpr double kGramSchmidtTolerance = 1e-10;

// Modified Gram-Schmidt over the columns in order 0..n-1.
inline Mat gram_schmidt(const Mat& h) {
  Mat q = h;
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    for (Eigen::Index k = 0; k < j; ++k) q.col(j) -= q.col(k).dot(q.col(j)) * q.col(k);
    const double norm = q.col(j).norm();
    if (!(norm >= kGramSchmidtTolerance))
      throw DegeneracyError("gram_schmidt: column " + std::to_string(j) + " is numerically dependent (residual " +
                            std::to_string(norm) + ")");
    q.col(j) /= norm;
  }
  return q;
}

// Training mode returns H(x) a. Deploy mode orthonormalizes the columns of
// H(x) first.
inline Vec decode_hyperlinear(const HyperLinearDecoder& dec, const Vec& x, const Vec& a, bool deploy) {
  if (a.size() != dec.action_dim) throw ShapeError("decode_hyperlinear: action dimension mismatch");
  const Mat h = hyper_matrix(dec, x);
  return deploy ? Vec(gram_schmidt(h) * a) : Vec(h * a);
}

// Adapts a decoder to the field concepts. Deploy mode only changes the
// hyper-linear family.
class DecoderField {
 public:
  explicit DecoderField(const Decoder& dec, bool deploy = false) : dec_(&dec), deploy_(deploy) {}

  Eigen::Index state_dim() const { return decoder_state_dim(*dec_); }
  Eigen::Index action_dim() const { return decoder_action_dim(*dec_); }
  const Decoder& decoder() const { return *dec_; }
  bool deploy() const { return deploy_; }

  Vec operator()(const Vec& x, const Vec& a) const {
    if (x.size() != state_dim() || a.size() != action_dim()) throw ShapeError("decoder field: dimension mismatch");
    return eval_batch(row_of(x), row_of(a)).row(0).transpose();
  }

  Mat eval_batch(const Mat& xs, const Mat& as) const {
    if (deployed_hyper()) {
      const auto& h = std::get<HyperLinearDecoder>(*dec_);
      Mat out(xs.rows(), h.state_dim);
      for (Eigen::Index r = 0; r < xs.rows(); ++r)
        out.row(r) = (gram_schmidt(hyper_matrix(h, xs.row(r).transpose())) * as.row(r).transpose()).transpose();
      return out;
    }
    ad::Tape t;
    return t.value(ad::decode(t, *dec_, t.constant(xs), t.constant(as)));
  }

  FieldGrad vjp(const Vec& x, const Vec& a, const Vec& u) const {
    if (u.size() != state_dim()) throw ShapeError("decoder field: cotangent dimension mismatch");
    if (deployed_hyper()) return deployed_vjp(x, a, u);
    ad::Tape t;
    ad::Var xv = t.input(row_of(x));
    ad::Var av = t.input(row_of(a));
    ad::Var out = ad::decode(t, *dec_, xv, av);
    t.backward(out, row_of(u));
    return FieldGrad{t.grad(xv).row(0).transpose(), t.grad(av).row(0).transpose()};
  }

 private:
  bool deployed_hyper() const { return deploy_ && std::holds_alternative<HyperLinearDecoder>(*dec_); }

  // Gram-Schmidt is not recorded on the tape; the state gradient of the
  // deployed map uses central differences.
  FieldGrad deployed_vjp(const Vec& x, const Vec& a, const Vec& u) const {
    const auto& h = std::get<HyperLinearDecoder>(*dec_);
    const Mat q = gram_schmidt(hyper_matrix(h, x));
    FieldGrad g{Vec(x.size()), q.transpose() * u};
    const double step = 1e-6;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      Vec xp = x, xm = x;
      xp(i) += step;
      xm(i) -= step;
      const double fp = u.dot(gram_schmidt(hyper_matrix(h, xp)) * a);
      const double fm = u.dot(gram_schmidt(hyper_matrix(h, xm)) * a);
      g.state(i) = (fp - fm) / (2.0 * step);
    }
    return g;
  }

  const Decoder* dec_;
  bool deploy_;
};

// J^a(x, 0): derivative of the decoder with respect to the action at a = 0.
template <DifferentiableField F>
Mat jacobian_at_zero(const F& f, const Vec& x) {
  return action_jacobian(f, x, Vec::Zero(f.action_dim()));
}

inline Mat jacobian_at_zero(const Decoder& dec, const Vec& x) { return jacobian_at_zero(DecoderField(dec), x); }

struct LinearizationRecord {
  double magnitude = 0.0;
  // Mean over states and directions of ||f(x, m u) - f(x, 0) - J^a(x, 0) m u||^2.
  double gap = 0.0;
};

struct LinearizationOptions {
  int directions = 64;
  std::uint64_t seed = 7;
};

// Seeded unit directions in R^n, fixed across magnitudes.
inline Mat unit_directions(Eigen::Index n, int count, Rng& rng) {
  std::normal_distribution<double> dist;
  Mat dirs(count, n);
  for (int k = 0; k < count; ++k) {
    Vec v(n);
    do {
      for (Eigen::Index j = 0; j < n; ++j) v(j) = dist(rng);
    } while (v.norm() < 1e-12);
    dirs.row(k) = v.normalized().transpose();
  }
  return dirs;
}

// `states` holds one test state per row.
template <DifferentiableField F>
std::vector<LinearizationRecord> linearization_gap(const F& f, const Mat& states, const std::vector<double>& magnitudes,
                                                   const LinearizationOptions& opts = {}) {
  if (states.rows() == 0) throw InputError("linearization_gap: empty dataset");
  if (states.cols() != f.state_dim()) throw ShapeError("linearization_gap: state dimension mismatch");
  for (std::size_t i = 0; i < magnitudes.size(); ++i) {
    if (!(magnitudes[i] >= 0.0)) throw InputError("linearization_gap: magnitudes must be >= 0");
    if (i > 0 && magnitudes[i] < magnitudes[i - 1]) throw InputError("linearization_gap: magnitudes must be sorted");
  }
  const Eigen::Index n = f.action_dim();
  const Eigen::Index rows = states.rows();
  const int k = opts.directions;
  Rng rng(opts.seed);

  // Every (state, direction) pair becomes one batch row.
  Mat xs(rows * k, states.cols());
  Mat dirs(rows * k, n);
  Mat lin(rows * k, f.state_dim());
  for (Eigen::Index r = 0; r < rows; ++r) {
    const Vec x = states.row(r).transpose();
    const Mat jac = jacobian_at_zero(f, x);
    const Mat u = unit_directions(n, k, rng);
    for (int j = 0; j < k; ++j) {
      xs.row(r * k + j) = states.row(r);
      dirs.row(r * k + j) = u.row(j);
      lin.row(r * k + j) = (jac * u.row(j).transpose()).transpose();
    }
  }
  // Same batch shape as the predictions so that gap(0) is exactly zero.
  const Mat base = eval_batch(f, xs, Mat::Zero(rows * k, n));

  std::vector<LinearizationRecord> out;
  out.reserve(magnitudes.size());
  for (double m : magnitudes) {
    const Mat pred = eval_batch(f, xs, m * dirs);
    const Mat resid = pred - base - m * lin;
    out.push_back({m, resid.rowwise().squaredNorm().mean()});
  }
  return out;
}

}  // namespace revmap
