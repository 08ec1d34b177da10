#pragma once

// CAE training: reconstruction loss, the odd-behaviour regularizer, mini-batch
// Adam and the layerwise Lipschitz projection applied after every update.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "revmap/action_maps.hpp"
#include "revmap/adam.hpp"
#include "revmap/dataset.hpp"
#include "revmap/spectral.hpp"

namespace revmap {

// ---------------------------------------------------------------- losses

// 1/2 ||xdot - pred||^2
inline double recon_loss(const Vec& xdot, const Vec& pred) {
  if (xdot.size() != pred.size()) throw ShapeError("recon_loss: dimension mismatch");
  return 0.5 * (xdot - pred).squaredNorm();
}

struct RegularizerWeights {
  double inverse = 1.0;       // ||-xdot - f(x, -a)||^2
  double zero_decoder = 1.0;  // ||f(x, 0)||^2
  double zero_encoder = 1.0;  // ||g(x, 0)||^2
};

struct RegularizerTerms {
  double inverse = 0.0;
  double zero_decoder = 0.0;
  double zero_encoder = 0.0;
  double total = 0.0;
};

// Single-sample regularizer with a = g(x, xdot). `f(x, a)` and `g(x, xdot)`
// are any callables returning vectors.
template <class F, class G>
RegularizerTerms reversibility_regularizer(const F& f, const G& g, const Vec& x, const Vec& xdot,
                                           const RegularizerWeights& w = {}) {
  const Vec a = g(x, xdot);
  RegularizerTerms t;
  t.inverse = (-xdot - Vec(f(x, Vec(-a)))).squaredNorm();
  t.zero_decoder = Vec(f(x, Vec(Vec::Zero(a.size())))).squaredNorm();
  t.zero_encoder = Vec(g(x, Vec(Vec::Zero(xdot.size())))).squaredNorm();
  t.total = w.inverse * t.inverse + w.zero_decoder * t.zero_decoder + w.zero_encoder * t.zero_encoder;
  return t;
}

inline RegularizerTerms reversibility_regularizer(const Decoder& dec, const Encoder& enc, const Vec& x, const Vec& xdot,
                                                  const RegularizerWeights& w = {}) {
  DecoderField f(dec);
  return reversibility_regularizer(
      f, [&](const Vec& s, const Vec& v) { return encode(enc, s, v); }, x, xdot, w);
}

struct TrainConfig {
  int epochs = 1000;
  int batch_size = 256;
  double learning_rate = 1e-3;
  bool regularizer = false;
  RegularizerWeights weights{};
  bool lipschitz = false;
  // Restore the parameters of the epoch with the lowest validation loss.
  bool keep_best = true;
  std::uint64_t seed = 0;

  void validate() const {
    if (epochs <= 0) throw ConfigError("train: epochs must be > 0");
    if (batch_size < 1) throw ConfigError("train: batch size must be >= 1");
    if (!(learning_rate > 0.0)) throw ConfigError("train: learning rate must be > 0");
    if (weights.inverse < 0 || weights.zero_decoder < 0 || weights.zero_encoder < 0)
      throw ConfigError("train: regularizer weights must be >= 0");
  }
};

// Mean CAE objective over the rows of a batch, recorded on the tape.
struct BatchLoss {
  ad::Var total;
  ad::Var recon;
};

inline BatchLoss cae_batch_loss(ad::Tape& t, const Model& m, const Mat& xs, const Mat& xdots, const TrainConfig& cfg) {
  const double inv_rows = 1.0 / static_cast<double>(xs.rows());
  ad::Var x = t.constant(xs);
  ad::Var xd = t.constant(xdots);
  ad::Var a = ad::encode(t, m.encoder, x, xd);
  ad::Var pred = ad::decode(t, m.decoder, x, a);
  ad::Var recon = ad::scale(t, ad::sum_squares(t, ad::sub(t, xd, pred)), 0.5 * inv_rows);
  if (!cfg.regularizer) return {recon, recon};

  // Batch augmentation with the inverse action -a and zero inputs.
  ad::Var total = recon;
  const auto& w = cfg.weights;
  if (w.inverse > 0.0) {
    ad::Var inv = ad::decode(t, m.decoder, x, ad::neg(t, a));
    ad::Var term = ad::sum_squares(t, ad::add(t, xd, inv));  // ||-xd - f(x,-a)||^2
    total = ad::add(t, total, ad::scale(t, term, w.inverse * inv_rows));
  }
  if (w.zero_decoder > 0.0) {
    ad::Var zero_a = t.constant(Mat::Zero(xs.rows(), m.arch.action_dim));
    ad::Var term = ad::sum_squares(t, ad::decode(t, m.decoder, x, zero_a));
    total = ad::add(t, total, ad::scale(t, term, w.zero_decoder * inv_rows));
  }
  if (w.zero_encoder > 0.0) {
    ad::Var zero_v = t.constant(Mat::Zero(xs.rows(), m.arch.state_dim));
    ad::Var term = ad::sum_squares(t, ad::encode(t, m.encoder, x, zero_v));
    total = ad::add(t, total, ad::scale(t, term, w.zero_encoder * inv_rows));
  }
  return {total, recon};
}

// Reconstruction f(x, g(x, xdot)) for every row.
inline Mat reconstruct(const Model& m, const Mat& xs, const Mat& xdots) {
  ad::Tape t;
  ad::Var x = t.constant(xs);
  ad::Var a = ad::encode(t, m.encoder, x, t.constant(xdots));
  return t.value(ad::decode(t, m.decoder, x, a));
}

// Mean of squared component errors (the usual MSE convention).
inline double reconstruction_mse(const Model& m, const Dataset& ds) {
  if (ds.size() == 0) throw InputError("reconstruction_mse: empty dataset");
  return (reconstruct(m, ds.states, ds.velocities) - ds.velocities).array().square().mean();
}

// Latent actions g(x, xdot) for every row.
inline Mat encode_batch(const Model& m, const Mat& xs, const Mat& xdots) {
  ad::Tape t;
  return t.value(ad::encode(t, m.encoder, t.constant(xs), t.constant(xdots)));
}

// Action space that covers the latents the encoder produces on `ds`.
inline ActionSpace latent_action_space(const Model& m, const Dataset& ds) {
  const Mat lat = encode_batch(m, ds.states, ds.velocities);
  ActionSpace s;
  s.n = m.arch.action_dim;
  s.c = lat.cwiseAbs().maxCoeff();
  s.max_norm = lat.rowwise().norm().maxCoeff();
  if (!(s.c > 0.0) || !(s.max_norm > 0.0)) throw TrainingError("latent_action_space: encoder collapsed to zero");
  return s;
}

// ---------------------------------------------------------------- splits

struct DataSplit {
  Dataset train;
  Dataset val;
  Dataset test;
};

struct SplitFractions {
  double train = 0.9;
  double val = 0.05;
  double test = 0.05;
};

// Seeded shuffle then contiguous train / val / test blocks. Validation and
// test sizes are rounded down; the remainder goes to train.
inline DataSplit split_dataset(const Dataset& ds, const SplitFractions& f, std::uint64_t seed) {
  if (ds.size() < 20) throw InputError("split_dataset: need at least 20 samples, got " + std::to_string(ds.size()));
  if (f.train < 0 || f.val < 0 || f.test < 0 || std::abs(f.train + f.val + f.test - 1.0) > 1e-9)
    throw InputError("split_dataset: fractions must be nonnegative and sum to 1");
  std::vector<Eigen::Index> idx(static_cast<std::size_t>(ds.size()));
  std::iota(idx.begin(), idx.end(), Eigen::Index{0});
  Rng rng(seed);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto n = static_cast<std::size_t>(ds.size());
  const auto n_val = static_cast<std::size_t>(std::floor(f.val * static_cast<double>(n) + 1e-9));
  const auto n_test = static_cast<std::size_t>(std::floor(f.test * static_cast<double>(n) + 1e-9));
  const std::size_t n_train = n - n_val - n_test;
  auto slice = [&](std::size_t b, std::size_t e) {
    return ds.subset(std::vector<Eigen::Index>(idx.begin() + static_cast<std::ptrdiff_t>(b), idx.begin() + static_cast<std::ptrdiff_t>(e)));
  };
  return {slice(0, n_train), slice(n_train, n_train + n_val), slice(n_train + n_val, n)};
}

// ---------------------------------------------------------------- projection

struct LipschitzConfig {
  double global_bound = 1.0;                 // Lambda
  std::optional<double> layer_bound;         // lambda; Lambda^(1/depth) when unset
  int p = 2;
  double max_action_norm = std::sqrt(2.0);   // M, the initial input-norm bound
  // Dense SVD for ||H_bar||_2. Power iteration can stall on nearly equal top
  // singular values and under-project; it is used only when exact is false.
  bool exact = true;
  PowerIterationOptions power{5, 500, 1e-12};

  double per_layer(std::size_t depth) const {
    if (layer_bound) return *layer_bound;
    return std::pow(global_bound, 1.0 / static_cast<double>(depth));
  }

  void validate() const {
    if (!(global_bound > 0.0)) throw ConfigError("lipschitz: global bound must be > 0");
    if (layer_bound && !(*layer_bound > 0.0)) throw ConfigError("lipschitz: layer bound must be > 0");
    if (!(max_action_norm > 0.0)) throw ConfigError("lipschitz: max action norm must be > 0");
    if (p != 2) throw ConfigError("lipschitz: only p = 2 is supported");
  }
};

struct LayerProjection {
  double input_bound = 0.0;    // running bound A on this layer's input norm
  double spectral_norm = 0.0;  // ||H_bar||_2 after projection
  double scale = 1.0;          // divisor applied to the weights
};

struct ProjectionReport {
  double layer_bound = 0.0;
  std::vector<LayerProjection> layers;
};

// Warm-start vectors for the per-layer power iterations, reused across calls.
using SpectralCache = std::vector<Vec>;

namespace detail {

// The matrices constrained by the projection, with the activation that
// follows each one (identity after the last).
struct ProjectedLayer {
  Mat* weight;
  Activation next;
};

inline std::vector<ProjectedLayer> projected_layers(Decoder& dec) {
  std::vector<ProjectedLayer> out;
  std::visit(
      [&](auto& m) {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ScnDecoder>) {
          for (std::size_t i = 0; i < m.layers.size(); ++i)
            out.push_back({&m.layers[i].h_bar.value, i + 1 < m.layers.size() ? m.act : Activation::identity});
        } else {
          for (std::size_t i = 0; i < m.net.layers.size(); ++i)
            out.push_back({&m.net.layers[i].weight.value,
                           (i + 1 < m.net.layers.size() || m.net.activate_output) ? m.net.act : Activation::identity});
        }
      },
      dec);
  if (out.empty()) throw ConfigError("lipschitz_project: decoder has no projectable layers");
  return out;
}

}  // namespace detail

// Running input-norm bound for the layer after `weight`:
// || sigma(row-wise sums of |weight|) ||_2. For tensor layers the row sums
// of the h x (w*n) reshape are the sums over both trailing tensor indices.
inline double next_input_bound(const Mat& weight, Activation next) {
  const Vec sums = weight.cwiseAbs().rowwise().sum();
  return activate(next, sums).norm();
}

// Layerwise projection walking the decoder's action path in order. Each
// weight matrix is divided by max(1, A * ||W||_2 / lambda), after which the
// bound A for the next layer is recomputed from the projected weights.
inline ProjectionReport lipschitz_project(Decoder& dec, const LipschitzConfig& lip, SpectralCache* cache = nullptr) {
  lip.validate();
  auto layers = detail::projected_layers(dec);
  if (cache && cache->size() != layers.size()) cache->assign(layers.size(), Vec());
  ProjectionReport report;
  report.layer_bound = lip.per_layer(layers.size());
  double bound = lip.max_action_norm;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    Mat& w = *layers[i].weight;
    bool converged = false;
    double sigma = 0.0;
    if (!lip.exact) sigma = spectral_norm(w, cache ? &(*cache)[i] : nullptr, lip.power, &converged);
    if (!converged) sigma = spectral_norm_exact(w);
    const double scale = std::max(1.0, bound * sigma / report.layer_bound);
    if (scale > 1.0) w /= scale;
    report.layers.push_back({bound, sigma / scale, scale});
    bound = next_input_bound(w, layers[i].next);
  }
  return report;
}

inline ProjectionReport lipschitz_project(Model& m, const LipschitzConfig& lip, SpectralCache* cache = nullptr) {
  return lipschitz_project(m.decoder, lip, cache);
}

// Matrices walked by the projection, in order (read-only view for checks).
inline std::vector<Mat> projected_weights(const Decoder& dec) {
  Decoder copy = dec;
  std::vector<Mat> out;
  for (const auto& l : detail::projected_layers(copy)) out.push_back(*l.weight);
  return out;
}

inline std::vector<Activation> projected_activations(const Decoder& dec) {
  Decoder copy = dec;
  std::vector<Activation> out;
  for (const auto& l : detail::projected_layers(copy)) out.push_back(l.next);
  return out;
}

// ---------------------------------------------------------------- training

struct TrainReport {
  std::vector<double> train_loss;  // per epoch, sample-weighted mean of batch objectives
  std::vector<double> val_loss;    // per epoch, mean 1/2||xdot - f(x, g(x, xdot))||^2 on validation
  double test_mse = 0.0;
  double log10_test_mse = 0.0;
  double wall_clock_seconds = 0.0;
  std::uint64_t seed = 0;
  long steps = 0;
  int best_epoch = -1;  // epoch whose parameters were kept; -1 keeps the last
};

// Flat key=value rendering. Wall-clock time is left out so reruns of the same
// configuration produce identical files.
inline void write_train_report(std::ostream& os, const TrainReport& r) {
  auto join = [](const std::vector<double>& v) {
    std::string s;
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (i) s += ',';
      s += format_double(v[i]);
    }
    return s;
  };
  os << "seed=" << r.seed << '\n'
     << "epochs=" << r.train_loss.size() << '\n'
     << "steps=" << r.steps << '\n'
     << "best_epoch=" << r.best_epoch << '\n'
     << "test_mse=" << format_double(r.test_mse) << '\n'
     << "log10_test_mse=" << format_double(r.log10_test_mse) << '\n'
     << "final_train_loss=" << format_double(r.train_loss.empty() ? 0.0 : r.train_loss.back()) << '\n'
     << "final_val_loss=" << format_double(r.val_loss.empty() ? 0.0 : r.val_loss.back()) << '\n'
     << "train_loss=" << join(r.train_loss) << '\n'
     << "val_loss=" << join(r.val_loss) << '\n';
}

struct StepInfo {
  int epoch = 0;
  int batch = 0;
  long step = 0;
  double loss = 0.0;
  const Model* model = nullptr;
  const ProjectionReport* projection = nullptr;  // null when the projection is off
};

using StepCallback = std::function<void(const StepInfo&)>;

inline double mean_recon_loss(const Model& m, const Dataset& ds) {
  if (ds.size() == 0) return 0.0;
  return 0.5 * (reconstruct(m, ds.states, ds.velocities) - ds.velocities).rowwise().squaredNorm().mean();
}

// Shuffled mini-batch Adam. With `lip`, the projection runs after every
// update. Deterministic for a fixed seed.
inline TrainReport train(Model& model, const DataSplit& data, const TrainConfig& cfg,
                         const std::optional<LipschitzConfig>& lip = std::nullopt, const StepCallback& on_step = {}) {
  cfg.validate();
  if (lip) lip->validate();
  if (data.train.size() == 0) throw InputError("train: empty training split");
  if (data.train.state_dim() != model.arch.state_dim) throw ShapeError("train: dataset state dimension != model state_dim");

  const auto start = std::chrono::steady_clock::now();
  TrainReport report;
  report.seed = cfg.seed;
  Rng rng(cfg.seed);
  AdamState adam(AdamConfig{cfg.learning_rate});
  SpectralCache cache;
  auto params = model.parameters();
  std::vector<Mat> grads(params.size());

  const auto n = static_cast<std::size_t>(data.train.size());
  std::vector<Eigen::Index> order(n);
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  const auto d = data.train.state_dim();
  const bool select = cfg.keep_best && data.val.size() > 0;
  std::vector<Mat> best_params;
  double best_val = std::numeric_limits<double>::infinity();

  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double epoch_loss = 0.0;
    int batch_index = 0;
    for (std::size_t b = 0; b < n; b += static_cast<std::size_t>(cfg.batch_size), ++batch_index) {
      const std::size_t e = std::min(n, b + static_cast<std::size_t>(cfg.batch_size));
      const auto rows = static_cast<Eigen::Index>(e - b);
      Mat xs(rows, d), xd(rows, d);
      for (Eigen::Index r = 0; r < rows; ++r) {
        xs.row(r) = data.train.states.row(order[b + static_cast<std::size_t>(r)]);
        xd.row(r) = data.train.velocities.row(order[b + static_cast<std::size_t>(r)]);
      }
      ad::Tape tape;
      BatchLoss loss = cae_batch_loss(tape, model, xs, xd, cfg);
      const double value = tape.value(loss.total)(0, 0);
      if (!std::isfinite(value))
        throw TrainingError("nonfinite loss at epoch " + std::to_string(epoch) + " batch " + std::to_string(batch_index));
      tape.backward(loss.total);
      for (std::size_t i = 0; i < params.size(); ++i) grads[i] = tape.grad(*params[i]);
      adam_step(params, grads, adam);

      std::optional<ProjectionReport> proj;
      if (lip) proj = lipschitz_project(model.decoder, *lip, &cache);
      ++report.steps;
      epoch_loss += value * static_cast<double>(rows);
      if (on_step) on_step({epoch, batch_index, report.steps, value, &model, proj ? &*proj : nullptr});
    }
    report.train_loss.push_back(epoch_loss / static_cast<double>(n));
    report.val_loss.push_back(mean_recon_loss(model, data.val));
    if (select && report.val_loss.back() < best_val) {
      best_val = report.val_loss.back();
      report.best_epoch = epoch;
      best_params.clear();
      for (const Parameter* p : params) best_params.push_back(p->value);
    }
  }
  if (select && !best_params.empty())
    for (std::size_t i = 0; i < params.size(); ++i) params[i]->value = best_params[i];
  if (data.test.size() > 0) {
    report.test_mse = reconstruction_mse(model, data.test);
    report.log10_test_mse = std::log10(report.test_mse);
  }
  report.wall_clock_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return report;
}

}  // namespace revmap
