#pragma once

#include <cmath>
#include <random>

#include "revmap/autodiff.hpp"

namespace revmap {

struct PowerIterationOptions {
  int min_iterations = 1;
  int max_iterations = 20000;
  // Target relative accuracy of the returned singular value. The stopping
  // rule extrapolates the remaining error from the observed contraction
  // ratio of successive updates, so slow spectral gaps keep iterating.
  double tolerance = 1e-8;
};

// Deterministic start vector with no special alignment.
inline Vec power_iteration_start(Eigen::Index n) {
  std::mt19937_64 rng(0x5eed5eedULL + static_cast<unsigned long long>(n));
  std::normal_distribution<double> dist;
  Vec v(n);
  for (Eigen::Index i = 0; i < n; ++i) v(i) = dist(rng);
  return v.normalized();
}

// Largest singular value of `m` by power iteration on m^T m. When `warm` is
// given it seeds the iteration (if it has the right length and is nonzero)
// and receives the final right singular vector estimate. `converged` is set
// to false when max_iterations ran out before the tolerance was met.
inline double spectral_norm(const Mat& m, Vec* warm = nullptr, const PowerIterationOptions& opts = {},
                            bool* converged = nullptr) {
  if (!m.allFinite()) throw InputError("spectral_norm: matrix has nonfinite entries");
  if (m.size() == 0) return 0.0;
  Vec v;
  if (warm && warm->size() == m.cols() && warm->norm() > 0.0 && warm->allFinite()) {
    v = warm->normalized();
  } else {
    v = power_iteration_start(m.cols());
  }
  double sigma = (m * v).norm();
  if (sigma == 0.0) {
    // The start vector may lie in the null space of a nonzero matrix.
    if (m.cwiseAbs().maxCoeff() == 0.0) return 0.0;
    Eigen::Index col = 0;
    m.colwise().norm().maxCoeff(&col);
    v = Vec::Unit(m.cols(), col);
    sigma = (m * v).norm();
  }
  double prev_delta = -1.0;
  bool done = false;
  for (int it = 1; it <= opts.max_iterations; ++it) {
    Vec u = m * v;
    Vec next = m.transpose() * u;
    const double nn = next.norm();
    if (nn == 0.0) {
      done = true;
      break;
    }
    v = next / nn;
    const double s = (m * v).norm();
    const double delta = std::abs(s - sigma);
    sigma = s;
    if (it >= opts.min_iterations) {
      if (delta <= 1e-15 * sigma) {
        done = true;
        break;
      }
      if (prev_delta > 0.0) {
        const double ratio = delta / prev_delta;
        if (ratio < 1.0 && delta * ratio / (1.0 - ratio) <= opts.tolerance * sigma) {
          done = true;
          break;
        }
      }
    }
    prev_delta = delta;
  }
  if (warm) *warm = v;
  if (converged) *converged = done;
  return sigma;
}

// Dense fallback for slow spectral gaps.
inline double spectral_norm_exact(const Mat& m) {
  if (!m.allFinite()) throw InputError("spectral_norm_exact: matrix has nonfinite entries");
  if (m.size() == 0) return 0.0;
  return Eigen::JacobiSVD<Mat>(m).singularValues()(0);
}

// Only the operator 2-norm is supported.
inline double spectral_norm(const Mat& m, int p, Vec* warm = nullptr, const PowerIterationOptions& opts = {}) {
  if (p != 2) throw ConfigError("spectral_norm: only p = 2 is supported");
  return spectral_norm(m, warm, opts);
}

}  // namespace revmap
