#pragma once

// Euler rollouts, mirrored-action replay, closed-form reversal bounds and
// empirical estimators of the quantities those bounds need:
//   M  velocity bound          max ||f(x, a)||
//   L  state Lipschitz bound   max ||df/dx||_2
//   E  oddness residual        max ||f(x, -a) + f(x, a)||

#include <algorithm>
#include <cmath>
#include <limits>
#include <ostream>
#include <random>
#include <string>
#include <vector>

#include "revmap/action_maps.hpp"
#include "revmap/dataset.hpp"
#include "revmap/field.hpp"

namespace revmap {

struct EulerConfig {
  double nu = 0.001;  // step size
  long steps = 0;     // forward steps T

  void validate() const {
    if (!(nu > 0.0)) throw InputError("euler: step size must be > 0");
    if (steps < 0) throw InputError("euler: step count must be >= 0");
  }
};

struct Trajectory {
  std::vector<Vec> states;   // K + 1 states
  std::vector<Vec> actions;  // K actions
  double nu = 0.0;

  double timestamp(std::size_t k) const { return static_cast<double>(k) * nu; }
};

// x + nu * f(x, a). Shared by rollouts, simulated teleoperation and the
// live session service.
template <VectorField F>
Vec euler_step(const F& f, const Vec& x, const Vec& a, double nu) {
  return x + nu * Vec(f(x, a));
}

namespace detail {
template <VectorField F>
void extend(const F& f, Trajectory& traj, const std::vector<Vec>& actions) {
  for (const Vec& a : actions) {
    Vec next = euler_step(f, traj.states.back(), a, traj.nu);
    if (!next.allFinite())
      throw IntegrationError("rollout: nonfinite state at step " + std::to_string(traj.actions.size()),
                             static_cast<long>(traj.actions.size()));
    traj.actions.push_back(a);
    traj.states.push_back(std::move(next));
  }
}
}  // namespace detail

template <VectorField F>
Trajectory rollout(const F& f, const Vec& x0, const std::vector<Vec>& actions, const EulerConfig& cfg) {
  cfg.validate();
  if (static_cast<long>(actions.size()) != cfg.steps)
    throw InputError("rollout: expected " + std::to_string(cfg.steps) + " actions, got " + std::to_string(actions.size()));
  if (x0.size() != f.state_dim()) throw ShapeError("rollout: initial state dimension mismatch");
  Trajectory traj;
  traj.nu = cfg.nu;
  traj.states.push_back(x0);
  detail::extend(f, traj, actions);
  return traj;
}

// out[j] = -in[T-1-j]: the step leaving x(T) undoes the step that arrived there.
inline std::vector<Vec> mirror_actions(const std::vector<Vec>& actions) {
  std::vector<Vec> out;
  out.reserve(actions.size());
  for (auto it = actions.rbegin(); it != actions.rend(); ++it) out.push_back(-*it);
  return out;
}

struct ReversalResult {
  double error = 0.0;  // ||x(0) - x(2T)||
  Trajectory trajectory;
};

// Forward T steps, then T mirrored steps.
template <VectorField F>
ReversalResult reversal_error(const F& f, const Vec& x0, const std::vector<Vec>& actions, const EulerConfig& cfg) {
  ReversalResult r;
  r.trajectory = rollout(f, x0, actions, cfg);
  detail::extend(f, r.trajectory, mirror_actions(actions));
  r.error = (r.trajectory.states.front() - r.trajectory.states.back()).norm();
  return r;
}

// Largest ||f(x_k, a_k) - f(x_{k+1}, a_k)|| along a trajectory.
template <VectorField F>
double max_consecutive_change(const F& f, const Trajectory& traj) {
  double worst = 0.0;
  for (std::size_t k = 0; k < traj.actions.size(); ++k)
    worst = std::max(worst, (Vec(f(traj.states[k], traj.actions[k])) - Vec(f(traj.states[k + 1], traj.actions[k]))).norm());
  return worst;
}

// ---------------------------------------------------------------- bounds

struct Theorem2Bound {
  double tight = 0.0;        // M nu ((1 + L nu)^T - 1)
  double exponential = 0.0;  // nu M (exp(T L nu) - 1)
};

inline Theorem2Bound bound_theorem2(double nu, double M, double L, long T) {
  if (!(nu > 0.0) || M < 0.0 || L < 0.0 || T < 0) throw InputError("bound_theorem2: invalid parameters");
  if (T == 0 || L == 0.0 || M == 0.0) return {0.0, 0.0};
  const double t = static_cast<double>(T);
  return {M * nu * std::expm1(t * std::log1p(L * nu)), nu * M * std::expm1(t * L * nu)};
}

// (nu M + E / L)(exp(T L nu) - 1)
inline double bound_corollary(double nu, double M, double L, double E, long T) {
  if (!(L > 0.0)) throw InputError("bound_corollary: L must be > 0");
  if (!(nu > 0.0) || M < 0.0 || E < 0.0 || T < 0) throw InputError("bound_corollary: invalid parameters");
  return (nu * M + E / L) * std::expm1(static_cast<double>(T) * L * nu);
}

// ---------------------------------------------------------------- estimation

struct StateBox {
  Vec lower;
  Vec upper;

  void validate() const {
    if (lower.size() != upper.size() || lower.size() == 0) throw InputError("state box: bad dimensions");
    if ((upper.array() < lower.array()).any()) throw InputError("state box: lower > upper");
  }
  Vec clamp(const Vec& x) const { return x.cwiseMax(lower).cwiseMin(upper); }
  Vec width() const { return upper - lower; }

  // Bounding box of the rows of `states`, padded by `pad` times its width.
  static StateBox around(const Mat& states, double pad = 0.0) {
    StateBox b{states.colwise().minCoeff().transpose(), states.colwise().maxCoeff().transpose()};
    const Vec w = b.width();
    b.lower -= pad * w;
    b.upper += pad * w;
    return b;
  }
};

struct EstimationBudget {
  int restarts = 32;
  int steps = 200;
  double step_size = 0.01;  // initial step, in box-normalized coordinates
  int candidates_per_restart = 8;
  double fd_step = 1e-5;
  std::uint64_t seed = 0;
};

struct Witness {
  Vec x;
  Vec a;
};

struct BoundEstimates {
  double M = 0.0;
  double L = 0.0;
  double E = 0.0;
  Witness m_witness;
  Witness l_witness;
  Witness e_witness;
};

namespace detail {

struct Objective {
  double value = -std::numeric_limits<double>::infinity();
  Vec gx;
  Vec ga;
};

inline std::uint64_t mix_seed(std::uint64_t root, std::uint64_t index) {
  std::uint64_t z = root + 0x9e3779b97f4a7c15ULL * (index + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// Projected normalized-gradient ascent with step doubling / halving.
template <class Obj>
std::pair<double, Witness> ascend(const Obj& objective, Witness start, const StateBox& box, const ActionSpace& space,
                                  const EstimationBudget& budget) {
  const Vec w = box.width();
  Objective cur = objective(start.x, start.a);
  Witness at = start;
  double eta = budget.step_size;
  for (int it = 0; it < budget.steps && std::isfinite(cur.value); ++it) {
    Vec dx = cur.gx.cwiseProduct(w);
    Vec da = cur.ga * space.c;
    const double norm = std::sqrt(dx.squaredNorm() + da.squaredNorm());
    if (!(norm > 0.0) || !std::isfinite(norm)) break;
    dx /= norm;
    da /= norm;
    bool improved = false;
    while (eta >= 1e-9) {
      Witness cand{box.clamp(at.x + eta * dx.cwiseProduct(w)), clamp_action(space, at.a + eta * space.c * da)};
      Objective next = objective(cand.x, cand.a);
      if (std::isfinite(next.value) && next.value > cur.value) {
        cur = std::move(next);
        at = std::move(cand);
        eta = std::min(2.0 * eta, 0.5);
        improved = true;
        break;
      }
      eta *= 0.5;
    }
    if (!improved) break;
  }
  return {cur.value, at};
}

template <class Obj, class Value>
std::pair<double, Witness> maximize(const Obj& objective, const Value& value_only, const StateBox& box,
                                    const ActionSpace& space, const EstimationBudget& budget, std::uint64_t stream) {
  Rng rng(mix_seed(budget.seed, stream));
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const int candidates = std::max(1, budget.restarts) * std::max(1, budget.candidates_per_restart);
  std::vector<std::pair<double, Witness>> pool;
  pool.reserve(static_cast<std::size_t>(candidates));
  for (int i = 0; i < candidates; ++i) {
    Witness wtn{Vec(box.lower.size()), Vec(space.n)};
    for (Eigen::Index j = 0; j < wtn.x.size(); ++j) wtn.x(j) = box.lower(j) + unit(rng) * (box.upper(j) - box.lower(j));
    for (Eigen::Index j = 0; j < wtn.a.size(); ++j) wtn.a(j) = space.c * (2.0 * unit(rng) - 1.0);
    wtn.a = clamp_action(space, wtn.a);
    const double v = value_only(wtn.x, wtn.a);
    pool.emplace_back(std::isfinite(v) ? v : -std::numeric_limits<double>::infinity(), std::move(wtn));
  }
  std::stable_sort(pool.begin(), pool.end(), [](const auto& l, const auto& r) { return l.first > r.first; });
  std::pair<double, Witness> best{-std::numeric_limits<double>::infinity(), pool.front().second};
  for (int r = 0; r < std::max(1, budget.restarts); ++r) {
    const auto& start = pool[static_cast<std::size_t>(r)];
    if (!std::isfinite(start.first)) continue;
    auto found = ascend(objective, start.second, box, space, budget);
    if (found.first < start.first) found = start;
    if (found.first > best.first) best = std::move(found);
  }
  if (!std::isfinite(best.first)) throw EstimationError("estimate_bounds: no finite evaluation within budget");
  return best;
}

}  // namespace detail

// Largest singular value of the state Jacobian at (x, a).
template <DifferentiableField F>
double jacobian_norm(const F& f, const Vec& x, const Vec& a) {
  const Mat jac = state_jacobian(f, x, a);
  if (!jac.allFinite()) return std::numeric_limits<double>::quiet_NaN();
  return Eigen::JacobiSVD<Mat>(jac).singularValues()(0);
}

// Projected gradient ascent with random restarts over region x action space.
// The results are lower bounds on the true suprema; witnesses are kept.
template <DifferentiableField F>
BoundEstimates estimate_bounds(const F& f, const StateBox& region, const ActionSpace& space,
                               const EstimationBudget& budget = {}) {
  region.validate();
  space.validate();
  if (region.lower.size() != f.state_dim() || space.n != f.action_dim())
    throw ShapeError("estimate_bounds: region/action space dimension mismatch");
  BoundEstimates est;

  // M: max ||f(x, a)||
  {
    auto value = [&](const Vec& x, const Vec& a) { return Vec(f(x, a)).norm(); };
    auto obj = [&](const Vec& x, const Vec& a) {
      detail::Objective o;
      const Vec v = f(x, a);
      o.value = v.norm();
      if (!std::isfinite(o.value)) return o;
      if (o.value == 0.0) {
        o.gx = Vec::Zero(x.size());
        o.ga = Vec::Zero(a.size());
        return o;
      }
      FieldGrad g = f.vjp(x, a, v / o.value);
      o.gx = std::move(g.state);
      o.ga = std::move(g.action);
      return o;
    };
    auto best = detail::maximize(obj, value, region, space, budget, 1);
    est.M = best.first;
    est.m_witness = std::move(best.second);
  }

  // L: max sigma_max(df/dx). The ascent direction uses
  // d/dx (u^T J v) = d/dv grad_x(u^T f), taken by central differences.
  {
    auto value = [&](const Vec& x, const Vec& a) { return jacobian_norm(f, x, a); };
    auto obj = [&](const Vec& x, const Vec& a) {
      detail::Objective o;
      const Mat jac = state_jacobian(f, x, a);
      if (!jac.allFinite()) return o;
      Eigen::JacobiSVD<Mat> svd(jac, Eigen::ComputeFullU | Eigen::ComputeFullV);
      o.value = svd.singularValues()(0);
      const Vec u = svd.matrixU().col(0);
      const Vec v = svd.matrixV().col(0);
      const double h = budget.fd_step;
      const FieldGrad gp = f.vjp(x + h * v, a, u);
      const FieldGrad gm = f.vjp(x - h * v, a, u);
      o.gx = (gp.state - gm.state) / (2.0 * h);
      o.ga = (gp.action - gm.action) / (2.0 * h);
      return o;
    };
    auto best = detail::maximize(obj, value, region, space, budget, 2);
    est.L = best.first;
    est.l_witness = std::move(best.second);
  }

  // E: max ||f(x, -a) + f(x, a)||
  {
    auto value = [&](const Vec& x, const Vec& a) { return (Vec(f(x, Vec(-a))) + Vec(f(x, a))).norm(); };
    auto obj = [&](const Vec& x, const Vec& a) {
      detail::Objective o;
      const Vec r = Vec(f(x, Vec(-a))) + Vec(f(x, a));
      o.value = r.norm();
      if (!std::isfinite(o.value)) return o;
      if (o.value == 0.0) {
        o.gx = Vec::Zero(x.size());
        o.ga = Vec::Zero(a.size());
        return o;
      }
      const Vec u = r / o.value;
      const FieldGrad gpos = f.vjp(x, a, u);
      const FieldGrad gneg = f.vjp(x, Vec(-a), u);
      o.gx = gpos.state + gneg.state;
      o.ga = gpos.action - gneg.action;
      return o;
    };
    auto best = detail::maximize(obj, value, region, space, budget, 3);
    est.E = best.first;
    est.e_witness = std::move(best.second);
  }
  return est;
}

// ---------------------------------------------------------------- single step

struct SingleStepCheck {
  double lhs = 0.0;    // ||x_i - x_{i+2}||
  double rhs = 0.0;    // ||x_{i+1} - x_i||
  double ratio = 0.0;  // lhs / rhs, 0 when rhs == 0
};

template <VectorField F>
SingleStepCheck single_step_check(const F& f, const Vec& x, const Vec& a, double nu) {
  const Vec x1 = euler_step(f, x, a, nu);
  const Vec x2 = euler_step(f, x1, Vec(-a), nu);
  SingleStepCheck c;
  c.lhs = (x - x2).norm();
  c.rhs = (x1 - x).norm();
  c.ratio = c.rhs == 0.0 ? 0.0 : c.lhs / c.rhs;
  return c;
}

// ---------------------------------------------------------------- sweeps

namespace detail {
inline long integral_ratio(double num, double den, const char* what) {
  const double r = num / den;
  const double rounded = std::round(r);
  if (!(rounded >= 1.0) || std::abs(r - rounded) > 1e-9 * std::max(1.0, r))
    throw InputError(std::string(what) + " is not an integral multiple of the step size");
  return static_cast<long>(rounded);
}
}  // namespace detail

struct ConvergenceOptions {
  int trials = 8;
  double hold = 0.1;  // physical duration each sampled action is held
  std::uint64_t seed = 0;
};

struct ConvergenceRow {
  double nu = 0.0;
  long steps = 0;
  double mean_error = 0.0;
};

// For each step size, T = horizon / nu forward steps with piecewise-constant
// actions on a fixed physical grid (identical across step sizes), followed by
// the mirrored sequence. `gen(rng)` draws one action.
template <VectorField F, class Gen>
std::vector<ConvergenceRow> convergence_study(const F& f, const Vec& x0, Gen&& gen, double horizon,
                                              const std::vector<double>& nus, const ConvergenceOptions& opts = {}) {
  if (!(horizon > 0.0) || !(opts.hold > 0.0) || opts.trials < 1) throw InputError("convergence_study: invalid options");
  const long grid = static_cast<long>(std::ceil(horizon / opts.hold - 1e-9));
  std::vector<std::vector<Vec>> plans;
  for (int t = 0; t < opts.trials; ++t) {
    Rng rng(detail::mix_seed(opts.seed, static_cast<std::uint64_t>(t)));
    std::vector<Vec> plan;
    for (long i = 0; i < grid; ++i) plan.push_back(gen(rng));
    plans.push_back(std::move(plan));
  }
  std::vector<ConvergenceRow> rows;
  for (double nu : nus) {
    const long steps = detail::integral_ratio(horizon, nu, "horizon");
    const long per_hold = detail::integral_ratio(opts.hold, nu, "action hold");
    double sum = 0.0;
    for (const auto& plan : plans) {
      std::vector<Vec> actions;
      actions.reserve(static_cast<std::size_t>(steps));
      for (long k = 0; k < steps; ++k) actions.push_back(plan[static_cast<std::size_t>(k / per_hold)]);
      sum += reversal_error(f, x0, actions, EulerConfig{nu, steps}).error;
    }
    rows.push_back({nu, steps, sum / static_cast<double>(plans.size())});
  }
  return rows;
}

enum class BoundKind { theorem2, corollary };

struct ReversibilityGrid {
  std::vector<long> durations{10, 100, 1000};
  int trials = 20;
  double nu = 0.001;
  // Draw a fresh unit action every step instead of holding one per trajectory.
  bool resample = false;
  BoundKind criterion = BoundKind::theorem2;
  std::uint64_t seed = 0;
};

struct BoundReport {
  long T = 0;
  double nu = 0.0;
  double observed_mean = 0.0;
  double observed_stderr = 0.0;
  double observed_max = 0.0;
  double tight = 0.0;
  double exponential = 0.0;
  double corollary = 0.0;  // NaN when L == 0
  double M = 0.0, L = 0.0, E = 0.0;
  bool theorem_satisfied = false;    // every trial <= exponential bound
  bool corollary_satisfied = false;  // every trial <= corollary bound
  bool satisfied = false;            // per the grid's criterion
  std::vector<double> observed;
};

inline Vec random_unit(Eigen::Index n, Rng& rng) {
  std::normal_distribution<double> dist;
  Vec v(n);
  do {
    for (Eigen::Index j = 0; j < n; ++j) v(j) = dist(rng);
  } while (v.norm() < 1e-12);
  return v.normalized();
}

// Trajectory i starts from starts[i % starts.size()] and uses unit-norm
// actions from a per-trajectory seed.
template <VectorField F>
std::vector<BoundReport> reversibility_experiment(const F& f, const BoundEstimates& est, const std::vector<Vec>& starts,
                                                  const ReversibilityGrid& grid) {
  if (starts.empty()) throw InputError("reversibility_experiment: no start states");
  if (grid.trials < 1) throw InputError("reversibility_experiment: trials must be >= 1");
  std::vector<BoundReport> out;
  for (std::size_t di = 0; di < grid.durations.size(); ++di) {
    const long T = grid.durations[di];
    BoundReport rep;
    rep.T = T;
    rep.nu = grid.nu;
    rep.M = est.M;
    rep.L = est.L;
    rep.E = est.E;
    const auto b = bound_theorem2(grid.nu, est.M, est.L, T);
    rep.tight = b.tight;
    rep.exponential = b.exponential;
    rep.corollary = est.L > 0.0 ? bound_corollary(grid.nu, est.M, est.L, est.E, T) : std::numeric_limits<double>::quiet_NaN();
    for (int t = 0; t < grid.trials; ++t) {
      Rng rng(detail::mix_seed(grid.seed, static_cast<std::uint64_t>(di) * 1000003ULL + static_cast<std::uint64_t>(t)));
      const Vec& x0 = starts[static_cast<std::size_t>(t) % starts.size()];
      std::vector<Vec> actions;
      actions.reserve(static_cast<std::size_t>(T));
      const Vec held = random_unit(f.action_dim(), rng);
      for (long k = 0; k < T; ++k) actions.push_back(grid.resample ? random_unit(f.action_dim(), rng) : held);
      rep.observed.push_back(reversal_error(f, x0, actions, EulerConfig{grid.nu, T}).error);
    }
    const double n = static_cast<double>(rep.observed.size());
    double sum = 0.0;
    for (double e : rep.observed) sum += e;
    rep.observed_mean = sum / n;
    double ss = 0.0;
    for (double e : rep.observed) ss += (e - rep.observed_mean) * (e - rep.observed_mean);
    rep.observed_stderr = n > 1 ? std::sqrt(ss / (n - 1.0)) / std::sqrt(n) : 0.0;
    rep.observed_max = *std::max_element(rep.observed.begin(), rep.observed.end());
    rep.theorem_satisfied = rep.observed_max <= rep.exponential;
    rep.corollary_satisfied = std::isfinite(rep.corollary) ? rep.observed_max <= rep.corollary : rep.observed_max == 0.0;
    rep.satisfied = grid.criterion == BoundKind::theorem2 ? rep.theorem_satisfied : rep.corollary_satisfied;
    out.push_back(std::move(rep));
  }
  return out;
}

// CSV columns: T,nu,observed_mean,observed_stderr,tight,exponential,corollary,M,L,E,satisfied
inline void write_bound_csv(std::ostream& os, const std::vector<BoundReport>& reports) {
  os << "T,nu,observed_mean,observed_stderr,tight,exponential,corollary,M,L,E,satisfied\n";
  for (const auto& r : reports) {
    os << r.T << ',' << format_double(r.nu) << ',' << format_double(r.observed_mean) << ','
       << format_double(r.observed_stderr) << ',' << format_double(r.tight) << ',' << format_double(r.exponential) << ','
       << (std::isfinite(r.corollary) ? format_double(r.corollary) : std::string("nan")) << ',' << format_double(r.M)
       << ',' << format_double(r.L) << ',' << format_double(r.E) << ',' << (r.satisfied ? 1 : 0) << '\n';
  }
}

}  // namespace revmap
