#pragma once

// Planar serial chain: kinematics, damped-least-squares demonstrations and
// the smoothing / subsampling pipeline that turns them into (x, xdot) pairs.

#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "revmap/dataset.hpp"
#include "revmap/layers.hpp"

namespace revmap {

using Point = Eigen::Vector2d;

struct ArmModel {
  std::vector<double> lengths;
  Vec lower;
  Vec upper;
  Vec home;

  static ArmModel planar(Eigen::Index dof = 5, double link = 0.2) {
    if (dof < 2) throw ConfigError("arm: need at least 2 joints");
    ArmModel a;
    a.lengths.assign(static_cast<std::size_t>(dof), link);
    a.lower = Vec::Constant(dof, -2.6);
    a.upper = Vec::Constant(dof, 2.6);
    a.lower(0) = -std::numbers::pi;
    a.upper(0) = std::numbers::pi;
    a.home = Vec::Constant(dof, 0.4);
    a.home(0) = 0.0;
    a.validate();
    return a;
  }

  Eigen::Index dof() const { return static_cast<Eigen::Index>(lengths.size()); }
  double reach() const {
    double r = 0.0;
    for (double l : lengths) r += l;
    return r;
  }
  Vec clamp(const Vec& q) const { return q.cwiseMax(lower).cwiseMin(upper); }
  bool within_limits(const Vec& q) const { return (q.array() >= lower.array()).all() && (q.array() <= upper.array()).all(); }

  void validate() const {
    const auto d = dof();
    if (d < 2) throw ConfigError("arm: need at least 2 joints");
    for (double l : lengths)
      if (!(l > 0.0)) throw ConfigError("arm: link lengths must be > 0");
    if (lower.size() != d || upper.size() != d || home.size() != d) throw ConfigError("arm: limit/home size mismatch");
    if ((lower.array() >= upper.array()).any()) throw ConfigError("arm: joint limits must satisfy lower < upper");
    if (!within_limits(home)) throw ConfigError("arm: home configuration violates joint limits");
  }
};

inline nlohmann::json arm_to_json(const ArmModel& a) {
  auto vec = [](const Vec& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
  return {{"lengths", a.lengths}, {"lower", vec(a.lower)}, {"upper", vec(a.upper)}, {"home", vec(a.home)}};
}

inline ArmModel arm_from_json(const nlohmann::json& j) {
  auto vec = [](const nlohmann::json& v) {
    const auto xs = v.get<std::vector<double>>();
    return Vec(Eigen::Map<const Vec>(xs.data(), static_cast<Eigen::Index>(xs.size())));
  };
  ArmModel a;
  a.lengths = j.at("lengths").get<std::vector<double>>();
  a.lower = vec(j.at("lower"));
  a.upper = vec(j.at("upper"));
  a.home = vec(j.at("home"));
  a.validate();
  return a;
}

struct Pose {
  Point end_effector;
  std::vector<Point> joints;  // base first, end effector last (d + 1 points)
};

inline Pose forward_kinematics(const ArmModel& arm, const Vec& q) {
  if (q.size() != arm.dof()) throw ShapeError("forward_kinematics: expected " + std::to_string(arm.dof()) + " joints");
  Pose p;
  p.joints.reserve(arm.lengths.size() + 1);
  Point cur = Point::Zero();
  p.joints.push_back(cur);
  double angle = 0.0;
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    angle += q(i);
    cur += arm.lengths[static_cast<std::size_t>(i)] * Point(std::cos(angle), std::sin(angle));
    p.joints.push_back(cur);
  }
  p.end_effector = cur;
  return p;
}

// 2 x d end-effector Jacobian.
inline Mat planar_jacobian(const ArmModel& arm, const Vec& q) {
  const Pose p = forward_kinematics(arm, q);
  Mat jac(2, q.size());
  for (Eigen::Index i = 0; i < q.size(); ++i) {
    const Point r = p.end_effector - p.joints[static_cast<std::size_t>(i)];
    jac(0, i) = -r.y();
    jac(1, i) = r.x();
  }
  return jac;
}

struct IkConfig {
  double damping = 0.05;
  int inner_iterations = 10;
  double tolerance = 1e-12;
  double margin = 1e-3;  // unreachable if ||target|| > reach - margin
  int stall_steps = 50;
  double stall_progress = 1e-8;
};

struct Demonstration {
  std::vector<Vec> states;
  Point target;
  std::uint64_t seed = 0;
};

// Drives the end effector along the straight segment from its start pose to
// `target`, one waypoint per recorded state.
inline Demonstration generate_demo(const ArmModel& arm, const Vec& start, const Point& target, long steps,
                                   std::uint64_t seed = 0, const IkConfig& ik = {}) {
  if (steps < 1) throw InputError("generate_demo: steps must be >= 1");
  if (start.size() != arm.dof()) throw ShapeError("generate_demo: start dimension mismatch");
  if (!arm.within_limits(start)) throw InputError("generate_demo: start violates joint limits");
  if (!(target.norm() <= arm.reach() - ik.margin)) throw InputError("generate_demo: target out of reach");
  Demonstration demo;
  demo.target = target;
  demo.seed = seed;
  demo.states.reserve(static_cast<std::size_t>(steps));
  demo.states.push_back(start);
  const Point origin = forward_kinematics(arm, start).end_effector;
  const double lambda2 = ik.damping * ik.damping;
  Vec q = start;
  int stalled = 0;
  for (long k = 1; k < steps; ++k) {
    const double s = steps == 1 ? 1.0 : static_cast<double>(k) / static_cast<double>(steps - 1);
    const Point waypoint = origin + s * (target - origin);
    const Point before = forward_kinematics(arm, q).end_effector;
    for (int it = 0; it < ik.inner_iterations; ++it) {
      const Point err = waypoint - forward_kinematics(arm, q).end_effector;
      if (err.norm() <= ik.tolerance) break;
      const Mat jac = planar_jacobian(arm, q);
      const Eigen::Matrix2d jjt = jac * jac.transpose() + lambda2 * Eigen::Matrix2d::Identity();
      q = arm.clamp(q + jac.transpose() * jjt.ldlt().solve(err));
    }
    const Point after = forward_kinematics(arm, q).end_effector;
    const bool lagging = (waypoint - after).norm() > 1e-3;
    stalled = (lagging && (after - before).norm() < ik.stall_progress) ? stalled + 1 : 0;
    if (stalled >= ik.stall_steps) throw DegeneracyError("generate_demo: inverse kinematics stalled at step " + std::to_string(k));
    demo.states.push_back(q);
  }
  return demo;
}

struct PreprocessConfig {
  double gamma = 0.2;  // y_t = gamma x_t + (1 - gamma) y_{t-1}
  long stride = 3;

  void validate() const {
    if (!(gamma > 0.0 && gamma < 1.0)) throw ConfigError("preprocess: gamma must lie in (0, 1)");
    if (stride < 1) throw ConfigError("preprocess: stride must be >= 1");
  }
};

inline std::vector<Vec> ema_filter(const std::vector<Vec>& xs, double gamma) {
  std::vector<Vec> ys;
  ys.reserve(xs.size());
  for (const Vec& x : xs) ys.push_back(ys.empty() ? x : Vec(gamma * x + (1.0 - gamma) * ys.back()));
  return ys;
}

// Filter, keep every stride-th state, pair each kept state with the
// difference to the next kept one.
inline Dataset preprocess(const std::vector<Vec>& states, const PreprocessConfig& cfg) {
  cfg.validate();
  if (static_cast<long>(states.size()) <= cfg.stride) throw InputError("preprocess: demonstration shorter than stride");
  const std::vector<Vec> ys = ema_filter(states, cfg.gamma);
  std::vector<std::size_t> kept;
  for (std::size_t i = 0; i < ys.size(); i += static_cast<std::size_t>(cfg.stride)) kept.push_back(i);
  const auto d = ys.front().size();
  Dataset ds;
  ds.states.resize(static_cast<Eigen::Index>(kept.size() - 1), d);
  ds.velocities.resize(ds.states.rows(), d);
  for (std::size_t k = 0; k + 1 < kept.size(); ++k) {
    ds.states.row(static_cast<Eigen::Index>(k)) = ys[kept[k]].transpose();
    ds.velocities.row(static_cast<Eigen::Index>(k)) = (ys[kept[k + 1]] - ys[kept[k]]).transpose();
  }
  return ds;
}

struct DemoSetConfig {
  long count = 10;
  long steps = 1000;
  double inner_radius = 0.30;  // fractions of total reach
  double outer_radius = 0.85;
  double arc = 3.5;             // radians of target directions around the home direction
  bool random_start = false;   // start every demonstration at home unless set
  double start_spread = 0.3;   // joint noise around home for random starts
  int max_attempts = 100;
  std::uint64_t seed = 0;
};

// Uniform over the annulus area, restricted to an arc centred on the home
// end-effector direction. The angle is drawn inside sector `index` of
// `sectors` equal sectors of that arc, so a set of demonstrations covers it.
inline Point sample_target(const ArmModel& arm, const DemoSetConfig& cfg, Rng& rng, long index = 0, long sectors = 1) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const double r0 = cfg.inner_radius * arm.reach();
  const double r1 = cfg.outer_radius * arm.reach();
  const double r = std::sqrt(r0 * r0 + unit(rng) * (r1 * r1 - r0 * r0));
  const Point home = forward_kinematics(arm, arm.home).end_effector;
  const double centre = std::atan2(home.y(), home.x());
  const double theta =
      centre + cfg.arc * ((static_cast<double>(index) + unit(rng)) / static_cast<double>(sectors) - 0.5);
  return {r * std::cos(theta), r * std::sin(theta)};
}

// Base joint uniform over its range, the others jittered around home.
inline Vec sample_start(const ArmModel& arm, const DemoSetConfig& cfg, Rng& rng) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  Vec q = arm.home;
  q(0) = arm.lower(0) + unit(rng) * (arm.upper(0) - arm.lower(0));
  for (Eigen::Index i = 1; i < q.size(); ++i) q(i) += cfg.start_spread * (2.0 * unit(rng) - 1.0);
  return arm.clamp(q);
}

inline double segment_distance_to_base(const Point& a, const Point& b) {
  const Point ab = b - a;
  const double len2 = ab.squaredNorm();
  const double s = len2 > 0.0 ? std::clamp(-a.dot(ab) / len2, 0.0, 1.0) : 0.0;
  return (a + s * ab).norm();
}

// Usable demonstration: reaches its target, stays off the joint limits and
// has no jumps.
inline bool demo_is_clean(const ArmModel& arm, const Demonstration& d, double max_step = 0.05) {
  for (std::size_t i = 0; i < d.states.size(); ++i) {
    const Vec& q = d.states[i];
    if ((q.array() <= arm.lower.array()).any() || (q.array() >= arm.upper.array()).any()) return false;
    if (i > 0 && (q - d.states[i - 1]).norm() > max_step) return false;
  }
  return (forward_kinematics(arm, d.states.back()).end_effector - d.target).norm() < 1e-6;
}

// Independent reaching demonstrations to annulus targets.
// Samples whose segment passes inside the inner radius, or whose demonstration
// is not clean, are redrawn.
inline std::vector<Demonstration> generate_demos(const ArmModel& arm, const DemoSetConfig& cfg, const IkConfig& ik = {}) {
  if (cfg.count < 1) throw InputError("generate_demos: count must be >= 1");
  if (!(0.0 <= cfg.inner_radius && cfg.inner_radius < cfg.outer_radius && cfg.outer_radius < 1.0))
    throw ConfigError("generate_demos: bad target annulus");
  Rng rng(cfg.seed);
  std::vector<Demonstration> demos;
  for (long i = 0; i < cfg.count; ++i) {
    bool done = false;
    for (int attempt = 0; attempt < cfg.max_attempts && !done; ++attempt) {
      const Vec start = cfg.random_start ? sample_start(arm, cfg, rng) : arm.home;
      const Point target = sample_target(arm, cfg, rng, i, cfg.count);
      const Point from = forward_kinematics(arm, start).end_effector;
      if (segment_distance_to_base(from, target) < cfg.inner_radius * arm.reach()) continue;
      try {
        Demonstration d = generate_demo(arm, start, target, cfg.steps, cfg.seed, ik);
        if (!demo_is_clean(arm, d)) continue;
        demos.push_back(std::move(d));
        done = true;
      } catch (const DegeneracyError&) {
      }
    }
    if (!done) throw DegeneracyError("generate_demos: no clean demonstration after " + std::to_string(cfg.max_attempts) + " attempts");
  }
  return demos;
}

inline Dataset build_dataset(const ArmModel& arm, const std::vector<Demonstration>& demos, const PreprocessConfig& pre,
                             const DemoSetConfig& cfg) {
  std::vector<Dataset> parts;
  Eigen::Index rows = 0;
  std::vector<long> lengths;
  for (const auto& d : demos) {
    parts.push_back(preprocess(d.states, pre));
    rows += parts.back().size();
    lengths.push_back(static_cast<long>(d.states.size()));
  }
  Dataset ds;
  ds.states.resize(rows, arm.dof());
  ds.velocities.resize(rows, arm.dof());
  Eigen::Index at = 0;
  for (const auto& p : parts) {
    ds.states.middleRows(at, p.size()) = p.states;
    ds.velocities.middleRows(at, p.size()) = p.velocities;
    at += p.size();
  }
  ds.header = {{"action_source", "damped-least-squares-ik"},
               {"stride", pre.stride},
               {"gamma", pre.gamma},
               {"arm", arm_to_json(arm)},
               {"seed", cfg.seed},
               {"trajectories", cfg.count},
               {"trajectory_lengths", lengths}};
  return ds;
}

}  // namespace revmap
