#pragma once

// Greedy one-step simulated teleoperation toward a target through via-points.

#include <optional>
#include <random>
#include <vector>

#include "revmap/action_maps.hpp"
#include "revmap/arm.hpp"
#include "revmap/reversibility.hpp"

namespace revmap {

struct GreedyOptions {
  int samples = 256;
  bool clamp = true;
  std::optional<double> scale;  // draw scale; the action-space bound c when unset
};

// Draws K normal actions s z, z ~ N(0, I), and returns the one minimizing
// ||target - x - nu f(x, a)||^2 (first index on ties).
template <VectorField F>
Vec greedy_action(const F& f, const Vec& x, const Vec& target, double nu, const ActionSpace& space, Rng& rng,
                  const GreedyOptions& opts = {}) {
  if (opts.samples < 1) throw InputError("greedy_action: sample count must be >= 1");
  const double s = opts.scale.value_or(space.c);
  if (!(s > 0.0)) throw InputError("greedy_action: draw scale must be > 0");
  std::normal_distribution<double> dist;
  const Eigen::Index n = f.action_dim();
  Mat as(opts.samples, n);
  for (int k = 0; k < opts.samples; ++k) {
    Vec a(n);
    for (Eigen::Index j = 0; j < n; ++j) a(j) = s * dist(rng);
    as.row(k) = (opts.clamp ? clamp_action(space, a) : a).transpose();
  }
  const Mat xs = x.transpose().replicate(opts.samples, 1);
  const Mat vel = eval_batch(f, xs, as);
  const Mat resid = (target.transpose().replicate(opts.samples, 1) - xs) - nu * vel;
  Eigen::Index best = 0;
  resid.rowwise().squaredNorm().minCoeff(&best);
  return as.row(best).transpose();
}

struct TeleopTask {
  Vec start;
  Vec target;
  std::vector<Vec> via_points;  // ordered from start toward target
  double nu = 1.0;
  int samples = 256;
  long budget = 2000;
  double switch_radius = 0.05;
  // A via-point is also passed once the distance to it has not improved by
  // stall_progress over stall_steps steps. 0 disables.
  long stall_steps = 50;
  double stall_progress = 1e-4;
  bool clamp_actions = true;
  std::optional<double> action_scale;

  void validate() const {
    if (start.size() == 0 || start.size() != target.size()) throw InputError("teleop task: start/target mismatch");
    for (const Vec& v : via_points)
      if (v.size() != start.size()) throw InputError("teleop task: via-point dimension mismatch");
    if (!(nu > 0.0)) throw InputError("teleop task: step size must be > 0");
    if (samples < 1) throw InputError("teleop task: sample count must be >= 1");
    if (budget < 1) throw InputError("teleop task: budget must be > 0");
    if (!(switch_radius >= 0.0)) throw InputError("teleop task: switch radius must be >= 0");
    if (stall_steps < 0 || !(stall_progress >= 0.0)) throw InputError("teleop task: bad stall settings");
    if (action_scale && !(*action_scale > 0.0)) throw InputError("teleop task: action scale must be > 0");
  }
};

// Path states every `spacing` of accumulated joint-space arc length.
inline std::vector<Vec> via_points_along(const std::vector<Vec>& path, double spacing) {
  if (!(spacing > 0.0)) throw InputError("via_points_along: spacing must be > 0");
  std::vector<Vec> out;
  double acc = 0.0;
  for (std::size_t i = 1; i + 1 < path.size(); ++i) {
    acc += (path[i] - path[i - 1]).norm();
    if (acc >= spacing) {
      out.push_back(path[i]);
      acc = 0.0;
    }
  }
  return out;
}

// Points every `spacing` along the joint-space segment, endpoints excluded.
inline std::vector<Vec> via_points_straight(const Vec& start, const Vec& target, double spacing) {
  if (!(spacing > 0.0)) throw InputError("via_points_straight: spacing must be > 0");
  std::vector<Vec> out;
  const double dist = (target - start).norm();
  for (double s = spacing; s < dist; s += spacing) out.push_back(start + (s / dist) * (target - start));
  return out;
}

// Held-out demonstration -> task from its first to its last state.
inline TeleopTask task_from_path(const std::vector<Vec>& path, double spacing) {
  if (path.size() < 2) throw InputError("task_from_path: path needs at least two states");
  TeleopTask t;
  t.start = path.front();
  t.target = path.back();
  t.via_points = via_points_along(path, spacing);
  return t;
}

struct TeleopResult {
  Trajectory trajectory;
  std::vector<double> active_distance;  // distance to the active goal before each step
  std::vector<std::size_t> active_goal;
  std::vector<double> via_closest;      // closest approach to each via-point
  double initial_distance = 0.0;
  double final_distance = 0.0;
};

template <VectorField F>
TeleopResult sim_teleop(const F& f, const TeleopTask& task, const ActionSpace& space, std::uint64_t seed,
                        const ArmModel* arm = nullptr) {
  task.validate();
  if (task.start.size() != f.state_dim()) throw ShapeError("sim_teleop: task dimension mismatch");
  std::vector<Vec> goals = task.via_points;
  goals.push_back(task.target);
  TeleopResult res;
  res.trajectory.nu = task.nu;
  res.trajectory.states.push_back(arm ? arm->clamp(task.start) : task.start);
  res.via_closest.assign(task.via_points.size(), std::numeric_limits<double>::infinity());
  res.initial_distance = (task.target - task.start).norm();
  Rng rng(seed);
  const GreedyOptions greedy{task.samples, task.clamp_actions, task.action_scale};
  std::size_t ptr = 0;
  double best = std::numeric_limits<double>::infinity();
  long since_best = 0;
  for (long step = 0; step < task.budget; ++step) {
    const Vec& x = res.trajectory.states.back();
    for (std::size_t i = ptr; i < task.via_points.size(); ++i)
      res.via_closest[i] = std::min(res.via_closest[i], (x - task.via_points[i]).norm());
    const std::size_t before = ptr;
    while (ptr + 1 < goals.size() && (x - goals[ptr]).norm() <= task.switch_radius) ++ptr;
    if (ptr == before) {
      const double dist = (x - goals[ptr]).norm();
      if (dist < best - task.stall_progress) {
        best = dist;
        since_best = 0;
      } else if (task.stall_steps > 0 && ++since_best >= task.stall_steps && ptr + 1 < goals.size()) {
        ++ptr;
      }
    }
    if (ptr != before) {
      best = (x - goals[ptr]).norm();
      since_best = 0;
    }
    res.active_goal.push_back(ptr);
    res.active_distance.push_back((x - goals[ptr]).norm());
    Vec a = greedy_action(f, x, goals[ptr], task.nu, space, rng, greedy);
    Vec next = euler_step(f, x, a, task.nu);
    if (!next.allFinite()) throw IntegrationError("sim_teleop: nonfinite state at step " + std::to_string(step), step);
    if (arm) next = arm->clamp(next);
    res.trajectory.actions.push_back(std::move(a));
    res.trajectory.states.push_back(std::move(next));
  }
  res.final_distance = (res.trajectory.states.back() - task.target).norm();
  return res;
}

}  // namespace revmap
