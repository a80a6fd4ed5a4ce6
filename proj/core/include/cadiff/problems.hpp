#pragma once

// Benchmark problem families: the planar tabletop end-effector reach and the
// two-car reach-avoid. Both are posed as
//
//   min_x t_final   s.t.  g_i(x; y) <= 0,  h_j(x; y) = 0,  x in box
//
// with x = (t_final, controls...) and y = ProblemParams. All functions here
// are pure and thread-safe.

#include <array>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Core>

#include "cadiff/rng.hpp"

namespace cadiff {

enum class ProblemKind { Tabletop, TwoCar };

std::string_view to_string(ProblemKind kind);
ProblemKind problem_kind_from_string(std::string_view name);

using Point2 = Eigen::Vector2d;

struct ProblemParams {
  ProblemKind kind = ProblemKind::Tabletop;
  std::vector<Point2> goals;
  std::vector<Point2> obstacle_centers;
  std::vector<double> obstacle_radii;

  friend bool operator==(const ProblemParams&, const ProblemParams&) = default;
};

/// Decision vector (t_final, controls...). `normalized` tells whether every
/// component has been mapped to [-1, 1] by normalize().
struct DecisionVector {
  ProblemKind kind = ProblemKind::Tabletop;
  Eigen::VectorXd values;
  bool normalized = false;

  double t_final() const { return values[0]; }
  auto controls() const { return values.tail(values.size() - 1); }
};

/// Per-step state history. Column n is the state after n Euler steps.
/// Tabletop rows: (p_x, p_y). TwoCar rows: (p_x, p_y, v, theta) of car 1
/// followed by the same for car 2.
struct Trajectory {
  Eigen::MatrixXd states;
  double dt = 0.0;
};

/// Inequalities are laid out obstacle block first (step-major, then car, then
/// obstacle), followed by the inter-car block for TwoCar. Equalities are the
/// terminal position errors, car by car.
struct ConstraintValues {
  Eigen::VectorXd inequality;
  Eigen::VectorXd equality;
};

enum class ViolationCategory { Obstacle = 0, Goal = 1, InterCar = 2 };
inline constexpr std::size_t kViolationCategoryCount = 3;
std::string_view to_string(ViolationCategory category);

struct ViolationReport {
  double total = 0.0;
  std::array<double, kViolationCategoryCount> by_category{};

  double category(ViolationCategory c) const { return by_category[static_cast<std::size_t>(c)]; }
};

/// Fixed geometry and dimensions for a problem family.
struct ProblemLayout {
  ProblemKind kind;
  int steps;              // Euler steps N
  int cars;               // 1 for Tabletop (end effector), 2 for TwoCar
  int state_dim;          // per car
  int control_dim;        // per car per step
  int obstacles;  // nominal count; constraint code uses the params' count
  double radius_min;
  double radius_max;
  double t_min;
  double t_max;
  double workspace_half_width;
  double collision_margin;
  double inter_car_safety;  // TwoCar only

  int decision_dim() const { return 1 + steps * cars * control_dim; }
  int inequality_count(int n_obstacles) const {
    return steps * cars * n_obstacles + (cars > 1 ? steps : 0);
  }
  int inequality_count() const { return inequality_count(obstacles); }
  int equality_count() const { return 2 * cars; }
};

const ProblemLayout& layout(ProblemKind kind);

/// Fixed start states for each car, in state-vector layout.
std::vector<Eigen::VectorXd> start_states(ProblemKind kind);

/// Tabletop goal candidates (workspace corners) in sampling order.
const std::array<Point2, 4>& tabletop_corners();

/// Physical box of the decision vector.
struct DecisionBox {
  Eigen::VectorXd lower;
  Eigen::VectorXd upper;
};
const DecisionBox& decision_box(ProblemKind kind);

/// Deterministic given (seed, kind). Throws PlacementError when rejection
/// sampling exceeds 10,000 attempts.
ProblemParams sample_problem_params(std::uint64_t seed, ProblemKind kind);

/// Validates the ProblemParams invariants; throws ConfigError on failure.
void validate_params(const ProblemParams& params);

/// Flattened condition features scaled to [-1, 1] by workspace bounds:
/// goals, then centers, then radii (mapped from [radius_min, radius_max]).
Eigen::VectorXd condition_features(const ProblemParams& params);
int condition_feature_dim(ProblemKind kind);

Trajectory rollout(const DecisionVector& x, const ProblemParams& params);

double evaluate_objective(const DecisionVector& x, const ProblemParams& params);

ConstraintValues evaluate_constraints(const DecisionVector& x, const ProblemParams& params);
ConstraintValues evaluate_constraints(const Trajectory& traj, const ProblemParams& params);

ViolationReport violation(const DecisionVector& x, const ProblemParams& params);
ViolationReport violation(const ConstraintValues& values, ProblemKind kind);

/// Gradient of ViolationReport::total with respect to the physical decision
/// vector, propagated through the Euler rollout.
Eigen::VectorXd violation_gradient(const DecisionVector& x, const ProblemParams& params);

/// Vector-Jacobian product of the constraint map: returns
///   sum_i w_ineq[i] * dg_i/dx + sum_j w_eq[j] * dh_j/dx
/// for a trajectory previously produced by rollout(x, params).
Eigen::VectorXd constraint_vjp(const DecisionVector& x, const Trajectory& traj,
                               const ProblemParams& params, const Eigen::VectorXd& w_ineq,
                               const Eigen::VectorXd& w_eq);

/// Per-component affine map between the physical box and [-1, 1]. Physical
/// inputs outside the box are clamped; `clamped` (if given) reports it.
DecisionVector normalize(const DecisionVector& x, bool* clamped = nullptr);
DecisionVector denormalize(const DecisionVector& x);

/// Uniform draw from the physical decision box.
DecisionVector uniform_decision(ProblemKind kind, Rng& rng);

}  // namespace cadiff
