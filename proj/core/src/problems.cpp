#include "cadiff/problems.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "cadiff/errors.hpp"

namespace cadiff {

namespace {

constexpr int kMaxPlacementAttempts = 10'000;
constexpr double kObstacleRegionInflation = 1.0;

const ProblemLayout kTabletopLayout{
    .kind = ProblemKind::Tabletop,
    .steps = 80,
    .cars = 1,
    .state_dim = 2,
    .control_dim = 2,
    .obstacles = 4,
    .radius_min = 0.3,
    .radius_max = 1.0,
    .t_min = 4.0,
    .t_max = 20.0,
    .workspace_half_width = 4.0,
    .collision_margin = 0.0,
    .inter_car_safety = 0.0,
};

const ProblemLayout kTwoCarLayout{
    .kind = ProblemKind::TwoCar,
    .steps = 40,
    .cars = 2,
    .state_dim = 4,
    .control_dim = 2,
    .obstacles = 2,
    .radius_min = 0.5,
    .radius_max = 1.5,
    .t_min = 4.0,
    .t_max = 20.0,
    .workspace_half_width = 4.0,
    .collision_margin = 0.0,
    .inter_car_safety = 0.5,
};

DecisionBox make_box(const ProblemLayout& l) {
  const int n = l.decision_dim();
  DecisionBox box{Eigen::VectorXd::Constant(n, -1.0), Eigen::VectorXd::Constant(n, 1.0)};
  box.lower[0] = l.t_min;
  box.upper[0] = l.t_max;
  return box;
}

void require_finite(const Eigen::VectorXd& v, const char* what) {
  if (!v.allFinite()) throw NumericInputError(std::string(what) + " contains non-finite values");
}

void require_kind(const DecisionVector& x, const ProblemParams& params) {
  if (x.kind != params.kind) throw ConfigError("decision vector and params have different problem kinds");
  if (x.values.size() != layout(x.kind).decision_dim()) {
    throw ShapeError("decision vector has dimension " + std::to_string(x.values.size()) + ", expected " +
                     std::to_string(layout(x.kind).decision_dim()));
  }
}

void require_physical(const DecisionVector& x) {
  if (x.normalized) throw ConfigError("expected a physical-space decision vector");
}

Eigen::Index control_index(const ProblemLayout& l, int step, int car, int j) {
  return 1 + (static_cast<Eigen::Index>(step) * l.cars + car) * l.control_dim + j;
}

// Segment-disc intersection: closest point of [a, b] to c lies within r.
bool segment_hits_disc(const Point2& a, const Point2& b, const Point2& c, double r) {
  const Point2 ab = b - a;
  const double len2 = ab.squaredNorm();
  double s = len2 > 0.0 ? (c - a).dot(ab) / len2 : 0.0;
  s = std::clamp(s, 0.0, 1.0);
  return (a + s * ab - c).norm() <= r;
}

struct Segment {
  Point2 start;
  Point2 goal;
};

std::vector<Segment> start_goal_segments(ProblemKind kind, const std::vector<Point2>& goals) {
  const auto starts = start_states(kind);
  std::vector<Segment> segs;
  for (std::size_t c = 0; c < starts.size(); ++c) segs.push_back({starts[c].head<2>(), goals[c]});
  return segs;
}

std::vector<Point2> fixed_twocar_goals() { return {Point2(4.0, 0.0), Point2(0.0, 4.0)}; }

}  // namespace

std::string_view to_string(ProblemKind kind) {
  switch (kind) {
    case ProblemKind::Tabletop:
      return "tabletop";
    case ProblemKind::TwoCar:
      return "twocar";
  }
  return "unknown";
}

ProblemKind problem_kind_from_string(std::string_view name) {
  if (name == "tabletop") return ProblemKind::Tabletop;
  if (name == "twocar" || name == "two-car") return ProblemKind::TwoCar;
  throw ConfigError("unknown problem kind '" + std::string(name) + "'");
}

std::string_view to_string(ViolationCategory category) {
  switch (category) {
    case ViolationCategory::Obstacle:
      return "obstacle";
    case ViolationCategory::Goal:
      return "goal";
    case ViolationCategory::InterCar:
      return "inter_car";
  }
  return "unknown";
}

const ProblemLayout& layout(ProblemKind kind) {
  return kind == ProblemKind::Tabletop ? kTabletopLayout : kTwoCarLayout;
}

std::vector<Eigen::VectorXd> start_states(ProblemKind kind) {
  if (kind == ProblemKind::Tabletop) return {Eigen::Vector2d(0.0, 0.0)};
  Eigen::Vector4d car1(-4.0, 0.0, 0.0, 0.0);
  Eigen::Vector4d car2(0.0, -4.0, 0.0, std::numbers::pi / 2.0);
  return {car1, car2};
}

const std::array<Point2, 4>& tabletop_corners() {
  static const std::array<Point2, 4> corners{Point2(4.0, 4.0), Point2(-4.0, 4.0), Point2(-4.0, -4.0),
                                             Point2(4.0, -4.0)};
  return corners;
}

const DecisionBox& decision_box(ProblemKind kind) {
  static const DecisionBox tabletop = make_box(kTabletopLayout);
  static const DecisionBox twocar = make_box(kTwoCarLayout);
  return kind == ProblemKind::Tabletop ? tabletop : twocar;
}

ProblemParams sample_problem_params(std::uint64_t seed, ProblemKind kind) {
  const ProblemLayout& l = layout(kind);
  Rng rng(seed);
  ProblemParams params;
  params.kind = kind;
  if (kind == ProblemKind::Tabletop) {
    std::uniform_int_distribution<int> corner(0, 3);
    params.goals = {tabletop_corners()[static_cast<std::size_t>(corner(rng))]};
  } else {
    params.goals = fixed_twocar_goals();
  }

  const auto segments = start_goal_segments(kind, params.goals);
  // Obstacle region: bounding box of all starts and goals, inflated, kept
  // inside the workspace.
  Point2 lo = segments.front().start;
  Point2 hi = lo;
  for (const auto& s : segments) {
    lo = lo.cwiseMin(s.start).cwiseMin(s.goal);
    hi = hi.cwiseMax(s.start).cwiseMax(s.goal);
  }
  const double w = l.workspace_half_width;
  lo = (lo.array() - kObstacleRegionInflation).max(-w);
  hi = (hi.array() + kObstacleRegionInflation).min(w);

  for (int attempt = 0; attempt < kMaxPlacementAttempts; ++attempt) {
    std::vector<Point2> centers;
    std::vector<double> radii;
    for (int o = 0; o < l.obstacles; ++o) {
      centers.emplace_back(uniform(rng, lo.x(), hi.x()), uniform(rng, lo.y(), hi.y()));
      radii.push_back(uniform(rng, l.radius_min, l.radius_max));
    }
    bool ok = true;
    bool blocks_segment = false;
    for (int o = 0; o < l.obstacles && ok; ++o) {
      const Point2& c = centers[static_cast<std::size_t>(o)];
      const double r = radii[static_cast<std::size_t>(o)];
      if (std::abs(c.x()) >= w || std::abs(c.y()) >= w) ok = false;
      for (const auto& s : segments) {
        if ((c - s.start).norm() <= r || (c - s.goal).norm() <= r) ok = false;
        if (segment_hits_disc(s.start, s.goal, c, r)) blocks_segment = true;
      }
    }
    if (ok && blocks_segment) {
      params.obstacle_centers = std::move(centers);
      params.obstacle_radii = std::move(radii);
      return params;
    }
  }
  throw PlacementError("obstacle placement failed after " + std::to_string(kMaxPlacementAttempts) +
                       " attempts for " + std::string(to_string(kind)) + " seed " + std::to_string(seed));
}

void validate_params(const ProblemParams& params) {
  const ProblemLayout& l = layout(params.kind);
  const std::size_t expected_goals = params.kind == ProblemKind::Tabletop ? 1 : 2;
  if (params.goals.size() != expected_goals) throw ConfigError("wrong number of goals");
  if (params.obstacle_centers.size() != static_cast<std::size_t>(l.obstacles) ||
      params.obstacle_radii.size() != params.obstacle_centers.size()) {
    throw ConfigError("wrong number of obstacles for " + std::string(to_string(params.kind)));
  }
  if (params.kind == ProblemKind::Tabletop) {
    const auto& corners = tabletop_corners();
    if (std::find(corners.begin(), corners.end(), params.goals[0]) == corners.end()) {
      throw ConfigError("tabletop goal must be a workspace corner");
    }
  }
  const auto segments = start_goal_segments(params.kind, params.goals);
  for (std::size_t o = 0; o < params.obstacle_centers.size(); ++o) {
    const Point2& c = params.obstacle_centers[o];
    const double r = params.obstacle_radii[o];
    if (!(r >= l.radius_min && r <= l.radius_max)) throw ConfigError("obstacle radius out of range");
    if (!(std::abs(c.x()) < l.workspace_half_width && std::abs(c.y()) < l.workspace_half_width)) {
      throw ConfigError("obstacle center outside the workspace");
    }
    for (const auto& s : segments) {
      if ((c - s.start).norm() <= r || (c - s.goal).norm() <= r) {
        throw ConfigError("obstacle covers a start or goal point");
      }
    }
  }
}

int condition_feature_dim(ProblemKind kind) {
  const ProblemLayout& l = layout(kind);
  return 2 * l.cars + 3 * l.obstacles;
}

Eigen::VectorXd condition_features(const ProblemParams& params) {
  const ProblemLayout& l = layout(params.kind);
  const double w = l.workspace_half_width;
  Eigen::VectorXd f(2 * params.goals.size() + 3 * params.obstacle_centers.size());
  Eigen::Index i = 0;
  for (const auto& g : params.goals) {
    f[i++] = g.x() / w;
    f[i++] = g.y() / w;
  }
  for (const auto& c : params.obstacle_centers) {
    f[i++] = c.x() / w;
    f[i++] = c.y() / w;
  }
  const double mid = 0.5 * (l.radius_min + l.radius_max);
  const double half = 0.5 * (l.radius_max - l.radius_min);
  for (double r : params.obstacle_radii) f[i++] = (r - mid) / half;
  return f.cwiseMax(-1.0).cwiseMin(1.0);
}

Trajectory rollout(const DecisionVector& x, const ProblemParams& params) {
  require_kind(x, params);
  require_physical(x);
  require_finite(x.values, "decision vector");
  if (!(x.t_final() > 0.0)) throw ConfigError("t_final must be positive");

  const ProblemLayout& l = layout(x.kind);
  const int sd = l.state_dim;
  const auto starts = start_states(x.kind);
  Trajectory traj;
  traj.dt = x.t_final() / l.steps;
  traj.states.resize(sd * l.cars, l.steps + 1);
  for (int c = 0; c < l.cars; ++c) traj.states.col(0).segment(c * sd, sd) = starts[static_cast<std::size_t>(c)];

  const double dt = traj.dt;
  for (int n = 0; n < l.steps; ++n) {
    for (int c = 0; c < l.cars; ++c) {
      const double u0 = x.values[control_index(l, n, c, 0)];
      const double u1 = x.values[control_index(l, n, c, 1)];
      auto s = traj.states.col(n).segment(c * sd, sd);
      auto next = traj.states.col(n + 1).segment(c * sd, sd);
      if (x.kind == ProblemKind::Tabletop) {
        next(0) = s(0) + dt * u0;
        next(1) = s(1) + dt * u1;
      } else {
        const double v = s(2);
        const double th = s(3);
        next(0) = s(0) + dt * v * std::cos(th);
        next(1) = s(1) + dt * v * std::sin(th);
        next(2) = v + dt * u0;
        next(3) = th + dt * u1;
      }
    }
  }
  return traj;
}

double evaluate_objective(const DecisionVector& x, const ProblemParams& params) {
  require_kind(x, params);
  require_physical(x);
  return x.t_final();
}

ConstraintValues evaluate_constraints(const Trajectory& traj, const ProblemParams& params) {
  const ProblemLayout& l = layout(params.kind);
  const int sd = l.state_dim;
  const int n_obs = static_cast<int>(params.obstacle_centers.size());
  const int obstacle_block = l.steps * l.cars * n_obs;
  ConstraintValues out;
  out.inequality.resize(l.inequality_count(n_obs));
  out.equality.resize(l.equality_count());

  for (int n = 1; n <= l.steps; ++n) {
    for (int c = 0; c < l.cars; ++c) {
      const Point2 p = traj.states.block<2, 1>(c * sd, n);
      for (int o = 0; o < n_obs; ++o) {
        const auto uo = static_cast<std::size_t>(o);
        out.inequality[((n - 1) * l.cars + c) * n_obs + o] =
            params.obstacle_radii[uo] + l.collision_margin - (p - params.obstacle_centers[uo]).norm();
      }
    }
    if (l.cars > 1) {
      const Point2 p1 = traj.states.block<2, 1>(0, n);
      const Point2 p2 = traj.states.block<2, 1>(sd, n);
      out.inequality[obstacle_block + n - 1] = l.inter_car_safety - (p1 - p2).norm();
    }
  }
  for (int c = 0; c < l.cars; ++c) {
    out.equality.segment<2>(2 * c) =
        traj.states.block<2, 1>(c * sd, l.steps) - params.goals[static_cast<std::size_t>(c)];
  }
  return out;
}

ConstraintValues evaluate_constraints(const DecisionVector& x, const ProblemParams& params) {
  return evaluate_constraints(rollout(x, params), params);
}

ViolationReport violation(const ConstraintValues& values, ProblemKind kind) {
  const ProblemLayout& l = layout(kind);
  const Eigen::Index inter_car = l.cars > 1 ? l.steps : 0;
  const Eigen::Index obstacle_block = values.inequality.size() - inter_car;
  ViolationReport r;
  r.by_category[static_cast<std::size_t>(ViolationCategory::Obstacle)] =
      values.inequality.head(obstacle_block).cwiseMax(0.0).sum();
  r.by_category[static_cast<std::size_t>(ViolationCategory::InterCar)] =
      values.inequality.tail(inter_car).cwiseMax(0.0).sum();
  r.by_category[static_cast<std::size_t>(ViolationCategory::Goal)] = values.equality.cwiseAbs().sum();
  r.total = r.by_category[0] + r.by_category[1] + r.by_category[2];
  return r;
}

ViolationReport violation(const DecisionVector& x, const ProblemParams& params) {
  return violation(evaluate_constraints(x, params), params.kind);
}

Eigen::VectorXd constraint_vjp(const DecisionVector& x, const Trajectory& traj, const ProblemParams& params,
                               const Eigen::VectorXd& w_ineq, const Eigen::VectorXd& w_eq) {
  const ProblemLayout& l = layout(params.kind);
  const int sd = l.state_dim;
  const int n_obs = static_cast<int>(params.obstacle_centers.size());
  const int obstacle_block = l.steps * l.cars * n_obs;
  if (w_ineq.size() != l.inequality_count(n_obs) || w_eq.size() != l.equality_count()) {
    throw ShapeError("constraint weight vectors do not match the constraint layout");
  }

  // adj.col(n) accumulates d(weighted constraints)/d(state_n).
  Eigen::MatrixXd adj = Eigen::MatrixXd::Zero(sd * l.cars, l.steps + 1);
  for (int n = 1; n <= l.steps; ++n) {
    for (int c = 0; c < l.cars; ++c) {
      const Point2 p = traj.states.block<2, 1>(c * sd, n);
      for (int o = 0; o < n_obs; ++o) {
        const double w = w_ineq[((n - 1) * l.cars + c) * n_obs + o];
        if (w == 0.0) continue;
        const Point2 d = p - params.obstacle_centers[static_cast<std::size_t>(o)];
        const double dist = d.norm();
        if (dist > 0.0) adj.block<2, 1>(c * sd, n) -= (w / dist) * d;
      }
    }
    if (l.cars > 1) {
      const double w = w_ineq[obstacle_block + n - 1];
      if (w != 0.0) {
        const Point2 d = traj.states.block<2, 1>(0, n) - traj.states.block<2, 1>(sd, n);
        const double dist = d.norm();
        if (dist > 0.0) {
          adj.block<2, 1>(0, n) -= (w / dist) * d;
          adj.block<2, 1>(sd, n) += (w / dist) * d;
        }
      }
    }
  }
  for (int c = 0; c < l.cars; ++c) adj.block<2, 1>(c * sd, l.steps) += w_eq.segment<2>(2 * c);

  const double dt = traj.dt;
  const double inv_steps = 1.0 / l.steps;
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(x.values.size());
  double grad_t = 0.0;
  for (int n = l.steps - 1; n >= 0; --n) {
    for (int c = 0; c < l.cars; ++c) {
      const Eigen::Index i0 = control_index(l, n, c, 0);
      const Eigen::Index i1 = control_index(l, n, c, 1);
      const double u0 = x.values[i0];
      const double u1 = x.values[i1];
      const Eigen::VectorXd lam = adj.col(n + 1).segment(c * sd, sd);
      auto prev = adj.col(n).segment(c * sd, sd);
      if (params.kind == ProblemKind::Tabletop) {
        grad[i0] = dt * lam(0);
        grad[i1] = dt * lam(1);
        grad_t += inv_steps * (u0 * lam(0) + u1 * lam(1));
        prev += lam;
      } else {
        const double v = traj.states(c * sd + 2, n);
        const double th = traj.states(c * sd + 3, n);
        const double ct = std::cos(th);
        const double st = std::sin(th);
        grad[i0] = dt * lam(2);
        grad[i1] = dt * lam(3);
        grad_t += inv_steps * (v * ct * lam(0) + v * st * lam(1) + u0 * lam(2) + u1 * lam(3));
        prev(0) += lam(0);
        prev(1) += lam(1);
        prev(2) += lam(2) + dt * (ct * lam(0) + st * lam(1));
        prev(3) += lam(3) + dt * v * (-st * lam(0) + ct * lam(1));
      }
    }
  }
  grad[0] = grad_t;
  return grad;
}

Eigen::VectorXd violation_gradient(const DecisionVector& x, const ProblemParams& params) {
  const Trajectory traj = rollout(x, params);
  const ConstraintValues cv = evaluate_constraints(traj, params);
  const Eigen::VectorXd w_ineq = (cv.inequality.array() > 0.0).cast<double>();
  const Eigen::VectorXd w_eq = cv.equality.unaryExpr([](double h) { return h > 0.0 ? 1.0 : (h < 0.0 ? -1.0 : 0.0); });
  return constraint_vjp(x, traj, params, w_ineq, w_eq);
}

DecisionVector normalize(const DecisionVector& x, bool* clamped) {
  if (x.normalized) throw ConfigError("decision vector is already normalized");
  const DecisionBox& box = decision_box(x.kind);
  if (x.values.size() != box.lower.size()) throw ShapeError("decision vector has the wrong dimension");
  const Eigen::VectorXd clipped = x.values.cwiseMax(box.lower).cwiseMin(box.upper);
  if (clamped != nullptr) *clamped = (clipped.array() != x.values.array()).any();
  const Eigen::ArrayXd center = 0.5 * (box.upper + box.lower).array();
  const Eigen::ArrayXd half = 0.5 * (box.upper - box.lower).array();
  DecisionVector out{x.kind, ((clipped.array() - center) / half).matrix(), true};
  return out;
}

DecisionVector denormalize(const DecisionVector& x) {
  if (!x.normalized) throw ConfigError("decision vector is not normalized");
  const DecisionBox& box = decision_box(x.kind);
  if (x.values.size() != box.lower.size()) throw ShapeError("decision vector has the wrong dimension");
  const Eigen::ArrayXd center = 0.5 * (box.upper + box.lower).array();
  const Eigen::ArrayXd half = 0.5 * (box.upper - box.lower).array();
  return DecisionVector{x.kind, (x.values.array() * half + center).matrix(), false};
}

DecisionVector uniform_decision(ProblemKind kind, Rng& rng) {
  const DecisionBox& box = decision_box(kind);
  DecisionVector x{kind, Eigen::VectorXd(box.lower.size()), false};
  for (Eigen::Index i = 0; i < x.values.size(); ++i) x.values[i] = uniform(rng, box.lower[i], box.upper[i]);
  return x;
}

}  // namespace cadiff
