#pragma once

#include "nlm/seg3/opened.hpp"

#include <functional>
#include <string>
#include <vector>

namespace nlm::seg3 {

enum class ChartKind { MeanSpeed, PoeConstrained, BranchTangent, NonvActivity, ModalFloor, Secant, PhysicalHomotopy };

std::string_view to_string(ChartKind k);
ChartKind parse_chart_kind(std::string_view s);

/// Names of the chart rows active for a kind, in residual order.
std::vector<std::string> active_rows(ChartKind k);

/// theta(alpha) = (1 - alpha) theta_src + alpha theta_dst, component-wise.
Params blend(const Params& src, const Params& dst, double alpha);

/// Cycle functionals entering the chart rows, from one pass over the shooting
/// segments.
struct ChartFunctionals {
  double T = 0.0;
  double vbar = 0.0;
  double Psi = 0.0;     // (1/T) sum of E_perp increments over the segments
  double A_nonv = 0.0;  // RMS of (delta1, delta2)
  Vec2 A_modal = Vec2::Zero();  // RMS of (Q_k, P_k / Omega_k)
};

ChartFunctionals chart_functionals(const Params& p, const ParentModes& m, const LiftedCycle& c);

/// Continuation chart on the multiple-shooting representation. The parameter
/// lambda means: target speed (mean-speed, POE-constrained), branch coordinate
/// (branch tangent), activity floor (non-v activity, modal floor), secant
/// position, or homotopy fraction alpha (physical homotopy).
struct ContinuationChart {
  ChartKind kind = ChartKind::MeanSpeed;
  Sector sector = Sector::IP;
  double v_sc = 1.0, psi_sc = 1.0, a_sc = 1.0;
  double alpha_gauge = 0.5;

  // branch tangent
  Eigen::VectorXd w_br, tau_br;
  double eps_br = 1e-12;
  // secant
  double vbar0 = 0.0, dvbar = 0.0, A0 = 0.0, dA = 0.0;
  // physical homotopy (speed held at vbar_hold)
  Params theta_src, theta_dst;
  double vbar_hold = 1.0;

  Params params_at(const Params& fixed, double lambda) const;
};

struct ChartPoint {
  LiftedCycle cycle;  // shooting representation
  double lambda = 0.0;
  Params params;
};

struct StepOptions {
  int max_halvings = 6;
  double tolerance = 1e-10;
  num::LsqOptions lsq{60, 1e-14, 1e-15, 1e-3};
};

struct StepResult {
  ChartPoint point;
  double ds = 0.0;  // step actually taken
  int halvings = 0;
  double scaled_norm = 0.0;
  Eigen::VectorXd rows;  // active chart rows at the solution
};

/// Unknown vector (nodes, T) of a shooting cycle.
Eigen::VectorXd chart_unknowns(const LiftedCycle& c);

/// Chart residual: shooting matching rows scaled by the node spread of `ref`,
/// the blended gauge against the first node of `ref`, then the active chart
/// rows at lambda.
Eigen::VectorXd chart_residual(const ParentModes& m, const ContinuationChart& chart, const Params& params,
                               const LiftedCycle& cycle, double lambda, const LiftedCycle& ref);

/// Pseudo-arclength step from `cur` along the secant from `prev`. The
/// corrector halves ds up to max_halvings times, then throws
/// Error("chart-stall").
StepResult continuation_step(const ParentModes& m, const ContinuationChart& chart, const ChartPoint& prev,
                             const ChartPoint& cur, double ds, const StepOptions& opt = {});

/// Repeated steps until lambda passes lambda_end, a step stalls, or `visit`
/// returns false. Returns the accepted points including the two seeds.
std::vector<ChartPoint> continue_chart(const ParentModes& m, const ContinuationChart& chart, const ChartPoint& prev,
                                       const ChartPoint& cur, double ds, double lambda_end, int max_steps,
                                       const std::function<bool(const ChartPoint&)>& visit = {},
                                       const StepOptions& opt = {});

/// Solve the chart at fixed lambda (no arclength row) from a guess.
StepResult solve_chart(const ParentModes& m, const ContinuationChart& chart, const ChartPoint& guess,
                       const StepOptions& opt = {});

}  // namespace nlm::seg3
