#include "nlm/seg3/charts.hpp"

#include "nlm/error.hpp"

#include <cmath>
#include <cstdio>

namespace nlm::seg3 {

namespace {

std::string num_string(double x) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.3e", x);
  return buf;
}

struct KindName {
  ChartKind kind;
  std::string_view name;
};

constexpr KindName kKinds[] = {
    {ChartKind::MeanSpeed, "mean-speed"},         {ChartKind::PoeConstrained, "poe-constrained"},
    {ChartKind::BranchTangent, "branch-tangent"}, {ChartKind::NonvActivity, "non-v-activity"},
    {ChartKind::ModalFloor, "modal-floor"},       {ChartKind::Secant, "secant"},
    {ChartKind::PhysicalHomotopy, "physical-homotopy"},
};

}  // namespace

std::string_view to_string(ChartKind k) {
  for (const auto& e : kKinds)
    if (e.kind == k) return e.name;
  return "unknown";
}

ChartKind parse_chart_kind(std::string_view s) {
  for (const auto& e : kKinds)
    if (e.name == s) return e.kind;
  throw Error("invalid-chart", std::string(s));
}

std::vector<std::string> active_rows(ChartKind k) {
  switch (k) {
    case ChartKind::MeanSpeed: return {"R_vbar_tar"};
    case ChartKind::PoeConstrained: return {"R_vbar_tar", "R_POE_chart"};
    case ChartKind::BranchTangent: return {"R_br"};
    case ChartKind::NonvActivity: return {"R_act"};
    case ChartKind::ModalFloor: return {"R_floor"};
    case ChartKind::Secant: return {"R_sec_v", "R_sec_nonv"};
    case ChartKind::PhysicalHomotopy: return {"R_phys", "R_vbar_hold"};
  }
  return {};
}

Params blend(const Params& src, const Params& dst, double alpha) {
  auto mix = [alpha](double a, double b) { return alpha == 1.0 ? b : (1.0 - alpha) * a + alpha * b; };
  Params out;
  out.I1 = mix(src.I1, dst.I1);
  out.I2 = mix(src.I2, dst.I2);
  out.I3 = mix(src.I3, dst.I3);
  out.l1 = mix(src.l1, dst.l1);
  out.L2 = mix(src.L2, dst.L2);
  out.L3 = mix(src.L3, dst.L3);
  out.m1 = mix(src.m1, dst.m1);
  out.m2 = mix(src.m2, dst.m2);
  out.m3 = mix(src.m3, dst.m3);
  out.k12 = mix(src.k12, dst.k12);
  out.k2_1 = mix(src.k2_1, dst.k2_1);
  out.k2_2 = mix(src.k2_2, dst.k2_2);
  out.k4_1 = mix(src.k4_1, dst.k4_1);
  out.k4_2 = mix(src.k4_2, dst.k4_2);
  out.u1 = mix(src.u1, dst.u1);
  out.u2 = mix(src.u2, dst.u2);
  return out;
}

Params ContinuationChart::params_at(const Params& fixed, double lambda) const {
  return kind == ChartKind::PhysicalHomotopy ? blend(theta_src, theta_dst, lambda) : fixed;
}

ChartFunctionals chart_functionals(const Params& p, const ParentModes& m, const LiftedCycle& c) {
  const Vec2 q_ip = m.M0 * m.u(Sector::IP), q_ap = m.M0 * m.u(Sector::AP);
  const double om_ip = m.omega(Sector::IP), om_ap = m.omega(Sector::AP);
  auto modal = [&](const num::Vec& z, const Vec2& q, double om) {
    const double Q = q(0) * z(D1) + q(1) * z(D2), P = q(0) * z(S1) + q(1) * z(S2);
    return Q * Q + P * P / (om * om);
  };
  const num::Accumulator acc[] = {
      {"v", [](double, const num::Vec& z) { return z(V); }},
      {"nonv", [](double, const num::Vec& z) { return z(D1) * z(D1) + z(D2) * z(D2); }},
      {"ip", [&](double, const num::Vec& z) { return modal(z, q_ip, om_ip); }},
      {"ap", [&](double, const num::Vec& z) { return modal(z, q_ap, om_ap); }},
  };
  const num::Field f = [&p](double, const num::Vec& z, num::Vec& dz) { dz = eval_f_int(p, z.head<6>()); };
  double sums[4] = {0, 0, 0, 0};
  double dE = 0.0, T = 0.0;
  for (std::size_t i = 0; i < c.nodes.size(); ++i) {
    num::Trajectory tr;
    try {
      tr = num::integrate(f, c.nodes[i], 0.0, c.durations[i], {}, acc);
    } catch (const DomainExit&) {
      throw;
    } catch (const Error& e) {
      throw Error("segment-blowup", std::to_string(i) + " (" + e.what() + ")");
    }
    for (int k = 0; k < 4; ++k) sums[k] += tr.accumulator(k);
    const Vec6 ze = tr.final_state().head<6>();
    dE += eval_Eperp(p, Vec2(ze(D1), ze(D2)), Vec2(ze(S1), ze(S2))) -
          eval_Eperp(p, Vec2(c.nodes[i](D1), c.nodes[i](D2)), Vec2(c.nodes[i](S1), c.nodes[i](S2)));
    T += c.durations[i];
  }
  ChartFunctionals out;
  out.T = T;
  out.vbar = sums[0] / T;
  out.A_nonv = std::sqrt(sums[1] / T);
  out.A_modal = Vec2(std::sqrt(sums[2] / T), std::sqrt(sums[3] / T));
  out.Psi = dE / T;
  return out;
}

Eigen::VectorXd chart_unknowns(const LiftedCycle& c) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(6 * c.nodes.size() + 1));
  for (std::size_t i = 0; i < c.nodes.size(); ++i) x.segment<6>(static_cast<Eigen::Index>(6 * i)) = c.nodes[i];
  x(x.size() - 1) = c.T;
  return x;
}

namespace {

LiftedCycle cycle_from(const Eigen::VectorXd& x, Sector s) {
  const std::size_t n = static_cast<std::size_t>((x.size() - 1) / 6);
  LiftedCycle c;
  c.sector = s;
  c.representation = Representation::Shooting;
  c.T = x(x.size() - 1);
  for (std::size_t i = 0; i < n; ++i) c.nodes.push_back(x.segment<6>(static_cast<Eigen::Index>(6 * i)));
  c.durations = uniform_durations(c.T, n);
  return c;
}

Eigen::VectorXd chart_rows(const ParentModes& m, const ContinuationChart& chart, const Params& params,
                           const LiftedCycle& cycle, double lambda) {
  const ChartFunctionals fn = chart_functionals(params, m, cycle);
  Eigen::VectorXd r;
  switch (chart.kind) {
    case ChartKind::MeanSpeed:
      r = Eigen::VectorXd::Constant(1, (fn.vbar - lambda) / chart.v_sc);
      break;
    case ChartKind::PoeConstrained:
      r.resize(2);
      r << (fn.vbar - lambda) / chart.v_sc, fn.Psi / chart.psi_sc;
      break;
    case ChartKind::BranchTangent: {
      const Eigen::VectorXd w = chart_unknowns(cycle);
      if (chart.w_br.size() != w.size() || chart.tau_br.size() != w.size())
        throw Error("invalid-chart", "branch reference has the wrong size");
      r = Eigen::VectorXd::Constant(
          1, (w - chart.w_br).dot(chart.tau_br) / (chart.tau_br.squaredNorm() + chart.eps_br) - lambda);
      break;
    }
    case ChartKind::NonvActivity:
      r = Eigen::VectorXd::Constant(1, (fn.A_nonv - lambda) / chart.a_sc);
      break;
    case ChartKind::ModalFloor:
      r = Eigen::VectorXd::Constant(1, (fn.A_modal(static_cast<int>(chart.sector)) - lambda) / chart.a_sc);
      break;
    case ChartKind::Secant:
      r.resize(2);
      r << (fn.vbar - (chart.vbar0 + lambda * chart.dvbar)) / chart.v_sc,
          (fn.A_nonv - (chart.A0 + lambda * chart.dA)) / chart.a_sc;
      break;
    case ChartKind::PhysicalHomotopy: {
      // Parameters are a function of alpha, so the parameter row is zero by
      // construction; it stays in the residual for the report.
      const Params target = blend(chart.theta_src, chart.theta_dst, lambda);
      r.resize(2);
      r << (params == target ? 0.0 : 1.0), (fn.vbar - chart.vbar_hold) / chart.v_sc;
      break;
    }
  }
  return r;
}

Eigen::VectorXd full_residual(const ParentModes& m, const ContinuationChart& chart, const Params& params,
                              const LiftedCycle& cycle, double lambda, const BlendedGauge& gauge, const Vec6& Dz) {
  const ResidualReport sh = shooting_residual(params, m, cycle.nodes, cycle.durations, gauge, Dz);
  const Eigen::VectorXd ch = chart_rows(m, chart, params, cycle, lambda);
  Eigen::VectorXd r(sh.residual.size() + ch.size());
  r << sh.residual, ch;
  return r;
}

double lambda_scale(const ContinuationChart& c) {
  switch (c.kind) {
    case ChartKind::MeanSpeed:
    case ChartKind::PoeConstrained: return c.v_sc;
    case ChartKind::NonvActivity:
    case ChartKind::ModalFloor: return c.a_sc;
    default: return 1.0;
  }
}

// Scaled coordinates for the arclength row: nodes by the state spread, T by
// itself, lambda by its chart scale.
Eigen::VectorXd arclength_scales(const ContinuationChart& chart, const LiftedCycle& ref) {
  const Vec6 Dz = state_scales(ref.nodes);
  const std::size_t n = ref.nodes.size();
  Eigen::VectorXd S(static_cast<Eigen::Index>(6 * n + 2));
  for (std::size_t i = 0; i < n; ++i) S.segment<6>(static_cast<Eigen::Index>(6 * i)) = Dz;
  S(static_cast<Eigen::Index>(6 * n)) = ref.T;
  S(static_cast<Eigen::Index>(6 * n + 1)) = lambda_scale(chart);
  return S;
}

Eigen::VectorXd augmented(const ChartPoint& p) {
  const Eigen::VectorXd w = chart_unknowns(p.cycle);
  Eigen::VectorXd x(w.size() + 1);
  x << w, p.lambda;
  return x;
}

num::ResidualFn guarded(num::ResidualFn f) {
  return [f = std::move(f)](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    try {
      return f(x);
    } catch (const DomainExit&) {
      throw;
    } catch (const Error& e) {
      throw DomainExit(e.what());
    }
  };
}

}  // namespace

Eigen::VectorXd chart_residual(const ParentModes& m, const ContinuationChart& chart, const Params& params,
                               const LiftedCycle& cycle, double lambda, const LiftedCycle& ref) {
  return full_residual(m, chart, params, cycle, lambda, make_gauge(m, ref, chart.alpha_gauge, chart.v_sc),
                       state_scales(ref.nodes));
}

StepResult solve_chart(const ParentModes& m, const ContinuationChart& chart, const ChartPoint& guess,
                       const StepOptions& opt) {
  const BlendedGauge gauge = make_gauge(m, guess.cycle, chart.alpha_gauge, chart.v_sc);
  const Vec6 Dz = state_scales(guess.cycle.nodes);
  const Params params = chart.params_at(guess.params, guess.lambda);
  auto res = guarded([&](const Eigen::VectorXd& w) -> Eigen::VectorXd {
    if (!(w(w.size() - 1) > 0.0)) throw DomainExit("period-nonpositive");
    return full_residual(m, chart, params, cycle_from(w, guess.cycle.sector), guess.lambda, gauge, Dz);
  });
  const Eigen::VectorXd w0 = chart_unknowns(guess.cycle);
  const Eigen::Index rows = res(w0).size();
  const num::LsqResult out = num::damped_least_squares(res, w0, Eigen::VectorXd(Eigen::VectorXd::Ones(rows)), opt.lsq);
  StepResult r;
  r.point = {cycle_from(out.x, guess.cycle.sector), guess.lambda, params};
  r.scaled_norm = out.scaled_norm;
  const Eigen::Index n_chart = static_cast<Eigen::Index>(active_rows(chart.kind).size());
  r.rows = out.residual.tail(n_chart);
  if (!(out.scaled_norm <= opt.tolerance))
    throw Error("chart-open", num_string(out.scaled_norm) + " " + out.status + " after " + std::to_string(out.iterations));
  return r;
}

StepResult continuation_step(const ParentModes& m, const ContinuationChart& chart, const ChartPoint& prev,
                             const ChartPoint& cur, double ds, const StepOptions& opt) {
  if (prev.cycle.nodes.size() != cur.cycle.nodes.size())
    throw Error("invalid-chart", "seed points need the same node count");
  const Sector sector = cur.cycle.sector;
  const Eigen::VectorXd S = arclength_scales(chart, cur.cycle);
  const Eigen::VectorXd x0 = augmented(cur);
  Eigen::VectorXd tangent = (x0 - augmented(prev)).cwiseQuotient(S);
  if (!(tangent.norm() > 0.0)) throw Error("invalid-chart", "seed points coincide");
  tangent.normalize();

  const BlendedGauge gauge = make_gauge(m, cur.cycle, chart.alpha_gauge, chart.v_sc);
  const Vec6 Dz = state_scales(cur.cycle.nodes);
  const Eigen::Index n_chart = static_cast<Eigen::Index>(active_rows(chart.kind).size());

  double h = ds;
  for (int attempt = 0; attempt <= opt.max_halvings; ++attempt, h *= 0.5) {
    auto res = guarded([&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
      const Eigen::VectorXd w = x.head(x.size() - 1);
      const double lambda = x(x.size() - 1);
      if (!(w(w.size() - 1) > 0.0)) throw DomainExit("period-nonpositive");
      const Eigen::VectorXd f =
          full_residual(m, chart, chart.params_at(cur.params, lambda), cycle_from(w, sector), lambda, gauge, Dz);
      Eigen::VectorXd r(f.size() + 1);
      r << f, (x - x0).cwiseQuotient(S).dot(tangent) - h;
      return r;
    });
    const Eigen::VectorXd pred = x0 + h * tangent.cwiseProduct(S);
    num::LsqResult out;
    try {
      const Eigen::Index rows = res(pred).size();
      out = num::damped_least_squares(res, pred, Eigen::VectorXd(Eigen::VectorXd::Ones(rows)), opt.lsq);
    } catch (const Error&) {
      continue;
    }
    if (!(out.scaled_norm <= opt.tolerance)) continue;
    StepResult r;
    const double lambda = out.x(out.x.size() - 1);
    r.point = {cycle_from(out.x.head(out.x.size() - 1), sector), lambda, chart.params_at(cur.params, lambda)};
    r.ds = h;
    r.halvings = attempt;
    r.scaled_norm = out.scaled_norm;
    r.rows = out.residual.segment(out.residual.size() - 1 - n_chart, n_chart);
    return r;
  }
  throw Error("chart-stall", std::string(to_string(chart.kind)) + " at lambda " + std::to_string(cur.lambda));
}

std::vector<ChartPoint> continue_chart(const ParentModes& m, const ContinuationChart& chart, const ChartPoint& prev,
                                       const ChartPoint& cur, double ds, double lambda_end, int max_steps,
                                       const std::function<bool(const ChartPoint&)>& visit,
                                       const StepOptions& opt) {
  std::vector<ChartPoint> out{prev, cur};
  const double dir = lambda_end >= cur.lambda ? 1.0 : -1.0;
  double h = ds;
  for (int k = 0; k < max_steps; ++k) {
    StepResult step;
    try {
      step = continuation_step(m, chart, out[out.size() - 2], out.back(), h, opt);
    } catch (const Error& e) {
      if (e.kind() == "chart-stall") break;
      throw;
    }
    out.push_back(step.point);
    if (visit && !visit(step.point)) break;
    if (dir * (step.point.lambda - lambda_end) >= 0.0) break;
    h = step.halvings == 0 ? std::min(ds, 1.5 * step.ds) : step.ds;
  }
  return out;
}

}  // namespace nlm::seg3
