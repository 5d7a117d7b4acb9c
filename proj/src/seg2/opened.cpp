#include "nlm/seg2/opened.hpp"

#include "nlm/error.hpp"

#include <cmath>

namespace nlm::seg2 {

SpeedScale SpeedScale::from_vbar(double vbar) {
  if (!(vbar != 0.0) || !std::isfinite(vbar)) throw Error("invalid-speed", "vbar must be nonzero");
  return {vbar > 0 ? 1 : -1, 1.0 / std::abs(vbar)};
}

OpenedRows opened_rows(const Params& p, double delta, double sigma, double nu, double qy, double h) {
  const DomainResult dom = domain_check(p, delta);
  if (!dom.pass) throw DomainExit(dom.guard);
  if (!(std::abs(nu) >= kGuardMargin)) throw DomainExit("nu-zero");
  const Coeffs c = eval_coeffs(p, delta);
  const double a = p.alpha();
  const double denom = 1.0 + h * h * c.rho * qy / (nu * nu);
  if (!(std::abs(denom) >= kGuardMargin)) throw DomainExit("speed-row-singular");

  OpenedRows o{};
  o.omega = h * qy / nu;
  const double w = sigma + o.omega;
  o.F_sigma = (c.r * (qy - c.rho * w * w) - c.Uprime) / c.Meff;

  const double lam = c.Gy / c.Delta * (nu - 2.0 * h * c.rho * sigma);
  const double phi = nu * (-(c.B12 - c.rho * c.rho) / c.Delta * o.F_sigma + c.rho * c.Gy / c.Delta * sigma * sigma);
  const double Egeom = c.B11 * (c.Gy - a) + a * c.rho * c.rho;
  const double R = (c.rho * (c.B11 - c.B12) * o.F_sigma + Egeom * (2.0 * o.omega * sigma + sigma * sigma) +
                    c.B11 * c.Gy * o.omega * o.omega) /
                   c.Delta;
  o.F_qy = (phi + h * h / nu * qy * R - lam * qy) / h;
  o.F_nu = (h * c.rho * o.F_sigma + h * (c.Gy - a) * sigma * sigma + h * h * c.rho / nu * o.F_qy +
            2.0 * h * h * (c.Gy - a) / nu * qy * sigma + h * h * h * c.Gy / (nu * nu) * qy * qy) /
           denom;

  o.F_exch = c.r * (qy - c.rho * w * w) + 0.5 * c.MeffPrime * sigma * sigma;
  o.P_POE = sigma * o.F_exch;
  return o;
}

Eigen::Vector4d oriented_rhs(const Params& p, const SectionState& Y, const SpeedScale& sp) {
  const double s = sp.s;
  const OpenedRows o = opened_rows(p, Y(0), s * Y(1), s * Y(2), s * Y(3), sp.h);
  return {Y(1), o.F_sigma, o.F_nu, o.F_qy};
}

Physical to_physical(const SectionState& Y, const SpeedScale& sp) {
  return {sp.s * Y(1), sp.s * Y(2) / sp.h, sp.h * Y(3) / Y(2)};
}

double reduced_energy(const Params& p, const SectionState& Y, const SpeedScale& sp) {
  const Physical ph = to_physical(Y, sp);
  return energy(p, Y(0), ph.v, ph.omega, ph.sigma);
}

double Eperp_of(const Params& p, const SectionState& Y, const SpeedScale& sp) {
  return eval_Eperp(p, Y(0), sp.s * Y(1));
}

ReturnData integrate_to_return(const Params& p, const SectionState& Y0, const SpeedScale& sp,
                               double horizon, const num::OdeOptions& opt) {
  const num::Field f = [&p, sp](double, const num::Vec& y, num::Vec& dy) {
    dy = oriented_rhs(p, y.head<4>(), sp);
  };
  const double s = sp.s;
  const num::Accumulator acc[] = {
      {"I_POE",
       [&p, sp, s](double, const num::Vec& y) {
         return s * opened_rows(p, y(0), s * y(1), s * y(2), s * y(3), sp.h).P_POE;
       }},
      {"I_u", [](double, const num::Vec& y) { return y(2); }},
  };
  const num::EventSpec events[] = {
      {[](double, const num::Vec& y) { return y(0); }, num::Direction::Rising, true, 1e-13}};

  ReturnData out;
  out.Y0 = Y0;
  out.trajectory = num::integrate(f, num::Vec(Y0), 0.0, horizon, events, acc, opt);
  const auto& ev = out.trajectory.event();
  if (!ev) throw Error("no-return", "no section return within the horizon");
  out.Y_plus = ev->y.head<4>();
  if (!(out.Y_plus(1) > 0.0)) throw Error("wrong-orientation", "returning crossing has zeta <= 0");
  out.tau = ev->t;
  out.I_POE = out.trajectory.accumulator(0);
  out.I_u = out.trajectory.accumulator(1);
  out.dE_perp = Eperp_of(p, out.Y_plus, sp) - Eperp_of(p, Y0, sp);
  return out;
}

Eigen::Vector4d residual_weights(double I_POE, double dE_perp, double u0, double Q0) {
  const double e_sc = std::max({1.0, std::abs(I_POE), std::abs(dE_perp)});
  const double u_sc = std::max(1.0, std::abs(u0));
  const double Q_sc = std::max(1.0, std::abs(Q0));
  return {1.0 / e_sc, 1.0 / u_sc, 1.0 / Q_sc, 1.0};
}

ExchangeResidual assemble_residual(const ReturnData& ret) {
  ExchangeResidual r;
  r.I_POE = ret.I_POE;
  r.C_u = ret.Y_plus(2) - ret.Y0(2);
  r.C_Q = ret.Y_plus(3) - ret.Y0(3);
  r.S = ret.I_u / ret.tau - 1.0;
  r.weights = residual_weights(ret.I_POE, ret.dE_perp, ret.Y0(2), ret.Y0(3));
  r.scaled_norm = r.weights.cwiseProduct(r.rows()).norm();
  return r;
}

SectionState seed_from_support(const Params& p, const ScalarSupport& sup) {
  return {0.0, sup.sigma_at_section(p), 1.0, 0.0};
}

Pose reconstruct_pose(const Params& p, const SectionState& Y0, const SpeedScale& sp, double tau,
                      const num::OdeOptions& opt) {
  // augmented state (Y, x, y, theta); d g / d vartheta = s g xi
  const num::Field f = [&p, sp](double, const num::Vec& z, num::Vec& dz) {
    const SectionState Y = z.head<4>();
    dz.head<4>() = oriented_rhs(p, Y, sp);
    const Physical ph = to_physical(Y, sp);
    const double th = z(6);
    dz(4) = sp.s * ph.v * std::cos(th);
    dz(5) = sp.s * ph.v * std::sin(th);
    dz(6) = sp.s * ph.omega;
  };
  num::Vec z0 = num::Vec::Zero(7);
  z0.head<4>() = Y0;
  const num::Vec z = num::flow(f, z0, 0.0, tau, opt);
  Pose g{z(4), z(5), z(6)};
  if (sp.s < 0) {
    // oriented time ran backward in physical time: invert the increment
    const double c = std::cos(g.dtheta), s = std::sin(g.dtheta);
    g = {-(c * z(4) + s * z(5)), -(-s * z(4) + c * z(5)), -z(6)};
  }
  return g;
}

double energy_drift(const Params& p, const ReturnData& ret, const SpeedScale& sp, int samples) {
  const double E0 = reduced_energy(p, ret.Y0, sp);
  double worst = 0.0;
  for (int i = 0; i <= samples; ++i) {
    const double t = ret.tau * i / samples;
    const SectionState Y = ret.trajectory(t).head<4>();
    worst = std::max(worst, std::abs(reduced_energy(p, Y, sp) - E0));
  }
  return worst / std::max(std::abs(E0), 1e-300);
}

namespace {

// Runs one least-squares solve from a given seed; returns the outcome.
SolveOutcome solve_from(const Params& p, double vbar, const SectionState& seed, double horizon,
                        const SolveOptions& opt) {
  const SpeedScale sp = SpeedScale::from_vbar(vbar);
  SolveOutcome out;
  out.vbar = vbar;
  if (!(seed(1) > 0.0) || !(seed(2) > 0.0)) {
    out.reason = "invalid-seed";
    return out;
  }
  auto unpack = [](const Eigen::VectorXd& x) -> SectionState {
    return {0.0, std::exp(x(0)), std::exp(x(1)), x(2)};
  };
  double last_dE = 0.0;
  num::ResidualFn residual = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    try {
      const ReturnData ret = integrate_to_return(p, unpack(x), sp, horizon, opt.ode);
      last_dE = ret.dE_perp;
      return assemble_residual(ret).rows();
    } catch (const DomainExit&) {
      throw;
    } catch (const Error& e) {
      // failed returns are outside the residual's domain for the solver
      throw DomainExit(e.kind());
    }
  };
  // weights are evaluated right after the residual at the same point
  num::WeightFn weights = [&](const Eigen::VectorXd& x, const Eigen::VectorXd& r) -> Eigen::VectorXd {
    return residual_weights(r(0), last_dE, std::exp(x(1)), x(2));
  };

  Eigen::VectorXd x0(3);
  x0 << std::log(seed(1)), std::log(seed(2)), seed(3);
  num::LsqResult ls;
  try {
    ls = num::damped_least_squares(residual, x0, weights, opt.lsq);
  } catch (const DomainExit& e) {
    out.reason = e.guard();
    out.Y0 = seed;
    return out;
  } catch (const Error& e) {
    out.reason = e.kind();
    out.Y0 = seed;
    return out;
  }
  out.iterations = ls.iterations;
  out.Y0 = unpack(ls.x);
  if (out.Y0(1) < opt.min_zeta_ratio * seed(1)) {
    out.reason = "collapsed-to-straight-running";
    return out;
  }

  // re-certify at the returned point from scratch
  ReturnData ret;
  try {
    ret = integrate_to_return(p, out.Y0, sp, horizon, opt.ode);
  } catch (const DomainExit& e) {
    out.reason = e.guard();
    return out;
  } catch (const Error& e) {
    out.reason = e.kind();
    return out;
  }
  out.residual = assemble_residual(ret);
  if (!(out.residual.scaled_norm <= opt.tau_ex)) {
    out.reason = "res-open";
    return out;
  }
  Cycle c;
  c.vbar = vbar;
  c.Y0 = out.Y0;
  c.Y_plus = ret.Y_plus;
  c.tau = ret.tau;
  c.residual = out.residual;
  c.energy_drift = energy_drift(p, ret, sp);
  c.dg = reconstruct_pose(p, out.Y0, sp, ret.tau, opt.ode);
  c.trajectory = std::move(ret.trajectory);
  out.cycle = std::move(c);
  out.accepted = true;
  return out;
}

}  // namespace

SolveOutcome solve_cycle(const Params& p, double vbar, const SectionState& seed, double horizon,
                         const SolveOptions& opt) {
  SolveOutcome first = solve_from(p, vbar, seed, horizon, opt);
  if (first.accepted) return first;
  for (double sign : {1.0, -1.0}) {
    SectionState alt = seed;
    alt(3) = seed(3) + sign * 0.1 * seed(1);
    SolveOutcome retry = solve_from(p, vbar, alt, horizon, opt);
    if (retry.accepted) return retry;
  }
  return first;
}

SolveOutcome solve_cycle(const Params& p, double vbar, const ScalarSupport& seed, const SolveOptions& opt) {
  return solve_cycle(p, vbar, seed_from_support(p, seed), opt.horizon_periods * seed.T_L, opt);
}

std::vector<SolveOutcome> continue_in_speed(const Params& p, const std::vector<double>& vbar_grid,
                                            const ScalarSupport& seed, const SolveOptions& opt) {
  std::vector<SolveOutcome> out;
  const SectionState base = seed_from_support(p, seed);
  const double horizon = opt.horizon_periods * seed.T_L;
  std::optional<SectionState> warm;
  double warm_sign = 0.0;
  for (double vbar : vbar_grid) {
    const double sign = vbar > 0 ? 1.0 : -1.0;
    // a previous solution only predicts; crossing zero speed restarts from the support
    const SectionState start = (warm && warm_sign == sign) ? *warm : base;
    SolveOutcome o = solve_cycle(p, vbar, start, horizon, opt);
    if (!o.accepted && warm && warm_sign == sign) {
      SolveOutcome cold = solve_cycle(p, vbar, base, horizon, opt);
      if (cold.accepted) o = std::move(cold);
    }
    if (o.accepted) {
      warm = o.Y0;
      warm_sign = sign;
    }
    out.push_back(std::move(o));
  }
  return out;
}

}  // namespace nlm::seg2
