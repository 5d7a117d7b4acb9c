#include "nlm/seg3/opened.hpp"

#include "nlm/error.hpp"
#include "nlm/numerics/quadrature.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>

namespace nlm::seg3 {

std::string_view to_string(Representation r) {
  return r == Representation::Shooting ? "shooting" : "collocation";
}

Representation parse_representation(std::string_view s) {
  if (s == "shooting") return Representation::Shooting;
  if (s == "collocation" || s == "hermite-simpson") return Representation::Collocation;
  throw Error("invalid-representation", std::string(s));
}

std::vector<double> uniform_durations(double T, std::size_t m) { return std::vector<double>(m, T / static_cast<double>(m)); }

namespace {

num::Field internal_field(const Params& p) {
  return [&p](double, const num::Vec& z, num::Vec& dz) { dz = eval_f_int(p, z.head<6>()); };
}

Vec4 transverse(const Vec6& z) { return Vec4(z(D1), z(D2), z(S1), z(S2)); }

double eperp_of(const Params& p, const Vec6& z) {
  return eval_Eperp(p, Vec2(z(D1), z(D2)), Vec2(z(S1), z(S2)));
}

double p_mode(const ParentModes& m, Sector s, const Vec6& z) {
  return m.u(s).dot(m.M0 * Vec2(z(S1), z(S2)));
}

struct SegmentFlows {
  std::vector<Vec6> ends;
  double v_integral = 0.0;
  double T = 0.0;
};

// Integrate every shooting segment, accumulating int v dt.
SegmentFlows flow_segments(const Params& p, const std::vector<Vec6>& nodes, const std::vector<double>& durations) {
  static const num::Accumulator acc[] = {{"v", [](double, const num::Vec& z) { return z(V); }}};
  SegmentFlows out;
  out.ends.reserve(nodes.size());
  for (std::size_t i = 0; i < nodes.size(); ++i) {
    try {
      const num::Trajectory tr = num::integrate(internal_field(p), nodes[i], 0.0, durations[i], {}, acc);
      out.ends.push_back(tr.final_state().head<6>());
      out.v_integral += tr.accumulator(0);
    } catch (const Error& e) {
      throw Error("segment-blowup", std::to_string(i) + " (" + e.what() + ")");
    }
    out.T += durations[i];
  }
  return out;
}

}  // namespace

// ---------------------------------------------------------------------------

DenseCycle::DenseCycle(const Params& p, const LiftedCycle& c) : rep_(c.representation), T_(0.0) {
  if (c.nodes.empty() || c.durations.empty()) throw Error("empty-cycle");
  starts_.push_back(0.0);
  for (double d : c.durations) starts_.push_back(starts_.back() + d);
  T_ = starts_.back();
  start_ = c.nodes.front();
  if (rep_ == Representation::Shooting) {
    flows_.reserve(c.durations.size());
    for (std::size_t i = 0; i < c.durations.size(); ++i)
      flows_.push_back(num::integrate(internal_field(p), c.nodes[i], 0.0, c.durations[i]));
    end_ = flows_.back().final_state().head<6>();
    for (std::size_t i = 0; i < flows_.size(); ++i) {
      const auto& ts = flows_[i].times();
      for (std::size_t k = 0; k + 1 < ts.size(); ++k) knots_.push_back(starts_[i] + ts[k]);
    }
    knots_.push_back(T_);
  } else {
    knots_ = starts_;
    if (c.nodes.size() != c.durations.size() + 1) throw Error("invalid-mesh", "collocation needs N+1 nodes");
    z_ = c.nodes;
    f_.reserve(z_.size());
    for (const Vec6& z : z_) f_.push_back(eval_f_int(p, z));
    end_ = z_.back();
  }
}

std::size_t DenseCycle::locate(double t) const {
  const auto it = std::upper_bound(starts_.begin(), starts_.end(), t);
  const std::size_t i = static_cast<std::size_t>(std::max<std::ptrdiff_t>(0, it - starts_.begin() - 1));
  return std::min(i, starts_.size() - 2);
}

Vec6 DenseCycle::state(double t) const {
  const std::size_t i = locate(t);
  const double tau = t - starts_[i];
  if (rep_ == Representation::Shooting) return flows_[i](tau).head<6>();
  const double h = starts_[i + 1] - starts_[i], s = tau / h;
  const double s2 = s * s, s3 = s2 * s;
  return (2 * s3 - 3 * s2 + 1) * z_[i] + (s3 - 2 * s2 + s) * h * f_[i] + (-2 * s3 + 3 * s2) * z_[i + 1] +
         (s3 - s2) * h * f_[i + 1];
}

Vec6 DenseCycle::derivative(double t) const {
  const std::size_t i = locate(t);
  const double tau = t - starts_[i];
  if (rep_ == Representation::Shooting) return flows_[i].derivative(tau).head<6>();
  const double h = starts_[i + 1] - starts_[i], s = tau / h;
  const double s2 = s * s;
  return ((6 * s2 - 6 * s) * z_[i] + (-6 * s2 + 6 * s) * z_[i + 1]) / h + (3 * s2 - 4 * s + 1) * f_[i] +
         (3 * s2 - 2 * s) * f_[i + 1];
}

CycleSamples sample_cycle(const DenseCycle& c, int n) {
  CycleSamples out;
  out.T = c.T();
  out.y.reserve(n);
  for (int i = 0; i < n; ++i) out.y.push_back(transverse(c.state(c.T() * i / n)));
  return out;
}

double mean_speed(const DenseCycle& c) {
  return num::piecewise_gauss([&](double t) { return c.state(t)(V); }, c.knots()) / c.T();
}

// ---------------------------------------------------------------------------

double blended_phase(const ParentModes& m, const BlendedGauge& g, const Vec6& z0) {
  const double vref = g.z_ref(V);
  const double pref = p_mode(m, g.sector, g.z_ref);
  return g.alpha * (z0(V) - vref) / std::max(std::abs(vref), g.v_sc) +
         (1.0 - g.alpha) * (p_mode(m, g.sector, z0) - pref) / std::max(std::abs(pref), g.p_sc);
}

Vec6 state_scales(const std::vector<Vec6>& nodes) {
  Vec6 d = Vec6::Constant(1e-3);
  for (const Vec6& z : nodes) d = d.cwiseMax(z.cwiseAbs());
  return d;
}

ResidualReport shooting_residual(const Params& p, const ParentModes& m, const std::vector<Vec6>& nodes,
                                 const std::vector<double>& durations, const BlendedGauge& gauge,
                                 const Vec6& Dz) {
  const std::size_t n = nodes.size();
  const SegmentFlows fl = flow_segments(p, nodes, durations);
  ResidualReport out;
  out.residual.resize(static_cast<Eigen::Index>(6 * n + 1));
  for (std::size_t i = 0; i < n; ++i)
    out.residual.segment<6>(static_cast<Eigen::Index>(6 * i)) = (fl.ends[i] - nodes[(i + 1) % n]).cwiseQuotient(Dz);
  out.residual(static_cast<Eigen::Index>(6 * n)) = blended_phase(m, gauge, nodes.front());
  out.norm = out.residual.norm();
  return out;
}

std::vector<Eigen::VectorXd> hermite_simpson_defects(const std::function<Eigen::VectorXd(const Eigen::VectorXd&)>& f,
                                                     const std::vector<Eigen::VectorXd>& z,
                                                     const std::vector<double>& dt) {
  std::vector<Eigen::VectorXd> H;
  H.reserve(dt.size());
  Eigen::VectorXd fi = f(z[0]);
  for (std::size_t i = 0; i < dt.size(); ++i) {
    const Eigen::VectorXd fn = f(z[i + 1]);
    const Eigen::VectorXd zm = 0.5 * (z[i] + z[i + 1]) + dt[i] / 8.0 * (fi - fn);
    const Eigen::VectorXd fm = f(zm);
    H.push_back(z[i + 1] - z[i] - dt[i] / 6.0 * (fi + 4.0 * fm + fn));
    fi = fn;
  }
  return H;
}

ResidualReport collocation_residual(const Params& p, const ParentModes& m, const std::vector<Vec6>& mesh,
                                    const std::vector<double>& durations, const BlendedGauge& gauge) {
  const std::size_t N = durations.size();
  if (N < 4 || mesh.size() != N + 1) throw Error("invalid-mesh", "need N >= 4 intervals and N+1 nodes");
  std::vector<Eigen::VectorXd> z(mesh.begin(), mesh.end());
  const auto H = hermite_simpson_defects(
      [&p](const Eigen::VectorXd& x) -> Eigen::VectorXd { return eval_f_int(p, x.head<6>()); }, z, durations);
  ResidualReport out;
  out.residual.resize(static_cast<Eigen::Index>(6 * N + 7));
  for (std::size_t i = 0; i < N; ++i) out.residual.segment<6>(static_cast<Eigen::Index>(6 * i)) = H[i];
  out.residual.segment<6>(static_cast<Eigen::Index>(6 * N)) = mesh[N] - mesh[0];
  out.residual(static_cast<Eigen::Index>(6 * N + 6)) = blended_phase(m, gauge, mesh.front());
  out.norm = out.residual.norm();
  return out;
}

// ---------------------------------------------------------------------------

LiftResult lift_support(const Params& p, const ParentModes& m, const TransverseSupport& support, const Vec2& qc0,
                        const LiftOptions& opt) {
  const int j = static_cast<int>(support.sector);
  const double Om = m.Omega(j);
  const double r_sc = std::max(support.y0.head<2>().cwiseAbs().maxCoeff(), 1e-6);
  Vec4 Dy;
  Dy << r_sc, r_sc, Om * r_sc, Om * r_sc;
  const double p_sc = std::max(Om * std::abs(support.A), 1e-9);
  const int n_rows = 7 + (opt.vbar_target ? 1 : 0) + (opt.poe_row ? 1 : 0);

  struct Eval {
    Vec4 yT;
    Vec2 qT;
    double vbar, Psi;
  };
  auto evaluate = [&](const Eigen::VectorXd& x) {
    if (!(x(6) > 0.0)) throw DomainExit("period-nonpositive");
    const Vec4 y0 = x.head<4>();
    const Vec6 z0 = lift_state(p, y0, x.segment<2>(4));
    static const num::Accumulator acc[] = {{"v", [](double, const num::Vec& z) { return z(V); }}};
    const num::Trajectory tr = num::integrate(internal_field(p), z0, 0.0, x(6), {}, acc);
    const Vec6 zT = tr.final_state().head<6>();
    return Eval{transverse(zT), carrier_channel(p, zT), tr.accumulator(0) / x(6),
                (eperp_of(p, zT) - eperp_of(p, z0)) / x(6)};
  };
  auto residual = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    const Eval e = evaluate(x);
    Eigen::VectorXd r(n_rows);
    r.head<4>() = (e.yT - x.head<4>()).cwiseQuotient(Dy);
    r.segment<2>(4) = (e.qT - x.segment<2>(4)) / opt.v_sc;
    r(6) = modal_row(m, x.head<4>())(2 * j + 1) / p_sc;
    int k = 7;
    if (opt.vbar_target) r(k++) = (e.vbar - *opt.vbar_target) / opt.v_sc;
    if (opt.poe_row) r(k++) = e.Psi / opt.psi_sc;
    return r;
  };

  Eigen::VectorXd x0(7);
  x0 << support.y0, qc0, support.T;
  const num::LsqResult out =
      num::damped_least_squares(num::ResidualFn(residual), x0, Eigen::VectorXd(Eigen::VectorXd::Ones(n_rows)), opt.lsq);
  if (!(out.scaled_norm <= opt.tolerance)) {
    char buf[96];
    std::snprintf(buf, sizeof buf, "candidate residual %.3e after ", out.scaled_norm);
    throw Error("lift-open", buf + out.status);
  }

  LiftResult res;
  res.y0 = out.x.head<4>();
  res.qc0 = out.x.segment<2>(4);
  res.scaled_norm = out.scaled_norm;
  res.iterations = out.iterations;
  res.R_car = (evaluate(out.x).qT - res.qc0).norm();
  res.cycle.sector = support.sector;
  res.cycle.representation = Representation::Shooting;
  res.cycle.T = out.x(6);
  res.cycle.nodes = {lift_state(p, res.y0, res.qc0)};
  res.cycle.durations = {res.cycle.T};
  return res;
}

LiftedCycle resample(const Params& p, const LiftedCycle& c, Representation rep, std::size_t segments) {
  const num::Trajectory tr = num::integrate(internal_field(p), c.nodes.front(), 0.0, c.T);
  LiftedCycle out;
  out.sector = c.sector;
  out.representation = rep;
  out.T = c.T;
  out.durations = uniform_durations(c.T, segments);
  const std::size_t n = rep == Representation::Shooting ? segments : segments + 1;
  for (std::size_t i = 0; i < n; ++i)
    out.nodes.push_back(i == segments ? Vec6(c.nodes.front()) : Vec6(tr(c.T * static_cast<double>(i) / segments).head<6>()));
  return out;
}

BlendedGauge make_gauge(const ParentModes& m, const LiftedCycle& guess, double alpha, double v_sc) {
  BlendedGauge g;
  g.sector = guess.sector;
  g.alpha = alpha;
  g.z_ref = guess.nodes.front();
  g.v_sc = v_sc;
  double pmax = 0.0;
  for (const Vec6& z : guess.nodes) pmax = std::max(pmax, std::abs(p_mode(m, guess.sector, z)));
  g.p_sc = std::max(pmax, 1e-9);
  return g;
}

namespace {

Eigen::VectorXd flatten(const std::vector<Vec6>& nodes, double T) {
  Eigen::VectorXd x(static_cast<Eigen::Index>(6 * nodes.size() + 1));
  for (std::size_t i = 0; i < nodes.size(); ++i) x.segment<6>(static_cast<Eigen::Index>(6 * i)) = nodes[i];
  x(x.size() - 1) = T;
  return x;
}

std::vector<Vec6> unflatten(const Eigen::VectorXd& x, std::size_t n) {
  std::vector<Vec6> nodes(n);
  for (std::size_t i = 0; i < n; ++i) nodes[i] = x.segment<6>(static_cast<Eigen::Index>(6 * i));
  return nodes;
}

// Exact mean of v over the Hermite-Simpson spline.
double hs_mean_speed(const Params& p, const std::vector<Vec6>& z, const std::vector<double>& dt) {
  double total = 0.0, T = 0.0;
  Vec6 fi = eval_f_int(p, z[0]);
  for (std::size_t i = 0; i < dt.size(); ++i) {
    const Vec6 fn = eval_f_int(p, z[i + 1]);
    total += 0.5 * dt[i] * (z[i](V) + z[i + 1](V)) + dt[i] * dt[i] / 12.0 * (fi(V) - fn(V));
    T += dt[i];
    fi = fn;
  }
  return total / T;
}

}  // namespace

CycleSolveResult solve_shooting(const Params& p, const ParentModes& m, const LiftedCycle& guess,
                                const CycleSolveOptions& opt) {
  if (guess.representation != Representation::Shooting) throw Error("invalid-representation", "shooting guess expected");
  const std::size_t n = guess.nodes.size();
  const BlendedGauge gauge = make_gauge(m, guess, opt.alpha, opt.v_sc);
  const Vec6 Dz = state_scales(guess.nodes);
  const Eigen::Index n_rows = static_cast<Eigen::Index>(6 * n + 1 + (opt.vbar_target ? 1 : 0));

  auto residual = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    const double T = x(x.size() - 1);
    if (!(T > 0.0)) throw DomainExit("period-nonpositive");
    const std::vector<Vec6> nodes = unflatten(x, n);
    const std::vector<double> dur = uniform_durations(T, n);
    Eigen::VectorXd r(n_rows);
    try {
      const SegmentFlows fl = flow_segments(p, nodes, dur);
      for (std::size_t i = 0; i < n; ++i)
        r.segment<6>(static_cast<Eigen::Index>(6 * i)) = (fl.ends[i] - nodes[(i + 1) % n]).cwiseQuotient(Dz);
      r(static_cast<Eigen::Index>(6 * n)) = blended_phase(m, gauge, nodes.front());
      if (opt.vbar_target) r(n_rows - 1) = (fl.v_integral / T - *opt.vbar_target) / opt.v_sc;
    } catch (const DomainExit&) {
      throw;
    } catch (const Error& e) {
      throw DomainExit(e.what());
    }
    return r;
  };

  const num::LsqResult out = num::damped_least_squares(num::ResidualFn(residual), flatten(guess.nodes, guess.T),
                                                       Eigen::VectorXd(Eigen::VectorXd::Ones(n_rows)), opt.lsq);
  CycleSolveResult res;
  res.cycle.sector = guess.sector;
  res.cycle.representation = Representation::Shooting;
  res.cycle.T = out.x(out.x.size() - 1);
  res.cycle.nodes = unflatten(out.x, n);
  res.cycle.durations = uniform_durations(res.cycle.T, n);
  res.R_rep = out.residual.head(static_cast<Eigen::Index>(6 * n + 1)).norm();
  res.R_ph = std::abs(out.residual(static_cast<Eigen::Index>(6 * n)));
  res.R_vbar = opt.vbar_target ? std::abs(out.residual(n_rows - 1)) : 0.0;
  res.scaled_norm = out.scaled_norm;
  res.iterations = out.iterations;
  res.converged = out.scaled_norm <= opt.tolerance;
  return res;
}

CycleSolveResult solve_collocation(const Params& p, const ParentModes& m, const LiftedCycle& guess,
                                   const CycleSolveOptions& opt) {
  if (guess.representation != Representation::Collocation)
    throw Error("invalid-representation", "collocation guess expected");
  const std::size_t N = guess.durations.size();
  const std::size_t n = N + 1;
  const BlendedGauge gauge = make_gauge(m, guess, opt.alpha, opt.v_sc);
  const Vec6 Dz = state_scales(guess.nodes);
  const Eigen::Index n_base = static_cast<Eigen::Index>(6 * N + 7);
  const Eigen::Index n_rows = n_base + (opt.vbar_target ? 1 : 0);

  Eigen::VectorXd w(n_rows);
  for (std::size_t i = 0; i < N; ++i) w.segment<6>(static_cast<Eigen::Index>(6 * i)) = Dz.cwiseInverse();
  w.segment<6>(static_cast<Eigen::Index>(6 * N)) = Dz.cwiseInverse();
  w.tail(n_rows - 6 * static_cast<Eigen::Index>(N) - 6).setOnes();

  auto residual = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    const double T = x(x.size() - 1);
    if (!(T > 0.0)) throw DomainExit("period-nonpositive");
    const std::vector<Vec6> mesh = unflatten(x, n);
    const std::vector<double> dur = uniform_durations(T, N);
    Eigen::VectorXd r(n_rows);
    r.head(n_base) = collocation_residual(p, m, mesh, dur, gauge).residual;
    if (opt.vbar_target) r(n_rows - 1) = (hs_mean_speed(p, mesh, dur) - *opt.vbar_target) / opt.v_sc;
    return r;
  };

  const num::LsqResult out =
      num::damped_least_squares(num::ResidualFn(residual), flatten(guess.nodes, guess.T), w, opt.lsq);
  CycleSolveResult res;
  res.cycle.sector = guess.sector;
  res.cycle.representation = Representation::Collocation;
  res.cycle.T = out.x(out.x.size() - 1);
  res.cycle.nodes = unflatten(out.x, n);
  res.cycle.durations = uniform_durations(res.cycle.T, N);
  res.R_rep = out.residual.head(n_base).norm();
  res.R_ph = std::abs(out.residual(n_base - 1));
  res.R_vbar = opt.vbar_target ? std::abs(out.residual(n_rows - 1)) : 0.0;
  res.scaled_norm = out.scaled_norm;
  res.iterations = out.iterations;
  res.converged = out.scaled_norm <= opt.tolerance;
  return res;
}

// ---------------------------------------------------------------------------

RhsCheck rhs_check(const Params& p, const DenseCycle& c, int grid) {
  RhsCheck out;
  for (int k = 0; k < grid; ++k) {
    const double t = c.T() * (k + 0.5) / grid;
    const double err = (c.derivative(t) - eval_f_int(p, c.state(t))).cwiseAbs().maxCoeff();
    out.full = std::max(out.full, err);
    // Position inside the owning segment.
    std::size_t i = 0;
    while (i + 1 < c.segments() && c.segment_start(i + 1) <= t) ++i;
    const double a = c.segment_start(i), b = (i + 1 < c.segments()) ? c.segment_start(i + 1) : c.T();
    const double frac = (t - a) / (b - a);
    if (frac >= 0.02 && frac <= 0.98) out.interior = std::max(out.interior, err);
  }
  return out;
}

double poe_chain_rule(const Params& p, const Vec6& z, const Vec6& zdot) {
  const SchurLayer s = eval_schur_layer(p, z(D1), z(D2));
  const PotentialValue pot = eval_potential(p, z(D1), z(D2));
  const Vec2 sig(z(S1), z(S2)), sigdot(zdot(S1), zdot(S2));
  const double dE1 = 0.5 * sig.dot(s.dMperp1 * sig) + pot.grad(0);
  const double dE2 = 0.5 * sig.dot(s.dMperp2 * sig) + pot.grad(1);
  return dE1 * zdot(D1) + dE2 * zdot(D2) + sig.dot(s.Mperp * sigdot);
}

PoeRow poe_row(const Params& p, const DenseCycle& c) {
  const double total =
      num::piecewise_gauss([&](double t) { return poe_chain_rule(p, c.state(t), c.derivative(t)); }, c.knots());
  PoeRow out;
  out.Psi = total / c.T();
  out.R = std::abs(out.Psi);
  out.dE = eperp_of(p, c.end_state()) - eperp_of(p, c.start_state());
  return out;
}

Pose reconstruct_pose(const DenseCycle& c) {
  num::Vec g = num::Vec::Zero(3);  // (x, y, theta)
  for (std::size_t i = 0; i < c.segments(); ++i) {
    const double a = c.segment_start(i), b = (i + 1 < c.segments()) ? c.segment_start(i + 1) : c.T();
    const double mid = 0.5 * (a + b), half = 0.5 * (b - a);
    // Clamp the dense lookup to this segment.
    num::Field rhs = [&](double t, const num::Vec& s, num::Vec& ds) {
      const Vec6 z = c.state(std::clamp(t, mid - half * (1 - 1e-14), mid + half * (1 - 1e-14)));
      ds(0) = z(V) * std::cos(s(2));
      ds(1) = z(V) * std::sin(s(2));
      ds(2) = z(W);
    };
    g = num::flow(rhs, g, a, b);
  }
  return Pose{g(0), g(1), g(2)};
}

double pose_distance(const Pose& g) { return std::hypot(g.dx, g.dy) + 0.1 * std::abs(g.dtheta); }

// ---------------------------------------------------------------------------

const CertRow* FinalCertificate::row(std::string_view name) const {
  for (const CertRow& r : rows)
    if (r.name == name) return &r;
  return nullptr;
}

FinalCertificate assemble_final_certificate(const Params& p, const ParentModes& m, const LiftedCycle& cycle,
                                            Sector sector, const CertificateOptions& opt) {
  const CertThresholds& th = opt.thresholds;
  FinalCertificate cert;
  cert.sector = sector;
  cert.params = p;
  cert.representation = cycle.representation;
  cert.poe_row_enabled = opt.poe_row_enabled;

  auto add = [&](std::string name, std::string group, double value, double threshold, bool gating, double scale = 1.0) {
    CertRow r;
    r.name = std::move(name);
    r.group = std::move(group);
    r.value = value;
    r.scale = scale;
    r.threshold = threshold;
    r.gating = gating;
    r.pass = std::isfinite(value) && std::abs(value) <= threshold;
    cert.trace.push_back(r.name);
    cert.rows.push_back(r);
    return cert.rows.back().pass;
  };

  // Domain group.
  if (!(cycle.T > 0.0)) {
    add("T_positive", "dom", cycle.T, 0.0, true);
    cert.label = "rejected";
    return cert;
  }
  const DenseCycle dense(p, cycle);
  cert.T = cycle.T;
  double lam_min = INFINITY;
  const int n_samp = 512;
  const double E0 = energy(p, dense.start_state());
  double drift = 0.0;
  cert.Eperp_min = INFINITY;
  cert.Eperp_max = -INFINITY;
  Vec2 dmin = Vec2::Constant(INFINITY), dmax = Vec2::Constant(-INFINITY);
  for (int i = 0; i <= n_samp; ++i) {
    const Vec6 z = i == n_samp ? dense.end_state() : dense.state(cycle.T * i / n_samp);
    const Mat2 Mp = eval_schur_layer(p, z(D1), z(D2)).Mperp;
    lam_min = std::min(lam_min, Eigen::SelfAdjointEigenSolver<Mat2>(Mp).eigenvalues()(0));
    drift = std::max(drift, std::abs(energy(p, z) - E0));
    const double Ep = eperp_of(p, z);
    cert.Eperp_min = std::min(cert.Eperp_min, Ep);
    cert.Eperp_max = std::max(cert.Eperp_max, Ep);
    dmin = dmin.cwiseMin(Vec2(z(D1), z(D2)));
    dmax = dmax.cwiseMax(Vec2(z(D1), z(D2)));
  }
  cert.energy_drift = drift / std::max(std::abs(E0), 1e-300);
  cert.A_nonv_ptp = (dmax - dmin).maxCoeff();
  {
    CertRow r;
    r.name = "lambda_min_Mperp";
    r.group = "dom";
    r.value = lam_min;
    r.threshold = 1e-8;
    r.pass = lam_min >= 1e-8;
    cert.trace.push_back(r.name);
    cert.rows.push_back(r);
  }

  // Representation rows.
  if (cycle.representation == Representation::Shooting) {
    std::vector<Vec6> ends;
    double worst = 0.0;
    double acc = 0.0;
    for (std::size_t i = 0; i < cycle.nodes.size(); ++i) {
      const Vec6 e = num::flow(internal_field(p), cycle.nodes[i], 0.0, cycle.durations[i]).head<6>();
      const double d = (e - cycle.nodes[(i + 1) % cycle.nodes.size()]).squaredNorm();
      acc += d;
      worst = std::max(worst, d);
    }
    add("R_ms", "rep", std::sqrt(acc), th.tau_rep, true);
  } else {
    BlendedGauge g;  // gauge row is reported separately
    g.alpha = 0.0;
    g.z_ref = cycle.nodes.front();
    const ResidualReport rr = collocation_residual(p, m, cycle.nodes, cycle.durations, g);
    add("R_BVP", "rep", rr.residual.head(rr.residual.size() - 1).norm(), th.tau_rep, true);
  }
  if (opt.R_ph) add("R_ph", "rep", *opt.R_ph, th.tau_rep, true);
  if (opt.R_vbar) add("R_vbar", "rep", *opt.R_vbar, th.tau_rep, true);
  cert.vbar = mean_speed(dense);

  // Mechanical rows.
  const Vec6 zs = dense.start_state(), ze = dense.end_state();
  add("R_supp_fin", "mech", (transverse(ze) - transverse(zs)).norm(), th.tau_supp, true);
  cert.features = compute_modal_features(m, sample_cycle(dense, n_samp));
  add("R_id_fin", "mech", cert.features.identity_distance(sector), th.tau_id, true);
  const bool car_ok = add("R_car_fin", "mech", (carrier_channel(p, ze) - carrier_channel(p, zs)).norm(), th.tau_car, true);
  const bool z_ok = add("R_z_fin", "mech", (ze - zs).norm(), th.tau_z, true);
  const RhsCheck rhs = rhs_check(p, dense);
  add("R_rhs_fin", "mech", rhs.full, th.tau_rhs, false);
  add("R_rhs_int", "mech", rhs.interior, th.tau_rhs, true);

  // POE row: always reported, gating only when enabled.
  const PoeRow poe = poe_row(p, dense);
  cert.Psi_POE = poe.Psi;
  add("R_POE_fin", "POE", poe.R, th.tau_POE, opt.poe_row_enabled);

  // Pose only after the internal certificate closes.
  if (z_ok && car_ok) {
    cert.dg = reconstruct_pose(dense);
    cert.d_g = pose_distance(cert.dg);
    cert.pose_evaluated = true;
    add("R_g_fin", "phys", std::max(0.0, th.d_min - cert.d_g), 0.0, true);
  } else {
    CertRow r;
    r.name = "R_g_fin";
    r.group = "phys";
    r.value = NAN;
    r.evaluated = false;
    r.pass = false;
    cert.rows.push_back(r);
  }

  bool internal_ok = true;
  for (const CertRow& r : cert.rows)
    if (r.gating && r.group != "POE" && r.group != "phys" && !r.pass) internal_ok = false;
  const bool moving = cert.pose_evaluated && cert.d_g >= th.d_min;
  const bool poe_ok = poe.R <= th.tau_POE;
  cert.pass = internal_ok && moving && (poe_ok || !opt.poe_row_enabled);
  if (!internal_ok)
    cert.label = "rejected";
  else if (!moving)
    cert.label = "stationary";
  else if (!poe_ok)
    cert.label = "moving-but-not-natural";
  else if (!opt.poe_row_enabled)
    cert.label = "moving-poe-ungated";
  else
    cert.label = "natural-locomotion";
  return cert;
}

namespace {

std::array<double, 15> param_vector(const Params& p) {
  return {p.I1, p.I2, p.I3, p.l1, p.L2, p.L3, p.m1, p.m2, p.m3, p.k12, p.k2_1, p.k2_2, p.k4_1, p.k4_2, p.u1};
}

double param_distance(const Params& a, const Params& star) {
  const auto x = param_vector(a), s = param_vector(star);
  double acc = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double sc = std::max(std::abs(s[i]), 1e-12);
    acc += std::pow((x[i] - s[i]) / sc, 2);
  }
  acc += std::pow(a.u2 - star.u2, 2);
  return std::sqrt(acc);
}

}  // namespace

PairedCertificate paired_certificate(const Params& theta_star, const FinalCertificate& ip, const FinalCertificate& ap,
                                     double d_min) {
  PairedCertificate out;
  auto add = [&](const std::string& name, std::string group, double value, double threshold, bool pass) {
    CertRow r;
    r.name = name;
    r.group = std::move(group);
    r.value = value;
    r.threshold = threshold;
    r.pass = pass;
    out.rows.push_back(r);
    if (!pass) out.failures.push_back(name);
  };
  add("IP_sector", "phys", ip.sector == Sector::IP ? 0.0 : 1.0, 0.0, ip.sector == Sector::IP);
  add("AP_sector", "phys", ap.sector == Sector::AP ? 0.0 : 1.0, 0.0, ap.sector == Sector::AP);
  add("IP_certificate", "mech", ip.pass ? 0.0 : 1.0, 0.0, ip.pass);
  add("AP_certificate", "mech", ap.pass ? 0.0 : 1.0, 0.0, ap.pass);
  add("IP_POE_gate", "POE", ip.poe_row_enabled ? 0.0 : 1.0, 0.0, ip.poe_row_enabled);
  add("AP_POE_gate", "POE", ap.poe_row_enabled ? 0.0 : 1.0, 0.0, ap.poe_row_enabled);
  const double dip = param_distance(ip.params, theta_star), dap = param_distance(ap.params, theta_star);
  add("theta_IP", "phys", dip, 0.0, dip == 0.0);
  add("theta_AP", "phys", dap, 0.0, dap == 0.0);
  add("IP_displacement", "phys", ip.d_g, d_min, ip.pose_evaluated && ip.d_g >= d_min);
  add("AP_displacement", "phys", ap.d_g, d_min, ap.pose_evaluated && ap.d_g >= d_min);
  out.pass = out.failures.empty();
  return out;
}

// ---------------------------------------------------------------------------

LiftedCycle ap_cover(const LiftedCycle& c, int m_cov) {
  if (m_cov != 1 && m_cov != 3) throw Error("invalid-cover", "m_cov must be 1 or 3");
  LiftedCycle out = c;
  if (m_cov == 1) return out;
  const bool mesh = c.representation == Representation::Collocation;
  const std::size_t n = mesh ? c.nodes.size() - 1 : c.nodes.size();
  out.nodes.clear();
  out.durations.clear();
  for (int k = 0; k < m_cov; ++k) {
    out.nodes.insert(out.nodes.end(), c.nodes.begin(), c.nodes.begin() + static_cast<std::ptrdiff_t>(n));
    out.durations.insert(out.durations.end(), c.durations.begin(), c.durations.end());
  }
  if (mesh) out.nodes.push_back(c.nodes.back());
  out.T = c.T * m_cov;
  return out;
}

LiftedCycle project_cover(const LiftedCycle& cover, int m_cov) {
  if (m_cov != 1 && m_cov != 3) throw Error("invalid-cover", "m_cov must be 1 or 3");
  LiftedCycle out = cover;
  if (m_cov == 1) return out;
  const std::size_t segs = cover.durations.size() / static_cast<std::size_t>(m_cov);
  out.durations.assign(cover.durations.begin(), cover.durations.begin() + static_cast<std::ptrdiff_t>(segs));
  const bool mesh = cover.representation == Representation::Collocation;
  out.nodes.assign(cover.nodes.begin(), cover.nodes.begin() + static_cast<std::ptrdiff_t>(mesh ? segs + 1 : segs));
  out.T = cover.T / m_cov;
  return out;
}

LiftedCycle time_reverse(const LiftedCycle& c) {
  LiftedCycle out = c;
  out.durations.assign(c.durations.rbegin(), c.durations.rend());
  const std::size_t n = c.nodes.size();
  if (c.representation == Representation::Shooting) {
    for (std::size_t k = 0; k < n; ++k) out.nodes[k] = time_reversal(c.nodes[(n - k) % n]);
  } else {
    for (std::size_t k = 0; k < n; ++k) out.nodes[k] = time_reversal(c.nodes[n - 1 - k]);
  }
  return out;
}

double check_reversal_compatibility(const Params& p, const std::vector<Vec6>& states, double tol) {
  double worst = 0.0;
  for (const Vec6& z : states)
    worst = std::max(worst, (time_reversal(eval_f_int(p, z)) + eval_f_int(p, time_reversal(z))).norm());
  if (!(worst <= tol)) throw Error("reversal-incompatible", std::to_string(worst));
  return worst;
}

std::vector<MobilityScore> mobility_probe(const std::vector<Candidate>& candidates, const MobilityScales& s) {
  std::vector<MobilityScore> out;
  out.reserve(candidates.size());
  for (const Candidate& c : candidates) {
    MobilityScore b;
    b.b_supp = std::exp(-c.R_supp / s.s_supp);
    b.b_id = std::exp(-c.R_id / s.s_id);
    b.b_lift = std::exp(-c.R_lift / s.s_lift);
    b.b_POE = std::exp(-c.R_POE / s.s_POE);
    b.b_mob = pose_distance(c.dg) >= s.d_min ? 1.0 : 0.0;
    out.push_back(b);
  }
  return out;
}

double exchange_rate(const Params& p, const TransverseSupport& s, double v_probe, int periods) {
  const Vec6 z0 = lift_state(p, s.y0, Vec2(v_probe, 0.0));
  const double horizon = periods * s.T;
  const Vec6 zT = num::flow(internal_field(p), z0, 0.0, horizon).head<6>();
  const double E0 = eperp_of(p, z0);
  return (eperp_of(p, zT) - E0) / (horizon * v_probe * E0);
}

}  // namespace nlm::seg3
