#include "nlm/seg3/modal.hpp"

#include "nlm/error.hpp"
#include "nlm/numerics/linalg.hpp"
#include "nlm/numerics/ode.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <complex>

namespace nlm::seg3 {

std::string_view to_string(Sector s) { return s == Sector::IP ? "IP" : "AP"; }

Sector parse_sector(std::string_view s) {
  std::string u(s);
  for (char& c : u) c = static_cast<char>(std::toupper(static_cast<unsigned char>(c)));
  if (u == "IP") return Sector::IP;
  if (u == "AP") return Sector::AP;
  throw Error("invalid-sector", std::string(s));
}

std::string_view to_string(Gauge g) {
  switch (g) {
    case Gauge::Modal: return "modal";
    case Gauge::Tangent: return "tangent";
    case Gauge::SeedTracking: return "seed-tracking";
  }
  return "modal";
}

Gauge parse_gauge(std::string_view s) {
  if (s == "modal") return Gauge::Modal;
  if (s == "tangent") return Gauge::Tangent;
  if (s == "seed-tracking" || s == "seed") return Gauge::SeedTracking;
  throw Error("invalid-gauge", std::string(s));
}

ParentModes solve_parent_modes(const Params& p) {
  ParentModes m;
  m.M0 = eval_schur_layer(p, 0.0, 0.0).Mperp;
  m.K0 = eval_potential(p, 0.0, 0.0).hess;
  const num::GenEig ge = num::sym_gen_eig(m.K0, m.M0);
  if (!(ge.values(0) > 0.0)) throw Error("mode-degenerate", "non-positive stiffness eigenvalue");
  if (std::abs(std::sqrt(ge.values(1)) - std::sqrt(ge.values(0))) <= 1e-8 * std::sqrt(ge.values(1)))
    throw Error("mode-degenerate");
  // Label by component signs; fall back to frequency order when a mode has a
  // zero component (decoupled case).
  int ip = 0;
  const auto same_sign = [&](int k) { return ge.vectors(0, k) * ge.vectors(1, k) > 0.0; };
  if (same_sign(1) && !same_sign(0)) ip = 1;
  const int ap = 1 - ip;
  m.U.col(0) = ge.vectors.col(ip);
  m.U.col(1) = ge.vectors.col(ap);
  m.Omega << std::sqrt(ge.values(ip)), std::sqrt(ge.values(ap));
  return m;
}

Vec4 modal_row(const ParentModes& m, const Vec4& y) {
  const Vec2 Mr = m.M0 * y.head<2>(), Ms = m.M0 * y.tail<2>();
  return Vec4(m.U.col(0).dot(Mr), m.U.col(0).dot(Ms), m.U.col(1).dot(Mr), m.U.col(1).dot(Ms));
}

SupportSeed seed_support(const ParentModes& m, Sector s, double A) {
  SupportSeed seed;
  seed.y0 << A * m.u(s), 0.0, 0.0;
  seed.T = 2.0 * M_PI / m.omega(s);
  return seed;
}

namespace {

num::Field perp_field(const Params& p) {
  return [&p](double, const num::Vec& y, num::Vec& dy) { dy = eval_f_perp(p, y.head<4>()); };
}

Vec4 flow_perp(const Params& p, const Vec4& y0, double T) {
  return num::flow(perp_field(p), y0, 0.0, T).head<4>();
}

}  // namespace

TransverseSupport solve_support(const Params& p, const ParentModes& m, const SupportSeed& seed,
                                const SupportTarget& target, const SupportOptions& opt) {
  const int j = static_cast<int>(target.sector);
  const double Om = m.Omega(j);
  const double r_sc = std::max(seed.y0.head<2>().cwiseAbs().maxCoeff(), 1e-6);
  Vec4 Dinv;
  Dinv << 1.0 / r_sc, 1.0 / r_sc, 1.0 / (Om * r_sc), 1.0 / (Om * r_sc);
  const double q_sc = std::max(std::abs(target.amplitude), 1e-6), p_sc = Om * q_sc;

  // Gauge reference point and direction.
  Vec4 y_ref = seed.y0, ydot_ref = Vec4::Zero();
  if (opt.gauge != Gauge::Modal) {
    if (opt.reference.T > 0.0) {
      y_ref = opt.reference.phase == 0.0 ? opt.reference.y0
                                         : flow_perp(p, opt.reference.y0, opt.reference.phase * opt.reference.T);
    }
    ydot_ref = eval_f_perp(p, y_ref);
  }
  const double tan_norm = std::max((Dinv.cwiseProduct(Dinv.cwiseProduct(ydot_ref))).norm(), 1e-300);

  auto gauge_row = [&](const Vec4& y0, const Vec4& mod) -> double {
    switch (opt.gauge) {
      case Gauge::Modal: return mod(2 * j + 1) / p_sc;
      case Gauge::Tangent:
        return (y0 - y_ref).dot(Dinv.cwiseProduct(Dinv.cwiseProduct(ydot_ref))) / tan_norm;
      case Gauge::SeedTracking:
        return (y0 - y_ref).dot(ydot_ref) / (ydot_ref.squaredNorm() + opt.eps_phase);
    }
    return 0.0;
  };

  std::vector<int> mixed_rows;
  for (int k = 0; k < 4; ++k)
    if (target.mixed_active[k]) mixed_rows.push_back(k);
  const int n_rows = 5 + (target.mixed() ? static_cast<int>(mixed_rows.size()) : 1);

  auto residual = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
    if (!(x(4) > 0.0)) throw DomainExit("period-nonpositive");
    const Vec4 y0 = x.head<4>();
    const Vec4 yT = flow_perp(p, y0, x(4));
    const Vec4 mod = modal_row(m, y0);
    Eigen::VectorXd r(n_rows);
    r.head<4>() = Dinv.cwiseProduct(yT - y0);
    r(4) = gauge_row(y0, mod);
    if (target.mixed()) {
      for (std::size_t i = 0; i < mixed_rows.size(); ++i) {
        const int k = mixed_rows[i];
        const double sc = (k % 2 == 0) ? q_sc : p_sc;
        r(5 + static_cast<int>(i)) = (mod(k) - target.mixed_target(k)) / sc;
      }
    } else {
      r(5) = (mod(2 * j) - target.amplitude) / q_sc;
    }
    return r;
  };

  Eigen::VectorXd x0(5);
  x0 << seed.y0, seed.T;
  const num::LsqResult out =
      num::damped_least_squares(num::ResidualFn(residual), x0, Eigen::VectorXd(Eigen::VectorXd::Ones(n_rows)), opt.lsq);

  TransverseSupport s;
  s.sector = target.sector;
  s.A = target.amplitude;
  s.y0 = out.x.head<4>();
  s.T = out.x(4);
  s.gauge = opt.gauge;
  s.scaled_norm = out.scaled_norm;
  s.iterations = out.iterations;
  s.gauge_residual = std::abs(out.residual(4));
  support_diagnostics(p, s);
  s.R_ph = s.gauge_residual;
  if (!(s.R_supp <= opt.support_tolerance) || !(s.R_ph <= opt.support_tolerance))
    throw Error("support-open", "R_supp " + std::to_string(s.R_supp) + " after " + out.status);
  return s;
}

std::vector<TransverseSupport> support_ladder(const Params& p, const ParentModes& m, Sector s,
                                              const std::vector<double>& amplitudes, const SupportOptions& opt) {
  // Natural-parameter march: rungs far apart are reached through internal
  // substeps with a secant predictor, so the solve never leaves the family.
  constexpr double kMaxSub = 0.005, kMinSub = 1e-5, kStart = 0.003;
  std::vector<TransverseSupport> out;
  std::vector<TransverseSupport> path;  // last two accepted points, rung or substep
  auto solve_at = [&](double A) {
    SupportSeed seed = seed_support(m, s, A);
    if (path.size() == 1) {
      seed.y0 = path.back().y0;
      seed.y0.head<2>() *= A / path.back().A;
      seed.T = path.back().T;
    } else if (path.size() >= 2) {
      const TransverseSupport& a = path[path.size() - 2];
      const TransverseSupport& b = path.back();
      const double w = (A - b.A) / (b.A - a.A);
      seed.y0 = b.y0 + w * (b.y0 - a.y0);
      seed.T = b.T + w * (b.T - a.T);
    }
    SupportTarget target;
    target.sector = s;
    target.amplitude = A;
    // Non-modal gauges track the predictor.
    SupportOptions rung = opt;
    if (opt.gauge != Gauge::Modal) rung.reference = {seed.y0, seed.T, 0.0};
    return solve_support(p, m, seed, target, rung);
  };
  auto accept = [&](const TransverseSupport& t) {
    path.push_back(t);
    if (path.size() > 2) path.erase(path.begin());
  };
  for (double A : amplitudes) {
    try {
      if (path.empty()) accept(solve_at(std::min(A, kStart)));
      {
        double h = std::min(kMaxSub, std::abs(A - path.back().A));
        while (path.back().A != A) {
          const double dir = A > path.back().A ? 1.0 : -1.0;
          const double next = std::abs(A - path.back().A) <= h ? A : path.back().A + dir * h;
          try {
            accept(solve_at(next));
            h = std::min(kMaxSub, 1.5 * h);
          } catch (const Error&) {
            h *= 0.5;
            if (h < kMinSub) throw;
          }
        }
      }
      out.push_back(path.back());
    } catch (const Error&) {
      break;
    }
  }
  return out;
}

std::vector<TransverseSupport> support_branch(const Params& p, const ParentModes& m, Sector s,
                                              const BranchOptions& opt,
                                              const std::function<bool(const TransverseSupport&)>& visit) {
  const int j = static_cast<int>(s);
  const double Om = m.Omega(j);
  Eigen::VectorXd S(5);
  S << 1.0, 1.0, 1.0 / Om, 1.0 / Om, 1.0;

  auto pack = [](const TransverseSupport& t) {
    Eigen::VectorXd x(5);
    x << t.y0, t.T;
    return x;
  };
  auto finish = [&](const Eigen::VectorXd& x) {
    TransverseSupport t;
    t.sector = s;
    t.y0 = x.head<4>();
    t.T = x(4);
    t.A = modal_row(m, t.y0)(2 * j);
    t.gauge = Gauge::Modal;
    t.gauge_residual = std::abs(modal_row(m, t.y0)(2 * j + 1)) / Om;
    t.R_ph = t.gauge_residual;
    support_diagnostics(p, t);
    return t;
  };

  std::vector<TransverseSupport> out;
  SupportTarget target;
  target.sector = s;
  for (double A : {opt.A_start, 1.5 * opt.A_start}) {
    target.amplitude = A;
    SupportSeed seed = seed_support(m, s, A);
    if (!out.empty()) {
      seed.y0 = out.back().y0 * (A / out.back().A);
      seed.T = out.back().T;
    }
    out.push_back(solve_support(p, m, seed, target, opt.support));
    if (visit && !visit(out.back())) return out;
  }

  double h = opt.ds;
  for (int k = 0; k < opt.max_steps; ++k) {
    const Eigen::VectorXd x1 = pack(out.back()), x0 = pack(out[out.size() - 2]);
    Eigen::VectorXd tan = (x1 - x0).cwiseProduct(S);
    tan /= tan.norm();
    bool ok = false;
    for (int tries = 0; tries <= 6 && !ok; ++tries) {
      auto residual = [&](const Eigen::VectorXd& x) -> Eigen::VectorXd {
        if (!(x(4) > 0.0)) throw DomainExit("period-nonpositive");
        const Vec4 y0 = x.head<4>();
        const Vec4 yT = flow_perp(p, y0, x(4));
        Eigen::VectorXd r(6);
        r.head<4>() = (yT - y0).cwiseProduct(S.head<4>());
        r(4) = modal_row(m, y0)(2 * j + 1) / Om;
        r(5) = (x - x1).cwiseProduct(S).dot(tan) - h;
        return r;
      };
      const Eigen::VectorXd pred = x1 + h * tan.cwiseQuotient(S);
      try {
        const num::LsqResult res = num::damped_least_squares(
            num::ResidualFn(residual), pred, Eigen::VectorXd(Eigen::VectorXd::Ones(6)), opt.support.lsq);
        TransverseSupport t = finish(res.x);
        if (t.R_supp <= opt.support.support_tolerance && t.R_ph <= opt.support.support_tolerance) {
          out.push_back(t);
          ok = true;
        }
      } catch (const Error&) {
      }
      if (!ok) h *= 0.5;
    }
    if (!ok) break;
    h = std::min(opt.ds, 1.5 * h);
    if (visit && !visit(out.back())) break;
  }
  return out;
}

void support_diagnostics(const Params& p, TransverseSupport& s) {
  const num::Trajectory tr = num::integrate(perp_field(p), s.y0, 0.0, s.T);
  s.R_supp = (tr.final_state().head<4>() - s.y0).norm();
  const double E0 = eval_Eperp(p, s.y0.head<2>(), s.y0.tail<2>());
  double worst = 0.0;
  for (int i = 1; i <= 512; ++i) {
    const Vec4 y = tr(s.T * i / 512.0).head<4>();
    worst = std::max(worst, std::abs(eval_Eperp(p, y.head<2>(), y.tail<2>()) - E0));
  }
  s.R_E = worst;
}

CycleSamples sample_support(const Params& p, const Vec4& y0, double T, int n) {
  const num::Trajectory tr = num::integrate(perp_field(p), y0, 0.0, T);
  CycleSamples c;
  c.T = T;
  c.y.reserve(n);
  for (int i = 0; i < n; ++i) c.y.push_back(tr(T * i / n).head<4>());
  return c;
}

ModalFeatures compute_modal_features(const ParentModes& m, const CycleSamples& cycle) {
  ModalFeatures f;
  const double n = static_cast<double>(cycle.y.size());
  std::complex<double> cross{0.0, 0.0};
  for (const Vec4& y : cycle.y) {
    const Vec4 mod = modal_row(m, y);
    const double Pi = mod(1) / m.Omega(0), Pa = mod(3) / m.Omega(1);
    f.activity(0) += mod(0) * mod(0) + Pi * Pi;
    f.activity(1) += mod(2) * mod(2) + Pa * Pa;
    cross += std::complex<double>(mod(0), Pi) * std::complex<double>(mod(2), -Pa);
  }
  f.activity /= n;
  f.share = f.activity / (f.activity.sum() + kIdentityRegularizer);
  f.phi_rel = std::arg(cross);

  // Sign/correlation feature on the fundamental harmonic: cosine of the phase
  // lag between delta1 and delta2 (+1 in phase, -1 anti-phase).
  std::complex<double> c1{0.0, 0.0}, c2{0.0, 0.0};
  for (std::size_t i = 0; i < cycle.y.size(); ++i) {
    const std::complex<double> e = std::polar(1.0, -2.0 * M_PI * static_cast<double>(i) / n);
    c1 += cycle.y[i](0) * e;
    c2 += cycle.y[i](1) * e;
  }
  const double mag = std::abs(c1) * std::abs(c2);
  f.c_corr = mag > 0.0 ? std::real(c1 * std::conj(c2)) / mag : 0.0;
  f.s_sign = f.c_corr > 0.0 ? 1 : (f.c_corr < 0.0 ? -1 : 0);
  f.R_id(0) = std::max(1.0 - f.share(0), 0.5 * (1.0 - f.c_corr));
  f.R_id(1) = std::max(1.0 - f.share(1), 0.5 * (1.0 + f.c_corr));
  return f;
}

}  // namespace nlm::seg3
