#include "nlm/seg2/support.hpp"

#include "nlm/error.hpp"

#include <cmath>
#include <numbers>

namespace nlm::seg2 {

namespace {

struct Agm {
  double K, E;
};

Agm agm(double k) {
  double a = 1.0, b = std::sqrt((1.0 - k) * (1.0 + k)), c = k;
  double sum = 0.5 * c * c;  // 2^(n-1) c_n^2 at n = 0
  double weight = 0.5;
  for (int n = 0; n < 64 && std::abs(c) > 1e-16 * a; ++n) {
    const double an = 0.5 * (a + b);
    c = 0.5 * (a - b);
    b = std::sqrt(a * b);
    a = an;
    weight *= 2.0;
    sum += weight * c * c;
  }
  const double K = std::numbers::pi / (2.0 * a);
  return {K, K * (1.0 - sum)};
}

}  // namespace

double ellint_K(double k) {
  if (!(std::abs(k) < 1.0)) throw Error("above-separatrix", "modulus must satisfy |k| < 1");
  return agm(k).K;
}

double ellint_E(double k) {
  if (!(std::abs(k) < 1.0)) throw Error("above-separatrix", "modulus must satisfy |k| < 1");
  return agm(k).E;
}

PendulumResult pendulum_oracle(double k, double m, double ell, double g) {
  if (!(k >= 0.0 && k < 1.0)) throw Error("above-separatrix", "k = " + std::to_string(k));
  const Agm e = agm(k);
  const double T = 4.0 * std::sqrt(ell / g) * e.K;
  const double J = 8.0 * m * ell * ell * std::sqrt(g / ell) / std::numbers::pi *
                   (e.E - (1.0 - k * k) * e.K);
  return {T, J};
}

double ScalarSupport::sigma_at_section(const Params& p) const {
  const Coeffs c = eval_coeffs(p, 0.0);
  return std::sqrt(2.0 * (E_perp - c.U) / c.Meff);
}

ScalarSupport build_support(const Params& p, double A, int n_theta) {
  if (!(A > 0.0)) throw Error("invalid-amplitude", "A must be positive");
  if (n_theta < 4) throw Error("invalid-sampling", "n_theta < 4");
  ScalarSupport s;
  s.A = A;
  s.E_perp = potential(p, A);
  const double dtheta = 2.0 * std::numbers::pi / n_theta;
  s.samples.reserve(static_cast<std::size_t>(n_theta));
  double action = 0.0;
  for (int j = 0; j < n_theta; ++j) {
    const double th = (j + 0.5) * dtheta;
    const double d = A * std::sin(th);
    const DomainResult dom = domain_check(p, d);
    if (!dom.pass) throw DomainExit(dom.guard);
    const Coeffs c = eval_coeffs(p, d);
    const double gap = s.E_perp - c.U;
    if (!(gap > 0.0)) throw Error("multi-well-unsupported", "U >= E_perp at delta=" + std::to_string(d));
    const double sigma = std::copysign(std::sqrt(2.0 * gap / c.Meff), std::cos(th));
    const double dt = std::abs(A * std::cos(th)) * dtheta / std::abs(sigma);
    s.samples.push_back({th, d, sigma, dt});
    s.T_L += dt;
    action += c.Meff * sigma * sigma * dt;
    s.R_supp = std::max(s.R_supp, std::abs(0.5 * c.Meff * sigma * sigma + c.U - s.E_perp));
  }
  s.J_L = action / (2.0 * std::numbers::pi);
  return s;
}

num::Field closed_field(const Params& p) {
  return [p](double, const num::Vec& y, num::Vec& dy) {
    const double d = y(0), sigma = y(1);
    const DomainResult dom = domain_check(p, d);
    if (!dom.pass) throw DomainExit(dom.guard);
    const Coeffs c = eval_coeffs(p, d);
    dy(0) = sigma;
    dy(1) = -(0.5 * c.MeffPrime * sigma * sigma + c.Uprime) / c.Meff;
  };
}

double closed_period(const Params& p, double sigma0, const num::OdeOptions& opt) {
  if (!(sigma0 > 0.0)) throw Error("invalid-seed", "sigma0 must be positive");
  const num::Field f = closed_field(p);
  num::EventSpec section{[](double, const num::Vec& y) { return y(0); }, num::Direction::Rising,
                         true, 1e-13};
  // a conservative upper bound: the harmonic period at the section inertia, times 50
  const Coeffs c0 = eval_coeffs(p, 0.0);
  const double horizon = 50.0 * 2.0 * std::numbers::pi * std::sqrt(c0.Meff / std::max(p.k2, 1e-12)) + 50.0;
  num::Vec y0(2);
  y0 << 0.0, sigma0;
  const num::EventSpec events[] = {section};
  const num::Trajectory tr = num::integrate(f, y0, 0.0, horizon, events, {}, opt);
  if (!tr.event()) throw Error("no-return", "closed field did not return to the section");
  return tr.event()->t;
}

}  // namespace nlm::seg2
