#include "nlm/seg2/model.hpp"

#include "nlm/error.hpp"

#include <cmath>

namespace nlm::seg2 {

void Params::validate() const {
  if (!(epsilon > 0.0 && epsilon < 1.0)) throw Error("invalid-params", "epsilon must lie in (0,1)");
  if (!(gamma > 0.0)) throw Error("invalid-params", "gamma must be positive");
  if (!std::isfinite(k2) || !std::isfinite(k4)) throw Error("invalid-params", "stiffness not finite");
  if (!(B22() > 0.0)) throw Error("invalid-params", "B22 must be positive");
}

double potential(const Params& p, double d) { return 0.5 * p.k2 * d * d + 0.25 * p.k4 * d * d * d * d; }

double potential_prime(const Params& p, double d) { return p.k2 * d + p.k4 * d * d * d; }

Coeffs eval_coeffs(const Params& p, double delta) {
  const double a = p.alpha(), b = p.beta(), mu = p.mu(), j1 = p.j1(), j2 = p.j2();
  const double c = std::cos(delta), s = std::sin(delta);
  Coeffs k{};
  k.B22 = p.B22();
  k.B11 = j1 + j2 + a * a + mu * b * b + 2.0 * mu * a * b * c;
  k.B12 = j2 + mu * b * b + mu * a * b * c;
  k.rho = mu * b * s;
  k.dB11 = -2.0 * mu * a * b * s;
  k.dB12 = -mu * a * b * s;
  k.drho = mu * b * c;
  k.Delta = k.B11 - k.rho * k.rho;
  const double dDelta = k.dB11 - 2.0 * k.rho * k.drho;
  k.NM = k.B12 * k.B12 + k.rho * k.rho * (k.B11 - 2.0 * k.B12);
  const double dNM = 2.0 * k.B12 * k.dB12 + 2.0 * k.rho * k.drho * (k.B11 - 2.0 * k.B12) +
                     k.rho * k.rho * (k.dB11 - 2.0 * k.dB12);
  k.Meff = k.B22 - k.NM / k.Delta;
  k.MeffPrime = -(dNM * k.Delta - k.NM * dDelta) / (k.Delta * k.Delta);
  k.Ay = a * j2 + a * b * b * mu * (1.0 - mu) - mu * b * j1 * c;
  k.r = k.Ay / k.Delta;
  k.Gy = a + mu * b * c;
  k.U = potential(p, delta);
  k.Uprime = potential_prime(p, delta);
  return k;
}

Eigen::Matrix3d mass_matrix(const Params& p, double delta) {
  const Coeffs k = eval_coeffs(p, delta);
  Eigen::Matrix3d M;
  M << 1.0, -k.rho, -k.rho, -k.rho, k.B11, k.B12, -k.rho, k.B12, k.B22;
  return M;
}

Eigen::Matrix3d mass_matrix_prime(const Params& p, double delta) {
  const Coeffs k = eval_coeffs(p, delta);
  Eigen::Matrix3d D;
  D << 0.0, -k.drho, -k.drho, -k.drho, k.dB11, k.dB12, -k.drho, k.dB12, 0.0;
  return D;
}

double eval_Eperp(const Params& p, double delta, double sigma) {
  const Coeffs k = eval_coeffs(p, delta);
  if (!(k.Meff > 0.0)) throw Error("outside-regular-domain", "Meff <= 0");
  return 0.5 * k.Meff * sigma * sigma + k.U;
}

double energy(const Params& p, double delta, double v, double omega, double sigma) {
  const Eigen::Vector3d nu(v, omega, sigma);
  return 0.5 * nu.dot(mass_matrix(p, delta) * nu) + potential(p, delta);
}

DomainResult domain_check(const Params& p, double delta) {
  const Coeffs k = eval_coeffs(p, delta);
  if (!(std::abs(k.Delta) >= kGuardMargin)) return {false, "Delta-singular"};
  if (!(k.Meff > kGuardMargin)) return {false, "Meff-nonpositive"};
  return {};
}

// Euler-Poincare equations on SE(2) x S^1 under the knife edge: with the
// lateral momentum p_y = G_y omega + mu beta cos(delta) sigma,
//   M nu' = [omega p_y, -v p_y, 1/2 nu^T M' nu - U'] - sigma M' nu.
Eigen::Vector4d physical_rhs(const Params& p, const Eigen::Vector4d& x) {
  const double delta = x(0), sigma = x(1), v = x(2), omega = x(3);
  const Coeffs k = eval_coeffs(p, delta);
  const Eigen::Matrix3d M = mass_matrix(p, delta);
  const Eigen::Matrix3d D = mass_matrix_prime(p, delta);
  const Eigen::Vector3d nu(v, omega, sigma);
  const double py = k.Gy * omega + p.mu() * p.beta() * std::cos(delta) * sigma;
  Eigen::Vector3d f(omega * py, -v * py, 0.5 * nu.dot(D * nu) - k.Uprime);
  f -= sigma * (D * nu);
  const Eigen::Vector3d acc = M.ldlt().solve(f);
  return {sigma, acc(2), acc(0), acc(1)};
}

}  // namespace nlm::seg2
