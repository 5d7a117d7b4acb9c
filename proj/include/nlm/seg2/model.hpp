#pragma once

#include <Eigen/Dense>

#include <string>

namespace nlm::seg2 {

/// Dimensionless 2SEG architecture under the epsilon specialization
/// alpha = eps, beta = mu = 1 - eps, j1 = gamma alpha^3, j2 = gamma beta^3.
struct Params {
  double epsilon = 0.7;
  double gamma = 1.5;
  double k2 = 1.0;
  double k4 = 1.0;

  double alpha() const { return epsilon; }
  double beta() const { return 1.0 - epsilon; }
  double mu() const { return 1.0 - epsilon; }
  double j1() const { return gamma * epsilon * epsilon * epsilon; }
  double j2() const { return gamma * beta() * beta() * beta(); }
  double B22() const { return j2() + mu() * beta() * beta(); }

  /// Throws Error("invalid-params") unless eps in (0,1), gamma > 0 and B22 > 0.
  void validate() const;
};

struct Coeffs {
  double B11, B12, B22;
  double rho, Delta;
  double NM, Meff, MeffPrime;
  double Ay, r, Gy;
  double U, Uprime;
  // first derivatives of the mass-matrix entries
  double dB11, dB12, drho;
};

Coeffs eval_coeffs(const Params& p, double delta);

double potential(const Params& p, double delta);
double potential_prime(const Params& p, double delta);

/// Full mass matrix in quasi-velocities (v, omega, sigma).
Eigen::Matrix3d mass_matrix(const Params& p, double delta);
/// d/d delta of mass_matrix.
Eigen::Matrix3d mass_matrix_prime(const Params& p, double delta);

/// Transverse storage 1/2 Meff sigma^2 + U. Throws Error("outside-regular-domain")
/// when Meff(delta) <= 0.
double eval_Eperp(const Params& p, double delta, double sigma);

/// Reduced energy 1/2 nu^T M nu + U with nu = (v, omega, sigma).
double energy(const Params& p, double delta, double v, double omega, double sigma);

struct DomainResult {
  bool pass = true;
  std::string guard;  // empty on pass: "Delta-singular" or "Meff-nonpositive"
};

constexpr double kGuardMargin = 1e-10;

DomainResult domain_check(const Params& p, double delta);

/// Physical reduced field in time t for x = (delta, sigma, v, omega),
/// solved from the mass matrix directly (reference for the opened rows).
Eigen::Vector4d physical_rhs(const Params& p, const Eigen::Vector4d& x);

}  // namespace nlm::seg2
