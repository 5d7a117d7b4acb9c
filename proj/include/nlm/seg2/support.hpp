#pragma once

#include "nlm/numerics/ode.hpp"
#include "nlm/seg2/model.hpp"

#include <vector>

namespace nlm::seg2 {

struct SupportSample {
  double theta, delta, sigma, dt;
};

/// Carrier-closed scalar oscillation with turning angles +-A.
struct ScalarSupport {
  double A = 0.0;
  double E_perp = 0.0;
  double T_L = 0.0;
  double J_L = 0.0;
  double R_supp = 0.0;
  std::vector<SupportSample> samples;

  /// Crossing rate at delta = 0 on the rising branch.
  double sigma_at_section(const Params& p) const;
};

/// Midpoint sampling of delta = A sin(theta) with sigma from the energy level.
/// Throws Error("multi-well-unsupported") if U reaches E_perp inside (-A, A)
/// and DomainExit when the regularity guards fail on a sample.
ScalarSupport build_support(const Params& p, double A, int n_theta = 4096);

/// Carrier-closed transverse field on (delta, sigma):
///   Meff sigma' = -1/2 Meff' sigma^2 - U',
/// the Lagrangian flow of E_perp, which it conserves exactly.
num::Field closed_field(const Params& p);

/// Period of the closed field through (0, sigma0), sigma0 > 0, located as the
/// first rising return to delta = 0.
double closed_period(const Params& p, double sigma0, const num::OdeOptions& opt = {});

struct PendulumResult {
  double T, J;
};

/// Period and action of the planar pendulum below the separatrix, k = sin(theta_max/2).
/// Throws Error("above-separatrix") for k >= 1.
PendulumResult pendulum_oracle(double k, double m = 1.0, double ell = 1.0, double g = 1.0);

/// Complete elliptic integrals of the first and second kind (modulus k) via
/// the arithmetic-geometric mean.
double ellint_K(double k);
double ellint_E(double k);

}  // namespace nlm::seg2
