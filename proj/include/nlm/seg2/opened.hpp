#pragma once

#include "nlm/numerics/least_squares.hpp"
#include "nlm/numerics/ode.hpp"
#include "nlm/seg2/model.hpp"
#include "nlm/seg2/support.hpp"

#include <Eigen/Dense>

#include <optional>
#include <string>
#include <vector>

namespace nlm::seg2 {

/// Speed bookkeeping for a prescribed nonzero mean speed vbar.
struct SpeedScale {
  int s = 1;       // sign of vbar
  double h = 1.0;  // 1 / |vbar|

  static SpeedScale from_vbar(double vbar);
  double vbar() const { return s / h; }
};

/// Oriented section coordinates Y = (delta, zeta, u, Q).
using SectionState = Eigen::Vector4d;

/// Opened rows evaluated at the physical point (delta, sigma, nu, q_y).
struct OpenedRows {
  double F_sigma, F_nu, F_qy;
  double omega;
  double F_exch;  // r (q_y - rho (sigma + omega)^2) + 1/2 Meff' sigma^2
  double P_POE;   // sigma F_exch = d/dt E_perp
};

/// Throws DomainExit naming the violated guard.
OpenedRows opened_rows(const Params& p, double delta, double sigma, double nu, double qy, double h);

/// dY/d(vartheta) in oriented time vartheta = s t.
Eigen::Vector4d oriented_rhs(const Params& p, const SectionState& Y, const SpeedScale& sp);

/// Physical velocities recovered from oriented coordinates.
struct Physical {
  double sigma, v, omega;
};
Physical to_physical(const SectionState& Y, const SpeedScale& sp);

double reduced_energy(const Params& p, const SectionState& Y, const SpeedScale& sp);
double Eperp_of(const Params& p, const SectionState& Y, const SpeedScale& sp);

struct ReturnData {
  SectionState Y0;
  SectionState Y_plus;
  double tau = 0.0;
  double I_POE = 0.0;
  double I_u = 0.0;
  double dE_perp = 0.0;  // E_perp(Y_plus) - E_perp(Y0)
  num::Trajectory trajectory;
};

/// First positive return to the oriented section delta = 0, zeta > 0.
/// Throws Error("no-return") past the horizon, Error("wrong-orientation") if the
/// returning crossing has zeta <= 0, and DomainExit on guard violations.
ReturnData integrate_to_return(const Params& p, const SectionState& Y0, const SpeedScale& sp,
                               double horizon, const num::OdeOptions& opt = {});

struct ExchangeResidual {
  double I_POE = 0.0, C_u = 0.0, C_Q = 0.0, S = 0.0;
  Eigen::Vector4d weights = Eigen::Vector4d::Ones();
  double scaled_norm = 0.0;

  Eigen::Vector4d rows() const { return {I_POE, C_u, C_Q, S}; }
};

ExchangeResidual assemble_residual(const ReturnData& ret);

/// Row weights diag(1/e_sc, 1/u_sc, 1/Q_sc, 1).
Eigen::Vector4d residual_weights(double I_POE, double dE_perp, double u0, double Q0);

struct Pose {
  double dx = 0.0, dy = 0.0, dtheta = 0.0;
};

struct Cycle {
  double vbar = 0.0;
  SectionState Y0;
  SectionState Y_plus;
  double tau = 0.0;
  ExchangeResidual residual;
  Pose dg;
  double energy_drift = 0.0;  // max relative deviation of the reduced energy along the cycle
  num::Trajectory trajectory;
};

struct SolveOptions {
  double tau_ex = 1e-10;
  double horizon_periods = 50.0;
  /// Reject solutions whose crossing rate fell below this fraction of the seed's
  /// (the straight-running limit zeta0 -> 0 drives every row to zero).
  double min_zeta_ratio = 1e-3;
  num::LsqOptions lsq{200, 1e-13, 1e-15, 1e-3};
  num::OdeOptions ode{};
};

struct SolveOutcome {
  double vbar = 0.0;
  bool accepted = false;
  std::string reason;  // empty when accepted
  SectionState Y0 = SectionState::Zero();
  std::optional<Cycle> cycle;
  ExchangeResidual residual;
  int iterations = 0;
};

/// Structured seed from a closed support: zeta0 from the energy level, u0 = 1, Q0 = 0.
SectionState seed_from_support(const Params& p, const ScalarSupport& sup);

/// Solve the exchange-return residual for unknowns Y0 = (0, e^a, e^b, Q0).
/// Tries Q0 = seed value first, then Q0 = +-0.1 zeta0.
SolveOutcome solve_cycle(const Params& p, double vbar, const ScalarSupport& seed,
                         const SolveOptions& opt = {});
SolveOutcome solve_cycle(const Params& p, double vbar, const SectionState& seed, double horizon,
                         const SolveOptions& opt = {});

/// Warm-started sweep; every point is re-solved and re-certified.
std::vector<SolveOutcome> continue_in_speed(const Params& p, const std::vector<double>& vbar_grid,
                                            const ScalarSupport& seed, const SolveOptions& opt = {});

/// Planar increment over one physical period traversed forward in time.
Pose reconstruct_pose(const Params& p, const SectionState& Y0, const SpeedScale& sp, double tau,
                      const num::OdeOptions& opt = {});

/// Reduced-energy drift along a return trajectory (relative to max(1,|E0|)).
double energy_drift(const Params& p, const ReturnData& ret, const SpeedScale& sp, int samples = 512);

}  // namespace nlm::seg2
