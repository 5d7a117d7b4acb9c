#pragma once

#include <Eigen/Dense>

namespace nlm::seg3 {

using Vec6 = Eigen::Matrix<double, 6, 1>;
using Mat4 = Eigen::Matrix4d;
using Mat2 = Eigen::Matrix2d;
using Vec2 = Eigen::Vector2d;
using Vec4 = Eigen::Vector4d;

/// Passive three-segment architecture. Link COM offsets are l2 = L2/2, l3 = L3/2.
struct Params {
  double I1 = 0.418642, I2 = 0.00608070, I3 = 0.000314296;
  double l1 = 0.28, L2 = 0.150076, L3 = 0.105188;
  double m1 = 6.0, m2 = 0.394571, m3 = 0.276554;
  double k12 = 0.00118731;
  double k2_1 = 0.652435, k2_2 = 0.300805;
  double k4_1 = 5.258424, k4_2 = 0.449143;
  double u1 = 0.0, u2 = 0.0;

  /// Throws Error("invalid-params") unless masses, inertias and lengths are
  /// positive and the torque inputs are zero.
  void validate() const;
  bool operator==(const Params&) const = default;
};

/// Index layout of the reduced state z = (delta1, delta2, v, omega, sigma1, sigma2).
enum Index { D1 = 0, D2 = 1, V = 2, W = 3, S1 = 4, S2 = 5 };

/// Mass matrix in quasi-velocities nu = (v, omega, sigma1, sigma2) and its
/// shape partials.
struct Inertia {
  Mat4 M;
  Mat4 dM1, dM2;
  /// Lateral momentum p_y = P nu in the base frame (knife-edge direction).
  Vec4 P;
};

Inertia assemble_inertia(const Params& p, double delta1, double delta2);
Mat4 assemble_mass_matrix(const Params& p, double delta1, double delta2);

struct PotentialValue {
  double V;
  Vec2 grad;
  Mat2 hess;
};

PotentialValue eval_potential(const Params& p, double delta1, double delta2);

/// Reduced conservative field dz/dt. Throws DomainExit("near-singular-inertia")
/// when the mass matrix condition number exceeds 1e12.
Vec6 eval_f_int(const Params& p, const Vec6& z);

double energy(const Params& p, const Vec6& z);

struct SchurLayer {
  Mat2 MGG, MGS, MSS;
  Mat2 A;      // MGG^-1 MGS
  Mat2 Mperp;  // MSS - MSG A
  Mat2 dMperp1, dMperp2;
};

/// Throws DomainExit("carrier-block-singular") when MGG is near singular.
SchurLayer eval_schur_layer(const Params& p, double delta1, double delta2);

/// 1/2 sigma^T Mperp sigma + U.
double eval_Eperp(const Params& p, const Vec2& r, const Vec2& sigma);

/// Carrier-closed transverse field on y = (delta1, delta2, sigma1, sigma2):
/// the Lagrangian flow of E_perp.
Vec4 eval_f_perp(const Params& p, const Vec4& y);

/// Carrier channel q_c = eta + A sigma of a reduced state.
Vec2 carrier_channel(const Params& p, const Vec6& z);

/// POE power d/dt E_perp along the reduced field at z.
double poe_power(const Params& p, const Vec6& z);

/// Lift (r, sigma, q_c) to a reduced state with eta = q_c - A sigma.
Vec6 lift_state(const Params& p, const Vec4& y, const Vec2& qc);

/// Time-reversal map flipping (v, omega, sigma1, sigma2).
Vec6 time_reversal(const Vec6& z);

}  // namespace nlm::seg3
