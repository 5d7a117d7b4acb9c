#include "nlm/seg3/model.hpp"

#include "nlm/error.hpp"

#include <cmath>

namespace nlm::seg3 {

void Params::validate() const {
  for (double x : {I1, I2, I3, l1, L2, L3, m1, m2, m3})
    if (!(x > 0.0) || !std::isfinite(x)) throw Error("invalid-params", "masses, inertias and lengths must be positive");
  for (double x : {k12, k2_1, k2_2, k4_1, k4_2})
    if (!std::isfinite(x)) throw Error("invalid-params", "stiffness not finite");
  if (u1 != 0.0 || u2 != 0.0) throw Error("invalid-params", "torque inputs must be zero in conservative mode");
}

namespace {

using Row4 = Eigen::Matrix<double, 1, 4>;

// Base-frame COM velocity rows (x, y) of one body, with their shape partials.
struct BodyRows {
  Row4 x, y, dx1, dy1, dx2, dy2;
};

void accumulate(Inertia& in, double m, const BodyRows& b) {
  in.M += m * (b.x.transpose() * b.x + b.y.transpose() * b.y);
  in.dM1 += m * (b.dx1.transpose() * b.x + b.x.transpose() * b.dx1 + b.dy1.transpose() * b.y +
                 b.y.transpose() * b.dy1);
  in.dM2 += m * (b.dx2.transpose() * b.x + b.x.transpose() * b.dx2 + b.dy2.transpose() * b.y +
                 b.y.transpose() * b.dy2);
  in.P += m * b.y.transpose();
}

}  // namespace

// Body 1 pose at the contact point, body axis along x; COM and joint 1 at
// (l1, 0). Link 2 turns by delta1 at joint 1 (COM at L2/2); link 3 turns by
// delta2 relative to link 2 at the end of link 2 (COM at L3/2).
Inertia assemble_inertia(const Params& p, double d1, double d2) {
  const double l2 = 0.5 * p.L2, l3 = 0.5 * p.L3;
  const double c1 = std::cos(d1), s1 = std::sin(d1);
  const double c12 = std::cos(d1 + d2), s12 = std::sin(d1 + d2);
  Inertia in;
  in.M.setZero();
  in.dM1.setZero();
  in.dM2.setZero();
  in.P.setZero();

  BodyRows b1;
  b1.x << 1, 0, 0, 0;
  b1.y << 0, p.l1, 0, 0;
  b1.dx1.setZero();
  b1.dy1.setZero();
  b1.dx2.setZero();
  b1.dy2.setZero();
  accumulate(in, p.m1, b1);

  BodyRows b2;
  b2.x << 1, -l2 * s1, -l2 * s1, 0;
  b2.y << 0, p.l1 + l2 * c1, l2 * c1, 0;
  b2.dx1 << 0, -l2 * c1, -l2 * c1, 0;
  b2.dy1 << 0, -l2 * s1, -l2 * s1, 0;
  b2.dx2.setZero();
  b2.dy2.setZero();
  accumulate(in, p.m2, b2);

  BodyRows b3;
  const double ax = -p.L2 * s1 - l3 * s12, ay = p.L2 * c1 + l3 * c12;
  b3.x << 1, ax, ax, -l3 * s12;
  b3.y << 0, p.l1 + ay, ay, l3 * c12;
  const double ax1 = -p.L2 * c1 - l3 * c12, ay1 = -p.L2 * s1 - l3 * s12;
  b3.dx1 << 0, ax1, ax1, -l3 * c12;
  b3.dy1 << 0, ay1, ay1, -l3 * s12;
  b3.dx2 << 0, -l3 * c12, -l3 * c12, -l3 * c12;
  b3.dy2 << 0, -l3 * s12, -l3 * s12, -l3 * s12;
  accumulate(in, p.m3, b3);

  const Vec4 a1(0, 1, 0, 0), a2(0, 1, 1, 0), a3(0, 1, 1, 1);
  in.M += p.I1 * a1 * a1.transpose() + p.I2 * a2 * a2.transpose() + p.I3 * a3 * a3.transpose();
  return in;
}

Mat4 assemble_mass_matrix(const Params& p, double d1, double d2) { return assemble_inertia(p, d1, d2).M; }

PotentialValue eval_potential(const Params& p, double d1, double d2) {
  const double e = d1 - d2;
  PotentialValue out;
  out.V = 0.5 * p.k2_1 * d1 * d1 + 0.25 * p.k4_1 * std::pow(d1, 4) + 0.5 * p.k2_2 * d2 * d2 +
          0.25 * p.k4_2 * std::pow(d2, 4) + 0.5 * p.k12 * e * e;
  out.grad << p.k2_1 * d1 + p.k4_1 * d1 * d1 * d1 + p.k12 * e,
      p.k2_2 * d2 + p.k4_2 * d2 * d2 * d2 - p.k12 * e;
  out.hess << p.k2_1 + 3.0 * p.k4_1 * d1 * d1 + p.k12, -p.k12, -p.k12,
      p.k2_2 + 3.0 * p.k4_2 * d2 * d2 + p.k12;
  return out;
}

// Euler-Poincare equations on SE(2) with the knife edge at the base origin:
//   d/dt (M nu) = [omega p_y, -v p_y, 1/2 nu^T dM_i nu - dV_i]
Vec6 eval_f_int(const Params& p, const Vec6& z) {
  const Inertia in = assemble_inertia(p, z(D1), z(D2));
  const PotentialValue pot = eval_potential(p, z(D1), z(D2));
  const Vec4 nu(z(V), z(W), z(S1), z(S2));
  const double py = in.P.dot(nu);
  Vec4 rhs(z(W) * py, -z(V) * py, 0.5 * nu.dot(in.dM1 * nu) - pot.grad(0),
           0.5 * nu.dot(in.dM2 * nu) - pot.grad(1));
  rhs -= (z(S1) * in.dM1 + z(S2) * in.dM2) * nu;
  Eigen::LDLT<Mat4> ldlt(in.M);
  const double cond = ldlt.vectorD().cwiseAbs().maxCoeff() / ldlt.vectorD().cwiseAbs().minCoeff();
  if (!(cond < 1e12)) throw DomainExit("near-singular-inertia");
  const Vec4 acc = ldlt.solve(rhs);
  Vec6 dz;
  dz << z(S1), z(S2), acc;
  return dz;
}

double energy(const Params& p, const Vec6& z) {
  const Vec4 nu(z(V), z(W), z(S1), z(S2));
  return 0.5 * nu.dot(assemble_mass_matrix(p, z(D1), z(D2)) * nu) + eval_potential(p, z(D1), z(D2)).V;
}

SchurLayer eval_schur_layer(const Params& p, double d1, double d2) {
  const Inertia in = assemble_inertia(p, d1, d2);
  SchurLayer s;
  s.MGG = in.M.topLeftCorner<2, 2>();
  s.MGS = in.M.topRightCorner<2, 2>();
  s.MSS = in.M.bottomRightCorner<2, 2>();
  const double det = s.MGG.determinant();
  if (!(std::abs(det) > 1e-12 * s.MGG.squaredNorm())) throw DomainExit("carrier-block-singular");
  const Mat2 inv = s.MGG.inverse();
  s.A = inv * s.MGS;
  s.Mperp = s.MSS - s.MGS.transpose() * s.A;
  auto dperp = [&](const Mat4& dM) -> Mat2 {
    const Mat2 dGG = dM.topLeftCorner<2, 2>(), dGS = dM.topRightCorner<2, 2>(), dSS = dM.bottomRightCorner<2, 2>();
    return dSS - dGS.transpose() * s.A - s.A.transpose() * dGS + s.A.transpose() * dGG * s.A;
  };
  s.dMperp1 = dperp(in.dM1);
  s.dMperp2 = dperp(in.dM2);
  return s;
}

double eval_Eperp(const Params& p, const Vec2& r, const Vec2& sigma) {
  const SchurLayer s = eval_schur_layer(p, r(0), r(1));
  return 0.5 * sigma.dot(s.Mperp * sigma) + eval_potential(p, r(0), r(1)).V;
}

Vec4 eval_f_perp(const Params& p, const Vec4& y) {
  const SchurLayer s = eval_schur_layer(p, y(0), y(1));
  const PotentialValue pot = eval_potential(p, y(0), y(1));
  const Vec2 sig = y.tail<2>();
  Vec2 rhs(0.5 * sig.dot(s.dMperp1 * sig), 0.5 * sig.dot(s.dMperp2 * sig));
  rhs -= (sig(0) * s.dMperp1 + sig(1) * s.dMperp2) * sig + pot.grad;
  const Vec2 acc = s.Mperp.ldlt().solve(rhs);
  Vec4 dy;
  dy << sig, acc;
  return dy;
}

Vec2 carrier_channel(const Params& p, const Vec6& z) {
  const SchurLayer s = eval_schur_layer(p, z(D1), z(D2));
  return Vec2(z(V), z(W)) + s.A * Vec2(z(S1), z(S2));
}

double poe_power(const Params& p, const Vec6& z) {
  const SchurLayer s = eval_schur_layer(p, z(D1), z(D2));
  const PotentialValue pot = eval_potential(p, z(D1), z(D2));
  const Vec6 dz = eval_f_int(p, z);
  const Vec2 sig(z(S1), z(S2)), sigdot(dz(S1), dz(S2));
  const Mat2 Mdot = sig(0) * s.dMperp1 + sig(1) * s.dMperp2;
  return sig.dot(s.Mperp * sigdot) + 0.5 * sig.dot(Mdot * sig) + pot.grad.dot(sig);
}

Vec6 lift_state(const Params& p, const Vec4& y, const Vec2& qc) {
  const SchurLayer s = eval_schur_layer(p, y(0), y(1));
  const Vec2 eta = qc - s.A * y.tail<2>();
  Vec6 z;
  z << y(0), y(1), eta(0), eta(1), y(2), y(3);
  return z;
}

Vec6 time_reversal(const Vec6& z) {
  Vec6 r = z;
  r.tail<4>() *= -1.0;
  return r;
}

}  // namespace nlm::seg3
