#include "doctest.h"
#include "nlm/error.hpp"
#include "nlm/seg2/model.hpp"
#include "nlm/seg2/opened.hpp"
#include "nlm/seg2/support.hpp"
#include "nlm/numerics/quadrature.hpp"

#include <boost/math/special_functions/ellint_1.hpp>
#include <boost/math/special_functions/ellint_2.hpp>
#include <cmath>
#include <map>
#include <numbers>
#include <random>

using namespace nlm;
using namespace nlm::seg2;
constexpr double kPi = std::numbers::pi;

namespace {
Params legacy() {
  Params p;
  p.epsilon = 0.1;
  p.gamma = 0.2;
  return p;
}

const Cycle& cycle_at(double vbar) {
  static std::map<double, Cycle> cache;
  auto it = cache.find(vbar);
  if (it == cache.end()) {
    const Params p;
    const SolveOutcome o = solve_cycle(p, vbar, build_support(p, 0.9));
    REQUIRE(o.accepted);
    it = cache.emplace(vbar, *o.cycle).first;
  }
  return it->second;
}
}  // namespace

TEST_CASE("coefficients at the straight configuration") {
  for (const Params& p : {Params{}, legacy()}) {
    const Coeffs c = eval_coeffs(p, 0.0);
    CHECK(c.rho == 0.0);
    CHECK(c.Uprime == 0.0);
    CHECK(c.Delta == doctest::Approx(c.B11).epsilon(1e-15));
    const double mu = p.mu(), a = p.alpha(), b = p.beta();
    CHECK(c.B12 == doctest::Approx(p.j2() + mu * b * b + mu * a * b).epsilon(1e-15));
  }
}

TEST_CASE("Meff is the Schur complement of the full mass matrix") {
  const Params p = legacy();
  const double d = 0.3;
  const Eigen::Matrix3d M = mass_matrix(p, d);
  const double schur = M(2, 2) - M.block<1, 2>(2, 0) * M.block<2, 2>(0, 0).inverse() * M.block<2, 1>(0, 2);
  CHECK(std::abs(eval_coeffs(p, d).Meff - schur) <= 1e-12);
  // the derivative matrix agrees with central differences
  const double h = 1e-6;
  const Eigen::Matrix3d fd = (mass_matrix(p, d + h) - mass_matrix(p, d - h)) / (2 * h);
  CHECK((mass_matrix_prime(p, d) - fd).cwiseAbs().maxCoeff() <= 1e-8);
}

TEST_CASE("transverse storage") {
  const Params p;
  CHECK(eval_Eperp(p, 0.0, 0.0) == 0.0);
  CHECK(eval_Eperp(p, 0.4, 1.3) == eval_Eperp(p, 0.4, -1.3));
  // constant along the closed channel
  const ScalarSupport s = build_support(p, 0.5);
  const num::Trajectory tr =
      num::integrate(closed_field(p), (num::Vec(2) << 0.0, s.sigma_at_section(p)).finished(), 0.0, s.T_L);
  for (int i = 0; i <= 64; ++i) {
    const num::Vec y = tr(s.T_L * i / 64);
    CHECK(std::abs(eval_Eperp(p, y(0), y(1)) - s.E_perp) <= 1e-10);
  }
}

TEST_CASE("domain guards") {
  CHECK(domain_check(legacy(), 0.0).pass);
  CHECK(domain_check(Params{}, 0.0).pass);
  // the default architecture stays regular across the swing of the family
  for (double d = -1.2; d <= 1.2; d += 0.01) CHECK(domain_check(Params{}, d).pass);
  // Meff changes sign inside the swing for a long, heavy appendage
  Params bad;
  bad.epsilon = 0.95;
  bad.gamma = 0.01;
  bool failed = false;
  std::string guard;
  for (double d = 0.0; d <= kPi && !failed; d += 0.001) {
    const DomainResult r = domain_check(bad, d);
    if (!r.pass) failed = true, guard = r.guard;
  }
  if (failed) CHECK((guard == "Meff-nonpositive" || guard == "Delta-singular"));
}

TEST_CASE("support periods") {
  const Params p;
  for (double A : {0.1, 0.3, 0.5, 0.6}) {
    const ScalarSupport s = build_support(p, A);
    CHECK(s.R_supp <= 1e-12);
    CHECK(std::abs(closed_period(p, s.sigma_at_section(p)) - s.T_L) / s.T_L <= 1e-8);
  }
  SUBCASE("harmonic limit") {
    Params q;
    q.k4 = 0.0;
    const double M0 = eval_coeffs(q, 0.0).Meff;
    const ScalarSupport s = build_support(q, 1e-3);
    CHECK(std::abs(s.T_L - 2 * kPi * std::sqrt(M0 / q.k2)) / s.T_L <= 1e-6);
    CHECK(std::abs(s.J_L - s.E_perp * std::sqrt(M0 / q.k2)) / s.J_L <= 1e-6);
  }
}

TEST_CASE("pendulum oracle") {
  const PendulumResult z = pendulum_oracle(0.0);
  CHECK(z.T == doctest::Approx(2 * kPi).epsilon(1e-15));
  CHECK(z.J == 0.0);
  double prev = 0.0;
  for (double k = 0.0; k < 0.99; k += 0.05) {
    CHECK(ellint_K(k) == doctest::Approx(boost::math::ellint_1(k)).epsilon(1e-14));
    CHECK(ellint_E(k) == doctest::Approx(boost::math::ellint_2(k)).epsilon(1e-14));
    const double T = pendulum_oracle(k).T;
    CHECK(T > prev);
    prev = T;
  }
  // action quadrature at k = 0.5: J = (1/2pi) * 4 sqrt(2) int_0^thm sqrt(cos - cos thm)
  const double thm = 2 * std::asin(0.5), c0 = std::cos(thm);
  const double J = 4 * std::sqrt(2.0) / (2 * kPi) *
                   num::quad_endpoint([&](double x) { return std::sqrt(std::max(std::cos(x) - c0, 0.0)); }, 0.0, thm);
  CHECK(std::abs(pendulum_oracle(0.5).J - J) <= 1e-10);
  CHECK_THROWS_AS(pendulum_oracle(1.0), Error);
}

TEST_CASE("opened rows at the section") {
  const Params p;
  const Coeffs c = eval_coeffs(p, 0.0);
  const double qy = 0.37;
  const OpenedRows o = opened_rows(p, 0.0, 0.8, 1.0, qy, 1.0);
  CHECK(o.F_sigma == doctest::Approx(c.r * qy / c.Meff).epsilon(1e-12));
}

TEST_CASE("reduced energy is conserved on opened trajectories") {
  const Params p;
  const SpeedScale sp = SpeedScale::from_vbar(2.0);
  const SectionState Y0(0.0, 2.0, 1.0, 0.1);
  const num::Field f = [&](double, const num::Vec& y, num::Vec& dy) { dy = oriented_rhs(p, y.head<4>(), sp); };
  const num::Trajectory tr = num::integrate(f, num::Vec(Y0), 0.0, 2.0);
  const double E0 = reduced_energy(p, Y0, sp);
  for (int i = 0; i <= 50; ++i)
    CHECK(std::abs(reduced_energy(p, tr(0.04 * i).head<4>(), sp) - E0) / std::max(1.0, std::abs(E0)) <= 1e-9);
}

TEST_CASE("return map") {
  const Params p;
  const SpeedScale sp = SpeedScale::from_vbar(2.0);
  const SectionState Y0 = seed_from_support(p, build_support(p, 0.9));
  const ReturnData r = integrate_to_return(p, Y0, sp, 50.0);
  CHECK(std::abs(r.I_POE - r.dE_perp) <= 1e-11);
  CHECK((r.Y_plus - r.Y0).norm() > 1e-6);  // a seed is not a cycle
  // weights are invertible, so the scaled residual vanishes with the unscaled one
  const ExchangeResidual e = assemble_residual(r);
  CHECK((e.weights.array() > 0.0).all());
}

TEST_CASE("solved cycles close the exchange rows") {
  for (double v : {-3.0, 2.0}) {
    const Cycle& c = cycle_at(v);
    CHECK(c.residual.scaled_norm <= 1e-10);
    CHECK(c.residual.rows().cwiseAbs().maxCoeff() <= 1e-10);
    CHECK((c.Y_plus - c.Y0).cwiseAbs().maxCoeff() <= 1e-9);
    CHECK(c.energy_drift <= 1e-9);
    CHECK(std::hypot(c.dg.dx, c.dg.dy) > 0.0);
  }
}

TEST_CASE("speed sign symmetry") {
  const Cycle& a = cycle_at(2.0);
  const Cycle& b = cycle_at(-2.0);
  // the oriented section data agree; only s flips
  CHECK(std::abs(a.Y0(1) - b.Y0(1)) <= 1e-7 * a.Y0(1));
  CHECK(std::abs(a.Y0(2) - b.Y0(2)) <= 1e-7);
  CHECK(std::abs(a.tau - b.tau) <= 1e-7 * a.tau);
  CHECK(std::abs(std::hypot(a.dg.dx, a.dg.dy) - std::hypot(b.dg.dx, b.dg.dy)) <= 1e-7);
}

TEST_CASE("seeded solve converges quickly") {
  const Params p;
  const SolveOutcome o = solve_cycle(p, 3.0, build_support(p, 0.9));
  CHECK(o.accepted);
  CHECK(o.iterations <= 50);
}

TEST_CASE("speed continuation spans both signs without jumps") {
  const Params p;
  const std::vector<double> grid{-6, -5, -4, -3, -2, -1, 1, 2, 3, 4, 5, 6};
  const auto out = continue_in_speed(p, grid, build_support(p, 0.9));
  REQUIRE(out.size() == grid.size());
  for (std::size_t i = 0; i < out.size(); ++i) {
    CHECK(out[i].accepted);
    if (out[i].accepted) CHECK(out[i].cycle->residual.scaled_norm <= 1e-10);
    if (i > 0 && out[i].accepted && out[i - 1].accepted && grid[i] * grid[i - 1] > 0)
      CHECK(std::abs(out[i].cycle->tau - out[i - 1].cycle->tau) <= 0.1 * out[i - 1].cycle->tau);
  }
}

TEST_CASE("pose increment matches the physical reference field") {
  // independent route: the mass-matrix field in physical time plus planar kinematics
  const Params p;
  for (double v : {-3.0, 2.0}) {
    const Cycle& c = cycle_at(v);
    const SpeedScale sp = SpeedScale::from_vbar(c.vbar);
    const Physical ph = to_physical(c.Y0, sp);
    const num::Field f = [&](double, const num::Vec& z, num::Vec& dz) {
      dz.resize(7);
      dz.head<4>() = physical_rhs(p, z.head<4>());
      dz(4) = z(2) * std::cos(z(6));
      dz(5) = z(2) * std::sin(z(6));
      dz(6) = z(3);
    };
    num::Vec z0 = num::Vec::Zero(7);
    z0.head<4>() << 0.0, ph.sigma, ph.v, ph.omega;
    const num::Vec z = num::flow(f, z0, 0.0, c.tau);
    CHECK((z.head<4>() - z0.head<4>()).cwiseAbs().maxCoeff() <= 1e-8);
    CHECK(std::abs(z(4) - c.dg.dx) <= 1e-9);
    CHECK(std::abs(z(5) - c.dg.dy) <= 1e-9);
    CHECK(std::abs(z(6) - c.dg.dtheta) <= 1e-9);
    CHECK(std::hypot(c.dg.dx, c.dg.dy) > 0.0);
  }
}
