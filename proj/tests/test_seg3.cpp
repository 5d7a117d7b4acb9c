#include "doctest.h"
#include "nlm/error.hpp"
#include "nlm/numerics/ode.hpp"
#include "nlm/seg3/charts.hpp"
#include "nlm/seg3/modal.hpp"
#include "nlm/seg3/model.hpp"
#include "nlm/seg3/opened.hpp"
#include "nlm/seg3/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numbers>
#include <random>

using namespace nlm;
using namespace nlm::seg3;
constexpr double kPi = std::numbers::pi;

namespace {

const ParentModes& modes() {
  static const ParentModes m = solve_parent_modes(Params{});
  return m;
}

const SearchResult& found(Sector s) {
  static std::map<Sector, SearchResult> cache;
  auto it = cache.find(s);
  if (it == cache.end()) {
    SearchOptions o;
    o.collocation = false;
    it = cache.emplace(s, find_moving_cycle(Params{}, modes(), s, o)).first;
  }
  return it->second;
}

num::Field internal(const Params& p) {
  return [p](double, const num::Vec& z, num::Vec& dz) { dz = eval_f_int(p, z.head<6>()); };
}

Vec6 random_state(std::mt19937_64& rng) {
  std::uniform_real_distribution<double> a(-0.6, 0.6), r(-3.0, 3.0);
  Vec6 z;
  z << a(rng), a(rng), r(rng), r(rng), r(rng), r(rng);
  return z;
}

// Zero-mean-speed periodic orbit of the opened flow, started from the
// closed-leaf lift of a converged support. The leaf q_c = 0 itself is not
// invariant: the carrier rhs has a sigma-sigma source.
LiftedCycle stationary_cycle(Sector s, double A, std::size_t segments) {
  const Params p;
  const auto ladder = support_ladder(p, modes(), s, {A});
  REQUIRE(ladder.size() == 1);
  LiftOptions lo;
  lo.vbar_target = 0.0;
  const LiftResult lift = lift_support(p, modes(), ladder[0], Vec2::Zero(), lo);
  CycleSolveOptions o;
  o.vbar_target = 0.0;
  const CycleSolveResult r = solve_shooting(p, modes(), resample(p, lift.cycle, Representation::Shooting, segments), o);
  REQUIRE(r.converged);
  return r.cycle;
}

}  // namespace

TEST_CASE("mass matrix at the frozen architecture") {
  const Params p;
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> a(-1.0, 1.0);
  for (int i = 0; i < 50; ++i) {
    const double d1 = a(rng), d2 = a(rng);
    const Mat4 M = assemble_mass_matrix(p, d1, d2);
    CHECK((M - M.transpose()).cwiseAbs().maxCoeff() <= 1e-13);
    CHECK(std::abs(M(0, 0) - 6.671125) <= 1e-12);
  }
  CHECK(Eigen::SelfAdjointEigenSolver<Mat4>(assemble_mass_matrix(p, 0, 0)).eigenvalues()(0) > 0.0);
}

TEST_CASE("internal field") {
  const Params p;
  CHECK(eval_f_int(p, Vec6::Zero()).cwiseAbs().maxCoeff() == 0.0);
  Vec6 coast = Vec6::Zero();
  coast(V) = 1.7;
  const Vec6 f = eval_f_int(p, coast);
  CHECK(std::abs(f(V)) <= 1e-14);
  CHECK(std::abs(f(W)) <= 1e-14);
  CHECK(std::abs(f(S1)) <= 1e-14);
  CHECK(std::abs(f(S2)) <= 1e-14);

  std::mt19937_64 rng(5);
  const Vec6 z0 = random_state(rng);
  const num::Trajectory tr = num::integrate(internal(p), z0, 0.0, 5.0);
  const double E0 = energy(p, z0);
  for (int i = 0; i <= 100; ++i) CHECK(std::abs(energy(p, tr(0.05 * i).head<6>()) - E0) / std::abs(E0) <= 1e-9);
}

TEST_CASE("potential") {
  const Params p;
  const PotentialValue o = eval_potential(p, 0, 0);
  CHECK(o.V == 0.0);
  CHECK(o.grad.norm() == 0.0);
  // no coupling on the diagonal
  Params q = p;
  q.k12 *= 7.0;
  for (double a : {0.1, -0.4, 0.9}) CHECK(eval_potential(p, a, a).V == doctest::Approx(eval_potential(q, a, a).V));
  const double h = 1e-6;
  const PotentialValue g = eval_potential(p, 0.3, -0.2);
  CHECK(std::abs(g.grad(0) - (eval_potential(p, 0.3 + h, -0.2).V - eval_potential(p, 0.3 - h, -0.2).V) / (2 * h)) <= 1e-9);
  CHECK(std::abs(g.grad(1) - (eval_potential(p, 0.3, -0.2 + h).V - eval_potential(p, 0.3, -0.2 - h).V) / (2 * h)) <= 1e-9);
}

TEST_CASE("Schur layer") {
  const Params p;
  std::mt19937_64 rng(11);
  std::uniform_real_distribution<double> a(-0.8, 0.8);
  for (int i = 0; i < 50; ++i) {
    const double d1 = a(rng), d2 = a(rng);
    const Mat4 M = assemble_mass_matrix(p, d1, d2);
    const Mat2 direct = M.block<2, 2>(2, 2) - M.block<2, 2>(2, 0) * M.block<2, 2>(0, 0).inverse() * M.block<2, 2>(0, 2);
    CHECK((eval_schur_layer(p, d1, d2).Mperp - direct).cwiseAbs().maxCoeff() <= 1e-12);
  }
  const Mat2 M0 = eval_schur_layer(p, 0, 0).Mperp;
  CHECK((M0 - M0.transpose()).norm() == 0.0);
  CHECK(Eigen::SelfAdjointEigenSolver<Mat2>(M0).eigenvalues()(0) > 0.0);

  // storage is constant along the carrier-closed field over an oscillation
  const SupportSeed s = seed_support(modes(), Sector::IP, 0.02);
  const num::Field f = [&](double, const num::Vec& y, num::Vec& dy) { dy = eval_f_perp(p, y.head<4>()); };
  const num::Trajectory tr = num::integrate(f, num::Vec(s.y0), 0.0, s.T);
  const double E0 = eval_Eperp(p, s.y0.head<2>(), s.y0.tail<2>());
  for (int i = 0; i <= 64; ++i) {
    const num::Vec y = tr(s.T * i / 64);
    CHECK(std::abs(eval_Eperp(p, y.head<2>(), y.tail<2>()) - E0) <= 1e-9 * std::abs(E0));
  }
}

TEST_CASE("time-reversal symmetry of the internal field") {
  const Params p;
  std::mt19937_64 rng(13);
  std::vector<Vec6> states;
  for (int i = 0; i < 100; ++i) {
    const Vec6 z = random_state(rng);
    states.push_back(z);
    CHECK((time_reversal(time_reversal(z)) - z).norm() == 0.0);
    CHECK((time_reversal(eval_f_int(p, z)) + eval_f_int(p, time_reversal(z))).norm() <= 1e-9);
  }
  CHECK(check_reversal_compatibility(p, states) <= 1e-9);
}

TEST_CASE("parent modes") {
  const ParentModes& m = modes();
  CHECK(m.Omega(0) > 0.0);
  CHECK(m.Omega(1) > m.Omega(0) * (1 + 1e-8));
  CHECK((m.U.transpose() * m.M0 * m.U - Mat2::Identity()).cwiseAbs().maxCoeff() <= 1e-10);
  for (int j = 0; j < 2; ++j)
    CHECK((m.K0 * m.U.col(j) - m.Omega(j) * m.Omega(j) * m.M0 * m.U.col(j)).norm() <= 1e-10);
  // in-phase components share a sign, anti-phase components do not
  CHECK(m.u(Sector::IP)(0) * m.u(Sector::IP)(1) > 0.0);
  CHECK(m.u(Sector::AP)(0) * m.u(Sector::AP)(1) < 0.0);
}

TEST_CASE("spectral seed") {
  const Params p;
  for (Sector s : {Sector::IP, Sector::AP}) {
    const double A = 1e-5;
    const SupportSeed seed = seed_support(modes(), s, A);
    CHECK(seed.T == 2 * kPi / modes().omega(s));
    const int j = 2 * static_cast<int>(s);
    const Vec4 q = modal_row(modes(), seed.y0);  // (Q_IP, P_IP, Q_AP, P_AP)
    CHECK(q(j) == doctest::Approx(A));
    CHECK(q(j + 1) == 0.0);
    CHECK(std::abs(q(2 - j)) <= 1e-12 * A);
    const num::Field f = [&](double, const num::Vec& y, num::Vec& dy) { dy = eval_f_perp(p, y.head<4>()); };
    const num::Vec y = num::flow(f, num::Vec(seed.y0), 0.0, seed.T);
    // returns up to the cubic period shift
    CHECK((y - num::Vec(seed.y0)).cwiseAbs().maxCoeff() <= 1e-3 * A);
  }
}

TEST_CASE("support amplitude continuation") {
  const Params p;
  const auto ladder = support_ladder(p, modes(), Sector::IP, {0.05, 0.1, 0.2});
  REQUIRE(ladder.size() == 3);
  double prev = 2 * kPi / modes().omega(Sector::IP);
  for (const TransverseSupport& s : ladder) {
    CHECK(s.R_supp <= 1e-9);
    CHECK(s.gauge_residual <= 1e-10);
    CHECK(s.T < prev);  // hardening: the period falls monotonically from the linear one
    prev = s.T;
  }
  CHECK(ladder[0].R_E <= 1e-10);
  CHECK(ladder[1].R_E <= 1e-10);
  // a fine ladder lands on the same orbits
  const auto fine = support_ladder(p, modes(), Sector::IP, {0.02, 0.05, 0.08, 0.1});
  REQUIRE(fine.size() == 4);
  CHECK(std::abs(fine[1].T - ladder[0].T) <= 1e-9);
  CHECK(std::abs(fine[3].T - ladder[1].T) <= 1e-9);
}

TEST_CASE("modal features") {
  // pure linear IP oscillation sampled exactly
  const ParentModes& m = modes();
  const double Om = m.omega(Sector::IP), T = 2 * kPi / Om;
  CycleSamples c;
  c.T = T;
  for (int i = 0; i < 256; ++i) {
    const double t = T * i / 256;
    Vec4 y;
    y << 0.01 * m.u(Sector::IP) * std::cos(Om * t), -0.01 * Om * m.u(Sector::IP) * std::sin(Om * t);
    c.y.push_back(y);
  }
  const ModalFeatures f = compute_modal_features(m, c);
  // shares carry the identity regularizer
  CHECK(f.share_of(Sector::IP) >= 1 - 1e-6);
  CHECK(f.share_of(Sector::AP) <= 1e-9);
  CHECK(f.share(0) < 1.0);
  CHECK(f.share(1) >= 0.0);
  CHECK(f.identity_distance(Sector::IP) < f.identity_distance(Sector::AP));
}

TEST_CASE("stationary oscillation") {
  const Params p;
  const LiftedCycle c = stationary_cycle(Sector::IP, 0.02, 8);
  const DenseCycle d(p, c);
  CHECK(std::abs(mean_speed(d)) <= 1e-9);
  // the carrier leaves the closed leaf within the period and comes back
  double qmax = 0.0;
  for (int i = 0; i <= 32; ++i) qmax = std::max(qmax, carrier_channel(p, d.state(d.T() * i / 32)).norm());
  CHECK(qmax > 0.0);
  const PoeRow poe = poe_row(p, d);
  CHECK(std::abs(poe.Psi) <= 1e-10);
  CHECK(std::abs(poe.Psi * d.T() - poe.dE) <= 1e-11);

  SUBCASE("passes the return and POE rows but not displacement") {
    const FinalCertificate cert = assemble_final_certificate(p, modes(), c, Sector::IP);
    CHECK(cert.row("R_z_fin")->pass);
    CHECK(cert.row("R_POE_fin")->pass);
    CHECK(cert.row("R_car_fin")->pass);
    CHECK_FALSE(cert.row("R_g_fin")->pass);
    CHECK_FALSE(cert.pass);
    CHECK(cert.label == "stationary");
  }
}

TEST_CASE("lift rows") {
  const Params p;
  const SearchResult& r = found(Sector::IP);
  CHECK(r.lift.R_car <= 1e-8);
  CHECK(r.lift.scaled_norm <= 1e-10);
  // a closed-leaf start with the speed row at zero lands on a stationary lift
  const auto small = support_ladder(p, modes(), Sector::IP, {0.02});
  REQUIRE(small.size() == 1);
  LiftOptions lo;
  lo.vbar_target = 0.0;
  const LiftResult still = lift_support(p, modes(), small[0], Vec2::Zero(), lo);
  CHECK(still.R_car <= 1e-8);
  const DenseCycle d(p, still.cycle);
  CHECK(std::abs(mean_speed(d)) <= 1e-9);
  CHECK(std::abs(poe_row(p, d).Psi) <= 1e-10);
}

TEST_CASE("multiple shooting is invariant under node doubling") {
  const Params p;
  const LiftedCycle& c8 = found(Sector::IP).shooting.cycle;
  REQUIRE(c8.segments() == 8);
  const LiftedCycle c16 = resample(p, c8, Representation::Shooting, 16);
  for (const LiftedCycle* c : {&c8, &c16}) {
    const BlendedGauge g = make_gauge(modes(), *c, 0.5, 1.0);
    const ResidualReport r = shooting_residual(p, modes(), c->nodes, c->durations, g, state_scales(c->nodes));
    CHECK(r.residual.head(6 * c->segments()).norm() <= 1e-10);
  }
  // solving on the doubled mesh returns the same orbit
  CycleSolveOptions o;
  o.vbar_target = 1.0;
  const CycleSolveResult s16 = solve_shooting(p, modes(), c16, o);
  CHECK(s16.converged);
  CHECK(std::abs(s16.cycle.T - c8.T) <= 1e-10);
  const LiftedCycle back = resample(p, s16.cycle, Representation::Shooting, 8);
  const BlendedGauge g = make_gauge(modes(), back, 0.5, 1.0);
  CHECK(shooting_residual(p, modes(), back.nodes, back.durations, g, state_scales(back.nodes))
            .residual.head(48)
            .norm() <= 1e-10);
  SUBCASE("single segment is single shooting") {
    const LiftedCycle c1 = resample(p, c8, Representation::Shooting, 1);
    const ResidualReport r =
        shooting_residual(p, modes(), c1.nodes, c1.durations, make_gauge(modes(), c1, 0.5, 1.0), Vec6::Ones());
    const Vec6 direct = num::flow(internal(p), c1.nodes[0], 0.0, c1.T).head<6>() - c1.nodes[0];
    // integrator noise only
    CHECK((r.residual.head<6>() - direct).norm() <= 1e-10);
  }
}

TEST_CASE("rhs check") {
  const Params p;
  const LiftedCycle& c = found(Sector::IP).shooting.cycle;
  // the shooting representation is the flow itself
  CHECK(rhs_check(p, DenseCycle(p, c)).full <= 1e-6);
  // collocation defects fall as the mesh is refined
  CycleSolveOptions o;
  o.vbar_target = 1.0;
  double prev = INFINITY;
  for (std::size_t n : {8, 16, 32}) {
    const CycleSolveResult r = solve_collocation(p, modes(), resample(p, c, Representation::Collocation, n), o);
    const double d = rhs_check(p, DenseCycle(p, r.cycle)).full;
    INFO("N = " << n << " defect " << d);
    CHECK(d < prev);
    prev = d;
  }
}

TEST_CASE("POE identity on a moving cycle") {
  const Params p;
  const DenseCycle d(p, found(Sector::AP).shooting.cycle);
  const PoeRow poe = poe_row(p, d);
  CHECK(std::abs(poe.Psi * d.T() - poe.dE) <= 1e-11);
  CHECK(std::abs(poe.Psi) <= 1e-6);
}

TEST_CASE("cover and reversal maps") {
  const Params p;
  const LiftedCycle& c = found(Sector::AP).shooting.cycle;
  const LiftedCycle one = ap_cover(c, 1);
  CHECK(one.T == c.T);
  CHECK(one.nodes == c.nodes);
  const LiftedCycle rr = time_reverse(time_reverse(c));
  CHECK(std::abs(rr.T - c.T) <= 1e-12);
  for (std::size_t i = 0; i < c.nodes.size(); ++i) CHECK((rr.nodes[i] - c.nodes[i]).norm() <= 1e-12);
  // the reversed cycle is again a solution
  const LiftedCycle r = time_reverse(c);
  const ResidualReport res =
      shooting_residual(p, modes(), r.nodes, r.durations, make_gauge(modes(), r, 0.5, 1.0), state_scales(r.nodes));
  CHECK(res.residual.head(6 * r.segments()).norm() <= 1e-9);

  SUBCASE("three-period cover projects back") {
    const LiftedCycle cov = ap_cover(c, 3);
    CHECK(std::abs(cov.T - 3 * c.T) <= 1e-12);
    CycleSolveOptions o;
    o.vbar_target = 1.0;
    const CycleSolveResult s = solve_shooting(p, modes(), cov, o);
    REQUIRE(s.converged);
    const LiftedCycle back = project_cover(s.cycle, 3);
    CHECK(std::abs(back.T - c.T) <= 1e-8);
    const FinalCertificate a = assemble_final_certificate(p, modes(), c, Sector::AP);
    const FinalCertificate b = assemble_final_certificate(p, modes(), back, Sector::AP);
    CHECK(std::abs(a.vbar - b.vbar) <= 1e-8);
    CHECK(std::abs(a.d_g - b.d_g) <= 1e-8);
    CHECK(b.pass);
  }
}

TEST_CASE("mobility probe") {
  Candidate still;
  Candidate moving;
  moving.dg.dx = 0.5;
  moving.R_supp = 2e-7;
  const auto s = mobility_probe({still, moving});
  CHECK(s[0].b_supp == 1.0);
  CHECK(s[0].b_mob == 0.0);
  CHECK(s[1].b_mob == 1.0);
  // ordering by b_supp survives a common rescaling of s_supp
  Candidate worse = moving;
  worse.R_supp = 5e-7;
  MobilityScales wide;
  wide.s_supp *= 10;
  const auto a = mobility_probe({moving, worse});
  const auto b = mobility_probe({moving, worse}, wide);
  CHECK((a[0].b_supp > a[1].b_supp) == (b[0].b_supp > b[1].b_supp));
}

TEST_CASE("final certificate") {
  const Params p;
  for (Sector s : {Sector::IP, Sector::AP}) {
    const FinalCertificate& c = found(s).certificate;
    CAPTURE(to_string(s));
    CHECK(c.pass);
    CHECK(c.label == "natural-locomotion");
    CHECK(c.row("R_POE_fin")->value <= 1e-6);
    CHECK(c.row("R_z_fin")->value <= 1e-7);
    CHECK(c.row("R_rhs_int")->value <= 2e-3);
    CHECK(c.d_g >= 1e-3);
    CHECK(c.energy_drift <= 1e-9);
    // gating order: domain, representation, mechanical, POE, then displacement
    const std::vector<std::string> order{"lambda_min_Mperp", "R_ms", "R_ph", "R_vbar", "R_supp_fin", "R_id_fin",
                                         "R_car_fin", "R_z_fin", "R_rhs_fin", "R_rhs_int", "R_POE_fin", "R_g_fin"};
    CHECK(c.trace == order);
  }

  SUBCASE("a perturbed candidate fails the return row and skips displacement") {
    LiftedCycle bad = found(Sector::IP).shooting.cycle;
    bad.nodes[0](S1) += 1e-3;
    const FinalCertificate c = assemble_final_certificate(p, modes(), bad, Sector::IP);
    CHECK(c.row("R_z_fin")->value > 1e-7);
    CHECK_FALSE(c.pass);
    CHECK(c.label == "rejected");
    CHECK_FALSE(c.row("R_g_fin")->evaluated);
  }

  SUBCASE("without the POE row the magnitude is still reported") {
    CertificateOptions o;
    o.poe_row_enabled = false;
    const FinalCertificate c = assemble_final_certificate(p, modes(), found(Sector::IP).shooting.cycle, Sector::IP, o);
    const CertRow* r = c.row("R_POE_fin");
    REQUIRE(r);
    CHECK(r->evaluated);
    CHECK_FALSE(r->gating);
    CHECK(c.label == "moving-poe-ungated");
    // a POE magnitude above the threshold is labelled as not natural
    o.thresholds.tau_POE = 0.1 * std::abs(c.Psi_POE);
    if (c.Psi_POE != 0.0) {
      const FinalCertificate n = assemble_final_certificate(p, modes(), found(Sector::IP).shooting.cycle, Sector::IP, o);
      CHECK(n.label == "moving-but-not-natural");
    }
  }
}

TEST_CASE("paired certificate") {
  const Params p;
  const FinalCertificate& ip = found(Sector::IP).certificate;
  const FinalCertificate& ap = found(Sector::AP).certificate;
  const PairedCertificate ok = paired_certificate(p, ip, ap);
  CHECK(ok.pass);
  CHECK(ok.failures.empty());

  SUBCASE("stationary AP cycle") {
    // the AP record with its displacement removed, as a stationary oscillation reports it
    FinalCertificate st = ap;
    st.dg = Pose{};
    st.d_g = 0.0;
    st.pass = false;
    st.label = "stationary";
    const PairedCertificate pc = paired_certificate(p, ip, st);
    CHECK_FALSE(pc.pass);
    CHECK(std::find(pc.failures.begin(), pc.failures.end(), "AP_displacement") != pc.failures.end());
  }
  SUBCASE("AP certified at other physics") {
    Params q = p;
    q.k12 *= 1.01;
    FinalCertificate moved = ap;
    moved.params = q;
    const PairedCertificate pc = paired_certificate(p, ip, moved);
    CHECK_FALSE(pc.pass);
    CHECK(std::find(pc.failures.begin(), pc.failures.end(), "theta_AP") != pc.failures.end());
  }
  SUBCASE("POE gate disabled") {
    CertificateOptions o;
    o.poe_row_enabled = false;
    const FinalCertificate a = assemble_final_certificate(p, modes(), found(Sector::AP).shooting.cycle, Sector::AP, o);
    CHECK_FALSE(paired_certificate(p, ip, a).pass);
  }
}

TEST_CASE("continuation charts") {
  const Params p;
  const LiftedCycle& c = found(Sector::IP).shooting.cycle;
  CHECK(blend(p, Params{}, 1.0) == Params{});
  Params other = p;
  other.m1 = 5.0;
  CHECK(blend(other, p, 1.0) == p);
  CHECK(blend(other, p, 0.0) == other);

  ContinuationChart speed;
  speed.sector = Sector::IP;
  const StepResult s = solve_chart(modes(), speed, {c, 1.2, p});
  CHECK(std::abs(chart_functionals(p, modes(), s.point.cycle).vbar - 1.2) <= 1e-8 * speed.v_sc);

  ContinuationChart poe = speed;
  poe.kind = ChartKind::PoeConstrained;
  const StepResult sp = solve_chart(modes(), poe, {c, 1.1, p});
  CHECK(std::abs(chart_functionals(p, modes(), sp.point.cycle).Psi) <= 1e-8 * poe.psi_sc);

  // one arclength step along the speed chart stays certified
  const StepResult next = continuation_step(modes(), speed, {c, 1.0, p}, s.point, 0.1);
  CHECK(next.point.lambda > 1.2);
  CHECK(assemble_final_certificate(p, modes(), next.point.cycle, Sector::IP).pass);

  SUBCASE("physical homotopy ends exactly at the frozen architecture") {
    Params src = p;
    src.k12 *= 1.05;
    SearchOptions so;
    so.collocation = false;
    const SearchResult r = find_moving_cycle(src, solve_parent_modes(src), Sector::IP, so);
    ContinuationChart h;
    h.kind = ChartKind::PhysicalHomotopy;
    h.sector = Sector::IP;
    h.theta_src = src;
    h.theta_dst = p;
    h.vbar_hold = 1.0;
    const StepResult back = solve_chart(modes(), h, {r.shooting.cycle, -0.05, src});
    const auto path = continue_chart(modes(), h, back.point, {r.shooting.cycle, 0.0, src}, 0.3, 1.0, 40);
    ChartPoint guess = path.back();
    guess.lambda = 1.0;
    const StepResult end = solve_chart(modes(), h, guess);
    CHECK(end.point.params == p);
    const FinalCertificate cert = assemble_final_certificate(p, modes(), end.point.cycle, Sector::IP);
    CHECK(cert.pass);
    CHECK(std::abs(cert.T - found(Sector::IP).certificate.T) <= 1e-8);
  }
}
