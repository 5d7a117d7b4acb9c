#include "doctest.h"
#include "nlm/error.hpp"
#include "nlm/numerics/least_squares.hpp"
#include "nlm/numerics/linalg.hpp"
#include "nlm/numerics/ode.hpp"
#include "nlm/numerics/quadrature.hpp"
#include "nlm/seg3/opened.hpp"

#include <boost/math/special_functions/ellint_1.hpp>
#include <cmath>
#include <numbers>
#include <random>

using namespace nlm;
using num::Vec;
constexpr double kPi = std::numbers::pi;

TEST_CASE("harmonic oscillator returns after one period") {
  const num::Field f = [](double, const Vec& y, Vec& dy) {
    dy.resize(2);
    dy << y(1), -y(0);
  };
  const Vec y = num::flow(f, Vec::Unit(2, 0), 0.0, 2 * kPi);
  CHECK(std::abs(y(0) - 1.0) <= 1e-9);
  CHECK(std::abs(y(1)) <= 1e-9);
}

TEST_CASE("rising event on sin t lands at 2 pi") {
  // state (t, sin t); the rising zero after t = 0.1 is 2 pi
  const num::Field f = [](double t, const Vec&, Vec& dy) {
    dy.resize(2);
    dy << 1.0, std::cos(t);
  };
  const Vec y0 = (Vec(2) << 0.1, std::sin(0.1)).finished();
  const num::EventSpec ev[] = {{[](double, const Vec& y) { return y(1); }, num::Direction::Rising}};
  const num::Trajectory tr = num::integrate(f, y0, 0.1, 10.0, ev);
  REQUIRE(tr.event());
  CHECK(std::abs(tr.event()->t - 2 * kPi) <= 1e-10);
  CHECK(tr.tf() == doctest::Approx(tr.event()->t));
}

TEST_CASE("constant accumulator integrates to the horizon") {
  const num::Field f = [](double, const Vec& y, Vec& dy) { dy = -y; };
  const num::Accumulator acc[] = {{"one", [](double, const Vec&) { return 1.0; }}};
  const num::Trajectory tr = num::integrate(f, Vec::Ones(1), 0.0, 3.7, {}, acc);
  CHECK(std::abs(tr.accumulator("one") - 3.7) <= 1e-12);
  // dense output against the analytic solution
  CHECK(std::abs(tr(1.3)(0) - std::exp(-1.3)) <= 1e-10);
}

TEST_CASE("generalized eigenproblem") {
  SUBCASE("diagonal") {
    const num::GenEig e = num::sym_gen_eig(Eigen::Vector2d(1, 4).asDiagonal().toDenseMatrix(),
                                           Eigen::Matrix2d::Identity());
    CHECK(e.values(0) == doctest::Approx(1.0));
    CHECK(e.values(1) == doctest::Approx(4.0));
    CHECK(std::abs(std::abs(e.vectors(0, 0)) - 1.0) <= 1e-14);
    CHECK(std::abs(e.vectors(1, 0)) <= 1e-14);
  }
  SUBCASE("exchange symmetry") {
    Eigen::Matrix2d K;
    K << 2, -1, -1, 2;
    const num::GenEig e = num::sym_gen_eig(K, Eigen::Matrix2d::Identity());
    CHECK(e.values(0) == doctest::Approx(1.0));
    CHECK(e.values(1) == doctest::Approx(3.0));
    CHECK(std::abs(e.vectors(0, 0) - e.vectors(1, 0)) <= 1e-12);
    CHECK(std::abs(e.vectors(0, 1) + e.vectors(1, 1)) <= 1e-12);
  }
  SUBCASE("random SPD pairs") {
    std::mt19937_64 rng(7);
    std::normal_distribution<double> g;
    for (int trial = 0; trial < 20; ++trial) {
      Eigen::MatrixXd A(4, 4), B(4, 4);
      for (int i = 0; i < 16; ++i) A(i) = g(rng), B(i) = g(rng);
      const Eigen::MatrixXd K = A + A.transpose();
      const Eigen::MatrixXd M = B * B.transpose() + 0.5 * Eigen::MatrixXd::Identity(4, 4);
      const num::GenEig e = num::sym_gen_eig(K, M);
      for (int j = 0; j < 4; ++j)
        CHECK((K * e.vectors.col(j) - e.values(j) * M * e.vectors.col(j)).norm() <= 1e-9);
      CHECK((e.vectors.transpose() * M * e.vectors - Eigen::MatrixXd::Identity(4, 4)).cwiseAbs().maxCoeff() <= 1e-12);
    }
  }
  SUBCASE("indefinite metric") {
    CHECK_THROWS_AS(num::sym_gen_eig(Eigen::Matrix2d::Identity(), Eigen::Vector2d(1, -1).asDiagonal().toDenseMatrix()),
                    Error);
  }
}

TEST_CASE("damped least squares") {
  SUBCASE("linear scalar") {
    const auto r = num::damped_least_squares([](const Eigen::VectorXd& x) { return (x.array() - 3.0).matrix().eval(); },
                                             Eigen::VectorXd(Eigen::VectorXd::Zero(1)), Eigen::VectorXd(Eigen::VectorXd::Ones(1)));
    CHECK(r.converged);
    CHECK(std::abs(r.x(0) - 3.0) <= 1e-12);
    CHECK(r.residual.norm() <= 1e-12);
  }
  SUBCASE("Rosenbrock") {
    const num::ResidualFn f = [](const Eigen::VectorXd& x) {
      return Eigen::Vector2d(10.0 * (x(1) - x(0) * x(0)), 1.0 - x(0)).eval();
    };
    const auto r = num::damped_least_squares(f, Eigen::VectorXd(Eigen::Vector2d(-1, 1)), Eigen::VectorXd(Eigen::VectorXd::Ones(2)));
    CHECK((r.x - Eigen::Vector2d(1, 1)).norm() <= 1e-8);
  }
  SUBCASE("row weights leave the zero set alone") {
    const num::ResidualFn f = [](const Eigen::VectorXd& x) { return Eigen::Vector2d(x(0), x(1) - 0.5).eval(); };
    const auto a = num::damped_least_squares(f, Eigen::VectorXd(Eigen::Vector2d(2, 2)), Eigen::VectorXd(Eigen::Vector2d(10, 1)));
    const auto b = num::damped_least_squares(f, Eigen::VectorXd(Eigen::Vector2d(2, 2)), Eigen::VectorXd(Eigen::Vector2d(1, 1)));
    CHECK((a.x - b.x).norm() <= 1e-12);
    CHECK(std::abs(a.x(1) - 0.5) <= 1e-12);
  }
}

TEST_CASE("quadrature") {
  CHECK(num::quad([](double x) { return std::exp(x); }, 0.0, 1.0) == doctest::Approx(std::exp(1.0) - 1.0).epsilon(1e-14));
  // endpoint singularities at a, where the abscissae carry no cancellation
  CHECK(std::abs(num::quad_endpoint([](double x) { return 1.0 / std::sqrt(x); }, 0.0, 1.0) - 2.0) <= 1e-12);
  CHECK(std::abs(num::quad_endpoint([](double x) { return std::log(x); }, 0.0, 1.0) + 1.0) <= 1e-12);
  // independent elliptic oracle
  const double k = 0.7;
  const double K = num::quad([&](double t) { return 1.0 / std::sqrt(1 - k * k * std::sin(t) * std::sin(t)); }, 0.0, kPi / 2);
  CHECK(std::abs(K - boost::math::ellint_1(k)) <= 1e-13);
  // piecewise Gauss is exact on polynomials of degree < 20 per piece
  const double p = num::piecewise_gauss([](double x) { return std::pow(x, 9); }, {0.0, 0.3, 1.0});
  CHECK(std::abs(p - 0.1) <= 1e-15);
}

namespace {
std::vector<Eigen::VectorXd> exp_samples(int n) {
  std::vector<Eigen::VectorXd> z;
  for (int i = 0; i <= n; ++i) z.push_back(Eigen::VectorXd::Constant(1, std::exp(-double(i) / n)));
  return z;
}
double max_defect(const std::vector<Eigen::VectorXd>& d) {
  double m = 0.0;
  for (const auto& x : d) m = std::max(m, x.cwiseAbs().maxCoeff());
  return m;
}
}  // namespace

TEST_CASE("Hermite-Simpson defects") {
  SUBCASE("cubic exactness") {
    // z(t) = t^4/4 - t^3 + t solves z' = p(t); the defect depends on the time
    // derivative only, so use an augmented state (t, z)
    const auto f = [](const Eigen::VectorXd& y) {
      const double t = y(0);
      return Eigen::Vector2d(1.0, t * t * t - 3 * t * t + 1).eval();
    };
    std::vector<Eigen::VectorXd> z;
    std::vector<double> dt;
    for (int i = 0; i <= 7; ++i) {
      const double t = 0.3 * i;
      z.push_back(Eigen::Vector2d(t, t * t * t * t / 4 - t * t * t + t));
      if (i < 7) dt.push_back(0.3);
    }
    CHECK(max_defect(seg3::hermite_simpson_defects(f, z, dt)) <= 1e-13);
  }
  SUBCASE("fifth-order local defect under mesh halving") {
    const auto f = [](const Eigen::VectorXd& y) { return Eigen::VectorXd(-y); };
    double prev = 0.0;
    for (int n : {4, 8, 16, 32}) {
      const double d = max_defect(seg3::hermite_simpson_defects(f, exp_samples(n), std::vector<double>(n, 1.0 / n)));
      if (prev > 0.0) {
        const double ratio = prev / d;
        INFO("n = " << n << " ratio " << ratio);
        CHECK(ratio >= 28.0);
        CHECK(ratio <= 36.0);
      }
      prev = d;
    }
  }
}
