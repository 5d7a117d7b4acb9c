#include "nlm/numerics/least_squares.hpp"

#include "nlm/error.hpp"

#include <cmath>
#include <limits>

namespace nlm::num {

namespace {
const double kFdStep = std::sqrt(std::numeric_limits<double>::epsilon());
}

Eigen::MatrixXd fd_jacobian(const ResidualFn& f, const Eigen::VectorXd& x) {
  Eigen::MatrixXd J;
  Eigen::VectorXd xp = x;
  for (Eigen::Index i = 0; i < x.size(); ++i) {
    const double h = kFdStep * std::max(1.0, std::abs(x(i)));
    xp(i) = x(i) + h;
    const Eigen::VectorXd fp = f(xp);
    xp(i) = x(i) - h;
    const Eigen::VectorXd fm = f(xp);
    xp(i) = x(i);
    if (J.size() == 0) J.resize(fp.size(), x.size());
    J.col(i) = (fp - fm) / (2.0 * h);
  }
  return J;
}

LsqResult damped_least_squares(const ResidualFn& residual, const Eigen::VectorXd& x0,
                               const WeightFn& weights, const LsqOptions& opt) {
  LsqResult out;
  int evals = 0;
  // the weights may depend on the residual; scaled rows are differentiated as a whole
  auto scaled = [&](const Eigen::VectorXd& x, Eigen::VectorXd* raw, Eigen::VectorXd* w) {
    ++evals;
    Eigen::VectorXd r = residual(x);
    Eigen::VectorXd wx = weights(x, r);
    if (!r.allFinite()) throw DomainExit("non-finite-residual");
    Eigen::VectorXd g = wx.cwiseProduct(r);
    if (raw) *raw = std::move(r);
    if (w) *w = std::move(wx);
    return g;
  };
  ResidualFn g_only = [&](const Eigen::VectorXd& x) { return scaled(x, nullptr, nullptr); };

  Eigen::VectorXd x = x0, r, w;
  Eigen::VectorXd g = scaled(x, &r, &w);
  double cost = 0.5 * g.squaredNorm();
  double lambda = opt.initial_damping;
  double nu = 2.0;
  out.status = "max-iterations";

  int it = 0;
  for (; it < opt.max_iterations; ++it) {
    if (std::sqrt(2.0 * cost) <= opt.tolerance) {
      out.status = "converged";
      break;
    }
    Eigen::MatrixXd J;
    try {
      J = fd_jacobian(g_only, x);
    } catch (const DomainExit&) {
      out.status = "stalled";
      break;
    }
    if (!J.allFinite() || J.cwiseAbs().maxCoeff() == 0.0)
      throw Error("singular-jacobian", "no usable column");
    const Eigen::VectorXd colnorm = J.colwise().norm().transpose();
    const double dfloor = 1e-12 * std::max(1.0, colnorm.maxCoeff());
    Eigen::VectorXd D = colnorm.cwiseMax(dfloor);
    const Eigen::VectorXd grad = J.transpose() * g;

    bool accepted = false;
    bool stalled = false;
    while (!accepted) {
      Eigen::MatrixXd A(J.rows() + J.cols(), J.cols());
      A << J, Eigen::MatrixXd(std::sqrt(lambda) * D.asDiagonal());
      Eigen::VectorXd b = Eigen::VectorXd::Zero(A.rows());
      b.head(g.size()) = -g;
      const Eigen::VectorXd dx = A.colPivHouseholderQr().solve(b);
      if (dx.norm() <= opt.step_tolerance * (x.norm() + opt.step_tolerance)) {
        stalled = true;
        break;
      }
      const Eigen::VectorXd xt = x + dx;
      const double predicted = -(grad.dot(dx) + 0.5 * (J * dx).squaredNorm());
      Eigen::VectorXd rt, wt, gt;
      bool ok = true;
      try {
        gt = scaled(xt, &rt, &wt);
      } catch (const DomainExit&) {
        ok = false;
        ++out.domain_rejections;
      }
      const double cost_t = ok ? 0.5 * gt.squaredNorm() : std::numeric_limits<double>::infinity();
      const double rho = predicted > 0 ? (cost - cost_t) / predicted : -1.0;
      if (ok && cost_t < cost && rho > 0) {
        x = xt;
        r = std::move(rt);
        w = std::move(wt);
        g = std::move(gt);
        cost = cost_t;
        lambda *= std::max(1.0 / 3.0, 1.0 - std::pow(2.0 * rho - 1.0, 3));
        nu = 2.0;
        accepted = true;
      } else {
        lambda *= nu;
        nu *= 2.0;
        if (lambda > 1e20) {
          stalled = true;
          break;
        }
      }
    }
    if (stalled) {
      out.status = std::sqrt(2.0 * cost) <= opt.tolerance ? "converged" : "stalled";
      break;
    }
  }
  if (it == opt.max_iterations && std::sqrt(2.0 * cost) <= opt.tolerance) out.status = "converged";

  out.x = x;
  out.residual = r;
  out.weights = w;
  out.scaled_norm = g.norm();
  out.converged = out.status == "converged";
  out.iterations = it;
  out.evaluations = evals;
  return out;
}

LsqResult damped_least_squares(const ResidualFn& residual, const Eigen::VectorXd& x0,
                               const Eigen::VectorXd& weights, const LsqOptions& options) {
  return damped_least_squares(
      residual, x0, [weights](const Eigen::VectorXd&, const Eigen::VectorXd&) { return weights; },
      options);
}

}  // namespace nlm::num
