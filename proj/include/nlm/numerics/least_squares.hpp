#pragma once

#include <Eigen/Dense>

#include <functional>
#include <string>

namespace nlm::num {

using ResidualFn = std::function<Eigen::VectorXd(const Eigen::VectorXd& x)>;
/// Diagonal row weights W as a function of the unknowns and the unscaled residual.
using WeightFn = std::function<Eigen::VectorXd(const Eigen::VectorXd& x, const Eigen::VectorXd& r)>;

struct LsqOptions {
  int max_iterations = 200;
  double tolerance = 1e-13;       // on ||W r||
  double step_tolerance = 1e-15;  // relative step size at which the solve stalls
  double initial_damping = 1e-3;
};

struct LsqResult {
  Eigen::VectorXd x;
  Eigen::VectorXd residual;  // unscaled r(x)
  Eigen::VectorXd weights;
  double scaled_norm = 0.0;
  bool converged = false;
  int iterations = 0;
  int evaluations = 0;
  int domain_rejections = 0;  // trial steps that left the residual's domain
  std::string status;         // "converged", "max-iterations", "stalled"
};

/// Levenberg-Marquardt minimization of 1/2 ||W r(x)||^2 with a central
/// finite-difference Jacobian (step sqrt(eps) max(1,|x_i|)).
///
/// A DomainExit raised at x0 propagates. Raised at a trial point, it counts
/// as a rejected step and the damping grows. Throws Error("singular-jacobian")
/// when the Jacobian has no usable column.
LsqResult damped_least_squares(const ResidualFn& residual, const Eigen::VectorXd& x0,
                               const WeightFn& weights, const LsqOptions& options = {});

LsqResult damped_least_squares(const ResidualFn& residual, const Eigen::VectorXd& x0,
                               const Eigen::VectorXd& weights, const LsqOptions& options = {});

/// Central-difference Jacobian of f at x.
Eigen::MatrixXd fd_jacobian(const ResidualFn& f, const Eigen::VectorXd& x);

}  // namespace nlm::num
