#pragma once

#include <Eigen/Dense>

namespace nlm::num {

struct GenEig {
  Eigen::VectorXd values;   // ascending
  Eigen::MatrixXd vectors;  // columns, M-orthonormal
};

/// Solve K u = lambda M u for symmetric K and symmetric positive definite M.
/// Each eigenvector is signed so that its largest-magnitude entry is positive.
/// Throws Error("indefinite-metric") when M is not safely positive definite.
GenEig sym_gen_eig(const Eigen::MatrixXd& K, const Eigen::MatrixXd& M);

/// Largest |A - A^T| entry.
double asymmetry(const Eigen::MatrixXd& A);

}  // namespace nlm::num
