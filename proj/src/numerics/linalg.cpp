#include "nlm/numerics/linalg.hpp"

#include "nlm/error.hpp"

#include <cmath>

namespace nlm::num {

GenEig sym_gen_eig(const Eigen::MatrixXd& K, const Eigen::MatrixXd& M) {
  if (K.rows() != K.cols() || M.rows() != M.cols() || K.rows() != M.rows())
    throw Error("shape-mismatch", "sym_gen_eig");
  const Eigen::MatrixXd Ms = 0.5 * (M + M.transpose());
  const Eigen::MatrixXd Ks = 0.5 * (K + K.transpose());
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> metric(Ms, Eigen::EigenvaluesOnly);
  const double scale = std::max(std::abs(Ms.trace()), 1e-300);
  if (metric.info() != Eigen::Success || metric.eigenvalues()(0) <= 1e-12 * scale)
    throw Error("indefinite-metric", "smallest metric eigenvalue " +
                                         std::to_string(metric.eigenvalues()(0)));

  Eigen::GeneralizedSelfAdjointEigenSolver<Eigen::MatrixXd> ges(Ks, Ms);
  if (ges.info() != Eigen::Success) throw Error("indefinite-metric", "decomposition failed");
  GenEig out{ges.eigenvalues(), ges.eigenvectors()};
  for (Eigen::Index j = 0; j < out.vectors.cols(); ++j) {
    auto col = out.vectors.col(j);
    const double norm = std::sqrt(col.dot(Ms * col));
    col /= norm;
    Eigen::Index imax = 0;
    col.cwiseAbs().maxCoeff(&imax);
    if (col(imax) < 0) col = -col;
  }
  return out;
}

double asymmetry(const Eigen::MatrixXd& A) { return (A - A.transpose()).cwiseAbs().maxCoeff(); }

}  // namespace nlm::num
