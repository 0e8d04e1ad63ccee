#include <cmath>
#include <stdexcept>

#include <Eigen/Eigenvalues>

#include "ctpg/env.h"

namespace ctpg {
namespace {

constexpr double kResidualTolerance = 1e-10;
constexpr int kMaxIterations = 100;

// Solves L X + X L' = C through the Kronecker form; fine for the small state
// dimensions used here.
Matrix lyapunov(const Matrix& L, const Matrix& C) {
  const Eigen::Index n = L.rows();
  const Matrix I = Matrix::Identity(n, n);
  Matrix op = Matrix::Zero(n * n, n * n);
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = 0; j < n; ++j) {
      // vec(L X) = (I kron L) vec X, vec(X L') = (L kron I) vec X
      op.block(i * n, j * n, n, n) += I(i, j) * L + L(i, j) * I;
    }
  }
  Eigen::FullPivLU<Matrix> lu(op);
  if (!lu.isInvertible()) {
    throw std::runtime_error("singular Lyapunov operator");
  }
  const Vector x = lu.solve(Eigen::Map<const Vector>(C.data(), n * n));
  Matrix X = Eigen::Map<const Matrix>(x.data(), n, n);
  return 0.5 * (X + X.transpose());
}

double max_real_eig(const Matrix& M) {
  Eigen::EigenSolver<Matrix> es(M, /*computeEigenvectors=*/false);
  return es.eigenvalues().real().maxCoeff();
}

}  // namespace

RiccatiSolution solve_care(const Matrix& A, const Matrix& B, const Matrix& Q,
                           const Matrix& R) {
  const Eigen::Index n = A.rows(), m = B.cols();
  if (A.cols() != n || B.rows() != n || Q.rows() != n || Q.cols() != n ||
      R.rows() != m || R.cols() != m) {
    throw std::invalid_argument("CARE: incompatible matrix shapes");
  }
  Eigen::LLT<Matrix> r_llt(R);
  if (r_llt.info() != Eigen::Success) {
    throw std::invalid_argument("CARE: R must be positive definite");
  }
  const Matrix r_inv_bt = r_llt.solve(B.transpose());

  // Newton needs a stabilizing start. Bass's construction gives one for any
  // controllable pair when A itself is not Hurwitz.
  Matrix K = Matrix::Zero(m, n);
  const double spectral_abscissa = max_real_eig(A);
  if (spectral_abscissa >= 0) {
    const double beta = spectral_abscissa + 1.0;
    const Matrix shifted = A + beta * Matrix::Identity(n, n);
    const Matrix Z = lyapunov(shifted, 2.0 * B * B.transpose());
    Eigen::FullPivLU<Matrix> z_lu(Z);
    if (!z_lu.isInvertible()) {
      throw std::runtime_error("CARE: (A, B) not controllable; no stabilizing start");
    }
    K = B.transpose() * z_lu.inverse();
  }

  RiccatiSolution out;
  for (int it = 1; it <= kMaxIterations; ++it) {
    const Matrix closed = A - B * K;
    const Matrix P = lyapunov(closed.transpose(),
                              -(Q + K.transpose() * R * K));
    K = r_inv_bt * P;
    const Matrix residual = A.transpose() * P + P * A -
                            P * B * r_inv_bt * P + Q;
    out.P = P;
    out.K = K;
    out.iterations = it;
    out.residual = residual.norm();
    if (out.residual < kResidualTolerance) return out;
  }
  throw std::runtime_error("CARE: Kleinman iteration did not converge in 100 steps (residual " +
                           std::to_string(out.residual) + ")");
}

Matrix lqr_optimal_gain(const Matrix& A, const Matrix& B, const Matrix& Q,
                        const Matrix& R) {
  return solve_care(A, B, Q, R).K;
}

}  // namespace ctpg
