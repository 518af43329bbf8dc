#include "lspi/lyapunov.hpp"

#include "lspi/errors.hpp"

#include <cmath>
#include <string>

namespace lspi {

namespace {

void check_system_dims(const Matrix& A, const Matrix& B, const Matrix& S, const Matrix& R) {
  const Index n = A.rows();
  if (A.cols() != n || B.rows() != n || S.rows() != n || S.cols() != n ||
      R.rows() != B.cols() || R.cols() != B.cols()) {
    throw DimensionError("inconsistent (A, B, S, R) dimensions");
  }
}

void check_gain(const Matrix& B, const Matrix& K) {
  if (K.rows() != B.cols() || K.cols() != B.rows()) {
    throw DimensionError("gain must be " + std::to_string(B.cols()) + "x" +
                         std::to_string(B.rows()) + ", got " + std::to_string(K.rows()) + "x" +
                         std::to_string(K.cols()));
  }
}

}  // namespace

Matrix lift(const Matrix& K) {
  const Index n = K.cols();
  Matrix M(n + K.rows(), n);
  M.topRows(n).setIdentity();
  M.bottomRows(K.rows()) = K;
  return M;
}

Matrix dlyap(const Eigen::Ref<const Matrix>& L, const Eigen::Ref<const Matrix>& M) {
  if (L.rows() != L.cols()) throw DimensionError("dlyap: L must be square");
  const Matrix Ms = symmetrized(M);
  if (Ms.rows() != L.rows()) throw DimensionError("dlyap: L and M dimensions differ");
  if (!is_stable(L)) {
    throw InstabilityError("dlyap: spectral radius " + std::to_string(spectral_radius(L)) +
                           " is not below 1");
  }
  // svec(L^T P L) = C svec(P) with C the congruence operator of L^T.
  const Matrix C = congruence_operator(L.transpose());
  const Matrix system = Matrix::Identity(C.rows(), C.cols()) - C;
  const Vector rhs = svec(Ms).coords;
  const Eigen::PartialPivLU<Matrix> lu(system);
  Vector p = lu.solve(rhs);
  // One step of iterative refinement.
  p += lu.solve(rhs - system * p);
  return smat(p);
}

Matrix riccati_gain(const Matrix& A, const Matrix& B, const Matrix& R, const Matrix& V) {
  const Matrix H = R + B.transpose() * V * B;
  return -H.ldlt().solve(B.transpose() * V * A);
}

Matrix riccati_map(const Matrix& A, const Matrix& B, const Matrix& S, const Matrix& R,
                   const Matrix& V) {
  const Matrix H = R + B.transpose() * V * B;
  const Matrix BtVA = B.transpose() * V * A;
  Matrix F = S + A.transpose() * V * A - BtVA.transpose() * H.ldlt().solve(BtVA);
  return 0.5 * (F + F.transpose());
}

DareSolution dare(const Matrix& A, const Matrix& B, const Matrix& S, const Matrix& R,
                  double sigma_w) {
  check_system_dims(A, B, S, R);
  const Matrix Ss = symmetrized(S);
  const Matrix Rs = symmetrized(R);
  if (lambda_min(Ss) <= 0.0 || lambda_min(Rs) <= 0.0) {
    throw PositivityError("dare: S and R must be positive definite");
  }
  Matrix V = Ss;
  for (int it = 1; it <= kDareMaxIterations; ++it) {
    Matrix next = riccati_map(A, B, Ss, Rs, V);
    if (!next.allFinite()) break;
    const double step = (next - V).norm() / std::max(next.norm(), 1e-300);
    V = std::move(next);
    if (step < 1e-12) {
      DareSolution sol;
      sol.P_star = V;
      sol.K_star = riccati_gain(A, B, Rs, V);
      sol.J_star = sigma_w * sigma_w * V.trace();
      sol.iterations = it;
      if (!is_stable(A + B * sol.K_star)) break;
      return sol;
    }
  }
  throw NonStabilizableError("dare: Riccati iteration did not converge (is (A, B) stabilizable?)");
}

ValueFunction policy_value(const Matrix& A, const Matrix& B, const Matrix& S, const Matrix& R,
                           const Matrix& K, double sigma_w) {
  check_system_dims(A, B, S, R);
  check_gain(B, K);
  ValueFunction vf;
  vf.V = dlyap(A + B * K, S + K.transpose() * R * K);
  vf.lambda = sigma_w * sigma_w * vf.V.trace();
  return vf;
}

QFunction policy_qfun(const Matrix& A, const Matrix& B, const Matrix& S, const Matrix& R,
                      const Matrix& K_eval, double sigma_w) {
  const ValueFunction vf = policy_value(A, B, S, R, K_eval, sigma_w);
  const Index n = A.rows();
  const Index d = B.cols();
  Matrix AB(n, n + d);
  AB << A, B;
  QFunction qf;
  qf.Q = AB.transpose() * vf.V * AB;
  qf.Q.topLeftCorner(n, n) += S;
  qf.Q.bottomRightCorner(d, d) += R;
  qf.Q = 0.5 * (qf.Q + qf.Q.transpose()).eval();
  const Matrix lifted = lift(K_eval);
  qf.lambda = sigma_w * sigma_w * (lifted.transpose() * qf.Q * lifted).trace();
  qf.q = svec(qf.Q);
  return qf;
}

double avg_cost(const Matrix& A, const Matrix& B, const Matrix& S, const Matrix& R,
                const Matrix& K, const Matrix& W) {
  check_system_dims(A, B, S, R);
  check_gain(B, K);
  const Matrix V = dlyap(A + B * K, S + K.transpose() * R * K);
  return (symmetrized(W) * V).trace();
}

Matrix steady_covariance(const Matrix& A, const Matrix& B, const Matrix& K_play, double sigma_w,
                         double sigma_eta) {
  check_gain(B, K_play);
  const Index n = A.rows();
  const Matrix M = sigma_w * sigma_w * Matrix::Identity(n, n) +
                   sigma_eta * sigma_eta * B * B.transpose();
  return dlyap((A + B * K_play).transpose(), M);
}

}  // namespace lspi
