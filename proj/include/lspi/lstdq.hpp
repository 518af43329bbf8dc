#pragma once

// Off-policy LSTD-Q estimation of LQR Q-functions.

#include "lspi/sim.hpp"
#include "lspi/symmat.hpp"

namespace lspi {

/// Row t of `phi` is svec([x_t;u_t][x_t;u_t]^T); row t of `psi_plus` is the
/// feature of the successor under the evaluated gain, svec([x';Kx'][x';Kx']^T)
/// with x' = x_{t+1}. `f` is svec(sigma_w^2 [I;K][I;K]^T).
struct LstdqFeatures {
  Matrix phi;
  Matrix psi_plus;
  Vector f;
  Vector costs;

  Index rows() const { return phi.rows(); }
  Index dim() const { return phi.cols(); }
};

struct LstdqEstimate {
  SVec q;
  /// Numerical rank of the p x p design matrix.
  Index rank = 0;
  /// Set when the design matrix is rank deficient beyond the pinv cutoff.
  bool rank_deficient = false;
};

/// svec(z z^T) without forming the outer product.
Vector outer_svec(const Eigen::Ref<const Vector>& z);

LstdqFeatures build_features(const Trajectory& traj, const Matrix& K_eval, double sigma_w);

/// Same as build_features but with the successor features replaced by their
/// conditional expectations given (x_t, u_t) under the true system.
LstdqFeatures oracle_features(const Trajectory& traj, const Matrix& K_eval,
                              const LinearSystem& sys);

/// q_hat = (sum phi_t (phi_t - psi_{t+1} + f)^T)^+ sum phi_t c_t.
LstdqEstimate lstdq(const LstdqFeatures& features);

/// Minimum-norm least-squares solve of `design` q = rhs through an SVD
/// pseudo-inverse with cutoff max(rows, cols) * eps * sigma_max.
LstdqEstimate pinv_solve(const Matrix& design, const Vector& rhs);

/// Sufficient statistics of a batch of transitions that do not depend on the
/// evaluated gain. Lets one dataset be re-evaluated for many gains:
///   sum phi_t psi_{t+1}^T = H C(K)^T,  C(K) = congruence_operator([I; K]).
class LstdqStatistics {
 public:
  LstdqStatistics(Index n, Index d);

  void add(const Trajectory& traj);

  /// LSTD-Q estimate for K_eval from everything added so far.
  LstdqEstimate estimate(const Matrix& K_eval, double sigma_w) const;

  Index count() const { return count_; }
  Index n() const { return n_; }
  Index d() const { return d_; }

 private:
  using LMatrix = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  using LVector = Eigen::Matrix<long double, Eigen::Dynamic, 1>;

  Index n_;
  Index d_;
  Index count_ = 0;
  LMatrix gram_;       // sum phi phi^T
  LMatrix cross_;      // sum phi svec(x' x'^T)^T
  LVector phi_sum_;    // sum phi
  LVector phi_cost_;   // sum phi c
};

struct LstdqDiagnostics {
  double sigma_min_phi = 0.0;
  double sigma_min_bellman = 0.0;
};

/// sigma_min of the stacked phi rows and of I - L (x)_s L with L = [I;K][A B].
LstdqDiagnostics lstdq_diagnostics(const LstdqFeatures& features, const Matrix& K_eval,
                                   const Matrix& A, const Matrix& B);

/// L = [I; K][A B], the closed-loop map on (x, u) pairs.
Matrix state_action_transition(const Matrix& K_eval, const Matrix& A, const Matrix& B);

}  // namespace lspi
