#pragma once

// Discrete Lyapunov and Riccati solvers, closed-form value and Q-functions.

#include "lspi/symmat.hpp"

namespace lspi {

/// Relative value function x^T V x of a stabilizing gain, with average-cost offset.
struct ValueFunction {
  Matrix V;
  double lambda = 0.0;
};

/// Relative Q-function [x;u]^T Q [x;u] with offset lambda; q caches svec(Q).
struct QFunction {
  Matrix Q;
  double lambda = 0.0;
  SVec q;
};

struct DareSolution {
  Matrix P_star;
  Matrix K_star;
  double J_star = 0.0;
  int iterations = 0;
};

/// Solves P = L^T P L + M. Throws InstabilityError when rho(L) >= 1 - 1e-9.
Matrix dlyap(const Eigen::Ref<const Matrix>& L, const Eigen::Ref<const Matrix>& M);

/// The Riccati map F(V) = S + A^T V A - A^T V B (R + B^T V B)^{-1} B^T V A.
Matrix riccati_map(const Matrix& A, const Matrix& B, const Matrix& S, const Matrix& R,
                   const Matrix& V);

/// Gain -(R + B^T V B)^{-1} B^T V A.
Matrix riccati_gain(const Matrix& A, const Matrix& B, const Matrix& R, const Matrix& V);

inline constexpr int kDareMaxIterations = 100000;

/// Iterates the Riccati map from V0 = S until the normalized step falls below
/// 1e-12. J_star = sigma_w^2 Tr(P_star). Throws NonStabilizableError on
/// non-convergence.
DareSolution dare(const Matrix& A, const Matrix& B, const Matrix& S, const Matrix& R,
                  double sigma_w = 1.0);

ValueFunction policy_value(const Matrix& A, const Matrix& B, const Matrix& S, const Matrix& R,
                           const Matrix& K, double sigma_w);

QFunction policy_qfun(const Matrix& A, const Matrix& B, const Matrix& S, const Matrix& R,
                      const Matrix& K_eval, double sigma_w);

/// J(K; W) = Tr(W dlyap(A+BK, S + K^T R K)).
double avg_cost(const Matrix& A, const Matrix& B, const Matrix& S, const Matrix& R,
                const Matrix& K, const Matrix& W);

/// dlyap((A + B K_play)^T, sigma_w^2 I + sigma_eta^2 B B^T).
Matrix steady_covariance(const Matrix& A, const Matrix& B, const Matrix& K_play, double sigma_w,
                         double sigma_eta);

/// [I; K], the (n+d) x n lift of a d x n gain.
Matrix lift(const Matrix& K);

}  // namespace lspi
