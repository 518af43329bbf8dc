#pragma once

// Exact policy iteration and value iteration on known dynamics, and the
// sample-based LSPI variants (data collected once, or fresh per iteration).

#include "lspi/ground_truth.hpp"
#include "lspi/lstdq.hpp"
#include "lspi/lyapunov.hpp"
#include "lspi/sim.hpp"

#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace lspi {

struct PiIterationMetrics {
  int iteration = 0;
  /// delta_inf(V_t, V*); NaN when unavailable.
  double delta_inf_to_star = 0.0;
  double rel_cost_err = 0.0;
  /// ||q_hat_t - q_t|| for sample-based iterations.
  std::optional<double> q_err;
  bool stable = true;
};

struct PiFailure {
  int iteration = 0;
  std::string reason;
};

/// gains[t] = K_t. values[t] and metrics[t] describe K_t when the true
/// system was available to score it.
struct PiTrace {
  std::vector<Matrix> gains;
  std::vector<ValueFunction> values;
  std::vector<PiIterationMetrics> metrics;
  std::optional<PiFailure> failure;

  const Matrix& final_gain() const { return gains.back(); }
};

/// G(Q) = -Q22^{-1} Q12^T for a Q of side n + d. Throws ConditioningError
/// when Q22 is singular.
Matrix greedy_improve(const Matrix& Q, Index n);
inline Matrix greedy_improve(const QFunction& qf, Index n) { return greedy_improve(qf.Q, n); }

PiTrace exact_pi(const Matrix& A, const Matrix& B, const Matrix& S, const Matrix& R,
                 const Matrix& K0, int N, double sigma_w = 1.0);

/// Recurses the Riccati map from V0 for at most N steps, stopping early once
/// delta_inf between successive iterates drops below tol.
Matrix value_iteration(const Matrix& A, const Matrix& B, const Matrix& S, const Matrix& R,
                       const Matrix& V0, int N, double tol);

struct LspiConfig {
  int N = 3;
  Index T = 1000;
  double sigma_eta = 1.0;
  double mu = 1.0;
  /// LSPIv2 only: draw a fresh initial state for every iteration.
  bool reset_each_iteration = false;
  /// LSPIv2 only: replace successor features by their exact conditional
  /// expectations. Requires the ground truth.
  bool oracle_features = false;
};

/// mu = min(lambda_min(S), lambda_min(R)).
double default_mu(const CostModel& cost);

/// One LSTD-Q evaluation followed by Proj_mu and greedy improvement.
Matrix lspi_improve(const LstdqEstimate& est, Index n, double mu);

/// LSPIv1: one length-T rollout under K0, reused for all N iterations.
PiTrace lspi_v1(const Plant& plant, const Matrix& K0, const LspiConfig& cfg,
                const StreamFactory& streams, const GroundTruth* truth = nullptr);

/// LSPIv2: a fresh length-T rollout under K0 before every iteration; the
/// state carries over between rollouts unless reset_each_iteration is set.
PiTrace lspi_v2(const Plant& plant, const Matrix& K0, const LspiConfig& cfg,
                const StreamFactory& streams, const GroundTruth* truth = nullptr);

/// CSV with columns iteration, q_err, rel_cost_err, delta_inf, stable.
void write_pi_trace_csv(std::ostream& os, const PiTrace& trace);

}  // namespace lspi
