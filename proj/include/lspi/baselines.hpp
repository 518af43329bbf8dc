#pragma once

// Comparison methods: certainty-equivalence control, REINFORCE-style policy
// gradients with two baselines, two-point derivative-free search, and the
// projected SGD driver they share.

#include "lspi/adaptive.hpp"
#include "lspi/sim.hpp"

#include <functional>
#include <optional>
#include <span>
#include <string>
#include <variant>
#include <vector>

namespace lspi {

struct ModelEstimate {
  Matrix A_hat;
  Matrix B_hat;
  /// 1/2 sum ||x_{t+1} - A_hat x_t - B_hat u_t||^2.
  double residual = 0.0;
};

/// Least-squares fit of (A, B) from every transition of every trajectory.
/// Throws IdentifiabilityError when the regressors [x; u] are rank deficient.
ModelEstimate nominal_fit(std::span<const Trajectory> trajs);

/// Streaming normal equations for the same least-squares problem.
class NominalStatistics {
 public:
  NominalStatistics(Index n, Index d);
  void add(const Trajectory& traj);
  ModelEstimate fit() const;
  Index count() const { return count_; }

 private:
  Index n_;
  Index d_;
  Index count_ = 0;
  Matrix zz_;  // sum z z^T, z = [x; u]
  Matrix zy_;  // sum z x'^T
  double yy_ = 0.0;
};

/// Gain of the Riccati solution for the estimated model.
Matrix nominal_controller(const ModelEstimate& est, const Matrix& S, const Matrix& R);

struct GradientEstimate {
  Matrix g;
  /// ||g||_F^2.
  double variance_proxy = 0.0;
};

/// Constant baseline b.
struct SimpleBaseline {
  double b = 0.0;
};
/// State baseline b(x) = x^T V x.
struct ValueFunctionBaseline {
  Matrix V;
};
using PgBaseline = std::variant<SimpleBaseline, ValueFunctionBaseline>;

/// g = 1/T sum_t (c(tau_{t:T}) - b_t) / sigma_eta^2 eta_t x_t^T.
GradientEstimate pg_gradient(const Trajectory& traj, const PgBaseline& baseline);

struct DfoOptions {
  /// Give both antithetic rollouts the same process-noise stream.
  bool shared_noise = true;
  /// Replaces the random direction when set (test hook).
  std::optional<Matrix> xi;
};

/// Two-point estimate (mean cost(K + s xi) - mean cost(K - s xi)) / (2 s) xi
/// from two length-T rollouts without input noise. Consumes 2T steps.
GradientEstimate dfo_gradient(const Plant& plant, const Matrix& K, double sigma, Index T,
                              const StreamFactory& streams, std::uint64_t phase,
                              const DfoOptions& opts = {});

/// Pi_radius(K - step g), radial projection onto the Frobenius ball.
Matrix projected_sgd_step(const Matrix& K, const Matrix& g, double step, double radius);

struct GainSnapshot {
  Index step = 0;
  Matrix K;
};

/// Gains after each SGD iteration, indexed by simulated steps consumed.
struct SgdTrace {
  std::vector<GainSnapshot> snapshots;
  std::optional<AdaptiveFailure> failure;
};

enum class PgBaselineKind { kSimple, kValueFunction };

struct SgdConfig {
  double sigma_eta = 1.0;
  double step = 1e-5;
  Index horizon = 100;
  double radius = 1.0;
  /// Total simulated-step budget.
  Index budget = 1000000;
};

/// V(K) provider for the value-function baseline (needs the true dynamics).
using ValueOracle = std::function<Matrix(const Matrix&)>;

SgdTrace pg_sgd(const Plant& plant, const Matrix& K0, const SgdConfig& cfg, PgBaselineKind kind,
                const StreamFactory& streams, const ValueOracle& value_oracle = {});

SgdTrace dfo_sgd(const Plant& plant, const Matrix& K0, const SgdConfig& cfg,
                 const StreamFactory& streams, const DfoOptions& opts = {});

/// Certainty-equivalent epoch estimator: refits (A, B) on its data window
/// after each epoch and plays the Riccati gain of the estimate. Keeps the
/// current gain while the estimate is not identifiable or not stabilizable.
class NominalEstimator : public GainEstimator {
 public:
  NominalEstimator(Index n, Index d, CostModel cost, DataWindow window);
  void observe_warm_start(const Trajectory& traj) override;
  Matrix next_gain(EpochContext& ctx) override;

 private:
  CostModel cost_;
  DataWindow window_;
  NominalStatistics stats_;
  Index n_;
  Index d_;
};

}  // namespace lspi
