#pragma once

// Online adaptive control: the epoch meta-loop with decaying exploration and
// pluggable gain estimators, plus regret accounting.

#include "lspi/ground_truth.hpp"
#include "lspi/lstdq.hpp"
#include "lspi/sim.hpp"

#include <functional>
#include <iosfwd>
#include <memory>
#include <optional>
#include <string>
#include <variant>
#include <vector>

namespace lspi {

/// T_i = T_mult * 2^i.
struct DoublingEpochs {
  Index T_mult = 500;
};
/// T_i = base * (i + 1).
struct LinearEpochs {
  Index base = 10;
};

/// sigma_{eta,i}^2 = sigma0_sq * scale_i^{-exponent}, where scale_i is 2^i for
/// doubling epochs and (i + 1) for linear epochs.
struct PowerDecay {
  double sigma0_sq = 1.0;
  double exponent = 1.0 / 3.0;
};
/// Per-epoch variances given explicitly; the last entry repeats.
struct ExplicitVariances {
  std::vector<double> values;
};

/// N = base + #{thresholds <= adaptive steps elapsed}.
struct StepThresholdIters {
  int base = 3;
  std::vector<Index> thresholds{2000, 4000, 6000};
};
/// N = base + slope * i.
struct LinearEpochIters {
  int base = 1;
  int slope = 1;
};

struct EpochSchedule {
  std::variant<DoublingEpochs, LinearEpochs> kind = DoublingEpochs{};
  std::variant<PowerDecay, ExplicitVariances> exploration = PowerDecay{};
  std::variant<StepThresholdIters, LinearEpochIters> inner_iters = StepThresholdIters{};

  Index epoch_length(int epoch) const;
  double exploration_variance(int epoch) const;
  int inner_iterations(int epoch, Index steps_elapsed) const;
  void validate() const;
};

struct WarmStart {
  bool enabled = false;
  Index steps = 2000;
  double sigma_eta = 1.0;
  bool count_toward_regret = true;
};

struct AdaptiveConfig {
  EpochSchedule schedule;
  int epochs = 8;
  WarmStart warm_start;
  /// Stop once this many post-warm-start steps have been played.
  std::optional<Index> max_steps;
};

struct AdaptiveFailure {
  Index step = 0;
  int epoch = 0;
  std::string reason;
};

/// Step-indexed records cover every played step, warm start included
/// (epoch -1). cum_regret[t] = sum_{s<=t} c_s - (t+1) J*.
struct RegretTrace {
  std::vector<double> per_step_cost;
  std::vector<double> cum_regret;
  std::vector<int> epoch_of_step;
  std::vector<double> sigma_eta_of_step;
  /// Index of the first step of each epoch.
  std::vector<Index> epoch_boundaries;
  /// gains[i] = K^(i); the last entry is the gain after the final epoch.
  std::vector<Matrix> gains;
  /// Relative cost error of gains[i] when the truth was available.
  std::vector<double> gain_rel_cost_err;
  /// Step count at which gains[i] started to be played.
  std::vector<Index> gain_steps;
  std::optional<AdaptiveFailure> failure;

  Index steps() const { return static_cast<Index>(per_step_cost.size()); }
};

/// prefix_sum(costs)[t] - (t + 1) J*.
std::vector<double> regret_series(const std::vector<double>& costs, double J_star);

/// Handle passed to an estimator during epoch i. `collect` rolls the plant
/// forward under the current gain with the epoch's exploration and charges
/// the cost to the regret trace.
class EpochContext {
 public:
  virtual ~EpochContext() = default;
  virtual Trajectory collect(Index T) = 0;
  virtual const Matrix& gain() const = 0;
  virtual double sigma_eta() const = 0;
  virtual int epoch() const = 0;
  virtual Index epoch_length() const = 0;
  virtual int inner_iterations() const = 0;
};

/// The EstimateK step of the meta-loop.
class GainEstimator {
 public:
  virtual ~GainEstimator() = default;
  /// Data collected before epoch 0.
  virtual void observe_warm_start(const Trajectory& traj) { (void)traj; }
  virtual Matrix next_gain(EpochContext& ctx) = 0;
};

enum class InnerSolver { kLspiV1, kLspiV2 };
enum class DataWindow { kEpoch, kCumulative };

/// LSPI as the epoch estimator. v2 runs N LSTD-Q iterations on N fresh
/// length-T_i rollouts; v1 rolls T_i steps once and iterates on the window.
class LspiEstimator : public GainEstimator {
 public:
  LspiEstimator(Index n, Index d, double sigma_w, double mu, InnerSolver solver,
                DataWindow window);
  void observe_warm_start(const Trajectory& traj) override;
  Matrix next_gain(EpochContext& ctx) override;

 private:
  Index n_;
  Index d_;
  double sigma_w_;
  double mu_;
  InnerSolver solver_;
  DataWindow window_;
  LstdqStatistics cumulative_;
};

/// Plays a fixed gain from epoch 1 onward.
class FixedGainEstimator : public GainEstimator {
 public:
  explicit FixedGainEstimator(Matrix K) : K_(std::move(K)) {}
  Matrix next_gain(EpochContext& ctx) override;

 private:
  Matrix K_;
};

/// Estimator from a plain callback (K^(i), epoch data) -> K^(i+1).
class CallbackEstimator : public GainEstimator {
 public:
  using Callback = std::function<Matrix(const Matrix&, const Trajectory&)>;
  explicit CallbackEstimator(Callback cb) : cb_(std::move(cb)) {}
  Matrix next_gain(EpochContext& ctx) override;

 private:
  Callback cb_;
};

/// Runs the epoch loop. J_star is used only for the regret bookkeeping; the
/// optional truth only scores gains. Divergence ends the run with a failure
/// record.
RegretTrace run_adaptive(const Plant& plant, const Matrix& K0, const AdaptiveConfig& cfg,
                         GainEstimator& estimator, double J_star, const StreamFactory& streams,
                         const GroundTruth* truth = nullptr);

/// CSV with columns t, cost, cum_regret, epoch, sigma_eta.
void write_regret_trace_csv(std::ostream& os, const RegretTrace& trace);

}  // namespace lspi
