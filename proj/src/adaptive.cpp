#include "lspi/adaptive.hpp"

#include "lspi/errors.hpp"
#include "lspi/policy_iter.hpp"

#include <cmath>
#include <ostream>

namespace lspi {

Index EpochSchedule::epoch_length(int epoch) const {
  if (const auto* dbl = std::get_if<DoublingEpochs>(&kind)) {
    return dbl->T_mult * (Index{1} << epoch);
  }
  return std::get<LinearEpochs>(kind).base * static_cast<Index>(epoch + 1);
}

double EpochSchedule::exploration_variance(int epoch) const {
  if (const auto* exp = std::get_if<ExplicitVariances>(&exploration)) {
    const auto i = std::min<std::size_t>(static_cast<std::size_t>(epoch), exp->values.size() - 1);
    return exp->values[i];
  }
  const auto& decay = std::get<PowerDecay>(exploration);
  const double scale = std::holds_alternative<DoublingEpochs>(kind)
                           ? std::ldexp(1.0, epoch)
                           : static_cast<double>(epoch + 1);
  return decay.sigma0_sq * std::pow(1.0 / scale, decay.exponent);
}

int EpochSchedule::inner_iterations(int epoch, Index steps_elapsed) const {
  if (const auto* lin = std::get_if<LinearEpochIters>(&inner_iters)) {
    return lin->base + lin->slope * epoch;
  }
  const auto& thr = std::get<StepThresholdIters>(inner_iters);
  int n = thr.base;
  for (Index t : thr.thresholds) n += steps_elapsed >= t ? 1 : 0;
  return n;
}

void EpochSchedule::validate() const {
  if (const auto* dbl = std::get_if<DoublingEpochs>(&kind)) {
    if (dbl->T_mult < 1) throw ParameterError("schedule: T_mult must be >= 1");
  } else if (std::get<LinearEpochs>(kind).base < 1) {
    throw ParameterError("schedule: linear base must be >= 1");
  }
  if (const auto* exp = std::get_if<ExplicitVariances>(&exploration)) {
    if (exp->values.empty()) throw ParameterError("schedule: explicit variances are empty");
    for (double v : exp->values) {
      if (!(v >= 0.0)) throw ParameterError("schedule: exploration variance must be >= 0");
    }
  } else {
    const auto& decay = std::get<PowerDecay>(exploration);
    if (!(decay.sigma0_sq >= 0.0)) throw ParameterError("schedule: sigma0_sq must be >= 0");
  }
  if (const auto* lin = std::get_if<LinearEpochIters>(&inner_iters)) {
    if (lin->base < 1 || lin->slope < 0) throw ParameterError("schedule: invalid linear iteration rule");
  } else if (std::get<StepThresholdIters>(inner_iters).base < 1) {
    throw ParameterError("schedule: inner iteration base must be >= 1");
  }
}

std::vector<double> regret_series(const std::vector<double>& costs, double J_star) {
  std::vector<double> out(costs.size());
  long double acc = 0.0L;
  for (std::size_t t = 0; t < costs.size(); ++t) {
    acc += costs[t];
    out[t] = static_cast<double>(acc - static_cast<long double>(t + 1) * J_star);
  }
  return out;
}

LspiEstimator::LspiEstimator(Index n, Index d, double sigma_w, double mu, InnerSolver solver,
                             DataWindow window)
    : n_(n), d_(d), sigma_w_(sigma_w), mu_(mu), solver_(solver), window_(window), cumulative_(n, d) {
  if (!(mu > 0.0)) throw ParameterError("LspiEstimator: mu must be positive");
}

void LspiEstimator::observe_warm_start(const Trajectory& traj) {
  if (window_ == DataWindow::kCumulative) cumulative_.add(traj);
}

Matrix LspiEstimator::next_gain(EpochContext& ctx) {
  Matrix K = ctx.gain();
  const int N = ctx.inner_iterations();
  if (solver_ == InnerSolver::kLspiV2) {
    for (int j = 0; j < N; ++j) {
      LstdqStatistics stats(n_, d_);
      stats.add(ctx.collect(ctx.epoch_length()));
      K = lspi_improve(stats.estimate(K, sigma_w_), n_, mu_);
    }
    return K;
  }
  const Trajectory traj = ctx.collect(ctx.epoch_length());
  LstdqStatistics local(n_, d_);
  LstdqStatistics* stats = &local;
  if (window_ == DataWindow::kCumulative) {
    cumulative_.add(traj);
    stats = &cumulative_;
  } else {
    local.add(traj);
  }
  for (int j = 0; j < N; ++j) K = lspi_improve(stats->estimate(K, sigma_w_), n_, mu_);
  return K;
}

Matrix FixedGainEstimator::next_gain(EpochContext& ctx) {
  ctx.collect(ctx.epoch_length());
  return K_;
}

Matrix CallbackEstimator::next_gain(EpochContext& ctx) {
  const Trajectory traj = ctx.collect(ctx.epoch_length());
  return cb_(ctx.gain(), traj);
}

namespace {

struct BudgetExhausted {};

class Runner final : public EpochContext {
 public:
  Runner(const Plant& plant, const AdaptiveConfig& cfg, const StreamFactory& streams,
         RegretTrace& trace)
      : plant_(plant), cfg_(cfg), streams_(streams), trace_(trace) {}

  Trajectory collect(Index T) override {
    if (cfg_.max_steps) {
      const Index remaining = *cfg_.max_steps - adaptive_steps_;
      if (remaining <= 0) throw BudgetExhausted{};
      T = std::min(T, remaining);
    }
    const std::uint64_t phase = (static_cast<std::uint64_t>(epoch_ + 1) << 20) | rollouts_in_epoch_++;
    RngStream rng = streams_.make(phase, StreamPurpose::kRollout);
    Trajectory traj = play(T, sigma_eta_, rng);
    adaptive_steps_ += traj.length();
    return traj;
  }

  Trajectory play(Index T, double sigma_eta, RngStream& rng) {
    InitialState start = Fresh{};
    if (state_) start = Continue{*state_};
    Trajectory traj;
    try {
      traj = plant_.rollout(gain_, sigma_eta, T, start, rng);
    } catch (const DivergenceError& e) {
      throw DivergenceError(trace_.steps() + e.step(), e.state_norm(),
                            "epoch " + std::to_string(epoch_));
    }
    state_ = traj.final_state();
    for (Index t = 0; t < traj.length(); ++t) {
      trace_.per_step_cost.push_back(traj.costs(t));
      trace_.epoch_of_step.push_back(epoch_);
      trace_.sigma_eta_of_step.push_back(sigma_eta);
    }
    return traj;
  }

  void begin_epoch(int epoch, const Matrix& K) {
    epoch_ = epoch;
    gain_ = K;
    rollouts_in_epoch_ = 0;
    length_ = cfg_.schedule.epoch_length(epoch);
    sigma_eta_ = std::sqrt(cfg_.schedule.exploration_variance(epoch));
    inner_ = cfg_.schedule.inner_iterations(epoch, adaptive_steps_);
  }

  void set_gain(const Matrix& K) { gain_ = K; }

  const Matrix& gain() const override { return gain_; }
  double sigma_eta() const override { return sigma_eta_; }
  int epoch() const override { return epoch_; }
  Index epoch_length() const override { return length_; }
  int inner_iterations() const override { return inner_; }
  Index adaptive_steps() const { return adaptive_steps_; }

 private:
  const Plant& plant_;
  const AdaptiveConfig& cfg_;
  const StreamFactory& streams_;
  RegretTrace& trace_;
  std::optional<Vector> state_;
  Matrix gain_;
  int epoch_ = -1;
  std::uint64_t rollouts_in_epoch_ = 0;
  Index length_ = 0;
  double sigma_eta_ = 0.0;
  int inner_ = 0;
  Index adaptive_steps_ = 0;
};

}  // namespace

RegretTrace run_adaptive(const Plant& plant, const Matrix& K0, const AdaptiveConfig& cfg,
                         GainEstimator& estimator, double J_star, const StreamFactory& streams,
                         const GroundTruth* truth) {
  if (K0.rows() != plant.d() || K0.cols() != plant.n()) {
    throw DimensionError("run_adaptive: K0 must be d x n");
  }
  if (cfg.epochs < 0) throw ParameterError("run_adaptive: epochs must be >= 0");
  cfg.schedule.validate();

  RegretTrace trace;
  trace.gains.push_back(K0);
  trace.gain_steps.push_back(0);
  Runner runner(plant, cfg, streams, trace);
  runner.set_gain(K0);
  Index warm_steps = 0;
  try {
    if (cfg.warm_start.enabled && cfg.warm_start.steps > 0) {
      RngStream rng = streams.make(0, StreamPurpose::kWarmStart);
      const Trajectory warm = runner.play(cfg.warm_start.steps, cfg.warm_start.sigma_eta, rng);
      warm_steps = warm.length();
      estimator.observe_warm_start(warm);
      trace.gain_steps.back() = 0;
    }
    for (int i = 0; i < cfg.epochs; ++i) {
      if (cfg.max_steps && runner.adaptive_steps() >= *cfg.max_steps) break;
      runner.begin_epoch(i, trace.gains.back());
      trace.epoch_boundaries.push_back(trace.steps());
      Matrix next = estimator.next_gain(runner);
      trace.gains.push_back(std::move(next));
      trace.gain_steps.push_back(trace.steps());
    }
  } catch (const DivergenceError& e) {
    trace.failure = AdaptiveFailure{e.step(), runner.epoch(), e.what()};
  } catch (const ConditioningError& e) {
    trace.failure = AdaptiveFailure{trace.steps(), runner.epoch(), e.what()};
  } catch (const BudgetExhausted&) {
  }

  if (cfg.warm_start.enabled && !cfg.warm_start.count_toward_regret) {
    std::vector<double> tail(trace.per_step_cost.begin() + warm_steps, trace.per_step_cost.end());
    trace.cum_regret.assign(static_cast<std::size_t>(warm_steps), 0.0);
    const auto post = regret_series(tail, J_star);
    trace.cum_regret.insert(trace.cum_regret.end(), post.begin(), post.end());
  } else {
    trace.cum_regret = regret_series(trace.per_step_cost, J_star);
  }
  if (truth != nullptr) {
    for (const auto& K : trace.gains) trace.gain_rel_cost_err.push_back(truth->rel_cost_err(K));
  }
  return trace;
}

void write_regret_trace_csv(std::ostream& os, const RegretTrace& trace) {
  os << "t,cost,cum_regret,epoch,sigma_eta\n";
  const auto old_precision = os.precision(17);
  for (std::size_t t = 0; t < trace.per_step_cost.size(); ++t) {
    os << t + 1 << ',' << trace.per_step_cost[t] << ',' << trace.cum_regret[t] << ','
       << trace.epoch_of_step[t] << ',' << trace.sigma_eta_of_step[t] << '\n';
  }
  os.precision(old_precision);
}

}  // namespace lspi
