#include "lspi/baselines.hpp"

#include "lspi/errors.hpp"
#include "lspi/lyapunov.hpp"

#include <cmath>

namespace lspi {

namespace {

void check_regressor_rank(const Matrix& gram, Index count, Index p) {
  if (count < p) {
    throw IdentifiabilityError("nominal fit: " + std::to_string(count) +
                               " transitions cannot identify " + std::to_string(p) + " regressors");
  }
  Eigen::SelfAdjointEigenSolver<Matrix> es(gram, Eigen::EigenvaluesOnly);
  const double hi = es.eigenvalues().maxCoeff();
  const double lo = es.eigenvalues().minCoeff();
  if (!(hi > 0.0) || lo <= 1e-12 * hi) {
    throw IdentifiabilityError("nominal fit: regressors [x; u] are rank deficient");
  }
}

}  // namespace

ModelEstimate nominal_fit(std::span<const Trajectory> trajs) {
  if (trajs.empty()) throw IdentifiabilityError("nominal fit: no data");
  const Index n = trajs.front().states.rows();
  const Index d = trajs.front().inputs.rows();
  Index total = 0;
  for (const auto& tr : trajs) {
    if (tr.states.rows() != n || tr.inputs.rows() != d) {
      throw DimensionError("nominal fit: trajectories have different dimensions");
    }
    total += tr.length();
  }
  if (total < n + d) {
    throw IdentifiabilityError("nominal fit: " + std::to_string(total) +
                               " transitions cannot identify " + std::to_string(n + d) +
                               " regressors");
  }
  Matrix Z(total, n + d);
  Matrix Y(total, n);
  Index row = 0;
  for (const auto& tr : trajs) {
    const Index T = tr.length();
    Z.block(row, 0, T, n) = tr.states.leftCols(T).transpose();
    Z.block(row, n, T, d) = tr.inputs.transpose();
    Y.middleRows(row, T) = tr.states.rightCols(T).transpose();
    row += T;
  }
  Eigen::ColPivHouseholderQR<Matrix> qr(Z);
  qr.setThreshold(1e-12);
  if (qr.rank() < n + d) throw IdentifiabilityError("nominal fit: regressors [x; u] are rank deficient");
  const Matrix theta = qr.solve(Y);  // (n+d) x n, [A B]^T
  ModelEstimate est;
  est.A_hat = theta.topRows(n).transpose();
  est.B_hat = theta.bottomRows(d).transpose();
  est.residual = 0.5 * (Y - Z * theta).squaredNorm();
  return est;
}

NominalStatistics::NominalStatistics(Index n, Index d)
    : n_(n), d_(d), zz_(Matrix::Zero(n + d, n + d)), zy_(Matrix::Zero(n + d, n)) {}

void NominalStatistics::add(const Trajectory& traj) {
  const Index T = traj.length();
  Matrix Z(n_ + d_, T);
  Z.topRows(n_) = traj.states.leftCols(T);
  Z.bottomRows(d_) = traj.inputs;
  const auto Y = traj.states.rightCols(T);
  zz_.noalias() += Z * Z.transpose();
  zy_.noalias() += Z * Y.transpose();
  yy_ += Y.squaredNorm();
  count_ += T;
}

ModelEstimate NominalStatistics::fit() const {
  check_regressor_rank(zz_, count_, n_ + d_);
  const Matrix theta = zz_.ldlt().solve(zy_);
  ModelEstimate est;
  est.A_hat = theta.topRows(n_).transpose();
  est.B_hat = theta.bottomRows(d_).transpose();
  est.residual = 0.5 * std::max(0.0, yy_ - 2.0 * (theta.transpose() * zy_).trace() +
                                         (theta.transpose() * zz_ * theta).trace());
  return est;
}

Matrix nominal_controller(const ModelEstimate& est, const Matrix& S, const Matrix& R) {
  return dare(est.A_hat, est.B_hat, S, R).K_star;
}

GradientEstimate pg_gradient(const Trajectory& traj, const PgBaseline& baseline) {
  if (!(traj.sigma_eta > 0.0)) {
    throw ParameterError("pg_gradient: exploration noise sigma_eta must be positive");
  }
  const Index T = traj.length();
  const Index n = traj.states.rows();
  const Index d = traj.inputs.rows();
  const double inv_var = 1.0 / (traj.sigma_eta * traj.sigma_eta);
  Matrix g = Matrix::Zero(d, n);
  long double tail = 0.0L;
  for (Index t = T - 1; t >= 0; --t) {
    tail += traj.costs(t);
    const auto x = traj.states.col(t);
    double b = 0.0;
    if (const auto* simple = std::get_if<SimpleBaseline>(&baseline)) {
      b = simple->b;
    } else {
      b = x.dot(std::get<ValueFunctionBaseline>(baseline).V * x);
    }
    const double weight = (static_cast<double>(tail) - b) * inv_var;
    g.noalias() += weight * traj.noises_eta.col(t) * x.transpose();
  }
  g /= static_cast<double>(T);
  return GradientEstimate{g, g.squaredNorm()};
}

GradientEstimate dfo_gradient(const Plant& plant, const Matrix& K, double sigma, Index T,
                              const StreamFactory& streams, std::uint64_t phase,
                              const DfoOptions& opts) {
  if (!(sigma > 0.0)) throw ParameterError("dfo_gradient: sigma must be positive");
  Matrix xi;
  if (opts.xi) {
    xi = *opts.xi;
    if (xi.rows() != K.rows() || xi.cols() != K.cols()) throw DimensionError("dfo_gradient: xi must match K");
  } else {
    RngStream rng = streams.make(phase, StreamPurpose::kPerturbation);
    xi.resize(K.rows(), K.cols());
    for (Index j = 0; j < xi.cols(); ++j) {
      for (Index i = 0; i < xi.rows(); ++i) xi(i, j) = rng.normal();
    }
  }
  auto mean_cost = [&](double sign, StreamPurpose purpose) {
    RngStream rng = streams.make(phase, purpose);
    try {
      const Trajectory tr = plant.rollout(K + sign * sigma * xi, 0.0, T, Fresh{}, rng);
      return trajectory_cost(tr).cumulative / static_cast<double>(T);
    } catch (const DivergenceError& e) {
      throw DivergenceError(e.step(), e.state_norm(),
                            sign > 0 ? "dfo rollout at K + sigma xi" : "dfo rollout at K - sigma xi");
    }
  };
  const double plus = mean_cost(+1.0, opts.shared_noise ? StreamPurpose::kRollout : StreamPurpose::kPlus);
  const double minus = mean_cost(-1.0, opts.shared_noise ? StreamPurpose::kRollout : StreamPurpose::kMinus);
  Matrix g = (plus - minus) / (2.0 * sigma) * xi;
  return GradientEstimate{g, g.squaredNorm()};
}

Matrix projected_sgd_step(const Matrix& K, const Matrix& g, double step, double radius) {
  if (!(step > 0.0) || !(radius > 0.0)) {
    throw ParameterError("projected_sgd_step: step and radius must be positive");
  }
  Matrix next = K - step * g;
  const double norm = next.norm();
  if (norm > radius) next *= radius / norm;
  return next;
}

namespace {

void check_sgd(const Plant& plant, const Matrix& K0, const SgdConfig& cfg) {
  if (K0.rows() != plant.d() || K0.cols() != plant.n()) throw DimensionError("SGD: K0 must be d x n");
  if (cfg.horizon < 1) throw ParameterError("SGD: horizon must be >= 1");
  if (cfg.budget < 0) throw ParameterError("SGD: budget must be >= 0");
  if (!(cfg.step > 0.0) || !(cfg.radius > 0.0) || !(cfg.sigma_eta > 0.0)) {
    throw ParameterError("SGD: step, radius and sigma_eta must be positive");
  }
}

}  // namespace

SgdTrace pg_sgd(const Plant& plant, const Matrix& K0, const SgdConfig& cfg, PgBaselineKind kind,
                const StreamFactory& streams, const ValueOracle& value_oracle) {
  check_sgd(plant, K0, cfg);
  if (kind == PgBaselineKind::kValueFunction && !value_oracle) {
    throw ParameterError("pg_sgd: value-function baseline needs a value oracle");
  }
  SgdTrace trace;
  trace.snapshots.push_back({0, K0});
  Matrix K = K0;
  double previous_avg = 0.0;
  Index used = 0;
  for (std::uint64_t it = 0; used + cfg.horizon <= cfg.budget; ++it) {
    Trajectory tr;
    try {
      RngStream rng = streams.make(it, StreamPurpose::kRollout);
      tr = plant.rollout(K, cfg.sigma_eta, cfg.horizon, Fresh{}, rng);
    } catch (const DivergenceError& e) {
      trace.failure = AdaptiveFailure{used + e.step(), static_cast<int>(it), e.what()};
      break;
    }
    used += cfg.horizon;
    PgBaseline baseline = SimpleBaseline{previous_avg};
    if (kind == PgBaselineKind::kValueFunction) {
      Matrix V;
      try {
        V = value_oracle(K);
      } catch (const InstabilityError& e) {
        trace.failure = AdaptiveFailure{used, static_cast<int>(it), e.what()};
        break;
      }
      baseline = ValueFunctionBaseline{std::move(V)};
    }
    const GradientEstimate g = pg_gradient(tr, baseline);
    previous_avg = tr.costs.mean();
    K = projected_sgd_step(K, g.g, cfg.step, cfg.radius);
    trace.snapshots.push_back({used, K});
  }
  return trace;
}

SgdTrace dfo_sgd(const Plant& plant, const Matrix& K0, const SgdConfig& cfg,
                 const StreamFactory& streams, const DfoOptions& opts) {
  check_sgd(plant, K0, cfg);
  SgdTrace trace;
  trace.snapshots.push_back({0, K0});
  Matrix K = K0;
  Index used = 0;
  for (std::uint64_t it = 0; used + 2 * cfg.horizon <= cfg.budget; ++it) {
    GradientEstimate g;
    try {
      g = dfo_gradient(plant, K, cfg.sigma_eta, cfg.horizon, streams, it, opts);
    } catch (const DivergenceError& e) {
      trace.failure = AdaptiveFailure{used, static_cast<int>(it), e.what()};
      break;
    }
    used += 2 * cfg.horizon;
    K = projected_sgd_step(K, g.g, cfg.step, cfg.radius);
    trace.snapshots.push_back({used, K});
  }
  return trace;
}

NominalEstimator::NominalEstimator(Index n, Index d, CostModel cost, DataWindow window)
    : cost_(std::move(cost)), window_(window), stats_(n, d), n_(n), d_(d) {}

void NominalEstimator::observe_warm_start(const Trajectory& traj) {
  if (window_ == DataWindow::kCumulative) stats_.add(traj);
}

Matrix NominalEstimator::next_gain(EpochContext& ctx) {
  const Trajectory traj = ctx.collect(ctx.epoch_length());
  if (window_ == DataWindow::kEpoch) stats_ = NominalStatistics(n_, d_);
  stats_.add(traj);
  try {
    return nominal_controller(stats_.fit(), cost_.S, cost_.R);
  } catch (const IdentifiabilityError&) {
    return ctx.gain();
  } catch (const NonStabilizableError&) {
    return ctx.gain();
  }
}

}  // namespace lspi
