#include "lspi/policy_iter.hpp"

#include "lspi/errors.hpp"

#include <cmath>
#include <limits>
#include <ostream>

namespace lspi {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

// Scores K_t against the truth and appends to the trace. Returns false when
// K_t does not pass a stability certificate.
bool record_scored(PiTrace& trace, const GroundTruth& truth, const Matrix& K, int iteration) {
  PiIterationMetrics m;
  m.iteration = iteration;
  const Matrix closed = truth.system().A + truth.system().B * K;
  m.stable = K.allFinite() && stability_certificate(closed).has_value();
  if (m.stable) {
    ValueFunction vf = truth.value(K);
    m.rel_cost_err = (vf.lambda - truth.J_star()) / truth.J_star();
    m.delta_inf_to_star = delta_inf(vf.V, truth.optimal().P_star);
    trace.values.push_back(std::move(vf));
  } else {
    m.rel_cost_err = std::numeric_limits<double>::infinity();
    m.delta_inf_to_star = kNaN;
  }
  trace.metrics.push_back(m);
  return m.stable;
}

void check_lspi_config(const Plant& plant, const Matrix& K0, const LspiConfig& cfg) {
  if (K0.rows() != plant.d() || K0.cols() != plant.n()) throw DimensionError("LSPI: K0 must be d x n");
  if (cfg.N < 0) throw ParameterError("LSPI: N must be >= 0");
  if (cfg.T < 1) throw ParameterError("LSPI: T must be >= 1");
  if (!(cfg.mu > 0.0)) throw ParameterError("LSPI: mu must be positive");
  if (!(cfg.sigma_eta >= 0.0)) throw ParameterError("LSPI: sigma_eta must be >= 0");
}

// Common tail of one LSPI iteration: record q_err, improve, score K_{t+1}.
// Returns false when the trace must stop.
bool advance(PiTrace& trace, const LstdqEstimate& est, Index n, double mu, int t,
             const GroundTruth* truth) {
  if (truth != nullptr && t < static_cast<int>(trace.metrics.size()) && trace.metrics[t].stable) {
    trace.metrics[t].q_err = (est.q.coords - truth->qfun(trace.gains[t]).q.coords).norm();
  }
  Matrix next;
  try {
    next = lspi_improve(est, n, mu);
  } catch (const ConditioningError& e) {
    throw ConditioningError("LSPI iteration " + std::to_string(t) + ": " + e.what());
  }
  trace.gains.push_back(next);
  if (truth != nullptr && !record_scored(trace, *truth, next, t + 1)) {
    trace.failure = PiFailure{t + 1, "K_" + std::to_string(t + 1) + " is not stabilizing"};
    return false;
  }
  return true;
}

}  // namespace

Matrix greedy_improve(const Matrix& Q, Index n) {
  const Index total = Q.rows();
  if (Q.cols() != total || n <= 0 || n >= total) {
    throw DimensionError("greedy_improve: Q must be (n+d) x (n+d) with d >= 1");
  }
  const Index d = total - n;
  const Matrix Q22 = Q.bottomRightCorner(d, d);
  const Matrix Q12 = Q.topRightCorner(n, d);
  const Eigen::FullPivLU<Matrix> lu(Q22);
  if (!lu.isInvertible() || lu.rcond() < 1e-14) {
    throw ConditioningError("greedy_improve: Q22 is singular");
  }
  return -lu.solve(Q12.transpose());
}

PiTrace exact_pi(const Matrix& A, const Matrix& B, const Matrix& S, const Matrix& R,
                 const Matrix& K0, int N, double sigma_w) {
  if (N < 0) throw ParameterError("exact_pi: N must be >= 0");
  if (!is_stable(A + B * K0)) throw InstabilityError("exact_pi: K0 is not stabilizing (t = 0)");
  const DareSolution opt = dare(A, B, S, R, sigma_w);

  PiTrace trace;
  auto push = [&](const Matrix& K, int t) {
    const Matrix closed = A + B * K;
    PiIterationMetrics m;
    m.iteration = t;
    m.stable = stability_certificate(closed).has_value();
    if (!m.stable) {
      m.rel_cost_err = std::numeric_limits<double>::infinity();
      m.delta_inf_to_star = kNaN;
      trace.gains.push_back(K);
      trace.metrics.push_back(m);
      trace.failure = PiFailure{t, "K_" + std::to_string(t) + " is not stabilizing"};
      return false;
    }
    ValueFunction vf = policy_value(A, B, S, R, K, sigma_w);
    m.rel_cost_err = (vf.lambda - opt.J_star) / opt.J_star;
    m.delta_inf_to_star = delta_inf(vf.V, opt.P_star);
    trace.gains.push_back(K);
    trace.values.push_back(std::move(vf));
    trace.metrics.push_back(m);
    return true;
  };

  if (!push(K0, 0)) return trace;
  for (int t = 0; t < N; ++t) {
    const Matrix next = riccati_gain(A, B, R, trace.values.back().V);
    if (!push(next, t + 1)) break;
  }
  return trace;
}

Matrix value_iteration(const Matrix& A, const Matrix& B, const Matrix& S, const Matrix& R,
                       const Matrix& V0, int N, double tol) {
  Matrix V = symmetrized(V0);
  if (lambda_min(V) < -1e-12 * std::max(1.0, V.cwiseAbs().maxCoeff())) {
    throw PositivityError("value_iteration: V0 must be PSD");
  }
  const Matrix Ss = symmetrized(S);
  const Matrix Rs = symmetrized(R);
  for (int t = 0; t < N; ++t) {
    Matrix next = riccati_map(A, B, Ss, Rs, V);
    const bool both_pd = lambda_min(V) > 0.0;
    const double gap = both_pd ? delta_inf(V, next) : std::numeric_limits<double>::infinity();
    V = std::move(next);
    if (gap < tol) break;
  }
  return V;
}

double default_mu(const CostModel& cost) {
  return std::min(lambda_min(cost.S), lambda_min(cost.R));
}

Matrix lspi_improve(const LstdqEstimate& est, Index n, double mu) {
  return greedy_improve(proj_psd_floor(smat(est.q), mu), n);
}

PiTrace lspi_v1(const Plant& plant, const Matrix& K0, const LspiConfig& cfg,
                const StreamFactory& streams, const GroundTruth* truth) {
  check_lspi_config(plant, K0, cfg);
  PiTrace trace;
  trace.gains.push_back(K0);
  if (truth != nullptr && !record_scored(trace, *truth, K0, 0)) {
    trace.failure = PiFailure{0, "K0 is not stabilizing"};
    return trace;
  }
  if (cfg.N == 0) return trace;

  LstdqStatistics stats(plant.n(), plant.d());
  try {
    RngStream rng = streams.make(0, StreamPurpose::kRollout);
    stats.add(plant.rollout(K0, cfg.sigma_eta, cfg.T, Fresh{}, rng));
  } catch (const DivergenceError& e) {
    trace.failure = PiFailure{0, e.what()};
    return trace;
  }
  for (int t = 0; t < cfg.N; ++t) {
    const LstdqEstimate est = stats.estimate(trace.gains.back(), plant.sigma_w());
    if (!advance(trace, est, plant.n(), cfg.mu, t, truth)) break;
  }
  return trace;
}

PiTrace lspi_v2(const Plant& plant, const Matrix& K0, const LspiConfig& cfg,
                const StreamFactory& streams, const GroundTruth* truth) {
  check_lspi_config(plant, K0, cfg);
  if (cfg.oracle_features && truth == nullptr) {
    throw ParameterError("LSPIv2: oracle features require the ground truth");
  }
  PiTrace trace;
  trace.gains.push_back(K0);
  if (truth != nullptr && !record_scored(trace, *truth, K0, 0)) {
    trace.failure = PiFailure{0, "K0 is not stabilizing"};
    return trace;
  }
  InitialState start = Fresh{};
  for (int t = 0; t < cfg.N; ++t) {
    Trajectory traj;
    try {
      RngStream rng = streams.make(static_cast<std::uint64_t>(t), StreamPurpose::kRollout);
      traj = plant.rollout(K0, cfg.sigma_eta, cfg.T, start, rng);
    } catch (const DivergenceError& e) {
      trace.failure = PiFailure{t, e.what()};
      break;
    }
    if (!cfg.reset_each_iteration) start = Continue{traj.final_state()};
    const Matrix& K_eval = trace.gains.back();
    const LstdqFeatures feat = cfg.oracle_features
                                   ? oracle_features(traj, K_eval, truth->system())
                                   : build_features(traj, K_eval, plant.sigma_w());
    if (!advance(trace, lstdq(feat), plant.n(), cfg.mu, t, truth)) break;
  }
  return trace;
}

void write_pi_trace_csv(std::ostream& os, const PiTrace& trace) {
  os << "iteration,q_err,rel_cost_err,delta_inf,stable\n";
  const auto old_precision = os.precision(17);
  for (const auto& m : trace.metrics) {
    os << m.iteration << ',';
    if (m.q_err) os << *m.q_err;
    os << ',' << m.rel_cost_err << ',' << m.delta_inf_to_star << ',' << (m.stable ? 1 : 0) << '\n';
  }
  os.precision(old_precision);
}

}  // namespace lspi
