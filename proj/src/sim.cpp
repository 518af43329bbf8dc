#include "lspi/sim.hpp"

#include "lspi/errors.hpp"

#include <Eigen/Eigenvalues>

#include <ostream>

namespace lspi {

void LinearSystem::validate() const {
  const Index nn = A.rows();
  if (nn == 0 || A.cols() != nn || B.rows() != nn || B.cols() == 0) {
    throw DimensionError("LinearSystem: A must be n x n and B n x d");
  }
  if (!(sigma_w >= 0.0)) throw ParameterError("LinearSystem: sigma_w must be >= 0");
  if (Sigma0.size() != 0) {
    if (Sigma0.rows() != nn || Sigma0.cols() != nn) {
      throw DimensionError("LinearSystem: Sigma0 must be n x n");
    }
    if (lambda_min(Sigma0) < -1e-12 * std::max(1.0, Sigma0.cwiseAbs().maxCoeff())) {
      throw PositivityError("LinearSystem: Sigma0 must be PSD");
    }
  }
}

RngStream::RngStream(std::uint64_t seed, StreamId id) : seed_(seed), id_(id) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(id.trial), static_cast<std::uint32_t>(id.trial >> 32),
                    static_cast<std::uint32_t>(id.phase), static_cast<std::uint32_t>(id.phase >> 32),
                    static_cast<std::uint32_t>(id.purpose)};
  engine_.seed(seq);
}

Vector RngStream::normal_vector(Index k) {
  Vector v(k);
  for (Index i = 0; i < k; ++i) v(i) = normal();
  return v;
}

namespace {

Matrix psd_sqrt(const Matrix& S) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(symmetrized(S));
  return es.eigenvectors() * es.eigenvalues().cwiseMax(0.0).cwiseSqrt().asDiagonal() *
         es.eigenvectors().transpose();
}

}  // namespace

Trajectory rollout(const LinearSystem& sys, const CostModel& cost, const Matrix& K_play,
                   double sigma_eta, Index T, const InitialState& start, RngStream& rng,
                   double divergence_threshold) {
  const Index n = sys.n();
  const Index d = sys.d();
  if (T < 1) throw ParameterError("rollout: T must be >= 1");
  if (K_play.rows() != d || K_play.cols() != n) throw DimensionError("rollout: K_play must be d x n");
  if (!(sigma_eta >= 0.0)) throw ParameterError("rollout: sigma_eta must be >= 0");

  Trajectory traj;
  traj.states.resize(n, T + 1);
  traj.inputs.resize(d, T);
  traj.noises_eta.resize(d, T);
  traj.costs.resize(T);
  traj.k_play = K_play;
  traj.sigma_eta = sigma_eta;

  if (const auto* carried = std::get_if<Continue>(&start)) {
    if (carried->x.size() != n) throw DimensionError("rollout: carried state has wrong size");
    traj.states.col(0) = carried->x;
  } else {
    const Vector z = rng.normal_vector(n);
    if (sys.Sigma0.size() == 0) {
      traj.states.col(0).setZero();
    } else {
      traj.states.col(0) = psd_sqrt(sys.Sigma0) * z;
    }
  }

  Vector eta(d);
  Vector u(d);
  Vector w(n);
  for (Index t = 0; t < T; ++t) {
    for (Index i = 0; i < d; ++i) eta(i) = sigma_eta * rng.normal();
    for (Index i = 0; i < n; ++i) w(i) = sys.sigma_w * rng.normal();
    const auto x = traj.states.col(t);
    u.noalias() = K_play * x;
    u += eta;
    traj.noises_eta.col(t) = eta;
    traj.inputs.col(t) = u;
    traj.costs(t) = cost.stage_cost(x, u);
    auto next = traj.states.col(t + 1);
    next.noalias() = sys.A * x;
    next.noalias() += sys.B * u;
    next += w;
    const double norm = next.norm();
    if (!(norm <= divergence_threshold)) throw DivergenceError(t + 1, norm, "rollout");
  }
  return traj;
}

TrajectoryCost trajectory_cost(const Trajectory& traj) {
  TrajectoryCost out;
  out.per_step = traj.costs;
  long double acc = 0.0L;
  for (Index t = 0; t < traj.costs.size(); ++t) acc += traj.costs(t);
  out.cumulative = static_cast<double>(acc);
  return out;
}

void write_trajectory_csv(std::ostream& os, const Trajectory& traj) {
  const Index n = traj.states.rows();
  const Index d = traj.inputs.rows();
  os << "t";
  for (Index i = 0; i < n; ++i) os << ",x" << i;
  for (Index i = 0; i < d; ++i) os << ",u" << i;
  os << ",cost\n";
  const auto old_precision = os.precision(17);
  for (Index t = 0; t < traj.length(); ++t) {
    os << t;
    for (Index i = 0; i < n; ++i) os << ',' << traj.states(i, t);
    for (Index i = 0; i < d; ++i) os << ',' << traj.inputs(i, t);
    os << ',' << traj.costs(t) << '\n';
  }
  os.precision(old_precision);
}

Plant::Plant(LinearSystem sys, CostModel cost, double divergence_threshold)
    : sys_(std::move(sys)), cost_(std::move(cost)), divergence_threshold_(divergence_threshold) {
  sys_.validate();
  if (cost_.S.rows() != sys_.n() || cost_.R.rows() != sys_.d()) {
    throw DimensionError("Plant: cost matrices do not match the system");
  }
}

}  // namespace lspi
