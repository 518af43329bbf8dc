#include "lspi/errors.hpp"
#include "lspi/lstdq.hpp"
#include "lspi/lyapunov.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <numeric>

using namespace lspi;
using namespace testutil;

namespace {

struct Setup {
  LinearSystem sys;
  CostModel cost;
};

Setup random_setup(std::mt19937_64& g, Index n, Index d, double sigma_w = 1.0) {
  Setup s;
  s.sys.A = rand_stable(g, n, uniform(g, 0.3, 0.9));
  s.sys.B = randn(g, n, d);
  s.sys.sigma_w = sigma_w;
  s.cost.S = rand_pd(g, n, 0.5);
  s.cost.R = rand_pd(g, d, 0.5);
  return s;
}

Setup offline_setup() {
  Setup s;
  s.sys.A.resize(3, 3);
  s.sys.A << 0.95, 0.01, 0, 0.01, 0.95, 0.01, 0, 0.01, 0.95;
  s.sys.B.resize(3, 2);
  s.sys.B << 1, 0.1, 0, 0.1, 0, 0.1;
  s.cost.S = Matrix::Identity(3, 3);
  s.cost.R = Matrix::Identity(2, 2);
  return s;
}

Trajectory simulate(const Setup& s, const Matrix& K, double sigma_eta, Index T, std::uint64_t seed) {
  RngStream rng(seed, {0, 0, StreamPurpose::kRollout});
  return rollout(s.sys, s.cost, K, sigma_eta, T, Fresh{}, rng);
}

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

TEST_CASE("feature vectors for a unit state") {
  LinearSystem sys{Matrix::Zero(1, 1), Matrix::Identity(1, 1), 0.0, {}};
  const CostModel cost{Matrix::Identity(1, 1), Matrix::Identity(1, 1)};
  RngStream rng(1, {});
  const Trajectory tr = rollout(sys, cost, Matrix::Zero(1, 1), 0.0, 1, Continue{Vector::Ones(1)}, rng);
  const LstdqFeatures f = build_features(tr, Matrix::Zero(1, 1), 0.0);
  CHECK(f.phi(0, 0) == 1.0);
  CHECK(f.phi(0, 1) == 0.0);
  CHECK(f.phi(0, 2) == 0.0);
  CHECK(f.f.norm() == 0.0);
  CHECK_THROWS_AS(build_features(tr, Matrix::Zero(2, 1), 1.0), DimensionError);
}

TEST_CASE("features reconstruct outer products") {
  std::mt19937_64 g(1);
  const Setup s = random_setup(g, 3, 2);
  const Matrix K = 0.1 * randn(g, 2, 3);
  const Trajectory tr = simulate(s, K, 1.0, 30, 5);
  const LstdqFeatures f = build_features(tr, K, s.sys.sigma_w);
  CHECK(f.rows() == 30);
  CHECK(f.dim() == 15);
  const Matrix Lk = lift(K);
  CHECK((smat(Vector(f.f)) - Lk * Lk.transpose()).norm() < 1e-12);
  for (Index t = 0; t < 30; ++t) {
    Vector z(5);
    z << tr.states.col(t), tr.inputs.col(t);
    CHECK((smat(Vector(f.phi.row(t).transpose())) - z * z.transpose()).norm() < 1e-12 * (1 + z.squaredNorm()));
    const Vector zn = Lk * tr.states.col(t + 1);
    CHECK((smat(Vector(f.psi_plus.row(t).transpose())) - zn * zn.transpose()).norm() <
          1e-12 * (1 + zn.squaredNorm()));
  }
}

TEST_CASE("oracle features: degenerate cases") {
  std::mt19937_64 g(2);
  Setup s = random_setup(g, 2, 1, 0.0);
  const Matrix K = 0.1 * randn(g, 1, 2);
  RngStream rng(3, {});
  const Trajectory tr = rollout(s.sys, s.cost, K, 1.0, 20, Continue{Vector::Ones(2)}, rng);
  const LstdqFeatures plain = build_features(tr, K, 0.0);
  const LstdqFeatures orc = oracle_features(tr, K, s.sys);
  CHECK((plain.psi_plus - orc.psi_plus).norm() < 1e-10);

  Setup z = s;
  z.sys.A.setZero();
  z.sys.B.setZero();
  z.sys.sigma_w = 1.3;
  const LstdqFeatures oz = oracle_features(tr, K, z.sys);
  for (Index t = 0; t < oz.rows(); ++t) {
    CHECK((oz.psi_plus.row(t).transpose() - oz.f).norm() < 1e-12);
  }
}

TEST_CASE("oracle features match Monte Carlo conditional expectations") {
  std::mt19937_64 g(3);
  const Setup s = random_setup(g, 2, 1, 0.8);
  const Matrix K = 0.1 * randn(g, 1, 2);
  const Trajectory tr = simulate(s, K, 1.0, 3, 4);
  const LstdqFeatures orc = oracle_features(tr, K, s.sys);
  const Matrix Lk = lift(K);
  std::normal_distribution<double> N;
  const int M = 100000;
  for (Index t = 0; t < 3; ++t) {
    const Vector mean = s.sys.A * tr.states.col(t) + s.sys.B * tr.inputs.col(t);
    Vector sum = Vector::Zero(orc.dim()), sumsq = Vector::Zero(orc.dim());
    for (int k = 0; k < M; ++k) {
      Vector w(2);
      w << N(g), N(g);
      const Vector psi = outer_svec(Lk * (mean + s.sys.sigma_w * w));
      sum += psi;
      sumsq += psi.cwiseProduct(psi);
    }
    const Vector avg = sum / M;
    const Vector se = ((sumsq / M - avg.cwiseProduct(avg)) / M).cwiseSqrt();
    for (Index i = 0; i < orc.dim(); ++i) {
      CHECK(std::abs(avg(i) - orc.psi_plus(t, i)) <= 3.0 * se(i) + 1e-12);
    }
  }
}

TEST_CASE("LSTD-Q with oracle features recovers the true Q") {
  std::mt19937_64 g(4);
  for (int trial = 0; trial < 20; ++trial) {
    const Index n = 1 + trial % 4, d = 1 + trial % 2;
    const Setup s = random_setup(g, n, d);
    const Matrix K = 0.05 * randn(g, d, n);
    if (!is_stable(s.sys.A + s.sys.B * K)) continue;
    const Index p = svec_length(n + d);
    const Trajectory tr = simulate(s, Matrix::Zero(d, n), 1.0, 5 * p, 100 + trial);
    const LstdqEstimate est = lstdq(oracle_features(tr, K, s.sys));
    const QFunction qf = policy_qfun(s.sys.A, s.sys.B, s.cost.S, s.cost.R, K, s.sys.sigma_w);
    CHECK_FALSE(est.rank_deficient);
    CHECK((est.q.coords - qf.q.coords).norm() < 1e-6 * (1 + qf.q.coords.norm()));
  }
}

TEST_CASE("short trajectories flag rank deficiency") {
  const Setup s = offline_setup();
  const Trajectory tr = simulate(s, Matrix::Zero(2, 3), 1.0, 5, 1);
  const LstdqEstimate est = lstdq(build_features(tr, Matrix::Zero(2, 3), 1.0));
  CHECK(est.rank_deficient);
  CHECK(est.rank <= 5);
  CHECK(smat(est.q).isApprox(smat(est.q).transpose()));
}

TEST_CASE("estimate is invariant to permuting samples") {
  const Setup s = offline_setup();
  const Trajectory tr = simulate(s, Matrix::Zero(2, 3), 1.0, 400, 2);
  const LstdqFeatures f = build_features(tr, Matrix::Zero(2, 3), 1.0);
  std::vector<Index> perm(400);
  std::iota(perm.begin(), perm.end(), 0);
  std::mt19937_64 g(5);
  std::shuffle(perm.begin(), perm.end(), g);
  LstdqFeatures p = f;
  for (Index t = 0; t < 400; ++t) {
    p.phi.row(t) = f.phi.row(perm[t]);
    p.psi_plus.row(t) = f.psi_plus.row(perm[t]);
    p.costs(t) = f.costs(perm[t]);
  }
  const Vector a = lstdq(f).q.coords, b = lstdq(p).q.coords;
  CHECK((a - b).norm() < 1e-8 * a.norm());
}

TEST_CASE("sufficient statistics reproduce the direct estimator") {
  std::mt19937_64 g(6);
  const Setup s = random_setup(g, 3, 2);
  const Trajectory t1 = simulate(s, Matrix::Zero(2, 3), 1.0, 3000, 7);
  const Trajectory t2 = simulate(s, Matrix::Zero(2, 3), 1.0, 2000, 8);
  LstdqStatistics stats(3, 2);
  stats.add(t1);
  stats.add(t2);
  CHECK(stats.count() == 5000);
  for (int k = 0; k < 3; ++k) {
    const Matrix K = 0.1 * randn(g, 2, 3);
    LstdqFeatures a = build_features(t1, K, 1.0), b = build_features(t2, K, 1.0);
    LstdqFeatures both;
    both.phi.resize(5000, a.dim());
    both.phi << a.phi, b.phi;
    both.psi_plus.resize(5000, a.dim());
    both.psi_plus << a.psi_plus, b.psi_plus;
    both.costs.resize(5000);
    both.costs << a.costs, b.costs;
    both.f = a.f;
    const Vector direct = lstdq(both).q.coords;
    const Vector viastats = stats.estimate(K, 1.0).q.coords;
    CHECK((direct - viastats).norm() < 1e-7 * direct.norm());
  }
}

TEST_CASE("pinv_solve handles singular systems") {
  Matrix D = Matrix::Zero(3, 3);
  D(0, 0) = 2.0;
  D(1, 1) = 1.0;
  Vector r(3);
  r << 4.0, 3.0, 1.0;
  const LstdqEstimate e = pinv_solve(D, r);
  CHECK(e.rank == 2);
  CHECK(e.rank_deficient);
  CHECK(e.q.dim == 2);
  CHECK(e.q.coords(0) == doctest::Approx(2.0));
  CHECK(e.q.coords(1) == doctest::Approx(3.0));
  CHECK(e.q.coords(2) == 0.0);
}

TEST_CASE("diagnostics") {
  LstdqFeatures rep;
  rep.phi = Matrix::Ones(10, 3);
  rep.psi_plus = Matrix::Zero(10, 3);
  rep.f = Vector::Zero(3);
  rep.costs = Vector::Zero(10);
  const auto d0 = lstdq_diagnostics(rep, Matrix::Zero(1, 1), Matrix::Zero(1, 1), Matrix::Zero(1, 1));
  CHECK(d0.sigma_min_phi == doctest::Approx(0.0));
  CHECK(d0.sigma_min_bellman == doctest::Approx(1.0));

  std::mt19937_64 g(7);
  const Setup s = random_setup(g, 3, 2);
  const Matrix K = 0.1 * randn(g, 2, 3);
  const Trajectory tr = simulate(s, Matrix::Zero(2, 3), 1.0, 200, 9);
  const LstdqFeatures orc = oracle_features(tr, K, s.sys);
  const Matrix L = state_action_transition(K, s.sys.A, s.sys.B);
  const Index p = orc.dim();
  const Matrix F = Vector::Ones(orc.rows()) * orc.f.transpose();
  const Matrix lhs = orc.phi - orc.psi_plus + F;
  const Matrix rhs = orc.phi * (Matrix::Identity(p, p) - sym_kron(L)).transpose();
  CHECK((lhs - rhs).norm() < 1e-8 * (1 + lhs.norm()));
  const auto diag = lstdq_diagnostics(orc, K, s.sys.A, s.sys.B);
  CHECK(diag.sigma_min_phi > 0.0);
  CHECK(diag.sigma_min_bellman > 0.0);
}

TEST_CASE("estimation error shrinks with trajectory length") {
  const Setup s = offline_setup();
  const Matrix K = Matrix::Zero(2, 3);
  const Vector q = policy_qfun(s.sys.A, s.sys.B, s.cost.S, s.cost.R, K, 1.0).q.coords;
  std::vector<double> med;
  for (Index T : {1000, 10000, 100000}) {
    std::vector<double> errs;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      const Trajectory tr = simulate(s, K, 1.0, T, 1000 + seed);
      LstdqStatistics stats(3, 2);
      stats.add(tr);
      errs.push_back((stats.estimate(K, 1.0).q.coords - q).norm());
    }
    med.push_back(median(errs));
  }
  CHECK(med[1] < med[0]);
  CHECK(med[2] < med[1]);
}
