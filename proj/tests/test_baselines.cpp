#include "lspi/baselines.hpp"
#include "lspi/errors.hpp"
#include "lspi/ground_truth.hpp"
#include "lspi/lyapunov.hpp"

#include "test_util.hpp"

#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <vector>

using namespace lspi;
using namespace testutil;

namespace {

Matrix scalar(double v) { return Matrix::Constant(1, 1, v); }

LinearSystem scalar_system(double a, double sigma_w, double sigma0 = 0.0) {
  LinearSystem sys;
  sys.A = scalar(a);
  sys.B = scalar(1.0);
  sys.sigma_w = sigma_w;
  sys.Sigma0 = scalar(sigma0);
  return sys;
}

CostModel scalar_cost() { return {scalar(1.0), scalar(1.0)}; }

LinearSystem offline_system() {
  LinearSystem sys;
  sys.A.resize(3, 3);
  sys.A << 0.95, 0.01, 0, 0.01, 0.95, 0.01, 0, 0.01, 0.95;
  sys.B.resize(3, 2);
  sys.B << 1, 0.1, 0, 0.1, 0, 0.1;
  sys.sigma_w = 1.0;
  return sys;
}

CostModel offline_cost() { return {Matrix::Identity(3, 3), Matrix::Identity(2, 2)}; }

double median(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

struct MeanSe {
  double mean = 0.0;
  double se = 0.0;
};

MeanSe mean_se(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  const double m = s / v.size();
  double ss = 0.0;
  for (double x : v) ss += (x - m) * (x - m);
  return {m, std::sqrt(ss / (v.size() - 1) / v.size())};
}

// Expected per-step cost of a scalar T-step rollout from x0 = 0 under
// u = k x + eta, by the variance recursion.
double finite_horizon_cost(double a, double k, double sigma_w, double sigma_eta, int T) {
  const double l = a + k;
  double var = 0.0;
  double total = 0.0;
  for (int t = 0; t < T; ++t) {
    total += (1.0 + k * k) * var + sigma_eta * sigma_eta;
    var = l * l * var + sigma_w * sigma_w + sigma_eta * sigma_eta;
  }
  return total / T;
}

// Noise-free per-step cost of a scalar T-step rollout from x0 with x0^2 = 1.
double deterministic_cost(double a, double k, int T) {
  const double l = a + k;
  double x2 = 1.0;
  double total = 0.0;
  for (int t = 0; t < T; ++t) {
    total += (1.0 + k * k) * x2;
    x2 *= l * l;
  }
  return total / T;
}

// E_xi[f(k + sigma xi)] by trapezoid rule on the standard normal density.
template <class F>
double gaussian_smooth(F f, double k, double sigma) {
  const int m = 4000;
  const double lo = -9.0, hi = 9.0, h = (hi - lo) / m;
  double s = 0.0;
  for (int i = 0; i <= m; ++i) {
    const double z = lo + i * h;
    const double w = (i == 0 || i == m) ? 0.5 : 1.0;
    s += w * std::exp(-0.5 * z * z) * f(k + sigma * z);
  }
  return s * h / std::sqrt(2.0 * M_PI);
}

}  // namespace

TEST_CASE("nominal_fit recovers a noise-free model exactly") {
  std::mt19937_64 g(11);
  for (int rep = 0; rep < 10; ++rep) {
    const Index n = 1 + rep % 4, d = 1 + rep % 2;
    LinearSystem sys;
    sys.A = rand_stable(g, n, 0.8);
    sys.B = randn(g, n, d);
    sys.sigma_w = 0.0;
    sys.Sigma0 = Matrix::Identity(n, n);
    const CostModel cost{Matrix::Identity(n, n), Matrix::Identity(d, d)};
    RngStream rng(rep, {0, 0, StreamPurpose::kRollout});
    std::vector<Trajectory> trajs{rollout(sys, cost, Matrix::Zero(d, n), 1.0, 5 * (n + d), Fresh{}, rng)};
    const ModelEstimate est = nominal_fit(trajs);
    CHECK((est.A_hat - sys.A).norm() < 1e-10);
    CHECK((est.B_hat - sys.B).norm() < 1e-10);
    CHECK(est.residual < 1e-18);
  }
}

TEST_CASE("nominal_fit rejects unidentifiable data") {
  const LinearSystem sys = offline_system();
  RngStream rng(1, {0, 0, StreamPurpose::kRollout});
  std::vector<Trajectory> one{rollout(sys, offline_cost(), Matrix::Zero(2, 3), 1.0, 1, Fresh{}, rng)};
  CHECK_THROWS_AS(nominal_fit(one), IdentifiabilityError);
  CHECK_THROWS_AS(nominal_fit(std::span<const Trajectory>{}), IdentifiabilityError);

  // No excitation: inputs are identically zero.
  std::vector<Trajectory> flat{rollout(sys, offline_cost(), Matrix::Zero(2, 3), 0.0, 200, Fresh{}, rng)};
  CHECK_THROWS_AS(nominal_fit(flat), IdentifiabilityError);

  NominalStatistics stats(3, 2);
  stats.add(one.front());
  CHECK_THROWS_AS(stats.fit(), IdentifiabilityError);
}

TEST_CASE("nominal_fit satisfies the normal equations and matches streaming statistics") {
  const LinearSystem sys = offline_system();
  std::vector<Trajectory> trajs;
  NominalStatistics stats(3, 2);
  for (int i = 0; i < 4; ++i) {
    RngStream rng(3, {0, static_cast<std::uint64_t>(i), StreamPurpose::kExcitation});
    trajs.push_back(rollout(sys, offline_cost(), Matrix::Zero(2, 3), 1.0, 100, Fresh{}, rng));
    stats.add(trajs.back());
  }
  const ModelEstimate est = nominal_fit(trajs);
  Matrix grad = Matrix::Zero(3, 5);
  for (const auto& tr : trajs) {
    for (Index t = 0; t < tr.length(); ++t) {
      Vector z(5);
      z << tr.states.col(t), tr.inputs.col(t);
      const Vector r = tr.states.col(t + 1) - est.A_hat * tr.states.col(t) - est.B_hat * tr.inputs.col(t);
      grad += r * z.transpose();
    }
  }
  CHECK(grad.norm() < 1e-8);
  const ModelEstimate s = stats.fit();
  CHECK(stats.count() == 400);
  CHECK((s.A_hat - est.A_hat).norm() < 1e-10);
  CHECK((s.B_hat - est.B_hat).norm() < 1e-10);
  CHECK(s.residual == doctest::Approx(est.residual).epsilon(1e-8));
}

TEST_CASE("nominal_fit error shrinks with sample count") {
  const LinearSystem sys = offline_system();
  const std::vector<Index> sizes{1000, 10000, 100000};
  std::vector<double> med;
  for (Index N : sizes) {
    std::vector<double> errs;
    for (std::uint64_t seed = 0; seed < 20; ++seed) {
      RngStream rng(seed, {0, static_cast<std::uint64_t>(N), StreamPurpose::kExcitation});
      std::vector<Trajectory> trajs{rollout(sys, offline_cost(), Matrix::Zero(2, 3), 1.0, N, Fresh{}, rng)};
      errs.push_back((nominal_fit(trajs).A_hat - sys.A).norm());
    }
    med.push_back(median(errs));
  }
  CHECK(med[1] < med[0]);
  CHECK(med[2] < med[1]);
}

TEST_CASE("nominal_controller") {
  const LinearSystem sys = offline_system();
  const DareSolution opt = dare(sys.A, sys.B, offline_cost().S, offline_cost().R);
  const Matrix K = nominal_controller({sys.A, sys.B, 0.0}, offline_cost().S, offline_cost().R);
  CHECK((K - opt.K_star).norm() < 1e-10);

  const Matrix K0 = nominal_controller({Matrix::Zero(3, 3), sys.B, 0.0}, offline_cost().S, offline_cost().R);
  CHECK(K0.norm() < 1e-14);
}

TEST_CASE("pg_gradient degenerate inputs") {
  Trajectory tr;
  const Index T = 6;
  tr.states = Matrix::Ones(2, T + 1);
  tr.inputs = Matrix::Ones(1, T);
  tr.noises_eta = Matrix::Ones(1, T);
  tr.costs = Vector::Zero(T);
  tr.costs(T - 1) = 3.5;  // every tail sum equals 3.5
  tr.sigma_eta = 0.7;
  const GradientEstimate g = pg_gradient(tr, SimpleBaseline{3.5});
  CHECK(g.g.norm() == 0.0);
  CHECK(g.variance_proxy == 0.0);

  tr.costs = Vector::LinSpaced(T, 1.0, 2.0);
  tr.noises_eta.setZero();
  CHECK(pg_gradient(tr, SimpleBaseline{0.0}).g.norm() == 0.0);
  CHECK(pg_gradient(tr, ValueFunctionBaseline{Matrix::Identity(2, 2)}).g.norm() == 0.0);

  tr.sigma_eta = 0.0;
  CHECK_THROWS_AS(pg_gradient(tr, SimpleBaseline{0.0}), ParameterError);
}

TEST_CASE("pg_gradient matches the finite-horizon gradient on average") {
  const double a = 0.9, sigma_eta = 1.0;
  const int T = 100, M = 2000;
  const LinearSystem sys = scalar_system(a, 1.0);
  std::vector<double> samples;
  for (int m = 0; m < M; ++m) {
    RngStream rng(21, {0, static_cast<std::uint64_t>(m), StreamPurpose::kRollout});
    const Trajectory tr = rollout(sys, scalar_cost(), scalar(0.0), sigma_eta, T, Fresh{}, rng);
    samples.push_back(pg_gradient(tr, SimpleBaseline{0.0}).g(0, 0));
  }
  const MeanSe est = mean_se(samples);
  const double h = 1e-5;
  const double oracle = (finite_horizon_cost(a, h, 1.0, sigma_eta, T) -
                         finite_horizon_cost(a, -h, 1.0, sigma_eta, T)) / (2 * h);
  CHECK(std::abs(est.mean - oracle) < 3.0 * est.se);
}

TEST_CASE("dfo_gradient degenerate inputs") {
  // Symmetric instance: cost at k and -k coincide when there is no process noise.
  const Plant sym(scalar_system(0.0, 0.0, 1.0), scalar_cost());
  const StreamFactory streams(4, 0);
  for (std::uint64_t phase = 0; phase < 5; ++phase) {
    const GradientEstimate g = dfo_gradient(sym, scalar(0.0), 0.3, 20, streams, phase);
    CHECK(g.g.norm() == 0.0);
  }

  const Plant plant(offline_system(), offline_cost());
  DfoOptions opts;
  opts.xi = Matrix::Zero(2, 3);
  CHECK(dfo_gradient(plant, Matrix::Zero(2, 3), 0.1, 50, streams, 0, opts).g.norm() == 0.0);
  opts.xi = Matrix::Zero(3, 2);
  CHECK_THROWS_AS(dfo_gradient(plant, Matrix::Zero(2, 3), 0.1, 50, streams, 0, opts), DimensionError);
  CHECK_THROWS_AS(dfo_gradient(plant, Matrix::Zero(2, 3), 0.0, 50, streams, 0), ParameterError);
}

TEST_CASE("dfo_gradient is unbiased for the smoothed noise-free objective") {
  const double a = 0.9, k = -0.2, sigma = 0.1, sigma0 = 1.5;
  const int T = 20, M = 2000;
  const Plant plant(scalar_system(a, 0.0, sigma0), scalar_cost());
  const StreamFactory streams(33, 0);
  std::vector<double> samples;
  for (int m = 0; m < M; ++m) {
    samples.push_back(dfo_gradient(plant, scalar(k), sigma, T, streams, m).g(0, 0));
  }
  const MeanSe est = mean_se(samples);
  auto smoothed = [&](double kk) {
    return sigma0 * gaussian_smooth([&](double q) { return deterministic_cost(a, q, T); }, kk, sigma);
  };
  const double h = 1e-4;
  const double oracle = (smoothed(k + h) - smoothed(k - h)) / (2 * h);
  CHECK(std::abs(est.mean - oracle) < 3.0 * est.se);
}

TEST_CASE("dfo_gradient reports which perturbation diverged") {
  LinearSystem sys = scalar_system(0.0, 0.0, 1.0);
  const Plant plant(sys, scalar_cost(), 1e3);
  DfoOptions opts;
  opts.xi = scalar(1.0);
  try {
    dfo_gradient(plant, scalar(0.0), 2.0, 50, StreamFactory(1, 0), 0, opts);
    FAIL("expected divergence");
  } catch (const DivergenceError& e) {
    CHECK(e.context() == "dfo rollout at K + sigma xi");
  }
}

TEST_CASE("projected_sgd_step") {
  std::mt19937_64 g(5);
  const Matrix K = randn(g, 2, 3);
  CHECK(projected_sgd_step(K, Matrix::Zero(2, 3), 0.1, K.norm() + 1.0) == K);

  const Matrix dir = randn(g, 2, 3);
  const double radius = 1.7;
  const Matrix out = projected_sgd_step(Matrix::Zero(2, 3), -dir * (2.0 * radius / dir.norm()), 1.0, radius);
  CHECK(out.norm() == doctest::Approx(radius));
  CHECK((out / out.norm() - dir / dir.norm()).norm() < 1e-12);

  for (int rep = 0; rep < 500; ++rep) {
    const double r = uniform(g, 0.1, 3.0);
    const Matrix K0 = randn(g, 2, 3) * uniform(g, 0.0, 3.0);
    const Matrix G = randn(g, 2, 3);
    const double step = uniform(g, 0.01, 2.0);
    Matrix y = randn(g, 2, 3);
    y *= uniform(g, 0.0, r) / y.norm();
    const Matrix x = K0 - step * G;
    const Matrix px = projected_sgd_step(K0, G, step, r);
    CHECK(px.norm() <= r * (1 + 1e-12));
    CHECK((px - y).norm() <= (x - y).norm() + 1e-12);
  }
  CHECK_THROWS_AS(projected_sgd_step(K, K, 0.0, 1.0), ParameterError);
  CHECK_THROWS_AS(projected_sgd_step(K, K, 1.0, -1.0), ParameterError);
}

TEST_CASE("projected gradient descent with the exact gradient reaches K*") {
  const double a = 0.9;
  // J(k) = (1 + k^2) / (1 - (a + k)^2) for S = R = sigma_w = 1.
  auto grad = [&](double k) {
    const double l = a + k, den = 1.0 - l * l;
    return 2.0 * k / den + (1.0 + k * k) * 2.0 * l / (den * den);
  };
  const double P = (0.81 + std::sqrt(4.6561)) / 2.0;
  const double k_star = -a * P / (1.0 + P);
  Matrix K = scalar(0.0);
  int steps = 0;
  while (std::abs(K(0, 0) - k_star) >= 1e-4 && steps < 10000) {
    K = projected_sgd_step(K, scalar(grad(K(0, 0))), 1e-2, 10.0);
    ++steps;
  }
  CHECK(std::abs(K(0, 0) - k_star) < 1e-4);
  CHECK(steps <= 10000);
}

TEST_CASE("pg_sgd and dfo_sgd respect the step budget") {
  const Plant plant(offline_system(), offline_cost());
  const GroundTruth truth(offline_system(), offline_cost());
  SgdConfig cfg;
  cfg.budget = 1050;
  cfg.horizon = 100;
  cfg.radius = 5.0 * truth.optimal().K_star.norm();
  const StreamFactory streams(9, 2);
  const SgdTrace pg = pg_sgd(plant, Matrix::Zero(2, 3), cfg, PgBaselineKind::kSimple, streams);
  CHECK(pg.snapshots.size() == 11);
  CHECK(pg.snapshots.back().step == 1000);
  CHECK_THROWS_AS(pg_sgd(plant, Matrix::Zero(2, 3), cfg, PgBaselineKind::kValueFunction, streams),
                  ParameterError);
  const SgdTrace vf = pg_sgd(plant, Matrix::Zero(2, 3), cfg, PgBaselineKind::kValueFunction, streams,
                             [&](const Matrix& K) { return truth.value(K).V; });
  CHECK(vf.snapshots.size() == 11);

  cfg.sigma_eta = 1e-3;
  cfg.step = 1e-4;
  const SgdTrace dfo = dfo_sgd(plant, Matrix::Zero(2, 3), cfg, streams);
  CHECK(dfo.snapshots.size() == 6);
  CHECK(dfo.snapshots.back().step == 1000);
  for (const auto& s : dfo.snapshots) CHECK(s.K.norm() <= cfg.radius * (1 + 1e-12));

  const SgdTrace again = dfo_sgd(plant, Matrix::Zero(2, 3), cfg, streams);
  CHECK(again.snapshots.back().K == dfo.snapshots.back().K);
}

TEST_CASE("value-function baseline lowers gradient variance at K = 0") {
  const LinearSystem sys = offline_system();
  const GroundTruth truth(sys, offline_cost());
  const Matrix K = Matrix::Zero(2, 3);
  const Matrix V = truth.value(K).V;
  const int M = 200;
  std::vector<Matrix> simple, vf;
  double previous_avg = 0.0;
  for (int m = 0; m < M; ++m) {
    RngStream rng(17, {0, static_cast<std::uint64_t>(m), StreamPurpose::kRollout});
    const Trajectory tr = rollout(sys, offline_cost(), K, 1.0, 100, Fresh{}, rng);
    simple.push_back(pg_gradient(tr, SimpleBaseline{previous_avg}).g);
    vf.push_back(pg_gradient(tr, ValueFunctionBaseline{V}).g);
    previous_avg = tr.costs.mean();
  }
  auto spread = [](const std::vector<Matrix>& gs) {
    Matrix mean = Matrix::Zero(gs.front().rows(), gs.front().cols());
    for (const auto& g : gs) mean += g;
    mean /= static_cast<double>(gs.size());
    double s = 0.0;
    for (const auto& g : gs) s += (g - mean).squaredNorm();
    return s / (gs.size() * mean.size());
  };
  const double v_simple = spread(simple), v_vf = spread(vf);
  MESSAGE("variance ratio vf/simple = " << v_vf / v_simple);
  CHECK(v_vf < v_simple);
}
