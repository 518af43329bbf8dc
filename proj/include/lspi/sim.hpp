#pragma once

// Seeded simulation of x_{t+1} = A x_t + B u_t + w_t under u_t = K x_t + eta_t.

#include "lspi/symmat.hpp"

#include <cstdint>
#include <iosfwd>
#include <random>
#include <variant>

namespace lspi {

struct LinearSystem {
  Matrix A;
  Matrix B;
  double sigma_w = 1.0;
  /// Initial-state covariance; zero means a deterministic zero start.
  Matrix Sigma0;

  Index n() const { return A.rows(); }
  Index d() const { return B.cols(); }
  /// Throws DimensionError / PositivityError on inconsistent fields.
  void validate() const;
};

struct CostModel {
  Matrix S;
  Matrix R;

  double stage_cost(const Eigen::Ref<const Vector>& x, const Eigen::Ref<const Vector>& u) const {
    return x.dot(S * x) + u.dot(R * u);
  }
};

/// Tags distinguishing independent random streams within one trial.
enum class StreamPurpose : std::uint32_t {
  kRollout = 1,
  kWarmStart = 2,
  kPerturbation = 3,
  kInitialGain = 4,
  kExcitation = 5,
  kPlus = 6,
  kMinus = 7,
};

struct StreamId {
  std::uint64_t trial = 0;
  std::uint64_t phase = 0;
  StreamPurpose purpose = StreamPurpose::kRollout;
};

inline constexpr const char* kGeneratorFamily = "mt19937_64/seed_seq/std::normal_distribution";

/// A reproducible Gaussian stream: identical (seed, id) give identical draws.
class RngStream {
 public:
  RngStream(std::uint64_t seed, StreamId id);

  double normal() { return normal_(engine_); }
  Vector normal_vector(Index k);

  std::uint64_t seed() const { return seed_; }
  const StreamId& id() const { return id_; }

 private:
  std::uint64_t seed_;
  StreamId id_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

/// Hands out streams for one trial.
class StreamFactory {
 public:
  StreamFactory(std::uint64_t seed, std::uint64_t trial) : seed_(seed), trial_(trial) {}

  RngStream make(std::uint64_t phase, StreamPurpose purpose) const {
    return RngStream(seed_, StreamId{trial_, phase, purpose});
  }
  std::uint64_t seed() const { return seed_; }
  std::uint64_t trial() const { return trial_; }

 private:
  std::uint64_t seed_;
  std::uint64_t trial_;
};

/// Draw x0 ~ N(0, Sigma0).
struct Fresh {};
/// Carry the state over from a previous phase.
struct Continue {
  Vector x;
};
using InitialState = std::variant<Fresh, Continue>;

inline constexpr double kDefaultDivergenceThreshold = 1e8;

/// Column t of `states` is x_t (t = 0..T); columns of `inputs`, `noises_eta`
/// and entries of `costs` are indexed t = 0..T-1.
struct Trajectory {
  Matrix states;
  Matrix inputs;
  Matrix noises_eta;
  Vector costs;
  Matrix k_play;
  double sigma_eta = 0.0;

  Index length() const { return costs.size(); }
  Vector final_state() const { return states.col(states.cols() - 1); }
};

/// Per step the stream yields eta_t (d draws) and then w_t (n draws); a Fresh
/// start consumes n draws first. Throws DivergenceError when |x_t| exceeds the
/// threshold.
Trajectory rollout(const LinearSystem& sys, const CostModel& cost, const Matrix& K_play,
                   double sigma_eta, Index T, const InitialState& start, RngStream& rng,
                   double divergence_threshold = kDefaultDivergenceThreshold);

struct TrajectoryCost {
  Vector per_step;
  double cumulative = 0.0;
};

TrajectoryCost trajectory_cost(const Trajectory& traj);

/// CSV dump with columns t, x0..x{n-1}, u0..u{d-1}, cost.
void write_trajectory_csv(std::ostream& os, const Trajectory& traj);

/// Simulator handle given to learning algorithms. It exposes what a learner
/// may know (dimensions, costs, noise level) and hides (A, B).
class Plant {
 public:
  Plant(LinearSystem sys, CostModel cost,
        double divergence_threshold = kDefaultDivergenceThreshold);

  Trajectory rollout(const Matrix& K_play, double sigma_eta, Index T, const InitialState& start,
                     RngStream& rng) const {
    return lspi::rollout(sys_, cost_, K_play, sigma_eta, T, start, rng, divergence_threshold_);
  }

  Index n() const { return sys_.n(); }
  Index d() const { return sys_.d(); }
  double sigma_w() const { return sys_.sigma_w; }
  const CostModel& cost() const { return cost_; }
  double divergence_threshold() const { return divergence_threshold_; }

 private:
  LinearSystem sys_;
  CostModel cost_;
  double divergence_threshold_;
};

}  // namespace lspi
