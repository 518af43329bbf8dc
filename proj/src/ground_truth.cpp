#include "lspi/ground_truth.hpp"

#include <limits>

namespace lspi {

GroundTruth::GroundTruth(LinearSystem sys, CostModel cost)
    : sys_(std::move(sys)), cost_(std::move(cost)) {
  sys_.validate();
  opt_ = dare(sys_.A, sys_.B, cost_.S, cost_.R, sys_.sigma_w);
  // Score every gain through the same closed form, so K* itself scores exactly 0.
  j_ref_ = cost_of(opt_.K_star);
}

bool GroundTruth::stabilizes(const Matrix& K) const { return is_stable(sys_.A + sys_.B * K); }

double GroundTruth::cost_of(const Matrix& K) const {
  if (!K.allFinite() || !stabilizes(K)) return std::numeric_limits<double>::infinity();
  const Index n = sys_.n();
  return avg_cost(sys_.A, sys_.B, cost_.S, cost_.R, K,
                  sys_.sigma_w * sys_.sigma_w * Matrix::Identity(n, n));
}

double GroundTruth::rel_cost_err(const Matrix& K) const {
  return (cost_of(K) - j_ref_) / j_ref_;
}

ValueFunction GroundTruth::value(const Matrix& K) const {
  return policy_value(sys_.A, sys_.B, cost_.S, cost_.R, K, sys_.sigma_w);
}

QFunction GroundTruth::qfun(const Matrix& K) const {
  return policy_qfun(sys_.A, sys_.B, cost_.S, cost_.R, K, sys_.sigma_w);
}

}  // namespace lspi
