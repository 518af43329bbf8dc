#pragma once

// Evaluation-only view of the true plant. Learners never receive this; the
// harness uses it to score gains in closed form.

#include "lspi/lyapunov.hpp"
#include "lspi/sim.hpp"

namespace lspi {

class GroundTruth {
 public:
  GroundTruth(LinearSystem sys, CostModel cost);

  const LinearSystem& system() const { return sys_; }
  const CostModel& cost() const { return cost_; }
  const DareSolution& optimal() const { return opt_; }
  double J_star() const { return opt_.J_star; }

  /// J(K; sigma_w^2 I), or +inf when A + BK is not stable.
  double cost_of(const Matrix& K) const;
  /// (J(K) - J*) / J*, or +inf when A + BK is not stable.
  double rel_cost_err(const Matrix& K) const;
  bool stabilizes(const Matrix& K) const;

  ValueFunction value(const Matrix& K) const;
  QFunction qfun(const Matrix& K) const;

 private:
  LinearSystem sys_;
  CostModel cost_;
  DareSolution opt_;
  double j_ref_ = 0.0;
};

}  // namespace lspi
