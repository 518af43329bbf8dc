#include "lspi/lstdq.hpp"

#include "lspi/errors.hpp"
#include "lspi/lyapunov.hpp"

#include <cmath>
#include <limits>
#include <numbers>

namespace lspi {

namespace {

// Rows are accumulated in double within a chunk and reduced in long double
// across chunks, in a fixed order.
constexpr Index kChunkRows = 4096;

void check_gain(const Trajectory& traj, const Matrix& K) {
  if (K.rows() != traj.inputs.rows() || K.cols() != traj.states.rows()) {
    throw DimensionError("LSTD-Q: K_eval must be d x n for the trajectory");
  }
}

}  // namespace

Vector outer_svec(const Eigen::Ref<const Vector>& z) {
  const Index m = z.size();
  Vector out(svec_length(m));
  Index k = 0;
  for (Index i = 0; i < m; ++i) {
    out(k++) = z(i) * z(i);
    for (Index j = i + 1; j < m; ++j) out(k++) = std::numbers::sqrt2 * z(i) * z(j);
  }
  return out;
}

LstdqFeatures build_features(const Trajectory& traj, const Matrix& K_eval, double sigma_w) {
  check_gain(traj, K_eval);
  const Index n = traj.states.rows();
  const Index d = traj.inputs.rows();
  const Index T = traj.length();
  const Index p = svec_length(n + d);
  LstdqFeatures feat;
  feat.phi.resize(T, p);
  feat.psi_plus.resize(T, p);
  feat.costs = traj.costs;
  const Matrix lifted = lift(K_eval);
  feat.f = svec(sigma_w * sigma_w * lifted * lifted.transpose()).coords;
  Vector z(n + d);
  for (Index t = 0; t < T; ++t) {
    z << traj.states.col(t), traj.inputs.col(t);
    feat.phi.row(t) = outer_svec(z).transpose();
    feat.psi_plus.row(t) = outer_svec(lifted * traj.states.col(t + 1)).transpose();
  }
  return feat;
}

LstdqFeatures oracle_features(const Trajectory& traj, const Matrix& K_eval,
                              const LinearSystem& sys) {
  check_gain(traj, K_eval);
  LstdqFeatures feat = build_features(traj, K_eval, sys.sigma_w);
  const Matrix lifted = lift(K_eval);
  const Matrix noise_part = sys.sigma_w * sys.sigma_w * lifted * lifted.transpose();
  for (Index t = 0; t < traj.length(); ++t) {
    const Vector mean = sys.A * traj.states.col(t) + sys.B * traj.inputs.col(t);
    const Vector lifted_mean = lifted * mean;
    feat.psi_plus.row(t) =
        (outer_svec(lifted_mean) + svec(noise_part).coords).transpose();
  }
  return feat;
}

LstdqEstimate pinv_solve(const Matrix& design, const Vector& rhs) {
  Eigen::JacobiSVD<Matrix> svd(design, Eigen::ComputeFullU | Eigen::ComputeFullV);
  const Vector& sv = svd.singularValues();
  const double cutoff = static_cast<double>(std::max(design.rows(), design.cols())) *
                        std::numeric_limits<double>::epsilon() * (sv.size() ? sv(0) : 0.0);
  LstdqEstimate est;
  Vector coeff = svd.matrixU().transpose() * rhs;
  for (Index i = 0; i < sv.size(); ++i) {
    if (sv(i) > cutoff && sv(i) > 0.0) {
      coeff(i) /= sv(i);
      ++est.rank;
    } else {
      coeff(i) = 0.0;
    }
  }
  est.rank_deficient = est.rank < std::min(design.rows(), design.cols());
  const Vector q = svd.matrixV() * coeff;
  est.q = SVec{side_from_svec_length(q.size()), q};
  return est;
}

LstdqEstimate lstdq(const LstdqFeatures& features) {
  const Index T = features.rows();
  const Index p = features.dim();
  if (features.psi_plus.rows() != T || features.psi_plus.cols() != p || features.f.size() != p ||
      features.costs.size() != T) {
    throw DimensionError("lstdq: feature blocks have inconsistent shapes");
  }
  using LMatrix = Eigen::Matrix<long double, Eigen::Dynamic, Eigen::Dynamic>;
  using LVector = Eigen::Matrix<long double, Eigen::Dynamic, 1>;
  LMatrix design = LMatrix::Zero(p, p);
  LVector rhs = LVector::Zero(p);
  LVector phi_sum = LVector::Zero(p);
  for (Index start = 0; start < T; start += kChunkRows) {
    const Index rows = std::min(kChunkRows, T - start);
    const auto phi = features.phi.middleRows(start, rows);
    const auto psi = features.psi_plus.middleRows(start, rows);
    const Matrix block = phi.transpose() * (phi - psi);
    design += block.cast<long double>();
    rhs += (phi.transpose() * features.costs.segment(start, rows)).cast<long double>();
    phi_sum += phi.colwise().sum().transpose().cast<long double>();
  }
  design += phi_sum * features.f.cast<long double>().transpose();
  return pinv_solve(design.cast<double>(), rhs.cast<double>());
}

LstdqStatistics::LstdqStatistics(Index n, Index d)
    : n_(n),
      d_(d),
      gram_(LMatrix::Zero(svec_length(n + d), svec_length(n + d))),
      cross_(LMatrix::Zero(svec_length(n + d), svec_length(n))),
      phi_sum_(LVector::Zero(svec_length(n + d))),
      phi_cost_(LVector::Zero(svec_length(n + d))) {}

void LstdqStatistics::add(const Trajectory& traj) {
  if (traj.states.rows() != n_ || traj.inputs.rows() != d_) {
    throw DimensionError("LstdqStatistics: trajectory dimensions differ");
  }
  const Index T = traj.length();
  const Index p = svec_length(n_ + d_);
  const Index pn = svec_length(n_);
  Vector z(n_ + d_);
  for (Index start = 0; start < T; start += kChunkRows) {
    const Index rows = std::min(kChunkRows, T - start);
    Matrix phi(rows, p);
    Matrix chi(rows, pn);
    for (Index r = 0; r < rows; ++r) {
      const Index t = start + r;
      z << traj.states.col(t), traj.inputs.col(t);
      phi.row(r) = outer_svec(z).transpose();
      chi.row(r) = outer_svec(traj.states.col(t + 1)).transpose();
    }
    gram_ += (phi.transpose() * phi).cast<long double>();
    cross_ += (phi.transpose() * chi).cast<long double>();
    phi_sum_ += phi.colwise().sum().transpose().cast<long double>();
    phi_cost_ += (phi.transpose() * traj.costs.segment(start, rows)).cast<long double>();
  }
  count_ += T;
}

LstdqEstimate LstdqStatistics::estimate(const Matrix& K_eval, double sigma_w) const {
  if (K_eval.rows() != d_ || K_eval.cols() != n_) {
    throw DimensionError("LstdqStatistics: K_eval must be d x n");
  }
  const Matrix lifted = lift(K_eval);
  const Matrix C = congruence_operator(lifted);
  const Vector f = svec(sigma_w * sigma_w * lifted * lifted.transpose()).coords;
  const LMatrix design = gram_ - cross_ * C.transpose().cast<long double>() +
                         phi_sum_ * f.cast<long double>().transpose();
  return pinv_solve(design.cast<double>(), phi_cost_.cast<double>());
}

Matrix state_action_transition(const Matrix& K_eval, const Matrix& A, const Matrix& B) {
  Matrix AB(A.rows(), A.cols() + B.cols());
  AB << A, B;
  return lift(K_eval) * AB;
}

LstdqDiagnostics lstdq_diagnostics(const LstdqFeatures& features, const Matrix& K_eval,
                                   const Matrix& A, const Matrix& B) {
  LstdqDiagnostics diag;
  // sigma(Phi) = sigma(R) for Phi = QR; keeps the SVD p x p for long trajectories.
  if (features.rows() >= features.dim()) {
    Eigen::HouseholderQR<Matrix> qr(features.phi);
    const Matrix r = qr.matrixQR().topRows(features.dim()).triangularView<Eigen::Upper>();
    diag.sigma_min_phi = Eigen::JacobiSVD<Matrix>(r).singularValues().minCoeff();
  } else {
    diag.sigma_min_phi = 0.0;
  }
  const Matrix L = state_action_transition(K_eval, A, B);
  const Matrix op = Matrix::Identity(svec_length(L.rows()), svec_length(L.rows())) - sym_kron(L);
  diag.sigma_min_bellman = Eigen::JacobiSVD<Matrix>(op).singularValues().minCoeff();
  return diag;
}

}  // namespace lspi
