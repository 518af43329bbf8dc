#pragma once

// Symmetric-matrix toolkit: svec/smat, symmetric Kronecker operators,
// PSD-floor projection, the invariant metric delta_inf and (tau, rho)
// stability certificates.

#include <Eigen/Dense>

#include <optional>

namespace lspi {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using Index = Eigen::Index;

/// Relative tolerance under which a matrix is accepted as symmetric.
inline constexpr double kSymmetryTol = 1e-12;

/// Spectral radius threshold used by every stability check.
inline constexpr double kStabilityMargin = 1e-9;

/// Norm-preserving coordinates of a symmetric matrix of side `dim`.
///
/// Ordering is row-major over the upper triangle; diagonal entries are
/// stored as-is and off-diagonal entries are scaled by sqrt(2), so that
/// <svec(M), svec(N)> = Tr(MN).
struct SVec {
  Index dim = 0;
  Vector coords;
};

/// n(n+1)/2.
constexpr Index svec_length(Index n) { return n * (n + 1) / 2; }

/// Inverse of svec_length; throws DimensionError if `len` is not triangular.
Index side_from_svec_length(Index len);

/// Returns (M + M^T)/2 after checking M is square and symmetric to within
/// kSymmetryTol relative to its largest entry. Throws SymmetryError.
Matrix symmetrized(const Eigen::Ref<const Matrix>& M);

bool is_symmetric(const Eigen::Ref<const Matrix>& M, double rel_tol = kSymmetryTol);

SVec svec(const Eigen::Ref<const Matrix>& M);
Matrix smat(const SVec& v);
/// smat for a bare coordinate vector; the side is inferred from its length.
Matrix smat(const Eigen::Ref<const Vector>& coords);

/// Dense matrix C of shape svec_length(m) x svec_length(n) such that
/// C * svec(X) = svec(M X M^T) for every symmetric n x n X, where M is m x n.
Matrix congruence_operator(const Eigen::Ref<const Matrix>& M);

/// Symmetric Kronecker product L (x)_s L: the operator svec(X) -> svec(L X L^T).
/// L must be square.
Matrix sym_kron(const Eigen::Ref<const Matrix>& L);

/// Frobenius projection onto {X = X^T : X >= mu I} by eigenvalue clipping.
Matrix proj_psd_floor(const Eigen::Ref<const Matrix>& M, double mu);

/// delta_inf(A, B) = || log(A^{-1/2} B A^{-1/2}) ||_2 for positive definite A, B.
double delta_inf(const Eigen::Ref<const Matrix>& A, const Eigen::Ref<const Matrix>& B);

double spectral_radius(const Eigen::Ref<const Matrix>& L);
bool is_stable(const Eigen::Ref<const Matrix>& L);
/// Largest singular value.
double op_norm(const Eigen::Ref<const Matrix>& M);
double lambda_min(const Eigen::Ref<const Matrix>& M);
double lambda_max(const Eigen::Ref<const Matrix>& M);

struct StabilityCertificate {
  double tau = 1.0;
  double rho = 0.5;
  int k_max = 0;
};

inline constexpr int kDefaultCertificateHorizon = 200;

/// Certifies ||L^k|| <= tau rho^k for k = 0..k_max with rho = (rho(L) + 1)/2.
/// Returns nullopt when L is not stable.
std::optional<StabilityCertificate> stability_certificate(
    const Eigen::Ref<const Matrix>& L, int k_max = kDefaultCertificateHorizon);

}  // namespace lspi
