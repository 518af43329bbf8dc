#include "lspi/symmat.hpp"

#include "lspi/errors.hpp"

#include <Eigen/Eigenvalues>

#include <cmath>
#include <numbers>
#include <string>

namespace lspi {

namespace {

constexpr double kSqrt2 = std::numbers::sqrt2;

void require_square(const Eigen::Ref<const Matrix>& M, const char* what) {
  if (M.rows() != M.cols() || M.rows() == 0) {
    throw DimensionError(std::string(what) + ": expected a non-empty square matrix, got " +
                         std::to_string(M.rows()) + "x" + std::to_string(M.cols()));
  }
}

Eigen::SelfAdjointEigenSolver<Matrix> sym_eig(const Matrix& S) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(S);
  if (es.info() != Eigen::Success) {
    throw ConditioningError("symmetric eigendecomposition failed");
  }
  return es;
}

}  // namespace

Index side_from_svec_length(Index len) {
  const auto n = static_cast<Index>(std::llround((std::sqrt(8.0 * static_cast<double>(len) + 1.0) - 1.0) / 2.0));
  if (len <= 0 || svec_length(n) != len) {
    throw DimensionError("svec length " + std::to_string(len) + " is not a triangular number");
  }
  return n;
}

bool is_symmetric(const Eigen::Ref<const Matrix>& M, double rel_tol) {
  if (M.rows() != M.cols()) return false;
  if (M.size() == 0) return true;
  const double scale = std::max(1.0, M.cwiseAbs().maxCoeff());
  return (M - M.transpose()).cwiseAbs().maxCoeff() <= rel_tol * scale;
}

Matrix symmetrized(const Eigen::Ref<const Matrix>& M) {
  require_square(M, "symmetric matrix");
  if (!M.allFinite()) throw SymmetryError("matrix has non-finite entries");
  if (!is_symmetric(M)) {
    throw SymmetryError("matrix is not symmetric (max asymmetry " +
                        std::to_string((M - M.transpose()).cwiseAbs().maxCoeff()) + ")");
  }
  return 0.5 * (M + M.transpose());
}

SVec svec(const Eigen::Ref<const Matrix>& M) {
  const Matrix S = symmetrized(M);
  const Index n = S.rows();
  SVec v{n, Vector(svec_length(n))};
  Index k = 0;
  for (Index i = 0; i < n; ++i) {
    v.coords(k++) = S(i, i);
    for (Index j = i + 1; j < n; ++j) v.coords(k++) = kSqrt2 * S(i, j);
  }
  return v;
}

Matrix smat(const Eigen::Ref<const Vector>& coords) {
  const Index n = side_from_svec_length(coords.size());
  Matrix M(n, n);
  Index k = 0;
  for (Index i = 0; i < n; ++i) {
    M(i, i) = coords(k++);
    for (Index j = i + 1; j < n; ++j) {
      M(i, j) = M(j, i) = coords(k++) / kSqrt2;
    }
  }
  return M;
}

Matrix smat(const SVec& v) {
  if (svec_length(v.dim) != v.coords.size()) {
    throw DimensionError("SVec of side " + std::to_string(v.dim) + " carries " +
                         std::to_string(v.coords.size()) + " coordinates");
  }
  return smat(v.coords);
}

Matrix congruence_operator(const Eigen::Ref<const Matrix>& M) {
  const Index m = M.rows();
  const Index n = M.cols();
  if (m == 0 || n == 0) throw DimensionError("congruence operator of an empty matrix");
  Matrix C(svec_length(m), svec_length(n));
  // Column (k, l) is svec(M E_kl M^T) for the orthonormal basis element E_kl.
  Index col = 0;
  Matrix image(m, m);
  for (Index k = 0; k < n; ++k) {
    for (Index l = k; l < n; ++l) {
      if (k == l) {
        image.noalias() = M.col(k) * M.col(k).transpose();
      } else {
        image.noalias() = M.col(k) * M.col(l).transpose();
        image = (image + image.transpose()).eval() / kSqrt2;
      }
      Index row = 0;
      for (Index i = 0; i < m; ++i) {
        C(row++, col) = image(i, i);
        for (Index j = i + 1; j < m; ++j) C(row++, col) = kSqrt2 * image(i, j);
      }
      ++col;
    }
  }
  return C;
}

Matrix sym_kron(const Eigen::Ref<const Matrix>& L) {
  require_square(L, "sym_kron");
  return congruence_operator(L);
}

Matrix proj_psd_floor(const Eigen::Ref<const Matrix>& M, double mu) {
  if (!(mu > 0.0)) throw ParameterError("proj_psd_floor: mu must be positive");
  const Matrix S = symmetrized(M);
  const auto es = sym_eig(S);
  if (es.eigenvalues().minCoeff() >= mu) return S;
  const Vector clipped = es.eigenvalues().cwiseMax(mu);
  Matrix X = es.eigenvectors() * clipped.asDiagonal() * es.eigenvectors().transpose();
  return 0.5 * (X + X.transpose());
}

double delta_inf(const Eigen::Ref<const Matrix>& A, const Eigen::Ref<const Matrix>& B) {
  const Matrix As = symmetrized(A);
  const Matrix Bs = symmetrized(B);
  if (As.rows() != Bs.rows()) throw DimensionError("delta_inf: dimension mismatch");
  auto require_pd = [](const Eigen::VectorXd& ev, const char* name) {
    const double lo = ev.minCoeff();
    const double hi = ev.maxCoeff();
    if (!(lo > 0.0) || lo <= 1e-12 * hi) {
      throw PositivityError(std::string("delta_inf: ") + name + " is not positive definite");
    }
  };
  const auto ea = sym_eig(As);
  require_pd(ea.eigenvalues(), "first argument");
  require_pd(sym_eig(Bs).eigenvalues(), "second argument");

  const Matrix a_inv_sqrt = ea.eigenvectors() *
                            ea.eigenvalues().cwiseSqrt().cwiseInverse().asDiagonal() *
                            ea.eigenvectors().transpose();
  Matrix C = a_inv_sqrt * Bs * a_inv_sqrt;
  C = 0.5 * (C + C.transpose()).eval();
  const Vector mu = sym_eig(C).eigenvalues();
  return mu.array().log().abs().maxCoeff();
}

double spectral_radius(const Eigen::Ref<const Matrix>& L) {
  require_square(L, "spectral_radius");
  Eigen::EigenSolver<Matrix> es(L, /*computeEigenvectors=*/false);
  if (es.info() != Eigen::Success) throw ConditioningError("eigenvalue computation failed");
  return es.eigenvalues().cwiseAbs().maxCoeff();
}

bool is_stable(const Eigen::Ref<const Matrix>& L) {
  return L.allFinite() && spectral_radius(L) < 1.0 - kStabilityMargin;
}

double op_norm(const Eigen::Ref<const Matrix>& M) {
  if (M.size() == 0) return 0.0;
  Eigen::JacobiSVD<Matrix> svd(M);
  return svd.singularValues()(0);
}

double lambda_min(const Eigen::Ref<const Matrix>& M) {
  return sym_eig(symmetrized(M)).eigenvalues().minCoeff();
}

double lambda_max(const Eigen::Ref<const Matrix>& M) {
  return sym_eig(symmetrized(M)).eigenvalues().maxCoeff();
}

std::optional<StabilityCertificate> stability_certificate(const Eigen::Ref<const Matrix>& L,
                                                          int k_max) {
  require_square(L, "stability_certificate");
  if (k_max < 1) throw ParameterError("stability_certificate: k_max must be >= 1");
  const double radius = spectral_radius(L);
  if (!(radius < 1.0 - kStabilityMargin)) return std::nullopt;

  StabilityCertificate cert{1.0, 0.5 * (radius + 1.0), k_max};
  Matrix power = Matrix::Identity(L.rows(), L.cols());
  double rho_k = 1.0;
  for (int k = 1; k <= k_max; ++k) {
    power = (power * L).eval();
    rho_k *= cert.rho;
    cert.tau = std::max(cert.tau, op_norm(power) / rho_k);
  }
  return cert;
}

}  // namespace lspi
