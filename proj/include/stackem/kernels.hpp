#pragma once

#include <cmath>
#include <limits>

#include "stackem/common.hpp"

namespace stackem {

// Matern kernel with smoothness nu and a diagonal matrix of per-dimension
// lengthscales.
struct KernelSpec {
  double nu = 1.5;
  Vector lengthscales;

  KernelSpec() = default;
  KernelSpec(double nu_, Vector lengthscales_)
      : nu(nu_), lengthscales(std::move(lengthscales_)) {
    validate();
  }

  void validate() const {
    if (!(nu > 0.0)) throw std::invalid_argument("KernelSpec: nu must be > 0");
    if (lengthscales.size() < 1)
      throw std::invalid_argument("KernelSpec: need at least one lengthscale");
    for (Eigen::Index j = 0; j < lengthscales.size(); ++j)
      if (!(lengthscales[j] > 0.0))
        throw std::invalid_argument("KernelSpec: lengthscales must be > 0");
  }

  int dim() const { return static_cast<int>(lengthscales.size()); }

  // Spectral norm of the diagonal inverse-lengthscale matrix.
  double inv_lengthscale_norm() const {
    return 1.0 / lengthscales.minCoeff();
  }
};

namespace detail {

inline bool near_half_integer(double nu, int& twice_nu) {
  double t = 2.0 * nu;
  double r = std::round(t);
  if (std::abs(t - r) < 1e-12 && static_cast<long>(r) % 2 == 1) {
    twice_nu = static_cast<int>(r);
    return true;
  }
  return false;
}

// Closed forms for nu = k + 1/2. The polynomial coefficients follow the
// standard finite-sum expansion of K_{k+1/2}.
inline double matern_half_integer(double t, int twice_nu) {
  switch (twice_nu) {
    case 1:  // nu = 1/2
      return std::exp(-t);
    case 3: {  // nu = 3/2
      return (1.0 + t) * std::exp(-t);
    }
    case 5: {  // nu = 5/2
      return (1.0 + t + t * t / 3.0) * std::exp(-t);
    }
    case 7: {  // nu = 7/2
      double t2 = t * t;
      return (1.0 + t + 2.0 / 5.0 * t2 + t2 * t / 15.0) * std::exp(-t);
    }
    case 9: {  // nu = 9/2
      double t2 = t * t;
      return (1.0 + t + 3.0 / 7.0 * t2 + 2.0 / 21.0 * t2 * t +
              t2 * t2 / 105.0) *
             std::exp(-t);
    }
    default: {
      // General half-integer: K_{k+1/2}(t) has an elementary finite sum.
      int k = (twice_nu - 1) / 2;
      // phi = exp(-t) * k!/(2k)! * sum_{i=0}^{k} (k+i)!/(i!(k-i)!) (2t)^{k-i}
      double lg = std::lgamma(k + 1.0) - std::lgamma(2.0 * k + 1.0);
      double sum = 0.0;
      for (int i = 0; i <= k; ++i) {
        double lterm = std::lgamma(k + i + 1.0) - std::lgamma(i + 1.0) -
                       std::lgamma(k - i + 1.0);
        sum += std::exp(lterm + (k - i) * std::log(2.0 * t));
      }
      return std::exp(-t + lg) * sum;
    }
  }
}

}  // namespace detail

// phi_nu(r) = 2^{1-nu}/Gamma(nu) (r sqrt(2 nu))^nu K_nu(r sqrt(2 nu)),
// with phi_nu(0) = 1 by continuity.
inline double matern_phi(double r, double nu) {
  if (r < 0.0) throw std::invalid_argument("matern_phi: r must be >= 0");
  if (!(nu > 0.0)) throw std::invalid_argument("matern_phi: nu must be > 0");
  double t = r * std::sqrt(2.0 * nu);
  if (t == 0.0) return 1.0;
  if (t > 700.0) return 0.0;  // exp underflow guard
  int twice_nu = 0;
  if (detail::near_half_integer(nu, twice_nu))
    return detail::matern_half_integer(t, twice_nu);
  return std::pow(2.0, 1.0 - nu) / std::tgamma(nu) * std::pow(t, nu) *
         std::cyl_bessel_k(nu, t);
}

// General-nu route without the half-integer fast path; exposed so tests can
// pin the Bessel evaluation against the closed forms.
inline double matern_phi_general(double r, double nu) {
  double t = r * std::sqrt(2.0 * nu);
  if (t == 0.0) return 1.0;
  if (t > 700.0) return 0.0;
  return std::pow(2.0, 1.0 - nu) / std::tgamma(nu) * std::pow(t, nu) *
         std::cyl_bessel_k(nu, t);
}

inline double scaled_distance(const KernelSpec& spec, const Vector& x,
                              const Vector& y) {
  if (x.size() != spec.lengthscales.size() ||
      y.size() != spec.lengthscales.size())
    throw DimensionMismatch("kernel_eval: point dimension mismatch");
  double s = 0.0;
  for (Eigen::Index j = 0; j < x.size(); ++j) {
    double u = (x[j] - y[j]) / spec.lengthscales[j];
    s += u * u;
  }
  return std::sqrt(s);
}

inline double kernel_eval(const KernelSpec& spec, const Vector& x,
                          const Vector& y) {
  return matern_phi(scaled_distance(spec, x, y), spec.nu);
}

// Kernel matrix between row-point sets A (m x d) and B (n x d).
inline Matrix kernel_cross(const KernelSpec& spec, const Matrix& A,
                           const Matrix& B) {
  if (A.cols() != spec.dim() || B.cols() != spec.dim())
    throw DimensionMismatch("kernel_cross: point dimension mismatch");
  Matrix K(A.rows(), B.rows());
  for (Eigen::Index i = 0; i < A.rows(); ++i)
    for (Eigen::Index j = 0; j < B.rows(); ++j)
      K(i, j) = kernel_eval(spec, A.row(i).transpose(), B.row(j).transpose());
  return K;
}

// Cholesky factorization of the kernel matrix plus the smallest jitter from
// the ladder {1e-10,...,1e-6} x (mean diagonal) that renders it SPD.
struct GramFactor {
  Matrix phi;           // unjittered kernel matrix
  Eigen::LLT<Matrix> llt;
  double jitter = 0.0;  // delta actually added to the diagonal

  Vector solve(const Vector& b) const { return llt.solve(b); }
  Matrix solve(const Matrix& B) const { return llt.solve(B); }
  Eigen::Index n() const { return phi.rows(); }
};

inline GramFactor gram_matrix(const KernelSpec& spec, const Matrix& X) {
  if (X.rows() < 1) throw std::invalid_argument("gram_matrix: empty design");
  GramFactor g;
  g.phi = kernel_cross(spec, X, X);
  double mean_diag = g.phi.diagonal().mean();
  for (double scale : {1e-10, 1e-9, 1e-8, 1e-7, 1e-6}) {
    double delta = scale * mean_diag;
    Matrix jittered = g.phi;
    jittered.diagonal().array() += delta;
    g.llt.compute(jittered);
    if (g.llt.info() == Eigen::Success) {
      // LLT can succeed numerically on near-singular input; require the
      // pivots to stay meaningfully positive.
      double min_pivot = g.llt.matrixL().toDenseMatrix().diagonal().minCoeff();
      if (min_pivot > 1e-12) {
        g.jitter = delta;
        return g;
      }
    }
  }
  throw FactorizationFailure(
      "gram_matrix: kernel matrix not SPD at jitter ceiling (duplicate or "
      "near-duplicate points?)");
}

}  // namespace stackem
