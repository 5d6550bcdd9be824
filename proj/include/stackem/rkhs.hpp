#pragma once

#include <algorithm>
#include <functional>
#include <optional>
#include <random>
#include <vector>

#include "stackem/designs.hpp"
#include "stackem/kernels.hpp"

namespace stackem {

// Single-level RKHS interpolator of a response vector z on a design X.
struct Interpolant {
  KernelSpec spec;
  Matrix design;   // n x d
  Vector z;        // n
  Vector coeffs;   // (Phi + delta I)^{-1} z
  GramFactor factor;

  double jitter_used() const { return factor.jitter; }
  int n() const { return static_cast<int>(design.rows()); }
  int dim() const { return static_cast<int>(design.cols()); }

  double predict(const Vector& x) const {
    if (x.size() != design.cols())
      throw DimensionMismatch("predict: point dimension mismatch");
    double s = 0.0;
    for (Eigen::Index i = 0; i < design.rows(); ++i)
      s += coeffs[i] * kernel_eval(spec, x, design.row(i).transpose());
    return s;
  }

  // sqrt(max(0, Phi(x,x) - k(x)^T Phi^{-1} k(x))). Evaluated with the
  // jittered coefficients c = (Phi + delta I)^{-1} k, whose exact worst-case
  // error is 1 - k^T c - delta ||c||^2; the correction term cancels the
  // O(delta) bias so the value vanishes at design points.
  double power_function(const Vector& x) const {
    if (x.size() != design.cols())
      throw DimensionMismatch("power_function: point dimension mismatch");
    Vector k(design.rows());
    for (Eigen::Index i = 0; i < design.rows(); ++i)
      k[i] = kernel_eval(spec, x, design.row(i).transpose());
    Vector c = factor.solve(k);
    double s2 = 1.0 - k.dot(c) - factor.jitter * c.squaredNorm();
    return std::sqrt(std::max(0.0, s2));
  }

  // (z^T Phi^{-1} z)^{1/2}, the data-based RKHS norm estimate.
  double rkhs_norm_estimate() const {
    return std::sqrt(std::max(0.0, z.dot(coeffs)));
  }
};

inline Interpolant fit(const KernelSpec& spec, const Matrix& X,
                       const Vector& z) {
  if (X.rows() != z.size())
    throw std::invalid_argument("fit: |X| != |z|");
  if (X.rows() < 1) throw std::invalid_argument("fit: empty design");
  Interpolant interp;
  interp.spec = spec;
  interp.design = X;
  interp.z = z;
  interp.factor = gram_matrix(spec, X);
  interp.coeffs = interp.factor.solve(z);
  // Iterative refinement against the unjittered Gram matrix, with the
  // jittered factor as preconditioner: removes the O(jitter * ||c||)
  // interpolation residual at design points on ill-conditioned systems.
  for (int it = 0; it < 3; ++it) {
    Vector r = z - interp.factor.phi * interp.coeffs;
    if (r.norm() <= 1e-14 * (1.0 + z.norm())) break;
    Vector dc = interp.factor.solve(r);
    if (!dc.allFinite()) break;
    interp.coeffs += dc;
  }
  return interp;
}

// Closed-form LOOCV error (1/n) || Lambda^{-1} Phi^{-1} z ||^2 with
// Lambda = diag((Phi^{-1})_jj), using the same jittered Gram matrix as fit.
inline double loocv_error(const KernelSpec& spec, const Matrix& X,
                          const Vector& z) {
  const Eigen::Index n = X.rows();
  if (n < 2) throw std::invalid_argument("loocv_error: need n >= 2");
  if (z.size() != n) throw std::invalid_argument("loocv_error: |X| != |z|");
  GramFactor g = gram_matrix(spec, X);
  Vector c = g.solve(z);
  Matrix eye = Matrix::Identity(n, n);
  Matrix inv = g.solve(eye);
  double s = 0.0;
  for (Eigen::Index j = 0; j < n; ++j) {
    double resid = c[j] / inv(j, j);
    s += resid * resid;
  }
  return s / double(n);
}

// Norm of the power function over a domain: L2 via fixed-seed Monte Carlo
// (with the volume factor), Linf via the max over a Sobol candidate set.
namespace detail {

inline Matrix uniform_points(const Rect& domain, int budget,
                             std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unif(0.0, 1.0);
  Matrix P(budget, domain.dim());
  for (int i = 0; i < budget; ++i)
    for (int j = 0; j < domain.dim(); ++j)
      P(i, j) = domain.lo[j] + domain.side(j) * unif(rng);
  return P;
}

// Norm of an arbitrary pointwise-evaluable function over the domain under
// the L2/Linf estimation scheme shared by power-function and interpolator
// norms.
inline double function_norm(const std::function<double(const Vector&)>& f,
                            Norm norm, const Rect& domain, int budget,
                            std::uint64_t seed) {
  if (budget < 1) throw std::invalid_argument("function_norm: budget >= 1");
  if (norm == Norm::L2) {
    Matrix P = uniform_points(domain, budget, seed);
    double mean_sq = 0.0;
    for (Eigen::Index i = 0; i < P.rows(); ++i) {
      double v = f(P.row(i).transpose());
      mean_sq += v * v;
    }
    mean_sq /= double(P.rows());
    return std::sqrt(domain.volume() * mean_sq);
  }
  Matrix P = sobol_prefix(domain.dim(), budget, domain);
  double m = 0.0;
  for (Eigen::Index i = 0; i < P.rows(); ++i)
    m = std::max(m, std::abs(f(P.row(i).transpose())));
  return m;
}

// Power-function norm computed in one batched solve: sigma^2 at candidate
// points P is 1 - diag(K^T Phi^{-1} K) with K the design-to-candidate
// cross-kernel matrix.
inline double power_norm_batched(const KernelSpec& spec, const GramFactor& g,
                                 const Matrix& X, Norm norm,
                                 const Rect& domain, int budget,
                                 std::uint64_t seed) {
  if (budget < 1)
    throw std::invalid_argument("power_norm_batched: budget >= 1");
  Matrix P = norm == Norm::L2 ? uniform_points(domain, budget, seed)
                              : sobol_prefix(domain.dim(), budget, domain);
  Matrix K = kernel_cross(spec, X, P);  // n x m
  Matrix S = g.solve(K);
  auto s2 = [&](Eigen::Index j) {
    // jitter-corrected: see Interpolant::power_function
    return 1.0 - K.col(j).dot(S.col(j)) - g.jitter * S.col(j).squaredNorm();
  };
  if (norm == Norm::L2) {
    double mean_sq = 0.0;
    for (Eigen::Index j = 0; j < P.rows(); ++j)
      mean_sq += std::max(0.0, s2(j));
    mean_sq /= double(P.rows());
    return std::sqrt(domain.volume() * mean_sq);
  }
  double worst = 0.0;
  for (Eigen::Index j = 0; j < P.rows(); ++j) worst = std::max(worst, s2(j));
  return std::sqrt(std::max(0.0, worst));
}

}  // namespace detail

inline double norm_of_power_function(const Interpolant& interp, Norm norm,
                                     const Rect& domain, int budget,
                                     std::uint64_t seed) {
  return detail::power_norm_batched(interp.spec, interp.factor, interp.design,
                                    norm, domain, budget, seed);
}

// Same norm for a design alone (no response needed); used when sizing
// designs before any simulator run is committed.
inline double power_function_norm(const KernelSpec& spec, const Matrix& X,
                                  Norm norm, const Rect& domain, int budget,
                                  std::uint64_t seed) {
  GramFactor g = gram_matrix(spec, X);
  return detail::power_norm_batched(spec, g, X, norm, domain, budget, seed);
}

struct LengthscaleSearchConfig {
  Rect domain;
  int grid_size = 8;          // log-equispaced values per dimension
  double lo_frac = 0.05;      // lower bound as fraction of domain side
  double hi_frac = 2.0;       // upper bound as fraction of domain side
  int polish_iterations = 100;
};

namespace detail {

// Minimal Nelder-Mead for the log-lengthscale polish. Deterministic.
inline Vector nelder_mead(const std::function<double(const Vector&)>& f,
                          const Vector& x0, int max_iter, double step = 0.3) {
  const int d = static_cast<int>(x0.size());
  std::vector<Vector> simplex(d + 1, x0);
  std::vector<double> fv(d + 1);
  for (int i = 0; i < d; ++i) simplex[i + 1][i] += step;
  for (int i = 0; i <= d; ++i) fv[i] = f(simplex[i]);

  for (int iter = 0; iter < max_iter; ++iter) {
    // order ascending by value
    std::vector<int> idx(d + 1);
    for (int i = 0; i <= d; ++i) idx[i] = i;
    std::sort(idx.begin(), idx.end(),
              [&](int a, int b) { return fv[a] < fv[b]; });
    std::vector<Vector> s2;
    std::vector<double> f2;
    for (int i : idx) {
      s2.push_back(simplex[i]);
      f2.push_back(fv[i]);
    }
    simplex = s2;
    fv = f2;

    Vector centroid = Vector::Zero(d);
    for (int i = 0; i < d; ++i) centroid += simplex[i];
    centroid /= double(d);

    Vector xr = centroid + (centroid - simplex[d]);
    double fr = f(xr);
    if (fr < fv[0]) {
      Vector xe = centroid + 2.0 * (centroid - simplex[d]);
      double fe = f(xe);
      if (fe < fr) {
        simplex[d] = xe;
        fv[d] = fe;
      } else {
        simplex[d] = xr;
        fv[d] = fr;
      }
    } else if (fr < fv[d - 1]) {
      simplex[d] = xr;
      fv[d] = fr;
    } else {
      Vector xc = centroid + 0.5 * (simplex[d] - centroid);
      double fc = f(xc);
      if (fc < fv[d]) {
        simplex[d] = xc;
        fv[d] = fc;
      } else {
        for (int i = 1; i <= d; ++i) {
          simplex[i] = simplex[0] + 0.5 * (simplex[i] - simplex[0]);
          fv[i] = f(simplex[i]);
        }
      }
    }
  }
  int best = 0;
  for (int i = 1; i <= d; ++i)
    if (fv[i] < fv[best]) best = i;
  return simplex[best];
}

}  // namespace detail

// Select (nu, lengthscales) minimizing the closed-form LOOCV error: a
// deterministic two-stage search, coarse grid then one Nelder-Mead polish in
// log-lengthscale space from the best grid point.
inline KernelSpec fit_hyperparameters(const Matrix& X, const Vector& z,
                                      const std::vector<double>& nu_grid,
                                      const LengthscaleSearchConfig& cfg) {
  const int d = static_cast<int>(X.cols());
  if (X.rows() < 3)
    throw std::invalid_argument("fit_hyperparameters: need n >= 3");
  if (cfg.domain.dim() != d)
    throw DimensionMismatch("fit_hyperparameters: domain dimension mismatch");
  if (nu_grid.empty())
    throw std::invalid_argument("fit_hyperparameters: empty nu grid");

  auto objective = [&](double nu, const Vector& theta,
                       double& out) -> bool {
    try {
      out = loocv_error(KernelSpec(nu, theta), X, z);
      return std::isfinite(out);
    } catch (const FactorizationFailure&) {
      return false;
    }
  };

  // Per-dimension candidate values, log-equispaced over the scaled sides.
  std::vector<std::vector<double>> cand(d);
  for (int j = 0; j < d; ++j) {
    double lo = cfg.lo_frac * cfg.domain.side(j);
    double hi = cfg.hi_frac * cfg.domain.side(j);
    for (int g = 0; g < cfg.grid_size; ++g) {
      double t = cfg.grid_size == 1 ? 0.0 : double(g) / (cfg.grid_size - 1);
      cand[j].push_back(lo * std::pow(hi / lo, t));
    }
  }

  // Full tensor grid for d <= 2; shared grid index across dimensions above
  // that to keep the candidate count bounded.
  std::vector<Vector> theta_candidates;
  if (d <= 2) {
    long total = 1;
    for (int j = 0; j < d; ++j) total *= cfg.grid_size;
    for (long i = 0; i < total; ++i) {
      Vector th(d);
      long rem = i;
      for (int j = 0; j < d; ++j) {
        th[j] = cand[j][rem % cfg.grid_size];
        rem /= cfg.grid_size;
      }
      theta_candidates.push_back(th);
    }
  } else {
    for (int g = 0; g < cfg.grid_size; ++g) {
      Vector th(d);
      for (int j = 0; j < d; ++j) th[j] = cand[j][g];
      theta_candidates.push_back(th);
    }
  }

  double best_err = std::numeric_limits<double>::infinity();
  std::optional<KernelSpec> best;
  for (double nu : nu_grid) {
    for (const Vector& th : theta_candidates) {
      double err;
      if (objective(nu, th, err) && err < best_err) {
        best_err = err;
        best = KernelSpec(nu, th);
      }
    }
  }
  if (!best)
    throw FactorizationFailure(
        "fit_hyperparameters: every candidate failed factorization");

  // Local polish in log-space at the selected nu.
  Vector log_theta = best->lengthscales.array().log();
  Vector polished = detail::nelder_mead(
      [&](const Vector& lt) {
        Vector th = lt.array().exp();
        double err;
        if (!objective(best->nu, th, err))
          return std::numeric_limits<double>::infinity();
        return err;
      },
      log_theta, cfg.polish_iterations);
  Vector th = polished.array().exp();
  double polished_err;
  if (objective(best->nu, th, polished_err) && polished_err <= best_err)
    return KernelSpec(best->nu, th);
  return *best;
}

}  // namespace stackem
