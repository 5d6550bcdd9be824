#pragma once

#include <algorithm>
#include <future>
#include <map>
#include <optional>
#include <vector>

#include "stackem/benchmarks.hpp"
#include "stackem/multilevel.hpp"

namespace stackem {

struct StackingConfig {
  double epsilon = 1.0;
  Norm norm = Norm::L2;
  Rect domain;
  int n0 = 10;               // pilot size, 5d..10d suggested
  int T = 2;
  double xi0 = 16.0;
  int max_levels = 10;
  std::vector<double> nu_grid = {0.5, 1.5, 2.5, 3.5, 4.5};
  int mc_budget = 2000;      // L2 Monte Carlo points
  int linf_budget = 4096;    // Linf Sobol candidates
  std::uint64_t seed = 0;
  double mu_bound_rel_tol = 0.01;  // accept when bound within 1% of eps/2
  long max_total_points = 1'000'000;
  std::optional<double> alpha_pinned;  // skip estimation when known a priori

  void validate() const {
    if (!(epsilon > 0)) throw std::invalid_argument("epsilon must be > 0");
    if (n0 < 1) throw std::invalid_argument("n0 must be >= 1");
    if (T < 2) throw std::invalid_argument("T must be >= 2");
    if (!(xi0 > 0)) throw std::invalid_argument("xi0 must be > 0");
    if (max_levels < 1) throw std::invalid_argument("max_levels must be >= 1");
    if (domain.dim() < 1) throw std::invalid_argument("domain required");
  }

  int norm_budget() const {
    return norm == Norm::L2 ? mc_budget : linf_budget;
  }

  double xi(int level) const { return xi0 * std::pow(double(T), -level); }
};

// One row block of the per-stage campaign summary.
struct StageReport {
  int L = 0;
  std::vector<double> xi;          // per level 1..L
  std::vector<double> cost;        // C_l
  std::vector<int> n;              // realized n_l
  std::optional<double> alpha_hat;
  std::optional<double> simulation_bound;
  double emulation_bound = 0.0;
  double cumulative_cost = 0.0;
  bool converged = false;
};

// Ledger of every simulator call, keyed by (level, sequence index).
struct CallLedger {
  struct Entry {
    int level;
    int point_index;
    double cost;
  };
  std::vector<Entry> calls;
  double total_cost = 0.0;

  void record(int level, int index, double cost) {
    calls.push_back({level, index, cost});
    total_cost += cost;
  }

  bool has_duplicates() const {
    std::map<std::pair<int, int>, int> seen;
    for (const Entry& e : calls)
      if (++seen[{e.level, e.point_index}] > 1) return true;
    return false;
  }
};

// ---------------------------------------------------------------------------
// Sample-size allocation.

struct LevelAllocationInput {
  KernelSpec spec;
  double cost_per_run = 0.0;
  double norm_estimate = 0.0;
};

// r_l = ( ||Theta_l^{-1}||^{nu_l} * norm_l / C_l )^{d/(nu_min + d)}.
inline std::vector<double> allocation_ratios(
    const std::vector<LevelAllocationInput>& levels, int d) {
  if (levels.empty()) return {};
  double nu_min = levels[0].spec.nu;
  for (const auto& lv : levels) nu_min = std::min(nu_min, lv.spec.nu);
  std::vector<double> r;
  r.reserve(levels.size());
  for (const auto& lv : levels) {
    if (!(lv.cost_per_run > 0))
      throw std::invalid_argument("allocation_ratios: cost must be > 0");
    if (lv.norm_estimate < 0)
      throw std::invalid_argument("allocation_ratios: negative norm estimate");
    double base = std::pow(lv.spec.inv_lengthscale_norm(), lv.spec.nu) *
                  lv.norm_estimate / lv.cost_per_run;
    r.push_back(std::pow(base, double(d) / (nu_min + double(d))));
  }
  return r;
}

// Floor/monotonicity clamps: n_l = max(floor(mu r_l), floor_n) swept from the
// finest level down so that n_1 >= ... >= n_L >= floor_n.
inline std::vector<int> realize_sample_sizes(const std::vector<double>& ratios,
                                             double mu, int floor_n) {
  const int L = static_cast<int>(ratios.size());
  std::vector<int> n(L);
  for (int l = 0; l < L; ++l)
    n[l] = std::max(static_cast<int>(std::floor(mu * ratios[l])), floor_n);
  for (int l = L - 2; l >= 0; --l) n[l] = std::max(n[l], n[l + 1]);
  return n;
}

struct MuResult {
  double mu = 0.0;
  std::vector<int> n;
  double achieved_bound = 0.0;
};

// Smallest mu (within search tolerance) whose realized integer allocation
// drives sum_l ||sigma_l(n_l)|| * norm_l below eps/2. The bound is a step
// function of mu, monotone non-increasing because designs are nested
// prefixes, so doubling + bisection on the feasibility indicator is exact.
// Power-function norm over prefix designs, amortized: because designs are
// nested prefixes, the Cholesky factor of the n-point Gram matrix is the
// leading block of the factor at any larger capacity, and the forward
// substitution v(x) = L^{-1}k(x) is prefix-consistent. One factorization at
// the largest probed size therefore yields sigma norms for every smaller n.
class PrefixSigmaNorm {
 public:
  PrefixSigmaNorm(KernelSpec spec, Norm norm, const Rect& domain, int budget,
                  std::uint64_t seed)
      : spec_(std::move(spec)), norm_(norm), domain_(domain) {
    P_ = norm_ == Norm::L2 ? detail::uniform_points(domain, budget, seed)
                           : sobol_prefix(domain.dim(), budget, domain);
  }

  double operator()(int n) {
    auto it = cache_.find(n);
    if (it != cache_.end()) return it->second;
    ensure_capacity(n);
    double result;
    if (norm_ == Norm::L2) {
      double mean_sq = 0.0;
      for (Eigen::Index j = 0; j < P_.rows(); ++j)
        mean_sq += std::max(0.0, 1.0 - V_.col(j).head(n).squaredNorm());
      mean_sq /= double(P_.rows());
      result = std::sqrt(domain_.volume() * mean_sq);
    } else {
      double worst = 0.0;
      for (Eigen::Index j = 0; j < P_.rows(); ++j)
        worst = std::max(worst, 1.0 - V_.col(j).head(n).squaredNorm());
      result = std::sqrt(std::max(0.0, worst));
    }
    cache_[n] = result;
    return result;
  }

 private:
  void ensure_capacity(int n) {
    if (n <= capacity_) return;
    Matrix X = sobol_prefix(domain_.dim(), n, domain_);
    GramFactor g = gram_matrix(spec_, X);
    Matrix K = kernel_cross(spec_, X, P_);
    V_ = g.llt.matrixL().solve(K);
    capacity_ = n;
  }

  KernelSpec spec_;
  Norm norm_;
  Rect domain_;
  Matrix P_;   // norm-evaluation candidate points
  Matrix V_;   // L^{-1} K at current capacity
  int capacity_ = 0;
  std::map<int, double> cache_;
};

inline MuResult find_mu(const std::vector<LevelAllocationInput>& levels,
                        const std::vector<double>& ratios,
                        const StackingConfig& cfg, int floor_n,
                        const std::vector<int>& n_min = {}) {
  const int L = static_cast<int>(levels.size());

  std::vector<PrefixSigmaNorm> sigma;
  sigma.reserve(L);
  for (const auto& lv : levels)
    sigma.emplace_back(lv.spec, cfg.norm, cfg.domain, cfg.norm_budget(),
                       cfg.seed);
  auto sigma_norm = [&](int l, int n) { return sigma[l](n); };

  auto clamp_min = [&](std::vector<int> n) {
    if (!n_min.empty())
      for (int l = 0; l < L; ++l) n[l] = std::max(n[l], n_min[l]);
    for (int l = L - 2; l >= 0; --l) n[l] = std::max(n[l], n[l + 1]);
    return n;
  };

  auto bound_for = [&](const std::vector<int>& n) {
    double b = 0.0;
    for (int l = 0; l < L; ++l)
      b += sigma_norm(l, n[l]) * levels[l].norm_estimate;
    return b;
  };

  const double target = cfg.epsilon / 2.0;

  std::vector<int> n_floor = clamp_min(realize_sample_sizes(ratios, 0.0, floor_n));
  double floor_bound = bound_for(n_floor);
  if (floor_bound <= target) return {0.0, n_floor, floor_bound};

  bool any_positive = false;
  for (double r : ratios) any_positive |= r > 0;
  if (!any_positive)
    throw BudgetInfeasible(
        "find_mu: zero ratios but floor allocation misses the target");

  // Grow mu until feasible.
  double mu_hi = 1.0;
  std::vector<int> n_hi;
  double bound_hi = 0.0;
  while (true) {
    n_hi = clamp_min(realize_sample_sizes(ratios, mu_hi, floor_n));
    long total = 0;
    for (int v : n_hi) total += v;
    if (total > cfg.max_total_points)
      throw BudgetInfeasible(
          "find_mu: emulation bound cannot reach epsilon/2 within the point "
          "cap");
    bound_hi = bound_for(n_hi);
    if (bound_hi <= target) break;
    mu_hi *= 2.0;
  }

  // Bisect on the feasibility indicator.
  double mu_lo = mu_hi / 2.0;
  while (true) {
    std::vector<int> n_lo = clamp_min(realize_sample_sizes(ratios, mu_lo, floor_n));
    if (n_lo == n_hi) break;  // interval maps to one integer allocation
    double b_lo = bound_for(n_lo);
    if (b_lo <= target) {
      n_hi = n_lo;
      bound_hi = b_lo;
      mu_hi = mu_lo;
      if (bound_hi >= target * (1.0 - cfg.mu_bound_rel_tol)) break;
      mu_lo /= 2.0;
      continue;
    }
    double mid = 0.5 * (mu_lo + mu_hi);
    if (mid == mu_lo || mid == mu_hi) break;
    std::vector<int> n_mid = clamp_min(realize_sample_sizes(ratios, mid, floor_n));
    double b_mid = bound_for(n_mid);
    if (b_mid <= target) {
      mu_hi = mid;
      n_hi = n_mid;
      bound_hi = b_mid;
      if (bound_hi >= target * (1.0 - cfg.mu_bound_rel_tol)) break;
    } else {
      mu_lo = mid;
    }
  }
  return {mu_hi, n_hi, bound_hi};
}

// ---------------------------------------------------------------------------
// Richardson-extrapolation machinery.

// alpha_hat from nested evaluations: f_values[l] holds f_{l+1} at the first
// n[l] sequence points (prefix designs make f_{l-1}, f_{l-2} available on
// X_l). Points with vanishing refinement are skipped.
inline double estimate_alpha(const std::vector<Vector>& f_values,
                             const std::vector<int>& n, int T) {
  const int L = static_cast<int>(f_values.size());
  if (L < 3) throw std::invalid_argument("estimate_alpha: need L >= 3");
  if (static_cast<int>(n.size()) != L)
    throw std::invalid_argument("estimate_alpha: size mismatch");
  double outer = 0.0;
  for (int l = 3; l <= L; ++l) {
    const Vector& fl = f_values[l - 1];
    const Vector& fm = f_values[l - 2];
    const Vector& fp = f_values[l - 3];
    double inner = 0.0;
    int kept = 0;
    for (int i = 0; i < n[l - 1]; ++i) {
      double denom = fl[i] - fm[i];
      if (std::abs(denom) < 1e-12 * (1.0 + std::abs(fl[i]))) continue;
      inner += std::log(std::abs((fm[i] - fp[i]) / denom));
      ++kept;
    }
    if (kept == 0)
      throw std::runtime_error(
          "estimate_alpha: all refinements vanish at level " +
          std::to_string(l));
    outer += inner / (double(kept) * std::log(double(T)));
  }
  return outer / double(L - 2);
}

// ||P_L|| / (T^alpha - 1), the stopping-rule estimate of ||f_inf - f_L||.
inline double simulation_error_bound(const Interpolant& top_level, int T,
                                     double alpha, Norm norm,
                                     const Rect& domain, int budget,
                                     std::uint64_t seed) {
  if (!(alpha > 0)) throw std::invalid_argument("alpha must be > 0");
  if (T < 2) throw std::invalid_argument("T must be >= 2");
  double norm_pl = detail::function_norm(
      [&](const Vector& x) { return top_level.predict(x); }, norm, domain,
      budget, seed);
  return norm_pl / (std::pow(double(T), alpha) - 1.0);
}

// ---------------------------------------------------------------------------
// Theoretical allocation / cost-regime classifier.

enum class CostRegime { LowFidelityDominated, Balanced, HighFidelityDominated };

inline std::string to_string(CostRegime r) {
  switch (r) {
    case CostRegime::LowFidelityDominated: return "low-fidelity-dominated";
    case CostRegime::Balanced: return "balanced";
    case CostRegime::HighFidelityDominated: return "high-fidelity-dominated";
  }
  return "?";
}

struct TheoreticalAllocation {
  std::vector<double> n_proportional;  // n_l up to a common constant
  CostRegime regime = CostRegime::Balanced;
  double multilevel_cost_exponent = 0.0;  // exponent of epsilon in C_tot
  bool log_factor = false;                // extra |log eps|^{1+d/nu} factor
  double single_fidelity_exponent = 0.0;
};

inline TheoreticalAllocation theoretical_allocation(
    double alpha, double beta, double nu, int d,
    const std::vector<double>& xi_list) {
  if (!(alpha > 0) || !(beta > 0) || !(nu > 0) || d < 1)
    throw std::invalid_argument("theoretical_allocation: positive params");
  TheoreticalAllocation out;
  double expo = (alpha + 2.0 * beta) * d / (2.0 * (nu + d));
  for (double xi : xi_list) {
    if (!(xi > 0))
      throw std::invalid_argument("theoretical_allocation: xi must be > 0");
    out.n_proportional.push_back(std::pow(xi, expo));
  }
  double lhs = alpha / beta;
  double rhs = 2.0 * nu / d;
  if (lhs > rhs) {
    out.regime = CostRegime::LowFidelityDominated;
    out.multilevel_cost_exponent = -double(d) / nu;
  } else if (lhs == rhs) {
    out.regime = CostRegime::Balanced;
    out.multilevel_cost_exponent = -double(d) / nu;
    out.log_factor = true;
  } else {
    out.regime = CostRegime::HighFidelityDominated;
    out.multilevel_cost_exponent =
        -double(d) / nu -
        (2.0 * beta * nu - alpha * d) / (2.0 * alpha * (nu + d));
  }
  out.single_fidelity_exponent = -beta / alpha - double(d) / (2.0 * nu);
  return out;
}

// ---------------------------------------------------------------------------
// The batch-sequential stacking loop.

struct StackingResult {
  MultiLevelEmulator emulator;
  std::vector<StageReport> stages;
  CallLedger ledger;
  bool converged = false;
  // Raw f_l evaluations on sequence prefixes, kept so a campaign can be
  // resumed with a tighter tolerance ("post" stacking).
  std::vector<Vector> level_values;
  std::vector<int> level_sizes;
};

namespace detail {

class StackingEngine {
 public:
  StackingEngine(Simulator& sim, const StackingConfig& cfg)
      : sim_(sim), cfg_(cfg), d_(cfg.domain.dim()) {
    cfg_.validate();
    floor_n_ = std::max(cfg_.n0, d_ + 1);
  }

  // Seed state from a previous campaign (resume with a smaller epsilon).
  void restore(const StackingResult& prev) {
    f_vals_ = prev.level_values;
    n_ = prev.level_sizes;
    ledger_ = prev.ledger;
  }

  StackingResult run() {
    StackingResult result;
    int L = std::max<int>(1, static_cast<int>(n_.size()));
    while (true) {
      if (L > cfg_.max_levels || L > sim_.max_level())
        throw MaxLevelsExceeded("stacking: no convergence within " +
                                std::to_string(std::min(
                                    cfg_.max_levels, sim_.max_level())) +
                                " levels");
      StageReport stage = run_stage(L);
      result.stages.push_back(stage);
      if (stage.converged) {
        result.converged = true;
        break;
      }
      ++L;
    }
    result.emulator = build_emulator();
    result.ledger = ledger_;
    result.level_values = f_vals_;
    result.level_sizes = n_;
    return result;
  }

 private:
  // Extend the evaluation cache of level l (1-based) to the first n points.
  void extend_level(int l, int n) {
    if (static_cast<int>(f_vals_.size()) < l) {
      f_vals_.resize(l);
      n_.resize(l, 0);
    }
    int have = n_[l - 1];
    if (n <= have) return;
    Matrix X = sobol_prefix(d_, n, cfg_.domain);
    Vector vals(n);
    vals.head(have) = f_vals_[l - 1].head(have);

    std::vector<int> missing;
    for (int i = have; i < n; ++i) missing.push_back(i);
    if (sim_.concurrency_safe() && missing.size() > 1) {
      const size_t chunk = 32;
      for (size_t start = 0; start < missing.size(); start += chunk) {
        size_t end = std::min(start + chunk, missing.size());
        std::vector<std::future<EvalResult>> futs;
        for (size_t k = start; k < end; ++k) {
          int i = missing[k];
          futs.push_back(std::async(std::launch::async, [&, i] {
            return sim_.evaluate(l, X.row(i).transpose());
          }));
        }
        for (size_t k = start; k < end; ++k) {
          EvalResult r = futs[k - start].get();  // keyed by point index
          vals[missing[k]] = r.value;
          ledger_.record(l, missing[k], r.cost);
        }
      }
    } else {
      for (int i : missing) {
        EvalResult r = sim_.evaluate(l, X.row(i).transpose());
        vals[i] = r.value;
        ledger_.record(l, i, r.cost);
      }
    }
    f_vals_[l - 1] = vals;
    n_[l - 1] = n;
  }

  Vector refinement(int l, int n) const {
    Vector z = f_vals_[l - 1].head(n);
    if (l > 1) z -= f_vals_[l - 2].head(n);
    return z;
  }

  struct LevelFit {
    KernelSpec spec;
    double norm_estimate;
  };

  LevelFit fit_level(int l, int n) const {
    Matrix X = sobol_prefix(d_, n, cfg_.domain);
    Vector z = refinement(l, n);
    LengthscaleSearchConfig ls;
    ls.domain = cfg_.domain;
    // LOOCV search is O(n^3) per candidate; cap the search data at a prefix
    // (still a nested quasi-uniform design) and keep the norm estimate on
    // the full data.
    KernelSpec spec =
        n <= kHyperSearchCap
            ? fit_hyperparameters(X, z, cfg_.nu_grid, ls)
            : fit_hyperparameters(X.topRows(kHyperSearchCap),
                                  z.head(kHyperSearchCap), cfg_.nu_grid, ls);
    Interpolant interp = fit(spec, X, z);
    return {spec, interp.rkhs_norm_estimate()};
  }

  static constexpr int kHyperSearchCap = 160;

  StageReport run_stage(int L) {
    // New level observes the pilot first; lower levels already have at least
    // pilot-size data, so all refinements are computable.
    for (int l = 1; l <= L; ++l)
      extend_level(l, std::max(l <= static_cast<int>(n_.size()) ? n_[l - 1] : 0,
                               cfg_.n0));

    // Stage-start estimates on current data.
    std::vector<LevelAllocationInput> alloc(L);
    for (int l = 1; l <= L; ++l) {
      LevelFit f = fit_level(l, n_[l - 1]);
      alloc[l - 1] = {f.spec, sim_.cost_per_run(l), f.norm_estimate};
    }
    std::vector<double> ratios = allocation_ratios(alloc, d_);
    MuResult mu = find_mu(alloc, ratios, cfg_, floor_n_, n_);

    // Collect the realized designs, coarse levels first so f_{l-1} is in
    // place before level l needs it.
    for (int l = 1; l <= L; ++l) extend_level(l, mu.n[l - 1]);
    specs_.assign(alloc.begin(), alloc.end());

    StageReport stage;
    stage.L = L;
    for (int l = 1; l <= L; ++l) {
      stage.xi.push_back(cfg_.xi(l));
      stage.cost.push_back(sim_.cost_per_run(l));
      stage.n.push_back(n_[l - 1]);
    }
    stage.emulation_bound = mu.achieved_bound;
    stage.cumulative_cost = ledger_.total_cost;

    if (L >= 3) {
      Vector z_top = refinement(L, n_[L - 1]);
      if (z_top.cwiseAbs().maxCoeff() <
          1e-12 * (1.0 + f_vals_[L - 1].cwiseAbs().maxCoeff())) {
        // Top refinement vanishes: P_L == 0 and the rule fires for any alpha.
        stage.simulation_bound = 0.0;
        stage.converged = true;
        return stage;
      }
      double alpha = cfg_.alpha_pinned ? *cfg_.alpha_pinned
                                       : estimate_alpha(f_vals_, n_, cfg_.T);
      stage.alpha_hat = alpha;
      Interpolant top =
          fit(specs_[L - 1].spec, sobol_prefix(d_, n_[L - 1], cfg_.domain),
              z_top);
      stage.simulation_bound =
          simulation_error_bound(top, cfg_.T, alpha, cfg_.norm, cfg_.domain,
                                 cfg_.norm_budget(), cfg_.seed);
      stage.converged = *stage.simulation_bound <= cfg_.epsilon / 2.0;
    }
    return stage;
  }

  MultiLevelEmulator build_emulator() {
    MultiLevelEmulator em;
    em.xi0 = cfg_.xi0;
    em.T = cfg_.T;
    const int L = static_cast<int>(n_.size());
    for (int l = 1; l <= L; ++l) {
      LevelState lv;
      lv.level = l;
      lv.xi = cfg_.xi(l);
      lv.cost_per_run = sim_.cost_per_run(l);
      const KernelSpec& spec = specs_[l - 1].spec;
      lv.interp =
          fit(spec, sobol_prefix(d_, n_[l - 1], cfg_.domain),
              refinement(l, n_[l - 1]));
      lv.norm_estimate = lv.interp.rkhs_norm_estimate();
      lv.sigma_norm = norm_of_power_function(lv.interp, cfg_.norm, cfg_.domain,
                                             cfg_.norm_budget(), cfg_.seed);
      em.levels.push_back(std::move(lv));
    }
    if (cfg_.alpha_pinned) {
      em.alpha_hat = *cfg_.alpha_pinned;
    } else if (L >= 3) {
      try {
        em.alpha_hat = estimate_alpha(f_vals_, n_, cfg_.T);
      } catch (const std::runtime_error&) {
        // All refinements vanished (exactly converged ladder): the rate is
        // unidentifiable and no extrapolation correction is needed.
      }
    }
    return em;
  }

  Simulator& sim_;
  StackingConfig cfg_;
  int d_;
  int floor_n_;
  std::vector<Vector> f_vals_;  // f_vals_[l-1][i] = f_l at sequence point i
  std::vector<int> n_;
  std::vector<LevelAllocationInput> specs_;
  CallLedger ledger_;
};

}  // namespace detail

inline StackingResult run_stacking(Simulator& sim, const StackingConfig& cfg) {
  detail::StackingEngine engine(sim, cfg);
  return engine.run();
}

// Post-stacking continuation: tighten the tolerance without discarding any
// collected runs.
inline StackingResult resume_stacking(Simulator& sim,
                                      const StackingConfig& cfg,
                                      const StackingResult& previous) {
  detail::StackingEngine engine(sim, cfg);
  engine.restore(previous);
  return engine.run();
}

}  // namespace stackem
