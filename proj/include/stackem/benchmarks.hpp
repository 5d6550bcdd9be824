#pragma once

#include <cmath>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <utility>

#include "stackem/common.hpp"

namespace stackem {

struct EvalResult {
  double value = 0.0;
  double cost = 0.0;
};

// Abstraction over the multi-fidelity computer code f_l(x). Implementations
// must be deterministic in (level, x) and have cost strictly increasing in
// the level.
class Simulator {
 public:
  virtual ~Simulator() = default;
  virtual EvalResult evaluate(int level, const Vector& x) = 0;
  virtual int max_level() const { return 10; }
  virtual double cost_per_run(int level) const = 0;
  virtual bool concurrency_safe() const { return false; }
  // Analytic limit f_inf, when available (built-in test families).
  virtual std::optional<double> exact_limit(const Vector& x) const {
    (void)x;
    return std::nullopt;
  }
};

// ---------------------------------------------------------------------------
// Currin test family on [0,1]^2.

inline double currin_limit(double x1, double x2) {
  double bracket = x2 == 0.0 ? 1.0 : 1.0 - std::exp(-1.0 / (2.0 * x2));
  double num = 2300.0 * x1 * x1 * x1 + 1900.0 * x1 * x1 + 2092.0 * x1 + 60.0;
  double den = 100.0 * x1 * x1 * x1 + 500.0 * x1 * x1 + 4.0 * x1 + 20.0;
  return bracket * num / den;
}

inline double currin_discrepancy(double x1, double x2) {
  return std::exp(-1.4 * x1) * std::cos(3.5 * M_PI * x2);
}

inline double currin_level(int l, const Vector& x, double alpha = 1.0,
                           double xi0 = 16.0, int T = 2) {
  if (l < 1) throw std::invalid_argument("currin_level: l >= 1");
  if (x.size() != 2) throw DimensionMismatch("currin_level: need d = 2");
  double xi = xi0 * std::pow(double(T), -l);
  return currin_limit(x[0], x[1]) +
         std::pow(xi, alpha) * currin_discrepancy(x[0], x[1]);
}

// ---------------------------------------------------------------------------
// Generic synthetic family f_l = f_inf + xi_l^alpha g, with cost model
// C_l = cost_base * xi_l^{-beta}.

class SyntheticFamily : public Simulator {
 public:
  SyntheticFamily(std::function<double(const Vector&)> f_inf,
                  std::function<double(const Vector&)> discrepancy,
                  double alpha, double xi0, int T, double beta,
                  double cost_base = 1.0, int max_level = 12)
      : f_inf_(std::move(f_inf)),
        g_(std::move(discrepancy)),
        alpha_(alpha),
        xi0_(xi0),
        T_(T),
        beta_(beta),
        cost_base_(cost_base),
        max_level_(max_level) {}

  double xi(int level) const { return xi0_ * std::pow(double(T_), -level); }

  double level_value(int level, const Vector& x) const {
    return f_inf_(x) + std::pow(xi(level), alpha_) * g_(x);
  }

  EvalResult evaluate(int level, const Vector& x) override {
    if (level < 1 || level > max_level_)
      throw SimulatorError("SyntheticFamily: level out of range");
    return {level_value(level, x), cost_per_run(level)};
  }

  double cost_per_run(int level) const override {
    return cost_base_ * std::pow(xi(level), -beta_);
  }

  int max_level() const override { return max_level_; }
  bool concurrency_safe() const override { return true; }

  std::optional<double> exact_limit(const Vector& x) const override {
    return f_inf_(x);
  }

  double alpha() const { return alpha_; }
  double beta() const { return beta_; }
  int T() const { return T_; }
  double xi0() const { return xi0_; }

 private:
  std::function<double(const Vector&)> f_inf_;
  std::function<double(const Vector&)> g_;
  double alpha_, xi0_;
  int T_;
  double beta_, cost_base_;
  int max_level_;
};

// Currin with the geometric ladder xi_l = 16 * 2^{-l} and explicit cost
// C_l = 4^l (so beta = 2 against the ladder, with cost base 1/16^2).
class CurrinSimulator : public Simulator {
 public:
  explicit CurrinSimulator(double alpha = 1.0, double xi0 = 16.0, int T = 2)
      : alpha_(alpha), xi0_(xi0), T_(T) {}

  EvalResult evaluate(int level, const Vector& x) override {
    if (level < 1 || level > max_level())
      throw SimulatorError("CurrinSimulator: level out of range");
    return {currin_level(level, x, alpha_, xi0_, T_), cost_per_run(level)};
  }

  double cost_per_run(int level) const override {
    return std::pow(4.0, level);
  }

  int max_level() const override { return 16; }
  bool concurrency_safe() const override { return true; }

  std::optional<double> exact_limit(const Vector& x) const override {
    if (x.size() != 2) throw DimensionMismatch("currin: need d = 2");
    return currin_limit(x[0], x[1]);
  }

 private:
  double alpha_, xi0_;
  int T_;
};

// 1-d family whose limit is the closed-form integral of the Poisson membrane
// solution, with a constructed smooth discrepancy of known rate. Exercises
// the smooth high-fidelity-dominated setting without needing a PDE solver.
inline std::unique_ptr<SyntheticFamily> make_poisson_like(
    double alpha = 1.0, double xi0 = 0.4, int T = 2, double beta = 0.37) {
  auto f_inf = [](const Vector& x) {
    return 2.0 * (std::exp(x[0]) + 1.0) / (x[0] * x[0] + M_PI * M_PI);
  };
  auto g = [](const Vector& x) { return 0.1 * std::cos(2.0 * x[0]); };
  return std::make_unique<SyntheticFamily>(f_inf, g, alpha, xi0, T, beta,
                                           /*cost_base=*/1.0);
}

inline Rect poisson_like_domain() {
  Vector lo(1), hi(1);
  lo << -1.0;
  hi << 1.0;
  return Rect(lo, hi);
}

}  // namespace stackem
