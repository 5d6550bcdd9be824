#pragma once

#include <optional>
#include <vector>

#include "stackem/rkhs.hpp"

namespace stackem {

// One fidelity level of the multi-level emulator: the nested design prefix,
// the refinement data z_l = (f_l - f_{l-1})|_{X_l} (f_0 == 0), and the
// fitted per-level interpolant with its norm diagnostics.
struct LevelState {
  int level = 0;             // l >= 1
  double xi = 0.0;           // xi_0 * T^{-l}
  double cost_per_run = 0.0;
  Interpolant interp;        // carries design X_l and refinement data z_l
  double norm_estimate = 0.0;  // (z^T Phi^{-1} z)^{1/2}
  double sigma_norm = 0.0;     // ||sigma_l|| under the configured norm

  int n() const { return interp.n(); }
  const Matrix& design() const { return interp.design; }
  const Vector& z() const { return interp.z; }
};

struct MultiLevelEmulator {
  std::vector<LevelState> levels;  // l = 1..L in order
  double xi0 = 0.0;
  int T = 2;
  std::optional<double> alpha_hat;  // absent while L < 3

  int num_levels() const { return static_cast<int>(levels.size()); }

  double predict(const Vector& x) const {
    double s = 0.0;
    for (const LevelState& lv : levels) s += lv.interp.predict(x);
    return s;
  }

  // Sum over levels of ||sigma_l|| * RKHS-norm estimate.
  double emulation_error_bound() const {
    double s = 0.0;
    for (const LevelState& lv : levels) s += lv.sigma_norm * lv.norm_estimate;
    return s;
  }

  // f_hat(x) +/- ( |P_L(x)| / (T^alpha - 1) + sum_l sigma_l(x) * norm_l ).
  std::pair<double, double> error_interval(const Vector& x,
                                           double alpha) const {
    if (num_levels() < 2)
      throw std::invalid_argument("error_interval: need at least 2 levels");
    if (!(alpha > 0.0))
      throw std::invalid_argument("error_interval: alpha must be > 0");
    double center = 0.0;
    double sigma_part = 0.0;
    for (const LevelState& lv : levels) {
      center += lv.interp.predict(x);
      sigma_part += lv.interp.power_function(x) * lv.norm_estimate;
    }
    double top = std::abs(levels.back().interp.predict(x)) /
                 (std::pow(double(T), alpha) - 1.0);
    double half = top + sigma_part;
    return {center - half, center + half};
  }
};

}  // namespace stackem
