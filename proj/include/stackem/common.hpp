#pragma once

#include <Eigen/Dense>
#include <stdexcept>
#include <string>

namespace stackem {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

// Hyper-rectangular input domain.
struct Rect {
  Vector lo;
  Vector hi;

  Rect() = default;
  Rect(Vector lo_, Vector hi_) : lo(std::move(lo_)), hi(std::move(hi_)) {
    if (lo.size() != hi.size())
      throw std::invalid_argument("Rect: bound dimension mismatch");
    for (Eigen::Index j = 0; j < lo.size(); ++j)
      if (!(lo[j] < hi[j]))
        throw std::invalid_argument("Rect: lower bound must be below upper");
  }

  static Rect unit_cube(int d) {
    return Rect(Vector::Zero(d), Vector::Ones(d));
  }

  int dim() const { return static_cast<int>(lo.size()); }

  double side(int j) const { return hi[j] - lo[j]; }

  double volume() const {
    double v = 1.0;
    for (Eigen::Index j = 0; j < lo.size(); ++j) v *= hi[j] - lo[j];
    return v;
  }
};

enum class Norm { L2, Linf };

inline std::string to_string(Norm n) { return n == Norm::L2 ? "l2" : "linf"; }

inline Norm norm_from_string(const std::string& s) {
  if (s == "l2" || s == "L2") return Norm::L2;
  if (s == "linf" || s == "Linf" || s == "LInf") return Norm::Linf;
  throw std::invalid_argument("unknown norm: " + s);
}

struct DimensionMismatch : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

struct FactorizationFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BudgetInfeasible : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct MaxLevelsExceeded : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct SimulatorError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ProtocolError : SimulatorError {
  using SimulatorError::SimulatorError;
};

struct SimulatorCrash : SimulatorError {
  using SimulatorError::SimulatorError;
};

struct SimulatorTimeout : SimulatorError {
  using SimulatorError::SimulatorError;
};

}  // namespace stackem
