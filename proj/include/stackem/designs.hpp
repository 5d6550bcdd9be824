#pragma once

#include <array>
#include <cstdint>
#include <vector>

#include "stackem/common.hpp"

namespace stackem {

namespace detail {

// Direction-number seeds in "new-joe-kuo-6" row format: dimension, degree s,
// coefficient a, initial values m_1..m_s. Dimension 1 is the van der Corput
// sequence and needs no row.
struct SobolRow {
  int s;
  unsigned a;
  std::array<unsigned, 7> m;
};

inline constexpr int kSobolMaxDim = 20;
inline constexpr int kSobolBits = 32;

inline const SobolRow kSobolRows[kSobolMaxDim - 1] = {
    {1, 0, {1}},                      // d=2
    {2, 1, {1, 3}},                   // d=3
    {3, 1, {1, 3, 1}},                // d=4
    {3, 2, {1, 1, 1}},                // d=5
    {4, 1, {1, 1, 3, 3}},             // d=6
    {4, 4, {1, 3, 5, 13}},            // d=7
    {5, 2, {1, 1, 5, 5, 17}},         // d=8
    {5, 4, {1, 1, 5, 5, 5}},          // d=9
    {5, 7, {1, 1, 7, 11, 19}},        // d=10
    {5, 11, {1, 1, 5, 1, 1}},         // d=11
    {5, 13, {1, 1, 1, 3, 11}},        // d=12
    {5, 14, {1, 3, 5, 5, 31}},        // d=13
    {6, 1, {1, 3, 3, 9, 7, 49}},      // d=14
    {6, 13, {1, 1, 1, 15, 21, 21}},   // d=15
    {6, 16, {1, 3, 1, 13, 27, 49}},   // d=16
    {6, 19, {1, 1, 1, 15, 7, 5}},     // d=17
    {6, 22, {1, 3, 1, 15, 13, 25}},   // d=18
    {6, 25, {1, 1, 5, 5, 19, 61}},    // d=19
    {7, 1, {1, 3, 7, 11, 23, 15, 103}},  // d=20
};

inline std::array<std::uint32_t, kSobolBits> sobol_direction_numbers(int dim) {
  std::array<std::uint32_t, kSobolBits> v{};
  if (dim == 1) {
    for (int i = 0; i < kSobolBits; ++i)
      v[i] = std::uint32_t{1} << (kSobolBits - 1 - i);
    return v;
  }
  const SobolRow& row = kSobolRows[dim - 2];
  std::vector<std::uint64_t> m(row.m.begin(), row.m.begin() + row.s);
  for (int i = 0; i < row.s; ++i)
    v[i] = static_cast<std::uint32_t>(m[i] << (kSobolBits - 1 - i));
  for (int i = row.s; i < kSobolBits; ++i) {
    std::uint64_t mi = m[i - row.s] ^ (m[i - row.s] << row.s);
    for (int k = 1; k < row.s; ++k)
      if ((row.a >> (row.s - 1 - k)) & 1u) mi ^= m[i - k] << k;
    m.push_back(mi);
    v[i] = static_cast<std::uint32_t>(mi << (kSobolBits - 1 - i));
  }
  return v;
}

}  // namespace detail

// First n points of the unscrambled Gray-code Sobol' sequence (Joe-Kuo
// direction numbers), with the all-zeros point skipped, mapped affinely onto
// the domain. Prefix-consistent: the m-point output is a prefix of the
// n-point output for m <= n.
inline Matrix sobol_prefix(int d, int n, const Rect& domain) {
  if (d < 1 || d > detail::kSobolMaxDim)
    throw std::invalid_argument("sobol_prefix: dimension must be in [1, 20]");
  if (domain.dim() != d)
    throw DimensionMismatch("sobol_prefix: domain dimension mismatch");
  if (n < 1) throw std::invalid_argument("sobol_prefix: n must be >= 1");

  std::vector<std::array<std::uint32_t, detail::kSobolBits>> v(d);
  for (int j = 0; j < d; ++j) v[j] = detail::sobol_direction_numbers(j + 1);

  Matrix out(n, d);
  std::vector<std::uint32_t> state(d, 0);
  const double scale = 1.0 / 4294967296.0;  // 2^-32
  for (int k = 1; k <= n; ++k) {
    // Gray-code update: flip direction number at the ruler index of k.
    int c = 0;
    for (std::uint32_t kk = static_cast<std::uint32_t>(k); !(kk & 1u);
         kk >>= 1)
      ++c;
    for (int j = 0; j < d; ++j) {
      state[j] ^= v[j][c];
      double u = state[j] * scale;
      out(k - 1, j) = domain.lo[j] + u * domain.side(j);
    }
  }
  return out;
}

inline Matrix sobol_prefix(int d, int n) {
  return sobol_prefix(d, n, Rect::unit_cube(d));
}

// Numerical fill distance h_X = sup_x min_u ||x - x_u||, evaluated over a
// finite candidate set (a resolution^d grid for d <= 2, Sobol candidates
// otherwise). An underestimate of the true supremum.
inline double fill_distance(const Matrix& X, const Rect& domain,
                            int resolution = 256) {
  if (X.rows() < 1) throw std::invalid_argument("fill_distance: empty design");
  const int d = domain.dim();
  if (X.cols() != d)
    throw DimensionMismatch("fill_distance: design dimension mismatch");

  Matrix candidates;
  if (d <= 2) {
    if (resolution < 2) resolution = 2;
    long total = 1;
    for (int j = 0; j < d; ++j) total *= resolution;
    candidates.resize(total, d);
    for (long i = 0; i < total; ++i) {
      long rem = i;
      for (int j = 0; j < d; ++j) {
        long idx = rem % resolution;
        rem /= resolution;
        candidates(i, j) =
            domain.lo[j] + domain.side(j) * idx / double(resolution - 1);
      }
    }
  } else {
    candidates = sobol_prefix(d, 1 << 16, domain);
  }

  double h = 0.0;
  for (Eigen::Index i = 0; i < candidates.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index u = 0; u < X.rows(); ++u) {
      double dist = (candidates.row(i) - X.row(u)).norm();
      if (dist < best) best = dist;
    }
    if (best > h) h = best;
  }
  return h;
}

}  // namespace stackem
