#pragma once

#include <cstddef>
#include <vector>

namespace paircam {

// Largest pair count any truncated sum may reach; rows of Pascal's triangle
// are cached up to 2*kMaxPairs (electron indices run to 2m).
inline constexpr int kMaxPairs = 200;

namespace detail {

inline const std::vector<std::vector<double>>& pascal_table() {
  static const std::vector<std::vector<double>> table = [] {
    const std::size_t rows = 2 * kMaxPairs + 1;
    std::vector<std::vector<double>> t(rows);
    for (std::size_t n = 0; n < rows; ++n) {
      t[n].resize(n + 1);
      t[n][0] = t[n][n] = 1.0;
      for (std::size_t k = 1; k < n; ++k) t[n][k] = t[n - 1][k - 1] + t[n - 1][k];
    }
    return t;
  }();
  return table;
}

} // namespace detail

// binom(n, k) with the convention binom = 0 for k < 0 or k > n.
// Exact for n <= 56; relative error <= ~3e-14 up to n = 400.
inline double binom(int n, int k) {
  if (k < 0 || n < 0 || k > n) return 0.0;
  return detail::pascal_table()[static_cast<std::size_t>(n)][static_cast<std::size_t>(k)];
}

// x^n for integer n >= 0 with ipow(x, 0) == 1 even at x == 0.
inline double ipow(double x, int n) {
  double r = 1.0;
  double b = x;
  for (int e = n; e > 0; e >>= 1) {
    if (e & 1) r *= b;
    b *= b;
  }
  return r;
}

} // namespace paircam
