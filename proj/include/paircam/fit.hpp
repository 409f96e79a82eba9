#pragma once

#include <array>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "paircam/grid.hpp"
#include "paircam/matrix.hpp"

namespace paircam {

struct FitNonConvergence : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FitResult {
  double amplitude = 0.0;       // peak value of the fitted surface
  double sigma_plus_um = 0.0;   // sum-coordinate width
  double sigma_minus_um = 0.0;  // difference-coordinate width
  double rms_residual = 0.0;    // rms misfit / amplitude
  int iterations = 0;
};

namespace fit_detail {

// Solve the 3x3 system M x = r by Gaussian elimination with partial pivoting.
inline std::array<double, 3> solve3(std::array<std::array<double, 3>, 3> m,
                                    std::array<double, 3> r) {
  for (int col = 0; col < 3; ++col) {
    int piv = col;
    for (int row = col + 1; row < 3; ++row)
      if (std::abs(m[row][col]) > std::abs(m[piv][col])) piv = row;
    std::swap(m[col], m[piv]);
    std::swap(r[col], r[piv]);
    if (m[col][col] == 0.0) throw FitNonConvergence("fit: singular normal equations");
    for (int row = col + 1; row < 3; ++row) {
      const double f = m[row][col] / m[col][col];
      for (int k = col; k < 3; ++k) m[row][k] -= f * m[col][k];
      r[row] -= f * r[col];
    }
  }
  std::array<double, 3> x{};
  for (int row = 2; row >= 0; --row) {
    double s = r[row];
    for (int k = row + 1; k < 3; ++k) s -= m[row][k] * x[k];
    x[row] = s / m[row][row];
  }
  return x;
}

struct Cell {
  double s;  // sum coordinate, um
  double d;  // difference coordinate, um
  double y;  // observed value
};

inline std::vector<Cell> collect_cells(const SquareMatrix& gamma, const PixelGrid& grid,
                                       bool skip_diagonal) {
  if (gamma.size() != grid.n_pixels) throw std::invalid_argument("fit: grid size mismatch");
  std::vector<Cell> cells;
  cells.reserve(gamma.size() * gamma.size());
  for (std::size_t i = 0; i < gamma.size(); ++i) {
    const double xi = grid.centered_um(i);
    for (std::size_t j = 0; j < gamma.size(); ++j) {
      if (skip_diagonal && i == j) continue;
      const double xj = grid.centered_um(j);
      cells.push_back({xi + xj, xi - xj, gamma(i, j)});
    }
  }
  return cells;
}

// Width seed from the second moment of a 1D profile (negative bins clamped).
inline double profile_sigma(const std::vector<double>& profile, double step) {
  double mass = 0.0, m1 = 0.0, m2 = 0.0;
  for (std::size_t t = 0; t < profile.size(); ++t) {
    const double w = profile[t] > 0.0 ? profile[t] : 0.0;
    const double u = static_cast<double>(t);
    mass += w;
    m1 += w * u;
    m2 += w * u * u;
  }
  if (!(mass > 0.0)) return step;
  const double mean = m1 / mass;
  const double var = m2 / mass - mean * mean;
  return var > 0.0 ? std::sqrt(var) * step : step;
}

// Full width at half maximum of a 1D profile with linear interpolation at
// the crossings; falls back to the second moment when the shape is flat.
inline double profile_fwhm(const std::vector<double>& profile, double step) {
  std::size_t peak = 0;
  for (std::size_t t = 1; t < profile.size(); ++t)
    if (profile[t] > profile[peak]) peak = t;
  const double half = 0.5 * profile[peak];
  if (!(half > 0.0)) return profile_sigma(profile, step) * 2.3548200450309493;

  double left = 0.0;
  for (std::size_t t = peak; t-- > 0;) {
    if (profile[t] < half) {
      const double frac = (profile[t + 1] - half) / (profile[t + 1] - profile[t]);
      left = static_cast<double>(peak - t) - 1.0 + frac;
      break;
    }
    left = static_cast<double>(peak - t);
  }
  double right = 0.0;
  for (std::size_t t = peak + 1; t < profile.size(); ++t) {
    if (profile[t] < half) {
      const double frac = (profile[t - 1] - half) / (profile[t - 1] - profile[t]);
      right = (static_cast<double>(t) - static_cast<double>(peak)) - 1.0 + frac;
      break;
    }
    right = static_cast<double>(t - peak);
  }
  const double fwhm = (left + right) * step;
  return fwhm > 0.0 ? fwhm : profile_sigma(profile, step) * 2.3548200450309493;
}

struct Seed {
  double amplitude;
  double sigma_plus;
  double sigma_minus;
};

inline Seed seed_from_profiles(const SquareMatrix& gamma, const PixelGrid& grid,
                               bool skip_diagonal) {
  const std::size_t n = gamma.size();
  std::vector<double> sum_profile(2 * n - 1, 0.0);   // indexed by i+j
  std::vector<double> diff_profile(2 * n - 1, 0.0);  // indexed by i-j+(n-1)
  double peak = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (skip_diagonal && i == j) continue;
      const double v = gamma(i, j) > 0.0 ? gamma(i, j) : 0.0;
      sum_profile[i + j] += v;
      diff_profile[i - j + (n - 1)] += v;
      if (v > peak) peak = v;
    }

  // Consecutive i+j bins differ by one pitch in the sum coordinate.
  const double root2 = std::sqrt(2.0);
  Seed s;
  s.sigma_plus = profile_fwhm(sum_profile, grid.pitch_um) / 2.3548200450309493 / root2;
  s.sigma_minus = profile_sigma(diff_profile, grid.pitch_um) / root2;
  s.amplitude = peak > 0.0 ? peak : 1.0;
  const double floor_um = grid.pitch_um / 100.0;
  if (s.sigma_plus < floor_um) s.sigma_plus = floor_um;
  if (s.sigma_minus < floor_um) s.sigma_minus = floor_um;
  return s;
}

} // namespace fit_detail

// Least-squares fit of a * exp(-s^2/(4 sp^2)) * exp(-d^2/(4 sm^2)) over the
// pixel-pair cells, with s = x_i + x_j and d = x_i - x_j. Skip the diagonal
// when it carries no valid estimate. Optimizes (ln a, ln sp, ln sm) with a
// damped Gauss-Newton step, so positivity is structural.
inline FitResult fit_double_gaussian(const SquareMatrix& gamma, const PixelGrid& grid,
                                     bool skip_diagonal) {
  const auto cells = fit_detail::collect_cells(gamma, grid, skip_diagonal);
  const auto seed = fit_detail::seed_from_profiles(gamma, grid, skip_diagonal);

  std::array<double, 3> p = {std::log(seed.amplitude), std::log(seed.sigma_plus),
                             std::log(seed.sigma_minus)};

  const auto sse_at = [&](const std::array<double, 3>& q) {
    const double a = std::exp(q[0]);
    const double isp = std::exp(-2.0 * q[1]);  // 1/sp^2
    const double ism = std::exp(-2.0 * q[2]);
    double sse = 0.0;
    for (const auto& c : cells) {
      const double mu = a * std::exp(-0.25 * (c.s * c.s * isp + c.d * c.d * ism));
      const double r = c.y - mu;
      sse += r * r;
    }
    return sse;
  };

  double sse = sse_at(p);
  double lambda = 1e-3;
  const int max_iter = 200;
  int it = 0;
  for (; it < max_iter; ++it) {
    const double a = std::exp(p[0]);
    const double isp = std::exp(-2.0 * p[1]);
    const double ism = std::exp(-2.0 * p[2]);

    std::array<std::array<double, 3>, 3> jtj{};
    std::array<double, 3> jtr{};
    for (const auto& c : cells) {
      const double mu = a * std::exp(-0.25 * (c.s * c.s * isp + c.d * c.d * ism));
      const double r = c.y - mu;
      const std::array<double, 3> g = {mu, mu * 0.5 * c.s * c.s * isp, mu * 0.5 * c.d * c.d * ism};
      for (int u = 0; u < 3; ++u) {
        jtr[u] += g[u] * r;
        for (int v = u; v < 3; ++v) jtj[u][v] += g[u] * g[v];
      }
    }
    for (int u = 0; u < 3; ++u)
      for (int v = 0; v < u; ++v) jtj[u][v] = jtj[v][u];

    bool accepted = false;
    std::array<double, 3> step{};
    for (int tries = 0; tries < 40; ++tries) {
      auto damped = jtj;
      for (int u = 0; u < 3; ++u) damped[u][u] *= 1.0 + lambda;
      try {
        step = fit_detail::solve3(damped, jtr);
      } catch (const FitNonConvergence&) {
        lambda *= 10.0;
        continue;
      }
      const std::array<double, 3> trial = {p[0] + step[0], p[1] + step[1], p[2] + step[2]};
      const double trial_sse = sse_at(trial);
      if (trial_sse <= sse) {
        p = trial;
        sse = trial_sse;
        lambda = lambda > 1e-12 ? lambda / 3.0 : lambda;
        accepted = true;
        break;
      }
      lambda *= 10.0;
    }
    if (!accepted)
      throw FitNonConvergence("fit: no descent step found at iteration " + std::to_string(it));

    const double move = std::max({std::abs(step[0]), std::abs(step[1]), std::abs(step[2])});
    if (move < 1e-10) break;
  }
  if (it == max_iter)
    throw FitNonConvergence("fit: not converged after " + std::to_string(max_iter) +
                            " iterations (a=" + std::to_string(std::exp(p[0])) +
                            ", sp=" + std::to_string(std::exp(p[1])) +
                            ", sm=" + std::to_string(std::exp(p[2])) + ")");

  FitResult res;
  res.amplitude = std::exp(p[0]);
  res.sigma_plus_um = std::exp(p[1]);
  res.sigma_minus_um = std::exp(p[2]);
  res.iterations = it + 1;
  res.rms_residual =
      std::sqrt(sse / static_cast<double>(cells.size())) / res.amplitude;
  return res;
}

} // namespace paircam
