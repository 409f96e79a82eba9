#pragma once

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <stdexcept>
#include <string>
#include <vector>

#include "paircam/grid.hpp"
#include "paircam/matrix.hpp"

namespace paircam {

inline constexpr double kJointTolerance = 1e-12;

// Source model in sum/difference coordinates: the pair density factorizes
// into a Gaussian of width sigma_plus in (x_i + x_j) and one of width
// sigma_minus in (x_i - x_j).
struct DoubleGaussianParams {
  double amplitude = 1.0;
  double sigma_plus_um = 0.0;
  double sigma_minus_um = 0.0;

  void require_valid() const {
    if (!(sigma_plus_um > 0.0) || !(sigma_minus_um > 0.0))
      throw std::invalid_argument("double-gaussian: sigma_plus and sigma_minus must be > 0");
  }
};

// Joint landing probability of an ordered photon pair: gamma(i, j) is the
// probability that the first photon hits pixel i and the second pixel j.
struct JointDistribution {
  PixelGrid grid;
  SquareMatrix gamma;
  std::vector<double> gamma_marginal;

  [[nodiscard]] std::uint32_t n() const { return grid.n_pixels; }
  [[nodiscard]] double same_pixel(std::uint32_t i) const { return gamma(i, i); }

  void recompute_marginal() {
    const std::size_t n = gamma.size();
    gamma_marginal.assign(n, 0.0);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) gamma_marginal[i] += gamma(i, j);
  }
};

inline double marginal(const JointDistribution& jd, std::uint32_t i) {
  if (i >= jd.n()) throw std::out_of_range("marginal: pixel index out of range");
  return jd.gamma_marginal[i];
}

struct Violation {
  std::string invariant;
  std::string detail;
};

// Empty result iff the distribution is a valid joint law: entries
// non-negative, total mass 1, marginals consistent, diagonal dominated.
inline std::vector<Violation> validate(const JointDistribution& jd) {
  std::vector<Violation> out;
  const std::size_t n = jd.gamma.size();
  if (n != jd.grid.n_pixels || jd.gamma_marginal.size() != n) {
    out.push_back({"dimensions", "gamma/grid/marginal sizes disagree"});
    return out;
  }

  double worst_neg = 0.0;
  std::size_t neg_i = 0, neg_j = 0;
  double total = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const double v = jd.gamma(i, j);
      total += v;
      if (v < worst_neg) {
        worst_neg = v;
        neg_i = i;
        neg_j = j;
      }
    }
  }
  if (worst_neg < 0.0)
    out.push_back({"non-negativity", "gamma(" + std::to_string(neg_i) + "," +
                                         std::to_string(neg_j) + ") = " + std::to_string(worst_neg)});
  if (std::abs(total - 1.0) > kJointTolerance)
    out.push_back({"normalization", "sum = " + std::to_string(total)});

  double worst_marg = 0.0;
  std::size_t marg_i = 0;
  double worst_diag = 0.0;
  std::size_t diag_i = 0;
  bool diag_bad = false;
  for (std::size_t i = 0; i < n; ++i) {
    double row = 0.0;
    for (std::size_t j = 0; j < n; ++j) row += jd.gamma(i, j);
    const double err = std::abs(row - jd.gamma_marginal[i]);
    if (err > worst_marg) {
      worst_marg = err;
      marg_i = i;
    }
    const double excess = jd.gamma(i, i) - jd.gamma_marginal[i];
    if (excess > worst_diag) {
      worst_diag = excess;
      diag_i = i;
      diag_bad = true;
    }
  }
  if (worst_marg > kJointTolerance)
    out.push_back({"marginal-consistency",
                   "row " + std::to_string(marg_i) + " differs by " + std::to_string(worst_marg)});
  if (diag_bad && worst_diag > kJointTolerance)
    out.push_back({"diagonal-bound",
                   "gamma(" + std::to_string(diag_i) + "," + std::to_string(diag_i) +
                       ") exceeds its marginal by " + std::to_string(worst_diag)});
  return out;
}

// Evaluates the double-Gaussian at pixel centers (coordinates measured from
// the strip midpoint) and normalizes to total mass 1.
inline JointDistribution build_double_gaussian(const PixelGrid& grid,
                                               const DoubleGaussianParams& params) {
  grid.require_valid();
  params.require_valid();
  const std::uint32_t n = grid.n_pixels;
  JointDistribution jd;
  jd.grid = grid;
  jd.gamma = SquareMatrix(n);

  const double inv4sp = 1.0 / (4.0 * params.sigma_plus_um * params.sigma_plus_um);
  const double inv4sm = 1.0 / (4.0 * params.sigma_minus_um * params.sigma_minus_um);
  double total = 0.0;
  for (std::uint32_t i = 0; i < n; ++i) {
    const double xi = grid.centered_um(i);
    for (std::uint32_t j = 0; j < n; ++j) {
      const double xj = grid.centered_um(j);
      const double s = xi + xj;
      const double d = xi - xj;
      const double v = params.amplitude * std::exp(-s * s * inv4sp - d * d * inv4sm);
      jd.gamma(i, j) = v;
      total += v;
    }
  }
  if (!(total > 0.0))
    throw std::domain_error("build_double_gaussian: normalization sum underflowed to 0");
  for (double& v : jd.gamma.data()) v /= total;
  jd.recompute_marginal();
  return jd;
}

inline JointDistribution uniform_joint(const PixelGrid& grid) {
  grid.require_valid();
  JointDistribution jd;
  jd.grid = grid;
  const double n = static_cast<double>(grid.n_pixels);
  jd.gamma = SquareMatrix(grid.n_pixels, 1.0 / (n * n));
  jd.recompute_marginal();
  return jd;
}

// Two-row acquisition: the pair's photons land on two separate pixel strips
// stacked into one 2N-pixel sensor (first strip 0..N-1, second N..2N-1).
// The cross-strip joint carries all the mass, split evenly between photon
// orderings so the embedded law stays symmetric.
inline JointDistribution embed_two_row(const JointDistribution& jd) {
  const std::uint32_t n = jd.n();
  JointDistribution out;
  out.grid = PixelGrid{2 * n, jd.grid.pitch_um, jd.grid.origin_um};
  out.gamma = SquareMatrix(2 * n);
  for (std::uint32_t i = 0; i < n; ++i) {
    for (std::uint32_t j = 0; j < n; ++j) {
      const double half = 0.5 * jd.gamma(i, j);
      out.gamma(i, n + j) = half;
      out.gamma(n + j, i) = half;
    }
  }
  out.recompute_marginal();
  return out;
}

} // namespace paircam
