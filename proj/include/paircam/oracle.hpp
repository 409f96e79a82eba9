#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

#include "paircam/binomial.hpp"
#include "paircam/compensated.hpp"
#include "paircam/counts.hpp"
#include "paircam/response.hpp"

namespace paircam {

// Thrown when a truncated pair-count sum hits the hard cap before its
// stopping rule is satisfied.
struct TruncationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace oracle_detail {

inline void require(bool ok, const char* what) {
  if (!ok) throw std::domain_error(std::string("oracle: ") + what);
}

inline void check_single_pixel(double gi, double gii) {
  require(gii >= 0.0 && gii <= gi, "need 0 <= gamma_ii <= gamma_i");
  require(2.0 * gi - gii <= 1.0 + 1e-15, "need 2*gamma_i - gamma_ii <= 1");
}

inline void check_pixel_pair(double gi, double gj, double gii, double gjj, double gij) {
  check_single_pixel(gi, gii);
  check_single_pixel(gj, gjj);
  require(gij >= 0.0, "need gamma_ij >= 0");
  // The six single-pair outcome probabilities must all lie in [0,1].
  require(2.0 * gij <= 1.0, "need 2*gamma_ij <= 1");
  require(gi - gii - gij >= -1e-15, "need gamma_i >= gamma_ii + gamma_ij");
  require(gj - gjj - gij >= -1e-15, "need gamma_j >= gamma_jj + gamma_ij");
  require(1.0 - 2.0 * gi - 2.0 * gj + gii + gjj + 2.0 * gij >= -1e-15,
          "single-pair miss probability is negative");
}

inline void check_eta(double eta) { require(eta >= 0.0 && eta <= 1.0, "need eta in [0,1]"); }

} // namespace oracle_detail

// P(n photons land on pixel i | m pairs emitted). The index summed over is
// the number of pairs that put both photons on i; a pair contributes two,
// one, or zero photons with probabilities gamma_ii, 2(gamma_i - gamma_ii),
// and 1 - 2*gamma_i + gamma_ii.
inline double p_photons_given_pairs(double gi, double gii, int n, int m) {
  oracle_detail::require(n >= 0 && m >= 0, "need n, m >= 0");
  oracle_detail::check_single_pixel(gi, gii);
  if (n > 2 * m) return 0.0;

  const double both = gii;
  const double one = 2.0 * gi - 2.0 * gii;
  const double none = 1.0 - 2.0 * gi + gii;

  CompensatedSum sum;
  for (int m2 = 0; m2 <= n / 2; ++m2) {
    const double coeff = binom(n - m2, m2) * binom(m, n - m2);
    if (coeff == 0.0) continue;
    sum.add(coeff * ipow(both, m2) * ipow(one, n - 2 * m2) * ipow(none, m - n + m2));
  }
  return sum.value();
}

// P(k photoelectrons at pixel i | m pairs): the photon law with each base
// dressed by the detection probability eta.
inline double p_electrons_given_pairs(double gi, double gii, double eta, int k, int m) {
  oracle_detail::require(k >= 0 && m >= 0, "need k, m >= 0");
  oracle_detail::check_single_pixel(gi, gii);
  oracle_detail::check_eta(eta);
  if (k > 2 * m) return 0.0;

  const double both = eta * eta * gii;
  const double one = 2.0 * eta * gi - 2.0 * eta * eta * gii;
  const double none = 1.0 - 2.0 * eta * gi + eta * eta * gii;

  CompensatedSum sum;
  for (int q = 0; q <= k / 2; ++q) {
    const double coeff = binom(k - q, q) * binom(m, k - q);
    if (coeff == 0.0) continue;
    sum.add(coeff * ipow(both, q) * ipow(one, k - 2 * q) * ipow(none, m - k + q));
  }
  return sum.value();
}

namespace oracle_detail {

// Shared kernel of the two joint laws. Outcome probabilities for a single
// pair against pixels i != j:
//   both_i, both_j, split, single_i, single_j, miss.
// The triple sum runs over q = pairs delivering two counted quanta,
// m11 = pairs split across i and j, m02 = pairs with both quanta on j.
inline double joint_law(double both_i, double both_j, double split, double single_i,
                        double single_j, double miss, int ni, int nj, int m) {
  if (ni > 2 * m || nj > 2 * m || ni + nj > 2 * m) return 0.0;

  CompensatedSum sum;
  const int qmax = (ni + nj) / 2;
  for (int q = 0; q <= qmax; ++q) {
    for (int m11 = 0; m11 <= q; ++m11) {
      for (int m02 = 0; m02 + m11 <= q; ++m02) {
        const double coeff = binom(ni - q + m02, q - m02 - m11) * binom(nj - m11 - m02, m02) *
                             binom(ni + nj - q - m11, ni - q + m02) * binom(ni + nj - q, m11) *
                             binom(m, ni + nj - q);
        if (coeff == 0.0) continue;
        const int n_both_i = q - m11 - m02;
        const int n_single_i = ni - 2 * q + m11 + 2 * m02;
        const int n_single_j = nj - 2 * m02 - m11;
        const int n_miss = m - ni - nj + q;
        sum.add(coeff * ipow(both_i, n_both_i) * ipow(both_j, m02) * ipow(split, m11) *
                ipow(single_i, n_single_i) * ipow(single_j, n_single_j) * ipow(miss, n_miss));
      }
    }
  }
  return sum.value();
}

} // namespace oracle_detail

// P(n_i photons at pixel i and n_j at pixel j | m pairs), i != j.
inline double p_joint_photons_given_pairs(double gi, double gj, double gii, double gjj,
                                          double gij, int ni, int nj, int m) {
  oracle_detail::require(ni >= 0 && nj >= 0 && m >= 0, "need n_i, n_j, m >= 0");
  oracle_detail::check_pixel_pair(gi, gj, gii, gjj, gij);
  return oracle_detail::joint_law(gii, gjj, 2.0 * gij, 2.0 * (gi - gii - gij),
                                  2.0 * (gj - gjj - gij),
                                  1.0 - 2.0 * gi - 2.0 * gj + gii + gjj + 2.0 * gij, ni, nj, m);
}

// P(k_i electrons at pixel i and k_j at pixel j | m pairs), i != j.
inline double p_joint_electrons_given_pairs(double gi, double gj, double gii, double gjj,
                                            double gij, double eta, int ki, int kj, int m) {
  oracle_detail::require(ki >= 0 && kj >= 0 && m >= 0, "need k_i, k_j, m >= 0");
  oracle_detail::check_pixel_pair(gi, gj, gii, gjj, gij);
  oracle_detail::check_eta(eta);
  const double e2 = eta * eta;
  return oracle_detail::joint_law(
      e2 * gii, e2 * gjj, 2.0 * e2 * gij, 2.0 * eta * gi - 2.0 * e2 * (gii + gij),
      2.0 * eta * gj - 2.0 * e2 * (gjj + gij),
      1.0 - 2.0 * eta * (gi + gj) + e2 * (gii + gjj + 2.0 * gij), ki, kj, m);
}

namespace oracle_detail {

// Sums P(m) * inner(m) over the pair-count law. For Poisson the series is
// cut once the visited mass reaches 1 - 1e-12 AND three consecutive terms
// contribute below 1e-16 relative (the second clause keeps weighted sums
// with polynomially growing inner terms at full accuracy); the hard cap is
// an error, not a silent truncation.
template <typename Inner>
double sum_over_counts(const PairCountDistribution& counts, Inner&& inner) {
  if (!counts.has_masses())
    throw std::domain_error("oracle: moments-only pair-count law cannot be summed over");

  CompensatedSum acc;
  if (counts.kind() == PairCountDistribution::Kind::Explicit) {
    const int mmax = counts.max_m();
    for (int m = 0; m <= mmax; ++m) {
      const double pm = counts.mass(m);
      if (pm > 0.0) acc.add(pm * inner(m));
    }
    return acc.value();
  }

  CompensatedSum mass;
  int quiet_run = 0;
  for (int m = 0; m <= kMaxPairs; ++m) {
    const double pm = counts.mass(m);
    const double term = pm * inner(m);
    acc.add(term);
    mass.add(pm);
    const bool mass_done = mass.value() >= 1.0 - 1e-12;
    const bool quiet = std::abs(term) <= 1e-16 * std::abs(acc.value());
    quiet_run = quiet ? quiet_run + 1 : 0;
    if (mass_done && quiet_run >= 3) return acc.value();
  }
  throw TruncationError("oracle: pair-count sum not converged at the hard cap");
}

} // namespace oracle_detail

// <x_i> = sum_m P(m) sum_k I_k P(k_i = k | m).
inline double mean_output(double gi, double gii, double eta, const PairCountDistribution& counts,
                          const ResponseMoments& resp) {
  return oracle_detail::sum_over_counts(counts, [&](int m) {
    CompensatedSum s;
    for (int k = 0; k <= 2 * m; ++k)
      s.add(resp.mean(k) * p_electrons_given_pairs(gi, gii, eta, k, m));
    return s.value();
  });
}

// <x_i x_j> = sum_m P(m) sum_{k_i,k_j} I_{k_i} I_{k_j} P(k_i, k_j | m).
inline double mean_output_pair(double gi, double gj, double gii, double gjj, double gij,
                               double eta, const PairCountDistribution& counts,
                               const ResponseMoments& resp) {
  return oracle_detail::sum_over_counts(counts, [&](int m) {
    CompensatedSum s;
    for (int ki = 0; ki <= 2 * m; ++ki) {
      const double wi = resp.mean(ki);
      for (int kj = 0; ki + kj <= 2 * m; ++kj)
        s.add(wi * resp.mean(kj) *
              p_joint_electrons_given_pairs(gi, gj, gii, gjj, gij, eta, ki, kj, m));
    }
    return s.value();
  });
}

// <x_i^2> = sum_m P(m) sum_k J_k P(k_i = k | m).
inline double mean_output_square(double gi, double gii, double eta,
                                 const PairCountDistribution& counts,
                                 const ResponseMoments& resp) {
  return oracle_detail::sum_over_counts(counts, [&](int m) {
    CompensatedSum s;
    for (int k = 0; k <= 2 * m; ++k)
      s.add(resp.second_moment(k) * p_electrons_given_pairs(gi, gii, eta, k, m));
    return s.value();
  });
}

struct SpcMoments {
  double mean_i = 0.0;
  double mean_j = 0.0;
  double pair = 0.0; // <c_i c_j>
};

// Closed forms for the binary counter under Poisson pair counts.
inline SpcMoments spc_moments(double gi, double gj, double gii, double gjj, double gij,
                              double eta, double mbar, double p10) {
  oracle_detail::check_pixel_pair(gi, gj, gii, gjj, gij);
  oracle_detail::check_eta(eta);
  oracle_detail::require(mbar >= 0.0, "need mbar >= 0");
  oracle_detail::require(p10 >= 0.0 && p10 <= 1.0, "need p10 in [0,1]");

  const double si = std::exp(-mbar * eta * (2.0 * gi - eta * gii));
  const double sj = std::exp(-mbar * eta * (2.0 * gj - eta * gjj));
  const double q = 1.0 - p10;
  SpcMoments out;
  out.mean_i = 1.0 - q * si;
  out.mean_j = 1.0 - q * sj;
  out.pair = 1.0 - q * (si + sj) + q * q * si * sj * std::exp(2.0 * mbar * eta * eta * gij);
  return out;
}

struct EmccdMoments {
  double mean_i = 0.0;
  double mean_j = 0.0;
  double pair = 0.0;     // <x_i x_j>
  double square_i = 0.0; // <x_i^2>
};

// Closed forms for the linear response I_k = A*k + x0 under any pair-count
// law with mean mbar and variance var_m; only those two moments enter.
inline EmccdMoments emccd_moments(double gi, double gj, double gii, double gjj, double gij,
                                  double eta, const PairCountDistribution& counts, double a,
                                  double x0, double sigma0_sq) {
  oracle_detail::check_pixel_pair(gi, gj, gii, gjj, gij);
  oracle_detail::check_eta(eta);
  oracle_detail::require(a > 0.0, "need A > 0");

  const double mbar = counts.mean();
  const double fac = mbar * mbar + counts.variance() - mbar; // <m(m-1)>
  EmccdMoments out;
  out.mean_i = x0 + 2.0 * a * mbar * eta * gi;
  out.mean_j = x0 + 2.0 * a * mbar * eta * gj;
  out.pair = x0 * x0 + 2.0 * a * x0 * mbar * eta * (gi + gj) +
             4.0 * a * a * fac * eta * eta * gi * gj + 2.0 * a * a * mbar * eta * eta * gij;
  out.square_i = 2.0 * a * a * mbar * eta * eta * gii + 4.0 * a * a * fac * eta * eta * gi * gi +
                 4.0 * (a * a + a * x0) * mbar * eta * gi + sigma0_sq + x0 * x0;
  return out;
}

} // namespace paircam
