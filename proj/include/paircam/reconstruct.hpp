#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "paircam/matrix.hpp"

namespace paircam {

struct SaturatedPixel : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct AllNonPositive : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct BackgroundReport {
  double removed_rms = 0.0;          // rms of the subtracted smooth background
  std::uint64_t n_invalid_log = 0;   // entries whose log argument was <= 0
  double clamped_mass = 0.0;         // negative mass zeroed at finalize
  std::uint64_t n_below_floor = 0;   // entries zeroed by the noise floor
};

struct ReconstructionResult {
  SquareMatrix gamma_hat;  // normalized, non-negative
  SquareMatrix raw;        // pre-clamp, pre-normalization values
  std::vector<double> diagonal_raw;
  bool diagonal_valid = false;
  std::string scale_note;
  BackgroundReport background;
};

namespace recon_detail {

inline void check_square(const std::vector<double>& v, const SquareMatrix& m, const char* who) {
  if (m.size() != v.size()) throw std::invalid_argument(std::string(who) + ": size mismatch");
}

} // namespace recon_detail

// Binary-counter inversion: gamma_ij = scale * ln(1 + cov_ij / ((1-<c_i>)(1-<c_j>))).
// Entries whose statistical noise drives the log argument nonpositive get a
// -inf sentinel (zeroed and counted at finalize). The diagonal is not
// recoverable from binary output and is left at 0.
inline SquareMatrix reconstruct_spc_scaled(const std::vector<double>& c_mean,
                                           const SquareMatrix& corr, double scale,
                                           BackgroundReport* report = nullptr) {
  recon_detail::check_square(c_mean, corr, "reconstruct_spc");
  const std::size_t n = c_mean.size();
  for (std::size_t i = 0; i < n; ++i)
    if (c_mean[i] >= 1.0 - 1e-9)
      throw SaturatedPixel("reconstruct_spc: pixel " + std::to_string(i) + " is saturated");

  SquareMatrix out(n);
  std::uint64_t bad = 0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double cov = corr(i, j) - c_mean[i] * c_mean[j];
      const double arg = 1.0 + cov / ((1.0 - c_mean[i]) * (1.0 - c_mean[j]));
      if (arg > 0.0) {
        out(i, j) = scale * std::log(arg);
      } else {
        out(i, j) = -std::numeric_limits<double>::infinity();
        ++bad;
      }
    }
  }
  if (report) report->n_invalid_log += bad;
  return out;
}

inline SquareMatrix reconstruct_spc(const std::vector<double>& c_mean, const SquareMatrix& corr,
                                    double eta, double mbar, BackgroundReport* report = nullptr) {
  if (!(eta > 0.0) || !(mbar > 0.0))
    throw std::invalid_argument("reconstruct_spc: eta and mbar must be > 0");
  return reconstruct_spc_scaled(c_mean, corr, 1.0 / (2.0 * eta * eta * mbar), report);
}

// Linear-response inversion: gamma_ij = cov_ij / (2 A^2 mbar eta^2).
// Negative noise entries are kept raw; the diagonal carries the output
// variance rather than 2 A^2 mbar eta^2 gamma_ii and is left at 0.
inline SquareMatrix reconstruct_emccd_scaled(const std::vector<double>& x_mean,
                                             const SquareMatrix& corr, double scale) {
  recon_detail::check_square(x_mean, corr, "reconstruct_emccd");
  const std::size_t n = x_mean.size();
  SquareMatrix out(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) out(i, j) = scale * (corr(i, j) - x_mean[i] * x_mean[j]);
  return out;
}

inline SquareMatrix reconstruct_emccd(const std::vector<double>& x_mean, const SquareMatrix& corr,
                                      double a, double eta, double mbar) {
  if (!(a > 0.0) || !(eta > 0.0) || !(mbar > 0.0))
    throw std::invalid_argument("reconstruct_emccd: A, eta, mbar must be > 0");
  return reconstruct_emccd_scaled(x_mean, corr, 1.0 / (2.0 * a * a * mbar * eta * eta));
}

// Non-Poissonian pair statistics leave a rank-one residual background
// (var_m - mbar)/mbar^2 * (<x_i> - x0)(<x_j> - x0) on the covariance;
// subtract it before scaling.
inline SquareMatrix reconstruct_general(const std::vector<double>& x_mean, const SquareMatrix& corr,
                                        double a, double x0, double eta, double mbar,
                                        double var_m) {
  if (!(a > 0.0) || !(eta > 0.0) || !(mbar > 0.0))
    throw std::invalid_argument("reconstruct_general: A, eta, mbar must be > 0");
  recon_detail::check_square(x_mean, corr, "reconstruct_general");
  const std::size_t n = x_mean.size();
  const double bg = (var_m - mbar) / (mbar * mbar);
  const double scale = 1.0 / (2.0 * a * a * mbar * eta * eta);
  SquareMatrix out(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) {
        const double cov = corr(i, j) - x_mean[i] * x_mean[j];
        out(i, j) = scale * (cov - bg * (x_mean[i] - x0) * (x_mean[j] - x0));
      }
  return out;
}

// Same-pixel law from the second moment of the linear response; valid only
// for gray output (a binary pixel's square equals itself).
inline std::vector<double> reconstruct_diagonal(const std::vector<double>& x_mean,
                                                const std::vector<double>& x_square, double a,
                                                double x0, double sigma0_sq, double eta,
                                                double mbar, double var_m) {
  if (!(a > 0.0) || !(eta > 0.0) || !(mbar > 0.0))
    throw std::invalid_argument("reconstruct_diagonal: A, eta, mbar must be > 0");
  if (x_mean.size() != x_square.size())
    throw std::invalid_argument("reconstruct_diagonal: size mismatch");
  const double fac = mbar * mbar + var_m - mbar;
  std::vector<double> out(x_mean.size());
  for (std::size_t i = 0; i < x_mean.size(); ++i) {
    const double gi = (x_mean[i] - x0) / (2.0 * a * mbar * eta);
    out[i] = (x_square[i] - 4.0 * a * a * fac * eta * eta * gi * gi -
              4.0 * (a * a + a * x0) * mbar * eta * gi - sigma0_sq - x0 * x0) /
             (2.0 * a * a * mbar * eta * eta);
  }
  return out;
}

namespace recon_detail {

// 1D renormalized box average over an index range [0, len): edges shrink
// the window instead of padding, so constants are reproduced exactly.
// Non-finite entries (invalid-log sentinels) are treated as missing.
template <typename Get, typename Set>
void box_1d(std::size_t len, int width, Get&& get, Set&& set) {
  const int lo = (width - 1) / 2;
  const int hi = width / 2;
  std::vector<double> tmp(len);
  for (std::size_t i = 0; i < len; ++i) {
    const int a = static_cast<int>(i) - lo < 0 ? 0 : static_cast<int>(i) - lo;
    const int b = static_cast<int>(i) + hi >= static_cast<int>(len) ? static_cast<int>(len) - 1
                                                                    : static_cast<int>(i) + hi;
    double s = 0.0;
    int count = 0;
    for (int t = a; t <= b; ++t) {
      const double v = get(static_cast<std::size_t>(t));
      if (!std::isfinite(v)) continue;
      s += v;
      ++count;
    }
    tmp[i] = count > 0 ? s / static_cast<double>(count) : 0.0;
  }
  for (std::size_t i = 0; i < len; ++i) set(i, tmp[i]);
}

} // namespace recon_detail

// Smooth estimate via a separable box kernel.
inline SquareMatrix box_smooth(const SquareMatrix& m, int width) {
  const std::size_t n = m.size();
  SquareMatrix out = m;
  for (std::size_t i = 0; i < n; ++i)
    recon_detail::box_1d(
        n, width, [&](std::size_t j) { return out(i, j); },
        [&](std::size_t j, double v) { out(i, j) = v; });
  for (std::size_t j = 0; j < n; ++j)
    recon_detail::box_1d(
        n, width, [&](std::size_t i) { return out(i, j); },
        [&](std::size_t i, double v) { out(i, j) = v; });
  return out;
}

// Subtracts a smooth background (separable box average) from the raw
// reconstruction; the correlation ridge is much narrower than the window,
// so it survives while slow structure is removed.
inline SquareMatrix remove_background(const SquareMatrix& raw, int width,
                                      BackgroundReport* report = nullptr) {
  if (width < 1) throw std::invalid_argument("remove_background: width must be >= 1");
  if (static_cast<std::size_t>(width) >= raw.size())
    throw std::invalid_argument("remove_background: width must be < N");

  const SquareMatrix bg = box_smooth(raw, width);
  SquareMatrix out(raw.size());
  double sq = 0.0;
  for (std::size_t c = 0; c < raw.data().size(); ++c) {
    const double b = bg.data()[c];
    out.data()[c] = raw.data()[c] - b;
    if (std::isfinite(b)) sq += b * b;
  }
  if (report) report->removed_rms = std::sqrt(sq / static_cast<double>(raw.data().size()));
  return out;
}

// Box average along each constant-(i+j) line. The source ridge sits on the
// anti-diagonal and varies slowly along it, so averaging in this direction
// suppresses per-cell estimator noise without reshaping the ridge profile.
// Windows stay centered: near a line end the half-width shrinks to the room
// available, which keeps the average unbiased under a locally linear profile
// (a one-sided window would pull end cells toward interior values). Even
// widths therefore act as the next-lower odd width. With skip_diagonal,
// i == j cells hold no estimate: they are excluded from every window and
// pass through unchanged. window_counts, when given, receives the number of
// cells actually averaged into each entry (1 where the input passed through).
inline SquareMatrix smooth_antidiagonals(const SquareMatrix& raw, int width,
                                         bool skip_diagonal = false,
                                         SquareMatrix* window_counts = nullptr) {
  if (width < 1) throw std::invalid_argument("smooth_antidiagonals: width must be >= 1");
  const std::size_t n = raw.size();
  SquareMatrix out = raw;
  if (window_counts) *window_counts = SquareMatrix(n, 1.0);
  std::vector<double> line;
  for (std::size_t s = 0; s + 1 <= 2 * n - 1; ++s) {
    const std::size_t i_lo = s + 1 > n ? s - n + 1 : 0;
    const std::size_t i_hi = s < n - 1 ? s : n - 1;
    const std::size_t len = i_hi - i_lo + 1;
    if (len == 1) continue;
    line.assign(len, 0.0);
    for (std::size_t t = 0; t < len; ++t) line[t] = raw(i_lo + t, s - (i_lo + t));

    const int half = (width - 1) / 2;
    for (std::size_t t = 0; t < len; ++t) {
      const std::size_t i = i_lo + t;
      const std::size_t j = s - i;
      if (skip_diagonal && i == j) continue;
      if (!std::isfinite(line[t])) continue;
      const int room_left = static_cast<int>(t);
      const int room_right = static_cast<int>(len - 1 - t);
      const int h = std::min(half, std::min(room_left, room_right));
      double sum = 0.0;
      int count = 0;
      for (int u = static_cast<int>(t) - h; u <= static_cast<int>(t) + h; ++u) {
        const std::size_t ii = i_lo + static_cast<std::size_t>(u);
        if (skip_diagonal && ii == s - ii) continue;
        if (!std::isfinite(line[static_cast<std::size_t>(u)])) continue;
        sum += line[static_cast<std::size_t>(u)];
        ++count;
      }
      if (count > 0) {
        out(i, j) = sum / static_cast<double>(count);
        if (window_counts) (*window_counts)(i, j) = static_cast<double>(count);
      }
    }
  }
  return out;
}

// Clamp to the probability simplex: non-finite and negative entries become
// 0, then everything is scaled to total mass 1. When a diagonal estimate is
// supplied it replaces the (invalid) diagonal of the raw inversion.
inline ReconstructionResult finalize(const SquareMatrix& raw, const std::vector<double>* diagonal,
                                     std::string scale_note, BackgroundReport report = {}) {
  const std::size_t n = raw.size();
  ReconstructionResult res;
  res.raw = raw;
  res.scale_note = std::move(scale_note);
  res.diagonal_valid = diagonal != nullptr;
  if (diagonal) {
    if (diagonal->size() != n) throw std::invalid_argument("finalize: diagonal size mismatch");
    res.diagonal_raw = *diagonal;
    for (std::size_t i = 0; i < n; ++i) res.raw(i, i) = (*diagonal)[i];
  }

  res.gamma_hat = res.raw;
  double clamped = 0.0;
  double total = 0.0;
  for (double& v : res.gamma_hat.data()) {
    if (!std::isfinite(v) || v < 0.0) {
      if (std::isfinite(v)) clamped += -v;
      v = 0.0;
    }
    total += v;
  }
  if (!(total > 0.0)) throw AllNonPositive("finalize: no positive entries");
  for (double& v : res.gamma_hat.data()) v /= total;

  res.background = report;
  res.background.clamped_mass += clamped;
  return res;
}

// Half the absolute difference between two matrices of equal total mass.
inline double total_variation(const SquareMatrix& a, const SquareMatrix& b) {
  a.check_same_size(b);
  double s = 0.0;
  for (std::size_t c = 0; c < a.data().size(); ++c) s += std::abs(a.data()[c] - b.data()[c]);
  return 0.5 * s;
}

// Copy with the diagonal zeroed and mass rescaled to 1; comparisons against
// binary-counter reconstructions use this on both sides.
inline SquareMatrix normalized_off_diagonal(const SquareMatrix& m) {
  SquareMatrix out = m;
  const std::size_t n = out.size();
  for (std::size_t i = 0; i < n; ++i) out(i, i) = 0.0;
  double total = 0.0;
  for (double v : out.data()) total += v;
  if (!(total > 0.0)) throw AllNonPositive("normalized_off_diagonal: no positive mass");
  for (double& v : out.data()) v /= total;
  return out;
}

} // namespace paircam
