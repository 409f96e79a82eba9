#include <algorithm>
#include <cmath>
#include <limits>
#include <vector>

#include <gtest/gtest.h>

#include "paircam/counts.hpp"
#include "paircam/fit.hpp"
#include "paircam/joint.hpp"
#include "paircam/oracle.hpp"
#include "paircam/pipeline.hpp"
#include "paircam/reconstruct.hpp"
#include "paircam/rng.hpp"

namespace {

using namespace paircam;

JointDistribution narrow_ridge_joint(std::uint32_t n) {
  const PixelGrid grid = PixelGrid::centered(n, 13.0);
  return build_double_gaussian(grid, {1.0, 12.06, 926.12});
}

TEST(Reconstruct, SpcInversionRoundTrip) {
  const auto jd = narrow_ridge_joint(8);
  const double eta = 0.44, mbar = 2.0, p10 = 0.015;
  const std::size_t n = jd.n();

  std::vector<double> c_mean(n);
  SquareMatrix corr(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const auto m = spc_moments(marginal(jd, i), marginal(jd, j), jd.gamma(i, i),
                                 jd.gamma(j, j), jd.gamma(i, j), eta, mbar, p10);
      c_mean[i] = m.mean_i;
      corr(i, j) = m.pair;
    }
    corr(i, i) = c_mean[i];
  }

  const SquareMatrix raw = reconstruct_spc(c_mean, corr, eta, mbar);
  double worst = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      worst = std::max(worst, std::abs(raw(i, j) - jd.gamma(i, j)));
    }
  EXPECT_LT(worst, 1e-12);
}

TEST(Reconstruct, EmccdInversionRoundTrip) {
  const auto jd = narrow_ridge_joint(8);
  const double eta = 0.44, mbar = 2.0;
  const double a = 51.45, x0 = 2.102, s0 = 71.57;
  const auto counts = PairCountDistribution::poisson(mbar);
  const std::size_t n = jd.n();

  std::vector<double> x_mean(n), x_square(n);
  SquareMatrix corr(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const auto m = emccd_moments(marginal(jd, i), marginal(jd, j), jd.gamma(i, i),
                                   jd.gamma(j, j), jd.gamma(i, j), eta, counts, a, x0, s0);
      x_mean[i] = m.mean_i;
      x_square[i] = m.square_i;
      corr(i, j) = m.pair;
    }
    corr(i, i) = x_square[i];
  }

  const SquareMatrix raw = reconstruct_emccd(x_mean, corr, a, eta, mbar);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      if (i != j) {
        EXPECT_NEAR(raw(i, j), jd.gamma(i, j), 1e-12);
      }

  const auto diag = reconstruct_diagonal(x_mean, x_square, a, x0, s0, eta, mbar, mbar);
  for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(diag[i], jd.gamma(i, i), 1e-12);
}

TEST(Reconstruct, GeneralInversionHandlesNonPoissonCounts) {
  const auto jd = narrow_ridge_joint(8);
  const double eta = 0.44;
  const double a = 51.45, x0 = 2.102, s0 = 71.57;
  const auto counts = PairCountDistribution::explicit_masses({0.1, 0.2, 0.3, 0.25, 0.15});
  const double mbar = counts.mean(), var_m = counts.variance();
  ASSERT_GT(std::abs(var_m - mbar), 0.1); // genuinely non-Poissonian
  const std::size_t n = jd.n();

  std::vector<double> x_mean(n), x_square(n);
  SquareMatrix corr(n);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const auto m = emccd_moments(marginal(jd, i), marginal(jd, j), jd.gamma(i, i),
                                   jd.gamma(j, j), jd.gamma(i, j), eta, counts, a, x0, s0);
      x_mean[i] = m.mean_i;
      x_square[i] = m.square_i;
      corr(i, j) = m.pair;
    }
  }

  // The Poisson inversion is biased by the rank-one accidental background;
  // the general inversion removes it exactly.
  const SquareMatrix poisson_raw = reconstruct_emccd(x_mean, corr, a, eta, mbar);
  const SquareMatrix raw = reconstruct_general(x_mean, corr, a, x0, eta, mbar, var_m);
  double poisson_worst = 0.0;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      EXPECT_NEAR(raw(i, j), jd.gamma(i, j), 1e-12);
      poisson_worst = std::max(poisson_worst, std::abs(poisson_raw(i, j) - jd.gamma(i, j)));
    }
  EXPECT_GT(poisson_worst, 1e-6);

  const auto diag = reconstruct_diagonal(x_mean, x_square, a, x0, s0, eta, mbar, var_m);
  for (std::size_t i = 0; i < n; ++i) EXPECT_NEAR(diag[i], jd.gamma(i, i), 1e-12);
}

TEST(Reconstruct, SaturatedPixelRejected) {
  std::vector<double> c_mean = {0.5, 1.0};
  SquareMatrix corr(2);
  EXPECT_THROW(reconstruct_spc(c_mean, corr, 0.5, 1.0, nullptr), SaturatedPixel);
}

TEST(Reconstruct, NonPositiveLogArgumentsBecomeSentinels) {
  std::vector<double> c_mean = {0.5, 0.5, 0.1};
  SquareMatrix corr(3);
  corr(0, 1) = corr(1, 0) = 0.0;  // cov = -0.25, log arg = 0
  corr(0, 2) = corr(2, 0) = 0.06; // cov = 0.01, valid
  corr(1, 2) = corr(2, 1) = 0.05; // cov = 0, log arg = 1 -> gamma 0

  BackgroundReport report;
  const SquareMatrix raw = reconstruct_spc(c_mean, corr, 0.5, 2.0, &report);
  EXPECT_EQ(report.n_invalid_log, 2u);
  EXPECT_TRUE(std::isinf(raw(0, 1)) && raw(0, 1) < 0.0);
  EXPECT_TRUE(std::isinf(raw(1, 0)) && raw(1, 0) < 0.0);
  EXPECT_GT(raw(0, 2), 0.0);
  EXPECT_DOUBLE_EQ(raw(1, 2), 0.0);
}

TEST(Reconstruct, BackgroundRemovalIsExactOnConstants) {
  SquareMatrix raw(16, 3.7);
  BackgroundReport report;
  const SquareMatrix out = remove_background(raw, 5, &report);
  for (const double v : out.data()) EXPECT_NEAR(v, 0.0, 1e-13);
  EXPECT_NEAR(report.removed_rms, 3.7, 1e-12);
}

TEST(Reconstruct, BackgroundRemovalKeepsNarrowPeak) {
  SquareMatrix raw(32, 0.2);
  raw(16, 16) += 1.0;
  const SquareMatrix out = remove_background(raw, 15, nullptr);
  // The smooth window spreads the spike by 1/225; the offset disappears.
  EXPECT_NEAR(out(16, 16), 1.0 - 1.0 / 225.0, 1e-10);
  EXPECT_NEAR(out(0, 0), 0.0, 1e-2);
}

TEST(Reconstruct, BackgroundRemovalWidthValidated) {
  SquareMatrix raw(8);
  EXPECT_THROW(remove_background(raw, 0, nullptr), std::invalid_argument);
  EXPECT_THROW(remove_background(raw, 8, nullptr), std::invalid_argument);
}

TEST(Reconstruct, RidgeSmoothingPreservesAntiDiagonalStructure) {
  // Values constant along each anti-diagonal are fixed points of the
  // along-ridge average.
  const std::size_t n = 12;
  SquareMatrix m(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      m(i, j) = std::exp(-0.1 * static_cast<double>((i + j) * (i + j)));
  const SquareMatrix out = smooth_antidiagonals(m, 5);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) EXPECT_NEAR(out(i, j), m(i, j), 1e-13);
}

TEST(Reconstruct, RidgeSmoothingAveragesNoise) {
  RngStream rng(501);
  const std::size_t n = 24;
  SquareMatrix m(n);
  for (auto& v : m.data()) v = 1.0 + 0.1 * rng.gaussian();
  const SquareMatrix out = smooth_antidiagonals(m, 7);
  double in_var = 0.0, out_var = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 4; i + 4 < n; ++i)
    for (std::size_t j = 4; j + 4 < n; ++j) {
      in_var += (m(i, j) - 1.0) * (m(i, j) - 1.0);
      out_var += (out(i, j) - 1.0) * (out(i, j) - 1.0);
      ++count;
    }
  EXPECT_LT(out_var, 0.35 * in_var); // 7-point average cuts variance ~7x
}

TEST(Reconstruct, RidgeSmoothingSkipsDiagonalCells) {
  const std::size_t n = 9;
  SquareMatrix m(n, 1.0);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 99.0;

  const SquareMatrix masked = smooth_antidiagonals(m, 3, true);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j)
        EXPECT_DOUBLE_EQ(masked(i, j), 99.0) << i << "," << j;
      else
        EXPECT_DOUBLE_EQ(masked(i, j), 1.0) << i << "," << j;
    }

  // Without the mask the diagonal leaks into even-sum neighbours.
  const SquareMatrix leaky = smooth_antidiagonals(m, 3, false);
  EXPECT_GT(leaky(3, 5), 1.0);
}

TEST(Reconstruct, RidgeSmoothingEndWindowsStayCentered) {
  // Values linear along each anti-diagonal are fixed points: windows shrink
  // symmetrically at line ends, so the average never pulls toward the
  // interior. A one-sided window would shift every end cell.
  const std::size_t n = 10;
  SquareMatrix m(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j)
      m(i, j) = 0.3 + 0.05 * (static_cast<double>(i) - static_cast<double>(j));

  SquareMatrix counts(0);
  const SquareMatrix out = smooth_antidiagonals(m, 5, false, &counts);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) EXPECT_NEAR(out(i, j), m(i, j), 1e-12) << i << "," << j;

  EXPECT_DOUBLE_EQ(counts(0, 0), 1.0); // length-1 line passes through
  EXPECT_DOUBLE_EQ(counts(0, 1), 1.0); // line end: no symmetric room
  EXPECT_DOUBLE_EQ(counts(1, 1), 3.0); // one cell of room on each side
  EXPECT_DOUBLE_EQ(counts(2, 3), 5.0); // full window
}

TEST(Reconstruct, SentinelsDoNotPoisonSmoothing) {
  const std::size_t n = 8;
  SquareMatrix m(n, 2.0);
  m(2, 5) = -std::numeric_limits<double>::infinity();
  const SquareMatrix out = smooth_antidiagonals(m, 3);
  EXPECT_TRUE(std::isinf(out(2, 5)));
  EXPECT_DOUBLE_EQ(out(3, 4), 2.0);
  EXPECT_DOUBLE_EQ(out(1, 6), 2.0);

  const SquareMatrix bg = remove_background(m, 3, nullptr);
  EXPECT_TRUE(std::isinf(bg(2, 5)));
  EXPECT_TRUE(std::isfinite(bg(3, 4)));
}

TEST(Reconstruct, FinalizeClampsAndNormalizes) {
  SquareMatrix raw(3);
  raw(0, 1) = raw(1, 0) = 2.0;
  raw(0, 2) = raw(2, 0) = -0.5;
  raw(1, 2) = -std::numeric_limits<double>::infinity();
  raw(2, 1) = 1.0;
  const std::vector<double> diag = {0.25, 0.25, 0.5};

  BackgroundReport report;
  report.n_invalid_log = 1;
  const ReconstructionResult res = finalize(raw, &diag, "test scale", report);

  EXPECT_TRUE(res.diagonal_valid);
  EXPECT_EQ(res.scale_note, "test scale");
  EXPECT_EQ(res.background.n_invalid_log, 1u);
  EXPECT_DOUBLE_EQ(res.background.clamped_mass, 1.0); // two -0.5 entries

  double total = 0.0;
  for (const double v : res.gamma_hat.data()) {
    EXPECT_GE(v, 0.0);
    total += v;
  }
  EXPECT_NEAR(total, 1.0, 1e-15);
  EXPECT_DOUBLE_EQ(res.gamma_hat(0, 2), 0.0);
  EXPECT_DOUBLE_EQ(res.gamma_hat(1, 2), 0.0);
  const double mass = 2.0 + 2.0 + 1.0 + 0.25 + 0.25 + 0.5;
  EXPECT_NEAR(res.gamma_hat(0, 1), 2.0 / mass, 1e-15);
  EXPECT_NEAR(res.gamma_hat(2, 2), 0.5 / mass, 1e-15);
  EXPECT_DOUBLE_EQ(res.raw(2, 2), 0.5); // diagonal injected into raw
}

TEST(Reconstruct, FinalizeRejectsAllNonPositive) {
  SquareMatrix raw(2);
  raw(0, 1) = -1.0;
  raw(1, 0) = -std::numeric_limits<double>::infinity();
  EXPECT_THROW(finalize(raw, nullptr, ""), AllNonPositive);
}

TEST(Reconstruct, TotalVariationProperties) {
  SquareMatrix a(2), b(2);
  a(0, 0) = 1.0;
  b(1, 1) = 1.0;
  EXPECT_DOUBLE_EQ(total_variation(a, a), 0.0);
  EXPECT_DOUBLE_EQ(total_variation(a, b), 1.0);
  EXPECT_DOUBLE_EQ(total_variation(a, b), total_variation(b, a));
}

TEST(Reconstruct, NormalizedOffDiagonalZeroesDiagonal) {
  SquareMatrix m(3);
  m(0, 0) = 5.0;
  m(0, 1) = 1.0;
  m(1, 2) = 3.0;
  const SquareMatrix out = normalized_off_diagonal(m);
  EXPECT_DOUBLE_EQ(out(0, 0), 0.0);
  EXPECT_DOUBLE_EQ(out(0, 1), 0.25);
  EXPECT_DOUBLE_EQ(out(1, 2), 0.75);

  SquareMatrix diag_only(2);
  diag_only(0, 0) = 1.0;
  EXPECT_THROW(normalized_off_diagonal(diag_only), AllNonPositive);
}

TEST(Reconstruct, FitRecoversExactModel) {
  const auto jd = narrow_ridge_joint(32);
  const FitResult fit = fit_double_gaussian(jd.gamma, jd.grid, false);
  EXPECT_NEAR(fit.sigma_plus_um, 12.06, 1e-6 * 12.06);
  EXPECT_NEAR(fit.sigma_minus_um, 926.12, 1e-5 * 926.12);
  EXPECT_LT(fit.rms_residual, 1e-10);
}

TEST(Reconstruct, FitRecoversExactModelWithoutDiagonal) {
  const auto jd = narrow_ridge_joint(32);
  const FitResult fit = fit_double_gaussian(jd.gamma, jd.grid, true);
  EXPECT_NEAR(fit.sigma_plus_um, 12.06, 1e-6 * 12.06);
  EXPECT_NEAR(fit.sigma_minus_um, 926.12, 1e-5 * 926.12);
  EXPECT_LT(fit.rms_residual, 1e-10);
}

TEST(Reconstruct, FitToleratesNoise) {
  const auto jd = narrow_ridge_joint(32);
  SquareMatrix noisy = jd.gamma;
  RngStream rng(502);
  double peak = 0.0;
  for (const double v : noisy.data()) peak = std::max(peak, v);
  for (auto& v : noisy.data()) v += 0.002 * peak * rng.gaussian();
  const FitResult fit = fit_double_gaussian(noisy, jd.grid, false);
  EXPECT_NEAR(fit.sigma_plus_um, 12.06, 0.1 * 12.06);
  EXPECT_NEAR(fit.sigma_minus_um, 926.12, 0.1 * 926.12);
}

TEST(Reconstruct, NoiseFloorZeroesCellsTheSourceNeverPopulates) {
  const auto jd = narrow_ridge_joint(8);
  const auto noise =
      EmccdNoiseParams::make(506, 1.37e-2, 1.0 / 19.0, 3.35e-5, 1.23e-2, 12.2, 25.54);
  const SensorConfig sensor{jd.grid, 0.44, EmccdLinearMode{noise}, {}};
  const auto counts = PairCountDistribution::poisson(2.0);
  const auto acc = run_simulation(jd, sensor, counts, 30'000, 77, 1, "");

  ModeParams mp;
  mp.binary = false;
  mp.poisson = true;
  mp.eta = 0.44;
  mp.mbar = 2.0;
  mp.var_m = 2.0;
  mp.a = noise.slope;
  mp.x0 = noise.offset;
  mp.sigma0_sq = noise.offset_var;

  const auto se = inversion_stderr(acc, mp);
  for (std::size_t i = 0; i < 8; ++i)
    for (std::size_t j = 0; j < 8; ++j) {
      if (i == j) continue;
      EXPECT_GT(se(i, j), 0.0);
      EXPECT_DOUBLE_EQ(se(i, j), se(j, i));
    }

  const auto plain = reconstruct_from_accumulator(acc, mp, {3, 3, 0.0, false}, false);
  const auto masked = reconstruct_from_accumulator(acc, mp, {3, 3, 3.0, false}, false);
  EXPECT_EQ(plain.background.n_below_floor, 0u);
  EXPECT_GT(masked.background.n_below_floor, 10u);

  // Far corners carry ~1e-5 of the mass: pure estimator noise, zeroed.
  EXPECT_DOUBLE_EQ(masked.gamma_hat(0, 1), 0.0);
  EXPECT_DOUBLE_EQ(masked.gamma_hat(1, 0), 0.0);
  EXPECT_DOUBLE_EQ(masked.gamma_hat(6, 7), 0.0);
  // The anti-diagonal ridge sits tens of standard errors up: untouched.
  EXPECT_GT(masked.gamma_hat(3, 4), 0.01);
  EXPECT_DOUBLE_EQ(masked.raw(3, 4), plain.raw(3, 4));

  const double tv_plain = total_variation(plain.gamma_hat, jd.gamma);
  const double tv_masked = total_variation(masked.gamma_hat, jd.gamma);
  EXPECT_LT(tv_masked, tv_plain);
}

TEST(Reconstruct, FwhmOfSampledGaussian) {
  const double sigma = 3.0;
  std::vector<double> profile(31);
  for (std::size_t t = 0; t < profile.size(); ++t) {
    const double u = static_cast<double>(t) - 15.0;
    profile[t] = std::exp(-u * u / (2.0 * sigma * sigma));
  }
  const double fwhm = fit_detail::profile_fwhm(profile, 1.0);
  EXPECT_NEAR(fwhm, 2.3548200450309493 * sigma, 0.05 * 2.3548 * sigma);
}

} // namespace
