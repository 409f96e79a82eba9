#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#include <gtest/gtest.h>

#include "paircam/grid.hpp"
#include "paircam/io.hpp"
#include "paircam/joint.hpp"

namespace {

using namespace paircam;

std::string temp_path(const std::string& name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

TEST(Grid, CenteredCoordinates) {
  const PixelGrid g = PixelGrid::centered(4, 13.0);
  EXPECT_DOUBLE_EQ(g.centered_um(0), -1.5 * 13.0);
  EXPECT_DOUBLE_EQ(g.centered_um(1), -0.5 * 13.0);
  EXPECT_DOUBLE_EQ(g.centered_um(2), 0.5 * 13.0);
  EXPECT_DOUBLE_EQ(g.centered_um(3), 1.5 * 13.0);
  EXPECT_DOUBLE_EQ(g.center_um(0), g.origin_um);
}

TEST(Grid, OddSizeHasCentralPixelAtZero) {
  const PixelGrid g = PixelGrid::centered(5, 10.0);
  EXPECT_DOUBLE_EQ(g.centered_um(2), 0.0);
}

TEST(Joint, DoubleGaussianIsNormalizedAndSymmetric) {
  const auto jd = build_double_gaussian(PixelGrid::centered(32, 13.0),
                                        DoubleGaussianParams{1.0, 12.06, 926.12});
  EXPECT_TRUE(validate(jd).empty());
  double total = 0.0;
  for (std::uint32_t i = 0; i < jd.n(); ++i)
    for (std::uint32_t j = 0; j < jd.n(); ++j) {
      total += jd.gamma(i, j);
      EXPECT_DOUBLE_EQ(jd.gamma(i, j), jd.gamma(j, i));
    }
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(Joint, DoubleGaussianReflectionSymmetry) {
  // Centered coordinates flip sign under i -> N-1-i, and the model depends
  // on x only through squares, so the law is reflection invariant.
  const std::uint32_t n = 16;
  const auto jd =
      build_double_gaussian(PixelGrid::centered(n, 13.0), DoubleGaussianParams{1.0, 20.0, 300.0});
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t j = 0; j < n; ++j)
      EXPECT_NEAR(jd.gamma(i, j), jd.gamma(n - 1 - i, n - 1 - j), 1e-15);
}

TEST(Joint, TwoPixelSymmetricCase) {
  const auto jd =
      build_double_gaussian(PixelGrid::centered(2, 10.0), DoubleGaussianParams{1.0, 25.0, 25.0});
  // sigma+ = sigma-: swapping i<->j and reflecting both leave the law fixed,
  // so the four entries carry only two distinct values.
  EXPECT_DOUBLE_EQ(jd.gamma(0, 1), jd.gamma(1, 0));
  EXPECT_DOUBLE_EQ(jd.gamma(0, 0), jd.gamma(1, 1));
  EXPECT_NEAR(jd.gamma.sum(), 1.0, 1e-15);
}

TEST(Joint, WideLimitsApproachUniform) {
  const std::uint32_t n = 8;
  const auto jd =
      build_double_gaussian(PixelGrid::centered(n, 13.0), DoubleGaussianParams{1.0, 1e9, 1e9});
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t j = 0; j < n; ++j)
      EXPECT_NEAR(jd.gamma(i, j), 1.0 / (n * n), 1e-12);
}

TEST(Joint, NarrowSigmaUnderflowRejected) {
  EXPECT_THROW(build_double_gaussian(PixelGrid::centered(64, 13000.0),
                                     DoubleGaussianParams{1.0, 1e-3, 1e-3}),
               std::domain_error);
}

TEST(Joint, AntiDiagonalRidge) {
  const std::uint32_t n = 64;
  const auto jd = build_double_gaussian(PixelGrid::centered(n, 13.0),
                                        DoubleGaussianParams{1.0, 12.06, 926.12});
  // Mass concentrates where x_i + x_j ~ 0, i.e. j ~ n-1-i.
  double on_ridge = 0.0, off_ridge = 0.0;
  for (std::uint32_t i = 0; i < n; ++i) {
    on_ridge += jd.gamma(i, n - 1 - i);
    off_ridge += jd.gamma(i, i);
  }
  EXPECT_GT(on_ridge, 0.25);
  EXPECT_GT(on_ridge, 20.0 * off_ridge);
  // Ridge width ~ sigma+ in the sum coordinate: two pitches off it decays.
  EXPECT_LT(jd.gamma(32, 34) / jd.gamma(32, 31), 0.2);
}

TEST(Joint, MarginalsAreRowSums) {
  const auto jd =
      build_double_gaussian(PixelGrid::centered(12, 13.0), DoubleGaussianParams{1.0, 30.0, 90.0});
  for (std::uint32_t i = 0; i < jd.n(); ++i) {
    double row = 0.0;
    for (std::uint32_t j = 0; j < jd.n(); ++j) row += jd.gamma(i, j);
    EXPECT_NEAR(marginal(jd, i), row, 1e-15);
  }
}

TEST(Joint, ValidateFlagsNegativeEntry) {
  auto jd = uniform_joint(PixelGrid::centered(4, 1.0));
  jd.gamma(1, 2) = -0.01;
  jd.recompute_marginal();
  bool flagged = false;
  for (const auto& v : validate(jd)) flagged = flagged || v.invariant.find("negativ") != std::string::npos;
  EXPECT_TRUE(flagged);
}

TEST(Joint, ValidateFlagsBadNormalization) {
  auto jd = uniform_joint(PixelGrid::centered(4, 1.0));
  jd.gamma(0, 0) += 0.5;
  jd.recompute_marginal();
  bool flagged = false;
  for (const auto& v : validate(jd))
    flagged = flagged || v.invariant.find("normal") != std::string::npos;
  EXPECT_TRUE(flagged);
}

TEST(Joint, ValidateFlagsMarginalMismatch) {
  auto jd = uniform_joint(PixelGrid::centered(4, 1.0));
  jd.gamma_marginal[2] += 0.01;
  bool flagged = false;
  for (const auto& v : validate(jd))
    flagged = flagged || v.invariant.find("marginal") != std::string::npos;
  EXPECT_TRUE(flagged);
}

TEST(Joint, TwoRowEmbedding) {
  const std::uint32_t n = 6;
  const auto base =
      build_double_gaussian(PixelGrid::centered(n, 13.0), DoubleGaussianParams{1.0, 20.0, 80.0});
  const auto full = embed_two_row(base);
  ASSERT_EQ(full.n(), 2 * n);
  EXPECT_TRUE(validate(full).empty());
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t j = 0; j < n; ++j) {
      EXPECT_DOUBLE_EQ(full.gamma(i, n + j), base.gamma(i, j) / 2.0);
      EXPECT_DOUBLE_EQ(full.gamma(n + j, i), base.gamma(i, j) / 2.0);
      EXPECT_DOUBLE_EQ(full.gamma(i, j), 0.0);
      EXPECT_DOUBLE_EQ(full.gamma(n + i, n + j), 0.0);
    }
}

TEST(Io, MatrixCsvRoundTrip) {
  const auto jd =
      build_double_gaussian(PixelGrid::centered(9, 13.0), DoubleGaussianParams{1.0, 18.0, 120.0});
  const std::string path = temp_path("paircam_test_matrix.csv");
  write_joint_csv(path, jd);
  const auto back = load_joint_csv(path);
  ASSERT_EQ(back.n(), jd.n());
  EXPECT_EQ(back.grid.n_pixels, jd.grid.n_pixels);
  EXPECT_DOUBLE_EQ(back.grid.pitch_um, jd.grid.pitch_um);
  EXPECT_DOUBLE_EQ(back.grid.origin_um, jd.grid.origin_um);
  for (std::uint32_t i = 0; i < jd.n(); ++i)
    for (std::uint32_t j = 0; j < jd.n(); ++j)
      EXPECT_DOUBLE_EQ(back.gamma(i, j), jd.gamma(i, j));
  std::remove(path.c_str());
  std::remove((path + ".json").c_str());
}

TEST(Io, ChecksumDetectsCorruption) {
  const auto jd =
      build_double_gaussian(PixelGrid::centered(5, 13.0), DoubleGaussianParams{1.0, 18.0, 120.0});
  const std::string path = temp_path("paircam_test_corrupt.csv");
  write_joint_csv(path, jd);
  {
    std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
    f.seekp(3);
    f.put('9');
  }
  EXPECT_THROW(load_matrix_csv(path), std::runtime_error);
  std::remove(path.c_str());
  std::remove((path + ".json").c_str());
}

TEST(Io, MissingSidecarFallsBackToUnitGrid) {
  const std::string path = temp_path("paircam_test_bare.csv");
  write_file(path, "0.25,0.25\n0.25,0.25\n");
  const auto lm = load_matrix_csv(path);
  EXPECT_EQ(lm.grid.n_pixels, 2u);
  EXPECT_DOUBLE_EQ(lm.grid.pitch_um, 1.0);
  std::remove(path.c_str());
}

TEST(Io, NonSquareCsvRejected) {
  const std::string path = temp_path("paircam_test_nonsquare.csv");
  write_file(path, "0.5,0.5\n");
  EXPECT_THROW(load_matrix_csv(path), std::runtime_error);
  std::remove(path.c_str());
}

TEST(Io, SubnormalEntriesLoad) {
  // Tail cells of a wide joint distribution underflow below DBL_MIN; the
  // loader must accept subnormals rather than reject the whole file.
  const std::string path = temp_path("paircam_test_subnormal.csv");
  write_file(path, "2.0483912270013498e-318,0.5\n0.5,1e-320\n");
  const auto lm = load_matrix_csv(path);
  EXPECT_GT(lm.m(0, 0), 0.0);
  EXPECT_LT(lm.m(0, 0), 1e-317);
  EXPECT_GT(lm.m(1, 1), 0.0);
  EXPECT_DOUBLE_EQ(lm.m(0, 1), 0.5);
  std::remove(path.c_str());
}

TEST(Io, MalformedNumberRejected) {
  const std::string path = temp_path("paircam_test_badnum.csv");
  write_file(path, "0.5,oops\n0.5,0.5\n");
  EXPECT_THROW(load_matrix_csv(path), std::runtime_error);
  std::remove(path.c_str());
}

TEST(Io, Fnv64KnownValue) {
  // FNV-1a 64 of "a" per the reference parameters.
  EXPECT_EQ(to_hex(fnv1a64("a", 1)), "af63dc4c8601ec8c");
}

} // namespace
