#pragma once

// Brute-force reference for the conditional count laws. Every placement of
// m pairs on the pixel grid and every per-photon survival mask is visited
// explicitly, so the only physics encoded here is the model definition
// itself: pairs land on ordered cells (a, b) with probability gamma(a, b),
// each photon then survives detection independently with probability eta.
// Nothing is shared with the closed-form implementation being checked.

#include <cstdint>
#include <vector>

#include "paircam/compensated.hpp"
#include "paircam/joint.hpp"
#include "paircam/rng.hpp"

namespace enumeration {

struct CountLaw {
  int width = 0;             // 2m + 1
  std::vector<double> joint; // row k_i, col k_j
  std::vector<double> single_i;
  std::vector<double> single_j;

  [[nodiscard]] double at(int ki, int kj) const { return joint[ki * width + kj]; }
};

// Exhaustive electron-count law at pixels i and j for exactly m pairs.
// Placements are enumerated as base-(n^2) codes, survival masks as 2m-bit
// integers; photon 2p sits at the row pixel of pair p, photon 2p+1 at the
// column pixel.
inline CountLaw enumerate_electrons(const paircam::JointDistribution& jd, std::uint32_t i,
                                    std::uint32_t j, int m, double eta) {
  const std::size_t n = jd.n();
  const std::size_t cells = n * n;
  const int width = 2 * m + 1;

  std::vector<paircam::CompensatedSum> bins(width * width);

  std::uint64_t n_place = 1;
  for (int p = 0; p < m; ++p) n_place *= cells;

  std::vector<std::uint32_t> photon_pixel(2 * m);
  for (std::uint64_t code = 0; code < n_place; ++code) {
    std::uint64_t c = code;
    double place_prob = 1.0;
    for (int p = 0; p < m; ++p) {
      const std::size_t cell = c % cells;
      c /= cells;
      const std::size_t a = cell / n;
      const std::size_t b = cell % n;
      place_prob *= jd.gamma(a, b);
      photon_pixel[2 * p] = static_cast<std::uint32_t>(a);
      photon_pixel[2 * p + 1] = static_cast<std::uint32_t>(b);
    }
    if (place_prob == 0.0) continue;

    const int n_photons = 2 * m;
    for (std::uint32_t mask = 0; mask < (1u << n_photons); ++mask) {
      double prob = place_prob;
      int ki = 0;
      int kj = 0;
      for (int ph = 0; ph < n_photons; ++ph) {
        if (mask >> ph & 1u) {
          prob *= eta;
          if (photon_pixel[ph] == i)
            ++ki;
          else if (photon_pixel[ph] == j)
            ++kj;
        } else {
          prob *= 1.0 - eta;
        }
      }
      bins[ki * width + kj].add(prob);
    }
  }

  CountLaw law;
  law.width = width;
  law.joint.resize(width * width);
  for (int k = 0; k < width * width; ++k) law.joint[k] = bins[k].value();
  law.single_i.assign(width, 0.0);
  law.single_j.assign(width, 0.0);
  for (int ki = 0; ki < width; ++ki)
    for (int kj = 0; kj < width; ++kj) {
      law.single_i[ki] += law.at(ki, kj);
      law.single_j[kj] += law.at(ki, kj);
    }
  return law;
}

// Exhaustive photon-count law: placements only, no survival masks.
inline CountLaw enumerate_photons(const paircam::JointDistribution& jd, std::uint32_t i,
                                  std::uint32_t j, int m) {
  const std::size_t n = jd.n();
  const std::size_t cells = n * n;
  const int width = 2 * m + 1;

  std::vector<paircam::CompensatedSum> bins(width * width);

  std::uint64_t n_place = 1;
  for (int p = 0; p < m; ++p) n_place *= cells;

  for (std::uint64_t code = 0; code < n_place; ++code) {
    std::uint64_t c = code;
    double prob = 1.0;
    int ni = 0;
    int nj = 0;
    for (int p = 0; p < m; ++p) {
      const std::size_t cell = c % cells;
      c /= cells;
      const std::size_t a = cell / n;
      const std::size_t b = cell % n;
      prob *= jd.gamma(a, b);
      ni += (a == i) + (b == i);
      nj += (a == j) + (b == j);
    }
    bins[ni * width + nj].add(prob);
  }

  CountLaw law;
  law.width = width;
  law.joint.resize(width * width);
  for (int k = 0; k < width * width; ++k) law.joint[k] = bins[k].value();
  law.single_i.assign(width, 0.0);
  law.single_j.assign(width, 0.0);
  for (int ni = 0; ni < width; ++ni)
    for (int nj = 0; nj < width; ++nj) {
      law.single_i[ni] += law.at(ni, nj);
      law.single_j[nj] += law.at(ni, nj);
    }
  return law;
}

// Random joint law on an n-pixel grid; a genuine distribution satisfies
// every constraint of the conditional formulas by construction.
inline paircam::JointDistribution random_joint(paircam::RngStream& rng, std::uint32_t n) {
  paircam::JointDistribution jd;
  jd.grid = paircam::PixelGrid::centered(n, 1.0);
  jd.gamma = paircam::SquareMatrix(n);
  double total = 0.0;
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t j = i; j < n; ++j) {
      const double v = rng.uniform();
      jd.gamma(i, j) = v;
      jd.gamma(j, i) = v;
      total += i == j ? v : 2.0 * v;
    }
  for (double& v : jd.gamma.data()) v /= total;
  jd.recompute_marginal();
  return jd;
}

} // namespace enumeration
