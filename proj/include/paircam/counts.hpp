#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "paircam/binomial.hpp"

namespace paircam {

// Per-frame pair-count law. Poisson and Explicit provide actual masses;
// MomentsOnly carries just (mean, variance) for the closed-form moment
// expressions and cannot be sampled or summed over.
class PairCountDistribution {
public:
  enum class Kind { Poisson, Explicit, MomentsOnly };

  static PairCountDistribution poisson(double mean) {
    if (!(mean >= 0.0)) throw std::invalid_argument("pair count: mean must be >= 0");
    PairCountDistribution d;
    d.kind_ = Kind::Poisson;
    d.mean_ = mean;
    d.variance_ = mean;
    return d;
  }

  static PairCountDistribution explicit_masses(std::vector<double> probs) {
    double sum = 0.0;
    for (double p : probs) {
      if (p < 0.0) throw std::invalid_argument("pair count: negative mass");
      sum += p;
    }
    if (std::abs(sum - 1.0) > 1e-12)
      throw std::invalid_argument("pair count: masses must sum to 1");
    PairCountDistribution d;
    d.kind_ = Kind::Explicit;
    d.probs_ = std::move(probs);
    double mean = 0.0;
    double second = 0.0;
    for (std::size_t m = 0; m < d.probs_.size(); ++m) {
      mean += static_cast<double>(m) * d.probs_[m];
      second += static_cast<double>(m) * static_cast<double>(m) * d.probs_[m];
    }
    d.mean_ = mean;
    d.variance_ = second - mean * mean;
    return d;
  }

  static PairCountDistribution moments_only(double mean, double variance) {
    if (!(mean >= 0.0) || !(variance >= 0.0))
      throw std::invalid_argument("pair count: mean and variance must be >= 0");
    PairCountDistribution d;
    d.kind_ = Kind::MomentsOnly;
    d.mean_ = mean;
    d.variance_ = variance;
    return d;
  }

  [[nodiscard]] Kind kind() const { return kind_; }
  [[nodiscard]] double mean() const { return mean_; }
  [[nodiscard]] double variance() const { return variance_; }
  [[nodiscard]] const std::vector<double>& masses() const { return probs_; }

  [[nodiscard]] bool has_masses() const { return kind_ != Kind::MomentsOnly; }

  [[nodiscard]] double mass(int m) const {
    switch (kind_) {
      case Kind::Poisson:
        if (m < 0) return 0.0;
        if (mean_ == 0.0) return m == 0 ? 1.0 : 0.0;
        return std::exp(static_cast<double>(m) * std::log(mean_) - mean_ - std::lgamma(m + 1.0));
      case Kind::Explicit:
        return (m >= 0 && static_cast<std::size_t>(m) < probs_.size()) ? probs_[m] : 0.0;
      case Kind::MomentsOnly:
        break;
    }
    throw std::logic_error("pair count: moments-only law has no masses");
  }

  // Largest m any truncated sum must visit: Explicit laws end at their
  // support; Poisson tails are cut by the caller's stopping rule.
  [[nodiscard]] int max_m() const {
    switch (kind_) {
      case Kind::Poisson:
        return kMaxPairs;
      case Kind::Explicit:
        return static_cast<int>(probs_.size()) - 1;
      case Kind::MomentsOnly:
        break;
    }
    throw std::logic_error("pair count: moments-only law has no masses");
  }

private:
  Kind kind_ = Kind::Poisson;
  double mean_ = 0.0;
  double variance_ = 0.0;
  std::vector<double> probs_;
};

} // namespace paircam
