#pragma once

#include <cmath>
#include <cstdint>
#include <numbers>
#include <stdexcept>
#include <utility>
#include <variant>
#include <vector>

#include "paircam/counts.hpp"
#include "paircam/grid.hpp"
#include "paircam/joint.hpp"
#include "paircam/response.hpp"
#include "paircam/rng.hpp"

namespace paircam {

struct Frame {
  enum class Kind { Binary, Gray };
  Kind kind = Kind::Gray;
  std::vector<double> values;
};

struct SpcMode {
  double p10 = 0.0;
};

struct EmccdLinearMode {
  EmccdNoiseParams noise;
};

struct EmccdThresholdedMode {
  EmccdNoiseParams noise;
  double threshold = 0.0;
};

// Slow multiplicative modulation of the amplified charge:
// factor(l) = 1 + amplitude * sin(2*pi*l / period). Off when amplitude = 0.
struct GainDrift {
  double amplitude = 0.0;
  std::uint64_t period_frames = 0;

  [[nodiscard]] double factor(std::uint64_t frame) const {
    if (amplitude == 0.0 || period_frames == 0) return 1.0;
    return 1.0 + amplitude *
                     std::sin(2.0 * std::numbers::pi * static_cast<double>(frame) /
                              static_cast<double>(period_frames));
  }
};

struct SensorConfig {
  PixelGrid grid;
  double eta = 1.0;
  std::variant<SpcMode, EmccdLinearMode, EmccdThresholdedMode> mode;
  GainDrift drift;

  [[nodiscard]] bool binary_output() const { return !std::holds_alternative<EmccdLinearMode>(mode); }

  void require_valid() const {
    grid.require_valid();
    if (!(eta >= 0.0 && eta <= 1.0)) throw std::invalid_argument("sensor: eta must be in [0,1]");
    if (const auto* spc = std::get_if<SpcMode>(&mode)) {
      if (!(spc->p10 >= 0.0 && spc->p10 <= 1.0))
        throw std::invalid_argument("sensor: p10 must be in [0,1]");
    }
  }
};

// Per-frame handle deriving the independent lane streams.
struct FrameRng {
  std::uint64_t seed = 0;
  std::uint64_t frame = 0;

  [[nodiscard]] RngStream lane(std::uint64_t l) const { return RngStream::for_frame(seed, frame, l); }
};

inline std::uint64_t sample_pair_count(const PairCountDistribution& counts, RngStream& rng) {
  switch (counts.kind()) {
    case PairCountDistribution::Kind::Poisson:
      return rng.poisson(counts.mean());
    case PairCountDistribution::Kind::Explicit: {
      const double u = rng.uniform();
      double cdf = 0.0;
      const auto& p = counts.masses();
      for (std::size_t m = 0; m < p.size(); ++m) {
        cdf += p[m];
        if (u < cdf) return m;
      }
      return p.empty() ? 0 : p.size() - 1;
    }
    case PairCountDistribution::Kind::MomentsOnly:
      break;
  }
  throw std::logic_error("sample_pair_count: moments-only law cannot be sampled");
}

// Walker/Vose alias table over the N^2 ordered cells of a joint law;
// two uniforms per draw, O(1).
class PairPositionSampler {
public:
  explicit PairPositionSampler(const JointDistribution& jd) : n_(jd.n()) {
    const std::size_t cells = static_cast<std::size_t>(n_) * n_;
    prob_.resize(cells);
    alias_.resize(cells);

    std::vector<double> scaled(cells);
    for (std::size_t c = 0; c < cells; ++c)
      scaled[c] = jd.gamma.data()[c] * static_cast<double>(cells);

    std::vector<std::uint32_t> small, large;
    small.reserve(cells);
    large.reserve(cells);
    for (std::size_t c = 0; c < cells; ++c)
      (scaled[c] < 1.0 ? small : large).push_back(static_cast<std::uint32_t>(c));

    while (!small.empty() && !large.empty()) {
      const std::uint32_t s = small.back();
      small.pop_back();
      const std::uint32_t l = large.back();
      prob_[s] = scaled[s];
      alias_[s] = l;
      scaled[l] -= 1.0 - scaled[s];
      if (scaled[l] < 1.0) {
        large.pop_back();
        small.push_back(l);
      }
    }
    for (std::uint32_t c : large) prob_[c] = 1.0;
    for (std::uint32_t c : small) prob_[c] = 1.0; // numerical leftovers
    for (std::size_t c = 0; c < cells; ++c)
      if (prob_[c] >= 1.0) alias_[c] = static_cast<std::uint32_t>(c);
  }

  [[nodiscard]] std::pair<std::uint32_t, std::uint32_t> sample_one(RngStream& rng) const {
    const std::uint64_t slot = rng.uniform_int(prob_.size());
    const std::uint32_t cell =
        rng.uniform() < prob_[slot] ? static_cast<std::uint32_t>(slot) : alias_[slot];
    return {cell / n_, cell % n_};
  }

  void sample(std::uint64_t m, RngStream& rng,
              std::vector<std::pair<std::uint32_t, std::uint32_t>>& out) const {
    out.clear();
    out.reserve(m);
    for (std::uint64_t i = 0; i < m; ++i) out.push_back(sample_one(rng));
  }

private:
  std::uint32_t n_;
  std::vector<double> prob_;
  std::vector<std::uint32_t> alias_;
};

inline std::vector<std::pair<std::uint32_t, std::uint32_t>>
sample_pair_positions(const JointDistribution& jd, std::uint64_t m, RngStream& rng) {
  PairPositionSampler sampler(jd);
  std::vector<std::pair<std::uint32_t, std::uint32_t>> out;
  sampler.sample(m, rng, out);
  return out;
}

// Each of the 2m photons survives independently with probability eta and
// increments its pixel's photoelectron count.
inline std::vector<std::uint32_t>
detect_photoelectrons(const std::vector<std::pair<std::uint32_t, std::uint32_t>>& pairs,
                      double eta, std::uint32_t n_pixels, RngStream& rng) {
  std::vector<std::uint32_t> k(n_pixels, 0);
  for (const auto& [i, j] : pairs) {
    if (rng.bernoulli(eta)) ++k[i];
    if (rng.bernoulli(eta)) ++k[j];
  }
  return k;
}

// Binary counter: any electron fires the pixel; an empty pixel fires with
// probability p10. One lane per pixel keeps draws order-independent.
inline Frame spc_readout(const std::vector<std::uint32_t>& k, double p10, const FrameRng& fr) {
  Frame f;
  f.kind = Frame::Kind::Binary;
  f.values.resize(k.size());
  for (std::size_t p = 0; p < k.size(); ++p) {
    if (k[p] > 0) {
      f.values[p] = 1.0;
    } else {
      RngStream s = fr.lane(kLaneReadoutBase + p);
      f.values[p] = s.bernoulli(p10) ? 1.0 : 0.0;
    }
  }
  return f;
}

namespace sensor_detail {

// One pixel of the gain-register chain, in electrons before ADC scaling.
inline double emccd_amplified_charge(std::uint32_t k, const EmccdNoiseParams& p, RngStream& s) {
  double e = s.erlang(k, p.gain);
  if (s.bernoulli(p.p_parallel)) e += s.exponential(p.gain);
  const std::uint64_t injections = s.binomial(p.register_cells, p.p_serial);
  for (std::uint64_t i = 0; i < injections; ++i) {
    const auto exponent = static_cast<double>(s.uniform_int(p.register_cells));
    e += s.exponential(std::pow(1.0 + p.p_dup, exponent));
  }
  return e;
}

} // namespace sensor_detail

// Full chain: amplified signal + spurious charge, Gaussian readout, ADC
// scale. gain_factor multiplies the amplified charge only (drift hook).
inline Frame emccd_readout(const std::vector<std::uint32_t>& k, const EmccdNoiseParams& p,
                           const FrameRng& fr, double gain_factor = 1.0) {
  Frame f;
  f.kind = Frame::Kind::Gray;
  f.values.resize(k.size());
  for (std::size_t px = 0; px < k.size(); ++px) {
    RngStream s = fr.lane(kLaneReadoutBase + px);
    const double charge = sensor_detail::emccd_amplified_charge(k[px], p, s);
    const double read = s.gaussian(p.read_noise_mean, p.read_noise_std);
    f.values[px] = p.adc_scale * (gain_factor * charge + read);
  }
  return f;
}

// Deterministic forward model: every random input of frame f is a pure
// function of (seed, f, lane), so frames can be generated in any order or
// from any thread and agree bit for bit.
class FrameSimulator {
public:
  FrameSimulator(const JointDistribution& jd, PairCountDistribution counts, SensorConfig sensor)
      : jd_(jd), counts_(std::move(counts)), sensor_(std::move(sensor)), sampler_(jd) {
    sensor_.require_valid();
    if (sensor_.grid.n_pixels != jd.n())
      throw std::invalid_argument("simulate: sensor grid and joint law disagree on N");
    const auto violations = validate(jd);
    if (!violations.empty())
      throw std::invalid_argument("simulate: invalid joint law: " + violations.front().invariant);
  }

  [[nodiscard]] const SensorConfig& sensor() const { return sensor_; }
  [[nodiscard]] const JointDistribution& joint() const { return jd_; }

  [[nodiscard]] Frame frame(std::uint64_t seed, std::uint64_t f) const {
    const FrameRng fr{seed, f};
    RngStream count_stream = fr.lane(kLanePairCount);
    const std::uint64_t m = sample_pair_count(counts_, count_stream);

    thread_local std::vector<std::pair<std::uint32_t, std::uint32_t>> pairs;
    RngStream pos_stream = fr.lane(kLanePositions);
    sampler_.sample(m, pos_stream, pairs);

    RngStream thin_stream = fr.lane(kLaneThinning);
    const std::vector<std::uint32_t> k =
        detect_photoelectrons(pairs, sensor_.eta, sensor_.grid.n_pixels, thin_stream);

    const double gain_factor = sensor_.drift.factor(f);
    if (const auto* spc = std::get_if<SpcMode>(&sensor_.mode)) return spc_readout(k, spc->p10, fr);
    if (const auto* lin = std::get_if<EmccdLinearMode>(&sensor_.mode))
      return emccd_readout(k, lin->noise, fr, gain_factor);
    const auto& thr = std::get<EmccdThresholdedMode>(sensor_.mode);
    Frame gray = emccd_readout(k, thr.noise, fr, gain_factor);
    Frame f2;
    f2.kind = Frame::Kind::Binary;
    f2.values.resize(gray.values.size());
    for (std::size_t p = 0; p < gray.values.size(); ++p)
      f2.values[p] = gray.values[p] >= thr.threshold ? 1.0 : 0.0;
    return f2;
  }

private:
  JointDistribution jd_;
  PairCountDistribution counts_;
  SensorConfig sensor_;
  PairPositionSampler sampler_;
};

// Sequential frame stream, frames 0..n_frames-1 in order.
template <typename Sink>
void simulate_frames(const JointDistribution& jd, const PairCountDistribution& counts,
                     const SensorConfig& sensor, std::uint64_t n_frames, std::uint64_t seed,
                     Sink&& sink) {
  FrameSimulator sim(jd, counts, sensor);
  for (std::uint64_t f = 0; f < n_frames; ++f) sink(f, sim.frame(seed, f));
}

} // namespace paircam
