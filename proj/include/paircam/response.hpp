#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <stdexcept>

namespace paircam {

// Per-pixel readout statistics conditioned on the photoelectron count k:
// mean output I(k) and raw second moment J(k).
struct ResponseMoments {
  std::function<double(int)> mean;          // I_k
  std::function<double(int)> second_moment; // J_k
};

// Binary counter: a pixel with electrons always reports 1; an empty pixel
// reports 1 with the noise-count probability p10. Output is 0/1, so the
// second moment equals the mean.
inline ResponseMoments spc_response(double p10) {
  if (!(p10 >= 0.0 && p10 <= 1.0)) throw std::invalid_argument("spc response: p10 must be in [0,1]");
  auto mean = [p10](int k) { return k > 0 ? 1.0 : p10; };
  return ResponseMoments{mean, mean};
}

// Electron-multiplying readout chain. The stored fields are the chain's
// physical parameters; gain, linear-response slope/offset, and the empty-
// pixel variance are derived at construction by summing the per-cell
// contributions of the register model.
struct EmccdNoiseParams {
  // chain parameters
  std::uint32_t register_cells = 0; // L
  double p_dup = 0.0;               // per-cell duplication probability
  double adc_scale = 0.0;           // gray values per output electron
  double p_serial = 0.0;            // per-cell spurious-electron probability
  double p_parallel = 0.0;          // pre-register spurious-electron probability
  double read_noise_std = 0.0;      // gray
  double read_noise_mean = 0.0;     // gray

  // derived
  double gain = 0.0;         // g = (1 + p_dup)^L
  double slope = 0.0;        // A = adc_scale * g
  double offset = 0.0;       // x0 = E[output | k = 0]
  double offset_var = 0.0;   // sigma0^2 = Var[output | k = 0]

  static EmccdNoiseParams make(std::uint32_t cells, double p_dup, double adc_scale,
                               double p_serial, double p_parallel, double read_noise_std,
                               double read_noise_mean) {
    if (cells < 1) throw std::invalid_argument("emccd: register_cells must be >= 1");
    if (!(p_dup > 0.0 && p_dup < 1.0)) throw std::invalid_argument("emccd: p_dup must be in (0,1)");
    if (!(adc_scale > 0.0)) throw std::invalid_argument("emccd: adc_scale must be > 0");
    if (!(p_serial >= 0.0 && p_serial <= 1.0) || !(p_parallel >= 0.0 && p_parallel <= 1.0))
      throw std::invalid_argument("emccd: spurious probabilities must be in [0,1]");
    if (!(read_noise_std >= 0.0)) throw std::invalid_argument("emccd: read_noise_std must be >= 0");

    EmccdNoiseParams p;
    p.register_cells = cells;
    p.p_dup = p_dup;
    p.adc_scale = adc_scale;
    p.p_serial = p_serial;
    p.p_parallel = p_parallel;
    p.read_noise_std = read_noise_std;
    p.read_noise_mean = read_noise_mean;

    p.gain = std::pow(1.0 + p_dup, static_cast<double>(cells));
    p.slope = adc_scale * p.gain;

    // Empty-pixel output: parallel spurious electron amplified through the
    // full register, plus per-cell serial injections amplified through the
    // remaining cells, plus Gaussian readout. Accumulate the exact first
    // and second moments cell by cell; each injection is exponential with
    // mean equal to its remaining gain.
    double serial_mean = 0.0; // sum over cells of remaining gain
    double serial_sq = 0.0;   // sum over cells of remaining gain squared
    for (std::uint32_t c = 0; c < cells; ++c) {
      const double gl = std::pow(1.0 + p_dup, static_cast<double>(c));
      serial_mean += gl;
      serial_sq += gl * gl;
    }
    const double g = p.gain;
    const double mean_e = p_parallel * g + p_serial * serial_mean;
    const double var_e = p_parallel * g * g * (2.0 - p_parallel) + p_serial * (2.0 - p_serial) * serial_sq;
    p.offset = adc_scale * (read_noise_mean + mean_e);
    p.offset_var = adc_scale * adc_scale * (read_noise_std * read_noise_std + var_e);
    return p;
  }
};

// Linear gray-value response: I_k = A*k + x0; the conditional variance of
// the output given k electrons is A^2*k + sigma0^2.
inline ResponseMoments emccd_response(const EmccdNoiseParams& p) {
  const double a = p.slope;
  const double x0 = p.offset;
  const double s0 = p.offset_var;
  auto mean = [a, x0](int k) { return a * static_cast<double>(k) + x0; };
  auto second = [a, x0, s0](int k) {
    const double mu = a * static_cast<double>(k) + x0;
    return mu * mu + a * a * static_cast<double>(k) + s0;
  };
  return ResponseMoments{mean, second};
}

} // namespace paircam
