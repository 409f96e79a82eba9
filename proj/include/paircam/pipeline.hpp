#pragma once

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <functional>
#include <mutex>
#include <stdexcept>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "paircam/accumulator.hpp"
#include "paircam/config.hpp"
#include "paircam/fit.hpp"
#include "paircam/framestack.hpp"
#include "paircam/io.hpp"
#include "paircam/reconstruct.hpp"
#include "paircam/sensor.hpp"
#include "paircam/version.hpp"

namespace paircam {

using ProgressFn = std::function<void(std::uint64_t done, std::uint64_t total)>;

// Frames are sharded into a fixed number of contiguous blocks so results
// are identical for every thread count: block accumulators merge in block
// order and stack bytes land at precomputed offsets.
inline constexpr std::uint64_t kPipelineBlocks = 64;

namespace pipeline_detail {

inline std::uint64_t block_lo(std::uint64_t b, std::uint64_t frames, std::uint64_t blocks) {
  return b * frames / blocks;
}

} // namespace pipeline_detail

// Simulates `frames` frames, optionally streaming them to a stack file, and
// returns the merged moment accumulator. Deterministic in (seed, config);
// independent of `threads`.
inline MomentAccumulator run_simulation(const JointDistribution& jd, const SensorConfig& sensor,
                                        const PairCountDistribution& counts,
                                        std::uint64_t frames, std::uint64_t seed,
                                        unsigned threads, const std::string& stack_path,
                                        const ProgressFn& progress = {}) {
  if (frames == 0) throw std::invalid_argument("run_simulation: frames must be >= 1");
  FrameSimulator sim(jd, counts, sensor);
  const std::uint32_t n = sensor.grid.n_pixels;
  const auto kind = sensor.binary_output() ? Frame::Kind::Binary : Frame::Kind::Gray;
  const std::size_t rec_size = stack_record_size(n, kind);

  const bool writing = !stack_path.empty();
  if (writing) {
    write_file(stack_path, render_stack_header(n, frames, kind));
    std::filesystem::resize_file(stack_path, kStackHeaderSize + rec_size * frames);
  }

  const std::uint64_t blocks = frames < kPipelineBlocks ? frames : kPipelineBlocks;
  std::vector<MomentAccumulator> accs;
  accs.reserve(blocks);
  for (std::uint64_t b = 0; b < blocks; ++b) accs.emplace_back(n);

  if (threads == 0) threads = std::thread::hardware_concurrency();
  if (threads == 0) threads = 1;
  if (threads > blocks) threads = static_cast<unsigned>(blocks);

  std::atomic<std::uint64_t> next_block{0};
  std::atomic<std::uint64_t> frames_done{0};
  std::mutex progress_mutex;
  std::vector<std::string> errors(threads);

  const auto worker = [&](unsigned tid) {
    try {
      std::fstream out;
      if (writing) {
        out.open(stack_path, std::ios::in | std::ios::out | std::ios::binary);
        if (!out) throw std::runtime_error("run_simulation: cannot reopen " + stack_path);
      }
      std::string buf;
      Frame frame;
      for (;;) {
        const std::uint64_t b = next_block.fetch_add(1);
        if (b >= blocks) break;
        const std::uint64_t lo = pipeline_detail::block_lo(b, frames, blocks);
        const std::uint64_t hi = pipeline_detail::block_lo(b + 1, frames, blocks);
        buf.clear();
        for (std::uint64_t f = lo; f < hi; ++f) {
          frame = sim.frame(seed, f);
          accs[b].push(frame);
          if (writing) serialize_frame(frame, buf);
        }
        if (writing && !buf.empty()) {
          out.seekp(static_cast<std::streamoff>(kStackHeaderSize + rec_size * lo));
          out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
          if (!out) throw std::runtime_error("run_simulation: write failed on " + stack_path);
        }
        const std::uint64_t done = frames_done.fetch_add(hi - lo) + (hi - lo);
        if (progress) {
          std::lock_guard<std::mutex> lk(progress_mutex);
          progress(done, frames);
        }
      }
      if (writing) out.flush();
    } catch (const std::exception& e) {
      errors[tid] = e.what();
    }
  };

  if (threads == 1) {
    worker(0);
  } else {
    std::vector<std::thread> pool;
    pool.reserve(threads);
    for (unsigned t = 0; t < threads; ++t) pool.emplace_back(worker, t);
    for (auto& t : pool) t.join();
  }
  for (const auto& e : errors)
    if (!e.empty()) throw std::runtime_error(e);

  MomentAccumulator merged = std::move(accs[0]);
  for (std::uint64_t b = 1; b < blocks; ++b) merged.merge(accs[b]);
  return merged;
}

// Replays a stack file into a fresh accumulator.
inline MomentAccumulator accumulate_stack(const std::string& stack_path,
                                          const ProgressFn& progress = {}) {
  StackReader reader(stack_path);
  MomentAccumulator acc(reader.n_pixels());
  Frame frame;
  std::uint64_t done = 0;
  while (reader.next(frame)) {
    acc.push(frame);
    ++done;
    if (progress && (done & 0xFFFF) == 0) progress(done, reader.n_frames());
  }
  if (done != reader.n_frames())
    throw std::runtime_error("accumulate_stack: frame count mismatch in " + stack_path);
  return acc;
}

// Everything the inversion formulas need, extracted from a config.
struct ModeParams {
  bool binary = false;
  bool poisson = true;
  double eta = 1.0;
  double mbar = 0.0;
  double var_m = 0.0;
  double a = 0.0;         // gray modes
  double x0 = 0.0;        // gray modes
  double sigma0_sq = 0.0; // gray modes
  double p10 = 0.0;       // binary mode
};

inline ModeParams mode_params_from(const ExperimentConfig& cfg) {
  ModeParams mp;
  mp.poisson = cfg.pairs.kind() == PairCountDistribution::Kind::Poisson;
  mp.eta = cfg.sensor.eta;
  mp.mbar = cfg.pairs.mean();
  mp.var_m = cfg.pairs.variance();
  mp.binary = cfg.sensor.binary_output();
  if (const auto* spc = std::get_if<SpcMode>(&cfg.sensor.mode)) {
    mp.p10 = spc->p10;
  } else if (const auto* lin = std::get_if<EmccdLinearMode>(&cfg.sensor.mode)) {
    mp.a = lin->noise.slope;
    mp.x0 = lin->noise.offset;
    mp.sigma0_sq = lin->noise.offset_var;
  }
  return mp;
}

// Delta-method standard error of each raw off-diagonal inversion entry,
// computed from the accumulator's own first and second moments: the
// covariance estimate has variance ~ (Var_i Var_j + cov^2) / M, mapped
// through the local derivative of the inversion formula. Leading order
// only (mean-estimation and higher-cumulant terms are dropped), which is
// all a significance threshold needs.
inline SquareMatrix inversion_stderr(const MomentAccumulator& acc, const ModeParams& mp) {
  const std::vector<double> mean = acc.mean_direct();
  const SquareMatrix corr = acc.mean_corr();
  const std::size_t n = mean.size();
  const double frames = static_cast<double>(acc.n_frames());
  std::vector<double> var(n);
  for (std::size_t i = 0; i < n; ++i)
    var[i] = std::max(corr(i, i) - mean[i] * mean[i], 0.0);

  const double scale = mp.binary ? 1.0 / (2.0 * mp.eta * mp.eta * mp.mbar)
                                 : 1.0 / (2.0 * mp.a * mp.a * mp.mbar * mp.eta * mp.eta);
  SquareMatrix out(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) {
      if (i == j) continue;
      const double cov = corr(i, j) - mean[i] * mean[j];
      const double sd_cov = std::sqrt((var[i] * var[j] + cov * cov) / frames);
      double deriv = scale;
      if (mp.binary) {
        const double den = (1.0 - mean[i]) * (1.0 - mean[j]) + cov;
        deriv = scale / std::max(den, 1e-12);
      }
      out(i, j) = sd_cov * deriv;
    }
  return out;
}

// Accumulated moments -> normalized joint estimate. Binary stacks use the
// logarithmic counter inversion (no diagonal); gray stacks use the linear
// inversion plus the second-moment diagonal, with the rank-one non-Poisson
// correction when the pair-count law is not Poissonian.
inline ReconstructionResult reconstruct_from_accumulator(const MomentAccumulator& acc,
                                                         const ModeParams& mp,
                                                         const ReconstructionOptions& opts,
                                                         bool apply_background) {
  if (mp.binary && !mp.poisson)
    throw std::runtime_error(
        "reconstruct: binary-counter inversion requires Poissonian pair counts");

  const std::vector<double> mean = acc.mean_direct();
  const SquareMatrix corr = acc.mean_corr();
  BackgroundReport report;
  SquareMatrix raw(0);
  std::vector<double> diagonal;
  std::string note;

  if (mp.binary) {
    raw = reconstruct_spc(mean, corr, mp.eta, mp.mbar, &report);
    note = "absolute scale 1/(2 eta^2 mbar); diagonal unavailable from binary output";
  } else {
    if (mp.poisson) {
      raw = reconstruct_emccd(mean, corr, mp.a, mp.eta, mp.mbar);
      note = "absolute scale 1/(2 A^2 mbar eta^2)";
    } else {
      raw = reconstruct_general(mean, corr, mp.a, mp.x0, mp.eta, mp.mbar, mp.var_m);
      note = "absolute scale 1/(2 A^2 mbar eta^2); non-Poisson rank-one correction applied";
    }
    diagonal = reconstruct_diagonal(mean, acc.mean_square(), mp.a, mp.x0, mp.sigma0_sq, mp.eta,
                                    mp.mbar, mp.var_m);
  }

  if (apply_background) raw = remove_background(raw, opts.background_width, &report);
  const std::size_t n = raw.size();
  SquareMatrix window(n, 1.0);
  if (opts.ridge_width > 1) raw = smooth_antidiagonals(raw, opts.ridge_width, true, &window);

  // Significance mask: off-diagonal cells indistinguishable from estimator
  // noise are zeroed. The threshold is each cell's own standard error,
  // shrunk by the number of cells its smoothing window averaged. Cells the
  // source actually populates sit far above it, so this removes the white
  // noise floor (whose absolute mass otherwise survives clamping) without
  // touching the ridge.
  if (opts.noise_floor_sigmas > 0.0) {
    const SquareMatrix se = inversion_stderr(acc, mp);
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) {
        if (i == j || !std::isfinite(raw(i, j))) continue;
        const double floor = opts.noise_floor_sigmas * se(i, j) / std::sqrt(window(i, j));
        if (std::abs(raw(i, j)) < floor) {
          raw(i, j) = 0.0;
          ++report.n_below_floor;
        }
      }
  }

  return finalize(raw, diagonal.empty() ? nullptr : &diagonal, std::move(note), report);
}

namespace pipeline_detail {

inline nlohmann::json grid_json(const PixelGrid& grid) {
  return {{"n_pixels", grid.n_pixels},
          {"pitch_um", grid.pitch_um},
          {"origin_um", grid.origin_um}};
}

inline nlohmann::json sensor_json(const SensorConfig& sensor) {
  nlohmann::json j;
  j["eta"] = sensor.eta;
  if (const auto* spc = std::get_if<SpcMode>(&sensor.mode)) {
    j["type"] = "spc";
    j["p10"] = spc->p10;
  } else {
    const EmccdNoiseParams* nz = nullptr;
    if (const auto* lin = std::get_if<EmccdLinearMode>(&sensor.mode)) {
      j["type"] = "emccd_linear";
      nz = &lin->noise;
    } else {
      const auto& thr = std::get<EmccdThresholdedMode>(sensor.mode);
      j["type"] = "emccd_thresholded";
      j["threshold"] = thr.threshold;
      nz = &thr.noise;
    }
    j["derived"] = {{"gain", nz->gain},
                    {"slope", nz->slope},
                    {"offset", nz->offset},
                    {"offset_var", nz->offset_var}};
  }
  if (sensor.drift.amplitude > 0.0)
    j["drift"] = {{"amplitude", sensor.drift.amplitude},
                  {"period_frames", sensor.drift.period_frames}};
  return j;
}

} // namespace pipeline_detail

// Reproducibility record for a simulation run. No timestamps: reruns with
// the same config and seed must produce byte-identical manifests.
inline void write_manifest(const std::string& path, const ExperimentConfig& cfg,
                           const JointDistribution& jd,
                           const std::vector<std::pair<std::string, std::string>>& outputs) {
  nlohmann::json j;
  j["tool"] = "paircam";
  j["version"] = kVersion;
  j["format_version"] = kFormatVersion;
  j["config_fnv64"] = to_hex(fnv1a64(cfg.raw_text.data(), cfg.raw_text.size()));
  j["seed"] = cfg.seed;
  j["frames"] = cfg.frames;
  j["grid"] = pipeline_detail::grid_json(jd.grid);
  j["sensor"] = pipeline_detail::sensor_json(cfg.sensor);
  j["pairs"] = {{"mean", cfg.pairs.mean()}, {"variance", cfg.pairs.variance()}};
  j["two_row"] = cfg.reconstruction.two_row;

  nlohmann::json outs = nlohmann::json::object();
  for (const auto& [name, file] : outputs) {
    const std::string data = read_file(file);
    outs[name] = {{"path", std::filesystem::path(file).filename().string()},
                  {"fnv64", to_hex(fnv1a64(data.data(), data.size()))}};
  }
  j["outputs"] = outs;
  write_file(path, j.dump(2) + "\n");
}

} // namespace paircam
