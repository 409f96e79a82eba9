#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "paircam/counts.hpp"
#include "paircam/grid.hpp"
#include "paircam/io.hpp"
#include "paircam/joint.hpp"
#include "paircam/sensor.hpp"

namespace paircam {

struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct ReconstructionOptions {
  int background_width = 15;      // separable box for remove_background
  int ridge_width = 15;           // box along anti-diagonals, 1 disables
  double noise_floor_sigmas = 0;  // zero cells below k standard errors, 0 disables
  bool two_row = false;           // joint of two independent row slices
};

struct ExperimentConfig {
  PixelGrid grid{0, 0.0, 0.0};
  bool source_from_csv = false;
  DoubleGaussianParams source_params{};
  std::string source_csv_path;  // resolved against the config file location
  PairCountDistribution pairs = PairCountDistribution::poisson(1.0);
  SensorConfig sensor{};
  std::uint64_t frames = 0;
  std::uint64_t seed = 0;
  ReconstructionOptions reconstruction{};
  std::string output_dir;  // empty means caller decides
  std::string raw_text;    // exact bytes, hashed into the manifest
};

namespace config_detail {

using nlohmann::json;

inline const json& require(const json& obj, const char* key, const std::string& path) {
  if (!obj.is_object()) throw ConfigError(path + ": expected an object");
  auto it = obj.find(key);
  if (it == obj.end()) throw ConfigError(path + "." + key + ": missing");
  return *it;
}

inline double require_number(const json& obj, const char* key, const std::string& path) {
  const json& v = require(obj, key, path);
  if (!v.is_number()) throw ConfigError(path + "." + key + ": expected a number");
  return v.get<double>();
}

inline double optional_number(const json& obj, const char* key, const std::string& path,
                              double fallback) {
  if (!obj.is_object() || !obj.contains(key)) return fallback;
  const json& v = obj.at(key);
  if (!v.is_number()) throw ConfigError(path + "." + key + ": expected a number");
  return v.get<double>();
}

inline std::uint64_t require_u64(const json& obj, const char* key, const std::string& path) {
  const json& v = require(obj, key, path);
  if (!v.is_number_unsigned())
    throw ConfigError(path + "." + key + ": expected a non-negative integer");
  return v.get<std::uint64_t>();
}

inline std::string require_string(const json& obj, const char* key, const std::string& path) {
  const json& v = require(obj, key, path);
  if (!v.is_string()) throw ConfigError(path + "." + key + ": expected a string");
  return v.get<std::string>();
}

inline void check(bool ok, const std::string& field, const char* what) {
  if (!ok) throw ConfigError(field + ": " + what);
}

inline EmccdNoiseParams parse_noise(const json& obj, const std::string& path) {
  const json& nz = require(obj, "noise", path);
  const std::string p = path + ".noise";
  const double cells = require_number(nz, "register_cells", p);
  check(cells >= 1.0 && cells == static_cast<double>(static_cast<int>(cells)),
        p + ".register_cells", "must be a positive integer");
  try {
    return EmccdNoiseParams::make(static_cast<int>(cells), require_number(nz, "p_dup", p),
                                  require_number(nz, "adc_scale", p),
                                  require_number(nz, "p_serial", p),
                                  require_number(nz, "p_parallel", p),
                                  require_number(nz, "read_noise_std", p),
                                  require_number(nz, "read_noise_mean", p));
  } catch (const std::invalid_argument& e) {
    throw ConfigError(p + ": " + e.what());
  }
}

} // namespace config_detail

// Parses a config document. base_dir anchors relative paths (normally the
// directory containing the config file). Every error names the offending
// field by its dotted path.
inline ExperimentConfig parse_config(const std::string& text, const std::string& base_dir) {
  using nlohmann::json;
  namespace cd = config_detail;

  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  if (!doc.is_object()) throw ConfigError("config: top level must be an object");

  ExperimentConfig cfg;
  cfg.raw_text = text;

  {
    const json& g = cd::require(doc, "grid", "config");
    const std::uint64_t n = cd::require_u64(g, "n_pixels", "grid");
    cd::check(n >= 2 && n <= 4096, "grid.n_pixels", "must be in [2, 4096]");
    const double pitch = cd::require_number(g, "pitch_um", "grid");
    cd::check(pitch > 0.0, "grid.pitch_um", "must be > 0");
    cfg.grid = PixelGrid::centered(static_cast<std::uint32_t>(n), pitch);
  }

  {
    const json& s = cd::require(doc, "source", "config");
    const std::string type = cd::require_string(s, "type", "source");
    if (type == "double_gaussian") {
      cfg.source_from_csv = false;
      cfg.source_params.sigma_plus_um = cd::require_number(s, "sigma_plus_um", "source");
      cfg.source_params.sigma_minus_um = cd::require_number(s, "sigma_minus_um", "source");
      cd::check(cfg.source_params.sigma_plus_um > 0.0, "source.sigma_plus_um", "must be > 0");
      cd::check(cfg.source_params.sigma_minus_um > 0.0, "source.sigma_minus_um", "must be > 0");
    } else if (type == "csv") {
      cfg.source_from_csv = true;
      const std::string rel = cd::require_string(s, "path", "source");
      std::filesystem::path p(rel);
      if (p.is_relative() && !base_dir.empty()) p = std::filesystem::path(base_dir) / p;
      cfg.source_csv_path = p.string();
      cd::check(std::filesystem::exists(p), "source.path", "file does not exist");
    } else {
      throw ConfigError("source.type: must be \"double_gaussian\" or \"csv\"");
    }
  }

  {
    const json& p = cd::require(doc, "pairs", "config");
    const std::string model = cd::require_string(p, "model", "pairs");
    if (model == "poisson") {
      const double mean = cd::require_number(p, "mean", "pairs");
      cd::check(mean >= 0.0, "pairs.mean", "must be >= 0");
      cfg.pairs = PairCountDistribution::poisson(mean);
    } else if (model == "explicit") {
      const json& m = cd::require(p, "masses", "pairs");
      if (!m.is_array() || m.empty())
        throw ConfigError("pairs.masses: expected a non-empty array");
      std::vector<double> masses;
      masses.reserve(m.size());
      for (const auto& v : m) {
        if (!v.is_number()) throw ConfigError("pairs.masses: entries must be numbers");
        masses.push_back(v.get<double>());
      }
      try {
        cfg.pairs = PairCountDistribution::explicit_masses(masses);
      } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("pairs.masses: ") + e.what());
      }
    } else if (model == "moments") {
      const double mean = cd::require_number(p, "mean", "pairs");
      const double var = cd::require_number(p, "variance", "pairs");
      cd::check(mean >= 0.0, "pairs.mean", "must be >= 0");
      cd::check(var >= 0.0, "pairs.variance", "must be >= 0");
      cfg.pairs = PairCountDistribution::moments_only(mean, var);
    } else {
      throw ConfigError("pairs.model: must be \"poisson\", \"explicit\" or \"moments\"");
    }
  }

  {
    const json& s = cd::require(doc, "sensor", "config");
    cfg.sensor.grid = cfg.grid;
    cfg.sensor.eta = cd::require_number(s, "eta", "sensor");
    cd::check(cfg.sensor.eta > 0.0 && cfg.sensor.eta <= 1.0, "sensor.eta", "must be in (0, 1]");
    const std::string type = cd::require_string(s, "type", "sensor");
    if (type == "spc") {
      SpcMode mode;
      mode.p10 = cd::require_number(s, "p10", "sensor");
      cd::check(mode.p10 >= 0.0 && mode.p10 < 1.0, "sensor.p10", "must be in [0, 1)");
      cfg.sensor.mode = mode;
    } else if (type == "emccd_linear") {
      cfg.sensor.mode = EmccdLinearMode{cd::parse_noise(s, "sensor")};
    } else if (type == "emccd_thresholded") {
      EmccdThresholdedMode mode{cd::parse_noise(s, "sensor"), 0.0};
      mode.threshold = cd::require_number(s, "threshold", "sensor");
      cfg.sensor.mode = mode;
    } else {
      throw ConfigError(
          "sensor.type: must be \"spc\", \"emccd_linear\" or \"emccd_thresholded\"");
    }
  }

  if (doc.contains("drift")) {
    const json& d = doc.at("drift");
    cfg.sensor.drift.amplitude = cd::require_number(d, "amplitude", "drift");
    cfg.sensor.drift.period_frames = cd::require_u64(d, "period_frames", "drift");
    cd::check(cfg.sensor.drift.amplitude >= 0.0 && cfg.sensor.drift.amplitude < 1.0,
              "drift.amplitude", "must be in [0, 1)");
    cd::check(cfg.sensor.drift.period_frames >= 1 || cfg.sensor.drift.amplitude == 0.0,
              "drift.period_frames", "must be >= 1 when amplitude > 0");
  }

  cfg.frames = cd::require_u64(doc, "frames", "config");
  cd::check(cfg.frames >= 1, "frames", "must be >= 1");
  cfg.seed = cd::require_u64(doc, "seed", "config");

  if (doc.contains("reconstruction")) {
    const json& r = doc.at("reconstruction");
    const std::string path = "reconstruction";
    cfg.reconstruction.background_width = static_cast<int>(
        cd::optional_number(r, "background_width", path, cfg.reconstruction.background_width));
    cfg.reconstruction.ridge_width = static_cast<int>(
        cd::optional_number(r, "ridge_width", path, cfg.reconstruction.ridge_width));
    cfg.reconstruction.noise_floor_sigmas = cd::optional_number(
        r, "noise_floor_sigmas", path, cfg.reconstruction.noise_floor_sigmas);
    if (r.contains("two_row")) {
      if (!r.at("two_row").is_boolean())
        throw ConfigError("reconstruction.two_row: expected a boolean");
      cfg.reconstruction.two_row = r.at("two_row").get<bool>();
    }
    cd::check(cfg.reconstruction.background_width >= 1, "reconstruction.background_width",
              "must be >= 1");
    cd::check(cfg.reconstruction.ridge_width >= 1, "reconstruction.ridge_width", "must be >= 1");
    cd::check(cfg.reconstruction.noise_floor_sigmas >= 0.0, "reconstruction.noise_floor_sigmas",
              "must be >= 0");
  }

  if (doc.contains("output_dir")) {
    if (!doc.at("output_dir").is_string())
      throw ConfigError("output_dir: expected a string");
    cfg.output_dir = doc.at("output_dir").get<std::string>();
  }

  try {
    cfg.sensor.require_valid();
  } catch (const std::exception& e) {
    throw ConfigError(std::string("sensor: ") + e.what());
  }
  return cfg;
}

inline ExperimentConfig load_config(const std::string& path) {
  std::string text;
  try {
    text = read_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return parse_config(text, std::filesystem::path(path).parent_path().string());
}

// Ground truth for the configured source. Two-row mode embeds the base
// distribution as the cross-block of a doubled sensor.
inline JointDistribution build_configured_joint(const ExperimentConfig& cfg) {
  JointDistribution jd = cfg.source_from_csv
                             ? load_joint_csv(cfg.source_csv_path)
                             : build_double_gaussian(cfg.grid, cfg.source_params);
  if (cfg.source_from_csv && jd.grid.n_pixels != cfg.grid.n_pixels)
    throw ConfigError("source.path: CSV size does not match grid.n_pixels");
  if (cfg.reconstruction.two_row) return embed_two_row(jd);
  return jd;
}

} // namespace paircam
