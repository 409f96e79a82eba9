// Command-line front end: simulate photon-pair frames, accumulate moments,
// invert them back to the joint distribution, fit the double-Gaussian model,
// and expose the analytic moment formulas for desk checks.

#include <cstdio>
#include <cstdlib>
#include <exception>
#include <filesystem>
#include <iostream>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "paircam/config.hpp"
#include "paircam/fit.hpp"
#include "paircam/io.hpp"
#include "paircam/oracle.hpp"
#include "paircam/pipeline.hpp"
#include "paircam/reconstruct.hpp"
#include "paircam/version.hpp"

namespace {

using namespace paircam;
using nlohmann::json;

template <typename F>
int guarded(int invalid_argument_code, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const TruncationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const FitNonConvergence& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const AllNonPositive& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 4;
  } catch (const std::invalid_argument& e) {
    std::cerr << "error: " << e.what() << "\n";
    return invalid_argument_code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
}

std::string resolve_out_dir(const std::string& flag_value, const ExperimentConfig& cfg) {
  if (!flag_value.empty()) return flag_value;
  if (const char* env = std::getenv("PAIRCAM_OUT"); env != nullptr && env[0] != '\0') return env;
  if (!cfg.output_dir.empty()) return cfg.output_dir;
  return ".";
}

ProgressFn stderr_progress(const char* label) {
  return [label](std::uint64_t done, std::uint64_t total) {
    std::fprintf(stderr, "\r%s: %llu/%llu frames", label,
                 static_cast<unsigned long long>(done), static_cast<unsigned long long>(total));
    if (done == total) std::fprintf(stderr, "\n");
    std::fflush(stderr);
  };
}

PairCountDistribution pairs_from_json(const json& p, const std::string& path) {
  namespace cd = config_detail;
  const std::string model = cd::require_string(p, "model", path);
  if (model == "poisson") return PairCountDistribution::poisson(cd::require_number(p, "mean", path));
  if (model == "explicit") {
    const json& m = cd::require(p, "masses", path);
    if (!m.is_array() || m.empty()) throw ConfigError(path + ".masses: expected a non-empty array");
    std::vector<double> masses;
    for (const auto& v : m) masses.push_back(v.get<double>());
    return PairCountDistribution::explicit_masses(masses);
  }
  if (model == "moments")
    return PairCountDistribution::moments_only(cd::require_number(p, "mean", path),
                                               cd::require_number(p, "variance", path));
  throw ConfigError(path + ".model: must be \"poisson\", \"explicit\" or \"moments\"");
}

ResponseMoments response_from_json(const json& r, const std::string& path) {
  namespace cd = config_detail;
  const std::string type = cd::require_string(r, "type", path);
  if (type == "spc") return spc_response(cd::require_number(r, "p10", path));
  if (type == "emccd") return emccd_response(cd::parse_noise(r, path));
  if (type == "linear") {
    const double a = cd::require_number(r, "a", path);
    const double x0 = cd::require_number(r, "x0", path);
    const double s0 = cd::require_number(r, "sigma0_sq", path);
    ResponseMoments resp;
    resp.mean = [a, x0](int k) { return a * k + x0; };
    resp.second_moment = [a, x0, s0](int k) {
      const double mu = a * k + x0;
      return mu * mu + a * a * k + s0;
    };
    return resp;
  }
  throw ConfigError(path + ".type: must be \"spc\", \"emccd\" or \"linear\"");
}

SquareMatrix cross_block(const SquareMatrix& full) {
  const std::size_t n = full.size() / 2;
  SquareMatrix out(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) out(i, j) = full(i, n + j);
  return out;
}

SquareMatrix normalized_copy(const SquareMatrix& m) {
  SquareMatrix out = m;
  double total = 0.0;
  for (double v : out.data()) total += v;
  if (!(total > 0.0)) throw AllNonPositive("matrix has no positive mass");
  for (double& v : out.data()) v /= total;
  return out;
}

void write_profile_csv(const std::string& path, const SquareMatrix& g, const PixelGrid& grid,
                       std::size_t col) {
  if (col >= g.size()) throw std::invalid_argument("profile column out of range");
  double total = 0.0;
  for (std::size_t i = 0; i < g.size(); ++i) total += g(i, col);
  if (!(total > 0.0)) throw AllNonPositive("profile column has no mass");
  std::string out;
  for (std::size_t i = 0; i < g.size(); ++i)
    out += format_double(grid.centered_um(i)) + "," + format_double(g(i, col) / total) + "\n";
  write_file(path, out);
}

struct SimulateArgs {
  std::string config_path;
  std::string out_dir;
  std::uint64_t seed = 0;
  bool seed_set = false;
  unsigned threads = 0;
  bool json_out = false;
};

int cmd_simulate(const SimulateArgs& args) {
  return guarded(3, [&]() -> int {
    ExperimentConfig cfg = load_config(args.config_path);
    if (args.seed_set) cfg.seed = args.seed;
    if (cfg.pairs.kind() == PairCountDistribution::Kind::MomentsOnly)
      throw ConfigError("pairs.model: \"moments\" cannot be sampled; use poisson or explicit");

    const JointDistribution jd = build_configured_joint(cfg);
    SensorConfig sensor = cfg.sensor;
    sensor.grid = jd.grid;

    const std::string out_dir = resolve_out_dir(args.out_dir, cfg);
    std::filesystem::create_directories(out_dir);
    const std::string stack_path = (std::filesystem::path(out_dir) / "frames.ppfr").string();
    const std::string truth_path = (std::filesystem::path(out_dir) / "gamma_truth.csv").string();
    const std::string manifest_path = (std::filesystem::path(out_dir) / "manifest.json").string();

    run_simulation(jd, sensor, cfg.pairs, cfg.frames, cfg.seed, args.threads, stack_path,
                   stderr_progress("simulate"));
    write_joint_csv(truth_path, jd);
    write_manifest(manifest_path, cfg, jd, {{"stack", stack_path}, {"truth", truth_path}});

    if (args.json_out) {
      json j;
      j["stack"] = stack_path;
      j["truth"] = truth_path;
      j["manifest"] = manifest_path;
      j["frames"] = cfg.frames;
      j["seed"] = cfg.seed;
      std::cout << j.dump(2) << "\n";
    } else {
      std::cout << "wrote " << stack_path << " (" << cfg.frames << " frames), " << truth_path
                << ", " << manifest_path << "\n";
    }
    return 0;
  });
}

struct ReconstructArgs {
  std::string config_path;
  std::string stack_path;
  std::string out_dir;
  std::string truth_path;
  std::vector<std::size_t> profile_cols;
  bool background = false;
  bool skip_fit = false;
  bool json_out = false;
};

int cmd_reconstruct(const ReconstructArgs& args) {
  return guarded(3, [&]() -> int {
    ExperimentConfig cfg = load_config(args.config_path);
    const ModeParams mp = mode_params_from(cfg);

    {
      StackReader probe(args.stack_path);
      const bool stack_binary = probe.kind() == Frame::Kind::Binary;
      if (stack_binary != mp.binary)
        throw std::runtime_error(std::string("reconstruct: stack is ") +
                                 (stack_binary ? "binary" : "gray") +
                                 " but the configured sensor mode expects the opposite");
      const std::uint32_t expected =
          cfg.reconstruction.two_row ? 2 * cfg.grid.n_pixels : cfg.grid.n_pixels;
      if (probe.n_pixels() != expected)
        throw std::runtime_error("reconstruct: stack has " + std::to_string(probe.n_pixels()) +
                                 " pixels, config expects " + std::to_string(expected));
    }

    const MomentAccumulator acc = accumulate_stack(args.stack_path, stderr_progress("accumulate"));
    const ReconstructionResult result =
        reconstruct_from_accumulator(acc, mp, cfg.reconstruction, args.background);

    const PixelGrid out_grid = cfg.reconstruction.two_row
                                   ? PixelGrid::centered(2 * cfg.grid.n_pixels, cfg.grid.pitch_um)
                                   : cfg.grid;
    const std::string out_dir = resolve_out_dir(args.out_dir, cfg);
    std::filesystem::create_directories(out_dir);
    const std::string gamma_path = (std::filesystem::path(out_dir) / "gamma_hat.csv").string();
    const std::string report_path = (std::filesystem::path(out_dir) / "report.json").string();
    write_matrix_csv(gamma_path, result.gamma_hat, out_grid);

    // Fit and profiles act on the cross block in two-row mode: that block is
    // the joint between the two selected rows and carries the ridge.
    const SquareMatrix view = cfg.reconstruction.two_row
                                  ? normalized_copy(cross_block(result.gamma_hat))
                                  : result.gamma_hat;
    const PixelGrid view_grid = cfg.reconstruction.two_row ? cfg.grid : out_grid;

    json report;
    report["mode"] = mp.binary ? "binary" : "gray";
    report["n_frames"] = acc.n_frames();
    report["scale_note"] = result.scale_note;
    report["diagonal_valid"] = result.diagonal_valid;
    report["two_row"] = cfg.reconstruction.two_row;
    report["background"] = {{"applied", args.background},
                            {"removed_rms", result.background.removed_rms},
                            {"invalid_log_entries", result.background.n_invalid_log},
                            {"clamped_negative_mass", result.background.clamped_mass},
                            {"cells_below_noise_floor", result.background.n_below_floor}};

    int rc = 0;
    if (!args.skip_fit) {
      try {
        const bool skip_diag = cfg.reconstruction.two_row ? false : !result.diagonal_valid;
        const FitResult fit = fit_double_gaussian(view, view_grid, skip_diag);
        report["fit"] = {{"amplitude", fit.amplitude},
                         {"sigma_plus_um", fit.sigma_plus_um},
                         {"sigma_minus_um", fit.sigma_minus_um},
                         {"rms_residual", fit.rms_residual},
                         {"iterations", fit.iterations}};
      } catch (const FitNonConvergence& e) {
        report["fit"] = nullptr;
        report["fit_error"] = e.what();
        rc = 4;
      }
    } else {
      report["fit"] = nullptr;
    }

    std::string truth_path = args.truth_path;
    if (truth_path.empty()) {
      const auto guess = std::filesystem::path(args.stack_path).parent_path() / "gamma_truth.csv";
      if (std::filesystem::exists(guess)) truth_path = guess.string();
    }
    if (!truth_path.empty()) {
      const LoadedMatrix truth = load_matrix_csv(truth_path);
      if (truth.m.size() != result.gamma_hat.size())
        throw std::runtime_error("reconstruct: truth CSV size does not match the estimate");
      const double tv = result.diagonal_valid
                            ? total_variation(result.gamma_hat, normalized_copy(truth.m))
                            : total_variation(normalized_off_diagonal(result.gamma_hat),
                                              normalized_off_diagonal(truth.m));
      report["tv_to_truth"] = tv;
      report["truth"] = truth_path;
    }

    std::vector<std::size_t> cols = args.profile_cols;
    if (cols.empty()) cols.push_back(view.size() / 2);
    json profile_files = json::array();
    for (const std::size_t c : cols) {
      const std::string p =
          (std::filesystem::path(out_dir) / ("profile_col" + std::to_string(c) + ".csv")).string();
      write_profile_csv(p, view, view_grid, c);
      profile_files.push_back(p);
    }
    report["profiles"] = profile_files;
    report["gamma_hat"] = gamma_path;

    write_file(report_path, report.dump(2) + "\n");
    if (args.json_out) {
      std::cout << report.dump(2) << "\n";
    } else {
      std::cout << "wrote " << gamma_path << " and " << report_path;
      if (report.contains("tv_to_truth"))
        std::cout << " (TV to truth " << report["tv_to_truth"].get<double>() << ")";
      std::cout << "\n";
    }
    return rc;
  });
}

json oracle_dispatch(const json& q) {
  namespace cd = config_detail;
  const std::string op = cd::require_string(q, "op", "query");
  const auto num = [&](const char* key) { return cd::require_number(q, key, "query"); };
  const auto integer = [&](const char* key) { return static_cast<int>(num(key)); };

  if (op == "p_photons_given_pairs")
    return {{"value", p_photons_given_pairs(num("gamma_i"), num("gamma_ii"), integer("n"),
                                            integer("m"))}};
  if (op == "p_electrons_given_pairs")
    return {{"value", p_electrons_given_pairs(num("gamma_i"), num("gamma_ii"), num("eta"),
                                              integer("k"), integer("m"))}};
  if (op == "p_joint_photons_given_pairs")
    return {{"value",
             p_joint_photons_given_pairs(num("gamma_i"), num("gamma_j"), num("gamma_ii"),
                                         num("gamma_jj"), num("gamma_ij"), integer("ni"),
                                         integer("nj"), integer("m"))}};
  if (op == "p_joint_electrons_given_pairs")
    return {{"value", p_joint_electrons_given_pairs(num("gamma_i"), num("gamma_j"),
                                                    num("gamma_ii"), num("gamma_jj"),
                                                    num("gamma_ij"), num("eta"), integer("ki"),
                                                    integer("kj"), integer("m"))}};
  if (op == "spc_moments") {
    const SpcMoments m = spc_moments(num("gamma_i"), num("gamma_j"), num("gamma_ii"),
                                     num("gamma_jj"), num("gamma_ij"), num("eta"), num("mbar"),
                                     num("p10"));
    return {{"mean_i", m.mean_i}, {"mean_j", m.mean_j}, {"pair", m.pair}};
  }
  if (op == "emccd_moments") {
    const PairCountDistribution counts = pairs_from_json(cd::require(q, "pairs", "query"), "query.pairs");
    const EmccdMoments m =
        emccd_moments(num("gamma_i"), num("gamma_j"), num("gamma_ii"), num("gamma_jj"),
                      num("gamma_ij"), num("eta"), counts, num("a"), num("x0"), num("sigma0_sq"));
    return {{"mean_i", m.mean_i}, {"mean_j", m.mean_j}, {"pair", m.pair}, {"square_i", m.square_i}};
  }
  if (op == "mean_output" || op == "mean_output_square") {
    const PairCountDistribution counts = pairs_from_json(cd::require(q, "pairs", "query"), "query.pairs");
    const ResponseMoments resp = response_from_json(cd::require(q, "response", "query"), "query.response");
    const double v = op == "mean_output"
                         ? mean_output(num("gamma_i"), num("gamma_ii"), num("eta"), counts, resp)
                         : mean_output_square(num("gamma_i"), num("gamma_ii"), num("eta"), counts,
                                              resp);
    return {{"value", v}};
  }
  if (op == "mean_output_pair") {
    const PairCountDistribution counts = pairs_from_json(cd::require(q, "pairs", "query"), "query.pairs");
    const ResponseMoments resp = response_from_json(cd::require(q, "response", "query"), "query.response");
    return {{"value", mean_output_pair(num("gamma_i"), num("gamma_j"), num("gamma_ii"),
                                       num("gamma_jj"), num("gamma_ij"), num("eta"), counts,
                                       resp)}};
  }
  if (op == "noise_params") {
    const EmccdNoiseParams nz = cd::parse_noise(q, "query");
    return {{"gain", nz.gain},
            {"a", nz.slope},
            {"x0", nz.offset},
            {"sigma0_sq", nz.offset_var}};
  }
  throw ConfigError("query.op: unknown operation \"" + op + "\"");
}

int cmd_oracle(const std::string& query_arg) {
  return guarded(2, [&]() -> int {
    std::string text;
    if (query_arg == "-") {
      std::ostringstream ss;
      ss << std::cin.rdbuf();
      text = ss.str();
    } else {
      text = read_file(query_arg);
    }
    json q;
    try {
      q = json::parse(text);
    } catch (const json::parse_error& e) {
      throw ConfigError(std::string("query: ") + e.what());
    }
    std::cout << oracle_dispatch(q).dump(2) << "\n";
    return 0;
  });
}

struct FitArgs {
  std::string input_path;
  bool skip_diagonal = false;
  bool json_out = false;
};

int cmd_fit(const FitArgs& args) {
  return guarded(2, [&]() -> int {
    const LoadedMatrix lm = load_matrix_csv(args.input_path);
    const FitResult fit = fit_double_gaussian(lm.m, lm.grid, args.skip_diagonal);
    if (args.json_out) {
      json j = {{"amplitude", fit.amplitude},
                {"sigma_plus_um", fit.sigma_plus_um},
                {"sigma_minus_um", fit.sigma_minus_um},
                {"rms_residual", fit.rms_residual},
                {"iterations", fit.iterations}};
      std::cout << j.dump(2) << "\n";
    } else {
      std::cout << "sigma_plus_um=" << fit.sigma_plus_um
                << " sigma_minus_um=" << fit.sigma_minus_um << " amplitude=" << fit.amplitude
                << " rms_residual=" << fit.rms_residual << "\n";
    }
    return 0;
  });
}

int cmd_selftest() {
  return guarded(4, [&]() -> int {
    int failures = 0;
    const auto check = [&](bool ok, const char* name) {
      std::cout << (ok ? "ok" : "FAIL") << " - " << name << "\n";
      if (!ok) ++failures;
    };

    {
      RngStream a = RngStream::for_frame(7, 11, 2);
      RngStream b = RngStream::for_frame(7, 11, 2);
      bool same = true;
      for (int i = 0; i < 64; ++i) same = same && a.next_u64() == b.next_u64();
      check(same, "rng streams are reproducible");
    }
    {
      const auto jd = build_double_gaussian(PixelGrid::centered(16, 13.0),
                                            DoubleGaussianParams{1.0, 12.06, 926.12});
      check(validate(jd).empty(), "double-Gaussian source passes validation");
    }
    check(std::abs(p_photons_given_pairs(0.25, 0.1, 1, 1) - 0.3) < 1e-15,
          "single-pair photon law matches hand value");
    {
      double total = 0.0;
      for (int n = 0; n <= 4; ++n) total += p_photons_given_pairs(0.2, 0.05, n, 2);
      check(std::abs(total - 1.0) < 1e-12, "photon law normalizes");
    }
    {
      const auto counts = PairCountDistribution::poisson(1.3);
      const auto resp = spc_response(0.02);
      const double general = mean_output(0.21, 0.07, 0.44, counts, resp);
      const auto closed = spc_moments(0.21, 0.3, 0.07, 0.1, 0.05, 0.44, 1.3, 0.02);
      check(std::abs(general - closed.mean_i) < 1e-10 * closed.mean_i,
            "binary closed form matches the general sum");
    }
    {
      const auto counts = PairCountDistribution::poisson(1.1);
      ResponseMoments resp;
      resp.mean = [](int k) { return 31.0 * k + 5.0; };
      resp.second_moment = [](int k) {
        const double mu = 31.0 * k + 5.0;
        return mu * mu + 31.0 * 31.0 * k + 9.0;
      };
      const double general = mean_output(0.18, 0.06, 0.5, counts, resp);
      const auto closed = emccd_moments(0.18, 0.2, 0.06, 0.08, 0.04, 0.5, counts, 31.0, 5.0, 9.0);
      check(std::abs(general - closed.mean_i) < 1e-10 * closed.mean_i,
            "linear closed form matches the general sum");
    }
    {
      const auto jd = build_double_gaussian(PixelGrid::centered(8, 13.0),
                                            DoubleGaussianParams{1.0, 20.0, 200.0});
      const double eta = 0.4, mbar = 1.5, p10 = 0.01;
      const std::size_t n = jd.n();
      std::vector<double> c(n);
      SquareMatrix cc(n);
      for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
          const auto m = spc_moments(marginal(jd, i), marginal(jd, j), jd.gamma(i, i),
                                     jd.gamma(j, j), jd.gamma(i, j), eta, mbar, p10);
          cc(i, j) = m.pair;
          if (i == j) c[i] = m.mean_i;
        }
      }
      const SquareMatrix back = reconstruct_spc(c, cc, eta, mbar);
      double worst = 0.0;
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j)
          if (i != j) worst = std::max(worst, std::abs(back(i, j) - jd.gamma(i, j)));
      check(worst < 1e-10, "binary inversion round trip");
    }
    {
      const auto jd = build_double_gaussian(PixelGrid::centered(4, 13.0),
                                            DoubleGaussianParams{1.0, 15.0, 60.0});
      SensorConfig sensor;
      sensor.grid = jd.grid;
      sensor.eta = 0.5;
      sensor.mode = SpcMode{0.02};
      const auto acc = run_simulation(jd, sensor, PairCountDistribution::poisson(1.0), 2000, 99,
                                      1, "");
      check(acc.n_frames() == 2000, "end-to-end toy simulation accumulates all frames");
    }
    if (failures > 0) throw std::runtime_error(std::to_string(failures) + " selftest step(s) failed");
    std::cout << "selftest passed\n";
    return 0;
  });
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"photon-pair camera simulator and joint-distribution reconstructor"};
  app.set_version_flag("--version", std::string(paircam::kVersion));
  app.require_subcommand(1);

  SimulateArgs sim_args;
  auto* sim = app.add_subcommand("simulate", "generate a frame stack from a config");
  sim->add_option("--config", sim_args.config_path, "experiment config JSON")->required();
  sim->add_option("--out", sim_args.out_dir, "output directory (overrides PAIRCAM_OUT and config)");
  auto* seed_opt = sim->add_option("--seed", sim_args.seed, "override the config seed");
  sim->add_option("--threads", sim_args.threads, "worker threads (0 = hardware)");
  sim->add_flag("--json", sim_args.json_out, "machine-readable result on stdout");

  ReconstructArgs rec_args;
  auto* rec = app.add_subcommand("reconstruct", "estimate the joint distribution from a stack");
  rec->add_option("--config", rec_args.config_path, "experiment config JSON")->required();
  rec->add_option("--stack", rec_args.stack_path, "input frame stack")->required();
  rec->add_option("--out", rec_args.out_dir, "output directory (overrides PAIRCAM_OUT and config)");
  rec->add_option("--truth", rec_args.truth_path, "ground-truth CSV for the TV report");
  rec->add_option("--profile-col", rec_args.profile_cols, "column(s) for conditional profiles");
  rec->add_flag("--background", rec_args.background, "subtract the smooth background estimate");
  rec->add_flag("--skip-fit", rec_args.skip_fit, "skip the double-Gaussian fit");
  rec->add_flag("--json", rec_args.json_out, "machine-readable report on stdout");

  std::string oracle_query;
  auto* ora = app.add_subcommand("oracle", "evaluate an analytic formula from a JSON query");
  ora->add_option("query", oracle_query, "query JSON path, or - for stdin")->required();

  FitArgs fit_args;
  auto* fit = app.add_subcommand("fit", "fit the double-Gaussian model to a matrix CSV");
  fit->add_option("--input", fit_args.input_path, "matrix CSV")->required();
  fit->add_flag("--skip-diagonal", fit_args.skip_diagonal, "exclude i == j cells");
  fit->add_flag("--json", fit_args.json_out, "machine-readable result on stdout");

  auto* self = app.add_subcommand("selftest", "run a quick internal consistency battery");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int r = app.exit(e);
    return r == 0 ? 0 : 2;
  }

  sim_args.seed_set = seed_opt->count() > 0;
  if (app.got_subcommand(sim)) return cmd_simulate(sim_args);
  if (app.got_subcommand(rec)) return cmd_reconstruct(rec_args);
  if (app.got_subcommand(ora)) return cmd_oracle(oracle_query);
  if (app.got_subcommand(fit)) return cmd_fit(fit_args);
  if (app.got_subcommand(self)) return cmd_selftest();
  return 2;
}
