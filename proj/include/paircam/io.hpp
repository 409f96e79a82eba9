#pragma once

#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "paircam/joint.hpp"

namespace paircam {

inline std::uint64_t fnv1a64(const void* data, std::size_t len, std::uint64_t h = 0xCBF29CE484222325ull) {
  const auto* p = static_cast<const unsigned char*>(data);
  for (std::size_t i = 0; i < len; ++i) {
    h ^= p[i];
    h *= 0x100000001B3ull;
  }
  return h;
}

inline std::string to_hex(std::uint64_t v) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
  return buf;
}

// Shortest round-trippable decimal form.
inline std::string format_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string render_matrix_csv(const SquareMatrix& m) {
  std::string out;
  const std::size_t n = m.size();
  out.reserve(n * n * 8);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      if (j) out += ',';
      out += format_double(m(i, j));
    }
    out += '\n';
  }
  return out;
}

inline void write_file(const std::string& path, const std::string& bytes) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open for writing: " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!f) throw std::runtime_error("write failed: " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open: " + path);
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

// N x N matrix as plain CSV (row-major, '.' decimals, no header) plus a
// JSON sidecar at <path>.json carrying the grid and an FNV-1a checksum of
// the CSV bytes.
inline void write_matrix_csv(const std::string& path, const SquareMatrix& m, const PixelGrid& grid) {
  const std::string csv = render_matrix_csv(m);
  write_file(path, csv);
  nlohmann::json side;
  side["n_pixels"] = grid.n_pixels;
  side["pitch_um"] = grid.pitch_um;
  side["origin_um"] = grid.origin_um;
  side["checksum"] = to_hex(fnv1a64(csv.data(), csv.size()));
  write_file(path + ".json", side.dump(2) + "\n");
}

struct LoadedMatrix {
  SquareMatrix m;
  PixelGrid grid;
};

inline LoadedMatrix load_matrix_csv(const std::string& path) {
  const std::string csv = read_file(path);

  std::vector<double> values;
  std::size_t rows = 0;
  std::size_t pos = 0;
  while (pos < csv.size()) {
    std::size_t eol = csv.find('\n', pos);
    if (eol == std::string::npos) eol = csv.size();
    if (eol > pos) {
      ++rows;
      std::size_t p = pos;
      while (p < eol) {
        std::size_t comma = csv.find(',', p);
        if (comma == std::string::npos || comma > eol) comma = eol;
        // strtod rather than stod: stod throws on subnormal values, which
        // tail cells of a joint distribution legitimately reach.
        const std::string field = csv.substr(p, comma - p);
        char* end = nullptr;
        const double v = std::strtod(field.c_str(), &end);
        if (end == field.c_str())
          throw std::runtime_error("bad number in matrix CSV: " + path);
        values.push_back(v);
        p = comma + 1;
      }
    }
    pos = eol + 1;
  }
  if (rows == 0 || values.size() != rows * rows)
    throw std::runtime_error("matrix CSV is not square: " + path);

  LoadedMatrix out;
  out.m = SquareMatrix(rows);
  out.m.data() = std::move(values);

  const std::string side_path = path + ".json";
  std::ifstream side_file(side_path, std::ios::binary);
  if (side_file) {
    const auto side = nlohmann::json::parse(side_file);
    const std::string want = side.at("checksum").get<std::string>();
    const std::string got = to_hex(fnv1a64(csv.data(), csv.size()));
    if (want != got)
      throw std::runtime_error("checksum mismatch for " + path + ": sidecar " + want + ", file " + got);
    out.grid = PixelGrid{side.at("n_pixels").get<std::uint32_t>(), side.at("pitch_um").get<double>(),
                         side.at("origin_um").get<double>()};
    if (out.grid.n_pixels != rows)
      throw std::runtime_error("sidecar n_pixels disagrees with CSV shape: " + path);
  } else {
    out.grid = PixelGrid::centered(static_cast<std::uint32_t>(rows), 1.0);
  }
  return out;
}

inline void write_joint_csv(const std::string& path, const JointDistribution& jd) {
  write_matrix_csv(path, jd.gamma, jd.grid);
}

inline JointDistribution load_joint_csv(const std::string& path) {
  LoadedMatrix lm = load_matrix_csv(path);
  JointDistribution jd;
  jd.grid = lm.grid;
  jd.gamma = std::move(lm.m);
  jd.recompute_marginal();
  return jd;
}

} // namespace paircam
