#pragma once

#include <cstdint>
#include <stdexcept>

namespace paircam {

// 1D strip of pixel centers. origin_um is the center of pixel 0.
struct PixelGrid {
  std::uint32_t n_pixels = 0;
  double pitch_um = 0.0;
  double origin_um = 0.0;

  // Grid whose coordinate origin sits at the strip midpoint, so the
  // correlation anti-diagonal lands mid-sensor.
  static PixelGrid centered(std::uint32_t n, double pitch) {
    return PixelGrid{n, pitch, -0.5 * static_cast<double>(n - 1) * pitch};
  }

  [[nodiscard]] double center_um(std::uint32_t i) const {
    return origin_um + static_cast<double>(i) * pitch_um;
  }

  // Coordinate of pixel i measured from the strip midpoint.
  [[nodiscard]] double centered_um(std::uint32_t i) const {
    return (static_cast<double>(i) - 0.5 * static_cast<double>(n_pixels - 1)) * pitch_um;
  }

  void require_valid() const {
    if (n_pixels < 1) throw std::invalid_argument("grid: n_pixels must be >= 1");
    if (!(pitch_um > 0.0)) throw std::invalid_argument("grid: pitch must be > 0");
  }
};

} // namespace paircam
