#pragma once

namespace paircam {

inline constexpr const char* kVersion = "1.0.0";

// Bumped when the frame-stack or CSV/sidecar layout changes.
inline constexpr unsigned kFormatVersion = 1;

} // namespace paircam
