#pragma once

namespace styleshift {

inline constexpr int kVersionMajor = 0;
inline constexpr int kVersionMinor = 1;

// Tag written into checkpoint metadata and dataset manifests. Bump when the
// checkpoint layout or manifest schema changes.
inline constexpr const char* kFormatVersion = "styleshift-v1";

}  // namespace styleshift
