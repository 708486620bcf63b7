#pragma once

#include <string>

#include <fmt/format.h>

namespace marked {

/// Fixed-precision rendering used by every TSV report, so bundles diff cleanly.
inline std::string fmt_num(double v) { return fmt::format("{:.10g}", v); }

}  // namespace marked
