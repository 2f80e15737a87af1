#pragma once

#include <cstdio>
#include <string>

namespace qid {

/// Shortest decimal string with up to 17 significant digits; parses back
/// to the identical double.
inline std::string dec17(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return std::string(buf);
}

}  // namespace qid
