#pragma once

#include <cstdio>
#include <string>

namespace penkf {

/// Fixed "%.12g" rendering used by every CSV writer.
inline std::string format_double(double value) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.12g", value);
  return buf;
}

}  // namespace penkf
