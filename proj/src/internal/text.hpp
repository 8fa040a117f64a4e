#pragma once

#include <charconv>
#include <string>

namespace qbd::detail {

// Shortest representation that round-trips, '.' as decimal separator
// regardless of locale.
inline std::string num(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

}  // namespace qbd::detail
