#pragma once

#include <charconv>
#include <string>

namespace stpn {

// Shortest decimal string that round-trips the double. Keeps every emitted
// artifact byte-deterministic without printf noise.
inline std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

}  // namespace stpn
