#pragma once

// Little helpers for the versioned binary artifact formats. Values are
// written in host byte order.

#include <cstdint>
#include <istream>
#include <ostream>
#include <string>
#include <type_traits>

#include "clinpred/common.hpp"

namespace clinpred::bin {

template <typename T>
  requires std::is_trivially_copyable_v<T>
void put(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
  requires std::is_trivially_copyable_v<T>
T get(std::istream& is) {
  T v{};
  if (!is.read(reinterpret_cast<char*>(&v), sizeof(T)))
    throw ValidationError("truncated binary artifact");
  return v;
}

inline void put_string(std::ostream& os, const std::string& s) {
  put<std::uint32_t>(os, static_cast<std::uint32_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string get_string(std::istream& is) {
  auto n = get<std::uint32_t>(is);
  std::string s(n, '\0');
  if (n && !is.read(s.data(), n)) throw ValidationError("truncated binary artifact");
  return s;
}

inline void put_magic(std::ostream& os, const char (&magic)[5], std::uint32_t version) {
  os.write(magic, 4);
  put(os, version);
}

inline void expect_magic(std::istream& is, const char (&magic)[5], std::uint32_t version,
                         const std::string& what) {
  char buf[4];
  if (!is.read(buf, 4) || std::string(buf, 4) != std::string(magic, 4))
    throw ValidationError(what + ": not a recognised file");
  if (get<std::uint32_t>(is) != version) throw ValidationError(what + ": unsupported version");
}

}  // namespace clinpred::bin
