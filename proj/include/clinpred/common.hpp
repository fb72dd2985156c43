#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace clinpred {

// Errors carry the process exit code the CLI maps them to.
class Error : public std::runtime_error {
 public:
  Error(const std::string& what, int exit_code)
      : std::runtime_error(what), exit_code_(exit_code) {}
  int exit_code() const noexcept { return exit_code_; }

 private:
  int exit_code_;
};

class ValidationError : public Error {
 public:
  explicit ValidationError(const std::string& what) : Error(what, 2) {}
};

class SchemaError : public Error {
 public:
  explicit SchemaError(const std::string& what) : Error(what, 3) {}
};

class NumericError : public Error {
 public:
  explicit NumericError(const std::string& what) : Error(what, 4) {}
};

// FNV-1a, 64 bit. Used for content, schema and config hashes that must be
// stable across runs and platforms (std::hash is not).
class Fnv1a {
 public:
  Fnv1a& bytes(const void* data, std::size_t n) {
    const auto* p = static_cast<const unsigned char*>(data);
    for (std::size_t i = 0; i < n; ++i) {
      state_ ^= p[i];
      state_ *= 0x100000001b3ULL;
    }
    return *this;
  }
  Fnv1a& str(std::string_view s) {
    auto len = static_cast<std::uint64_t>(s.size());
    bytes(&len, sizeof len);
    return bytes(s.data(), s.size());
  }
  Fnv1a& u64(std::uint64_t v) { return bytes(&v, sizeof v); }
  Fnv1a& i64(std::int64_t v) { return bytes(&v, sizeof v); }
  Fnv1a& f64(double v) { return bytes(&v, sizeof v); }
  std::uint64_t digest() const { return state_; }

 private:
  std::uint64_t state_ = 0xcbf29ce484222325ULL;
};

// Derives an independent 64-bit seed from a parent seed and a stream index
// (splitmix64 finalizer).
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

std::string hex64(std::uint64_t v);
std::uint64_t parse_hex64(std::string_view s);

}  // namespace clinpred
