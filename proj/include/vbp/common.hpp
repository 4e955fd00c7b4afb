// Shared helpers: error types, seed derivation, number formatting.
#pragma once

#include <charconv>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>

namespace vbp {

/// Raised when a file cannot be parsed. Carries the 1-based line number and,
/// where applicable, the index of the record being read.
class LoadError : public std::runtime_error {
 public:
  LoadError(const std::string& what, std::size_t line, long record = -1)
      : std::runtime_error(format(what, line, record)), line_(line), record_(record) {}

  std::size_t line() const { return line_; }
  long record() const { return record_; }

  /// Same error with `prefix` (typically a file path) prepended to the message.
  LoadError prefixed(const std::string& prefix) const {
    LoadError e(*this);
    static_cast<std::runtime_error&>(e) = std::runtime_error(prefix + ": " + what());
    return e;
  }

 private:
  static std::string format(const std::string& what, std::size_t line, long record) {
    std::string msg = "line " + std::to_string(line);
    if (record >= 0) msg += ", record " + std::to_string(record);
    return msg + ": " + what;
  }
  std::size_t line_;
  long record_;
};

using Rng = std::mt19937_64;

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

/// Independent stream seed for (base, a, b). Used so that per-sequence noise
/// does not depend on processing order.
inline std::uint64_t derive_seed(std::uint64_t base, std::uint64_t a, std::uint64_t b = 0) {
  return splitmix64(splitmix64(splitmix64(base) ^ a) ^ (b * 0x632be59bd9b4e019ULL));
}

/// Shortest decimal text that parses back to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline bool parse_double(std::string_view s, double& out) {
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

template <class Int>
inline bool parse_int(std::string_view s, Int& out) {
  auto res = std::from_chars(s.data(), s.data() + s.size(), out);
  return res.ec == std::errc() && res.ptr == s.data() + s.size();
}

}  // namespace vbp
