#pragma once

#include <array>
#include <bit>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <istream>
#include <ostream>
#include <span>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

namespace mosforge {

enum class ErrorCode {
  invalid_argument,
  parse_error,
  duplicate_id,
  missing_data,
  shape_mismatch,
  bad_magic,
  version_mismatch,
  truncated_payload,
  non_finite,
  undefined_correlation,
  divergence,
  io_error,
};

inline const char* to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::invalid_argument: return "invalid argument";
    case ErrorCode::parse_error: return "parse error";
    case ErrorCode::duplicate_id: return "duplicate id";
    case ErrorCode::missing_data: return "missing data";
    case ErrorCode::shape_mismatch: return "shape mismatch";
    case ErrorCode::bad_magic: return "bad magic";
    case ErrorCode::version_mismatch: return "version mismatch";
    case ErrorCode::truncated_payload: return "truncated payload";
    case ErrorCode::non_finite: return "non-finite value";
    case ErrorCode::undefined_correlation: return "undefined correlation";
    case ErrorCode::divergence: return "divergence";
    case ErrorCode::io_error: return "io error";
  }
  return "unknown";
}

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

/// Non-fatal messages collected during parsing or validation.
using Diagnostics = std::vector<std::string>;

// ---------------------------------------------------------------------------
// Text helpers

inline std::string_view trim(std::string_view s) {
  const char* ws = " \t\r\n";
  auto b = s.find_first_not_of(ws);
  if (b == std::string_view::npos) return {};
  auto e = s.find_last_not_of(ws);
  return s.substr(b, e - b + 1);
}

inline std::vector<std::string_view> split(std::string_view s, char sep) {
  std::vector<std::string_view> out;
  size_t start = 0;
  while (true) {
    auto pos = s.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(s.substr(start));
      return out;
    }
    out.push_back(s.substr(start, pos - start));
    start = pos + 1;
  }
}

inline bool parse_double(std::string_view s, double& out) {
  s = trim(s);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

inline bool parse_int(std::string_view s, long long& out) {
  s = trim(s);
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc() && ptr == s.data() + s.size();
}

/// Shortest representation that parses back to the same double.
inline std::string format_double(double v) {
  std::array<char, 64> buf{};
  auto [ptr, ec] = std::to_chars(buf.data(), buf.data() + buf.size(), v);
  return std::string(buf.data(), ptr);
}

// ---------------------------------------------------------------------------
// Little-endian binary helpers

namespace le {

template <typename T>
inline void put(std::ostream& os, T value) {
  static_assert(std::is_integral_v<T>);
  std::array<char, sizeof(T)> bytes{};
  using U = std::make_unsigned_t<T>;
  auto u = static_cast<U>(value);
  for (size_t i = 0; i < sizeof(T); ++i) {
    bytes[i] = static_cast<char>((u >> (8 * i)) & 0xFF);
  }
  os.write(bytes.data(), bytes.size());
}

inline void put_f32(std::ostream& os, float v) { put(os, std::bit_cast<uint32_t>(v)); }
inline void put_f64(std::ostream& os, double v) { put(os, std::bit_cast<uint64_t>(v)); }

inline void put_string16(std::ostream& os, std::string_view s) {
  if (s.size() > 0xFFFF) throw Error(ErrorCode::invalid_argument, "string too long: " + std::string(s.substr(0, 32)));
  put(os, static_cast<uint16_t>(s.size()));
  os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

/// Reads exactly sizeof(T) bytes; returns false on short read.
template <typename T>
inline bool get(std::istream& is, T& value) {
  static_assert(std::is_integral_v<T>);
  std::array<unsigned char, sizeof(T)> bytes{};
  is.read(reinterpret_cast<char*>(bytes.data()), bytes.size());
  if (is.gcount() != static_cast<std::streamsize>(bytes.size())) return false;
  using U = std::make_unsigned_t<T>;
  U u = 0;
  for (size_t i = 0; i < sizeof(T); ++i) u |= static_cast<U>(bytes[i]) << (8 * i);
  value = static_cast<T>(u);
  return true;
}

inline bool get_f32(std::istream& is, float& v) {
  uint32_t u = 0;
  if (!get(is, u)) return false;
  v = std::bit_cast<float>(u);
  return true;
}

inline bool get_f64(std::istream& is, double& v) {
  uint64_t u = 0;
  if (!get(is, u)) return false;
  v = std::bit_cast<double>(u);
  return true;
}

inline bool get_string16(std::istream& is, std::string& s) {
  uint16_t n = 0;
  if (!get(is, n)) return false;
  s.resize(n);
  is.read(s.data(), n);
  return is.gcount() == n;
}

}  // namespace le

// ---------------------------------------------------------------------------
// Deterministic random numbers (splitmix64). The standard distributions are
// implementation-defined, so sampling is done by hand.

class Rng {
 public:
  explicit Rng(uint64_t seed) : state_(seed) {}

  uint64_t next_u64() {
    uint64_t z = (state_ += 0x9E3779B97F4A7C15ULL);
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
  }

  /// Uniform in [0, 1).
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n).
  uint64_t below(uint64_t n) {
    if (n == 0) return 0;
    uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x = 0;
    do {
      x = next_u64();
    } while (x >= limit);
    return x % n;
  }

  double normal() {
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    double u2 = uniform();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  uint64_t state_;
};

// ---------------------------------------------------------------------------
// Dense row-major matrix used for tabular model inputs.

struct Matrix {
  size_t rows = 0;
  size_t cols = 0;
  std::vector<double> data;

  Matrix() = default;
  Matrix(size_t r, size_t c) : rows(r), cols(c), data(r * c, 0.0) {}
  Matrix(size_t r, size_t c, std::vector<double> d) : rows(r), cols(c), data(std::move(d)) {
    if (data.size() != r * c) throw Error(ErrorCode::shape_mismatch, "matrix data size does not match shape");
  }

  double& at(size_t r, size_t c) { return data[r * cols + c]; }
  double at(size_t r, size_t c) const { return data[r * cols + c]; }
  std::span<const double> row(size_t r) const { return {data.data() + r * cols, cols}; }
  std::vector<double> column(size_t c) const {
    std::vector<double> out(rows);
    for (size_t r = 0; r < rows; ++r) out[r] = at(r, c);
    return out;
  }

  bool operator==(const Matrix&) const = default;
};

}  // namespace mosforge
