// Shared error types, seeded randomness, and small formatting/IO helpers.
#pragma once

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace advreg {

// ----------------------------------------------------------------------------
// Errors
// ----------------------------------------------------------------------------

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Tensor shapes do not line up for an op.
struct DimensionError : Error {
  using Error::Error;
};

// Malformed inputs: out-of-range targets, bad token ids, mismatched files.
struct DataError : Error {
  using Error::Error;
};

// Invalid scalar argument, e.g. a negative lambda.
struct ParameterError : Error {
  using Error::Error;
};

// Invalid model/dataset/run configuration.
struct ConfigError : Error {
  using Error::Error;
};

// API misuse: non-scalar backward root, tensor not on the tape.
struct ContractError : Error {
  using Error::Error;
};

// A result that is mathematically undefined (e.g. correlation of a constant).
struct UndefinedError : Error {
  using Error::Error;
};

struct IoError : Error {
  using Error::Error;
};

// Training blew up: non-finite value or gradient at a known iteration.
struct DivergenceError : Error {
  std::int64_t iteration;
  DivergenceError(std::int64_t t, const std::string& what)
      : Error(what), iteration(t) {}
};

// ----------------------------------------------------------------------------
// Randomness
//
// All stochastic code draws through Rng so that the mapping from engine bits
// to doubles is pinned by this file rather than by the standard library's
// unspecified distribution algorithms. Identical seeds give identical streams.
// ----------------------------------------------------------------------------

// Derives an independent stream seed from a base seed and a tag. FNV-1a over
// the tag, mixed with the seed, finalized splitmix64-style.
inline std::uint64_t mix_seed(std::uint64_t seed, std::string_view tag) {
  std::uint64_t h = 1469598103934665603ull;
  for (char c : tag) {
    h ^= static_cast<unsigned char>(c);
    h *= 1099511628211ull;
  }
  std::uint64_t z = seed + 0x9e3779b97f4a7c15ull + h;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
  return z ^ (z >> 31);
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t seed, std::string_view tag) : engine_(mix_seed(seed, tag)) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Standard normal via Box-Muller (cached spare).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform01();
    } while (u1 == 0.0);
    const double u2 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Uniform integer in [0, n).
  std::size_t index(std::size_t n) {
    // Rejection-free multiply-shift would bias for huge n; n here is small.
    return static_cast<std::size_t>(uniform01() * static_cast<double>(n)) % n;
  }

  // Draws from a discrete distribution given cumulative-free weights.
  std::size_t categorical(const std::vector<double>& probs) {
    double r = uniform01();
    double acc = 0.0;
    for (std::size_t i = 0; i < probs.size(); ++i) {
      acc += probs[i];
      if (r < acc) return i;
    }
    return probs.empty() ? 0 : probs.size() - 1;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    if (v.size() < 2) return;
    for (std::size_t i = v.size() - 1; i > 0; --i) {
      std::size_t j = index(i + 1);
      std::swap(v[i], v[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// ----------------------------------------------------------------------------
// Formatting
// ----------------------------------------------------------------------------

// Shortest round-trip decimal form; deterministic across runs.
inline std::string fmt_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::string fmt_fixed(double v, int digits) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v, std::chars_format::fixed,
                           digits);
  return std::string(buf, res.ptr);
}

// ----------------------------------------------------------------------------
// Files
// ----------------------------------------------------------------------------

// Writes via a temp file in the same directory, then renames into place.
inline void write_file_atomic(const std::filesystem::path& path,
                              const std::string& contents) {
  namespace fs = std::filesystem;
  std::error_code ec;
  if (path.has_parent_path()) {
    fs::create_directories(path.parent_path(), ec);
  }
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open for writing: " + tmp.string());
    out.write(contents.data(),
              static_cast<std::streamsize>(contents.size()));
    if (!out) throw IoError("write failed: " + tmp.string());
  }
  fs::rename(tmp, path, ec);
  if (ec) throw IoError("rename failed: " + path.string() + ": " + ec.message());
}

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open for reading: " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace advreg
