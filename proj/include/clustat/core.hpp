// Shared plumbing: error types, number formatting, seeded random streams and
// a deterministic parallel loop.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>

namespace clustat {

enum class ErrorKind { Config, Io, Data, Numeric };

class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

 private:
  ErrorKind kind_;
};

struct ConfigError : Error {
  explicit ConfigError(const std::string& what) : Error(ErrorKind::Config, what) {}
};
struct IoError : Error {
  explicit IoError(const std::string& what) : Error(ErrorKind::Io, what) {}
};
struct DataError : Error {
  explicit DataError(const std::string& what) : Error(ErrorKind::Data, what) {}
};
struct NumericError : Error {
  explicit NumericError(const std::string& what) : Error(ErrorKind::Numeric, what) {}
};

// Shortest decimal text that parses back to the identical double.
std::string format_double(double value);
// Strict full-string parse; returns false on trailing garbage or overflow.
bool parse_double(std::string_view text, double& out);
bool parse_int(std::string_view text, long long& out);

std::uint64_t splitmix64(std::uint64_t x);

// Seedable stream with cheap, order-independent splitting: split(i) depends
// only on (seed, path of ids), never on how many draws were taken before.
class RandomStream {
 public:
  explicit RandomStream(std::uint64_t seed, std::uint64_t stream = 0);

  RandomStream split(std::uint64_t id) const { return RandomStream(key_, id); }

  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(engine_); }
  double normal() { return normal_(engine_); }
  std::uint64_t poisson(double mean);
  std::mt19937_64& engine() { return engine_; }

 private:
  std::uint64_t key_;
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
};

// Thread count used when a caller passes 0.
unsigned default_threads();
void set_default_threads(unsigned n);

// Runs fn(i) for i in [0, n). Indices are split into contiguous static blocks,
// so any per-index output is independent of the worker count.
void parallel_for(std::size_t n, unsigned threads, const std::function<void(std::size_t)>& fn);

}  // namespace clustat
