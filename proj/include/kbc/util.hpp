#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <iosfwd>
#include <limits>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace kbc {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ParseError : public Error {
 public:
  ParseError(std::size_t line_number, const std::string& what)
      : Error("line " + std::to_string(line_number) + ": " + what),
        line_number_(line_number) {}
  std::size_t line_number() const { return line_number_; }

 private:
  std::size_t line_number_;
};

// splitmix64 finalizer, used to derive independent streams from a seed.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t stream);

/// Seeded 64-bit generator with portable (library-independent) sampling
/// helpers, so runs are reproducible across standard library versions.
class Rng {
 public:
  using result_type = std::uint64_t;

  explicit Rng(std::uint64_t seed = 1);
  Rng(std::uint64_t seed, std::uint64_t stream) : Rng(mix_seed(seed, stream)) {}

  static constexpr result_type min() { return 0; }
  static constexpr result_type max() {
    return std::numeric_limits<result_type>::max();
  }
  result_type operator()();

  // Unbiased integer in [0, n). n must be positive.
  std::size_t index(std::size_t n);
  // Uniform double in [0, 1).
  double uniform();
  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
  double normal();
  bool bernoulli(double p) { return uniform() < p; }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::uint64_t s_[4];
};

std::string_view trim(std::string_view s);
std::vector<std::string_view> split(std::string_view s, char sep);
// Splits on `sep` but never inside a double-quoted run.
std::vector<std::string_view> split_unquoted(std::string_view s, char sep);

// Runs fn(i) for i in [0, n) on up to `workers` threads. Work is assigned in
// contiguous chunks; callers write results by index so output order never
// depends on scheduling.
void parallel_for(std::size_t n, int workers,
                  const std::function<void(std::size_t)>& fn);

// Writes through a sibling temp file and renames over `path` on success.
void write_file_atomic(const std::string& path,
                       const std::function<void(std::ostream&)>& writer,
                       bool binary = false);

std::string read_file(const std::string& path);

// Little-endian binary helpers for snapshot/model files.
namespace bin {
void write_u8(std::ostream& out, std::uint8_t v);
void write_u32(std::ostream& out, std::uint32_t v);
void write_u64(std::ostream& out, std::uint64_t v);
void write_f64(std::ostream& out, double v);
void write_string(std::ostream& out, std::string_view s);
std::uint8_t read_u8(std::istream& in);
std::uint32_t read_u32(std::istream& in);
std::uint64_t read_u64(std::istream& in);
double read_f64(std::istream& in);
std::string read_string(std::istream& in);
void expect_magic(std::istream& in, std::string_view magic);
}  // namespace bin

// Shortest text form that parses back to the same double.
std::string format_double(double v);

}  // namespace kbc
