#pragma once

#include "riskgen/common.hpp"

#include <cstdint>
#include <initializer_list>
#include <random>
#include <string_view>
#include <vector>

namespace riskgen {

// Every random draw in the project comes from a named stream derived from one
// master seed:
//
//   stream = RngStream(derive_seed(master, "stage-tag", index...))
//
// derive_seed mixes the FNV-1a hash of the tag and each index into the state
// with a splitmix64 step, so distinct tags or indices give statistically
// independent streams and the whole tree is reproducible from the master seed.
// The uniform/normal transforms are spelled out below; std::*_distribution is
// implementation-defined and must not appear on reproducibility-critical
// paths.

std::uint64_t derive_seed(std::uint64_t master, std::string_view tag,
                          std::initializer_list<std::uint64_t> indices = {});

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53-bit resolution.
  double uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Requires n > 0.
  std::uint64_t uniform_int(std::uint64_t n);

  /// Standard normal via Box-Muller; the paired value is cached.
  double normal();

  Vector normal_vector(int n);
  Matrix normal_matrix(int rows, int cols);

  /// Fisher-Yates with uniform_int, so order is seed-stable.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = static_cast<std::size_t>(uniform_int(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  RngStream derive(std::string_view tag,
                   std::initializer_list<std::uint64_t> indices = {}) const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
  bool has_cached_ = false;
  double cached_ = 0.0;
};

}  // namespace riskgen
