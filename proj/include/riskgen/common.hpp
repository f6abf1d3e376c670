#pragma once

#include <Eigen/Dense>

#include <cstdint>
#include <stdexcept>
#include <string>

namespace riskgen {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

inline bool all_finite(const Matrix& m) { return m.allFinite(); }
inline bool all_finite(const Vector& v) { return v.allFinite(); }

/// FNV-1a over a byte string; used for config/content keys, not security.
inline std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string to_hex(std::uint64_t v);

/// Shortest round-trip decimal form of a double ("%.17g", then trimmed).
std::string fmt_double(double v);

/// Thrown when sampling hits a non-finite state; carries the offending step.
class GenerationError : public std::runtime_error {
 public:
  GenerationError(const std::string& what, int step, int sample)
      : std::runtime_error(what), step_(step), sample_(sample) {}
  int step() const { return step_; }
  int sample() const { return sample_; }

 private:
  int step_;
  int sample_;
};

}  // namespace riskgen
