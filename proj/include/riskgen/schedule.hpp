#pragma once

#include <string>
#include <vector>

namespace riskgen {

enum class ScheduleKind { LinearBeta };

ScheduleKind schedule_kind_from_string(const std::string& s);
std::string to_string(ScheduleKind k);

struct LinearBetaParams {
  double beta_min = 1e-4;
  double beta_max = 0.05;
};

/// Diffusion noise schedule over steps t = 1..T.
///
/// alpha(t) is the per-step retention factor and alpha_bar(t) the cumulative
/// product, with alpha_bar(0) == 1 by convention. Products are accumulated in
/// double precision and validate() enforces the recurrence to 1e-12.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  NoiseSchedule(std::vector<double> alphas);

  int steps() const { return static_cast<int>(alphas_.size()); }

  /// t in [1, steps()].
  double alpha(int t) const;

  /// t in [0, steps()]; alpha_bar(0) == 1.
  double alpha_bar(int t) const;

  const std::vector<double>& alphas() const { return alphas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

  /// Throws std::runtime_error if the cumulative products are inconsistent,
  /// non-positive, or increasing.
  void validate() const;

 private:
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;  // size steps()+1, alpha_bars_[0] == 1
};

/// Builds a schedule of the given family. LinearBeta spaces beta evenly on
/// [beta_min, beta_max] over T steps and sets alpha_t = 1 - beta_t. Betas must
/// lie in [0, 1); beta == 0 is the zero-noise degenerate schedule. Throws
/// std::invalid_argument on T <= 0 or betas out of range.
NoiseSchedule build_schedule(ScheduleKind kind, int T, const LinearBetaParams& params);

}  // namespace riskgen
