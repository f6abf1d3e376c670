#include "riskgen/schedule.hpp"

#include <cmath>
#include <stdexcept>

namespace riskgen {

ScheduleKind schedule_kind_from_string(const std::string& s) {
  if (s == "linear") return ScheduleKind::LinearBeta;
  throw std::invalid_argument("unknown schedule kind: " + s);
}

std::string to_string(ScheduleKind k) {
  switch (k) {
    case ScheduleKind::LinearBeta:
      return "linear";
  }
  throw std::logic_error("unreachable schedule kind");
}

NoiseSchedule::NoiseSchedule(std::vector<double> alphas) : alphas_(std::move(alphas)) {
  alpha_bars_.resize(alphas_.size() + 1);
  alpha_bars_[0] = 1.0;
  for (std::size_t t = 0; t < alphas_.size(); ++t)
    alpha_bars_[t + 1] = alpha_bars_[t] * alphas_[t];
  validate();
}

double NoiseSchedule::alpha(int t) const {
  if (t < 1 || t > steps()) throw std::invalid_argument("alpha: t out of range");
  return alphas_[static_cast<std::size_t>(t - 1)];
}

double NoiseSchedule::alpha_bar(int t) const {
  if (t < 0 || t > steps()) throw std::invalid_argument("alpha_bar: t out of range");
  return alpha_bars_[static_cast<std::size_t>(t)];
}

void NoiseSchedule::validate() const {
  if (alphas_.empty()) throw std::runtime_error("schedule: no steps");
  if (alpha_bars_.size() != alphas_.size() + 1)
    throw std::runtime_error("schedule: alpha_bar length mismatch");
  if (alpha_bars_[0] != 1.0) throw std::runtime_error("schedule: alpha_bar(0) must be 1");
  for (std::size_t t = 0; t < alphas_.size(); ++t) {
    double a = alphas_[t];
    if (!(a > 0.0 && a <= 1.0)) throw std::runtime_error("schedule: alpha out of (0, 1]");
    double expect = alpha_bars_[t] * a;
    if (std::abs(alpha_bars_[t + 1] - expect) > 1e-12)
      throw std::runtime_error("schedule: cumulative product drift exceeds 1e-12");
    if (alpha_bars_[t + 1] <= 0.0) throw std::runtime_error("schedule: alpha_bar must stay positive");
    if (alpha_bars_[t + 1] > alpha_bars_[t])
      throw std::runtime_error("schedule: alpha_bar must be non-increasing");
  }
}

NoiseSchedule build_schedule(ScheduleKind kind, int T, const LinearBetaParams& params) {
  if (T <= 0) throw std::invalid_argument("build_schedule: T must be positive");
  if (kind != ScheduleKind::LinearBeta)
    throw std::invalid_argument("build_schedule: unsupported kind");
  std::vector<double> alphas(static_cast<std::size_t>(T));
  for (int t = 0; t < T; ++t) {
    double beta = T == 1 ? params.beta_min
                         : params.beta_min +
                               (params.beta_max - params.beta_min) * static_cast<double>(t) /
                                   static_cast<double>(T - 1);
    if (!(beta >= 0.0 && beta < 1.0))
      throw std::invalid_argument("build_schedule: beta out of [0, 1)");
    alphas[static_cast<std::size_t>(t)] = 1.0 - beta;
  }
  return NoiseSchedule(std::move(alphas));
}

}  // namespace riskgen
