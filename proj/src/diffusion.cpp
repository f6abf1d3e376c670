#include "riskgen/diffusion.hpp"

#include <cmath>
#include <stdexcept>

namespace riskgen {

namespace {

void check_step_range(int t, const NoiseSchedule& schedule, const char* op) {
  if (t < 1 || t > schedule.steps())
    throw std::invalid_argument(std::string(op) + ": t out of [1, T]");
}

void check_shapes(const LatentBatch& z, const Matrix& eps, const char* op) {
  if (z.data.rows() != eps.rows() || z.data.cols() != eps.cols())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

void check_finite(const LatentBatch& z, const Matrix& eps, const char* op) {
  if (!all_finite(z.data) || !all_finite(eps))
    throw std::invalid_argument(std::string(op) + ": non-finite input");
}

}  // namespace

LatentBatch forward_diffuse(const LatentBatch& z0, int t, const Matrix& eps,
                            const NoiseSchedule& schedule) {
  check_step_range(t, schedule, "forward_diffuse");
  check_shapes(z0, eps, "forward_diffuse");
  check_finite(z0, eps, "forward_diffuse");
  if (z0.step != 0) throw std::invalid_argument("forward_diffuse: input must be at step 0");
  double ab = schedule.alpha_bar(t);
  return LatentBatch{std::sqrt(ab) * z0.data + std::sqrt(1.0 - ab) * eps, t};
}

LatentBatch predict_z0(const LatentBatch& zt, const Matrix& eps_hat, int t,
                       const NoiseSchedule& schedule) {
  check_step_range(t, schedule, "predict_z0");
  check_shapes(zt, eps_hat, "predict_z0");
  check_finite(zt, eps_hat, "predict_z0");
  if (zt.step != t) throw std::invalid_argument("predict_z0: batch step tag does not match t");
  double ab = schedule.alpha_bar(t);
  return LatentBatch{(zt.data - std::sqrt(1.0 - ab) * eps_hat) / std::sqrt(ab), 0};
}

LatentBatch ddim_step(const LatentBatch& zt, const Matrix& eps_hat, int t,
                      const NoiseSchedule& schedule) {
  check_step_range(t, schedule, "ddim_step");
  check_shapes(zt, eps_hat, "ddim_step");
  check_finite(zt, eps_hat, "ddim_step");
  if (zt.step != t) throw std::invalid_argument("ddim_step: batch step tag does not match t");
  LatentBatch z0 = predict_z0(zt, eps_hat, t, schedule);
  double ab_prev = schedule.alpha_bar(t - 1);
  return LatentBatch{std::sqrt(ab_prev) * z0.data + std::sqrt(1.0 - ab_prev) * eps_hat, t - 1};
}

}  // namespace riskgen
