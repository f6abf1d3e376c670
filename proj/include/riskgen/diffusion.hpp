#pragma once

#include "riskgen/common.hpp"
#include "riskgen/schedule.hpp"

namespace riskgen {

/// A batch of latent vectors tagged with the diffusion step they sit at.
/// Rows are samples; step 0 is clean data, step T is the noisiest level.
struct LatentBatch {
  Matrix data;
  int step = 0;
};

/// Closed-form forward marginal:
///   z_t = sqrt(alpha_bar_t) * z_0 + sqrt(1 - alpha_bar_t) * eps
/// Requires z0.step == 0, t in [1, T], matching shapes, finite inputs.
LatentBatch forward_diffuse(const LatentBatch& z0, int t, const Matrix& eps,
                            const NoiseSchedule& schedule);

/// Clean-data estimate from a noisy batch and a noise prediction:
///   z0_hat = (z_t - sqrt(1 - alpha_bar_t) * eps_hat) / sqrt(alpha_bar_t)
/// Requires zt.step == t, t in [1, T].
LatentBatch predict_z0(const LatentBatch& zt, const Matrix& eps_hat, int t,
                       const NoiseSchedule& schedule);

/// One deterministic (eta = 0) reverse update from step t to t-1:
///   z_{t-1} = sqrt(alpha_bar_{t-1}) * z0_hat + sqrt(1 - alpha_bar_{t-1}) * eps_hat
/// computed through predict_z0, so the two agree bitwise on the estimate.
/// At t == 1 the result is exactly the clean estimate.
LatentBatch ddim_step(const LatentBatch& zt, const Matrix& eps_hat, int t,
                      const NoiseSchedule& schedule);

}  // namespace riskgen
