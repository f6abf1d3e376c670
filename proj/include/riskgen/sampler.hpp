#pragma once

#include "riskgen/common.hpp"
#include "riskgen/dataset.hpp"
#include "riskgen/diffusion.hpp"
#include "riskgen/models.hpp"
#include "riskgen/rng.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

namespace riskgen {

/// Per-category Gaussian fit of validation embeddings: mean and per-dimension
/// population variance (divide by n). A single-sample fit is flagged
/// degenerate and has zero variance.
struct CategoryStats {
  int category = -1;
  Vector mu;
  Vector sigma2;
  int count = 0;
  bool degenerate = false;
};

CategoryStats estimate_category_stats(const Matrix& embeddings, const std::vector<int>& labels,
                                      int category);

struct GuidanceConfig {
  /// Gradient scale on the normalized risky direction.
  double s = 10.0;
  /// Conformity coefficient inside the score.
  double lambda = 1e-4;
  int max_screen_attempts = 100;
  /// Gradient norms below this skip guidance for the step instead of
  /// amplifying numerical noise.
  double grad_norm_floor = 1e-12;
  /// Classifier-free guidance mix; 1 means pure conditional prediction.
  double cfg_weight = 1.0;
  bool stop_grad_through_denoiser = false;
  bool screening = true;
  /// Softmax temperature of the classifier loss inside the score. The overall
  /// gradient is normalized, so this does not change guidance strength; it
  /// sets the classifier-vs-embedder gradient ratio that lambda mixes
  /// against. The default puts lambda's usual range in the regime where the
  /// conformity term visibly trades against the risky term.
  double loss_temperature = 8e5;

  void validate() const;

  /// Stronger push for datasets with very few categories.
  static GuidanceConfig few_category_preset();
};

struct ScreenResult {
  Vector c;
  bool accepted = false;
  int attempts = 0;
  double prob_error = 0.0;
};

/// Draws embedding candidates from the category Gaussian until the error
/// predictor crosses its threshold. When max_attempts runs out, returns the
/// candidate with the highest predicted error probability, accepted=false.
ScreenResult screen_embedding(const CategoryStats& stats, const ErrorPredictor& err,
                              int max_attempts, RngStream& rng);

struct ScoreResult {
  Vector value;  // per sample
  Matrix grad;   // per sample, same shape as the input when requested
};

/// Conformity-weighted risky score
///   S(x) = CE(f(x) / loss_temperature, y) + lambda * <h(x), y_text>
/// and optionally its input gradient.
ScoreResult guidance_score(const Matrix& x_hat, int category, const TargetClassifier& classifier,
                           const JointEmbedder& embedder, const Vector& y_text, double lambda,
                           double loss_temperature, bool want_grad = true);

using ScoreFn = std::function<ScoreResult(const Matrix& x_hat)>;

struct GuidedNoise {
  Matrix eps_hat;   // guided prediction fed to the DDIM update
  Matrix eps_base;  // unguided (possibly CFG-mixed) prediction
  Vector score;     // NaN when guidance was skipped (s == 0)
  Vector grad_norm;
  std::vector<std::uint8_t> fired;
};

/// One guided noise prediction at the batch's current step:
///   eps_hat = eps_base - s * sqrt(1 - alpha_bar_t) * g / ||g||
/// where g is the score gradient at the clean estimate, chained through
/// predict_z0 and the decoder (and through the noise model unless
/// stop_grad_through_denoiser is set). Rows whose gradient norm falls below
/// grad_norm_floor keep eps_base. Throws GenerationError on non-finite state.
GuidedNoise guided_noise(const LatentBatch& zt, const Vector& c, const Vector& y_text,
                         const NoiseModel& model, const Decoder& decoder, const ScoreFn& score,
                         const GuidanceConfig& cfg, const NoiseSchedule& schedule);

struct StepTrace {
  int t = 0;
  double score = 0.0;
  double grad_norm = 0.0;
  bool fired = false;
};

struct GeneratedSample {
  Vector x;
  int intended_category = -1;
  int prediction = -1;
  bool is_risky = false;  // prediction != intended_category
  Vector embedding_condition;
  int screen_attempts = 0;
  bool screen_accepted = false;
  std::vector<StepTrace> trace;
};

struct ModelBundle {
  const NoiseModel* denoiser = nullptr;
  const Decoder* decoder = nullptr;
  const TargetClassifier* target = nullptr;
  const JointEmbedder* embedder = nullptr;
};

/// Full conditional generation loop for one category: screen (or draw) an
/// embedding condition, start from seeded Gaussian noise, run the guided DDIM
/// chain, decode, and label with the target classifier. Deterministic in
/// (seed, category, sample index).
std::vector<GeneratedSample> generate(int category, int count, const ModelBundle& models,
                                      const CategoryStats& stats, const ErrorPredictor& err,
                                      const NoiseSchedule& schedule, const GuidanceConfig& cfg,
                                      std::uint64_t seed, bool record_trace = false);

/// Plain conditional DDIM sampling with the same stream layout as generate();
/// the s = 0 / no-screening reduction law is tested against this path.
std::vector<GeneratedSample> sample_unguided(int category, int count, const ModelBundle& models,
                                             const CategoryStats& stats,
                                             const NoiseSchedule& schedule, std::uint64_t seed);

/// Dump format: binary file (header JSON + binary32 sample and condition
/// blocks + int32 label blocks) plus a CSV index with columns
/// id,intended_category,prediction,is_risky,screen_attempts.
void save_samples(const std::vector<GeneratedSample>& samples, const nlohmann::json& header_extra,
                  const std::filesystem::path& bin_path, const std::filesystem::path& csv_path);

std::vector<GeneratedSample> load_samples(const std::filesystem::path& bin_path);

}  // namespace riskgen
