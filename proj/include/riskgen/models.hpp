#pragma once

#include "riskgen/common.hpp"
#include "riskgen/mlp.hpp"
#include "riskgen/rng.hpp"
#include "riskgen/schedule.hpp"

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace riskgen {

// ---------------------------------------------------------------------------
// Configs

struct ClassifierConfig {
  std::string arch = "mlp_m";
  int epochs = 40;
  int batch = 256;
  double lr = 3e-3;
  double weight_decay = 1e-4;
};

/// Hidden layer sizes for a classifier architecture tag. Known tags:
/// "linear", "mlp_s", "mlp_m", "mlp_w". Throws on unknown tags.
std::vector<int> classifier_arch_hidden(const std::string& arch);

struct EmbedderConfig {
  int dim = 16;
  std::vector<int> hidden = {64};
  int epochs = 30;
  int batch = 256;
  double lr = 3e-3;
  double temperature = 0.07;
  /// Pulls pre-normalization magnitudes toward 1 so the image-tower Jacobian
  /// keeps a usable scale for guidance.
  double norm_reg = 0.1;
};

struct DenoiserConfig {
  std::vector<int> hidden = {128, 128};
  int time_embed_dim = 8;
  double p_drop = 0.1;
  int epochs = 60;
  int batch = 256;
  double lr = 2e-3;
};

struct ErrorPredictorConfig {
  std::vector<int> hidden = {32};
  int epochs = 40;
  int batch = 256;
  double lr = 3e-3;
  double threshold = 0.5;
};

// ---------------------------------------------------------------------------
// Models

/// Identity decoder; latents and data share one space. Kept explicit so the
/// sampling chain decodes through a named seam rather than by assumption.
class Decoder {
 public:
  Matrix decode(const Matrix& z) const { return z; }
  /// Vector-Jacobian product of decode; identity here.
  Matrix vjp(const Matrix& /*z*/, const Matrix& u) const { return u; }
};

class TargetClassifier {
 public:
  TargetClassifier() = default;
  TargetClassifier(int input_dim, int num_classes, const std::string& arch, RngStream& rng);

  int num_classes() const { return num_classes_; }
  int input_dim() const { return net_.input_dim(); }
  const std::string& arch() const { return arch_; }

  Matrix logits(const Matrix& X) const { return net_.forward(X); }

  /// Argmax predictions; ties resolve to the smallest class index.
  std::vector<int> predict(const Matrix& X) const;
  int predict_one(const Vector& x) const;

  double accuracy(const Matrix& X, const std::vector<int>& y) const;

  /// Per-sample cross-entropy of softmax(logits / temperature) at the given
  /// labels, plus the gradient with respect to the inputs.
  Matrix ce_input_grad(const Matrix& X, const std::vector<int>& y, double temperature,
                       Vector* loss_out) const;
  Vector ce_loss(const Matrix& X, const std::vector<int>& y, double temperature) const;

  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }

  void save(const std::filesystem::path& dir, std::uint64_t seed,
            const std::string& config_hash) const;
  static TargetClassifier load(const std::filesystem::path& dir);

 private:
  std::string arch_;
  int num_classes_ = 0;
  Mlp net_;
};

class JointEmbedder {
 public:
  JointEmbedder() = default;
  JointEmbedder(int input_dim, int num_classes, const EmbedderConfig& cfg, RngStream& rng);

  int dim() const { return dim_; }
  int num_classes() const { return static_cast<int>(text_table_.rows()); }
  int input_dim() const { return tower_.input_dim(); }

  /// Unit-norm image embeddings, one row per sample.
  Matrix embed_image(const Matrix& X) const;
  Vector embed_image_one(const Vector& x) const;

  /// Fixed per-category lookup; unit-norm.
  Vector embed_text(int category) const;

  /// d(embed_image(x) . v)/dx, one row per sample.
  Matrix inner_grad(const Matrix& X, const Vector& v) const;

  Mlp& tower() { return tower_; }
  const Mlp& tower() const { return tower_; }
  Matrix& table() { return text_table_; }
  const Matrix& table() const { return text_table_; }

  /// Normalizes the text table rows and snaps all parameters to binary32;
  /// called once at the end of training.
  void finalize();

  void save(const std::filesystem::path& dir, std::uint64_t seed,
            const std::string& config_hash) const;
  static JointEmbedder load(const std::filesystem::path& dir);

 private:
  int dim_ = 0;
  Mlp tower_;
  Matrix text_table_;  // num_classes x dim, unit rows after finalize()
};

/// Abstract noise model consumed by the guided sampler; lets tests plug in
/// closed-form predictors where the learned one is not under test.
class NoiseModel {
 public:
  virtual ~NoiseModel() = default;
  virtual int z_dim() const = 0;
  virtual Matrix eps(const Matrix& z, int t, const Vector& c, const Vector& y_text) const = 0;
  /// u^T d(eps)/dz for each row of u; same shape as z.
  virtual Matrix vjp_z(const Matrix& z, int t, const Vector& c, const Vector& y_text,
                       const Matrix& u) const = 0;
  virtual Vector null_image_cond() const = 0;
  virtual Vector null_text_cond() const = 0;
};

class NoisePredictor : public NoiseModel {
 public:
  NoisePredictor() = default;
  NoisePredictor(int z_dim, int cond_dim, const DenoiserConfig& cfg, RngStream& rng);

  int z_dim() const override { return z_dim_; }
  int cond_dim() const { return cond_dim_; }
  int time_embed_dim() const { return time_embed_dim_; }

  Matrix eps(const Matrix& z, int t, const Vector& c, const Vector& y_text) const override;
  Matrix vjp_z(const Matrix& z, int t, const Vector& c, const Vector& y_text,
               const Matrix& u) const override;

  /// Batched form with per-row steps and conditions (training path).
  Matrix eps_batch(const Matrix& Z, const std::vector<int>& t, const Matrix& C,
                   const Matrix& Y) const;

  Vector null_image_cond() const override { return null_c_.row(0).transpose(); }
  Vector null_text_cond() const override { return null_y_.row(0).transpose(); }
  Matrix& null_image_param() { return null_c_; }
  Matrix& null_text_param() { return null_y_; }

  /// Sinusoidal features of the step index.
  Eigen::RowVectorXd time_features(int t) const;

  Mlp& net() { return net_; }
  const Mlp& net() const { return net_; }

  void snap_f32();

  void save(const std::filesystem::path& dir, std::uint64_t seed,
            const std::string& config_hash) const;
  static NoisePredictor load(const std::filesystem::path& dir);

 private:
  Matrix assemble_input(const Matrix& Z, const std::vector<int>& t, const Matrix& C,
                        const Matrix& Y) const;

  int z_dim_ = 0;
  int cond_dim_ = 0;
  int time_embed_dim_ = 0;
  Mlp net_;
  Matrix null_c_;  // 1 x cond_dim, learned
  Matrix null_y_;
};

class ErrorPredictor {
 public:
  ErrorPredictor() = default;
  ErrorPredictor(int input_dim, const ErrorPredictorConfig& cfg, RngStream& rng);

  /// P(model error | embedding), in [0, 1].
  Vector prob_error(const Matrix& C) const;
  double prob_error_one(const Vector& c) const;

  double threshold() const { return threshold_; }
  bool degenerate() const { return degenerate_; }

  Mlp& net() { return net_; }
  void set_degenerate(double value) {
    degenerate_ = true;
    degenerate_value_ = value;
  }

  void save(const std::filesystem::path& dir, std::uint64_t seed,
            const std::string& config_hash) const;
  static ErrorPredictor load(const std::filesystem::path& dir);

 private:
  Mlp net_;
  double threshold_ = 0.5;
  bool degenerate_ = false;
  double degenerate_value_ = 0.0;

  friend ErrorPredictor fit_error_predictor(const Matrix&, const std::vector<std::uint8_t>&,
                                            const ErrorPredictorConfig&, std::uint64_t);
};

// ---------------------------------------------------------------------------
// Training

/// Trains a classifier with cross-entropy + Adam. Requires at least two
/// distinct labels; labels must lie in [0, num_classes).
TargetClassifier train_classifier(const Matrix& X, const std::vector<int>& y, int num_classes,
                                  const ClassifierConfig& cfg, std::uint64_t seed);

/// Trains the two-tower embedder with a temperature-scaled symmetric
/// contrastive objective over categories.
JointEmbedder train_embedder(const Matrix& X, const std::vector<int>& y, int num_classes,
                             const EmbedderConfig& cfg, std::uint64_t seed);

/// Trains the conditional noise predictor with the standard denoising
/// objective E||eps - eps_hat||^2, with condition dropout onto learned null
/// vectors. The embedder is frozen; conditions are precomputed from it.
NoisePredictor train_denoiser(const Matrix& X, const std::vector<int>& y,
                              const JointEmbedder& embedder, const NoiseSchedule& schedule,
                              const DenoiserConfig& cfg, std::uint64_t seed);

/// Mean denoising loss of a predictor over a dataset, with steps and noise
/// drawn from the given seed. Used for held-out validation.
double denoising_loss(const NoisePredictor& model, const Matrix& X, const std::vector<int>& y,
                      const JointEmbedder& embedder, const NoiseSchedule& schedule,
                      std::uint64_t seed);

/// 1 where the classifier disagrees with the label, else 0.
std::vector<std::uint8_t> compute_model_errors(const TargetClassifier& model, const Matrix& X,
                                               const std::vector<int>& y);

/// Fits the error predictor with binary cross-entropy. All-0 or all-1 labels
/// produce a constant predictor at that value with the degenerate flag set.
ErrorPredictor fit_error_predictor(const Matrix& embeddings,
                                   const std::vector<std::uint8_t>& errors,
                                   const ErrorPredictorConfig& cfg, std::uint64_t seed);

}  // namespace riskgen
