#pragma once

#include "riskgen/common.hpp"
#include "riskgen/dataset.hpp"
#include "riskgen/models.hpp"
#include "riskgen/sampler.hpp"

#include <nlohmann/json.hpp>

#include <optional>
#include <string>
#include <vector>

namespace riskgen {

/// Fraction of samples a classifier labels differently from their intended
/// category. Predictions are recomputed, not read from the sample records.
double error_rate(const std::vector<GeneratedSample>& samples, const TargetClassifier& model);

/// Fraction of samples whose intended category matches the Bayes-optimal
/// label of the generating distribution.
double conformity_rate(const std::vector<GeneratedSample>& samples, const BayesOracle& oracle);

struct FrechetResult {
  double value = 0.0;
  /// Set when either side has too few samples for a stable full covariance
  /// (min(n1, n2) <= dim + 1) and the diagonal form was used instead.
  bool diagonal = false;
};

/// Frechet distance between Gaussian fits of two embedding sets:
///   ||mu1 - mu2||^2 + tr(S1 + S2 - 2 (S1 S2)^(1/2))
/// Covariances use the n-1 denominator. Requires at least two rows per side.
FrechetResult frechet_embedding_distance(const Matrix& a, const Matrix& b);

struct TransferRow {
  std::string model_id;
  bool is_source = false;
  double error_rate = 0.0;
};

struct TransferMatrix {
  std::string source_model;
  std::vector<TransferRow> rows;
  std::string to_csv() const;
};

/// Error rates of one generated set under several classifiers.
TransferMatrix transfer_matrix(const std::vector<GeneratedSample>& samples,
                               const std::vector<std::pair<std::string, const TargetClassifier*>>& models,
                               const std::string& source_model);

struct CategoryMetrics {
  int category = -1;
  int count = 0;
  double error_rate = 0.0;
  double conformity = 0.0;
  std::optional<FrechetResult> frechet;
};

struct EvalReport {
  int sample_count = 0;
  double error_rate = 0.0;
  double conformity = 0.0;
  std::optional<FrechetResult> frechet;
  std::vector<CategoryMetrics> per_category;
  nlohmann::json config;

  nlohmann::json to_json() const;
};

/// Full evaluation of a generated set against a reference embedding set
/// (rows of ref_embeddings labeled by ref_labels, typically the validation
/// split pushed through the embedder).
EvalReport evaluate_samples(const std::vector<GeneratedSample>& samples,
                            const TargetClassifier& target, const JointEmbedder& embedder,
                            const BayesOracle& oracle, const Matrix& ref_embeddings,
                            const std::vector<int>& ref_labels, const nlohmann::json& config);

}  // namespace riskgen
