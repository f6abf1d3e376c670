#pragma once

#include "riskgen/common.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

namespace riskgen {

/// One affine domain: x = rotate(u, rotation) + offset, where u is drawn from
/// the class Gaussian. Rotation acts in the plane of the first two dims.
struct DomainSpec {
  std::string name;
  Vector offset;
  double rotation = 0.0;
  bool ood = false;
};

struct SyntheticSpec {
  int num_classes = 0;
  int dims = 0;
  std::vector<DomainSpec> domains;
  Matrix class_means;      // num_classes x dims, pairwise distinct
  Vector class_cov_scale;  // per-class isotropic std deviation, > 0
  int samples_per_class_per_domain = 0;
  std::uint64_t seed = 0;
  double split_train = 0.6;  // in-distribution split fractions; rest is test
  double split_val = 0.2;

  void validate() const;
  nlohmann::json to_json() const;
  static SyntheticSpec from_json(const nlohmann::json& j);

  /// Canonical content hash of the spec (seed included).
  std::string hash() const;

  /// Component mean of class k under domain d (rotation + offset applied).
  Vector component_mean(int k, int d) const;
};

enum class Split : int { Train = 0, Val = 1, TestId = 2, TestOod = 3 };

struct LabeledDataset {
  SyntheticSpec spec;
  Matrix x;  // n x dims, binary32-snapped
  std::vector<int> labels;
  std::vector<int> domains;
  std::vector<Split> splits;

  Eigen::Index size() const { return x.rows(); }
  int count(Split s) const;
  Matrix split_x(Split s) const;
  std::vector<int> split_labels(Split s) const;
  std::vector<int> split_indices(Split s) const;
};

/// Draws the full multi-domain mixture deterministically from spec.seed.
/// In-distribution domains are split train/val/test-id per (domain, class)
/// block; out-of-distribution domains go entirely to test-ood.
LabeledDataset make_dataset(const SyntheticSpec& spec);

void save_dataset(const LabeledDataset& ds, const std::filesystem::path& path);

/// expected_spec_hash, when non-empty, must match the stored hash exactly.
/// Truncated or malformed files throw std::runtime_error.
LabeledDataset load_dataset(const std::filesystem::path& path,
                            const std::string& expected_spec_hash = "");

enum class DomainScope { Id, Ood, All };

/// Closed-form Bayes classifier over the mixture restricted to a domain
/// scope, with equal class priors. Ties resolve to the smallest class index.
class BayesOracle {
 public:
  BayesOracle(const SyntheticSpec& spec, DomainScope scope);

  int predict_one(const Vector& x) const;
  std::vector<int> predict(const Matrix& X) const;

  int num_classes() const { return static_cast<int>(means_.size()); }

 private:
  // means_[k] has one row per in-scope domain.
  std::vector<Matrix> means_;
  Vector sigma_;
  int dims_ = 0;
};

BayesOracle bayes_oracle(const SyntheticSpec& spec, DomainScope scope);

}  // namespace riskgen
