#pragma once

#include "riskgen/dataset.hpp"
#include "riskgen/metrics.hpp"
#include "riskgen/models.hpp"
#include "riskgen/sampler.hpp"
#include "riskgen/schedule.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

namespace riskgen {

// ---------------------------------------------------------------------------
// Run configuration (versioned JSON; unknown keys rejected)

struct DomainGen {
  std::string name;
  double offset_scale = 0.0;
  double rotation_deg = 0.0;
  bool ood = false;
};

struct DatasetGenConfig {
  int num_classes = 6;
  int dims = 16;
  int per_class_per_domain = 200;
  /// Distance scale between class means (means are unit directions times this).
  double class_separation = 3.0;
  double noise_scale = 1.0;
  double split_train = 0.6;
  double split_val = 0.2;
  std::vector<DomainGen> domains;

  static std::vector<DomainGen> default_domains();
};

/// Materializes the dataset spec: class means and domain offsets are drawn
/// from streams derived from the master seed, so the spec (and everything
/// downstream) is a pure function of (config, master_seed).
SyntheticSpec build_spec(const DatasetGenConfig& cfg, std::uint64_t master_seed);

struct ScheduleConfig {
  std::string kind = "linear";
  int steps = 50;
  double beta_min = 1e-4;
  double beta_max = 0.05;
};

NoiseSchedule build_schedule(const ScheduleConfig& cfg);

struct ClassifiersConfig {
  std::string target = "mlp_m";
  std::vector<std::string> archs = {"linear", "mlp_s", "mlp_m", "mlp_w"};
  int epochs = 100;
  int batch = 256;
  double lr = 3e-3;
  double weight_decay = 1e-4;

  ClassifierConfig train_config(const std::string& arch) const;
};

struct GenerationConfig {
  int per_category = 100;
  int replicates = 3;
  /// Fraction of the validation split used for the error predictor, category
  /// stats, and reference embeddings; subsampled by a seeded shuffle.
  double val_fraction = 1.0;
  bool record_trace = false;
};

struct RetrainConfig {
  bool enabled = true;
  int seeds = 3;
};

struct RunConfig {
  int schema_version = 1;
  std::uint64_t master_seed = 1;
  DatasetGenConfig dataset;
  ScheduleConfig schedule;
  EmbedderConfig embedder;
  DenoiserConfig denoiser;
  ClassifiersConfig classifiers;
  ErrorPredictorConfig error_predictor;
  GuidanceConfig guidance;
  GenerationConfig generation;
  RetrainConfig retrain;
  /// Reference split for embedding-distribution distances ("val" or "train").
  std::string fid_reference = "val";

  void validate() const;
  nlohmann::json to_json() const;
  static RunConfig from_json(const nlohmann::json& j);
  static RunConfig load(const std::filesystem::path& path);
  /// Content hash of the canonical JSON form.
  std::string hash() const;
};

// ---------------------------------------------------------------------------
// Stages

enum class RunStage { Data = 0, Train = 1, Generate = 2, Eval = 3, Retrain = 4 };

RunStage run_stage_from_string(const std::string& s);
std::string to_string(RunStage s);

struct StageInfo {
  std::string name;
  std::string key;
  std::string path;
  bool reused = false;
};

// ---------------------------------------------------------------------------
// Retraining

struct RetrainArm {
  std::string arm;  // "baseline" or "augmented"
  int seed_index = 0;
  double id_accuracy = 0.0;
  double ood_accuracy = 0.0;
  double id_delta = 0.0;  // vs baseline with the same seed; 0 for baseline rows
  double ood_delta = 0.0;
};

struct RetrainReport {
  bool empty_generated = false;
  int num_generated = 0;
  std::vector<RetrainArm> rows;
  double mean_id_delta = 0.0;
  double sd_id_delta = 0.0;
  double mean_ood_delta = 0.0;
  double sd_ood_delta = 0.0;

  nlohmann::json to_json() const;
  std::string to_csv() const;
};

/// Trains baseline and augmented classifiers over several seeds and reports
/// per-seed in-distribution / out-of-distribution accuracy deltas. Generated
/// samples join the train split with their intended category as the label.
/// An empty generated list still produces baseline rows, flagged.
RetrainReport augment_and_retrain(const LabeledDataset& ds,
                                  const std::vector<GeneratedSample>& generated,
                                  const ClassifiersConfig& cfg, const RetrainConfig& retrain,
                                  std::uint64_t master_seed);

// ---------------------------------------------------------------------------
// Runner: lazy, cached stage execution under one output directory.
// Stage outputs are stored content-addressed (key = hash of the exact inputs
// that influence the bytes), so reruns and config sweeps reuse everything
// that did not change. fresh = true recomputes and overwrites.

class Runner {
 public:
  Runner(RunConfig cfg, std::filesystem::path out_dir, bool fresh = false);

  const RunConfig& config() const { return cfg_; }
  const std::filesystem::path& out_dir() const { return out_; }

  const SyntheticSpec& spec();
  const LabeledDataset& data();
  const NoiseSchedule& noise_schedule();
  const JointEmbedder& embedder();
  const NoisePredictor& denoiser();
  const TargetClassifier& classifier(const std::string& arch);
  const TargetClassifier& target_classifier();
  const ErrorPredictor& error_predictor();

  /// Validation subset per generation.val_fraction: embeddings, labels.
  const Matrix& ref_embeddings();
  const std::vector<int>& ref_labels();
  const CategoryStats& category_stats(int category);

  const std::vector<GeneratedSample>& generated(int replicate);
  /// All replicates concatenated, in replicate order.
  std::vector<GeneratedSample> generated_pooled();

  const EvalReport& eval_report(int replicate);

  /// Runs all stages up to and including `through`; writes reports, plots,
  /// the resolved config, and manifest.json; returns the manifest.
  nlohmann::json run(RunStage through);

  const std::vector<StageInfo>& stages() const { return stages_; }

 private:
  struct Keys {
    std::string data;
    std::string embedder;
    std::string denoiser;
    std::map<std::string, std::string> classifier;
    std::string error_predictor;
    std::vector<std::string> generate;  // per replicate
    std::vector<std::string> eval;
    std::string retrain;
  };

  void compute_keys();
  void note_stage(const std::string& name, const std::string& key,
                  const std::filesystem::path& path, bool reused);
  void build_val_subset();

  RunConfig cfg_;
  std::filesystem::path out_;
  bool fresh_ = false;
  Keys keys_;
  std::vector<StageInfo> stages_;

  std::optional<SyntheticSpec> spec_;
  std::optional<LabeledDataset> data_;
  std::optional<NoiseSchedule> schedule_;
  std::optional<JointEmbedder> embedder_;
  std::optional<NoisePredictor> denoiser_;
  std::map<std::string, TargetClassifier> classifiers_;
  std::optional<ErrorPredictor> error_predictor_;
  std::optional<Matrix> val_x_;       // validation subset per val_fraction
  std::optional<std::vector<int>> val_y_;
  std::optional<Matrix> val_emb_;
  std::optional<Matrix> ref_embeddings_;
  std::optional<std::vector<int>> ref_labels_;
  std::map<int, CategoryStats> stats_;
  std::map<int, std::vector<GeneratedSample>> generated_;
  std::map<int, EvalReport> eval_;
  std::optional<RetrainReport> retrain_;
};

/// One-call experiment: every stage through `through`, manifest returned.
nlohmann::json run_experiment(const RunConfig& cfg, const std::filesystem::path& out_dir,
                              RunStage through = RunStage::Retrain, bool fresh = false);

// ---------------------------------------------------------------------------
// Sweeps and ablations

struct SweepRow {
  double value = 0.0;
  int replicate = 0;
  double error_rate = 0.0;
  double conformity = 0.0;
  std::optional<double> frechet;
};

struct SweepResult {
  std::string axis;
  std::vector<SweepRow> rows;
  std::string csv_path;
  std::string plot_path;
  std::string to_csv() const;
};

/// Re-runs generation + eval for each axis value (axis in {s, lambda,
/// val_fraction}), reusing cached model stages, and writes a CSV plus a line
/// plot of the mean metrics. Values are deduplicated and sorted ascending.
SweepResult sweep(const RunConfig& base, const std::string& axis, std::vector<double> values,
                  const std::filesystem::path& out_dir, bool fresh = false);

struct AblationRow {
  std::string arm;
  int replicate = 0;
  double error_rate = 0.0;
  double conformity = 0.0;
  std::optional<double> frechet;
};

struct AblationResult {
  std::vector<AblationRow> rows;
  std::string csv_path;
  std::string plot_path;
  std::string to_csv() const;
  double mean_error(const std::string& arm) const;
  double sd_error(const std::string& arm) const;
};

/// Four arms sharing seeds and trained models: base (no screening, s = 0),
/// screening only, gradient only, both.
AblationResult ablate(const RunConfig& base, const std::filesystem::path& out_dir,
                      bool fresh = false);

}  // namespace riskgen
