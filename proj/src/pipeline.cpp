#include "riskgen/pipeline.hpp"

#include "riskgen/binio.hpp"
#include "riskgen/jsonutil.hpp"
#include "riskgen/plot.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <ctime>
#include <set>
#include <sstream>
#include <stdexcept>

namespace riskgen {

namespace fs = std::filesystem;
using nlohmann::json;
using jsonutil::expect_keys;

namespace {

std::string key_of(const json& j) { return to_hex(fnv1a64(j.dump())); }

template <typename T>
T get_or(const json& j, const char* key, T def) {
  if (j.contains(key)) {
    return j.at(key).get<T>();
  }
  return def;
}

std::string iso_utc_now() {
  std::time_t now = std::time(nullptr);
  char buf[32];
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

void write_text_atomic(const fs::path& path, const std::string& text) {
  binio::write_file_atomic(path.string(), text);
}

void write_json_atomic(const fs::path& path, const json& j) {
  write_text_atomic(path, j.dump(2) + "\n");
}

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

double sd_of(const std::vector<double>& v) {
  if (v.size() < 2) {
    return 0.0;
  }
  double m = mean_of(v);
  double s = 0.0;
  for (double x : v) s += (x - m) * (x - m);
  return std::sqrt(s / static_cast<double>(v.size() - 1));
}

}  // namespace

// ---------------------------------------------------------------------------
// Config JSON

std::vector<DomainGen> DatasetGenConfig::default_domains() {
  return {
      {"base", 0.0, 0.0, false},   {"shift", 1.2, 10.0, false}, {"tilt", 0.8, -15.0, false},
      {"rot45", 1.5, 45.0, true},  {"skew", 2.0, -40.0, true},
  };
}

namespace {

json domains_to_json(const std::vector<DomainGen>& domains) {
  json arr = json::array();
  for (const DomainGen& d : domains) {
    arr.push_back({{"name", d.name},
                   {"offset_scale", d.offset_scale},
                   {"rotation_deg", d.rotation_deg},
                   {"ood", d.ood}});
  }
  return arr;
}

std::vector<DomainGen> domains_from_json(const json& arr) {
  std::vector<DomainGen> out;
  for (const json& jd : arr) {
    expect_keys(jd, {"name", "offset_scale", "rotation_deg", "ood"}, "dataset.domains[]");
    DomainGen d;
    d.name = jsonutil::require(jd, "name", "dataset.domains[]").get<std::string>();
    d.offset_scale = get_or(jd, "offset_scale", 0.0);
    d.rotation_deg = get_or(jd, "rotation_deg", 0.0);
    d.ood = get_or(jd, "ood", false);
    out.push_back(std::move(d));
  }
  return out;
}

json dataset_to_json(const DatasetGenConfig& c) {
  return {{"num_classes", c.num_classes},
          {"dims", c.dims},
          {"per_class_per_domain", c.per_class_per_domain},
          {"class_separation", c.class_separation},
          {"noise_scale", c.noise_scale},
          {"split_train", c.split_train},
          {"split_val", c.split_val},
          {"domains", domains_to_json(c.domains)}};
}

DatasetGenConfig dataset_from_json(const json& j) {
  expect_keys(j,
              {"num_classes", "dims", "per_class_per_domain", "class_separation", "noise_scale",
               "split_train", "split_val", "domains"},
              "dataset");
  DatasetGenConfig c;
  c.num_classes = get_or(j, "num_classes", c.num_classes);
  c.dims = get_or(j, "dims", c.dims);
  c.per_class_per_domain = get_or(j, "per_class_per_domain", c.per_class_per_domain);
  c.class_separation = get_or(j, "class_separation", c.class_separation);
  c.noise_scale = get_or(j, "noise_scale", c.noise_scale);
  c.split_train = get_or(j, "split_train", c.split_train);
  c.split_val = get_or(j, "split_val", c.split_val);
  c.domains = j.contains("domains") ? domains_from_json(j.at("domains"))
                                    : DatasetGenConfig::default_domains();
  return c;
}

json schedule_to_json(const ScheduleConfig& c) {
  return {{"kind", c.kind}, {"steps", c.steps}, {"beta_min", c.beta_min}, {"beta_max", c.beta_max}};
}

ScheduleConfig schedule_from_json(const json& j) {
  expect_keys(j, {"kind", "steps", "beta_min", "beta_max"}, "schedule");
  ScheduleConfig c;
  c.kind = get_or<std::string>(j, "kind", c.kind);
  c.steps = get_or(j, "steps", c.steps);
  c.beta_min = get_or(j, "beta_min", c.beta_min);
  c.beta_max = get_or(j, "beta_max", c.beta_max);
  return c;
}

json embedder_to_json(const EmbedderConfig& c) {
  return {{"dim", c.dim},     {"hidden", c.hidden},           {"epochs", c.epochs},
          {"batch", c.batch}, {"lr", c.lr},                   {"temperature", c.temperature},
          {"norm_reg", c.norm_reg}};
}

EmbedderConfig embedder_from_json(const json& j) {
  expect_keys(j, {"dim", "hidden", "epochs", "batch", "lr", "temperature", "norm_reg"},
              "embedder");
  EmbedderConfig c;
  c.dim = get_or(j, "dim", c.dim);
  c.hidden = get_or(j, "hidden", c.hidden);
  c.epochs = get_or(j, "epochs", c.epochs);
  c.batch = get_or(j, "batch", c.batch);
  c.lr = get_or(j, "lr", c.lr);
  c.temperature = get_or(j, "temperature", c.temperature);
  c.norm_reg = get_or(j, "norm_reg", c.norm_reg);
  return c;
}

json denoiser_to_json(const DenoiserConfig& c) {
  return {{"hidden", c.hidden}, {"time_embed_dim", c.time_embed_dim}, {"p_drop", c.p_drop},
          {"epochs", c.epochs}, {"batch", c.batch},                   {"lr", c.lr}};
}

DenoiserConfig denoiser_from_json(const json& j) {
  expect_keys(j, {"hidden", "time_embed_dim", "p_drop", "epochs", "batch", "lr"}, "denoiser");
  DenoiserConfig c;
  c.hidden = get_or(j, "hidden", c.hidden);
  c.time_embed_dim = get_or(j, "time_embed_dim", c.time_embed_dim);
  c.p_drop = get_or(j, "p_drop", c.p_drop);
  c.epochs = get_or(j, "epochs", c.epochs);
  c.batch = get_or(j, "batch", c.batch);
  c.lr = get_or(j, "lr", c.lr);
  return c;
}

json classifiers_to_json(const ClassifiersConfig& c) {
  return {{"target", c.target}, {"archs", c.archs},
          {"epochs", c.epochs}, {"batch", c.batch},
          {"lr", c.lr},         {"weight_decay", c.weight_decay}};
}

ClassifiersConfig classifiers_from_json(const json& j) {
  expect_keys(j, {"target", "archs", "epochs", "batch", "lr", "weight_decay"}, "classifiers");
  ClassifiersConfig c;
  c.target = get_or<std::string>(j, "target", c.target);
  c.archs = get_or(j, "archs", c.archs);
  c.epochs = get_or(j, "epochs", c.epochs);
  c.batch = get_or(j, "batch", c.batch);
  c.lr = get_or(j, "lr", c.lr);
  c.weight_decay = get_or(j, "weight_decay", c.weight_decay);
  return c;
}

json error_predictor_to_json(const ErrorPredictorConfig& c) {
  return {{"hidden", c.hidden},
          {"epochs", c.epochs},
          {"batch", c.batch},
          {"lr", c.lr},
          {"threshold", c.threshold}};
}

ErrorPredictorConfig error_predictor_from_json(const json& j) {
  expect_keys(j, {"hidden", "epochs", "batch", "lr", "threshold"}, "error_predictor");
  ErrorPredictorConfig c;
  c.hidden = get_or(j, "hidden", c.hidden);
  c.epochs = get_or(j, "epochs", c.epochs);
  c.batch = get_or(j, "batch", c.batch);
  c.lr = get_or(j, "lr", c.lr);
  c.threshold = get_or(j, "threshold", c.threshold);
  return c;
}

json guidance_to_json(const GuidanceConfig& c) {
  return {{"s", c.s},
          {"lambda", c.lambda},
          {"max_screen_attempts", c.max_screen_attempts},
          {"grad_norm_floor", c.grad_norm_floor},
          {"cfg_weight", c.cfg_weight},
          {"stop_grad_through_denoiser", c.stop_grad_through_denoiser},
          {"screening", c.screening},
          {"loss_temperature", c.loss_temperature}};
}

GuidanceConfig guidance_from_json(const json& j) {
  expect_keys(j,
              {"s", "lambda", "max_screen_attempts", "grad_norm_floor", "cfg_weight",
               "stop_grad_through_denoiser", "screening", "loss_temperature"},
              "guidance");
  GuidanceConfig c;
  c.s = get_or(j, "s", c.s);
  c.lambda = get_or(j, "lambda", c.lambda);
  c.max_screen_attempts = get_or(j, "max_screen_attempts", c.max_screen_attempts);
  c.grad_norm_floor = get_or(j, "grad_norm_floor", c.grad_norm_floor);
  c.cfg_weight = get_or(j, "cfg_weight", c.cfg_weight);
  c.stop_grad_through_denoiser = get_or(j, "stop_grad_through_denoiser", c.stop_grad_through_denoiser);
  c.screening = get_or(j, "screening", c.screening);
  c.loss_temperature = get_or(j, "loss_temperature", c.loss_temperature);
  return c;
}

json generation_to_json(const GenerationConfig& c) {
  return {{"per_category", c.per_category},
          {"replicates", c.replicates},
          {"val_fraction", c.val_fraction},
          {"record_trace", c.record_trace}};
}

GenerationConfig generation_from_json(const json& j) {
  expect_keys(j, {"per_category", "replicates", "val_fraction", "record_trace"}, "generation");
  GenerationConfig c;
  c.per_category = get_or(j, "per_category", c.per_category);
  c.replicates = get_or(j, "replicates", c.replicates);
  c.val_fraction = get_or(j, "val_fraction", c.val_fraction);
  c.record_trace = get_or(j, "record_trace", c.record_trace);
  return c;
}

json retrain_to_json(const RetrainConfig& c) {
  return {{"enabled", c.enabled}, {"seeds", c.seeds}};
}

RetrainConfig retrain_from_json(const json& j) {
  expect_keys(j, {"enabled", "seeds"}, "retrain");
  RetrainConfig c;
  c.enabled = get_or(j, "enabled", c.enabled);
  c.seeds = get_or(j, "seeds", c.seeds);
  return c;
}

}  // namespace

SyntheticSpec build_spec(const DatasetGenConfig& cfg, std::uint64_t master_seed) {
  const int K = cfg.num_classes;
  const int D = cfg.dims;
  if (K < 2 || D < 2) {
    throw std::invalid_argument("dataset config: need num_classes >= 2 and dims >= 2");
  }
  if (K > D) {
    throw std::invalid_argument("dataset config: num_classes must not exceed dims");
  }

  // Orthonormalized random directions scaled by the separation, so every pair
  // of class means sits at distance separation * sqrt(2).
  RngStream mean_rng(derive_seed(master_seed, "spec-means"));
  Matrix means(K, D);
  for (int k = 0; k < K; ++k) {
    Vector v = mean_rng.normal_vector(D);
    for (int j = 0; j < k; ++j) {
      v -= means.row(j).dot(v) * means.row(j).transpose();
    }
    double n = v.norm();
    if (n < 1e-8) {
      throw std::runtime_error("build_spec: degenerate class direction draw");
    }
    means.row(k) = (v / n).transpose();
  }
  means *= cfg.class_separation;

  SyntheticSpec spec;
  spec.num_classes = K;
  spec.dims = D;
  spec.class_means = means;
  spec.class_cov_scale = Vector::Constant(K, cfg.noise_scale);
  spec.samples_per_class_per_domain = cfg.per_class_per_domain;
  spec.split_train = cfg.split_train;
  spec.split_val = cfg.split_val;
  spec.seed = derive_seed(master_seed, "dataset-samples");
  const std::vector<DomainGen>& domains =
      cfg.domains.empty() ? DatasetGenConfig::default_domains() : cfg.domains;
  for (std::size_t i = 0; i < domains.size(); ++i) {
    const DomainGen& g = domains[i];
    DomainSpec d;
    d.name = g.name;
    d.rotation = g.rotation_deg * M_PI / 180.0;
    d.ood = g.ood;
    if (g.offset_scale == 0.0) {
      d.offset = Vector::Zero(D);
    } else {
      RngStream rs(derive_seed(master_seed, "spec-domain", {static_cast<std::uint64_t>(i)}));
      Vector dir = rs.normal_vector(D);
      d.offset = (g.offset_scale / dir.norm()) * dir;
    }
    spec.domains.push_back(std::move(d));
  }
  spec.validate();
  return spec;
}

NoiseSchedule build_schedule(const ScheduleConfig& cfg) {
  return build_schedule(schedule_kind_from_string(cfg.kind), cfg.steps,
                        LinearBetaParams{cfg.beta_min, cfg.beta_max});
}

ClassifierConfig ClassifiersConfig::train_config(const std::string& arch) const {
  ClassifierConfig c;
  c.arch = arch;
  c.epochs = epochs;
  c.batch = batch;
  c.lr = lr;
  c.weight_decay = weight_decay;
  return c;
}

void RunConfig::validate() const {
  if (schema_version != 1) {
    throw std::invalid_argument("config: unsupported schema_version " +
                                std::to_string(schema_version));
  }
  if (dataset.num_classes < 2 || dataset.dims < 2 || dataset.per_class_per_domain < 4) {
    throw std::invalid_argument("config: dataset sizes out of range");
  }
  if (dataset.class_separation <= 0.0 || dataset.noise_scale <= 0.0) {
    throw std::invalid_argument("config: dataset scales must be positive");
  }
  if (dataset.split_train <= 0.0 || dataset.split_val <= 0.0 ||
      dataset.split_train + dataset.split_val >= 1.0) {
    throw std::invalid_argument("config: split fractions must be positive and sum below 1");
  }
  const std::vector<DomainGen>& doms =
      dataset.domains.empty() ? DatasetGenConfig::default_domains() : dataset.domains;
  bool has_id = false;
  bool has_ood = false;
  for (const DomainGen& d : doms) {
    (d.ood ? has_ood : has_id) = true;
  }
  if (!has_id) {
    throw std::invalid_argument("config: need at least one in-distribution domain");
  }
  if (retrain.enabled && !has_ood) {
    throw std::invalid_argument("config: retraining needs an out-of-distribution domain");
  }
  if (schedule.steps < 1) {
    throw std::invalid_argument("config: schedule.steps must be at least 1");
  }
  if (classifiers.archs.empty()) {
    throw std::invalid_argument("config: classifiers.archs is empty");
  }
  for (const std::string& a : classifiers.archs) {
    classifier_arch_hidden(a);  // throws on unknown tags
  }
  if (std::find(classifiers.archs.begin(), classifiers.archs.end(), classifiers.target) ==
      classifiers.archs.end()) {
    throw std::invalid_argument("config: classifiers.target must be one of classifiers.archs");
  }
  guidance.validate();
  if (generation.per_category < 1 || generation.replicates < 1) {
    throw std::invalid_argument("config: generation counts must be at least 1");
  }
  if (generation.val_fraction <= 0.0 || generation.val_fraction > 1.0) {
    throw std::invalid_argument("config: generation.val_fraction must be in (0, 1]");
  }
  if (retrain.seeds < 1) {
    throw std::invalid_argument("config: retrain.seeds must be at least 1");
  }
  if (fid_reference != "val" && fid_reference != "train") {
    throw std::invalid_argument("config: fid_reference must be \"val\" or \"train\"");
  }
}

json RunConfig::to_json() const {
  json j;
  j["schema_version"] = schema_version;
  j["master_seed"] = master_seed;
  j["dataset"] = dataset_to_json(dataset);
  j["schedule"] = schedule_to_json(schedule);
  j["embedder"] = embedder_to_json(embedder);
  j["denoiser"] = denoiser_to_json(denoiser);
  j["classifiers"] = classifiers_to_json(classifiers);
  j["error_predictor"] = error_predictor_to_json(error_predictor);
  j["guidance"] = guidance_to_json(guidance);
  j["generation"] = generation_to_json(generation);
  j["retrain"] = retrain_to_json(retrain);
  j["fid_reference"] = fid_reference;
  return j;
}

RunConfig RunConfig::from_json(const json& j) {
  expect_keys(j,
              {"schema_version", "master_seed", "dataset", "schedule", "embedder", "denoiser",
               "classifiers", "error_predictor", "guidance", "generation", "retrain",
               "fid_reference"},
              "config");
  RunConfig c;
  c.schema_version = jsonutil::require(j, "schema_version", "config").get<int>();
  c.master_seed = get_or<std::uint64_t>(j, "master_seed", c.master_seed);
  if (j.contains("dataset")) c.dataset = dataset_from_json(j.at("dataset"));
  if (c.dataset.domains.empty()) c.dataset.domains = DatasetGenConfig::default_domains();
  if (j.contains("schedule")) c.schedule = schedule_from_json(j.at("schedule"));
  if (j.contains("embedder")) c.embedder = embedder_from_json(j.at("embedder"));
  if (j.contains("denoiser")) c.denoiser = denoiser_from_json(j.at("denoiser"));
  if (j.contains("classifiers")) c.classifiers = classifiers_from_json(j.at("classifiers"));
  if (j.contains("error_predictor"))
    c.error_predictor = error_predictor_from_json(j.at("error_predictor"));
  if (j.contains("guidance")) c.guidance = guidance_from_json(j.at("guidance"));
  if (j.contains("generation")) c.generation = generation_from_json(j.at("generation"));
  if (j.contains("retrain")) c.retrain = retrain_from_json(j.at("retrain"));
  c.fid_reference = get_or<std::string>(j, "fid_reference", c.fid_reference);
  c.validate();
  return c;
}

RunConfig RunConfig::load(const fs::path& path) {
  json j;
  try {
    j = json::parse(binio::read_file(path.string()));
  } catch (const json::exception& e) {
    throw std::runtime_error("config: failed to parse " + path.string() + ": " + e.what());
  }
  return from_json(j);
}

std::string RunConfig::hash() const { return key_of(to_json()); }

// ---------------------------------------------------------------------------
// Stages

RunStage run_stage_from_string(const std::string& s) {
  if (s == "data") return RunStage::Data;
  if (s == "train") return RunStage::Train;
  if (s == "generate") return RunStage::Generate;
  if (s == "eval") return RunStage::Eval;
  if (s == "retrain") return RunStage::Retrain;
  throw std::invalid_argument("unknown stage: " + s);
}

std::string to_string(RunStage s) {
  switch (s) {
    case RunStage::Data: return "data";
    case RunStage::Train: return "train";
    case RunStage::Generate: return "generate";
    case RunStage::Eval: return "eval";
    case RunStage::Retrain: return "retrain";
  }
  throw std::logic_error("bad stage");
}

// ---------------------------------------------------------------------------
// Retraining

RetrainReport augment_and_retrain(const LabeledDataset& ds,
                                  const std::vector<GeneratedSample>& generated,
                                  const ClassifiersConfig& cfg, const RetrainConfig& retrain,
                                  std::uint64_t master_seed) {
  Matrix x_train = ds.split_x(Split::Train);
  std::vector<int> y_train = ds.split_labels(Split::Train);
  Matrix x_id = ds.split_x(Split::TestId);
  std::vector<int> y_id = ds.split_labels(Split::TestId);
  Matrix x_ood = ds.split_x(Split::TestOod);
  std::vector<int> y_ood = ds.split_labels(Split::TestOod);
  if (x_id.rows() == 0 || x_ood.rows() == 0) {
    throw std::invalid_argument("augment_and_retrain: empty test split");
  }
  const int K = ds.spec.num_classes;
  ClassifierConfig ccfg = cfg.train_config(cfg.target);

  Matrix x_aug;
  std::vector<int> y_aug;
  if (!generated.empty()) {
    x_aug.resize(x_train.rows() + static_cast<Eigen::Index>(generated.size()), x_train.cols());
    x_aug.topRows(x_train.rows()) = x_train;
    y_aug = y_train;
    for (std::size_t i = 0; i < generated.size(); ++i) {
      if (generated[i].x.size() != x_train.cols()) {
        throw std::invalid_argument("augment_and_retrain: sample dimension mismatch");
      }
      x_aug.row(x_train.rows() + static_cast<Eigen::Index>(i)) = generated[i].x.transpose();
      y_aug.push_back(generated[i].intended_category);
    }
  }

  RetrainReport report;
  report.empty_generated = generated.empty();
  report.num_generated = static_cast<int>(generated.size());
  std::vector<double> id_deltas, ood_deltas;
  for (int i = 0; i < retrain.seeds; ++i) {
    std::uint64_t seed = derive_seed(master_seed, "retrain", {static_cast<std::uint64_t>(i)});
    TargetClassifier base = train_classifier(x_train, y_train, K, ccfg, seed);
    double base_id = base.accuracy(x_id, y_id);
    double base_ood = base.accuracy(x_ood, y_ood);
    report.rows.push_back(RetrainArm{"baseline", i, base_id, base_ood, 0.0, 0.0});
    if (!generated.empty()) {
      TargetClassifier aug = train_classifier(x_aug, y_aug, K, ccfg, seed);
      double aug_id = aug.accuracy(x_id, y_id);
      double aug_ood = aug.accuracy(x_ood, y_ood);
      report.rows.push_back(
          RetrainArm{"augmented", i, aug_id, aug_ood, aug_id - base_id, aug_ood - base_ood});
      id_deltas.push_back(aug_id - base_id);
      ood_deltas.push_back(aug_ood - base_ood);
    }
  }
  report.mean_id_delta = mean_of(id_deltas);
  report.sd_id_delta = sd_of(id_deltas);
  report.mean_ood_delta = mean_of(ood_deltas);
  report.sd_ood_delta = sd_of(ood_deltas);
  return report;
}

json RetrainReport::to_json() const {
  json rows_j = json::array();
  for (const RetrainArm& r : rows) {
    rows_j.push_back({{"arm", r.arm},
                      {"seed_index", r.seed_index},
                      {"id_accuracy", r.id_accuracy},
                      {"ood_accuracy", r.ood_accuracy},
                      {"id_delta", r.id_delta},
                      {"ood_delta", r.ood_delta}});
  }
  return {{"empty_generated", empty_generated},
          {"num_generated", num_generated},
          {"rows", rows_j},
          {"mean_id_delta", mean_id_delta},
          {"sd_id_delta", sd_id_delta},
          {"mean_ood_delta", mean_ood_delta},
          {"sd_ood_delta", sd_ood_delta}};
}

std::string RetrainReport::to_csv() const {
  std::string csv = "arm,seed_index,id_accuracy,ood_accuracy,id_delta,ood_delta\n";
  for (const RetrainArm& r : rows) {
    csv += r.arm + "," + std::to_string(r.seed_index) + "," + fmt_double(r.id_accuracy) + "," +
           fmt_double(r.ood_accuracy) + "," + fmt_double(r.id_delta) + "," +
           fmt_double(r.ood_delta) + "\n";
  }
  return csv;
}

namespace {

RetrainReport retrain_report_from_json(const json& j) {
  RetrainReport r;
  r.empty_generated = j.at("empty_generated").get<bool>();
  r.num_generated = j.at("num_generated").get<int>();
  for (const json& row : j.at("rows")) {
    r.rows.push_back(RetrainArm{row.at("arm").get<std::string>(), row.at("seed_index").get<int>(),
                                row.at("id_accuracy").get<double>(),
                                row.at("ood_accuracy").get<double>(),
                                row.at("id_delta").get<double>(),
                                row.at("ood_delta").get<double>()});
  }
  r.mean_id_delta = j.at("mean_id_delta").get<double>();
  r.sd_id_delta = j.at("sd_id_delta").get<double>();
  r.mean_ood_delta = j.at("mean_ood_delta").get<double>();
  r.sd_ood_delta = j.at("sd_ood_delta").get<double>();
  return r;
}

}  // namespace

// ---------------------------------------------------------------------------
// Runner

Runner::Runner(RunConfig cfg, fs::path out_dir, bool fresh)
    : cfg_(std::move(cfg)), out_(std::move(out_dir)), fresh_(fresh) {
  cfg_.validate();
  if (cfg_.dataset.domains.empty()) {
    cfg_.dataset.domains = DatasetGenConfig::default_domains();
  }
  compute_keys();
}

void Runner::compute_keys() {
  const std::uint64_t master = cfg_.master_seed;
  keys_.data = key_of(spec().to_json());
  keys_.embedder = key_of({{"stage", "embedder"},
                           {"data", keys_.data},
                           {"config", embedder_to_json(cfg_.embedder)},
                           {"seed", derive_seed(master, "train-embedder")}});
  keys_.denoiser = key_of({{"stage", "denoiser"},
                           {"data", keys_.data},
                           {"embedder", keys_.embedder},
                           {"schedule", schedule_to_json(cfg_.schedule)},
                           {"config", denoiser_to_json(cfg_.denoiser)},
                           {"seed", derive_seed(master, "train-denoiser")}});
  for (const std::string& arch : cfg_.classifiers.archs) {
    keys_.classifier[arch] =
        key_of({{"stage", "classifier"},
                {"arch", arch},
                {"data", keys_.data},
                {"config",
                 {{"epochs", cfg_.classifiers.epochs},
                  {"batch", cfg_.classifiers.batch},
                  {"lr", cfg_.classifiers.lr},
                  {"weight_decay", cfg_.classifiers.weight_decay}}},
                {"seed", derive_seed(master, std::string("train-classifier:") + arch)}});
  }
  keys_.error_predictor = key_of({{"stage", "error-predictor"},
                                  {"data", keys_.data},
                                  {"embedder", keys_.embedder},
                                  {"classifier", keys_.classifier.at(cfg_.classifiers.target)},
                                  {"config", error_predictor_to_json(cfg_.error_predictor)},
                                  {"val_fraction", cfg_.generation.val_fraction},
                                  {"seed", derive_seed(master, "fit-error-predictor")}});
  for (int rep = 0; rep < cfg_.generation.replicates; ++rep) {
    std::uint64_t gseed = derive_seed(master, "generate", {static_cast<std::uint64_t>(rep)});
    keys_.generate.push_back(key_of({{"stage", "generate"},
                                     {"denoiser", keys_.denoiser},
                                     {"classifier", keys_.classifier.at(cfg_.classifiers.target)},
                                     {"error_predictor", keys_.error_predictor},
                                     {"embedder", keys_.embedder},
                                     {"guidance", guidance_to_json(cfg_.guidance)},
                                     {"per_category", cfg_.generation.per_category},
                                     {"val_fraction", cfg_.generation.val_fraction},
                                     {"replicate", rep},
                                     {"seed", gseed}}));
    keys_.eval.push_back(key_of({{"stage", "eval"},
                                 {"generate", keys_.generate.back()},
                                 {"data", keys_.data},
                                 {"embedder", keys_.embedder},
                                 {"fid_reference", cfg_.fid_reference},
                                 {"val_fraction", cfg_.generation.val_fraction}}));
  }
  json gen_keys = json::array();
  for (const std::string& k : keys_.generate) gen_keys.push_back(k);
  keys_.retrain = key_of({{"stage", "retrain"},
                          {"data", keys_.data},
                          {"generate", gen_keys},
                          {"config",
                           {{"target", cfg_.classifiers.target},
                            {"epochs", cfg_.classifiers.epochs},
                            {"batch", cfg_.classifiers.batch},
                            {"lr", cfg_.classifiers.lr},
                            {"weight_decay", cfg_.classifiers.weight_decay}}},
                          {"seeds", cfg_.retrain.seeds},
                          {"seed", derive_seed(master, "retrain")}});
}

void Runner::note_stage(const std::string& name, const std::string& key, const fs::path& path,
                        bool reused) {
  StageInfo info;
  info.name = name;
  info.key = key;
  info.path = fs::relative(path, out_).string();
  info.reused = reused;
  stages_.push_back(std::move(info));
}

const SyntheticSpec& Runner::spec() {
  if (!spec_) {
    spec_ = build_spec(cfg_.dataset, cfg_.master_seed);
  }
  return *spec_;
}

const LabeledDataset& Runner::data() {
  if (data_) {
    return *data_;
  }
  fs::path p = out_ / "data" / ("dataset-" + keys_.data + ".bin");
  if (!fresh_ && fs::exists(p)) {
    data_ = load_dataset(p, spec().hash());
    note_stage("data", keys_.data, p, true);
  } else {
    data_ = make_dataset(spec());
    save_dataset(*data_, p);
    note_stage("data", keys_.data, p, false);
  }
  return *data_;
}

const NoiseSchedule& Runner::noise_schedule() {
  if (!schedule_) {
    schedule_ = build_schedule(cfg_.schedule);
  }
  return *schedule_;
}

const JointEmbedder& Runner::embedder() {
  if (embedder_) {
    return *embedder_;
  }
  fs::path dir = out_ / "checkpoints" / ("embedder-" + keys_.embedder);
  if (!fresh_ && fs::exists(dir / "manifest.json")) {
    embedder_ = JointEmbedder::load(dir);
    note_stage("embedder", keys_.embedder, dir, true);
  } else {
    const LabeledDataset& ds = data();
    embedder_ = train_embedder(ds.split_x(Split::Train), ds.split_labels(Split::Train),
                               ds.spec.num_classes, cfg_.embedder,
                               derive_seed(cfg_.master_seed, "train-embedder"));
    embedder_->save(dir, derive_seed(cfg_.master_seed, "train-embedder"), keys_.embedder);
    note_stage("embedder", keys_.embedder, dir, false);
  }
  return *embedder_;
}

const NoisePredictor& Runner::denoiser() {
  if (denoiser_) {
    return *denoiser_;
  }
  fs::path dir = out_ / "checkpoints" / ("denoiser-" + keys_.denoiser);
  if (!fresh_ && fs::exists(dir / "manifest.json")) {
    denoiser_ = NoisePredictor::load(dir);
    note_stage("denoiser", keys_.denoiser, dir, true);
  } else {
    const LabeledDataset& ds = data();
    denoiser_ = train_denoiser(ds.split_x(Split::Train), ds.split_labels(Split::Train), embedder(),
                               noise_schedule(), cfg_.denoiser,
                               derive_seed(cfg_.master_seed, "train-denoiser"));
    denoiser_->save(dir, derive_seed(cfg_.master_seed, "train-denoiser"), keys_.denoiser);
    note_stage("denoiser", keys_.denoiser, dir, false);
  }
  return *denoiser_;
}

const TargetClassifier& Runner::classifier(const std::string& arch) {
  auto it = classifiers_.find(arch);
  if (it != classifiers_.end()) {
    return it->second;
  }
  auto key_it = keys_.classifier.find(arch);
  if (key_it == keys_.classifier.end()) {
    throw std::invalid_argument("classifier: arch not in config: " + arch);
  }
  const std::string& key = key_it->second;
  fs::path dir = out_ / "checkpoints" / ("classifier-" + arch + "-" + key);
  std::uint64_t seed = derive_seed(cfg_.master_seed, std::string("train-classifier:") + arch);
  TargetClassifier model;
  bool reused = false;
  if (!fresh_ && fs::exists(dir / "manifest.json")) {
    model = TargetClassifier::load(dir);
    reused = true;
  } else {
    const LabeledDataset& ds = data();
    model = train_classifier(ds.split_x(Split::Train), ds.split_labels(Split::Train),
                             ds.spec.num_classes, cfg_.classifiers.train_config(arch), seed);
    model.save(dir, seed, key);
  }
  note_stage("classifier:" + arch, key, dir, reused);
  return classifiers_.emplace(arch, std::move(model)).first->second;
}

const TargetClassifier& Runner::target_classifier() {
  return classifier(cfg_.classifiers.target);
}

void Runner::build_val_subset() {
  if (ref_embeddings_ && ref_labels_) {
    return;
  }
  const LabeledDataset& ds = data();
  Matrix xv = ds.split_x(Split::Val);
  std::vector<int> yv = ds.split_labels(Split::Val);
  const std::size_t n = yv.size();
  std::vector<std::size_t> idx(n);
  for (std::size_t i = 0; i < n; ++i) idx[i] = i;
  RngStream sub_rng(derive_seed(cfg_.master_seed, "val-subset"));
  sub_rng.shuffle(idx);
  std::size_t keep = static_cast<std::size_t>(
      std::floor(cfg_.generation.val_fraction * static_cast<double>(n)));
  keep = std::max<std::size_t>(keep, 1);
  Matrix xs(static_cast<Eigen::Index>(keep), xv.cols());
  std::vector<int> ys(keep);
  for (std::size_t i = 0; i < keep; ++i) {
    xs.row(static_cast<Eigen::Index>(i)) = xv.row(static_cast<Eigen::Index>(idx[i]));
    ys[i] = yv[idx[i]];
  }
  val_x_ = std::move(xs);
  val_y_ = std::move(ys);
  val_emb_ = embedder().embed_image(*val_x_);
  if (cfg_.fid_reference == "train") {
    ref_embeddings_ = embedder().embed_image(ds.split_x(Split::Train));
    ref_labels_ = ds.split_labels(Split::Train);
  } else {
    ref_embeddings_ = *val_emb_;
    ref_labels_ = *val_y_;
  }
}

const Matrix& Runner::ref_embeddings() {
  build_val_subset();
  return *ref_embeddings_;
}

const std::vector<int>& Runner::ref_labels() {
  build_val_subset();
  return *ref_labels_;
}

const CategoryStats& Runner::category_stats(int category) {
  auto it = stats_.find(category);
  if (it != stats_.end()) {
    return it->second;
  }
  build_val_subset();
  CategoryStats st = estimate_category_stats(*val_emb_, *val_y_, category);
  return stats_.emplace(category, std::move(st)).first->second;
}

const ErrorPredictor& Runner::error_predictor() {
  if (error_predictor_) {
    return *error_predictor_;
  }
  fs::path dir = out_ / "checkpoints" / ("error-predictor-" + keys_.error_predictor);
  std::uint64_t seed = derive_seed(cfg_.master_seed, "fit-error-predictor");
  if (!fresh_ && fs::exists(dir / "manifest.json")) {
    error_predictor_ = ErrorPredictor::load(dir);
    note_stage("error_predictor", keys_.error_predictor, dir, true);
  } else {
    build_val_subset();
    std::vector<std::uint8_t> errors =
        compute_model_errors(target_classifier(), *val_x_, *val_y_);
    error_predictor_ = fit_error_predictor(*val_emb_, errors, cfg_.error_predictor, seed);
    error_predictor_->save(dir, seed, keys_.error_predictor);
    note_stage("error_predictor", keys_.error_predictor, dir, false);
  }
  return *error_predictor_;
}

const std::vector<GeneratedSample>& Runner::generated(int replicate) {
  if (replicate < 0 || replicate >= cfg_.generation.replicates) {
    throw std::invalid_argument("generated: replicate out of range");
  }
  auto it = generated_.find(replicate);
  if (it != generated_.end()) {
    return it->second;
  }
  const std::string& key = keys_.generate[static_cast<std::size_t>(replicate)];
  fs::path bin = out_ / "samples" / ("gen-" + key + ".bin");
  fs::path csv = out_ / "samples" / ("gen-" + key + ".csv");
  if (!fresh_ && fs::exists(bin)) {
    auto samples = load_samples(bin);
    note_stage("generate:" + std::to_string(replicate), key, bin, true);
    return generated_.emplace(replicate, std::move(samples)).first->second;
  }

  ModelBundle bundle;
  static const Decoder decoder;
  bundle.denoiser = &denoiser();
  bundle.decoder = &decoder;
  bundle.target = &target_classifier();
  bundle.embedder = &embedder();
  const ErrorPredictor& err = error_predictor();
  std::uint64_t seed =
      derive_seed(cfg_.master_seed, "generate", {static_cast<std::uint64_t>(replicate)});

  std::vector<GeneratedSample> samples;
  for (int cat = 0; cat < spec().num_classes; ++cat) {
    std::vector<GeneratedSample> part =
        generate(cat, cfg_.generation.per_category, bundle, category_stats(cat), err,
                 noise_schedule(), cfg_.guidance, seed, cfg_.generation.record_trace);
    for (GeneratedSample& s : part) {
      samples.push_back(std::move(s));
    }
  }
  json header = {{"key", key},
                 {"replicate", replicate},
                 {"seed", seed},
                 {"guidance", guidance_to_json(cfg_.guidance)},
                 {"per_category", cfg_.generation.per_category}};
  save_samples(samples, header, bin, csv);
  note_stage("generate:" + std::to_string(replicate), key, bin, false);
  return generated_.emplace(replicate, std::move(samples)).first->second;
}

std::vector<GeneratedSample> Runner::generated_pooled() {
  std::vector<GeneratedSample> pooled;
  for (int rep = 0; rep < cfg_.generation.replicates; ++rep) {
    const std::vector<GeneratedSample>& part = generated(rep);
    pooled.insert(pooled.end(), part.begin(), part.end());
  }
  return pooled;
}

const EvalReport& Runner::eval_report(int replicate) {
  auto it = eval_.find(replicate);
  if (it != eval_.end()) {
    return it->second;
  }
  const std::string& key = keys_.eval[static_cast<std::size_t>(replicate)];
  fs::path path = out_ / "reports" / ("eval-" + key + ".json");
  BayesOracle oracle(spec(), DomainScope::Id);
  json snapshot = {{"replicate", replicate},
                   {"guidance", guidance_to_json(cfg_.guidance)},
                   {"per_category", cfg_.generation.per_category},
                   {"val_fraction", cfg_.generation.val_fraction},
                   {"fid_reference", cfg_.fid_reference},
                   {"generate_key", keys_.generate[static_cast<std::size_t>(replicate)]}};
  EvalReport report = evaluate_samples(generated(replicate), target_classifier(), embedder(),
                                       oracle, ref_embeddings(), ref_labels(), snapshot);
  bool reused = !fresh_ && fs::exists(path);
  if (!reused) {
    write_json_atomic(path, report.to_json());
  }
  note_stage("eval:" + std::to_string(replicate), key, path, reused);
  return eval_.emplace(replicate, std::move(report)).first->second;
}

nlohmann::json Runner::run(RunStage through) {
  const int rank = static_cast<int>(through);
  data();
  if (rank >= static_cast<int>(RunStage::Train)) {
    embedder();
    denoiser();
    for (const std::string& arch : cfg_.classifiers.archs) {
      classifier(arch);
    }
    error_predictor();
  }
  if (rank >= static_cast<int>(RunStage::Generate)) {
    for (int rep = 0; rep < cfg_.generation.replicates; ++rep) {
      generated(rep);
    }
  }

  json metrics;
  if (rank >= static_cast<int>(RunStage::Eval)) {
    std::vector<double> errs, confs, freds;
    json reps = json::array();
    for (int rep = 0; rep < cfg_.generation.replicates; ++rep) {
      const EvalReport& r = eval_report(rep);
      json jr = {{"replicate", rep},
                 {"error_rate", r.error_rate},
                 {"conformity", r.conformity}};
      if (r.frechet) {
        jr["frechet"] = r.frechet->value;
        freds.push_back(r.frechet->value);
      } else {
        jr["frechet"] = nullptr;
      }
      reps.push_back(jr);
      errs.push_back(r.error_rate);
      confs.push_back(r.conformity);
    }
    json agg = {{"replicates", reps},
                {"mean",
                 {{"error_rate", mean_of(errs)},
                  {"conformity", mean_of(confs)},
                  {"frechet", freds.empty() ? json(nullptr) : json(mean_of(freds))}}},
                {"sd",
                 {{"error_rate", sd_of(errs)},
                  {"conformity", sd_of(confs)},
                  {"frechet", freds.empty() ? json(nullptr) : json(sd_of(freds))}}}};
    json eval_keys = json::array();
    for (const std::string& k : keys_.eval) eval_keys.push_back(k);
    std::string agg_key = key_of({{"stage", "eval-aggregate"}, {"eval", eval_keys}});
    fs::path agg_path = out_ / "reports" / ("eval-aggregate-" + agg_key + ".json");
    bool agg_reused = !fresh_ && fs::exists(agg_path);
    if (!agg_reused) {
      write_json_atomic(agg_path, agg);
    }
    note_stage("eval:aggregate", agg_key, agg_path, agg_reused);
    metrics["eval"] = agg;

    std::vector<std::pair<std::string, const TargetClassifier*>> models;
    for (const std::string& arch : cfg_.classifiers.archs) {
      models.emplace_back(arch, &classifier(arch));
    }
    TransferMatrix tm = transfer_matrix(generated_pooled(), models, cfg_.classifiers.target);
    fs::path tm_path = out_ / "reports" / ("transfer-" + agg_key + ".csv");
    bool tm_reused = !fresh_ && fs::exists(tm_path);
    if (!tm_reused) {
      write_text_atomic(tm_path, tm.to_csv());
    }
    note_stage("eval:transfer", agg_key, tm_path, tm_reused);
    json tm_json = json::array();
    for (const TransferRow& row : tm.rows) {
      tm_json.push_back({{"model_id", row.model_id},
                         {"is_source", row.is_source},
                         {"error_rate", row.error_rate}});
    }
    metrics["transfer"] = tm_json;

    // Per-category chart of the first replicate.
    const EvalReport& r0 = eval_report(0);
    std::vector<std::string> groups;
    BarSeries err_bars{"error_rate", {}, {}};
    BarSeries conf_bars{"conformity", {}, {}};
    std::string percat_csv = "category,count,error_rate,conformity,frechet,frechet_diagonal\n";
    for (const CategoryMetrics& c : r0.per_category) {
      groups.push_back(std::to_string(c.category));
      err_bars.values.push_back(c.error_rate);
      conf_bars.values.push_back(c.conformity);
      percat_csv += std::to_string(c.category) + "," + std::to_string(c.count) + "," +
                    fmt_double(c.error_rate) + "," + fmt_double(c.conformity) + ",";
      if (c.frechet) {
        percat_csv += fmt_double(c.frechet->value) + "," + (c.frechet->diagonal ? "1" : "0");
      } else {
        percat_csv += ",";
      }
      percat_csv += "\n";
    }
    fs::path percat_csv_path =
        out_ / "plots" / ("per-category-" + keys_.eval.front() + ".csv");
    fs::path percat_png_path =
        out_ / "plots" / ("per-category-" + keys_.eval.front() + ".png");
    bool percat_reused = !fresh_ && fs::exists(percat_csv_path) && fs::exists(percat_png_path);
    if (!percat_reused) {
      write_text_atomic(percat_csv_path, percat_csv);
      write_bar_chart(percat_png_path, "Per-category metrics (replicate 0)", "rate", groups,
                      {err_bars, conf_bars});
    }
    note_stage("eval:per-category-plot", keys_.eval.front(), percat_png_path, percat_reused);
  }

  if (rank >= static_cast<int>(RunStage::Retrain) && cfg_.retrain.enabled) {
    fs::path rj = out_ / "reports" / ("retrain-" + keys_.retrain + ".json");
    fs::path rc = out_ / "reports" / ("retrain-" + keys_.retrain + ".csv");
    if (!retrain_) {
      if (!fresh_ && fs::exists(rj)) {
        retrain_ = retrain_report_from_json(json::parse(binio::read_file(rj.string())));
        note_stage("retrain", keys_.retrain, rj, true);
      } else {
        retrain_ = augment_and_retrain(data(), generated_pooled(), cfg_.classifiers, cfg_.retrain,
                                       cfg_.master_seed);
        write_json_atomic(rj, retrain_->to_json());
        write_text_atomic(rc, retrain_->to_csv());
        note_stage("retrain", keys_.retrain, rj, false);
      }
    }
    metrics["retrain"] = {{"empty_generated", retrain_->empty_generated},
                          {"num_generated", retrain_->num_generated},
                          {"mean_id_delta", retrain_->mean_id_delta},
                          {"sd_id_delta", retrain_->sd_id_delta},
                          {"mean_ood_delta", retrain_->mean_ood_delta},
                          {"sd_ood_delta", retrain_->sd_ood_delta}};
  }

  json stages_j = json::array();
  for (const StageInfo& s : stages_) {
    stages_j.push_back(
        {{"name", s.name}, {"key", s.key}, {"path", s.path}, {"reused", s.reused}});
  }
  json manifest = {{"schema_version", cfg_.schema_version},
                   {"config_hash", cfg_.hash()},
                   {"master_seed", cfg_.master_seed},
                   {"created_utc", iso_utc_now()},
                   {"through", to_string(through)},
                   {"stages", stages_j},
                   {"metrics", metrics}};
  write_json_atomic(out_ / "config.json", cfg_.to_json());
  write_json_atomic(out_ / "manifest.json", manifest);
  return manifest;
}

nlohmann::json run_experiment(const RunConfig& cfg, const fs::path& out_dir, RunStage through,
                              bool fresh) {
  Runner runner(cfg, out_dir, fresh);
  return runner.run(through);
}

// ---------------------------------------------------------------------------
// Sweeps and ablations

std::string SweepResult::to_csv() const {
  std::string csv = "axis,value,replicate,error_rate,conformity,frechet\n";
  for (const SweepRow& r : rows) {
    csv += axis + "," + fmt_double(r.value) + "," + std::to_string(r.replicate) + "," +
           fmt_double(r.error_rate) + "," + fmt_double(r.conformity) + ",";
    if (r.frechet) {
      csv += fmt_double(*r.frechet);
    }
    csv += "\n";
  }
  return csv;
}

namespace {

void apply_axis(RunConfig& cfg, const std::string& axis, double value) {
  if (axis == "s") {
    cfg.guidance.s = value;
  } else if (axis == "lambda") {
    cfg.guidance.lambda = value;
  } else if (axis == "val_fraction") {
    cfg.generation.val_fraction = value;
  } else {
    throw std::invalid_argument("sweep: unknown axis " + axis +
                                " (expected s, lambda, or val_fraction)");
  }
}

}  // namespace

SweepResult sweep(const RunConfig& base, const std::string& axis, std::vector<double> values,
                  const fs::path& out_dir, bool fresh) {
  if (values.empty()) {
    throw std::invalid_argument("sweep: no values given");
  }
  std::sort(values.begin(), values.end());
  values.erase(std::unique(values.begin(), values.end()), values.end());

  SweepResult result;
  result.axis = axis;
  std::vector<double> mean_err, mean_conf;
  for (double v : values) {
    RunConfig cfg = base;
    apply_axis(cfg, axis, v);
    cfg.validate();
    Runner runner(cfg, out_dir, fresh);
    runner.run(RunStage::Eval);
    std::vector<double> errs, confs;
    for (int rep = 0; rep < cfg.generation.replicates; ++rep) {
      const EvalReport& r = runner.eval_report(rep);
      SweepRow row;
      row.value = v;
      row.replicate = rep;
      row.error_rate = r.error_rate;
      row.conformity = r.conformity;
      if (r.frechet) {
        row.frechet = r.frechet->value;
      }
      result.rows.push_back(row);
      errs.push_back(r.error_rate);
      confs.push_back(r.conformity);
    }
    mean_err.push_back(mean_of(errs));
    mean_conf.push_back(mean_of(confs));
  }

  json vals_j = json::array();
  for (double v : values) vals_j.push_back(v);
  std::string key =
      key_of({{"sweep", axis}, {"values", vals_j}, {"config", base.hash()}});
  fs::path csv_path = out_dir / "reports" / ("sweep-" + axis + "-" + key + ".csv");
  fs::path png_path = out_dir / "plots" / ("sweep-" + axis + "-" + key + ".png");
  write_text_atomic(csv_path, result.to_csv());
  write_line_plot(png_path, "Sweep over " + axis, axis, "rate",
                  {PlotSeries{"error_rate", values, mean_err},
                   PlotSeries{"conformity", values, mean_conf}});
  result.csv_path = csv_path.string();
  result.plot_path = png_path.string();
  return result;
}

std::string AblationResult::to_csv() const {
  std::string csv = "arm,replicate,error_rate,conformity,frechet\n";
  for (const AblationRow& r : rows) {
    csv += r.arm + "," + std::to_string(r.replicate) + "," + fmt_double(r.error_rate) + "," +
           fmt_double(r.conformity) + ",";
    if (r.frechet) {
      csv += fmt_double(*r.frechet);
    }
    csv += "\n";
  }
  return csv;
}

double AblationResult::mean_error(const std::string& arm) const {
  std::vector<double> v;
  for (const AblationRow& r : rows) {
    if (r.arm == arm) {
      v.push_back(r.error_rate);
    }
  }
  if (v.empty()) {
    throw std::invalid_argument("ablation: no rows for arm " + arm);
  }
  return mean_of(v);
}

double AblationResult::sd_error(const std::string& arm) const {
  std::vector<double> v;
  for (const AblationRow& r : rows) {
    if (r.arm == arm) {
      v.push_back(r.error_rate);
    }
  }
  return sd_of(v);
}

AblationResult ablate(const RunConfig& base, const fs::path& out_dir, bool fresh) {
  struct Arm {
    std::string name;
    bool gradient;
    bool screening;
  };
  const std::vector<Arm> arms = {{"base", false, false},
                                 {"screening", false, true},
                                 {"gradient", true, false},
                                 {"both", true, true}};

  AblationResult result;
  std::vector<std::string> labels;
  BarSeries err_bars{"error_rate", {}, {}};
  BarSeries conf_bars{"conformity", {}, {}};
  for (const Arm& arm : arms) {
    RunConfig cfg = base;
    cfg.guidance.s = arm.gradient ? base.guidance.s : 0.0;
    cfg.guidance.screening = arm.screening;
    Runner runner(cfg, out_dir, fresh);
    runner.run(RunStage::Eval);
    std::vector<double> errs, confs;
    for (int rep = 0; rep < cfg.generation.replicates; ++rep) {
      const EvalReport& r = runner.eval_report(rep);
      AblationRow row;
      row.arm = arm.name;
      row.replicate = rep;
      row.error_rate = r.error_rate;
      row.conformity = r.conformity;
      if (r.frechet) {
        row.frechet = r.frechet->value;
      }
      result.rows.push_back(row);
      errs.push_back(r.error_rate);
      confs.push_back(r.conformity);
    }
    labels.push_back(arm.name);
    err_bars.values.push_back(mean_of(errs));
    err_bars.sd.push_back(sd_of(errs));
    conf_bars.values.push_back(mean_of(confs));
    conf_bars.sd.push_back(sd_of(confs));
  }

  std::string key = key_of({{"ablation", base.hash()}});
  fs::path csv_path = out_dir / "reports" / ("ablation-" + key + ".csv");
  fs::path png_path = out_dir / "plots" / ("ablation-" + key + ".png");
  write_text_atomic(csv_path, result.to_csv());
  write_bar_chart(png_path, "Component ablation", "rate", labels, {err_bars, conf_bars});
  result.csv_path = csv_path.string();
  result.plot_path = png_path.string();
  return result;
}

}  // namespace riskgen
