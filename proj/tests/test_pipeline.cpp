#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "riskgen/binio.hpp"
#include "riskgen/pipeline.hpp"
#include "riskgen/rng.hpp"

#include <cmath>
#include <filesystem>
#include <set>
#include <string>
#include <vector>

using namespace riskgen;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config() {
  RunConfig cfg;
  cfg.master_seed = 9;
  cfg.dataset.num_classes = 3;
  cfg.dataset.dims = 4;
  cfg.dataset.per_class_per_domain = 40;
  cfg.dataset.domains = {DomainGen{"base", 0.0, 0.0, false}, DomainGen{"shift", 0.4, 10.0, false},
                         DomainGen{"far", 1.2, 40.0, true}};
  cfg.schedule.steps = 10;
  cfg.embedder.dim = 5;
  cfg.embedder.hidden = {32};
  cfg.embedder.epochs = 8;
  cfg.denoiser.hidden = {32};
  cfg.denoiser.epochs = 8;
  cfg.classifiers.archs = {"linear", "mlp_s"};
  cfg.classifiers.target = "mlp_s";
  cfg.classifiers.epochs = 8;
  cfg.error_predictor.epochs = 8;
  cfg.generation.per_category = 4;
  cfg.generation.replicates = 2;
  cfg.retrain.seeds = 2;
  return cfg;
}

fs::path fresh_dir(const std::string& leaf) {
  fs::path p = fs::temp_directory_path() / leaf;
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

const StageInfo& find_stage(const std::vector<StageInfo>& stages, const std::string& name) {
  for (const StageInfo& s : stages) {
    if (s.name == name) return s;
  }
  FAIL("stage not found: " << name);
  static StageInfo dummy;
  return dummy;
}

std::set<std::string> relative_files(const fs::path& root) {
  std::set<std::string> out;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (e.is_regular_file()) out.insert(fs::relative(e.path(), root).string());
  }
  return out;
}

}  // namespace

TEST_CASE("run config round-trips through json with a stable hash") {
  RunConfig cfg = tiny_config();
  nlohmann::json j = cfg.to_json();
  RunConfig back = RunConfig::from_json(j);
  CHECK(back.hash() == cfg.hash());
  CHECK(back.master_seed == 9);
  CHECK(back.dataset.domains.size() == 3);
  CHECK(back.guidance.s == cfg.guidance.s);
  CHECK(back.generation.replicates == 2);

  RunConfig other = cfg;
  other.master_seed = 10;
  CHECK(other.hash() != cfg.hash());
}

TEST_CASE("run config rejects unknown keys at every level") {
  nlohmann::json j = tiny_config().to_json();
  j["bogus"] = 1;
  CHECK_THROWS_AS(RunConfig::from_json(j), std::invalid_argument);

  j = tiny_config().to_json();
  j["dataset"]["bogus"] = 1;
  CHECK_THROWS_AS(RunConfig::from_json(j), std::invalid_argument);

  j = tiny_config().to_json();
  j["guidance"]["bogus"] = 1;
  CHECK_THROWS_AS(RunConfig::from_json(j), std::invalid_argument);

  j = tiny_config().to_json();
  j["schema_version"] = 999;
  CHECK_THROWS_AS(RunConfig::from_json(j), std::invalid_argument);

  j = tiny_config().to_json();
  j.erase("schema_version");
  CHECK_THROWS_AS(RunConfig::from_json(j), std::invalid_argument);
}

TEST_CASE("run config validation catches structural mistakes") {
  RunConfig cfg = tiny_config();
  cfg.classifiers.target = "mlp_w";  // not in archs
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

  cfg = tiny_config();
  cfg.generation.val_fraction = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

  cfg = tiny_config();
  cfg.dataset.per_class_per_domain = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

  cfg = tiny_config();
  cfg.dataset.noise_scale = 0.0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

  cfg = tiny_config();
  cfg.fid_reference = "test";
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);

  cfg = tiny_config();
  cfg.dataset.domains.pop_back();  // drops the only ood domain
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg.retrain.enabled = false;
  cfg.validate();
}

TEST_CASE("run config loads from a file") {
  RunConfig cfg = tiny_config();
  fs::path p = fs::temp_directory_path() / "riskgen_cfg_test.json";
  binio::write_file_atomic(p.string(), cfg.to_json().dump(2));
  RunConfig back = RunConfig::load(p);
  CHECK(back.hash() == cfg.hash());
  fs::remove(p);

  binio::write_file_atomic(p.string(), "{not json");
  CHECK_THROWS_AS(RunConfig::load(p), std::runtime_error);
  fs::remove(p);
}

TEST_CASE("build_spec scales equidistant class means deterministically") {
  DatasetGenConfig dc = tiny_config().dataset;
  SyntheticSpec a = build_spec(dc, 5);
  SyntheticSpec b = build_spec(dc, 5);
  SyntheticSpec c = build_spec(dc, 6);
  CHECK((a.class_means - b.class_means).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.class_means - c.class_means).cwiseAbs().maxCoeff() > 0.0);

  double want = dc.class_separation * std::sqrt(2.0);
  for (int i = 0; i < dc.num_classes; ++i) {
    CHECK(a.class_means.row(i).norm() == doctest::Approx(dc.class_separation).epsilon(1e-9));
    for (int k = i + 1; k < dc.num_classes; ++k) {
      double d = (a.class_means.row(i) - a.class_means.row(k)).norm();
      CHECK(d == doctest::Approx(want).epsilon(1e-9));
    }
  }
  CHECK(a.domains.size() == 3);
  CHECK(a.domains[2].ood);

  dc.num_classes = 5;
  CHECK_THROWS_AS(build_spec(dc, 5), std::invalid_argument);
}

TEST_CASE("schedule config resolves kind and endpoints") {
  ScheduleConfig sc;
  sc.steps = 10;
  NoiseSchedule s = build_schedule(sc);
  CHECK(s.steps() == 10);
  CHECK(1.0 - s.alpha(1) == doctest::Approx(sc.beta_min));
  CHECK(1.0 - s.alpha(10) == doctest::Approx(sc.beta_max));

  sc.kind = "cosine";
  CHECK_THROWS_AS(build_schedule(sc), std::invalid_argument);
}

TEST_CASE("run stages map to and from names") {
  for (RunStage st : {RunStage::Data, RunStage::Train, RunStage::Generate, RunStage::Eval,
                      RunStage::Retrain}) {
    CHECK(run_stage_from_string(to_string(st)) == st);
  }
  CHECK_THROWS_AS(run_stage_from_string("deploy"), std::invalid_argument);
}

TEST_CASE("augment_and_retrain reports per-seed deltas") {
  RunConfig cfg = tiny_config();
  LabeledDataset ds = make_dataset(build_spec(cfg.dataset, cfg.master_seed));

  std::vector<GeneratedSample> gen;
  Matrix xt = ds.split_x(Split::Train);
  std::vector<int> yt = ds.split_labels(Split::Train);
  for (int i = 0; i < 12; ++i) {
    GeneratedSample s;
    s.x = xt.row(i).transpose();
    s.intended_category = yt[static_cast<std::size_t>(i)];
    gen.push_back(s);
  }

  RetrainReport rep = augment_and_retrain(ds, gen, cfg.classifiers, cfg.retrain, 77);
  CHECK_FALSE(rep.empty_generated);
  CHECK(rep.num_generated == 12);
  REQUIRE(rep.rows.size() == 4);  // 2 seeds x 2 arms

  std::vector<double> id_deltas, ood_deltas;
  for (int seed = 0; seed < 2; ++seed) {
    const RetrainArm& base = rep.rows[static_cast<std::size_t>(2 * seed)];
    const RetrainArm& aug = rep.rows[static_cast<std::size_t>(2 * seed + 1)];
    CHECK(base.arm == "baseline");
    CHECK(aug.arm == "augmented");
    CHECK(base.seed_index == seed);
    CHECK(aug.seed_index == seed);
    CHECK(base.id_delta == 0.0);
    CHECK(base.ood_delta == 0.0);
    CHECK(aug.id_delta == doctest::Approx(aug.id_accuracy - base.id_accuracy).epsilon(1e-12));
    CHECK(aug.ood_delta == doctest::Approx(aug.ood_accuracy - base.ood_accuracy).epsilon(1e-12));
    id_deltas.push_back(aug.id_delta);
    ood_deltas.push_back(aug.ood_delta);
  }
  double mean_id = (id_deltas[0] + id_deltas[1]) / 2.0;
  CHECK(rep.mean_id_delta == doctest::Approx(mean_id).epsilon(1e-12));
  double mean_ood = (ood_deltas[0] + ood_deltas[1]) / 2.0;
  CHECK(rep.mean_ood_delta == doctest::Approx(mean_ood).epsilon(1e-12));

  // Same seeds, identical run: deterministic.
  RetrainReport rep2 = augment_and_retrain(ds, gen, cfg.classifiers, cfg.retrain, 77);
  CHECK(rep2.rows[1].id_accuracy == rep.rows[1].id_accuracy);

  RetrainReport empty = augment_and_retrain(ds, {}, cfg.classifiers, cfg.retrain, 77);
  CHECK(empty.empty_generated);
  CHECK(empty.num_generated == 0);
  CHECK(empty.rows.size() == 2);  // baseline rows only
  CHECK(empty.mean_id_delta == 0.0);

  GeneratedSample bad;
  bad.x = Vector::Zero(2);
  bad.intended_category = 0;
  CHECK_THROWS_AS(augment_and_retrain(ds, {bad}, cfg.classifiers, cfg.retrain, 77),
                  std::invalid_argument);

  CHECK(rep.to_csv().rfind("arm,seed_index,id_accuracy,ood_accuracy,id_delta,ood_delta\n", 0) ==
        0);
}

TEST_CASE("runner caches stages content-addressed and reuses them") {
  RunConfig cfg = tiny_config();
  fs::path dir = fresh_dir("riskgen_runner_a");

  Runner r1(cfg, dir);
  nlohmann::json manifest = r1.run(RunStage::Retrain);
  CHECK(manifest["config_hash"] == cfg.hash());
  for (const StageInfo& s : r1.stages()) {
    CHECK_FALSE(s.reused);
  }
  CHECK(r1.generated(0).size() == 3 * 4);
  CHECK(r1.generated_pooled().size() == 2 * 3 * 4);
  CHECK(r1.eval_report(0).sample_count == 12);
  CHECK_THROWS_AS(r1.generated(5), std::invalid_argument);

  Runner r2(cfg, dir);
  r2.run(RunStage::Retrain);
  for (const StageInfo& s : r2.stages()) {
    CHECK(s.reused);
  }
  CHECK(r2.generated(0).size() == r1.generated(0).size());

  // Changing only guidance leaves data and model stages cached.
  RunConfig cfg2 = cfg;
  cfg2.guidance.s = 3.0;
  Runner r3(cfg2, dir);
  r3.run(RunStage::Eval);
  CHECK(find_stage(r3.stages(), "data").reused);
  CHECK(find_stage(r3.stages(), "embedder").reused);
  CHECK(find_stage(r3.stages(), "denoiser").reused);
  CHECK(find_stage(r3.stages(), "classifier:mlp_s").reused);
  CHECK(find_stage(r3.stages(), "error_predictor").reused);
  CHECK_FALSE(find_stage(r3.stages(), "generate:0").reused);
  CHECK_FALSE(find_stage(r3.stages(), "eval:0").reused);

  // fresh = true recomputes everything in place.
  Runner r4(cfg, dir, true);
  r4.run(RunStage::Data);
  CHECK_FALSE(find_stage(r4.stages(), "data").reused);
}

TEST_CASE("two fresh runs produce byte-identical outputs") {
  RunConfig cfg = tiny_config();
  fs::path d1 = fresh_dir("riskgen_runner_b1");
  fs::path d2 = fresh_dir("riskgen_runner_b2");
  run_experiment(cfg, d1, RunStage::Retrain);
  run_experiment(cfg, d2, RunStage::Retrain);

  std::set<std::string> f1 = relative_files(d1);
  std::set<std::string> f2 = relative_files(d2);
  REQUIRE(f1 == f2);
  REQUIRE(f1.count("config.json") == 1);
  REQUIRE(f1.count("manifest.json") == 1);
  for (const std::string& rel : f1) {
    if (rel == "manifest.json") continue;  // carries a creation timestamp
    CHECK_MESSAGE(binio::read_file((d1 / rel).string()) == binio::read_file((d2 / rel).string()),
                  rel);
  }
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("val_fraction subsamples the reference split") {
  RunConfig cfg = tiny_config();
  cfg.generation.val_fraction = 0.5;
  fs::path dir = fresh_dir("riskgen_runner_c");
  Runner r(cfg, dir);
  std::size_t n_val = r.data().split_labels(Split::Val).size();
  std::size_t keep = std::max<std::size_t>(1, static_cast<std::size_t>(
                                                  std::floor(0.5 * static_cast<double>(n_val))));
  CHECK(static_cast<std::size_t>(r.ref_embeddings().rows()) == keep);
  CHECK(r.ref_labels().size() == keep);
  fs::remove_all(dir);
}

TEST_CASE("sweep reuses models and orders rows by axis value") {
  RunConfig cfg = tiny_config();
  fs::path dir = fresh_dir("riskgen_sweep");
  run_experiment(cfg, dir, RunStage::Train);

  SweepResult res = sweep(cfg, "s", {2.0, 0.0, 2.0}, dir);
  CHECK(res.axis == "s");
  REQUIRE(res.rows.size() == 4);  // 2 distinct values x 2 replicates
  CHECK(res.rows[0].value == 0.0);
  CHECK(res.rows[1].value == 0.0);
  CHECK(res.rows[2].value == 2.0);
  CHECK(res.rows[3].value == 2.0);
  CHECK(res.rows[0].replicate == 0);
  CHECK(res.rows[1].replicate == 1);
  CHECK(fs::exists(res.csv_path));
  CHECK(fs::exists(res.plot_path));
  CHECK(res.to_csv().rfind("axis,value,replicate,error_rate,conformity,frechet\n", 0) == 0);

  CHECK_THROWS_AS(sweep(cfg, "temperature", {1.0}, dir), std::invalid_argument);
  CHECK_THROWS_AS(sweep(cfg, "s", {}, dir), std::invalid_argument);
  fs::remove_all(dir);
}

TEST_CASE("ablation runs all four arms over shared models") {
  RunConfig cfg = tiny_config();
  fs::path dir = fresh_dir("riskgen_ablate");
  run_experiment(cfg, dir, RunStage::Train);

  AblationResult res = ablate(cfg, dir);
  REQUIRE(res.rows.size() == 4 * 2);
  std::set<std::string> arms;
  for (const AblationRow& r : res.rows) arms.insert(r.arm);
  CHECK(arms == std::set<std::string>{"base", "screening", "gradient", "both"});

  for (const std::string& arm : arms) {
    double mean = 0.0;
    int n = 0;
    for (const AblationRow& r : res.rows) {
      if (r.arm == arm) {
        mean += r.error_rate;
        ++n;
      }
    }
    mean /= n;
    CHECK(res.mean_error(arm) == doctest::Approx(mean).epsilon(1e-12));
    CHECK(res.sd_error(arm) >= 0.0);
  }
  CHECK(fs::exists(res.csv_path));
  CHECK(fs::exists(res.plot_path));
  CHECK_THROWS_AS(res.mean_error("nope"), std::invalid_argument);
  fs::remove_all(dir);
}
