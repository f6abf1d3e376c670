#include "riskgen/dataset.hpp"

#include "riskgen/binio.hpp"
#include "riskgen/jsonutil.hpp"
#include "riskgen/rng.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace riskgen {

using nlohmann::json;

namespace {

constexpr char kMagic[4] = {'R', 'G', 'D', 'S'};
constexpr std::uint32_t kVersion = 1;

Matrix rotation_matrix(int dims, double angle) {
  Matrix R = Matrix::Identity(dims, dims);
  if (dims >= 2 && angle != 0.0) {
    double c = std::cos(angle), s = std::sin(angle);
    R(0, 0) = c;
    R(0, 1) = -s;
    R(1, 0) = s;
    R(1, 1) = c;
  }
  return R;
}

}  // namespace

void SyntheticSpec::validate() const {
  if (num_classes < 2) throw std::invalid_argument("SyntheticSpec: need >= 2 classes");
  if (dims < 1) throw std::invalid_argument("SyntheticSpec: dims must be positive");
  if (samples_per_class_per_domain < 1)
    throw std::invalid_argument("SyntheticSpec: samples_per_class_per_domain must be positive");
  if (class_means.rows() != num_classes || class_means.cols() != dims)
    throw std::invalid_argument("SyntheticSpec: class_means shape mismatch");
  if (class_cov_scale.size() != num_classes)
    throw std::invalid_argument("SyntheticSpec: class_cov_scale length mismatch");
  for (Eigen::Index k = 0; k < class_cov_scale.size(); ++k)
    if (!(class_cov_scale(k) > 0.0))
      throw std::invalid_argument("SyntheticSpec: class_cov_scale must be positive");
  for (int a = 0; a < num_classes; ++a)
    for (int b = a + 1; b < num_classes; ++b)
      if ((class_means.row(a) - class_means.row(b)).norm() == 0.0)
        throw std::invalid_argument("SyntheticSpec: class means must be pairwise distinct");
  if (domains.empty()) throw std::invalid_argument("SyntheticSpec: need at least one domain");
  bool any_id = false, any_ood = false;
  for (const DomainSpec& d : domains) {
    if (d.offset.size() != dims)
      throw std::invalid_argument("SyntheticSpec: domain offset dim mismatch");
    (d.ood ? any_ood : any_id) = true;
  }
  if (!any_id || !any_ood)
    throw std::invalid_argument("SyntheticSpec: need at least one ID and one OOD domain");
  if (!(split_train > 0.0 && split_val >= 0.0 && split_train + split_val < 1.0))
    throw std::invalid_argument("SyntheticSpec: invalid split fractions");
}

json SyntheticSpec::to_json() const {
  json j;
  j["num_classes"] = num_classes;
  j["dims"] = dims;
  j["samples_per_class_per_domain"] = samples_per_class_per_domain;
  j["seed"] = seed;
  j["split_train"] = split_train;
  j["split_val"] = split_val;
  j["class_cov_scale"] = std::vector<double>(class_cov_scale.data(),
                                             class_cov_scale.data() + class_cov_scale.size());
  json means = json::array();
  for (Eigen::Index k = 0; k < class_means.rows(); ++k) {
    json row = json::array();
    for (Eigen::Index d = 0; d < class_means.cols(); ++d) row.push_back(class_means(k, d));
    means.push_back(row);
  }
  j["class_means"] = means;
  json doms = json::array();
  for (const DomainSpec& d : domains) {
    json dj;
    dj["name"] = d.name;
    dj["rotation"] = d.rotation;
    dj["ood"] = d.ood;
    dj["offset"] = std::vector<double>(d.offset.data(), d.offset.data() + d.offset.size());
    doms.push_back(dj);
  }
  j["domains"] = doms;
  return j;
}

SyntheticSpec SyntheticSpec::from_json(const json& j) {
  jsonutil::expect_keys(j,
                        {"num_classes", "dims", "samples_per_class_per_domain", "seed",
                         "split_train", "split_val", "class_cov_scale", "class_means", "domains"},
                        "dataset spec");
  SyntheticSpec spec;
  spec.num_classes = jsonutil::require(j, "num_classes", "dataset spec").get<int>();
  spec.dims = jsonutil::require(j, "dims", "dataset spec").get<int>();
  spec.samples_per_class_per_domain =
      jsonutil::require(j, "samples_per_class_per_domain", "dataset spec").get<int>();
  spec.seed = jsonutil::require(j, "seed", "dataset spec").get<std::uint64_t>();
  spec.split_train = j.value("split_train", 0.6);
  spec.split_val = j.value("split_val", 0.2);
  auto cov = jsonutil::require(j, "class_cov_scale", "dataset spec").get<std::vector<double>>();
  spec.class_cov_scale = Eigen::Map<const Vector>(cov.data(), static_cast<Eigen::Index>(cov.size()));
  const json& means = jsonutil::require(j, "class_means", "dataset spec");
  spec.class_means = Matrix(means.size(), spec.dims);
  for (std::size_t k = 0; k < means.size(); ++k) {
    auto row = means.at(k).get<std::vector<double>>();
    if (static_cast<int>(row.size()) != spec.dims)
      throw std::invalid_argument("dataset spec: class mean row length mismatch");
    for (int d = 0; d < spec.dims; ++d) spec.class_means(static_cast<Eigen::Index>(k), d) = row[static_cast<std::size_t>(d)];
  }
  for (const json& dj : jsonutil::require(j, "domains", "dataset spec")) {
    jsonutil::expect_keys(dj, {"name", "rotation", "ood", "offset"}, "dataset spec domain");
    DomainSpec dom;
    dom.name = jsonutil::require(dj, "name", "domain").get<std::string>();
    dom.rotation = jsonutil::require(dj, "rotation", "domain").get<double>();
    dom.ood = jsonutil::require(dj, "ood", "domain").get<bool>();
    auto off = jsonutil::require(dj, "offset", "domain").get<std::vector<double>>();
    dom.offset = Eigen::Map<const Vector>(off.data(), static_cast<Eigen::Index>(off.size()));
    spec.domains.push_back(std::move(dom));
  }
  spec.validate();
  return spec;
}

std::string SyntheticSpec::hash() const { return to_hex(fnv1a64(to_json().dump())); }

Vector SyntheticSpec::component_mean(int k, int d) const {
  const DomainSpec& dom = domains[static_cast<std::size_t>(d)];
  Matrix R = rotation_matrix(dims, dom.rotation);
  return R * class_means.row(k).transpose() + dom.offset;
}

int LabeledDataset::count(Split s) const {
  int n = 0;
  for (Split v : splits) n += v == s ? 1 : 0;
  return n;
}

std::vector<int> LabeledDataset::split_indices(Split s) const {
  std::vector<int> idx;
  for (std::size_t i = 0; i < splits.size(); ++i)
    if (splits[i] == s) idx.push_back(static_cast<int>(i));
  return idx;
}

Matrix LabeledDataset::split_x(Split s) const {
  std::vector<int> idx = split_indices(s);
  Matrix out(static_cast<Eigen::Index>(idx.size()), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(idx[i]);
  return out;
}

std::vector<int> LabeledDataset::split_labels(Split s) const {
  std::vector<int> idx = split_indices(s);
  std::vector<int> out(idx.size());
  for (std::size_t i = 0; i < idx.size(); ++i) out[i] = labels[static_cast<std::size_t>(idx[i])];
  return out;
}

LabeledDataset make_dataset(const SyntheticSpec& spec) {
  spec.validate();
  int n_domains = static_cast<int>(spec.domains.size());
  Eigen::Index total = static_cast<Eigen::Index>(n_domains) * spec.num_classes *
                       spec.samples_per_class_per_domain;
  LabeledDataset ds;
  ds.spec = spec;
  ds.x = Matrix(total, spec.dims);
  ds.labels.resize(static_cast<std::size_t>(total));
  ds.domains.resize(static_cast<std::size_t>(total));
  ds.splits.resize(static_cast<std::size_t>(total));

  Eigen::Index row = 0;
  for (int d = 0; d < n_domains; ++d) {
    const DomainSpec& dom = spec.domains[static_cast<std::size_t>(d)];
    Matrix R = rotation_matrix(spec.dims, dom.rotation);
    for (int k = 0; k < spec.num_classes; ++k) {
      int n = spec.samples_per_class_per_domain;
      RngStream draw(derive_seed(spec.seed, "samples", {static_cast<std::uint64_t>(d),
                                                        static_cast<std::uint64_t>(k)}));
      Eigen::Index block_start = row;
      for (int i = 0; i < n; ++i) {
        Vector u = spec.class_means.row(k).transpose() +
                   spec.class_cov_scale(k) * draw.normal_vector(spec.dims);
        ds.x.row(row) = (R * u + dom.offset).transpose();
        ds.labels[static_cast<std::size_t>(row)] = k;
        ds.domains[static_cast<std::size_t>(row)] = d;
        ++row;
      }
      if (dom.ood) {
        for (int i = 0; i < n; ++i)
          ds.splits[static_cast<std::size_t>(block_start + i)] = Split::TestOod;
      } else {
        std::vector<int> order(static_cast<std::size_t>(n));
        std::iota(order.begin(), order.end(), 0);
        RngStream split_rng(derive_seed(spec.seed, "split", {static_cast<std::uint64_t>(d),
                                                             static_cast<std::uint64_t>(k)}));
        split_rng.shuffle(order);
        int n_train = static_cast<int>(std::floor(spec.split_train * n));
        int n_val = static_cast<int>(std::floor(spec.split_val * n));
        for (int i = 0; i < n; ++i) {
          Split s = i < n_train ? Split::Train : (i < n_train + n_val ? Split::Val : Split::TestId);
          ds.splits[static_cast<std::size_t>(block_start + order[static_cast<std::size_t>(i)])] = s;
        }
      }
    }
  }
  binio::snap_f32(ds.x);
  return ds;
}

void save_dataset(const LabeledDataset& ds, const std::filesystem::path& path) {
  json manifest;
  manifest["spec"] = ds.spec.to_json();
  manifest["spec_hash"] = ds.spec.hash();
  manifest["count"] = ds.size();
  manifest["dims"] = ds.spec.dims;
  json split_sizes;
  split_sizes["train"] = ds.count(Split::Train);
  split_sizes["val"] = ds.count(Split::Val);
  split_sizes["test_id"] = ds.count(Split::TestId);
  split_sizes["test_ood"] = ds.count(Split::TestOod);
  manifest["split_sizes"] = split_sizes;

  std::ostringstream os(std::ios::binary);
  os.write(kMagic, 4);
  binio::put_u32(os, kVersion);
  binio::put_string(os, manifest.dump());
  binio::put_f32_matrix(os, ds.x);
  binio::put_i32_vector(os, ds.labels);
  binio::put_i32_vector(os, ds.domains);
  std::vector<int> split_ints(ds.splits.size());
  for (std::size_t i = 0; i < ds.splits.size(); ++i) split_ints[i] = static_cast<int>(ds.splits[i]);
  binio::put_i32_vector(os, split_ints);
  binio::write_file_atomic(path.string(), os.str());
}

LabeledDataset load_dataset(const std::filesystem::path& path,
                            const std::string& expected_spec_hash) {
  std::istringstream is(binio::read_file(path.string()), std::ios::binary);
  char magic[4];
  is.read(magic, 4);
  if (is.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0)
    throw std::runtime_error("load_dataset: bad magic in " + path.string());
  std::uint32_t version = binio::get_u32(is);
  if (version != kVersion)
    throw std::runtime_error("load_dataset: unsupported version in " + path.string());
  json manifest;
  try {
    manifest = json::parse(binio::get_string(is));
  } catch (const json::exception& e) {
    throw std::runtime_error("load_dataset: corrupt manifest: " + std::string(e.what()));
  }
  LabeledDataset ds;
  ds.spec = SyntheticSpec::from_json(manifest.at("spec"));
  std::string stored_hash = manifest.at("spec_hash").get<std::string>();
  if (stored_hash != ds.spec.hash())
    throw std::runtime_error("load_dataset: stored spec hash does not match spec content");
  if (!expected_spec_hash.empty() && stored_hash != expected_spec_hash)
    throw std::runtime_error("load_dataset: spec hash mismatch (expected " + expected_spec_hash +
                             ", found " + stored_hash + ")");
  Eigen::Index n = manifest.at("count").get<Eigen::Index>();
  int dims = manifest.at("dims").get<int>();
  ds.x = binio::get_f32_matrix(is, static_cast<int>(n), dims);
  ds.labels = binio::get_i32_vector(is, static_cast<std::size_t>(n));
  ds.domains = binio::get_i32_vector(is, static_cast<std::size_t>(n));
  std::vector<int> split_ints = binio::get_i32_vector(is, static_cast<std::size_t>(n));
  ds.splits.resize(split_ints.size());
  for (std::size_t i = 0; i < split_ints.size(); ++i) {
    int v = split_ints[i];
    if (v < 0 || v > 3) throw std::runtime_error("load_dataset: invalid split tag");
    ds.splits[i] = static_cast<Split>(v);
  }
  return ds;
}

BayesOracle::BayesOracle(const SyntheticSpec& spec, DomainScope scope) {
  spec.validate();
  dims_ = spec.dims;
  sigma_ = spec.class_cov_scale;
  means_.resize(static_cast<std::size_t>(spec.num_classes));
  int in_scope = 0;
  for (std::size_t d = 0; d < spec.domains.size(); ++d) {
    bool ood = spec.domains[d].ood;
    if (scope == DomainScope::Id && ood) continue;
    if (scope == DomainScope::Ood && !ood) continue;
    ++in_scope;
  }
  if (in_scope == 0) throw std::invalid_argument("BayesOracle: no domains in scope");
  for (int k = 0; k < spec.num_classes; ++k) {
    Matrix m(in_scope, spec.dims);
    int row = 0;
    for (int d = 0; d < static_cast<int>(spec.domains.size()); ++d) {
      bool ood = spec.domains[static_cast<std::size_t>(d)].ood;
      if (scope == DomainScope::Id && ood) continue;
      if (scope == DomainScope::Ood && !ood) continue;
      m.row(row++) = spec.component_mean(k, d).transpose();
    }
    means_[static_cast<std::size_t>(k)] = m;
  }
}

int BayesOracle::predict_one(const Vector& x) const {
  if (x.size() != dims_) throw std::invalid_argument("BayesOracle: dim mismatch");
  int best = 0;
  double best_lp = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < num_classes(); ++k) {
    const Matrix& m = means_[static_cast<std::size_t>(k)];
    double s2 = sigma_(k) * sigma_(k);
    // log sum over equally weighted in-scope components of this class.
    double max_term = -std::numeric_limits<double>::infinity();
    Vector terms(m.rows());
    for (Eigen::Index d = 0; d < m.rows(); ++d) {
      double sq = (x - m.row(d).transpose()).squaredNorm();
      terms(d) = -0.5 * sq / s2 - dims_ * std::log(sigma_(k));
      max_term = std::max(max_term, terms(d));
    }
    double sum = 0.0;
    for (Eigen::Index d = 0; d < m.rows(); ++d) sum += std::exp(terms(d) - max_term);
    double lp = max_term + std::log(sum) - std::log(static_cast<double>(m.rows()));
    if (lp > best_lp) {
      best_lp = lp;
      best = k;
    }
  }
  return best;
}

std::vector<int> BayesOracle::predict(const Matrix& X) const {
  std::vector<int> out(static_cast<std::size_t>(X.rows()));
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    out[static_cast<std::size_t>(i)] = predict_one(X.row(i).transpose());
  return out;
}

BayesOracle bayes_oracle(const SyntheticSpec& spec, DomainScope scope) {
  return BayesOracle(spec, scope);
}

}  // namespace riskgen
