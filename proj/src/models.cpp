#include "riskgen/models.hpp"

#include "riskgen/binio.hpp"
#include "riskgen/checkpoint.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>
#include <stdexcept>

namespace riskgen {

namespace {

using checkpoint::json;

void check_labels(const std::vector<int>& y, Eigen::Index n, int num_classes, const char* op) {
  if (static_cast<Eigen::Index>(y.size()) != n)
    throw std::invalid_argument(std::string(op) + ": label count mismatch");
  if (n == 0) throw std::invalid_argument(std::string(op) + ": empty dataset");
  for (int label : y)
    if (label < 0 || label >= num_classes)
      throw std::invalid_argument(std::string(op) + ": label out of range");
}

int count_distinct(const std::vector<int>& y) {
  return static_cast<int>(std::set<int>(y.begin(), y.end()).size());
}

std::vector<Matrix*> collect_params(Mlp& net, std::vector<Matrix*> extra = {}) {
  std::vector<Matrix*> params;
  for (auto& [name, p] : net.named_params()) params.push_back(p);
  for (Matrix* p : extra) params.push_back(p);
  return params;
}

std::vector<const Matrix*> collect_grads(Mlp::Grads& grads,
                                         std::vector<const Matrix*> extra = {}) {
  std::vector<const Matrix*> out;
  for (std::size_t l = 0; l < grads.dW.size(); ++l) {
    out.push_back(&grads.dW[l]);
    out.push_back(&grads.db[l]);
  }
  for (const Matrix* g : extra) out.push_back(g);
  return out;
}

/// Minibatch index schedule: one shuffled pass per epoch.
std::vector<int> shuffled_indices(int n, RngStream& rng) {
  std::vector<int> idx(static_cast<std::size_t>(n));
  std::iota(idx.begin(), idx.end(), 0);
  rng.shuffle(idx);
  return idx;
}

Matrix take_rows(const Matrix& X, const std::vector<int>& idx, int begin, int count) {
  Matrix out(count, X.cols());
  for (int i = 0; i < count; ++i) out.row(i) = X.row(idx[static_cast<std::size_t>(begin + i)]);
  return out;
}

std::vector<int> take_labels(const std::vector<int>& y, const std::vector<int>& idx, int begin,
                             int count) {
  std::vector<int> out(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) out[static_cast<std::size_t>(i)] = y[static_cast<std::size_t>(idx[static_cast<std::size_t>(begin + i)])];
  return out;
}

void save_mlp_arrays(std::vector<std::pair<std::string, const Matrix*>>& arrays,
                     const std::string& prefix, const Mlp& net) {
  for (const auto& [name, p] : net.named_params()) arrays.emplace_back(prefix + name, p);
}

Mlp load_mlp(const std::filesystem::path& dir, const json& manifest, const std::string& prefix,
             const std::vector<int>& dims) {
  Mlp net = Mlp::with_zeros(dims);
  for (auto& [name, p] : net.named_params())
    *p = checkpoint::load_array(dir, manifest, prefix + name);
  return net;
}

json base_manifest(const std::string& kind, std::uint64_t seed, const std::string& config_hash) {
  json m;
  m["format"] = "riskgen-checkpoint";
  m["format_version"] = 1;
  m["kind"] = kind;
  m["seed"] = seed;
  m["config_hash"] = config_hash;
  return m;
}

void check_kind(const json& manifest, const std::string& kind,
                const std::filesystem::path& dir) {
  if (manifest.value("kind", "") != kind)
    throw std::runtime_error("checkpoint at " + dir.string() + " is not a " + kind);
}

}  // namespace

// ---------------------------------------------------------------------------
// TargetClassifier

std::vector<int> classifier_arch_hidden(const std::string& arch) {
  if (arch == "linear") return {};
  if (arch == "mlp_s") return {32};
  if (arch == "mlp_m") return {64, 64};
  if (arch == "mlp_w") return {128};
  throw std::invalid_argument("unknown classifier arch: " + arch);
}

TargetClassifier::TargetClassifier(int input_dim, int num_classes, const std::string& arch,
                                   RngStream& rng)
    : arch_(arch), num_classes_(num_classes) {
  if (num_classes < 2) throw std::invalid_argument("TargetClassifier: need >= 2 classes");
  std::vector<int> dims{input_dim};
  for (int h : classifier_arch_hidden(arch)) dims.push_back(h);
  dims.push_back(num_classes);
  net_ = Mlp(dims, rng);
}

std::vector<int> TargetClassifier::predict(const Matrix& X) const {
  Matrix Z = logits(X);
  std::vector<int> out(static_cast<std::size_t>(Z.rows()));
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    int best = 0;
    for (Eigen::Index k = 1; k < Z.cols(); ++k)
      if (Z(i, k) > Z(i, best)) best = static_cast<int>(k);
    out[static_cast<std::size_t>(i)] = best;
  }
  return out;
}

int TargetClassifier::predict_one(const Vector& x) const {
  return predict(x.transpose())[0];
}

double TargetClassifier::accuracy(const Matrix& X, const std::vector<int>& y) const {
  check_labels(y, X.rows(), num_classes_, "accuracy");
  std::vector<int> pred = predict(X);
  int hits = 0;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (pred[i] == y[i]) ++hits;
  return static_cast<double>(hits) / static_cast<double>(y.size());
}

Matrix TargetClassifier::ce_input_grad(const Matrix& X, const std::vector<int>& y,
                                       double temperature, Vector* loss_out) const {
  check_labels(y, X.rows(), num_classes_, "ce_input_grad");
  if (temperature <= 0.0) throw std::invalid_argument("ce_input_grad: temperature must be > 0");
  Mlp::Cache cache;
  Matrix Z = net_.forward(X, cache) / temperature;
  Matrix dZ(Z.rows(), Z.cols());
  if (loss_out) loss_out->resize(Z.rows());
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    double m = Z.row(i).maxCoeff();
    Eigen::RowVectorXd e = (Z.row(i).array() - m).exp();
    double sum = e.sum();
    Eigen::RowVectorXd p = e / sum;
    int label = y[static_cast<std::size_t>(i)];
    if (loss_out) (*loss_out)(i) = std::log(sum) + m - Z(i, label);
    dZ.row(i) = p;
    dZ(i, label) -= 1.0;
  }
  dZ /= temperature;
  Mlp::Grads grads = net_.zero_grads();
  return net_.backward(cache, dZ, grads);
}

Vector TargetClassifier::ce_loss(const Matrix& X, const std::vector<int>& y,
                                 double temperature) const {
  Vector loss;
  ce_input_grad(X, y, temperature, &loss);
  return loss;
}

void TargetClassifier::save(const std::filesystem::path& dir, std::uint64_t seed,
                            const std::string& config_hash) const {
  json m = base_manifest("classifier", seed, config_hash);
  m["arch"] = arch_;
  m["num_classes"] = num_classes_;
  m["dims"] = net_.dims();
  std::vector<std::pair<std::string, const Matrix*>> arrays;
  save_mlp_arrays(arrays, "net.", net_);
  checkpoint::save(dir, m, arrays);
}

TargetClassifier TargetClassifier::load(const std::filesystem::path& dir) {
  json m = checkpoint::load_manifest(dir);
  check_kind(m, "classifier", dir);
  TargetClassifier model;
  model.arch_ = m.at("arch").get<std::string>();
  model.num_classes_ = m.at("num_classes").get<int>();
  model.net_ = load_mlp(dir, m, "net.", m.at("dims").get<std::vector<int>>());
  return model;
}

// ---------------------------------------------------------------------------
// JointEmbedder

JointEmbedder::JointEmbedder(int input_dim, int num_classes, const EmbedderConfig& cfg,
                             RngStream& rng)
    : dim_(cfg.dim) {
  if (num_classes < 2) throw std::invalid_argument("JointEmbedder: need >= 2 categories");
  std::vector<int> dims{input_dim};
  for (int h : cfg.hidden) dims.push_back(h);
  dims.push_back(cfg.dim);
  tower_ = Mlp(dims, rng);
  text_table_ = rng.normal_matrix(num_classes, cfg.dim);
}

Matrix JointEmbedder::embed_image(const Matrix& X) const {
  Matrix G = tower_.forward(X);
  for (Eigen::Index i = 0; i < G.rows(); ++i) {
    double r = G.row(i).norm();
    if (!(r > 0.0) || !std::isfinite(r))
      throw std::runtime_error("embed_image: degenerate pre-normalization magnitude");
    G.row(i) /= r;
  }
  return G;
}

Vector JointEmbedder::embed_image_one(const Vector& x) const {
  return embed_image(x.transpose()).row(0).transpose();
}

Vector JointEmbedder::embed_text(int category) const {
  if (category < 0 || category >= num_classes())
    throw std::invalid_argument("embed_text: category out of range");
  Vector v = text_table_.row(category).transpose();
  double r = v.norm();
  if (!(r > 0.0)) throw std::runtime_error("embed_text: zero text embedding");
  return v / r;
}

Matrix JointEmbedder::inner_grad(const Matrix& X, const Vector& v) const {
  if (v.size() != dim_) throw std::invalid_argument("inner_grad: vector dim mismatch");
  Mlp::Cache cache;
  Matrix G = tower_.forward(X, cache);
  Matrix dG(G.rows(), G.cols());
  for (Eigen::Index i = 0; i < G.rows(); ++i) {
    double r = G.row(i).norm();
    if (!(r > 0.0)) throw std::runtime_error("inner_grad: degenerate magnitude");
    Eigen::RowVectorXd h = G.row(i) / r;
    double hv = h.dot(v.transpose());
    dG.row(i) = (v.transpose() - hv * h) / r;
  }
  Mlp::Grads grads = tower_.zero_grads();
  return tower_.backward(cache, dG, grads);
}

void JointEmbedder::finalize() {
  for (Eigen::Index k = 0; k < text_table_.rows(); ++k) {
    double r = text_table_.row(k).norm();
    if (!(r > 0.0)) throw std::runtime_error("finalize: zero text embedding row");
    text_table_.row(k) /= r;
  }
  tower_.snap_f32();
  binio::snap_f32(text_table_);
}

void JointEmbedder::save(const std::filesystem::path& dir, std::uint64_t seed,
                         const std::string& config_hash) const {
  json m = base_manifest("embedder", seed, config_hash);
  m["dim"] = dim_;
  m["num_classes"] = num_classes();
  m["dims"] = tower_.dims();
  std::vector<std::pair<std::string, const Matrix*>> arrays;
  save_mlp_arrays(arrays, "tower.", tower_);
  arrays.emplace_back("text_table", &text_table_);
  checkpoint::save(dir, m, arrays);
}

JointEmbedder JointEmbedder::load(const std::filesystem::path& dir) {
  json m = checkpoint::load_manifest(dir);
  check_kind(m, "embedder", dir);
  JointEmbedder model;
  model.dim_ = m.at("dim").get<int>();
  model.tower_ = load_mlp(dir, m, "tower.", m.at("dims").get<std::vector<int>>());
  model.text_table_ = checkpoint::load_array(dir, m, "text_table");
  return model;
}

// ---------------------------------------------------------------------------
// NoisePredictor

NoisePredictor::NoisePredictor(int z_dim, int cond_dim, const DenoiserConfig& cfg, RngStream& rng)
    : z_dim_(z_dim), cond_dim_(cond_dim), time_embed_dim_(cfg.time_embed_dim) {
  if (time_embed_dim_ <= 0 || time_embed_dim_ % 2 != 0)
    throw std::invalid_argument("NoisePredictor: time_embed_dim must be positive and even");
  std::vector<int> dims{z_dim + time_embed_dim_ + 2 * cond_dim};
  for (int h : cfg.hidden) dims.push_back(h);
  dims.push_back(z_dim);
  net_ = Mlp(dims, rng);
  null_c_ = 0.01 * rng.normal_matrix(1, cond_dim);
  null_y_ = 0.01 * rng.normal_matrix(1, cond_dim);
}

Eigen::RowVectorXd NoisePredictor::time_features(int t) const {
  int half = time_embed_dim_ / 2;
  Eigen::RowVectorXd f(time_embed_dim_);
  for (int i = 0; i < half; ++i) {
    double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                           static_cast<double>(half));
    f(2 * i) = std::sin(freq * static_cast<double>(t));
    f(2 * i + 1) = std::cos(freq * static_cast<double>(t));
  }
  return f;
}

Matrix NoisePredictor::assemble_input(const Matrix& Z, const std::vector<int>& t, const Matrix& C,
                                      const Matrix& Y) const {
  if (Z.cols() != z_dim_ || C.cols() != cond_dim_ || Y.cols() != cond_dim_)
    throw std::invalid_argument("NoisePredictor: input dim mismatch");
  if (Z.rows() != C.rows() || Z.rows() != Y.rows() ||
      static_cast<Eigen::Index>(t.size()) != Z.rows())
    throw std::invalid_argument("NoisePredictor: batch size mismatch");
  Matrix in(Z.rows(), z_dim_ + time_embed_dim_ + 2 * cond_dim_);
  for (Eigen::Index i = 0; i < Z.rows(); ++i) {
    in.block(i, 0, 1, z_dim_) = Z.row(i);
    in.block(i, z_dim_, 1, time_embed_dim_) = time_features(t[static_cast<std::size_t>(i)]);
    in.block(i, z_dim_ + time_embed_dim_, 1, cond_dim_) = C.row(i);
    in.block(i, z_dim_ + time_embed_dim_ + cond_dim_, 1, cond_dim_) = Y.row(i);
  }
  return in;
}

Matrix NoisePredictor::eps_batch(const Matrix& Z, const std::vector<int>& t, const Matrix& C,
                                 const Matrix& Y) const {
  return net_.forward(assemble_input(Z, t, C, Y));
}

Matrix NoisePredictor::eps(const Matrix& z, int t, const Vector& c, const Vector& y_text) const {
  Matrix C = c.transpose().replicate(z.rows(), 1);
  Matrix Y = y_text.transpose().replicate(z.rows(), 1);
  std::vector<int> tv(static_cast<std::size_t>(z.rows()), t);
  return eps_batch(z, tv, C, Y);
}

Matrix NoisePredictor::vjp_z(const Matrix& z, int t, const Vector& c, const Vector& y_text,
                             const Matrix& u) const {
  Matrix C = c.transpose().replicate(z.rows(), 1);
  Matrix Y = y_text.transpose().replicate(z.rows(), 1);
  std::vector<int> tv(static_cast<std::size_t>(z.rows()), t);
  Matrix dIn = net_.input_grad(assemble_input(z, tv, C, Y), u);
  return dIn.leftCols(z_dim_);
}

void NoisePredictor::snap_f32() {
  net_.snap_f32();
  binio::snap_f32(null_c_);
  binio::snap_f32(null_y_);
}

void NoisePredictor::save(const std::filesystem::path& dir, std::uint64_t seed,
                          const std::string& config_hash) const {
  json m = base_manifest("denoiser", seed, config_hash);
  m["z_dim"] = z_dim_;
  m["cond_dim"] = cond_dim_;
  m["time_embed_dim"] = time_embed_dim_;
  m["dims"] = net_.dims();
  std::vector<std::pair<std::string, const Matrix*>> arrays;
  save_mlp_arrays(arrays, "net.", net_);
  arrays.emplace_back("null_c", &null_c_);
  arrays.emplace_back("null_y", &null_y_);
  checkpoint::save(dir, m, arrays);
}

NoisePredictor NoisePredictor::load(const std::filesystem::path& dir) {
  json m = checkpoint::load_manifest(dir);
  check_kind(m, "denoiser", dir);
  NoisePredictor model;
  model.z_dim_ = m.at("z_dim").get<int>();
  model.cond_dim_ = m.at("cond_dim").get<int>();
  model.time_embed_dim_ = m.at("time_embed_dim").get<int>();
  model.net_ = load_mlp(dir, m, "net.", m.at("dims").get<std::vector<int>>());
  model.null_c_ = checkpoint::load_array(dir, m, "null_c");
  model.null_y_ = checkpoint::load_array(dir, m, "null_y");
  return model;
}

// ---------------------------------------------------------------------------
// ErrorPredictor

ErrorPredictor::ErrorPredictor(int input_dim, const ErrorPredictorConfig& cfg, RngStream& rng)
    : threshold_(cfg.threshold) {
  std::vector<int> dims{input_dim};
  for (int h : cfg.hidden) dims.push_back(h);
  dims.push_back(1);
  net_ = Mlp(dims, rng);
}

Vector ErrorPredictor::prob_error(const Matrix& C) const {
  if (degenerate_) return Vector::Constant(C.rows(), degenerate_value_);
  Matrix l = net_.forward(C);
  Vector p(l.rows());
  for (Eigen::Index i = 0; i < l.rows(); ++i) p(i) = 1.0 / (1.0 + std::exp(-l(i, 0)));
  return p;
}

double ErrorPredictor::prob_error_one(const Vector& c) const {
  return prob_error(c.transpose())(0);
}

void ErrorPredictor::save(const std::filesystem::path& dir, std::uint64_t seed,
                          const std::string& config_hash) const {
  json m = base_manifest("error_predictor", seed, config_hash);
  m["threshold"] = threshold_;
  m["degenerate"] = degenerate_;
  m["degenerate_value"] = degenerate_value_;
  m["dims"] = net_.dims();
  std::vector<std::pair<std::string, const Matrix*>> arrays;
  save_mlp_arrays(arrays, "net.", net_);
  checkpoint::save(dir, m, arrays);
}

ErrorPredictor ErrorPredictor::load(const std::filesystem::path& dir) {
  json m = checkpoint::load_manifest(dir);
  check_kind(m, "error_predictor", dir);
  ErrorPredictor model;
  model.threshold_ = m.at("threshold").get<double>();
  model.degenerate_ = m.at("degenerate").get<bool>();
  model.degenerate_value_ = m.at("degenerate_value").get<double>();
  model.net_ = load_mlp(dir, m, "net.", m.at("dims").get<std::vector<int>>());
  return model;
}

// ---------------------------------------------------------------------------
// Training

TargetClassifier train_classifier(const Matrix& X, const std::vector<int>& y, int num_classes,
                                  const ClassifierConfig& cfg, std::uint64_t seed) {
  check_labels(y, X.rows(), num_classes, "train_classifier");
  if (count_distinct(y) < 2)
    throw std::invalid_argument("train_classifier: dataset has a single category");
  RngStream root(seed);
  RngStream init = root.derive("init");
  RngStream order = root.derive("order");
  TargetClassifier model(static_cast<int>(X.cols()), num_classes, cfg.arch, init);

  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  adam_cfg.weight_decay = cfg.weight_decay;
  std::vector<Matrix*> params = collect_params(model.net());
  AdamState adam(params);

  int n = static_cast<int>(X.rows());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> idx = shuffled_indices(n, order);
    for (int start = 0; start < n; start += cfg.batch) {
      int nb = std::min(cfg.batch, n - start);
      Matrix Xb = take_rows(X, idx, start, nb);
      std::vector<int> yb = take_labels(y, idx, start, nb);
      Mlp::Cache cache;
      Matrix Z = model.net().forward(Xb, cache);
      Matrix dZ(Z.rows(), Z.cols());
      double loss = 0.0;
      for (Eigen::Index i = 0; i < Z.rows(); ++i) {
        double m = Z.row(i).maxCoeff();
        Eigen::RowVectorXd e = (Z.row(i).array() - m).exp();
        double sum = e.sum();
        int label = yb[static_cast<std::size_t>(i)];
        loss += std::log(sum) + m - Z(i, label);
        dZ.row(i) = e / sum;
        dZ(i, label) -= 1.0;
      }
      loss /= static_cast<double>(nb);
      if (!std::isfinite(loss))
        throw std::runtime_error("train_classifier: non-finite loss at epoch " +
                                 std::to_string(epoch));
      dZ /= static_cast<double>(nb);
      Mlp::Grads grads = model.net().zero_grads();
      model.net().backward(cache, dZ, grads);
      adam.step(params, collect_grads(grads), adam_cfg);
    }
  }
  model.net().snap_f32();
  return model;
}

JointEmbedder train_embedder(const Matrix& X, const std::vector<int>& y, int num_classes,
                             const EmbedderConfig& cfg, std::uint64_t seed) {
  check_labels(y, X.rows(), num_classes, "train_embedder");
  if (count_distinct(y) < 2)
    throw std::invalid_argument("train_embedder: dataset has a single category");
  RngStream root(seed);
  RngStream init = root.derive("init");
  RngStream order = root.derive("order");
  JointEmbedder model(static_cast<int>(X.cols()), num_classes, cfg, init);

  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  std::vector<Matrix*> params = collect_params(model.tower(), {&model.table()});
  AdamState adam(params);

  int n = static_cast<int>(X.rows());
  int K = num_classes;
  double tau = cfg.temperature;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> idx = shuffled_indices(n, order);
    for (int start = 0; start < n; start += cfg.batch) {
      int nb = std::min(cfg.batch, n - start);
      Matrix Xb = take_rows(X, idx, start, nb);
      std::vector<int> yb = take_labels(y, idx, start, nb);

      Mlp::Cache cache;
      Matrix G = model.tower().forward(Xb, cache);
      Vector r(nb);
      Matrix H(nb, cfg.dim);
      for (int i = 0; i < nb; ++i) {
        r(i) = std::max(G.row(i).norm(), 1e-12);
        H.row(i) = G.row(i) / r(i);
      }
      Vector rt(K);
      Matrix Tn(K, cfg.dim);
      for (int k = 0; k < K; ++k) {
        rt(k) = std::max(model.table().row(k).norm(), 1e-12);
        Tn.row(k) = model.table().row(k) / rt(k);
      }
      Matrix S = (H * Tn.transpose()) / tau;

      std::vector<int> counts(static_cast<std::size_t>(K), 0);
      for (int label : yb) ++counts[static_cast<std::size_t>(label)];
      int present = 0;
      for (int c : counts) present += c > 0 ? 1 : 0;

      // Image-to-text direction: softmax over categories per sample.
      Matrix dS = Matrix::Zero(nb, K);
      double loss = 0.0;
      for (int i = 0; i < nb; ++i) {
        double m = S.row(i).maxCoeff();
        Eigen::RowVectorXd e = (S.row(i).array() - m).exp();
        double sum = e.sum();
        int label = yb[static_cast<std::size_t>(i)];
        loss += 0.5 * (std::log(sum) + m - S(i, label)) / nb;
        dS.row(i) += 0.5 * (e / sum) / nb;
        dS(i, label) -= 0.5 / nb;
      }
      // Text-to-image direction: softmax over the batch per present category,
      // averaging over that category's positives.
      for (int k = 0; k < K; ++k) {
        if (counts[static_cast<std::size_t>(k)] == 0) continue;
        double m = S.col(k).maxCoeff();
        Vector e = (S.col(k).array() - m).exp();
        double sum = e.sum();
        double ck = static_cast<double>(counts[static_cast<std::size_t>(k)]);
        for (int i = 0; i < nb; ++i) {
          double q = e(i) / sum;
          bool pos = yb[static_cast<std::size_t>(i)] == k;
          if (pos) loss += 0.5 * (-(std::log(q))) / (ck * present);
          dS(i, k) += 0.5 * (q - (pos ? 1.0 / ck : 0.0)) / present;
        }
      }

      Matrix dH = (dS * Tn) / tau;
      Matrix dTn = (dS.transpose() * H) / tau;
      Matrix dG(nb, cfg.dim);
      for (int i = 0; i < nb; ++i) {
        double hv = dH.row(i).dot(H.row(i));
        dG.row(i) = (dH.row(i) - hv * H.row(i)) / r(i);
        // Magnitude regularizer gamma * mean((r - 1)^2).
        double dr = 2.0 * cfg.norm_reg * (r(i) - 1.0) / nb;
        loss += cfg.norm_reg * (r(i) - 1.0) * (r(i) - 1.0) / nb;
        dG.row(i) += dr * H.row(i);
      }
      Matrix dTable(K, cfg.dim);
      for (int k = 0; k < K; ++k) {
        double tv = dTn.row(k).dot(Tn.row(k));
        dTable.row(k) = (dTn.row(k) - tv * Tn.row(k)) / rt(k);
      }

      if (!std::isfinite(loss))
        throw std::runtime_error("train_embedder: non-finite loss at epoch " +
                                 std::to_string(epoch));

      Mlp::Grads grads = model.tower().zero_grads();
      model.tower().backward(cache, dG, grads);
      adam.step(params, collect_grads(grads, {&dTable}), adam_cfg);
    }
  }
  model.finalize();
  return model;
}

NoisePredictor train_denoiser(const Matrix& X, const std::vector<int>& y,
                              const JointEmbedder& embedder, const NoiseSchedule& schedule,
                              const DenoiserConfig& cfg, std::uint64_t seed) {
  if (X.rows() == 0) throw std::invalid_argument("train_denoiser: empty dataset");
  if (static_cast<Eigen::Index>(y.size()) != X.rows())
    throw std::invalid_argument("train_denoiser: label count mismatch");
  RngStream root(seed);
  RngStream init = root.derive("init");
  RngStream order = root.derive("order");
  RngStream draws = root.derive("draws");

  int D = static_cast<int>(X.cols());
  int de = embedder.dim();
  NoisePredictor model(D, de, cfg, init);

  Matrix C_all = embedder.embed_image(X);
  Matrix Y_all(X.rows(), de);
  for (Eigen::Index i = 0; i < X.rows(); ++i)
    Y_all.row(i) = embedder.embed_text(y[static_cast<std::size_t>(i)]).transpose();

  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  std::vector<Matrix*> params =
      collect_params(model.net(), {&model.null_image_param(), &model.null_text_param()});
  AdamState adam(params);

  int n = static_cast<int>(X.rows());
  int T = schedule.steps();
  int z_off_c = D + cfg.time_embed_dim;
  int z_off_y = z_off_c + de;
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> idx = shuffled_indices(n, order);
    for (int start = 0; start < n; start += cfg.batch) {
      int nb = std::min(cfg.batch, n - start);
      Matrix Zt(nb, D), Eps(nb, D), C(nb, de), Y(nb, de);
      std::vector<int> tv(static_cast<std::size_t>(nb));
      std::vector<std::uint8_t> drop_c(static_cast<std::size_t>(nb)), drop_y(static_cast<std::size_t>(nb));
      for (int i = 0; i < nb; ++i) {
        int row = idx[static_cast<std::size_t>(start + i)];
        int t = 1 + static_cast<int>(draws.uniform_int(static_cast<std::uint64_t>(T)));
        tv[static_cast<std::size_t>(i)] = t;
        double ab = schedule.alpha_bar(t);
        Eigen::RowVectorXd eps_row(D);
        for (int d = 0; d < D; ++d) eps_row(d) = draws.normal();
        Eps.row(i) = eps_row;
        Zt.row(i) = std::sqrt(ab) * X.row(row) + std::sqrt(1.0 - ab) * eps_row;
        drop_c[static_cast<std::size_t>(i)] = draws.uniform() < cfg.p_drop ? 1 : 0;
        drop_y[static_cast<std::size_t>(i)] = draws.uniform() < cfg.p_drop ? 1 : 0;
        C.row(i) = drop_c[static_cast<std::size_t>(i)] ? model.null_image_param().row(0)
                                                       : C_all.row(row);
        Y.row(i) = drop_y[static_cast<std::size_t>(i)] ? model.null_text_param().row(0)
                                                       : Y_all.row(row);
      }
      Matrix in(nb, D + cfg.time_embed_dim + 2 * de);
      for (int i = 0; i < nb; ++i) {
        in.block(i, 0, 1, D) = Zt.row(i);
        in.block(i, D, 1, cfg.time_embed_dim) = model.time_features(tv[static_cast<std::size_t>(i)]);
        in.block(i, z_off_c, 1, de) = C.row(i);
        in.block(i, z_off_y, 1, de) = Y.row(i);
      }
      Mlp::Cache cache;
      Matrix out = model.net().forward(in, cache);
      Matrix diff = out - Eps;
      double loss = diff.squaredNorm() / static_cast<double>(nb * D);
      if (!std::isfinite(loss))
        throw std::runtime_error("train_denoiser: non-finite loss at epoch " +
                                 std::to_string(epoch));
      Matrix dOut = 2.0 * diff / static_cast<double>(nb * D);
      Mlp::Grads grads = model.net().zero_grads();
      Matrix dIn = model.net().backward(cache, dOut, grads);
      Matrix d_null_c = Matrix::Zero(1, de), d_null_y = Matrix::Zero(1, de);
      for (int i = 0; i < nb; ++i) {
        if (drop_c[static_cast<std::size_t>(i)]) d_null_c += dIn.block(i, z_off_c, 1, de);
        if (drop_y[static_cast<std::size_t>(i)]) d_null_y += dIn.block(i, z_off_y, 1, de);
      }
      adam.step(params, collect_grads(grads, {&d_null_c, &d_null_y}), adam_cfg);
    }
  }
  model.snap_f32();
  return model;
}

double denoising_loss(const NoisePredictor& model, const Matrix& X, const std::vector<int>& y,
                      const JointEmbedder& embedder, const NoiseSchedule& schedule,
                      std::uint64_t seed) {
  if (X.rows() == 0) throw std::invalid_argument("denoising_loss: empty dataset");
  RngStream draws(seed);
  int D = static_cast<int>(X.cols());
  int de = embedder.dim();
  int n = static_cast<int>(X.rows());
  int T = schedule.steps();
  Matrix C = embedder.embed_image(X);
  Matrix Y(n, de);
  for (int i = 0; i < n; ++i)
    Y.row(i) = embedder.embed_text(y[static_cast<std::size_t>(i)]).transpose();
  Matrix Zt(n, D), Eps(n, D);
  std::vector<int> tv(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    int t = 1 + static_cast<int>(draws.uniform_int(static_cast<std::uint64_t>(T)));
    tv[static_cast<std::size_t>(i)] = t;
    double ab = schedule.alpha_bar(t);
    Eigen::RowVectorXd eps_row(D);
    for (int d = 0; d < D; ++d) eps_row(d) = draws.normal();
    Eps.row(i) = eps_row;
    Zt.row(i) = std::sqrt(ab) * X.row(i) + std::sqrt(1.0 - ab) * eps_row;
  }
  Matrix out = model.eps_batch(Zt, tv, C, Y);
  return (out - Eps).squaredNorm() / static_cast<double>(n * D);
}

std::vector<std::uint8_t> compute_model_errors(const TargetClassifier& model, const Matrix& X,
                                               const std::vector<int>& y) {
  check_labels(y, X.rows(), model.num_classes(), "compute_model_errors");
  std::vector<int> pred = model.predict(X);
  std::vector<std::uint8_t> errors(y.size());
  for (std::size_t i = 0; i < y.size(); ++i) errors[i] = pred[i] != y[i] ? 1 : 0;
  return errors;
}

ErrorPredictor fit_error_predictor(const Matrix& embeddings,
                                   const std::vector<std::uint8_t>& errors,
                                   const ErrorPredictorConfig& cfg, std::uint64_t seed) {
  if (embeddings.rows() == 0) throw std::invalid_argument("fit_error_predictor: empty dataset");
  if (static_cast<Eigen::Index>(errors.size()) != embeddings.rows())
    throw std::invalid_argument("fit_error_predictor: label count mismatch");
  RngStream root(seed);
  RngStream init = root.derive("init");
  RngStream order = root.derive("order");
  ErrorPredictor model(static_cast<int>(embeddings.cols()), cfg, init);

  bool any0 = false, any1 = false;
  for (std::uint8_t e : errors) (e ? any1 : any0) = true;
  if (!any0 || !any1) {
    model.set_degenerate(any1 ? 1.0 : 0.0);
    model.net().snap_f32();
    return model;
  }

  AdamConfig adam_cfg;
  adam_cfg.lr = cfg.lr;
  std::vector<Matrix*> params = collect_params(model.net());
  AdamState adam(params);

  int n = static_cast<int>(embeddings.rows());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    std::vector<int> idx = shuffled_indices(n, order);
    for (int start = 0; start < n; start += cfg.batch) {
      int nb = std::min(cfg.batch, n - start);
      Matrix Xb = take_rows(embeddings, idx, start, nb);
      Mlp::Cache cache;
      Matrix l = model.net().forward(Xb, cache);
      Matrix dl(nb, 1);
      double loss = 0.0;
      for (int i = 0; i < nb; ++i) {
        double lab = errors[static_cast<std::size_t>(idx[static_cast<std::size_t>(start + i)])] ? 1.0 : 0.0;
        double v = l(i, 0);
        // softplus(v) - lab * v is the stable form of BCE-with-logits.
        double sp = v > 0 ? v + std::log1p(std::exp(-v)) : std::log1p(std::exp(v));
        loss += (sp - lab * v) / nb;
        double p = 1.0 / (1.0 + std::exp(-v));
        dl(i, 0) = (p - lab) / nb;
      }
      if (!std::isfinite(loss))
        throw std::runtime_error("fit_error_predictor: non-finite loss at epoch " +
                                 std::to_string(epoch));
      Mlp::Grads grads = model.net().zero_grads();
      model.net().backward(cache, dl, grads);
      adam.step(params, collect_grads(grads), adam_cfg);
    }
  }
  model.net().snap_f32();
  return model;
}

}  // namespace riskgen
