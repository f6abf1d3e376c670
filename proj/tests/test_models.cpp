#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "riskgen/binio.hpp"
#include "riskgen/checkpoint.hpp"
#include "riskgen/mlp.hpp"
#include "riskgen/models.hpp"
#include "riskgen/rng.hpp"

#include <cmath>
#include <filesystem>
#include <vector>

using namespace riskgen;

namespace {

std::filesystem::path temp_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("riskgen_test_" + name);
  std::filesystem::remove_all(p);
  return p;
}

// Two separable blobs around +/-mu on the first axis.
void make_blobs(int n_per_class, int dim, double mu, Matrix& X, std::vector<int>& y,
                std::uint64_t seed) {
  RngStream rng(seed);
  X = rng.normal_matrix(2 * n_per_class, dim);
  y.assign(static_cast<std::size_t>(2 * n_per_class), 0);
  for (int i = 0; i < n_per_class; ++i) X(i, 0) += mu;
  for (int i = n_per_class; i < 2 * n_per_class; ++i) {
    X(i, 0) -= mu;
    y[static_cast<std::size_t>(i)] = 1;
  }
}

double rel_err(double got, double want) {
  return std::abs(got - want) / std::max(1.0, std::abs(want));
}

}  // namespace

TEST_CASE("silu values and gradient") {
  CHECK(silu(0.0) == 0.0);
  CHECK(silu(1.0) == doctest::Approx(0.7310585786300049).epsilon(1e-15));
  double h = 1e-6;
  for (double x : {-2.0, -0.5, 0.0, 0.3, 1.7}) {
    double fd = (silu(x + h) - silu(x - h)) / (2 * h);
    CHECK(silu_grad(x) == doctest::Approx(fd).epsilon(1e-8));
  }
}

TEST_CASE("Mlp backward matches finite differences on inputs and parameters") {
  RngStream rng(17);
  Mlp net({3, 5, 2}, rng);
  Matrix X = rng.normal_matrix(4, 3);
  Matrix R = rng.normal_matrix(4, 2);  // loss = sum(forward(X) .* R)

  Mlp::Cache cache;
  Matrix Y = net.forward(X, cache);
  Mlp::Grads grads = net.zero_grads();
  Matrix dX = net.backward(cache, R, grads);

  auto loss = [&](const Mlp& m, const Matrix& input) {
    return (m.forward(input).array() * R.array()).sum();
  };

  double h = 1e-6;
  for (int i = 0; i < X.rows(); ++i)
    for (int j = 0; j < X.cols(); ++j) {
      Matrix Xp = X, Xm = X;
      Xp(i, j) += h;
      Xm(i, j) -= h;
      double fd = (loss(net, Xp) - loss(net, Xm)) / (2 * h);
      CHECK(rel_err(dX(i, j), fd) < 1e-6);
    }

  for (int l = 0; l < net.num_layers(); ++l) {
    for (int i = 0; i < net.weight(l).rows(); ++i)
      for (int j = 0; j < net.weight(l).cols(); ++j) {
        Mlp p = net, m = net;
        p.weight(l)(i, j) += h;
        m.weight(l)(i, j) -= h;
        double fd = (loss(p, X) - loss(m, X)) / (2 * h);
        CHECK(rel_err(grads.dW[static_cast<std::size_t>(l)](i, j), fd) < 1e-6);
      }
    for (int j = 0; j < net.bias(l).cols(); ++j) {
      Mlp p = net, m = net;
      p.bias(l)(0, j) += h;
      m.bias(l)(0, j) -= h;
      double fd = (loss(p, X) - loss(m, X)) / (2 * h);
      CHECK(rel_err(grads.db[static_cast<std::size_t>(l)](0, j), fd) < 1e-6);
    }
  }

  Matrix dX2 = net.input_grad(X, R);
  CHECK((dX2 - dX).cwiseAbs().maxCoeff() == 0.0);
  CHECK((Y - net.forward(X)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("Mlp init is seed-deterministic and with_zeros is empty") {
  RngStream a(5), b(5);
  Mlp m1({4, 6, 3}, a), m2({4, 6, 3}, b);
  for (int l = 0; l < m1.num_layers(); ++l) {
    CHECK((m1.weight(l) - m2.weight(l)).cwiseAbs().maxCoeff() == 0.0);
    CHECK((m1.bias(l) - m2.bias(l)).cwiseAbs().maxCoeff() == 0.0);
  }
  Mlp z = Mlp::with_zeros({4, 6, 3});
  CHECK(z.weight(0).cwiseAbs().maxCoeff() == 0.0);
  CHECK(z.input_dim() == 4);
  CHECK(z.output_dim() == 3);
}

TEST_CASE("Adam first step applies the bias-corrected update") {
  Matrix p = Matrix::Constant(1, 1, 1.0);
  Matrix g = Matrix::Constant(1, 1, 1.0);
  AdamState state({&p});
  AdamConfig cfg;
  cfg.lr = 0.1;
  state.step({&p}, {&g}, cfg);
  // m_hat = 1, v_hat = 1 after bias correction, so the step is lr / (1 + eps).
  CHECK(p(0, 0) == doctest::Approx(0.9).epsilon(1e-8));
}

TEST_CASE("Adam minimizes a quadratic") {
  Matrix p = Matrix::Constant(1, 1, 3.0);
  AdamState state({&p});
  AdamConfig cfg;
  cfg.lr = 0.05;
  for (int i = 0; i < 500; ++i) {
    Matrix g = 2.0 * p;  // d/dp of p^2
    state.step({&p}, {&g}, cfg);
  }
  CHECK(std::abs(p(0, 0)) < 1e-2);
}

TEST_CASE("Adam weight decay shrinks parameters with zero gradient") {
  Matrix p = Matrix::Constant(1, 1, 1.0);
  Matrix g = Matrix::Zero(1, 1);
  AdamState state({&p});
  AdamConfig cfg;
  cfg.lr = 0.01;
  cfg.weight_decay = 0.1;
  for (int i = 0; i < 10; ++i) state.step({&p}, {&g}, cfg);
  CHECK(p(0, 0) < 1.0);
  CHECK(p(0, 0) > 0.0);
}

// ---------------------------------------------------------------------------
// classifier

TEST_CASE("train_classifier separates blobs and is deterministic") {
  Matrix X;
  std::vector<int> y;
  make_blobs(60, 4, 3.0, X, y, 100);

  ClassifierConfig cfg;
  cfg.arch = "mlp_s";
  cfg.epochs = 30;
  TargetClassifier a = train_classifier(X, y, 2, cfg, 55);
  TargetClassifier b = train_classifier(X, y, 2, cfg, 55);
  TargetClassifier c = train_classifier(X, y, 2, cfg, 56);

  CHECK(a.accuracy(X, y) > 0.95);
  CHECK((a.logits(X) - b.logits(X)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.logits(X) - c.logits(X)).cwiseAbs().maxCoeff() > 0.0);
  CHECK(a.num_classes() == 2);
}

TEST_CASE("classifier predictions are argmax with smallest-index ties") {
  RngStream rng(1);
  TargetClassifier model(3, 4, "linear", rng);
  // Zero the net so all logits tie; argmax must pick class 0.
  for (int l = 0; l < model.net().num_layers(); ++l) {
    model.net().weight(l).setZero();
    model.net().bias(l).setZero();
  }
  Matrix X = rng.normal_matrix(5, 3);
  for (int pred : model.predict(X)) CHECK(pred == 0);
  CHECK(model.predict_one(Vector::Zero(3)) == 0);
}

TEST_CASE("ce_input_grad matches finite differences of ce_loss") {
  Matrix X;
  std::vector<int> y;
  make_blobs(20, 3, 2.0, X, y, 7);
  ClassifierConfig cfg;
  cfg.arch = "mlp_s";
  cfg.epochs = 5;
  TargetClassifier model = train_classifier(X, y, 2, cfg, 9);

  RngStream rng(13);
  Matrix Xq = rng.normal_matrix(6, 3);
  std::vector<int> yq{0, 1, 0, 1, 1, 0};

  for (double temperature : {1.0, 64.0}) {
    Vector loss;
    Matrix grad = model.ce_input_grad(Xq, yq, temperature, &loss);
    Vector direct = model.ce_loss(Xq, yq, temperature);
    CHECK((loss - direct).cwiseAbs().maxCoeff() == 0.0);

    double h = 1e-5;
    for (int i = 0; i < Xq.rows(); ++i)
      for (int j = 0; j < Xq.cols(); ++j) {
        Matrix Xp = Xq, Xm = Xq;
        Xp(i, j) += h;
        Xm(i, j) -= h;
        double fd = (model.ce_loss(Xp, yq, temperature)(i) -
                     model.ce_loss(Xm, yq, temperature)(i)) /
                    (2 * h);
        CHECK(rel_err(grad(i, j), fd) < 1e-3);
      }
  }
}

TEST_CASE("high temperature flattens the loss toward log K") {
  Matrix X;
  std::vector<int> y;
  make_blobs(20, 3, 2.0, X, y, 7);
  ClassifierConfig cfg;
  cfg.arch = "mlp_s";
  cfg.epochs = 20;
  TargetClassifier model = train_classifier(X, y, 2, cfg, 9);

  Vector hot = model.ce_loss(X, y, 1e9);
  for (int i = 0; i < hot.size(); ++i)
    CHECK(hot(i) == doctest::Approx(std::log(2.0)).epsilon(1e-6));
}

TEST_CASE("train_classifier validates inputs") {
  Matrix X = Matrix::Zero(4, 2);
  ClassifierConfig cfg;
  CHECK_THROWS_AS(train_classifier(X, {0, 0, 0, 0}, 2, cfg, 1), std::invalid_argument);
  CHECK_THROWS_AS(train_classifier(X, {0, 1, 0, 5}, 2, cfg, 1), std::invalid_argument);
  CHECK_THROWS_AS(classifier_arch_hidden("resnet"), std::invalid_argument);
}

TEST_CASE("classifier checkpoint round-trips bitwise") {
  Matrix X;
  std::vector<int> y;
  make_blobs(30, 4, 2.5, X, y, 19);
  ClassifierConfig cfg;
  cfg.arch = "mlp_m";
  cfg.epochs = 10;
  TargetClassifier model = train_classifier(X, y, 2, cfg, 23);

  auto dir = temp_dir("clf_ckpt");
  model.save(dir, 23, "cfghash");
  TargetClassifier back = TargetClassifier::load(dir);
  CHECK(back.arch() == "mlp_m");
  CHECK(back.num_classes() == 2);
  CHECK((back.logits(X) - model.logits(X)).cwiseAbs().maxCoeff() == 0.0);
  std::filesystem::remove_all(dir);
}

// ---------------------------------------------------------------------------
// embedder

TEST_CASE("embedder produces unit-norm embeddings and aligned categories") {
  Matrix X;
  std::vector<int> y;
  make_blobs(80, 6, 3.0, X, y, 41);

  EmbedderConfig cfg;
  cfg.dim = 8;
  cfg.epochs = 20;
  JointEmbedder emb = train_embedder(X, y, 2, cfg, 43);

  Matrix H = emb.embed_image(X);
  for (int i = 0; i < H.rows(); ++i)
    CHECK(H.row(i).norm() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(emb.embed_text(0).norm() == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(emb.embed_text(1).norm() == doctest::Approx(1.0).epsilon(1e-9));

  // Image embeddings should land closer to their own category's text vector.
  int correct = 0;
  for (int i = 0; i < H.rows(); ++i) {
    double s0 = H.row(i).dot(emb.embed_text(0));
    double s1 = H.row(i).dot(emb.embed_text(1));
    int pick = s0 >= s1 ? 0 : 1;
    if (pick == y[static_cast<std::size_t>(i)]) ++correct;
  }
  CHECK(static_cast<double>(correct) / static_cast<double>(H.rows()) > 0.9);
}

TEST_CASE("embedder inner_grad matches finite differences") {
  Matrix X;
  std::vector<int> y;
  make_blobs(30, 5, 2.0, X, y, 47);
  EmbedderConfig cfg;
  cfg.dim = 6;
  cfg.epochs = 10;
  JointEmbedder emb = train_embedder(X, y, 2, cfg, 53);

  RngStream rng(59);
  Matrix Xq = rng.normal_matrix(5, 5);
  Vector v = emb.embed_text(1);
  Matrix grad = emb.inner_grad(Xq, v);

  double h = 1e-5;
  for (int i = 0; i < Xq.rows(); ++i)
    for (int j = 0; j < Xq.cols(); ++j) {
      Matrix Xp = Xq, Xm = Xq;
      Xp(i, j) += h;
      Xm(i, j) -= h;
      double fd = (emb.embed_image(Xp).row(i).dot(v) - emb.embed_image(Xm).row(i).dot(v)) /
                  (2 * h);
      CHECK(rel_err(grad(i, j), fd) < 1e-3);
    }
}

TEST_CASE("embed_text rejects out-of-range categories") {
  Matrix X;
  std::vector<int> y;
  make_blobs(10, 3, 2.0, X, y, 61);
  EmbedderConfig cfg;
  cfg.dim = 4;
  cfg.epochs = 2;
  JointEmbedder emb = train_embedder(X, y, 2, cfg, 67);
  CHECK_THROWS_AS(emb.embed_text(-1), std::invalid_argument);
  CHECK_THROWS_AS(emb.embed_text(2), std::invalid_argument);
}

TEST_CASE("embedder checkpoint round-trips bitwise") {
  Matrix X;
  std::vector<int> y;
  make_blobs(20, 4, 2.0, X, y, 71);
  EmbedderConfig cfg;
  cfg.dim = 5;
  cfg.epochs = 5;
  JointEmbedder emb = train_embedder(X, y, 2, cfg, 73);

  auto dir = temp_dir("emb_ckpt");
  emb.save(dir, 73, "h");
  JointEmbedder back = JointEmbedder::load(dir);
  CHECK(back.dim() == 5);
  CHECK((back.embed_image(X) - emb.embed_image(X)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.embed_text(1) - emb.embed_text(1)).cwiseAbs().maxCoeff() == 0.0);
  std::filesystem::remove_all(dir);
}

// ---------------------------------------------------------------------------
// denoiser

namespace {

struct TinyWorld {
  Matrix X;
  std::vector<int> y;
  JointEmbedder embedder;
  NoiseSchedule schedule;
  NoisePredictor denoiser;
};

TinyWorld make_tiny_world() {
  TinyWorld w;
  make_blobs(40, 4, 2.5, w.X, w.y, 81);
  EmbedderConfig ecfg;
  ecfg.dim = 5;
  ecfg.epochs = 8;
  w.embedder = train_embedder(w.X, w.y, 2, ecfg, 83);
  w.schedule = build_schedule(ScheduleKind::LinearBeta, 10, {1e-4, 0.05});
  DenoiserConfig dcfg;
  dcfg.hidden = {32};
  dcfg.epochs = 8;
  w.denoiser = train_denoiser(w.X, w.y, w.embedder, w.schedule, dcfg, 87);
  return w;
}

}  // namespace

TEST_CASE("denoiser eps is deterministic and batch-consistent") {
  TinyWorld w = make_tiny_world();
  RngStream rng(91);
  Matrix Z = rng.normal_matrix(6, 4);
  Vector c = w.embedder.embed_image_one(w.X.row(0).transpose());
  Vector yt = w.embedder.embed_text(0);

  Matrix e1 = w.denoiser.eps(Z, 3, c, yt);
  Matrix e2 = w.denoiser.eps(Z, 3, c, yt);
  CHECK((e1 - e2).cwiseAbs().maxCoeff() == 0.0);
  CHECK(e1.rows() == 6);
  CHECK(e1.cols() == 4);

  std::vector<int> ts(6, 3);
  Matrix C(6, c.size()), Y(6, yt.size());
  for (int i = 0; i < 6; ++i) {
    C.row(i) = c.transpose();
    Y.row(i) = yt.transpose();
  }
  Matrix eb = w.denoiser.eps_batch(Z, ts, C, Y);
  CHECK((eb - e1).cwiseAbs().maxCoeff() == 0.0);

  // Different steps and conditions move the prediction.
  Matrix e_other_t = w.denoiser.eps(Z, 9, c, yt);
  CHECK((e_other_t - e1).cwiseAbs().maxCoeff() > 0.0);
  Matrix e_null = w.denoiser.eps(Z, 3, w.denoiser.null_image_cond(), w.denoiser.null_text_cond());
  CHECK((e_null - e1).cwiseAbs().maxCoeff() > 0.0);
}

TEST_CASE("denoiser vjp_z matches finite differences") {
  TinyWorld w = make_tiny_world();
  RngStream rng(93);
  Matrix Z = rng.normal_matrix(4, 4);
  Matrix U = rng.normal_matrix(4, 4);
  Matrix V = rng.normal_matrix(4, 4);
  Vector c = w.embedder.embed_image_one(w.X.row(1).transpose());
  Vector yt = w.embedder.embed_text(1);

  Matrix vjp = w.denoiser.vjp_z(Z, 5, c, yt, U);

  // Directional check: <vjp, V> == d/dh sum(eps(Z + h V) .* U).
  double h = 1e-6;
  Matrix ep = w.denoiser.eps(Z + h * V, 5, c, yt);
  Matrix em = w.denoiser.eps(Z - h * V, 5, c, yt);
  double fd = ((ep - em).array() * U.array()).sum() / (2 * h);
  double got = (vjp.array() * V.array()).sum();
  CHECK(rel_err(got, fd) < 1e-3);
}

TEST_CASE("training reduces the denoising loss") {
  TinyWorld w = make_tiny_world();
  RngStream rng(97);
  NoisePredictor untrained(4, 5, DenoiserConfig{{32}, 8, 0.1, 1, 256, 2e-3}, rng);
  double before = denoising_loss(untrained, w.X, w.y, w.embedder, w.schedule, 99);
  double after = denoising_loss(w.denoiser, w.X, w.y, w.embedder, w.schedule, 99);
  CHECK(after < before);
}

TEST_CASE("denoiser checkpoint round-trips bitwise") {
  TinyWorld w = make_tiny_world();
  auto dir = temp_dir("den_ckpt");
  w.denoiser.save(dir, 87, "h");
  NoisePredictor back = NoisePredictor::load(dir);
  RngStream rng(101);
  Matrix Z = rng.normal_matrix(3, 4);
  Vector c = w.embedder.embed_image_one(w.X.row(2).transpose());
  Vector yt = w.embedder.embed_text(0);
  CHECK((back.eps(Z, 4, c, yt) - w.denoiser.eps(Z, 4, c, yt)).cwiseAbs().maxCoeff() == 0.0);
  CHECK((back.null_image_cond() - w.denoiser.null_image_cond()).cwiseAbs().maxCoeff() == 0.0);
  std::filesystem::remove_all(dir);
}

// ---------------------------------------------------------------------------
// error predictor

TEST_CASE("compute_model_errors flags disagreements") {
  Matrix X;
  std::vector<int> y;
  make_blobs(30, 4, 3.0, X, y, 103);
  ClassifierConfig cfg;
  cfg.arch = "mlp_s";
  cfg.epochs = 30;
  TargetClassifier model = train_classifier(X, y, 2, cfg, 107);

  std::vector<std::uint8_t> errs = compute_model_errors(model, X, y);
  std::vector<int> preds = model.predict(X);
  REQUIRE(errs.size() == static_cast<std::size_t>(X.rows()));
  for (std::size_t i = 0; i < errs.size(); ++i)
    CHECK(errs[i] == (preds[i] != y[i] ? 1 : 0));
}

TEST_CASE("fit_error_predictor handles single-label degeneracy") {
  RngStream rng(109);
  Matrix emb = rng.normal_matrix(20, 5);
  ErrorPredictorConfig cfg;
  cfg.epochs = 5;

  ErrorPredictor all_ok = fit_error_predictor(emb, std::vector<std::uint8_t>(20, 0), cfg, 1);
  CHECK(all_ok.degenerate());
  CHECK(all_ok.prob_error(emb).maxCoeff() == 0.0);

  ErrorPredictor all_bad = fit_error_predictor(emb, std::vector<std::uint8_t>(20, 1), cfg, 1);
  CHECK(all_bad.degenerate());
  CHECK(all_bad.prob_error(emb).minCoeff() == 1.0);
}

TEST_CASE("fit_error_predictor learns a separable error region") {
  RngStream rng(113);
  int n = 120;
  Matrix emb = rng.normal_matrix(n, 4);
  std::vector<std::uint8_t> errs(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    emb(i, 0) += (i < n / 2) ? 2.0 : -2.0;
    errs[static_cast<std::size_t>(i)] = i < n / 2 ? 1 : 0;
  }
  ErrorPredictorConfig cfg;
  cfg.epochs = 400;
  ErrorPredictor ep = fit_error_predictor(emb, errs, cfg, 3);
  CHECK_FALSE(ep.degenerate());

  Vector p = ep.prob_error(emb);
  CHECK(p.minCoeff() >= 0.0);
  CHECK(p.maxCoeff() <= 1.0);
  double hi = p.head(n / 2).mean();
  double lo = p.tail(n / 2).mean();
  CHECK(hi > 0.8);
  CHECK(lo < 0.2);
  CHECK(ep.threshold() == 0.5);
}

TEST_CASE("error predictor checkpoint round-trips bitwise") {
  RngStream rng(127);
  Matrix emb = rng.normal_matrix(30, 4);
  std::vector<std::uint8_t> errs(30);
  for (int i = 0; i < 30; ++i) errs[static_cast<std::size_t>(i)] = i % 2;
  ErrorPredictorConfig cfg;
  cfg.epochs = 10;
  ErrorPredictor ep = fit_error_predictor(emb, errs, cfg, 5);

  auto dir = temp_dir("err_ckpt");
  ep.save(dir, 5, "h");
  ErrorPredictor back = ErrorPredictor::load(dir);
  CHECK((back.prob_error(emb) - ep.prob_error(emb)).cwiseAbs().maxCoeff() == 0.0);
  CHECK(back.threshold() == ep.threshold());
  CHECK(back.degenerate() == ep.degenerate());
  std::filesystem::remove_all(dir);
}

// ---------------------------------------------------------------------------
// checkpoint primitives

TEST_CASE("checkpoint save/load_array round-trips shapes and bytes") {
  RngStream rng(131);
  Matrix a = rng.normal_matrix(3, 7);
  Matrix b = rng.normal_matrix(1, 2);
  binio::snap_f32(a);
  binio::snap_f32(b);

  auto dir = temp_dir("ckpt_prim");
  checkpoint::save(dir, {{"kind", "test"}}, {{"a", &a}, {"b", &b}});
  auto manifest = checkpoint::load_manifest(dir);
  CHECK(manifest.at("kind") == "test");
  Matrix a2 = checkpoint::load_array(dir, manifest, "a");
  Matrix b2 = checkpoint::load_array(dir, manifest, "b");
  CHECK((a2 - a).cwiseAbs().maxCoeff() == 0.0);
  CHECK((b2 - b).cwiseAbs().maxCoeff() == 0.0);
  CHECK_THROWS_AS(checkpoint::load_array(dir, manifest, "missing"), std::runtime_error);
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(checkpoint::load_manifest(dir), std::runtime_error);
}

TEST_CASE("checkpoint save replaces an existing directory atomically") {
  Matrix a = Matrix::Ones(2, 2);
  auto dir = temp_dir("ckpt_replace");
  checkpoint::save(dir, {{"v", 1}}, {{"a", &a}});
  Matrix b = Matrix::Constant(2, 2, 5.0);
  checkpoint::save(dir, {{"v", 2}}, {{"a", &b}});
  auto manifest = checkpoint::load_manifest(dir);
  CHECK(manifest.at("v") == 2);
  CHECK(checkpoint::load_array(dir, manifest, "a")(0, 0) == 5.0);
  std::filesystem::remove_all(dir);
}
