#include "riskgen/sampler.hpp"

#include "riskgen/binio.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <limits>
#include <sstream>
#include <stdexcept>
#include <string>

namespace riskgen {

namespace {

constexpr char kSampleMagic[4] = {'R', 'G', 'S', 'D'};
constexpr std::uint32_t kSampleVersion = 1;

Vector draw_condition(const CategoryStats& stats, RngStream& rng) {
  Vector c = stats.mu;
  for (int i = 0; i < c.size(); ++i) {
    c[i] += std::sqrt(stats.sigma2[i]) * rng.normal();
  }
  return c;
}

}  // namespace

CategoryStats estimate_category_stats(const Matrix& embeddings, const std::vector<int>& labels,
                                      int category) {
  if (embeddings.rows() != static_cast<Eigen::Index>(labels.size())) {
    throw std::invalid_argument("estimate_category_stats: embeddings/labels size mismatch");
  }
  CategoryStats st;
  st.category = category;
  st.mu = Vector::Zero(embeddings.cols());
  st.sigma2 = Vector::Zero(embeddings.cols());
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == category) {
      st.mu += embeddings.row(static_cast<Eigen::Index>(i)).transpose();
      ++st.count;
    }
  }
  if (st.count == 0) {
    throw std::invalid_argument("estimate_category_stats: no samples for category " +
                                std::to_string(category));
  }
  st.mu /= static_cast<double>(st.count);
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] == category) {
      Vector d = embeddings.row(static_cast<Eigen::Index>(i)).transpose() - st.mu;
      st.sigma2 += d.cwiseProduct(d);
    }
  }
  st.sigma2 /= static_cast<double>(st.count);
  st.degenerate = st.count < 2;
  return st;
}

void GuidanceConfig::validate() const {
  if (s < 0.0 || !std::isfinite(s)) {
    throw std::invalid_argument("guidance: s must be finite and non-negative");
  }
  if (lambda < 0.0 || !std::isfinite(lambda)) {
    throw std::invalid_argument("guidance: lambda must be finite and non-negative");
  }
  if (max_screen_attempts < 1) {
    throw std::invalid_argument("guidance: max_screen_attempts must be at least 1");
  }
  if (grad_norm_floor <= 0.0) {
    throw std::invalid_argument("guidance: grad_norm_floor must be positive");
  }
  if (!std::isfinite(cfg_weight)) {
    throw std::invalid_argument("guidance: cfg_weight must be finite");
  }
  if (loss_temperature <= 0.0 || !std::isfinite(loss_temperature)) {
    throw std::invalid_argument("guidance: loss_temperature must be positive");
  }
}

GuidanceConfig GuidanceConfig::few_category_preset() {
  GuidanceConfig cfg;
  cfg.s = 20.0;
  return cfg;
}

ScreenResult screen_embedding(const CategoryStats& stats, const ErrorPredictor& err,
                              int max_attempts, RngStream& rng) {
  if (max_attempts < 1) {
    throw std::invalid_argument("screen_embedding: max_attempts must be at least 1");
  }
  ScreenResult best;
  best.prob_error = -1.0;
  for (int attempt = 1; attempt <= max_attempts; ++attempt) {
    Vector c = draw_condition(stats, rng);
    double p = err.prob_error_one(c);
    if (p >= err.threshold()) {
      return ScreenResult{std::move(c), true, attempt, p};
    }
    if (p > best.prob_error) {
      best.c = std::move(c);
      best.prob_error = p;
    }
  }
  best.accepted = false;
  best.attempts = max_attempts;
  return best;
}

ScoreResult guidance_score(const Matrix& x_hat, int category, const TargetClassifier& classifier,
                           const JointEmbedder& embedder, const Vector& y_text, double lambda,
                           double loss_temperature, bool want_grad) {
  if (category < 0 || category >= classifier.num_classes()) {
    throw std::invalid_argument("guidance_score: category out of range");
  }
  const Eigen::Index n = x_hat.rows();
  std::vector<int> labels(static_cast<std::size_t>(n), category);
  ScoreResult out;
  if (want_grad) {
    out.grad = classifier.ce_input_grad(x_hat, labels, loss_temperature, &out.value);
  } else {
    out.value = classifier.ce_loss(x_hat, labels, loss_temperature);
  }
  if (lambda != 0.0) {
    Matrix h = embedder.embed_image(x_hat);
    out.value += lambda * (h * y_text);
    if (want_grad) {
      out.grad += lambda * embedder.inner_grad(x_hat, y_text);
    }
  }
  return out;
}

GuidedNoise guided_noise(const LatentBatch& zt, const Vector& c, const Vector& y_text,
                         const NoiseModel& model, const Decoder& decoder, const ScoreFn& score,
                         const GuidanceConfig& cfg, const NoiseSchedule& schedule) {
  cfg.validate();
  const int t = zt.step;
  if (t < 1 || t > schedule.steps()) {
    throw std::invalid_argument("guided_noise: step out of range");
  }
  const Eigen::Index n = zt.data.rows();
  const double w = cfg.cfg_weight;

  GuidedNoise out;
  Matrix eps_c = model.eps(zt.data, t, c, y_text);
  if (w == 1.0) {
    out.eps_base = std::move(eps_c);
  } else {
    Matrix eps_u = model.eps(zt.data, t, model.null_image_cond(), model.null_text_cond());
    out.eps_base = eps_u + w * (eps_c - eps_u);
  }
  if (!all_finite(out.eps_base)) {
    throw GenerationError("non-finite base noise prediction", t, -1);
  }

  out.fired.assign(static_cast<std::size_t>(n), 0);
  out.grad_norm = Vector::Zero(n);
  if (cfg.s == 0.0) {
    // Bitwise identical to the unguided path: no score evaluation at all.
    out.eps_hat = out.eps_base;
    out.score = Vector::Constant(n, std::numeric_limits<double>::quiet_NaN());
    return out;
  }

  const double sqrt_ab = std::sqrt(schedule.alpha_bar(t));
  const double sqrt_om = std::sqrt(1.0 - schedule.alpha_bar(t));

  LatentBatch z0 = predict_z0(zt, out.eps_base, t, schedule);
  Matrix x_hat = decoder.decode(z0.data);
  ScoreResult sc = score(x_hat);
  if (sc.value.size() != n || sc.grad.rows() != n || sc.grad.cols() != x_hat.cols()) {
    throw std::invalid_argument("guided_noise: score function returned wrong shape");
  }
  out.score = sc.value;

  // Chain dS/dx_hat back to the latent z_t. With eps treated as a function of
  // z_t, d z0 / d z_t = (I - sqrt(1 - ab) * J_eps) / sqrt(ab).
  Matrix u = decoder.vjp(z0.data, sc.grad);
  Matrix dz;
  if (cfg.stop_grad_through_denoiser) {
    dz = u / sqrt_ab;
  } else {
    Matrix jtu;
    if (w == 1.0) {
      jtu = model.vjp_z(zt.data, t, c, y_text, u);
    } else {
      jtu = (1.0 - w) * model.vjp_z(zt.data, t, model.null_image_cond(), model.null_text_cond(), u) +
            w * model.vjp_z(zt.data, t, c, y_text, u);
    }
    dz = (u - sqrt_om * jtu) / sqrt_ab;
  }
  if (!all_finite(dz)) {
    throw GenerationError("non-finite guidance gradient", t, -1);
  }

  out.eps_hat = out.eps_base;
  for (Eigen::Index i = 0; i < n; ++i) {
    double g = dz.row(i).norm();
    out.grad_norm[i] = g;
    if (g < cfg.grad_norm_floor) {
      continue;
    }
    out.fired[static_cast<std::size_t>(i)] = 1;
    out.eps_hat.row(i) -= (cfg.s * sqrt_om / g) * dz.row(i);
  }
  if (!all_finite(out.eps_hat)) {
    throw GenerationError("non-finite guided noise prediction", t, -1);
  }
  return out;
}

namespace {

void check_bundle(const ModelBundle& m) {
  if (m.denoiser == nullptr || m.decoder == nullptr || m.target == nullptr ||
      m.embedder == nullptr) {
    throw std::invalid_argument("generate: model bundle has null entries");
  }
}

GeneratedSample finish_sample(Matrix z0_row, const ModelBundle& models, int category) {
  GeneratedSample s;
  Matrix x = models.decoder->decode(z0_row);
  binio::snap_f32(x);
  s.x = x.row(0).transpose();
  s.intended_category = category;
  s.prediction = models.target->predict_one(s.x);
  s.is_risky = s.prediction != category;
  return s;
}

}  // namespace

std::vector<GeneratedSample> generate(int category, int count, const ModelBundle& models,
                                      const CategoryStats& stats, const ErrorPredictor& err,
                                      const NoiseSchedule& schedule, const GuidanceConfig& cfg,
                                      std::uint64_t seed, bool record_trace) {
  check_bundle(models);
  cfg.validate();
  if (count < 0) {
    throw std::invalid_argument("generate: count must be non-negative");
  }
  if (category < 0 || category >= models.embedder->num_classes()) {
    throw std::invalid_argument("generate: category out of range");
  }
  const int T = schedule.steps();
  const int dim = models.denoiser->z_dim();
  Vector y_text = models.embedder->embed_text(category);
  ScoreFn score = [&](const Matrix& x_hat) {
    return guidance_score(x_hat, category, *models.target, *models.embedder, y_text, cfg.lambda,
                          cfg.loss_temperature, true);
  };

  std::vector<GeneratedSample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    RngStream screen_rng(derive_seed(seed, "screen", {static_cast<std::uint64_t>(category),
                                                      static_cast<std::uint64_t>(i)}));
    ScreenResult sr;
    if (cfg.screening) {
      sr = screen_embedding(stats, err, cfg.max_screen_attempts, screen_rng);
    } else {
      sr.c = draw_condition(stats, screen_rng);
      sr.accepted = false;
      sr.attempts = 0;
    }

    RngStream init_rng(derive_seed(seed, "init", {static_cast<std::uint64_t>(category),
                                                  static_cast<std::uint64_t>(i)}));
    LatentBatch z{init_rng.normal_matrix(1, dim), T};
    std::vector<StepTrace> trace;
    for (int t = T; t >= 1; --t) {
      GuidedNoise gn;
      try {
        gn = guided_noise(z, sr.c, y_text, *models.denoiser, *models.decoder, score, cfg, schedule);
      } catch (const GenerationError& e) {
        throw GenerationError(e.what(), e.step(), i);
      }
      if (record_trace) {
        trace.push_back(StepTrace{t, gn.score[0], gn.grad_norm[0], gn.fired[0] != 0});
      }
      z = ddim_step(z, gn.eps_hat, t, schedule);
    }

    GeneratedSample s = finish_sample(z.data, models, category);
    s.embedding_condition = sr.c;
    s.screen_attempts = sr.attempts;
    s.screen_accepted = sr.accepted;
    s.trace = std::move(trace);
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<GeneratedSample> sample_unguided(int category, int count, const ModelBundle& models,
                                             const CategoryStats& stats,
                                             const NoiseSchedule& schedule, std::uint64_t seed) {
  check_bundle(models);
  if (count < 0) {
    throw std::invalid_argument("sample_unguided: count must be non-negative");
  }
  if (category < 0 || category >= models.embedder->num_classes()) {
    throw std::invalid_argument("sample_unguided: category out of range");
  }
  const int T = schedule.steps();
  const int dim = models.denoiser->z_dim();
  Vector y_text = models.embedder->embed_text(category);

  std::vector<GeneratedSample> out;
  out.reserve(static_cast<std::size_t>(count));
  for (int i = 0; i < count; ++i) {
    RngStream screen_rng(derive_seed(seed, "screen", {static_cast<std::uint64_t>(category),
                                                      static_cast<std::uint64_t>(i)}));
    Vector c = draw_condition(stats, screen_rng);

    RngStream init_rng(derive_seed(seed, "init", {static_cast<std::uint64_t>(category),
                                                  static_cast<std::uint64_t>(i)}));
    LatentBatch z{init_rng.normal_matrix(1, dim), T};
    for (int t = T; t >= 1; --t) {
      Matrix eps = models.denoiser->eps(z.data, t, c, y_text);
      if (!all_finite(eps)) {
        throw GenerationError("non-finite noise prediction", t, i);
      }
      z = ddim_step(z, eps, t, schedule);
    }

    GeneratedSample s = finish_sample(z.data, models, category);
    s.embedding_condition = std::move(c);
    out.push_back(std::move(s));
  }
  return out;
}

void save_samples(const std::vector<GeneratedSample>& samples, const nlohmann::json& header_extra,
                  const std::filesystem::path& bin_path, const std::filesystem::path& csv_path) {
  if (samples.empty()) {
    throw std::invalid_argument("save_samples: empty sample list");
  }
  const Eigen::Index n = static_cast<Eigen::Index>(samples.size());
  const Eigen::Index dim = samples.front().x.size();
  const Eigen::Index cdim = samples.front().embedding_condition.size();
  Matrix x(n, dim);
  Matrix cond(n, cdim);
  std::vector<int> intended, prediction, risky, attempts, accepted;
  for (Eigen::Index i = 0; i < n; ++i) {
    const GeneratedSample& s = samples[static_cast<std::size_t>(i)];
    if (s.x.size() != dim || s.embedding_condition.size() != cdim) {
      throw std::invalid_argument("save_samples: inconsistent sample shapes");
    }
    x.row(i) = s.x.transpose();
    cond.row(i) = s.embedding_condition.transpose();
    intended.push_back(s.intended_category);
    prediction.push_back(s.prediction);
    risky.push_back(s.is_risky ? 1 : 0);
    attempts.push_back(s.screen_attempts);
    accepted.push_back(s.screen_accepted ? 1 : 0);
  }

  nlohmann::json header = header_extra;
  header["count"] = n;
  header["dim"] = dim;
  header["cond_dim"] = cdim;

  std::ostringstream os(std::ios::binary);
  os.write(kSampleMagic, sizeof(kSampleMagic));
  binio::put_u32(os, kSampleVersion);
  binio::put_string(os, header.dump());
  binio::put_f32_matrix(os, x);
  binio::put_f32_matrix(os, cond);
  binio::put_i32_vector(os, intended);
  binio::put_i32_vector(os, prediction);
  binio::put_i32_vector(os, risky);
  binio::put_i32_vector(os, attempts);
  binio::put_i32_vector(os, accepted);
  binio::write_file_atomic(bin_path.string(), os.str());

  std::string csv = "id,intended_category,prediction,is_risky,screen_attempts\n";
  for (Eigen::Index i = 0; i < n; ++i) {
    char line[128];
    std::snprintf(line, sizeof(line), "%lld,%d,%d,%d,%d\n", static_cast<long long>(i),
                  intended[static_cast<std::size_t>(i)], prediction[static_cast<std::size_t>(i)],
                  risky[static_cast<std::size_t>(i)], attempts[static_cast<std::size_t>(i)]);
    csv += line;
  }
  binio::write_file_atomic(csv_path.string(), csv);
}

std::vector<GeneratedSample> load_samples(const std::filesystem::path& bin_path) {
  std::istringstream is(binio::read_file(bin_path.string()), std::ios::binary);
  char magic[4];
  is.read(magic, sizeof(magic));
  if (!is || std::memcmp(magic, kSampleMagic, sizeof(kSampleMagic)) != 0) {
    throw std::runtime_error("load_samples: bad magic in " + bin_path.string());
  }
  std::uint32_t version = binio::get_u32(is);
  if (version != kSampleVersion) {
    throw std::runtime_error("load_samples: unsupported version " + std::to_string(version));
  }
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(binio::get_string(is));
  } catch (const nlohmann::json::exception&) {
    throw std::runtime_error("load_samples: corrupt header in " + bin_path.string());
  }
  const Eigen::Index n = header.at("count").get<Eigen::Index>();
  const Eigen::Index dim = header.at("dim").get<Eigen::Index>();
  const Eigen::Index cdim = header.at("cond_dim").get<Eigen::Index>();
  Matrix x = binio::get_f32_matrix(is, static_cast<int>(n), static_cast<int>(dim));
  Matrix cond = binio::get_f32_matrix(is, static_cast<int>(n), static_cast<int>(cdim));
  const std::size_t ns = static_cast<std::size_t>(n);
  std::vector<int> intended = binio::get_i32_vector(is, ns);
  std::vector<int> prediction = binio::get_i32_vector(is, ns);
  std::vector<int> risky = binio::get_i32_vector(is, ns);
  std::vector<int> attempts = binio::get_i32_vector(is, ns);
  std::vector<int> accepted = binio::get_i32_vector(is, ns);

  std::vector<GeneratedSample> out(ns);
  for (Eigen::Index i = 0; i < n; ++i) {
    GeneratedSample& s = out[static_cast<std::size_t>(i)];
    s.x = x.row(i).transpose();
    s.embedding_condition = cond.row(i).transpose();
    s.intended_category = intended[static_cast<std::size_t>(i)];
    s.prediction = prediction[static_cast<std::size_t>(i)];
    s.is_risky = risky[static_cast<std::size_t>(i)] != 0;
    s.screen_attempts = attempts[static_cast<std::size_t>(i)];
    s.screen_accepted = accepted[static_cast<std::size_t>(i)] != 0;
  }
  return out;
}

}  // namespace riskgen
