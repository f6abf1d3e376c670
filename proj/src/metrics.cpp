#include "riskgen/metrics.hpp"

#include <Eigen/Eigenvalues>

#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>

namespace riskgen {

namespace {

Matrix stack_samples(const std::vector<GeneratedSample>& samples) {
  if (samples.empty()) {
    throw std::invalid_argument("metrics: empty sample list");
  }
  const Eigen::Index dim = samples.front().x.size();
  Matrix X(static_cast<Eigen::Index>(samples.size()), dim);
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (samples[i].x.size() != dim) {
      throw std::invalid_argument("metrics: inconsistent sample dimensions");
    }
    X.row(static_cast<Eigen::Index>(i)) = samples[i].x.transpose();
  }
  return X;
}

/// Symmetric PSD square root; eigenvalues clamped at zero.
Matrix psd_sqrt(const Matrix& S) {
  Eigen::SelfAdjointEigenSolver<Matrix> es(S);
  if (es.info() != Eigen::Success) {
    throw std::runtime_error("frechet: eigendecomposition failed");
  }
  Vector lam = es.eigenvalues().cwiseMax(0.0).cwiseSqrt();
  return es.eigenvectors() * lam.asDiagonal() * es.eigenvectors().transpose();
}

Matrix covariance(const Matrix& X) {
  Matrix centered = X.rowwise() - X.colwise().mean();
  return (centered.transpose() * centered) / static_cast<double>(X.rows() - 1);
}

Vector diag_variance(const Matrix& X) {
  Matrix centered = X.rowwise() - X.colwise().mean();
  return centered.array().square().colwise().sum().transpose() /
         static_cast<double>(X.rows() - 1);
}

}  // namespace

double error_rate(const std::vector<GeneratedSample>& samples, const TargetClassifier& model) {
  Matrix X = stack_samples(samples);
  std::vector<int> pred = model.predict(X);
  int errors = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    if (pred[i] != samples[i].intended_category) {
      ++errors;
    }
  }
  return static_cast<double>(errors) / static_cast<double>(samples.size());
}

double conformity_rate(const std::vector<GeneratedSample>& samples, const BayesOracle& oracle) {
  if (samples.empty()) {
    throw std::invalid_argument("conformity_rate: empty sample list");
  }
  int match = 0;
  for (const GeneratedSample& s : samples) {
    if (oracle.predict_one(s.x) == s.intended_category) {
      ++match;
    }
  }
  return static_cast<double>(match) / static_cast<double>(samples.size());
}

FrechetResult frechet_embedding_distance(const Matrix& a, const Matrix& b) {
  if (a.rows() < 2 || b.rows() < 2) {
    throw std::invalid_argument("frechet: need at least two samples per side");
  }
  if (a.cols() != b.cols()) {
    throw std::invalid_argument("frechet: dimension mismatch");
  }
  const Eigen::Index d = a.cols();
  Vector mu1 = a.colwise().mean().transpose();
  Vector mu2 = b.colwise().mean().transpose();
  double mean_term = (mu1 - mu2).squaredNorm();

  FrechetResult out;
  if (std::min(a.rows(), b.rows()) <= d + 1) {
    // Too few samples for a stable full covariance; use the diagonal form,
    // where (S1 S2)^(1/2) is elementwise sqrt(v1 * v2).
    Vector v1 = diag_variance(a);
    Vector v2 = diag_variance(b);
    double tr = (v1 + v2 - 2.0 * (v1.cwiseProduct(v2)).cwiseSqrt()).sum();
    out.value = mean_term + tr;
    out.diagonal = true;
  } else {
    Matrix S1 = covariance(a);
    Matrix S2 = covariance(b);
    Matrix S2h = psd_sqrt(S2);
    Matrix M = S2h * S1 * S2h;
    M = 0.5 * (M + M.transpose().eval());
    Eigen::SelfAdjointEigenSolver<Matrix> es(M);
    if (es.info() != Eigen::Success) {
      throw std::runtime_error("frechet: eigendecomposition failed");
    }
    double tr_sqrt = es.eigenvalues().cwiseMax(0.0).cwiseSqrt().sum();
    out.value = mean_term + S1.trace() + S2.trace() - 2.0 * tr_sqrt;
    out.diagonal = false;
  }
  if (out.value < 0.0) {
    if (out.value < -1e-8) {
      throw std::runtime_error("frechet: negative distance beyond numerical tolerance");
    }
    out.value = 0.0;
  }
  return out;
}

std::string TransferMatrix::to_csv() const {
  std::string csv = "model_id,is_source,error_rate\n";
  for (const TransferRow& r : rows) {
    csv += r.model_id;
    csv += r.is_source ? ",1," : ",0,";
    csv += fmt_double(r.error_rate);
    csv += "\n";
  }
  return csv;
}

TransferMatrix transfer_matrix(const std::vector<GeneratedSample>& samples,
                               const std::vector<std::pair<std::string, const TargetClassifier*>>& models,
                               const std::string& source_model) {
  if (models.empty()) {
    throw std::invalid_argument("transfer_matrix: no models given");
  }
  Matrix X = stack_samples(samples);
  TransferMatrix tm;
  tm.source_model = source_model;
  for (const auto& [id, model] : models) {
    std::vector<int> pred = model->predict(X);
    int errors = 0;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (pred[i] != samples[i].intended_category) {
        ++errors;
      }
    }
    tm.rows.push_back(TransferRow{
        id, id == source_model,
        static_cast<double>(errors) / static_cast<double>(samples.size())});
  }
  return tm;
}

nlohmann::json EvalReport::to_json() const {
  nlohmann::json j;
  j["sample_count"] = sample_count;
  j["error_rate"] = error_rate;
  j["conformity"] = conformity;
  if (frechet.has_value()) {
    j["frechet"] = frechet->value;
    j["frechet_diagonal"] = frechet->diagonal;
  } else {
    j["frechet"] = nullptr;
    j["frechet_diagonal"] = nullptr;
  }
  nlohmann::json per = nlohmann::json::array();
  for (const CategoryMetrics& c : per_category) {
    nlohmann::json jc;
    jc["category"] = c.category;
    jc["count"] = c.count;
    jc["error_rate"] = c.error_rate;
    jc["conformity"] = c.conformity;
    if (c.frechet.has_value()) {
      jc["frechet"] = c.frechet->value;
      jc["frechet_diagonal"] = c.frechet->diagonal;
    } else {
      jc["frechet"] = nullptr;
      jc["frechet_diagonal"] = nullptr;
    }
    per.push_back(jc);
  }
  j["per_category"] = per;
  j["config"] = config;
  return j;
}

EvalReport evaluate_samples(const std::vector<GeneratedSample>& samples,
                            const TargetClassifier& target, const JointEmbedder& embedder,
                            const BayesOracle& oracle, const Matrix& ref_embeddings,
                            const std::vector<int>& ref_labels, const nlohmann::json& config) {
  if (ref_embeddings.rows() != static_cast<Eigen::Index>(ref_labels.size())) {
    throw std::invalid_argument("evaluate_samples: reference embeddings/labels mismatch");
  }
  Matrix X = stack_samples(samples);
  Matrix gen_emb = embedder.embed_image(X);
  std::vector<int> pred = target.predict(X);

  EvalReport report;
  report.sample_count = static_cast<int>(samples.size());
  report.config = config;

  std::set<int> cats;
  int errors = 0;
  int conform = 0;
  for (std::size_t i = 0; i < samples.size(); ++i) {
    cats.insert(samples[i].intended_category);
    if (pred[i] != samples[i].intended_category) {
      ++errors;
    }
    if (oracle.predict_one(samples[i].x) == samples[i].intended_category) {
      ++conform;
    }
  }
  report.error_rate = static_cast<double>(errors) / static_cast<double>(samples.size());
  report.conformity = static_cast<double>(conform) / static_cast<double>(samples.size());
  if (gen_emb.rows() >= 2 && ref_embeddings.rows() >= 2) {
    report.frechet = frechet_embedding_distance(gen_emb, ref_embeddings);
  }

  for (int cat : cats) {
    CategoryMetrics cm;
    cm.category = cat;
    std::vector<Eigen::Index> gen_rows;
    for (std::size_t i = 0; i < samples.size(); ++i) {
      if (samples[i].intended_category == cat) {
        gen_rows.push_back(static_cast<Eigen::Index>(i));
        ++cm.count;
        if (pred[i] != cat) {
          cm.error_rate += 1.0;
        }
        if (oracle.predict_one(samples[i].x) == cat) {
          cm.conformity += 1.0;
        }
      }
    }
    cm.error_rate /= static_cast<double>(cm.count);
    cm.conformity /= static_cast<double>(cm.count);

    std::vector<Eigen::Index> ref_rows;
    for (std::size_t i = 0; i < ref_labels.size(); ++i) {
      if (ref_labels[i] == cat) {
        ref_rows.push_back(static_cast<Eigen::Index>(i));
      }
    }
    if (gen_rows.size() >= 2 && ref_rows.size() >= 2) {
      Matrix ge(static_cast<Eigen::Index>(gen_rows.size()), gen_emb.cols());
      for (std::size_t i = 0; i < gen_rows.size(); ++i) {
        ge.row(static_cast<Eigen::Index>(i)) = gen_emb.row(gen_rows[i]);
      }
      Matrix re(static_cast<Eigen::Index>(ref_rows.size()), ref_embeddings.cols());
      for (std::size_t i = 0; i < ref_rows.size(); ++i) {
        re.row(static_cast<Eigen::Index>(i)) = ref_embeddings.row(ref_rows[i]);
      }
      cm.frechet = frechet_embedding_distance(ge, re);
    }
    report.per_category.push_back(cm);
  }
  return report;
}

}  // namespace riskgen
