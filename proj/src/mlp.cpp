#include "riskgen/mlp.hpp"

#include <cmath>
#include <stdexcept>

namespace riskgen {

double silu(double x) {
  double s = 1.0 / (1.0 + std::exp(-x));
  return x * s;
}

double silu_grad(double x) {
  double s = 1.0 / (1.0 + std::exp(-x));
  return s * (1.0 + x * (1.0 - s));
}

Mlp::Mlp(const std::vector<int>& dims, RngStream& rng) : dims_(dims) {
  if (dims_.size() < 2) throw std::invalid_argument("Mlp: need at least input and output dims");
  for (int d : dims_)
    if (d <= 0) throw std::invalid_argument("Mlp: dims must be positive");
  for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
    int in = dims_[l];
    int out = dims_[l + 1];
    double std_dev = std::sqrt(2.0 / static_cast<double>(in + out));
    weights_.push_back(rng.normal_matrix(in, out) * std_dev);
    biases_.push_back(Matrix::Zero(1, out));
  }
}

Mlp Mlp::with_zeros(const std::vector<int>& dims) {
  Mlp net;
  net.dims_ = dims;
  if (dims.size() < 2) throw std::invalid_argument("Mlp: need at least input and output dims");
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    net.weights_.push_back(Matrix::Zero(dims[l], dims[l + 1]));
    net.biases_.push_back(Matrix::Zero(1, dims[l + 1]));
  }
  return net;
}

Matrix Mlp::forward(const Matrix& X) const {
  Cache unused;
  return forward(X, unused);
}

Matrix Mlp::forward(const Matrix& X, Cache& cache) const {
  if (X.cols() != input_dim()) throw std::invalid_argument("Mlp::forward: input dim mismatch");
  cache.inputs.clear();
  cache.pre.clear();
  Matrix h = X;
  for (int l = 0; l < num_layers(); ++l) {
    cache.inputs.push_back(h);
    Matrix z = h * weights_[static_cast<std::size_t>(l)];
    z.rowwise() += biases_[static_cast<std::size_t>(l)].row(0);
    cache.pre.push_back(z);
    if (l + 1 < num_layers()) {
      h = z.unaryExpr([](double v) { return silu(v); });
    } else {
      h = z;
    }
  }
  return h;
}

Mlp::Grads Mlp::zero_grads() const {
  Grads g;
  for (int l = 0; l < num_layers(); ++l) {
    g.dW.push_back(Matrix::Zero(weights_[static_cast<std::size_t>(l)].rows(),
                                weights_[static_cast<std::size_t>(l)].cols()));
    g.db.push_back(Matrix::Zero(1, biases_[static_cast<std::size_t>(l)].cols()));
  }
  return g;
}

Matrix Mlp::backward(const Cache& cache, const Matrix& dY, Grads& grads) const {
  if (static_cast<int>(cache.pre.size()) != num_layers())
    throw std::invalid_argument("Mlp::backward: stale cache");
  Matrix delta = dY;
  for (int l = num_layers() - 1; l >= 0; --l) {
    const Matrix& in = cache.inputs[static_cast<std::size_t>(l)];
    if (l != num_layers() - 1) {
      const Matrix& pre = cache.pre[static_cast<std::size_t>(l)];
      delta = delta.cwiseProduct(pre.unaryExpr([](double v) { return silu_grad(v); }));
    }
    grads.dW[static_cast<std::size_t>(l)] += in.transpose() * delta;
    grads.db[static_cast<std::size_t>(l)] += delta.colwise().sum();
    delta = delta * weights_[static_cast<std::size_t>(l)].transpose();
  }
  return delta;  // dLoss/dX after the layer-0 chain rule
}

Matrix Mlp::input_grad(const Matrix& X, const Matrix& dY) const {
  Cache cache;
  forward(X, cache);
  Grads grads = zero_grads();
  return backward(cache, dY, grads);
}

std::vector<std::pair<std::string, Matrix*>> Mlp::named_params() {
  std::vector<std::pair<std::string, Matrix*>> out;
  for (int l = 0; l < num_layers(); ++l) {
    out.emplace_back("W" + std::to_string(l), &weights_[static_cast<std::size_t>(l)]);
    out.emplace_back("b" + std::to_string(l), &biases_[static_cast<std::size_t>(l)]);
  }
  return out;
}

std::vector<std::pair<std::string, const Matrix*>> Mlp::named_params() const {
  std::vector<std::pair<std::string, const Matrix*>> out;
  for (int l = 0; l < num_layers(); ++l) {
    out.emplace_back("W" + std::to_string(l), &weights_[static_cast<std::size_t>(l)]);
    out.emplace_back("b" + std::to_string(l), &biases_[static_cast<std::size_t>(l)]);
  }
  return out;
}

void Mlp::snap_f32() {
  for (auto& w : weights_)
    for (Eigen::Index i = 0; i < w.size(); ++i)
      w.data()[i] = static_cast<double>(static_cast<float>(w.data()[i]));
  for (auto& b : biases_)
    for (Eigen::Index i = 0; i < b.size(); ++i)
      b.data()[i] = static_cast<double>(static_cast<float>(b.data()[i]));
}

AdamState::AdamState(const std::vector<Matrix*>& params) {
  for (const Matrix* p : params)
    slots_.push_back(AdamSlot{Matrix::Zero(p->rows(), p->cols()),
                              Matrix::Zero(p->rows(), p->cols())});
}

void AdamState::step(const std::vector<Matrix*>& params,
                     const std::vector<const Matrix*>& grads, const AdamConfig& cfg) {
  if (params.size() != slots_.size() || grads.size() != slots_.size())
    throw std::invalid_argument("AdamState::step: param/grad count mismatch");
  ++step_count_;
  double bc1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(step_count_));
  double bc2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(step_count_));
  for (std::size_t i = 0; i < slots_.size(); ++i) {
    Matrix g = *grads[i];
    if (cfg.weight_decay != 0.0) g += cfg.weight_decay * (*params[i]);
    AdamSlot& slot = slots_[i];
    slot.m = cfg.beta1 * slot.m + (1.0 - cfg.beta1) * g;
    slot.v = cfg.beta2 * slot.v + (1.0 - cfg.beta2) * g.cwiseProduct(g);
    Matrix m_hat = slot.m / bc1;
    Matrix v_hat = slot.v / bc2;
    *params[i] -= cfg.lr * (m_hat.array() / (v_hat.array().sqrt() + cfg.eps)).matrix();
  }
}

}  // namespace riskgen
