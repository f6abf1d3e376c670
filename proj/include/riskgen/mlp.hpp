#pragma once

#include "riskgen/common.hpp"
#include "riskgen/rng.hpp"

#include <string>
#include <utility>
#include <vector>

namespace riskgen {

/// Fully connected net with SiLU hidden activations and a linear output
/// layer. Forward/backward are hand-written; backward produces both parameter
/// gradients (for training) and the input gradient (for guidance), and the
/// activation is smooth so finite-difference checks hold to tight tolerance.
class Mlp {
 public:
  Mlp() = default;

  /// dims = {in, hidden..., out}; Glorot-normal init from the stream.
  Mlp(const std::vector<int>& dims, RngStream& rng);

  /// Zero-initialized net of the given shape (checkpoint loading target).
  static Mlp with_zeros(const std::vector<int>& dims);

  int input_dim() const { return dims_.empty() ? 0 : dims_.front(); }
  int output_dim() const { return dims_.empty() ? 0 : dims_.back(); }
  const std::vector<int>& dims() const { return dims_; }
  int num_layers() const { return static_cast<int>(weights_.size()); }

  /// X is (batch x in); returns (batch x out).
  Matrix forward(const Matrix& X) const;

  struct Cache {
    std::vector<Matrix> inputs;  // inputs[l] feeds layer l; inputs[0] = X
    std::vector<Matrix> pre;     // pre-activation of each layer
  };
  Matrix forward(const Matrix& X, Cache& cache) const;

  struct Grads {
    std::vector<Matrix> dW;
    std::vector<Matrix> db;  // (1 x out) per layer
  };
  Grads zero_grads() const;

  /// dY is dLoss/dOutput; accumulates parameter grads and returns dLoss/dX.
  Matrix backward(const Cache& cache, const Matrix& dY, Grads& grads) const;

  /// Input gradient only (runs a full forward/backward internally).
  Matrix input_grad(const Matrix& X, const Matrix& dY) const;

  std::vector<std::pair<std::string, Matrix*>> named_params();
  std::vector<std::pair<std::string, const Matrix*>> named_params() const;

  /// Rounds all parameters through binary32; checkpoints store binary32, so a
  /// snapped model round-trips bitwise.
  void snap_f32();

  Matrix& weight(int l) { return weights_[static_cast<std::size_t>(l)]; }
  Matrix& bias(int l) { return biases_[static_cast<std::size_t>(l)]; }
  const Matrix& weight(int l) const { return weights_[static_cast<std::size_t>(l)]; }
  const Matrix& bias(int l) const { return biases_[static_cast<std::size_t>(l)]; }

 private:
  std::vector<int> dims_;
  std::vector<Matrix> weights_;  // weights_[l] is (dims_[l] x dims_[l+1])
  std::vector<Matrix> biases_;   // (1 x dims_[l+1])
};

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;  // L2, added to the gradient
};

/// First/second moment state for one tensor.
struct AdamSlot {
  Matrix m;
  Matrix v;
};

class AdamState {
 public:
  AdamState() = default;
  explicit AdamState(const std::vector<Matrix*>& params);

  /// One Adam update over matching (param, grad) lists.
  void step(const std::vector<Matrix*>& params, const std::vector<const Matrix*>& grads,
            const AdamConfig& cfg);

 private:
  std::vector<AdamSlot> slots_;
  long step_count_ = 0;
};

double silu(double x);
double silu_grad(double x);

}  // namespace riskgen
