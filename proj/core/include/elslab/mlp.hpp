#pragma once

#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "elslab/rng.hpp"
#include "elslab/tensor.hpp"

namespace elslab {

enum class Activation { relu, tanh };

const char* activation_name(Activation a);
Activation activation_from_name(const std::string& name);

// A fully-connected net: layer_dims = {in, hidden..., out}. Hidden layers use
// the activation; the final layer emits raw logits. Weights are row-major
// [in x out] so a batch forwards as x * W + b.
struct MlpParams {
  std::vector<int> layer_dims;
  Activation activation = Activation::tanh;
  std::vector<std::vector<double>> weights;
  std::vector<std::vector<double>> biases;

  int num_layers() const { return static_cast<int>(weights.size()); }
  int in_dim() const { return layer_dims.front(); }
  int out_dim() const { return layer_dims.back(); }
  std::size_t num_params() const;
  void validate() const;
};

// Uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] from the given stream.
MlpParams init_mlp(std::vector<int> layer_dims, Activation act, Rng& rng);

// Parameter tensors loaded onto a tape for one forward/backward pass.
struct TapeMlp {
  std::vector<Tensor> w, b;
};

TapeMlp load_mlp(Tape& tape, const MlpParams& params);
Tensor mlp_forward(Tape& tape, const TapeMlp& on_tape, const Tensor& x,
                   Activation act);
// Convenience for read-only passes (no gradient access to the params).
Tensor mlp_forward(Tape& tape, const MlpParams& params, const Tensor& x);

struct MlpGrads {
  std::vector<std::vector<double>> w, b;
};

// Valid after Tape::backward on a loss reachable from these tensors.
MlpGrads read_mlp_grads(const TapeMlp& on_tape);

std::vector<double> flatten_params(const MlpParams& p);
void unflatten_params(MlpParams& p, std::span<const double> flat);
std::vector<double> flatten_grads(const MlpGrads& g);

// w <- w - lr * v with v <- momentum * v + grad; velocities persist across
// calls on the same optimizer instance.
class Sgd {
 public:
  Sgd(double lr, double momentum = 0.0);
  void step(MlpParams& params, const MlpGrads& grads);
  double lr() const { return lr_; }

 private:
  double lr_, momentum_;
  std::vector<std::vector<double>> vw_, vb_;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_coordinate = 0;
  double eps = 0.0;
};

// Central finite differences of f around `point`, compared coordinate-wise
// against `autodiff_grad` with rel error |a-b| / max(1e-8, |a|+|b|).
GradCheckReport grad_check(const std::function<double(std::span<const double>)>& f,
                           std::span<const double> autodiff_grad,
                           std::vector<double> point, double eps);

// Flat text checkpoint: layer dims, activation, then each weight/bias matrix
// as rows of decimals with 17 significant digits; round-trips bit-exactly.
void save_mlp(std::ostream& os, const MlpParams& p);
MlpParams load_mlp_checkpoint(std::istream& is);

}  // namespace elslab
