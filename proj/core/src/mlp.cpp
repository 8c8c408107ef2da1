#include "elslab/mlp.hpp"

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace elslab {

const char* activation_name(Activation a) {
  return a == Activation::relu ? "relu" : "tanh";
}

Activation activation_from_name(const std::string& name) {
  if (name == "relu") return Activation::relu;
  if (name == "tanh") return Activation::tanh;
  throw OpError("unknown activation: " + name);
}

std::size_t MlpParams::num_params() const {
  std::size_t n = 0;
  for (const auto& w : weights) n += w.size();
  for (const auto& b : biases) n += b.size();
  return n;
}

void MlpParams::validate() const {
  if (layer_dims.size() < 2) {
    throw OpError("mlp: need at least input and output widths");
  }
  for (int d : layer_dims) {
    if (d <= 0) throw OpError("mlp: non-positive layer width");
  }
  const std::size_t L = layer_dims.size() - 1;
  if (weights.size() != L || biases.size() != L) {
    throw OpError("mlp: layer count mismatch");
  }
  for (std::size_t l = 0; l < L; ++l) {
    const std::size_t in = static_cast<std::size_t>(layer_dims[l]);
    const std::size_t out = static_cast<std::size_t>(layer_dims[l + 1]);
    if (weights[l].size() != in * out || biases[l].size() != out) {
      throw OpError("mlp: weight/bias size mismatch at layer " + std::to_string(l));
    }
  }
}

MlpParams init_mlp(std::vector<int> layer_dims, Activation act, Rng& rng) {
  MlpParams p;
  p.layer_dims = std::move(layer_dims);
  p.activation = act;
  const std::size_t L = p.layer_dims.size() - 1;
  p.weights.resize(L);
  p.biases.resize(L);
  for (std::size_t l = 0; l < L; ++l) {
    const int in = p.layer_dims[l];
    const int out = p.layer_dims[l + 1];
    const double bound = 1.0 / std::sqrt(static_cast<double>(in));
    p.weights[l].resize(static_cast<std::size_t>(in) * out);
    p.biases[l].resize(static_cast<std::size_t>(out));
    for (double& w : p.weights[l]) w = rng.uniform(-bound, bound);
    for (double& b : p.biases[l]) b = rng.uniform(-bound, bound);
  }
  p.validate();
  return p;
}

TapeMlp load_mlp(Tape& tape, const MlpParams& params) {
  params.validate();
  TapeMlp t;
  const std::size_t L = params.weights.size();
  t.w.reserve(L);
  t.b.reserve(L);
  for (std::size_t l = 0; l < L; ++l) {
    t.w.push_back(tape.constant(
        Shape{params.layer_dims[l], params.layer_dims[l + 1]}, params.weights[l]));
    t.b.push_back(tape.constant(Shape{1, params.layer_dims[l + 1]}, params.biases[l]));
  }
  return t;
}

Tensor mlp_forward(Tape& tape, const TapeMlp& on_tape, const Tensor& x,
                   Activation act) {
  (void)tape;
  Tensor h = x;
  const std::size_t L = on_tape.w.size();
  for (std::size_t l = 0; l < L; ++l) {
    h = add(matmul(h, on_tape.w[l]), on_tape.b[l]);
    if (l + 1 < L) {
      h = act == Activation::relu ? relu(h) : elslab::tanh(h);
    }
  }
  return h;
}

Tensor mlp_forward(Tape& tape, const MlpParams& params, const Tensor& x) {
  return mlp_forward(tape, load_mlp(tape, params), x, params.activation);
}

MlpGrads read_mlp_grads(const TapeMlp& on_tape) {
  MlpGrads g;
  g.w.reserve(on_tape.w.size());
  g.b.reserve(on_tape.b.size());
  for (const Tensor& t : on_tape.w) g.w.push_back(t.grad());
  for (const Tensor& t : on_tape.b) g.b.push_back(t.grad());
  return g;
}

std::vector<double> flatten_params(const MlpParams& p) {
  std::vector<double> out;
  out.reserve(p.num_params());
  for (const auto& w : p.weights) out.insert(out.end(), w.begin(), w.end());
  for (const auto& b : p.biases) out.insert(out.end(), b.begin(), b.end());
  return out;
}

void unflatten_params(MlpParams& p, std::span<const double> flat) {
  std::size_t k = 0;
  for (auto& w : p.weights) {
    for (double& v : w) v = flat[k++];
  }
  for (auto& b : p.biases) {
    for (double& v : b) v = flat[k++];
  }
  if (k != flat.size()) throw OpError("unflatten_params: length mismatch");
}

std::vector<double> flatten_grads(const MlpGrads& g) {
  std::vector<double> out;
  for (const auto& w : g.w) out.insert(out.end(), w.begin(), w.end());
  for (const auto& b : g.b) out.insert(out.end(), b.begin(), b.end());
  return out;
}

Sgd::Sgd(double lr, double momentum) : lr_(lr), momentum_(momentum) {
  if (lr <= 0.0) throw OpError("sgd: lr must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) throw OpError("sgd: momentum must be in [0, 1)");
}

void Sgd::step(MlpParams& params, const MlpGrads& grads) {
  if (vw_.empty()) {
    vw_.resize(params.weights.size());
    vb_.resize(params.biases.size());
    for (std::size_t l = 0; l < params.weights.size(); ++l) {
      vw_[l].assign(params.weights[l].size(), 0.0);
      vb_[l].assign(params.biases[l].size(), 0.0);
    }
  }
  if (grads.w.size() != params.weights.size() || grads.b.size() != params.biases.size()) {
    throw OpError("sgd: gradient layer count mismatch");
  }
  auto update = [&](std::vector<double>& w, std::vector<double>& v,
                    const std::vector<double>& g) {
    if (g.size() != w.size()) throw OpError("sgd: gradient size mismatch");
    for (std::size_t i = 0; i < w.size(); ++i) {
      if (!std::isfinite(g[i])) throw NumericError("sgd: non-finite gradient");
      v[i] = momentum_ * v[i] + g[i];
      w[i] -= lr_ * v[i];
    }
  };
  for (std::size_t l = 0; l < params.weights.size(); ++l) {
    update(params.weights[l], vw_[l], grads.w[l]);
    update(params.biases[l], vb_[l], grads.b[l]);
  }
}

GradCheckReport grad_check(const std::function<double(std::span<const double>)>& f,
                           std::span<const double> autodiff_grad,
                           std::vector<double> point, double eps) {
  if (eps <= 0.0) throw OpError("grad_check: eps must be > 0");
  if (autodiff_grad.size() != point.size()) {
    throw OpError("grad_check: gradient/point length mismatch");
  }
  GradCheckReport report;
  report.eps = eps;
  for (std::size_t i = 0; i < point.size(); ++i) {
    const double orig = point[i];
    point[i] = orig + eps;
    const double fp = f(point);
    point[i] = orig - eps;
    const double fm = f(point);
    point[i] = orig;
    if (!std::isfinite(fp) || !std::isfinite(fm)) {
      throw NumericError("grad_check: non-finite function value");
    }
    const double fd = (fp - fm) / (2.0 * eps);
    const double a = autodiff_grad[i];
    const double rel = std::abs(a - fd) / std::max(1e-8, std::abs(a) + std::abs(fd));
    if (rel > report.max_rel_error) {
      report.max_rel_error = rel;
      report.worst_coordinate = i;
    }
  }
  return report;
}

namespace {

void write_row(std::ostream& os, const double* row, int n) {
  char buf[64];
  for (int j = 0; j < n; ++j) {
    std::snprintf(buf, sizeof(buf), "%.17g", row[j]);
    os << buf << (j + 1 < n ? " " : "\n");
  }
}

}  // namespace

void save_mlp(std::ostream& os, const MlpParams& p) {
  p.validate();
  os << "mlp 1\n";
  os << "dims";
  for (int d : p.layer_dims) os << ' ' << d;
  os << "\nactivation " << activation_name(p.activation) << "\n";
  for (std::size_t l = 0; l < p.weights.size(); ++l) {
    const int in = p.layer_dims[l];
    const int out = p.layer_dims[l + 1];
    os << "weight " << l << "\n";
    for (int i = 0; i < in; ++i) {
      write_row(os, p.weights[l].data() + static_cast<std::size_t>(i) * out, out);
    }
    os << "bias " << l << "\n";
    write_row(os, p.biases[l].data(), out);
  }
}

MlpParams load_mlp_checkpoint(std::istream& is) {
  std::string tag;
  int version = 0;
  is >> tag >> version;
  if (tag != "mlp" || version != 1) {
    throw OpError("checkpoint: bad header");
  }
  is >> tag;
  if (tag != "dims") throw OpError("checkpoint: expected dims");
  MlpParams p;
  // dims live on one line; read ints until the line ends
  std::string rest;
  std::getline(is, rest);
  {
    const char* s = rest.c_str();
    char* end = nullptr;
    for (;;) {
      long v = std::strtol(s, &end, 10);
      if (end == s) break;
      p.layer_dims.push_back(static_cast<int>(v));
      s = end;
    }
  }
  std::string act;
  is >> tag >> act;
  if (tag != "activation") throw OpError("checkpoint: expected activation");
  p.activation = activation_from_name(act);
  const std::size_t L = p.layer_dims.size() - 1;
  p.weights.resize(L);
  p.biases.resize(L);
  for (std::size_t l = 0; l < L; ++l) {
    std::size_t idx = 0;
    is >> tag >> idx;
    if (tag != "weight" || idx != l) throw OpError("checkpoint: expected weight block");
    const std::size_t n =
        static_cast<std::size_t>(p.layer_dims[l]) * p.layer_dims[l + 1];
    p.weights[l].resize(n);
    for (double& v : p.weights[l]) is >> v;
    is >> tag >> idx;
    if (tag != "bias" || idx != l) throw OpError("checkpoint: expected bias block");
    p.biases[l].resize(static_cast<std::size_t>(p.layer_dims[l + 1]));
    for (double& v : p.biases[l]) is >> v;
  }
  if (!is) throw OpError("checkpoint: truncated");
  p.validate();
  return p;
}

}  // namespace elslab
