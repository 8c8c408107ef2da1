#include "elslab/tensor.hpp"

#include <algorithm>
#include <cmath>

namespace elslab {

std::string to_string(const Shape& s) {
  return "[" + std::to_string(s.rows) + "x" + std::to_string(s.cols) + "]";
}

const char* op_name(OpKind k) {
  switch (k) {
    case OpKind::constant: return "constant";
    case OpKind::matmul: return "matmul";
    case OpKind::add: return "add";
    case OpKind::mul: return "mul";
    case OpKind::relu: return "relu";
    case OpKind::tanh: return "tanh";
    case OpKind::exp: return "exp";
    case OpKind::log: return "log";
    case OpKind::neg: return "neg";
    case OpKind::sum: return "sum";
    case OpKind::mean: return "mean";
    case OpKind::softmax_rows: return "softmax_rows";
    case OpKind::log_softmax_rows: return "log_softmax_rows";
    case OpKind::gather_rows: return "gather_rows";
    case OpKind::scale: return "scale";
    case OpKind::gradient_reversal: return "gradient_reversal";
  }
  return "?";
}

namespace {

[[noreturn]] void shape_error(OpKind op, const Shape& a, const Shape& b) {
  throw OpError(std::string(op_name(op)) + ": incompatible shapes " +
                to_string(a) + " and " + to_string(b));
}

void check_same_tape(OpKind op, const Tensor& a, const Tensor& b) {
  if (a.tape() == nullptr || b.tape() == nullptr || a.tape() != b.tape()) {
    throw OpError(std::string(op_name(op)) + ": inputs must live on one tape");
  }
}

void check_valid(OpKind op, const Tensor& x) {
  if (!x.valid()) {
    throw OpError(std::string(op_name(op)) + ": invalid tensor handle");
  }
}

void check_finite(OpKind op, const std::vector<double>& v) {
  for (double x : v) {
    if (!std::isfinite(x)) {
      throw NumericError(std::string(op_name(op)) + ": non-finite output");
    }
  }
}

}  // namespace

Shape Tensor::shape() const { return tape_->node(id_).shape; }

const std::vector<double>& Tensor::values() const {
  return tape_->node(id_).values;
}

const std::vector<double>& Tensor::grad() const {
  return tape_->node(id_).grad;
}

double Tensor::value_at(int r, int c) const {
  const auto& n = tape_->node(id_);
  return n.values[static_cast<std::size_t>(r) * n.shape.cols + c];
}

double Tensor::scalar_value() const {
  const auto& n = tape_->node(id_);
  if (n.shape.numel() != 1) {
    throw OpError("scalar_value: tensor is " + to_string(n.shape));
  }
  return n.values[0];
}

Tensor Tape::constant(Shape shape, std::vector<double> values) {
  if (shape.rows <= 0 || shape.cols <= 0 ||
      values.size() != static_cast<std::size_t>(shape.numel())) {
    throw OpError("constant: " + std::to_string(values.size()) +
                  " values for shape " + to_string(shape));
  }
  check_finite(OpKind::constant, values);
  Node n;
  n.op = OpKind::constant;
  n.shape = shape;
  n.values = std::move(values);
  return emit(std::move(n));
}

Tensor Tape::constant(double v) { return constant(Shape{1, 1}, {v}); }

Tensor Tape::constant_row(std::vector<double> v) {
  Shape s{1, static_cast<int>(v.size())};
  return constant(s, std::move(v));
}

Tensor Tape::emit(Node node) {
  if (consumed_) {
    throw OpError("tape already consumed by backward; reset() before reuse");
  }
  node.grad.assign(node.values.size(), 0.0);
  nodes_.push_back(std::move(node));
  return Tensor(this, static_cast<int>(nodes_.size()) - 1);
}

void Tape::reset() {
  nodes_.clear();
  consumed_ = false;
}

void Tape::backward(const Tensor& loss) {
  if (loss.tape() != this) {
    throw OpError("backward: loss is not on this tape");
  }
  if (consumed_) {
    throw OpError("backward: tape already consumed");
  }
  const Node& ln = node(loss.id());
  if (ln.shape.numel() != 1) {
    throw OpError("backward: loss must be scalar, got " + to_string(ln.shape));
  }
  consumed_ = true;
  node(loss.id()).grad[0] = 1.0;
  for (int i = static_cast<int>(nodes_.size()) - 1; i >= 0; --i) {
    backward_one(nodes_[static_cast<std::size_t>(i)]);
  }
}

void Tape::backward_one(const Node& n) {
  const std::vector<double>& g = n.grad;
  switch (n.op) {
    case OpKind::constant:
      return;
    case OpKind::matmul: {
      Node& a = node(n.in0);
      Node& b = node(n.in1);
      const int m = a.shape.rows, k = a.shape.cols, c = b.shape.cols;
      // dA = dC * B^T, dB = A^T * dC
      for (int i = 0; i < m; ++i) {
        for (int j = 0; j < k; ++j) {
          double acc = 0.0;
          for (int t = 0; t < c; ++t) {
            acc += g[static_cast<std::size_t>(i) * c + t] *
                   b.values[static_cast<std::size_t>(j) * c + t];
          }
          a.grad[static_cast<std::size_t>(i) * k + j] += acc;
        }
      }
      for (int j = 0; j < k; ++j) {
        for (int t = 0; t < c; ++t) {
          double acc = 0.0;
          for (int i = 0; i < m; ++i) {
            acc += a.values[static_cast<std::size_t>(i) * k + j] *
                   g[static_cast<std::size_t>(i) * c + t];
          }
          b.grad[static_cast<std::size_t>(j) * c + t] += acc;
        }
      }
      return;
    }
    case OpKind::add: {
      Node& a = node(n.in0);
      Node& b = node(n.in1);
      for (std::size_t i = 0; i < g.size(); ++i) a.grad[i] += g[i];
      if (b.shape == n.shape) {
        for (std::size_t i = 0; i < g.size(); ++i) b.grad[i] += g[i];
      } else {  // bias row broadcast: column sums
        const int c = n.shape.cols;
        for (int r = 0; r < n.shape.rows; ++r) {
          for (int j = 0; j < c; ++j) {
            b.grad[static_cast<std::size_t>(j)] +=
                g[static_cast<std::size_t>(r) * c + j];
          }
        }
      }
      return;
    }
    case OpKind::mul: {
      Node& a = node(n.in0);
      Node& b = node(n.in1);
      for (std::size_t i = 0; i < g.size(); ++i) {
        a.grad[i] += g[i] * b.values[i];
        b.grad[i] += g[i] * a.values[i];
      }
      return;
    }
    case OpKind::relu: {
      Node& a = node(n.in0);
      for (std::size_t i = 0; i < g.size(); ++i) {
        if (a.values[i] > 0.0) a.grad[i] += g[i];
      }
      return;
    }
    case OpKind::tanh: {
      Node& a = node(n.in0);
      for (std::size_t i = 0; i < g.size(); ++i) {
        a.grad[i] += g[i] * (1.0 - n.values[i] * n.values[i]);
      }
      return;
    }
    case OpKind::exp: {
      Node& a = node(n.in0);
      for (std::size_t i = 0; i < g.size(); ++i) a.grad[i] += g[i] * n.values[i];
      return;
    }
    case OpKind::log: {
      Node& a = node(n.in0);
      for (std::size_t i = 0; i < g.size(); ++i) {
        a.grad[i] += g[i] / std::max(a.values[i], kLogFloor);
      }
      return;
    }
    case OpKind::neg: {
      Node& a = node(n.in0);
      for (std::size_t i = 0; i < g.size(); ++i) a.grad[i] -= g[i];
      return;
    }
    case OpKind::sum: {
      Node& a = node(n.in0);
      for (double& ag : a.grad) ag += g[0];
      return;
    }
    case OpKind::mean: {
      Node& a = node(n.in0);
      const double s = g[0] / static_cast<double>(a.values.size());
      for (double& ag : a.grad) ag += s;
      return;
    }
    case OpKind::softmax_rows: {
      // dx = p .* (g - rowdot(g, p))
      Node& a = node(n.in0);
      const int c = n.shape.cols;
      for (int r = 0; r < n.shape.rows; ++r) {
        const std::size_t off = static_cast<std::size_t>(r) * c;
        double dot = 0.0;
        for (int j = 0; j < c; ++j) dot += g[off + j] * n.values[off + j];
        for (int j = 0; j < c; ++j) {
          a.grad[off + j] += n.values[off + j] * (g[off + j] - dot);
        }
      }
      return;
    }
    case OpKind::log_softmax_rows: {
      // dx = g - softmax .* rowsum(g); saved = softmax
      Node& a = node(n.in0);
      const int c = n.shape.cols;
      for (int r = 0; r < n.shape.rows; ++r) {
        const std::size_t off = static_cast<std::size_t>(r) * c;
        double rowsum = 0.0;
        for (int j = 0; j < c; ++j) rowsum += g[off + j];
        for (int j = 0; j < c; ++j) {
          a.grad[off + j] += g[off + j] - n.saved[off + j] * rowsum;
        }
      }
      return;
    }
    case OpKind::gather_rows: {
      Node& a = node(n.in0);
      const int c = a.shape.cols;
      for (int r = 0; r < n.shape.rows; ++r) {
        a.grad[static_cast<std::size_t>(r) * c + n.indices[static_cast<std::size_t>(r)]] +=
            g[static_cast<std::size_t>(r)];
      }
      return;
    }
    case OpKind::scale: {
      Node& a = node(n.in0);
      for (std::size_t i = 0; i < g.size(); ++i) a.grad[i] += g[i] * n.factor;
      return;
    }
    case OpKind::gradient_reversal: {
      Node& a = node(n.in0);
      for (std::size_t i = 0; i < g.size(); ++i) a.grad[i] -= g[i] * n.factor;
      return;
    }
  }
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_same_tape(OpKind::matmul, a, b);
  Shape sa = a.shape(), sb = b.shape();
  if (sa.cols != sb.rows) shape_error(OpKind::matmul, sa, sb);
  Tape::Node n;
  n.op = OpKind::matmul;
  n.shape = Shape{sa.rows, sb.cols};
  n.in0 = a.id();
  n.in1 = b.id();
  n.values.assign(static_cast<std::size_t>(n.shape.numel()), 0.0);
  const auto& av = a.values();
  const auto& bv = b.values();
  for (int i = 0; i < sa.rows; ++i) {
    for (int k = 0; k < sa.cols; ++k) {
      const double aik = av[static_cast<std::size_t>(i) * sa.cols + k];
      if (aik == 0.0) continue;
      const std::size_t boff = static_cast<std::size_t>(k) * sb.cols;
      const std::size_t coff = static_cast<std::size_t>(i) * sb.cols;
      for (int j = 0; j < sb.cols; ++j) {
        n.values[coff + j] += aik * bv[boff + j];
      }
    }
  }
  check_finite(OpKind::matmul, n.values);
  return a.tape()->emit(std::move(n));
}

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_tape(OpKind::add, a, b);
  Shape sa = a.shape(), sb = b.shape();
  const bool same = sa == sb;
  const bool bias = sb.rows == 1 && sb.cols == sa.cols;
  if (!same && !bias) shape_error(OpKind::add, sa, sb);
  Tape::Node n;
  n.op = OpKind::add;
  n.shape = sa;
  n.in0 = a.id();
  n.in1 = b.id();
  n.values = a.values();
  const auto& bv = b.values();
  if (same) {
    for (std::size_t i = 0; i < n.values.size(); ++i) n.values[i] += bv[i];
  } else {
    for (int r = 0; r < sa.rows; ++r) {
      for (int j = 0; j < sa.cols; ++j) {
        n.values[static_cast<std::size_t>(r) * sa.cols + j] += bv[static_cast<std::size_t>(j)];
      }
    }
  }
  check_finite(OpKind::add, n.values);
  return a.tape()->emit(std::move(n));
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_tape(OpKind::mul, a, b);
  if (!(a.shape() == b.shape())) shape_error(OpKind::mul, a.shape(), b.shape());
  Tape::Node n;
  n.op = OpKind::mul;
  n.shape = a.shape();
  n.in0 = a.id();
  n.in1 = b.id();
  n.values = a.values();
  const auto& bv = b.values();
  for (std::size_t i = 0; i < n.values.size(); ++i) n.values[i] *= bv[i];
  check_finite(OpKind::mul, n.values);
  return a.tape()->emit(std::move(n));
}

namespace {

Tensor unary(OpKind op, const Tensor& x, double (*f)(double)) {
  check_valid(op, x);
  Tape::Node n;
  n.op = op;
  n.shape = x.shape();
  n.in0 = x.id();
  n.values = x.values();
  for (double& v : n.values) v = f(v);
  check_finite(op, n.values);
  return x.tape()->emit(std::move(n));
}

}  // namespace

Tensor relu(const Tensor& x) {
  return unary(OpKind::relu, x, +[](double v) { return v > 0.0 ? v : 0.0; });
}

Tensor tanh(const Tensor& x) {
  return unary(OpKind::tanh, x, +[](double v) { return std::tanh(v); });
}

Tensor exp(const Tensor& x) {
  return unary(OpKind::exp, x, +[](double v) { return std::exp(v); });
}

Tensor log(const Tensor& x) {
  return unary(OpKind::log, x,
               +[](double v) { return std::log(std::max(v, kLogFloor)); });
}

Tensor neg(const Tensor& x) {
  return unary(OpKind::neg, x, +[](double v) { return -v; });
}

Tensor sum(const Tensor& x) {
  check_valid(OpKind::sum, x);
  Tape::Node n;
  n.op = OpKind::sum;
  n.shape = Shape{1, 1};
  n.in0 = x.id();
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  n.values = {acc};
  check_finite(OpKind::sum, n.values);
  return x.tape()->emit(std::move(n));
}

Tensor mean(const Tensor& x) {
  check_valid(OpKind::mean, x);
  Tape::Node n;
  n.op = OpKind::mean;
  n.shape = Shape{1, 1};
  n.in0 = x.id();
  double acc = 0.0;
  for (double v : x.values()) acc += v;
  n.values = {acc / static_cast<double>(x.values().size())};
  check_finite(OpKind::mean, n.values);
  return x.tape()->emit(std::move(n));
}

Tensor softmax_rows(const Tensor& x) {
  check_valid(OpKind::softmax_rows, x);
  Tape::Node n;
  n.op = OpKind::softmax_rows;
  n.shape = x.shape();
  n.in0 = x.id();
  n.values = x.values();
  const int c = n.shape.cols;
  for (int r = 0; r < n.shape.rows; ++r) {
    double* row = n.values.data() + static_cast<std::size_t>(r) * c;
    double m = row[0];
    for (int j = 1; j < c; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (int j = 0; j < c; ++j) {
      row[j] = std::exp(row[j] - m);
      z += row[j];
    }
    for (int j = 0; j < c; ++j) row[j] /= z;
  }
  check_finite(OpKind::softmax_rows, n.values);
  return x.tape()->emit(std::move(n));
}

Tensor log_softmax_rows(const Tensor& x) {
  check_valid(OpKind::log_softmax_rows, x);
  Tape::Node n;
  n.op = OpKind::log_softmax_rows;
  n.shape = x.shape();
  n.in0 = x.id();
  n.values = x.values();
  n.saved.assign(n.values.size(), 0.0);
  const int c = n.shape.cols;
  for (int r = 0; r < n.shape.rows; ++r) {
    double* row = n.values.data() + static_cast<std::size_t>(r) * c;
    double* p = n.saved.data() + static_cast<std::size_t>(r) * c;
    double m = row[0];
    for (int j = 1; j < c; ++j) m = std::max(m, row[j]);
    double z = 0.0;
    for (int j = 0; j < c; ++j) z += std::exp(row[j] - m);
    const double lse = m + std::log(z);
    for (int j = 0; j < c; ++j) {
      const double ls = row[j] - lse;
      row[j] = ls;
      p[j] = std::exp(ls);
    }
  }
  check_finite(OpKind::log_softmax_rows, n.values);
  return x.tape()->emit(std::move(n));
}

Tensor gather_rows(const Tensor& x, std::span<const int> col_of_row) {
  check_valid(OpKind::gather_rows, x);
  Shape s = x.shape();
  if (col_of_row.size() != static_cast<std::size_t>(s.rows)) {
    throw OpError("gather_rows: " + std::to_string(col_of_row.size()) +
                  " indices for " + to_string(s));
  }
  Tape::Node n;
  n.op = OpKind::gather_rows;
  n.shape = Shape{s.rows, 1};
  n.in0 = x.id();
  n.indices.assign(col_of_row.begin(), col_of_row.end());
  n.values.resize(static_cast<std::size_t>(s.rows));
  const auto& xv = x.values();
  for (int r = 0; r < s.rows; ++r) {
    const int j = n.indices[static_cast<std::size_t>(r)];
    if (j < 0 || j >= s.cols) {
      throw OpError("gather_rows: index " + std::to_string(j) +
                    " out of range for " + to_string(s));
    }
    n.values[static_cast<std::size_t>(r)] = xv[static_cast<std::size_t>(r) * s.cols + j];
  }
  return x.tape()->emit(std::move(n));
}

Tensor scale(const Tensor& x, double c) {
  check_valid(OpKind::scale, x);
  Tape::Node n;
  n.op = OpKind::scale;
  n.shape = x.shape();
  n.in0 = x.id();
  n.factor = c;
  n.values = x.values();
  for (double& v : n.values) v *= c;
  check_finite(OpKind::scale, n.values);
  return x.tape()->emit(std::move(n));
}

Tensor gradient_reversal(const Tensor& x, double s) {
  check_valid(OpKind::gradient_reversal, x);
  if (s < 0.0) {
    throw OpError("gradient_reversal: scale must be >= 0");
  }
  Tape::Node n;
  n.op = OpKind::gradient_reversal;
  n.shape = x.shape();
  n.in0 = x.id();
  n.factor = s;
  n.values = x.values();
  return x.tape()->emit(std::move(n));
}

Tensor apply_primitive(OpKind kind, std::span<const Tensor> inputs) {
  auto need = [&](std::size_t k) {
    if (inputs.size() != k) {
      throw OpError(std::string(op_name(kind)) + ": expected " +
                    std::to_string(k) + " inputs, got " +
                    std::to_string(inputs.size()));
    }
  };
  switch (kind) {
    case OpKind::matmul: need(2); return matmul(inputs[0], inputs[1]);
    case OpKind::add: need(2); return add(inputs[0], inputs[1]);
    case OpKind::mul: need(2); return mul(inputs[0], inputs[1]);
    case OpKind::relu: need(1); return relu(inputs[0]);
    case OpKind::tanh: need(1); return tanh(inputs[0]);
    case OpKind::exp: need(1); return exp(inputs[0]);
    case OpKind::log: need(1); return log(inputs[0]);
    case OpKind::neg: need(1); return neg(inputs[0]);
    case OpKind::sum: need(1); return sum(inputs[0]);
    case OpKind::mean: need(1); return mean(inputs[0]);
    case OpKind::softmax_rows: need(1); return softmax_rows(inputs[0]);
    case OpKind::log_softmax_rows: need(1); return log_softmax_rows(inputs[0]);
    default:
      throw OpError(std::string(op_name(kind)) +
                    ": not dispatchable through apply_primitive");
  }
}

}  // namespace elslab
