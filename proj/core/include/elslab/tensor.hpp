#pragma once

#include <cstddef>
#include <deque>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace elslab {

// All tensors are dense row-major 2-D arrays of doubles; scalars are 1x1 and
// row vectors 1xN.
struct Shape {
  int rows = 1;
  int cols = 1;
  int numel() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
};

std::string to_string(const Shape& s);

// Invalid argument or shape mismatch; the message names the op and shapes.
class OpError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A primitive produced a non-finite value.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

enum class OpKind {
  constant,
  matmul,
  add,
  mul,
  relu,
  tanh,
  exp,
  log,
  neg,
  sum,
  mean,
  softmax_rows,
  log_softmax_rows,
  gather_rows,
  scale,
  gradient_reversal,
};

const char* op_name(OpKind k);

// log() floors its argument here so that probabilities squeezed to zero by
// rounding stay finite; the fused log_softmax path does not need the floor.
inline constexpr double kLogFloor = 1e-12;

class Tape;

// Handle to a node on a tape. values() is readable at any time; grad() holds
// d(loss)/d(tensor) after Tape::backward over the loss.
class Tensor {
 public:
  Tensor() = default;

  Shape shape() const;
  int rows() const { return shape().rows; }
  int cols() const { return shape().cols; }
  const std::vector<double>& values() const;
  const std::vector<double>& grad() const;
  double value_at(int r, int c) const;
  double scalar_value() const;  // requires 1x1

  bool valid() const { return tape_ != nullptr; }
  int id() const { return id_; }
  Tape* tape() const { return tape_; }

 private:
  friend class Tape;
  Tensor(Tape* tape, int id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  int id_ = -1;
};

// Records primitive applications in order; backward() traverses them in
// reverse exactly once. Non-copyable and non-movable: Tensor handles refer
// into it.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;
  Tape(Tape&&) = delete;
  Tape& operator=(Tape&&) = delete;

  Tensor constant(Shape shape, std::vector<double> values);
  Tensor constant(double v);
  Tensor constant_row(std::vector<double> v);

  // Accumulates gradients of the scalar loss into every node; tensors not on
  // a path to the loss end with zero grad. A tape can run backward once.
  void backward(const Tensor& loss);

  std::size_t size() const { return nodes_.size(); }
  bool consumed() const { return consumed_; }
  void reset();

  // Recorded primitive application; an implementation detail of the
  // primitives below, exposed so they can emit nodes.
  struct Node {
    OpKind op = OpKind::constant;
    Shape shape;
    std::vector<double> values;
    std::vector<double> grad;
    int in0 = -1;
    int in1 = -1;
    std::vector<double> saved;  // op-specific forward byproducts
    std::vector<int> indices;   // gather_rows column picks
    double factor = 0.0;        // scale / gradient_reversal coefficient
  };

  Tensor emit(Node node);
  const Node& node(int id) const { return nodes_[static_cast<std::size_t>(id)]; }

 private:
  friend class Tensor;
  Node& node(int id) { return nodes_[static_cast<std::size_t>(id)]; }

  void backward_one(const Node& n);

  // deque: Tensor handles hold references into nodes; appends must not
  // relocate existing elements.
  std::deque<Node> nodes_;
  bool consumed_ = false;
};

Tensor matmul(const Tensor& a, const Tensor& b);
// add accepts equal shapes or a 1xC bias row broadcast over the rows of a.
Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor exp(const Tensor& x);
Tensor log(const Tensor& x);
Tensor neg(const Tensor& x);
Tensor sum(const Tensor& x);   // scalar sum over all elements
Tensor mean(const Tensor& x);  // scalar mean over all elements
Tensor softmax_rows(const Tensor& x);
// Fused logit - logsumexp form; preferred over log(softmax_rows(x)).
Tensor log_softmax_rows(const Tensor& x);
// Picks one column per row: out[r, 0] = x[r, col_of_row[r]].
Tensor gather_rows(const Tensor& x, std::span<const int> col_of_row);
Tensor scale(const Tensor& x, double c);
// Identity forward; backward multiplies the incoming gradient by -s.
Tensor gradient_reversal(const Tensor& x, double s);

// Generic dispatch over the unary/binary primitives above (gather_rows,
// scale and gradient_reversal carry extra arguments and are not dispatched).
Tensor apply_primitive(OpKind kind, std::span<const Tensor> inputs);

}  // namespace elslab
