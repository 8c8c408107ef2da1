#include <cmath>
#include <cstring>
#include <functional>

#include "doctest.h"
#include "elslab/mlp.hpp"
#include "elslab/rng.hpp"
#include "elslab/tensor.hpp"

using namespace elslab;

namespace {

using Body = std::function<Tensor(Tape&, const Tensor&)>;

double eval_scalar(const Body& body, Shape s, std::span<const double> x) {
  Tape tape;
  Tensor xt = tape.constant(s, std::vector<double>(x.begin(), x.end()));
  return body(tape, xt).scalar_value();
}

std::vector<double> backward_grad(const Body& body, Shape s, std::span<const double> x) {
  Tape tape;
  Tensor xt = tape.constant(s, std::vector<double>(x.begin(), x.end()));
  Tensor loss = body(tape, xt);
  tape.backward(loss);
  return xt.grad();
}

// Central-difference check of d(body)/dx at a random point.
void check_gradient(const Body& body, Shape s, std::vector<double> x,
                    double tol = 1e-6) {
  const std::vector<double> auto_grad = backward_grad(body, s, x);
  const GradCheckReport rep = grad_check(
      [&](std::span<const double> p) { return eval_scalar(body, s, p); }, auto_grad,
      x, 1e-5);
  CHECK(rep.max_rel_error < tol);
}

std::vector<double> random_vec(Rng& rng, std::size_t n, double lo = -2.0, double hi = 2.0) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(lo, hi);
  return v;
}

}  // namespace

TEST_CASE("matmul identity") {
  Tape tape;
  Tensor eye = tape.constant(Shape{2, 2}, {1, 0, 0, 1});
  Tensor v = tape.constant(Shape{2, 1}, {2, 3});
  Tensor out = matmul(eye, v);
  CHECK(out.values() == std::vector<double>{2, 3});
}

TEST_CASE("softmax of a constant row is uniform") {
  Tape tape;
  Tensor x = tape.constant(Shape{1, 3}, {0, 0, 0});
  Tensor p = softmax_rows(x);
  for (double v : p.values()) CHECK(v == doctest::Approx(1.0 / 3).epsilon(1e-14));
}

TEST_CASE("log inverts exp") {
  Tape tape;
  Tensor x = tape.constant(Shape{1, 1}, {1.5});
  CHECK(log(exp(x)).scalar_value() == doctest::Approx(1.5).epsilon(1e-15));
}

TEST_CASE("backward of sum(x*x)") {
  Tape tape;
  Tensor x = tape.constant(Shape{1, 1}, {3.0});
  Tensor loss = sum(mul(x, x));
  tape.backward(loss);
  CHECK(x.grad()[0] == doctest::Approx(6.0));
}

TEST_CASE("backward of mean") {
  Tape tape;
  Tensor x = tape.constant(Shape{1, 4}, {1, 2, 3, 4});
  tape.backward(mean(x));
  for (double g : x.grad()) CHECK(g == 0.25);
}

TEST_CASE("gradient reversal forward and backward") {
  Tape tape;
  Tensor x = tape.constant(Shape{1, 2}, {1.0, 2.0});
  Tensor y = gradient_reversal(x, 1.0);
  CHECK(y.values() == x.values());
  tape.backward(sum(y));
  CHECK(x.grad() == std::vector<double>{-1.0, -1.0});

  Tape tape2;
  Tensor x2 = tape2.constant(Shape{1, 2}, {1.0, 2.0});
  tape2.backward(sum(gradient_reversal(x2, 0.5)));
  CHECK(x2.grad() == std::vector<double>{-0.5, -0.5});
}

TEST_CASE("gradient reversal contract on a composite loss") {
  // grad through the reversal must equal -scale times the identity-path grad,
  // coordinate for coordinate.
  const double scale_val = 0.75;
  Rng rng(11);
  const std::vector<double> xv = random_vec(rng, 6);
  const std::vector<double> wv = random_vec(rng, 6);
  auto run = [&](bool reversed) {
    Tape tape;
    Tensor x = tape.constant(Shape{2, 3}, xv);
    Tensor w = tape.constant(Shape{2, 3}, wv);
    Tensor h = reversed ? gradient_reversal(x, scale_val) : x;
    tape.backward(sum(mul(elslab::tanh(h), w)));
    return x.grad();
  };
  const std::vector<double> g_rev = run(true);
  const std::vector<double> g_id = run(false);
  for (std::size_t i = 0; i < g_rev.size(); ++i) {
    CHECK(g_rev[i] == -scale_val * g_id[i]);
  }
}

TEST_CASE("per-primitive gradients match central differences") {
  Rng rng(42);

  SUBCASE("matmul lhs") {
    const std::vector<double> c = random_vec(rng, 6);
    check_gradient(
        [&](Tape& t, const Tensor& x) {
          Tensor w = t.constant(Shape{3, 2}, c);
          return sum(elslab::tanh(matmul(x, w)));
        },
        Shape{2, 3}, random_vec(rng, 6));
  }
  SUBCASE("matmul rhs") {
    const std::vector<double> c = random_vec(rng, 6);
    check_gradient(
        [&](Tape& t, const Tensor& x) {
          Tensor a = t.constant(Shape{2, 3}, c);
          return sum(elslab::tanh(matmul(a, x)));
        },
        Shape{3, 2}, random_vec(rng, 6));
  }
  SUBCASE("add broadcast bias") {
    const std::vector<double> c = random_vec(rng, 8);
    check_gradient(
        [&](Tape& t, const Tensor& x) {
          Tensor a = t.constant(Shape{2, 4}, c);
          return sum(elslab::tanh(add(a, x)));
        },
        Shape{1, 4}, random_vec(rng, 4));
  }
  SUBCASE("mul") {
    const std::vector<double> c = random_vec(rng, 6);
    check_gradient(
        [&](Tape& t, const Tensor& x) {
          Tensor w = t.constant(Shape{2, 3}, c);
          return mean(mul(x, mul(x, w)));
        },
        Shape{2, 3}, random_vec(rng, 6));
  }
  SUBCASE("relu away from the kink") {
    std::vector<double> x = random_vec(rng, 6, 0.1, 2.0);
    for (std::size_t i = 0; i < x.size(); i += 2) x[i] = -x[i];
    check_gradient([&](Tape&, const Tensor& t) { return sum(relu(t)); }, Shape{2, 3}, x);
  }
  SUBCASE("tanh exp log chain") {
    check_gradient(
        [&](Tape&, const Tensor& x) { return sum(log(exp(elslab::tanh(x)))); },
        Shape{2, 3}, random_vec(rng, 6));
  }
  SUBCASE("neg and mean") {
    check_gradient([&](Tape&, const Tensor& x) { return mean(neg(mul(x, x))); },
                   Shape{2, 4}, random_vec(rng, 8));
  }
  SUBCASE("softmax_rows") {
    const std::vector<double> c = random_vec(rng, 8);
    check_gradient(
        [&](Tape& t, const Tensor& x) {
          Tensor w = t.constant(Shape{2, 4}, c);
          return sum(mul(softmax_rows(x), w));
        },
        Shape{2, 4}, random_vec(rng, 8));
  }
  SUBCASE("log_softmax_rows") {
    const std::vector<double> c = random_vec(rng, 8);
    check_gradient(
        [&](Tape& t, const Tensor& x) {
          Tensor w = t.constant(Shape{2, 4}, c);
          return sum(mul(log_softmax_rows(x), w));
        },
        Shape{2, 4}, random_vec(rng, 8));
  }
  SUBCASE("gather_rows") {
    const std::vector<int> idx{2, 0};
    check_gradient(
        [&](Tape&, const Tensor& x) {
          return sum(mul(gather_rows(x, idx), gather_rows(x, idx)));
        },
        Shape{2, 3}, random_vec(rng, 6));
  }
  SUBCASE("scale") {
    check_gradient([&](Tape&, const Tensor& x) { return scale(sum(mul(x, x)), -0.37); },
                   Shape{1, 5}, random_vec(rng, 5));
  }
}

TEST_CASE("softmax rows sum to one and shift invariance") {
  Rng rng(7);
  for (int trial = 0; trial < 20; ++trial) {
    const std::vector<double> x = random_vec(rng, 8, -5.0, 5.0);
    Tape tape;
    Tensor p = softmax_rows(tape.constant(Shape{2, 4}, x));
    for (int r = 0; r < 2; ++r) {
      double s = 0.0;
      for (int j = 0; j < 4; ++j) s += p.value_at(r, j);
      CHECK(std::abs(s - 1.0) < 1e-12);
    }
    // adding a constant to one row's logits leaves its softmax unchanged
    std::vector<double> shifted = x;
    const double c = rng.uniform(-3.0, 3.0);
    for (int j = 0; j < 4; ++j) shifted[static_cast<std::size_t>(j)] += c;
    Tape tape2;
    Tensor p2 = softmax_rows(tape2.constant(Shape{2, 4}, shifted));
    for (int j = 0; j < 4; ++j) {
      CHECK(std::abs(p2.value_at(0, j) - p.value_at(0, j)) < 1e-10);
    }
  }
}

TEST_CASE("forward and backward are bit-deterministic") {
  auto run = [](std::vector<double>* values, std::vector<double>* grads) {
    Rng rng(1234);
    MlpParams mlp = init_mlp({3, 5, 2}, Activation::tanh, rng);
    Tape tape;
    Tensor x = tape.constant(Shape{4, 3}, random_vec(rng, 12));
    TapeMlp on_tape = load_mlp(tape, mlp);
    Tensor out = mlp_forward(tape, on_tape, x, mlp.activation);
    *values = out.values();
    tape.backward(mean(mul(out, out)));
    *grads = flatten_grads(read_mlp_grads(on_tape));
  };
  std::vector<double> v1, g1, v2, g2;
  run(&v1, &g1);
  run(&v2, &g2);
  CHECK(std::memcmp(v1.data(), v2.data(), v1.size() * sizeof(double)) == 0);
  CHECK(std::memcmp(g1.data(), g2.data(), g1.size() * sizeof(double)) == 0);
}

TEST_CASE("error paths") {
  SUBCASE("shape mismatch names the op") {
    Tape tape;
    Tensor a = tape.constant(Shape{2, 3}, std::vector<double>(6, 1.0));
    Tensor b = tape.constant(Shape{2, 2}, std::vector<double>(4, 1.0));
    CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("matmul"), OpError);
  }
  SUBCASE("non-scalar loss") {
    Tape tape;
    Tensor a = tape.constant(Shape{1, 2}, {1.0, 2.0});
    CHECK_THROWS_AS(tape.backward(a), OpError);
  }
  SUBCASE("non-finite output") {
    Tape tape;
    Tensor a = tape.constant(Shape{1, 1}, {1e308});
    CHECK_THROWS_AS(exp(a), NumericError);
  }
  SUBCASE("tape consumed once") {
    Tape tape;
    Tensor a = tape.constant(Shape{1, 1}, {2.0});
    Tensor loss = sum(a);
    tape.backward(loss);
    CHECK_THROWS_AS(tape.backward(loss), OpError);
    tape.reset();
    CHECK(tape.size() == 0);
  }
  SUBCASE("gather index out of range") {
    Tape tape;
    Tensor a = tape.constant(Shape{1, 2}, {1.0, 2.0});
    const std::vector<int> idx{5};
    CHECK_THROWS_AS(gather_rows(a, idx), OpError);
  }
}

TEST_CASE("apply_primitive dispatch matches typed calls") {
  Tape tape;
  Tensor a = tape.constant(Shape{1, 3}, {0.3, -1.2, 0.5});
  const Tensor in[] = {a};
  Tensor via_dispatch = apply_primitive(OpKind::softmax_rows, in);
  Tensor direct = softmax_rows(a);
  CHECK(via_dispatch.values() == direct.values());
  const Tensor two[] = {a, a};
  CHECK(apply_primitive(OpKind::add, two).values() == add(a, a).values());
  CHECK_THROWS_AS(apply_primitive(OpKind::gather_rows, in), OpError);
}

TEST_CASE("unreachable tensors keep zero grad") {
  Tape tape;
  Tensor a = tape.constant(Shape{1, 2}, {1.0, 2.0});
  Tensor b = tape.constant(Shape{1, 2}, {3.0, 4.0});
  Tensor loss = sum(mul(a, a));
  Tensor orphan = elslab::tanh(b);
  (void)orphan;
  tape.backward(loss);
  CHECK(b.grad() == std::vector<double>{0.0, 0.0});
}
