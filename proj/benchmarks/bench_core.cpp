#include <benchmark/benchmark.h>

#include "elslab/convergence.hpp"
#include "elslab/divergence.hpp"
#include "elslab/trainer.hpp"

using namespace elslab;

namespace {

void BM_MlpForwardBackward(benchmark::State& state) {
  Rng rng(1);
  MlpParams mlp = init_mlp({2, 32, 32, 8}, Activation::tanh, rng);
  std::vector<double> xv(static_cast<std::size_t>(64) * 2);
  for (double& v : xv) v = rng.uniform(-2, 2);
  for (auto _ : state) {
    Tape tape;
    Tensor x = tape.constant(Shape{64, 2}, xv);
    TapeMlp on_tape = load_mlp(tape, mlp);
    Tensor y = mlp_forward(tape, on_tape, x, mlp.activation);
    tape.backward(mean(mul(y, y)));
    benchmark::DoNotOptimize(on_tape.w[0].grad().data());
  }
}
BENCHMARK(BM_MlpForwardBackward);

void BM_SmoothedLoss(benchmark::State& state) {
  const int m = static_cast<int>(state.range(0));
  Rng rng(2);
  std::vector<double> logits(static_cast<std::size_t>(64) * m);
  for (double& v : logits) v = rng.uniform(-2, 2);
  std::vector<int> env(64);
  for (std::size_t i = 0; i < env.size(); ++i) env[i] = static_cast<int>(i) % m;
  const SmoothingSpec spec{0.9, SmoothingMode::two_sided, false, m};
  for (auto _ : state) {
    Tape tape;
    Tensor l = tape.constant(Shape{64, m}, logits);
    Tensor loss = els_discriminator_loss(tape, l, env, spec);
    tape.backward(loss);
    benchmark::DoNotOptimize(l.grad().data());
  }
}
BENCHMARK(BM_SmoothedLoss)->Arg(2)->Arg(6)->Arg(30);

void BM_JsQuadrature(benchmark::State& state) {
  const int n = static_cast<int>(state.range(0));
  const GridDensity p = gaussian_density(0, 1, -8, 9, n);
  const GridDensity q = gaussian_density(1, 1, -8, 9, n);
  for (auto _ : state) {
    benchmark::DoNotOptimize(js_divergence(p, q));
  }
}
BENCHMARK(BM_JsQuadrature)->Arg(1024)->Arg(4096);

void BM_ObjectiveAtOptimum(benchmark::State& state) {
  const GridDensity p = gaussian_density(0, 1, -8, 9, 4096);
  const GridDensity q = gaussian_density(1, 1, -8, 9, 4096);
  for (auto _ : state) {
    benchmark::DoNotOptimize(
        smoothed_objective_at_optimum(p, q, 0.8, SmoothingMode::two_sided));
  }
}
BENCHMARK(BM_ObjectiveAtOptimum);

void BM_DiracRound(benchmark::State& state) {
  const DiracGame game{1.0, -1.0};
  GdScheme scheme;
  scheme.kind = GdKind::alternating;
  scheme.eta = 1.0;
  for (auto _ : state) {
    benchmark::DoNotOptimize(simulate_training(game, scheme, 1000, 0.01, 0.01));
  }
}
BENCHMARK(BM_DiracRound);

void BM_TrainStepGrl(benchmark::State& state) {
  const DomainDataset ds = gen_two_gaussians({-1.0}, {1.0}, 1.0, 200, 3);
  TrainConfig c;
  c.steps = 1;
  c.batch_size = 64;
  c.eval_every = 1000000;
  c.encoder_hidden = {32, 32};
  c.feature_dim = 8;
  c.discriminator_hidden = {16};
  c.smoothing = SmoothingSpec{0.9, SmoothingMode::two_sided, false, 2};
  Rng rng = substream(1, "init");
  Model model = init_model(c, ds.dim, 2, rng);
  std::vector<int> rows;
  for (int i = 0; i < 64; ++i) rows.push_back(i);
  const SmoothingSpec spec = c.smoothing;
  for (auto _ : state) {
    Tape tape;
    ForwardPass fp = forward_batch(tape, model, ds, rows, spec, true, 1.0);
    Tensor total = total_objective(fp.cls_loss, fp.adv_loss, 1.0);
    tape.backward(total);
    benchmark::DoNotOptimize(fp.enc.w[0].grad().data());
  }
}
BENCHMARK(BM_TrainStepGrl);

}  // namespace
