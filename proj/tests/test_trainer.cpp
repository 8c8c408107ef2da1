#include <cmath>
#include <sstream>

#include "doctest.h"
#include "elslab/trainer.hpp"

using namespace elslab;

namespace {

TrainConfig small_config(int num_domains) {
  TrainConfig c;
  c.schedule = Schedule::grl;
  c.lambda = 0.5;
  c.lr = 0.1;
  c.steps = 300;
  c.batch_size = 32;
  c.eval_every = 100;
  c.encoder_hidden = {16};
  c.feature_dim = 4;
  c.discriminator_hidden = {8};
  c.smoothing = SmoothingSpec{1.0, SmoothingMode::two_sided, false, num_domains};
  return c;
}

std::vector<double> model_flat(const Model& m) {
  std::vector<double> out = flatten_params(m.encoder);
  const std::vector<double> c = flatten_params(m.classifier);
  const std::vector<double> d = flatten_params(m.discriminator);
  out.insert(out.end(), c.begin(), c.end());
  out.insert(out.end(), d.begin(), d.end());
  return out;
}

// Hand-built radial model for the circle task: encoder emits (|x|, |y|), the
// classifier fires "outer" once the point leaves a 3-tangent approximation of
// the circle of radius boundary.
Model radial_oracle_model(double boundary) {
  Model m;
  m.encoder.layer_dims = {2, 4, 2};
  m.encoder.activation = Activation::relu;
  m.encoder.weights = {{1, -1, 0, 0, 0, 0, 1, -1}, {1, 0, 1, 0, 0, 1, 0, 1}};
  m.encoder.biases = {{0, 0, 0, 0}, {0, 0}};

  const double a1 = 3.14159265358979312 / 8.0;
  m.classifier.layer_dims = {2, 3, 2};
  m.classifier.activation = Activation::relu;
  m.classifier.weights = {{std::cos(a1), std::cos(2 * a1), std::cos(3 * a1),
                           std::sin(a1), std::sin(2 * a1), std::sin(3 * a1)},
                          {100, 0, 100, 0, 100, 0}};
  m.classifier.biases = {{-boundary, -boundary, -boundary}, {0, 0.5}};

  m.discriminator.layer_dims = {2, 2};
  m.discriminator.activation = Activation::relu;
  m.discriminator.weights = {{0, 0, 0, 0}};
  m.discriminator.biases = {{0, 0}};
  return m;
}

}  // namespace

TEST_CASE("plain ERM solves the separable two-gaussian task") {
  const DomainDataset ds = gen_two_gaussians({-2.0}, {2.0}, 1.0, 200, 3);
  TrainConfig c = small_config(2);
  c.lambda = 0.0;
  c.smoothing.mode = SmoothingMode::none;
  c.steps = 400;
  const TrainResult res = train_dat(ds, ds, c);
  CHECK(!res.diverged);
  const EvalResult tgt = evaluate(res.model, ds, ds.target_domains);
  CHECK(mean_accuracy(tgt) >= 0.95);
}

TEST_CASE("training is bit-deterministic") {
  const DomainDataset ds = gen_two_gaussians({-1.0}, {1.0}, 1.0, 100, 5);
  TrainConfig c = small_config(2);
  c.steps = 120;
  c.seed = 42;
  const TrainResult a = train_dat(ds, ds, c);
  const TrainResult b = train_dat(ds, ds, c);
  CHECK(model_flat(a.model) == model_flat(b.model));
  REQUIRE(a.log.records.size() == b.log.records.size());
  for (std::size_t i = 0; i < a.log.records.size(); ++i) {
    CHECK(a.log.records[i].cls_loss == b.log.records[i].cls_loss);
    CHECK(a.log.records[i].adv_loss == b.log.records[i].adv_loss);
    CHECK(a.log.records[i].encoder_adv_grad_norm == b.log.records[i].encoder_adv_grad_norm);
  }
  std::ostringstream ja, jb;
  write_metrics_jsonl(ja, a.log);
  write_metrics_jsonl(jb, b.log);
  CHECK(ja.str() == jb.str());
}

TEST_CASE("smoothing mode none and gamma 1 produce identical trajectories") {
  const DomainDataset ds = gen_two_gaussians({-1.0}, {1.0}, 1.0, 100, 7);
  TrainConfig c = small_config(2);
  c.steps = 150;
  TrainConfig c_none = c;
  c_none.smoothing.mode = SmoothingMode::none;
  const TrainResult a = train_dat(ds, ds, c);
  const TrainResult b = train_dat(ds, ds, c_none);
  CHECK(model_flat(a.model) == model_flat(b.model));
}

TEST_CASE("grl and alternating encoder updates agree at a frozen discriminator") {
  const DomainDataset ds = gen_two_gaussians({-1.0, 0.0}, {1.0, 0.5}, 1.0, 60, 11);
  TrainConfig c = small_config(2);
  Rng rng = substream(1234, "init");
  const Model model = init_model(c, ds.dim, ds.num_domains, rng);
  std::vector<int> rows;
  for (int i = 0; i < 40; ++i) rows.push_back(i * 3 % static_cast<int>(ds.points.size()));
  const SmoothingSpec spec{0.8, SmoothingMode::two_sided, false, 2};
  const double lambda = 0.7;

  Tape t_grl;
  ForwardPass grl_pass = forward_batch(t_grl, model, ds, rows, spec, true, 1.0);
  t_grl.backward(total_objective(grl_pass.cls_loss, grl_pass.adv_loss, lambda));
  const std::vector<double> g_grl = flatten_grads(read_mlp_grads(grl_pass.enc));

  Tape t_alt;
  ForwardPass alt_pass = forward_batch(t_alt, model, ds, rows, spec, false, 1.0);
  t_alt.backward(add(alt_pass.cls_loss, scale(alt_pass.adv_loss, -lambda)));
  const std::vector<double> g_alt = flatten_grads(read_mlp_grads(alt_pass.enc));

  REQUIRE(g_grl.size() == g_alt.size());
  for (std::size_t i = 0; i < g_grl.size(); ++i) {
    CHECK(std::abs(g_grl[i] - g_alt[i]) <= 1e-12);
  }
  // losses themselves coincide too
  CHECK(grl_pass.cls_loss.scalar_value() == alt_pass.cls_loss.scalar_value());
  CHECK(grl_pass.adv_loss.scalar_value() == alt_pass.adv_loss.scalar_value());
}

TEST_CASE("alternating schedule trains the discriminator phase") {
  // lambda = 0 freezes the adversarial pressure on the encoder, so the
  // discriminator phase alone should beat chance on separable domains
  const DomainDataset ds = gen_two_gaussians({-2.0}, {2.0}, 1.0, 150, 13);
  TrainConfig c = small_config(2);
  c.schedule = Schedule::alternating;
  c.lambda = 0.0;
  c.n_d = 3;
  c.n_e = 1;
  c.steps = 150;
  const TrainResult res = train_dat(ds, ds, c);
  CHECK(!res.diverged);
  CHECK(res.log.records.back().adv_loss < std::log(2.0));
}

TEST_CASE("evaluate") {
  CircleConfig cc;
  cc.seed = 17;
  const DomainDataset circle = gen_circle(cc);

  SUBCASE("constant prediction scores one half on balanced data") {
    Model constant = radial_oracle_model(3.0);
    constant.classifier.weights = {{0, 0, 0, 0, 0, 0}, {0, 0, 0, 0, 0, 0}};
    constant.classifier.biases = {{0, 0, 0}, {1.0, 0.0}};  // always class 0
    const EvalResult r = evaluate(constant, circle, circle.target_domains);
    for (double a : r.accuracy) CHECK(a == 0.5);
  }
  SUBCASE("radial oracle model scores at least 99 percent everywhere") {
    const Model oracle = radial_oracle_model(2.95);
    std::vector<int> all_domains;
    for (int d = 0; d < 30; ++d) all_domains.push_back(d);
    const EvalResult r = evaluate(oracle, circle, all_domains);
    REQUIRE(r.accuracy.size() == 30);
    for (double a : r.accuracy) CHECK(a >= 0.99);
  }
  SUBCASE("empty domains are excluded and flagged") {
    const Model oracle = radial_oracle_model(2.95);
    const std::vector<int> domains{2, 99};
    const EvalResult r = evaluate(oracle, circle, domains);
    CHECK(r.domains == std::vector<int>{2});
    CHECK(r.empty_domains == std::vector<int>{99});
  }
  SUBCASE("accuracy is invariant under shuffling") {
    const Model oracle = radial_oracle_model(2.95);
    DomainDataset shuffled = circle;
    Rng rng(3);
    for (std::size_t i = shuffled.points.size(); i > 1; --i) {
      std::swap(shuffled.points[i - 1], shuffled.points[rng.below(i)]);
    }
    const EvalResult a = evaluate(oracle, circle, circle.source_domains);
    const EvalResult b = evaluate(oracle, shuffled, circle.source_domains);
    CHECK(a.accuracy == b.accuracy);
  }
}

TEST_CASE("adv_grad_norm") {
  const DomainDataset ds = gen_two_gaussians({-1.0}, {1.0}, 1.0, 50, 19);
  TrainConfig c = small_config(2);
  Rng rng = substream(5, "init");
  Model model = init_model(c, ds.dim, ds.num_domains, rng);
  std::vector<int> rows;
  for (int i = 0; i < 30; ++i) rows.push_back(i);

  SUBCASE("lambda zero gives zero") {
    const SmoothingSpec spec{0.9, SmoothingMode::two_sided, false, 2};
    CHECK(adv_grad_norm(model, ds, rows, spec, 0.0) == 0.0);
  }
  SUBCASE("uniform target met by a zero-weight discriminator gives zero") {
    for (auto& w : model.discriminator.weights) std::fill(w.begin(), w.end(), 0.0);
    for (auto& b : model.discriminator.biases) std::fill(b.begin(), b.end(), 0.0);
    const SmoothingSpec spec{0.5, SmoothingMode::two_sided, false, 2};
    CHECK(adv_grad_norm(model, ds, rows, spec, 1.0) == 0.0);
  }
  SUBCASE("generic case is positive and finite") {
    const SmoothingSpec spec{0.9, SmoothingMode::two_sided, false, 2};
    const double n = adv_grad_norm(model, ds, rows, spec, 1.0);
    CHECK(n > 0.0);
    CHECK(std::isfinite(n));
  }
}

TEST_CASE("annealed gamma is logged exactly") {
  const DomainDataset ds = gen_two_gaussians({-1.0}, {1.0}, 1.0, 60, 23);
  TrainConfig c = small_config(2);
  c.steps = 100;
  c.eval_every = 10;
  c.smoothing.anneal = true;
  const TrainResult res = train_dat(ds, ds, c);
  REQUIRE(!res.log.records.empty());
  CHECK(res.log.records.front().step == 0);
  CHECK(res.log.records.front().gamma == 1.0);
  CHECK(res.log.records.back().step == 100);
  CHECK(res.log.records.back().gamma == 0.5);  // 1/M at the end
  for (const MetricRecord& r : res.log.records) {
    CHECK(r.gamma == anneal_gamma(r.step, c.steps, 2));
  }
}

TEST_CASE("smoothing arity must match the data") {
  const DomainDataset ds = gen_two_gaussians({-1.0}, {1.0}, 1.0, 30, 29);
  TrainConfig c = small_config(3);
  CHECK_THROWS_AS(train_dat(ds, ds, c), OpError);
}

TEST_CASE("divergence is flagged, not thrown") {
  const DomainDataset ds = gen_two_gaussians({-1.0}, {1.0}, 1.0, 40, 31);
  TrainConfig c = small_config(2);
  c.activation = Activation::relu;
  c.lr = 1e18;
  c.steps = 50;
  const TrainResult res = train_dat(ds, ds, c);
  CHECK(res.diverged);
  CHECK(res.log.diverged);
}

TEST_CASE("model checkpoint round-trip") {
  TrainConfig c = small_config(2);
  Rng rng = substream(7, "init");
  const Model m = init_model(c, 2, 2, rng);
  std::stringstream ss;
  save_model(ss, m);
  const Model back = load_model(ss);
  CHECK(model_flat(back) == model_flat(m));
}

TEST_CASE("noise sweep coincidence and infeasibility") {
  const DomainDataset ds = gen_two_gaussians({-1.0}, {1.0}, 1.0, 300, 909);
  NoiseSweepConfig cfg;
  cfg.gamma_star = 0.7;
  cfg.e_grid = {0.0};
  cfg.num_seeds = 1;
  cfg.steps = 200;
  const std::vector<NoiseSweepCell> cells = noise_sweep(ds, cfg);
  REQUIRE(cells.size() == 1);
  // at e = 0 the corrected gamma equals gamma_star, so the runs coincide
  CHECK(cells[0].gamma_opt == 0.7);
  CHECK(cells[0].dist_opt == cells[0].dist_star);

  NoiseSweepConfig bad = cfg;
  bad.gamma_star = 0.9;
  bad.e_grid = {0.4};
  const std::vector<NoiseSweepCell> cells2 = noise_sweep(ds, bad);
  CHECK(cells2[0].infeasible);  // (0.9 - 0.4) / 0.2 = 2.5 is out of range
  CHECK(std::isnan(cells2[0].dist_opt));
}

TEST_CASE("gradient bound check report structure") {
  const DomainDataset ds = gen_disjoint_support(1.0, 50, 7);
  BoundCheckConfig cfg;
  cfg.warm_steps = 100;
  cfg.adapt_steps = 100;
  cfg.lr = 0.5;
  cfg.jacobian_samples = 20;
  const std::vector<double> gammas{1.0, 0.8};
  const std::vector<GradientBoundReport> reps = gradient_bound_check(ds, gammas, cfg);
  REQUIRE(reps.size() == 2);
  CHECK(reps[0].c_hat > 0.0);
  CHECK(reps[0].c_hat == reps[1].c_hat);  // shared frozen encoder
  CHECK(reps[0].bound == 0.0);            // M * (1 - 1) * c_hat
  CHECK(reps[1].bound == doctest::Approx(2.0 * 0.2 * reps[1].c_hat).epsilon(1e-12));
  for (const GradientBoundReport& r : reps) {
    CHECK(std::isfinite(r.measured_grad_norm));
    CHECK(r.disc_accuracy >= 0.0);
    CHECK(r.disc_accuracy <= 1.0);
  }
}

TEST_CASE("partial label experiment table shape") {
  CircleConfig cc;
  cc.n_domains = 8;
  cc.points_per_domain = 20;
  cc.seed = 4;
  const DomainDataset full = gen_circle(cc);
  PartialLabelConfig cfg;
  cfg.fractions = {1.0, 0.5};
  cfg.num_seeds = 2;
  cfg.base.steps = 40;
  cfg.base.batch_size = 16;
  cfg.base.eval_every = 40;
  cfg.base.encoder_hidden = {8};
  cfg.base.feature_dim = 4;
  cfg.base.discriminator_hidden = {8};
  const std::vector<PartialLabelRow> rows = partial_label_experiment(full, cfg);
  REQUIRE(rows.size() == 3);  // |fractions| + the random-partition row
  CHECK(rows[0].fraction == 1.0);
  CHECK(rows[1].fraction == 0.5);
  CHECK(rows[2].setting == "random_partition");
  for (const PartialLabelRow& r : rows) {
    CHECK(r.dann_mean >= 0.0);
    CHECK(r.dann_mean <= 1.0);
    CHECK(r.els_mean >= 0.0);
    CHECK(r.els_mean <= 1.0);
    CHECK(r.dann_std >= 0.0);
    CHECK(r.els_std >= 0.0);
  }
}

TEST_CASE("plain adversarial run on the circle dataset holds source accuracy") {
  CircleConfig cc;
  cc.seed = 12345;
  const DomainDataset full = gen_circle(cc);
  TrainConfig c;
  c.schedule = Schedule::grl;
  c.lambda = 3.0;
  c.lr = 0.1;
  c.steps = 1500;
  c.batch_size = 60;
  c.eval_every = 1500;
  c.encoder_hidden = {32, 32};
  c.feature_dim = 8;
  c.discriminator_hidden = {16};
  c.smoothing = SmoothingSpec{1.0, SmoothingMode::two_sided, false, 30};
  c.seed = 1;
  const TrainResult res = train_dat(full, full, c);
  CHECK(!res.diverged);
  const EvalResult src = evaluate(res.model, full, full.source_domains);
  CHECK(mean_accuracy(src) >= 0.9);
}

TEST_CASE("one-sided smoothing trains through the full path") {
  const DomainDataset ds = gen_two_gaussians({-1.0}, {1.0}, 1.0, 80, 37);
  TrainConfig c = small_config(2);
  c.steps = 80;
  c.smoothing.mode = SmoothingMode::one_sided;
  c.smoothing.gamma = 0.9;
  const TrainResult res = train_dat(ds, ds, c);
  CHECK(!res.diverged);
  CHECK(std::isfinite(res.log.records.back().adv_loss));
}
