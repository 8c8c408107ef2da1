#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <tuple>
#include <utility>

#include "elslab/trainer.hpp"

namespace elslab {

namespace {

// Features of every point under a fixed encoder.
std::vector<double> encode_all(const MlpParams& encoder, const DomainDataset& ds) {
  Tape tape;
  std::vector<double> x;
  x.reserve(ds.points.size() * static_cast<std::size_t>(ds.dim));
  for (const LabeledPoint& p : ds.points) {
    for (int k = 0; k < ds.dim; ++k) x.push_back(p.x[static_cast<std::size_t>(k)]);
  }
  Tensor xt = tape.constant(Shape{static_cast<int>(ds.points.size()), ds.dim}, std::move(x));
  return mlp_forward(tape, encoder, xt).values();
}

double disc_accuracy_on(const MlpParams& disc, const std::vector<double>& features,
                        int feat_dim, const std::vector<int>& env) {
  Tape tape;
  Tensor f = tape.constant(Shape{static_cast<int>(env.size()), feat_dim}, features);
  Tensor logits = mlp_forward(tape, disc, f);
  const int m = logits.cols();
  long correct = 0;
  for (std::size_t r = 0; r < env.size(); ++r) {
    const double* row = logits.values().data() + r * static_cast<std::size_t>(m);
    int argmax = 0;
    for (int j = 1; j < m; ++j) {
      if (row[j] > row[argmax]) argmax = j;
    }
    if (argmax == env[r]) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(env.size());
}

// Full-batch gradient descent of the smoothed discriminator loss on fixed
// features.
void fit_discriminator(MlpParams& disc, const std::vector<double>& features,
                       int feat_dim, const std::vector<int>& env,
                       const SmoothingSpec& spec, long steps, double lr) {
  Sgd opt(lr);
  for (long s = 0; s < steps; ++s) {
    Tape tape;
    Tensor f = tape.constant(Shape{static_cast<int>(env.size()), feat_dim}, features);
    TapeMlp d = load_mlp(tape, disc);
    Tensor logits = mlp_forward(tape, d, f, disc.activation);
    Tensor loss = els_discriminator_loss(tape, logits, env, spec);
    tape.backward(loss);
    opt.step(disc, read_mlp_grads(d));
  }
}

}  // namespace

std::vector<GradientBoundReport> gradient_bound_check(const DomainDataset& ds,
                                                      std::span<const double> gammas,
                                                      const BoundCheckConfig& config) {
  ds.validate();
  const int m = ds.num_domains;

  Rng enc_rng = substream(config.seed, "bound-encoder");
  std::vector<int> enc_dims{ds.dim};
  enc_dims.insert(enc_dims.end(), config.encoder_hidden.begin(), config.encoder_hidden.end());
  enc_dims.push_back(config.feature_dim);
  const MlpParams encoder = init_mlp(enc_dims, config.activation, enc_rng);

  const std::vector<double> features = encode_all(encoder, ds);
  std::vector<int> env;
  env.reserve(ds.points.size());
  for (const LabeledPoint& p : ds.points) env.push_back(p.env_observed);

  std::vector<long> dom_count(static_cast<std::size_t>(m), 0);
  for (int e : env) ++dom_count[static_cast<std::size_t>(e)];

  // Confidence phase: plain loss until the discriminator is a near-perfect
  // classifier of the observed environments.
  Rng disc_rng = substream(config.seed, "bound-discriminator");
  MlpParams warm_disc = init_mlp({config.feature_dim, m}, config.activation, disc_rng);
  SmoothingSpec plain{1.0, SmoothingMode::two_sided, false, m};
  fit_discriminator(warm_disc, features, config.feature_dim, env, plain,
                    config.warm_steps, config.lr);

  // C_hat: sampled sup over inputs of the spectral norm of the encoder
  // Jacobian w.r.t. the encoder parameters, via explicit per-sample rows and
  // power iteration on J*J^T.
  const std::size_t n_samples =
      std::min<std::size_t>(ds.points.size(), static_cast<std::size_t>(config.jacobian_samples));
  double c_hat = 0.0;
  for (std::size_t i = 0; i < n_samples; ++i) {
    const LabeledPoint& p = ds.points[i];
    std::vector<std::vector<double>> jac;  // feature_dim x P
    for (int k = 0; k < config.feature_dim; ++k) {
      Tape tape;
      std::vector<double> xrow(static_cast<std::size_t>(ds.dim));
      for (int c = 0; c < ds.dim; ++c) xrow[static_cast<std::size_t>(c)] = p.x[static_cast<std::size_t>(c)];
      Tensor x = tape.constant(Shape{1, ds.dim}, std::move(xrow));
      TapeMlp enc = load_mlp(tape, encoder);
      Tensor f = mlp_forward(tape, enc, x, encoder.activation);
      std::vector<double> onehot(static_cast<std::size_t>(config.feature_dim), 0.0);
      onehot[static_cast<std::size_t>(k)] = 1.0;
      Tensor pick = tape.constant(Shape{1, config.feature_dim}, std::move(onehot));
      tape.backward(sum(mul(f, pick)));
      jac.push_back(flatten_grads(read_mlp_grads(enc)));
    }
    // A = J*J^T, power-iterate for the top eigenvalue.
    const int fd = config.feature_dim;
    std::vector<double> a(static_cast<std::size_t>(fd) * fd, 0.0);
    for (int r = 0; r < fd; ++r) {
      for (int c = 0; c < fd; ++c) {
        double dot = 0.0;
        const auto& jr = jac[static_cast<std::size_t>(r)];
        const auto& jc = jac[static_cast<std::size_t>(c)];
        for (std::size_t t = 0; t < jr.size(); ++t) dot += jr[t] * jc[t];
        a[static_cast<std::size_t>(r) * fd + c] = dot;
      }
    }
    std::vector<double> v(static_cast<std::size_t>(fd), 1.0 / std::sqrt(static_cast<double>(fd)));
    double lambda = 0.0;
    for (int it = 0; it < config.power_iters; ++it) {
      std::vector<double> av(static_cast<std::size_t>(fd), 0.0);
      for (int r = 0; r < fd; ++r) {
        for (int c = 0; c < fd; ++c) {
          av[static_cast<std::size_t>(r)] += a[static_cast<std::size_t>(r) * fd + c] * v[static_cast<std::size_t>(c)];
        }
      }
      double nrm = 0.0;
      for (double t : av) nrm += t * t;
      nrm = std::sqrt(nrm);
      if (nrm == 0.0) break;
      for (int r = 0; r < fd; ++r) v[static_cast<std::size_t>(r)] = av[static_cast<std::size_t>(r)] / nrm;
      lambda = nrm;
    }
    c_hat = std::max(c_hat, std::sqrt(lambda));
  }

  std::vector<GradientBoundReport> reports;
  for (double gamma : gammas) {
    SmoothingSpec spec{gamma, SmoothingMode::two_sided, false, m};
    spec.validate();
    MlpParams disc = warm_disc;
    fit_discriminator(disc, features, config.feature_dim, env, spec,
                      config.adapt_steps, config.lr);

    GradientBoundReport rep;
    rep.gamma = gamma;
    rep.disc_accuracy = disc_accuracy_on(disc, features, config.feature_dim, env);
    rep.c_hat = c_hat;
    rep.bound = m * (1.0 - gamma) * c_hat;
    rep.inconclusive = rep.disc_accuracy < config.accuracy_target;

    // Encoder gradient of the sum over domains of the per-domain mean smoothed
    // loss, with the encoder attached to the tape.
    Tape tape;
    std::vector<double> x;
    x.reserve(ds.points.size() * static_cast<std::size_t>(ds.dim));
    for (const LabeledPoint& p : ds.points) {
      for (int c = 0; c < ds.dim; ++c) x.push_back(p.x[static_cast<std::size_t>(c)]);
    }
    Tensor xt = tape.constant(Shape{static_cast<int>(ds.points.size()), ds.dim}, std::move(x));
    TapeMlp enc = load_mlp(tape, encoder);
    Tensor f = mlp_forward(tape, enc, xt, encoder.activation);
    TapeMlp d = load_mlp(tape, disc);
    Tensor logits = mlp_forward(tape, d, f, disc.activation);
    Tensor logp = log_softmax_rows(logits);
    std::vector<double> weights(ds.points.size() * static_cast<std::size_t>(m));
    for (std::size_t r = 0; r < ds.points.size(); ++r) {
      const std::vector<double> target = smooth_labels(env[r], spec);
      for (int j = 0; j < m; ++j) {
        weights[r * static_cast<std::size_t>(m) + static_cast<std::size_t>(j)] =
            target[static_cast<std::size_t>(j)] /
            static_cast<double>(dom_count[static_cast<std::size_t>(env[r])]);
      }
    }
    Tensor w = tape.constant(Shape{static_cast<int>(ds.points.size()), m}, std::move(weights));
    Tensor objective = neg(sum(mul(w, logp)));
    tape.backward(objective);
    double acc = 0.0;
    for (const Tensor& t : enc.w) {
      for (double g : t.grad()) acc += g * g;
    }
    for (const Tensor& t : enc.b) {
      for (double g : t.grad()) acc += g * g;
    }
    rep.measured_grad_norm = std::sqrt(acc);
    reports.push_back(rep);
  }
  return reports;
}

namespace {

// Minibatch training of a discriminator applied directly to the inputs.
MlpParams train_input_discriminator(const DomainDataset& ds,
                                    const std::vector<int>& env_labels,
                                    const SmoothingSpec& spec,
                                    const NoiseSweepConfig& config,
                                    std::uint64_t stream_seed) {
  Rng init_rng = substream(stream_seed, "disc-init");
  Rng batch_rng = substream(stream_seed, "disc-batch");
  std::vector<int> dims{ds.dim};
  dims.insert(dims.end(), config.disc_hidden.begin(), config.disc_hidden.end());
  dims.push_back(2);
  MlpParams disc = init_mlp(dims, config.activation, init_rng);
  Sgd opt(config.lr);
  const std::size_t n = ds.points.size();
  for (long s = 0; s < config.steps; ++s) {
    std::vector<int> rows(static_cast<std::size_t>(config.batch_size));
    std::vector<int> env(rows.size());
    std::vector<double> x(rows.size() * static_cast<std::size_t>(ds.dim));
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const int r = static_cast<int>(batch_rng.below(n));
      rows[i] = r;
      env[i] = env_labels[static_cast<std::size_t>(r)];
      for (int k = 0; k < ds.dim; ++k) {
        x[i * static_cast<std::size_t>(ds.dim) + static_cast<std::size_t>(k)] =
            ds.points[static_cast<std::size_t>(r)].x[static_cast<std::size_t>(k)];
      }
    }
    Tape tape;
    Tensor xt = tape.constant(Shape{config.batch_size, ds.dim}, std::move(x));
    TapeMlp d = load_mlp(tape, disc);
    Tensor logits = mlp_forward(tape, d, xt, disc.activation);
    Tensor loss = els_discriminator_loss(tape, logits, env, spec);
    tape.backward(loss);
    opt.step(disc, read_mlp_grads(d));
  }
  return disc;
}

// p(domain 0) on the probe grid.
std::vector<double> probe_curve(const MlpParams& disc, double lo, double hi, int n) {
  Tape tape;
  std::vector<double> x(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    x[static_cast<std::size_t>(i)] = lo + (hi - lo) * (i + 0.5) / n;
  }
  Tensor xt = tape.constant(Shape{n, 1}, std::move(x));
  Tensor p = softmax_rows(mlp_forward(tape, disc, xt));
  std::vector<double> out(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) out[static_cast<std::size_t>(i)] = p.value_at(i, 0);
  return out;
}

double probe_distance(const std::vector<double>& a, const std::vector<double>& b) {
  double acc = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    acc += d * d;
  }
  return std::sqrt(acc / static_cast<double>(a.size()));
}

}  // namespace

std::vector<NoiseSweepCell> noise_sweep(const DomainDataset& ds,
                                        const NoiseSweepConfig& config) {
  ds.validate();
  if (ds.num_domains != 2 || ds.dim != 1) {
    throw OpError("noise_sweep: expects a 1-D two-domain dataset");
  }
  double lo = ds.points.front().x[0], hi = lo;
  for (const LabeledPoint& p : ds.points) {
    lo = std::min(lo, p.x[0]);
    hi = std::max(hi, p.x[0]);
  }

  std::vector<int> clean_env;
  clean_env.reserve(ds.points.size());
  for (const LabeledPoint& p : ds.points) clean_env.push_back(p.env_observed);

  std::vector<NoiseSweepCell> cells;
  for (int seed_idx = 0; seed_idx < config.num_seeds; ++seed_idx) {
    const std::uint64_t seed_base = config.seed + 7919ull * static_cast<std::uint64_t>(seed_idx);
    const SmoothingSpec star{config.gamma_star, SmoothingMode::two_sided, false, 2};
    const MlpParams reference = train_input_discriminator(
        ds, clean_env, star, config, substream(seed_base, "reference").next_u64());
    const std::vector<double> ref_curve =
        probe_curve(reference, lo, hi, config.probe_points);

    for (std::size_t ei = 0; ei < config.e_grid.size(); ++ei) {
      const double e = config.e_grid[ei];
      NoiseModel noise{e, substream(seed_base, "flip").next_u64() + ei};
      const std::vector<int> noisy = flip_labels(clean_env, noise);

      NoiseSweepCell cell;
      cell.e = e;
      cell.seed_index = seed_idx;
      // the stream is keyed on the gamma value, so variants with equal gamma
      // (e.g. gamma_opt == gamma_star at e = 0) train identically
      auto run = [&](double gamma) {
        SmoothingSpec spec{gamma, SmoothingMode::two_sided, false, 2};
        std::uint64_t gbits = 0;
        std::memcpy(&gbits, &gamma, sizeof(gbits));
        const MlpParams disc = train_input_discriminator(
            ds, noisy, spec, config,
            substream(seed_base, "variant").next_u64() ^ gbits ^ (1099511628211ull * ei));
        return probe_distance(probe_curve(disc, lo, hi, config.probe_points), ref_curve);
      };
      cell.dist_plain = run(1.0);
      cell.dist_star = run(config.gamma_star);
      try {
        cell.gamma_opt = optimal_gamma_under_noise(config.gamma_star, e);
        cell.dist_opt = run(cell.gamma_opt);
      } catch (const InfeasibleSmoothing&) {
        cell.infeasible = true;
        cell.gamma_opt = std::numeric_limits<double>::quiet_NaN();
        cell.dist_opt = std::numeric_limits<double>::quiet_NaN();
      }
      cells.push_back(cell);
    }
  }
  return cells;
}

namespace {

std::pair<double, double> mean_std(const std::vector<double>& xs) {
  double mean = 0.0;
  for (double x : xs) mean += x;
  mean /= static_cast<double>(xs.size());
  double var = 0.0;
  for (double x : xs) var += (x - mean) * (x - mean);
  var = xs.size() > 1 ? var / static_cast<double>(xs.size() - 1) : 0.0;
  return {mean, std::sqrt(var)};
}

}  // namespace

std::vector<PartialLabelRow> partial_label_experiment(const DomainDataset& full_ds,
                                                      const PartialLabelConfig& config) {
  // Training uses the whole dataset: classification sees only source rows
  // (forward_batch masks the rest) while the adversarial term aligns every
  // domain, so corrupted environment labels can actually steer the encoder.
  auto run_arm = [&](const DomainDataset& train_ds, bool smoothed, std::uint64_t seed) {
    TrainConfig cfg = config.base;
    cfg.seed = seed;
    cfg.smoothing.mode = SmoothingMode::two_sided;
    cfg.smoothing.num_domains = train_ds.num_domains;
    if (smoothed) {
      if (!cfg.smoothing.anneal && cfg.smoothing.gamma >= 1.0) cfg.smoothing.anneal = true;
    } else {
      cfg.smoothing.anneal = false;
      cfg.smoothing.gamma = 1.0;
    }
    TrainResult res = train_dat(train_ds, full_ds, cfg);
    return mean_accuracy(evaluate(res.model, full_ds, full_ds.target_domains));
  };

  std::vector<PartialLabelRow> rows;
  for (double fraction : config.fractions) {
    PartialLabelRow row;
    row.setting = "fraction " + std::to_string(fraction);
    row.fraction = fraction;
    std::vector<double> dann, els;
    for (int s = 1; s <= config.num_seeds; ++s) {
      const DomainDataset noisy =
          partial_labels(full_ds, fraction,
                         config.label_seed_base + static_cast<std::uint64_t>(s));
      dann.push_back(run_arm(noisy, false, config.base.seed + static_cast<std::uint64_t>(s)));
      els.push_back(run_arm(noisy, true, config.base.seed + static_cast<std::uint64_t>(s)));
    }
    std::tie(row.dann_mean, row.dann_std) = mean_std(dann);
    std::tie(row.els_mean, row.els_std) = mean_std(els);
    rows.push_back(row);
  }

  if (config.include_random_partition) {
    PartialLabelRow row;
    row.setting = "random_partition";
    row.fraction = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> dann, els;
    for (int s = 1; s <= config.num_seeds; ++s) {
      const DomainDataset part =
          random_partition(full_ds, config.partition_domains,
                           config.partition_seed_base + static_cast<std::uint64_t>(s));
      dann.push_back(run_arm(part, false, config.base.seed + static_cast<std::uint64_t>(s)));
      els.push_back(run_arm(part, true, config.base.seed + static_cast<std::uint64_t>(s)));
    }
    std::tie(row.dann_mean, row.dann_std) = mean_std(dann);
    std::tie(row.els_mean, row.els_std) = mean_std(els);
    rows.push_back(row);
  }
  return rows;
}

}  // namespace elslab
