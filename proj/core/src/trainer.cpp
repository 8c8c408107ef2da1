#include "elslab/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>

namespace elslab {

void Model::validate() const {
  encoder.validate();
  classifier.validate();
  discriminator.validate();
  if (classifier.in_dim() != encoder.out_dim() ||
      discriminator.in_dim() != encoder.out_dim()) {
    throw OpError("model: head input widths must equal the encoder output width");
  }
}

void save_model(std::ostream& os, const Model& m) {
  m.validate();
  os << "model 1\n";
  os << "section encoder\n";
  save_mlp(os, m.encoder);
  os << "section classifier\n";
  save_mlp(os, m.classifier);
  os << "section discriminator\n";
  save_mlp(os, m.discriminator);
}

Model load_model(std::istream& is) {
  std::string tag;
  int version = 0;
  is >> tag >> version;
  if (tag != "model" || version != 1) throw OpError("model checkpoint: bad header");
  Model m;
  auto section = [&](const char* name) -> MlpParams {
    std::string s, n;
    is >> s >> n;
    if (s != "section" || n != name) {
      throw OpError("model checkpoint: expected section " + std::string(name));
    }
    return load_mlp_checkpoint(is);
  };
  m.encoder = section("encoder");
  m.classifier = section("classifier");
  m.discriminator = section("discriminator");
  m.validate();
  return m;
}

const char* schedule_name(Schedule s) {
  return s == Schedule::grl ? "grl" : "alternating";
}

Schedule schedule_from_name(const std::string& name) {
  if (name == "grl") return Schedule::grl;
  if (name == "alternating") return Schedule::alternating;
  throw OpError("unknown schedule: " + name);
}

void TrainConfig::validate() const {
  if (lambda < 0.0) throw OpError("train config: lambda must be >= 0");
  if (lr <= 0.0) throw OpError("train config: lr must be > 0");
  if (momentum < 0.0 || momentum >= 1.0) throw OpError("train config: momentum in [0, 1)");
  if (steps < 1) throw OpError("train config: steps must be >= 1");
  if (batch_size < 1) throw OpError("train config: batch_size must be >= 1");
  if (eval_every < 1) throw OpError("train config: eval_every must be >= 1");
  if (schedule == Schedule::alternating && (n_d < 1 || n_e < 1)) {
    throw OpError("train config: alternating needs n_d, n_e >= 1");
  }
  if (feature_dim < 1 || num_classes < 2) {
    throw OpError("train config: bad architecture widths");
  }
  smoothing.validate();
}

Model init_model(const TrainConfig& config, int input_dim, int num_domains, Rng& rng) {
  auto dims = [&](int in, const std::vector<int>& hidden, int out) {
    std::vector<int> d;
    d.push_back(in);
    d.insert(d.end(), hidden.begin(), hidden.end());
    d.push_back(out);
    return d;
  };
  Model m;
  m.encoder = init_mlp(dims(input_dim, config.encoder_hidden, config.feature_dim),
                       config.activation, rng);
  m.classifier = init_mlp(dims(config.feature_dim, config.classifier_hidden, config.num_classes),
                          config.activation, rng);
  m.discriminator = init_mlp(dims(config.feature_dim, config.discriminator_hidden, num_domains),
                             config.activation, rng);
  m.validate();
  return m;
}

namespace {

std::vector<double> gather_inputs(const DomainDataset& ds, std::span<const int> rows) {
  std::vector<double> x;
  x.reserve(rows.size() * static_cast<std::size_t>(ds.dim));
  for (int r : rows) {
    const LabeledPoint& p = ds.points[static_cast<std::size_t>(r)];
    for (int k = 0; k < ds.dim; ++k) x.push_back(p.x[static_cast<std::size_t>(k)]);
  }
  return x;
}

double l2_norm_of_grads(const TapeMlp& on_tape) {
  double acc = 0.0;
  for (const Tensor& t : on_tape.w) {
    for (double g : t.grad()) acc += g * g;
  }
  for (const Tensor& t : on_tape.b) {
    for (double g : t.grad()) acc += g * g;
  }
  return std::sqrt(acc);
}

}  // namespace

ForwardPass forward_batch(Tape& tape, const Model& model, const DomainDataset& ds,
                          std::span<const int> rows, const SmoothingSpec& spec,
                          bool grl, double grl_scale) {
  if (rows.empty()) throw OpError("forward_batch: empty batch");
  ForwardPass fp;
  Tensor x = tape.constant(Shape{static_cast<int>(rows.size()), ds.dim},
                           gather_inputs(ds, rows));
  fp.enc = load_mlp(tape, model.encoder);
  fp.cls = load_mlp(tape, model.classifier);
  fp.disc = load_mlp(tape, model.discriminator);
  fp.features = mlp_forward(tape, fp.enc, x, model.encoder.activation);

  // Classification over source rows only.
  std::vector<int> cls_labels;
  std::vector<double> mask;
  cls_labels.reserve(rows.size());
  mask.reserve(rows.size());
  int n_src = 0;
  for (int r : rows) {
    const LabeledPoint& p = ds.points[static_cast<std::size_t>(r)];
    const bool is_src = std::find(ds.source_domains.begin(), ds.source_domains.end(),
                                  p.env_true) != ds.source_domains.end();
    cls_labels.push_back(p.class_label);
    mask.push_back(is_src ? 1.0 : 0.0);
    n_src += is_src ? 1 : 0;
  }
  fp.source_rows = n_src;
  if (n_src > 0) {
    Tensor cls_logits = mlp_forward(tape, fp.cls, fp.features, model.classifier.activation);
    Tensor logp = gather_rows(log_softmax_rows(cls_logits), cls_labels);
    Tensor m = tape.constant(Shape{static_cast<int>(rows.size()), 1}, std::move(mask));
    fp.cls_loss = scale(sum(mul(m, logp)), -1.0 / n_src);
  } else {
    fp.cls_loss = tape.constant(0.0);
  }

  // Adversarial loss over every row, on observed environment labels.
  std::vector<int> env_labels;
  env_labels.reserve(rows.size());
  for (int r : rows) env_labels.push_back(ds.points[static_cast<std::size_t>(r)].env_observed);
  Tensor disc_in = grl ? gradient_reversal(fp.features, grl_scale) : fp.features;
  Tensor disc_logits = mlp_forward(tape, fp.disc, disc_in, model.discriminator.activation);
  fp.adv_loss = els_discriminator_loss(tape, disc_logits, env_labels, spec);
  return fp;
}

EvalResult evaluate(const Model& model, const DomainDataset& ds,
                    std::span<const int> domains) {
  model.validate();
  EvalResult res;
  std::vector<long> correct(static_cast<std::size_t>(ds.num_true_domains), 0);
  std::vector<long> total(static_cast<std::size_t>(ds.num_true_domains), 0);
  // One forward pass over the whole dataset.
  std::vector<int> rows(ds.points.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[static_cast<std::size_t>(i)] = static_cast<int>(i);
  Tape tape;
  Tensor x = tape.constant(Shape{static_cast<int>(rows.size()), ds.dim},
                           gather_inputs(ds, rows));
  Tensor feats = mlp_forward(tape, model.encoder, x);
  Tensor logits = mlp_forward(tape, model.classifier, feats);
  const int c = logits.cols();
  for (std::size_t i = 0; i < ds.points.size(); ++i) {
    const double* row = logits.values().data() + i * static_cast<std::size_t>(c);
    int argmax = 0;
    for (int j = 1; j < c; ++j) {
      if (row[j] > row[argmax]) argmax = j;
    }
    const LabeledPoint& p = ds.points[i];
    ++total[static_cast<std::size_t>(p.env_true)];
    if (argmax == p.class_label) ++correct[static_cast<std::size_t>(p.env_true)];
  }
  for (int d : domains) {
    if (d < 0 || d >= ds.num_true_domains || total[static_cast<std::size_t>(d)] == 0) {
      res.empty_domains.push_back(d);
      continue;
    }
    res.domains.push_back(d);
    res.accuracy.push_back(static_cast<double>(correct[static_cast<std::size_t>(d)]) /
                           static_cast<double>(total[static_cast<std::size_t>(d)]));
  }
  return res;
}

double mean_accuracy(const EvalResult& r) {
  if (r.accuracy.empty()) return 0.0;
  double acc = 0.0;
  for (double a : r.accuracy) acc += a;
  return acc / static_cast<double>(r.accuracy.size());
}

double adv_grad_norm(const Model& model, const DomainDataset& ds,
                     std::span<const int> rows, const SmoothingSpec& spec,
                     double lambda) {
  if (lambda < 0.0) throw OpError("adv_grad_norm: lambda must be >= 0");
  Tape tape;
  ForwardPass fp = forward_batch(tape, model, ds, rows, spec, /*grl=*/false, 1.0);
  Tensor weighted = scale(fp.adv_loss, lambda);
  tape.backward(weighted);
  const double norm = l2_norm_of_grads(fp.enc);
  if (!std::isfinite(norm)) throw NumericError("adv_grad_norm: non-finite gradient");
  return norm;
}

namespace {

struct BatchSampler {
  // Domain-balanced sampling by observed environment, with replacement.
  std::vector<std::vector<int>> by_domain;
  int per_domain = 1;

  BatchSampler(const DomainDataset& ds, int batch_size) {
    by_domain.resize(static_cast<std::size_t>(ds.num_domains));
    for (std::size_t i = 0; i < ds.points.size(); ++i) {
      by_domain[static_cast<std::size_t>(ds.points[i].env_observed)].push_back(
          static_cast<int>(i));
    }
    for (std::size_t d = 0; d < by_domain.size(); ++d) {
      if (by_domain[d].empty()) {
        throw OpError("train: observed domain " + std::to_string(d) +
                      " has no points");
      }
    }
    per_domain = std::max(1, batch_size / ds.num_domains);
  }

  std::vector<int> draw(Rng& rng) const {
    std::vector<int> rows;
    rows.reserve(by_domain.size() * static_cast<std::size_t>(per_domain));
    for (const std::vector<int>& group : by_domain) {
      for (int i = 0; i < per_domain; ++i) {
        rows.push_back(group[rng.below(group.size())]);
      }
    }
    return rows;
  }
};

}  // namespace

TrainResult train_dat(const DomainDataset& train_ds, const DomainDataset& eval_ds,
                      const TrainConfig& config) {
  config.validate();
  train_ds.validate();
  if (config.smoothing.num_domains != train_ds.num_domains) {
    throw OpError("train: smoothing num_domains (" +
                  std::to_string(config.smoothing.num_domains) +
                  ") != observed domains in the data (" +
                  std::to_string(train_ds.num_domains) + ")");
  }

  Rng init_rng = substream(config.seed, "init");
  Rng batch_rng = substream(config.seed, "batch");

  TrainResult res;
  res.model = init_model(config, train_ds.dim, train_ds.num_domains, init_rng);

  Sgd opt_enc(config.lr, config.momentum);
  Sgd opt_cls(config.lr, config.momentum);
  Sgd opt_disc(config.lr, config.momentum);

  BatchSampler sampler(train_ds, config.batch_size);

  std::vector<int> all_rows(train_ds.points.size());
  for (std::size_t i = 0; i < all_rows.size(); ++i) all_rows[i] = static_cast<int>(i);

  auto gamma_at = [&](long step) {
    return config.smoothing.anneal
               ? anneal_gamma(step, config.steps, config.smoothing.num_domains)
               : config.smoothing.gamma;
  };

  auto log_metrics = [&](long step) {
    const SmoothingSpec spec = config.smoothing.with_gamma(gamma_at(step));
    MetricRecord rec;
    rec.step = step;
    rec.gamma = spec.gamma;
    Tape tape;
    ForwardPass fp = forward_batch(tape, res.model, train_ds, all_rows, spec,
                                   /*grl=*/false, 1.0);
    rec.cls_loss = fp.cls_loss.scalar_value();
    rec.adv_loss = fp.adv_loss.scalar_value();
    rec.encoder_adv_grad_norm =
        adv_grad_norm(res.model, train_ds, all_rows, spec, config.lambda);
    EvalResult src = evaluate(res.model, eval_ds, eval_ds.source_domains);
    EvalResult tgt = evaluate(res.model, eval_ds, eval_ds.target_domains);
    rec.source_acc = src.accuracy;
    rec.target_acc = tgt.accuracy;
    res.log.records.push_back(std::move(rec));
  };

  try {
    log_metrics(0);
    for (long step = 0; step < config.steps; ++step) {
      const SmoothingSpec spec = config.smoothing.with_gamma(gamma_at(step));
      if (config.schedule == Schedule::grl) {
        std::vector<int> rows = sampler.draw(batch_rng);
        Tape tape;
        ForwardPass fp = forward_batch(tape, res.model, train_ds, rows, spec,
                                       /*grl=*/true, 1.0);
        Tensor total = total_objective(fp.cls_loss, fp.adv_loss, config.lambda);
        tape.backward(total);
        opt_enc.step(res.model.encoder, read_mlp_grads(fp.enc));
        opt_cls.step(res.model.classifier, read_mlp_grads(fp.cls));
        opt_disc.step(res.model.discriminator, read_mlp_grads(fp.disc));
      } else {
        // Discriminator phase: encoder features detached from the tape.
        for (int i = 0; i < config.n_d; ++i) {
          std::vector<int> rows = sampler.draw(batch_rng);
          Tape tape;
          Tensor x = tape.constant(Shape{static_cast<int>(rows.size()), train_ds.dim},
                                   gather_inputs(train_ds, rows));
          Tensor feats = mlp_forward(tape, res.model.encoder, x);
          Tensor detached = tape.constant(feats.shape(), feats.values());
          TapeMlp disc = load_mlp(tape, res.model.discriminator);
          Tensor logits =
              mlp_forward(tape, disc, detached, res.model.discriminator.activation);
          std::vector<int> env;
          env.reserve(rows.size());
          for (int r : rows) env.push_back(train_ds.points[static_cast<std::size_t>(r)].env_observed);
          Tensor loss = els_discriminator_loss(tape, logits, env, spec);
          tape.backward(loss);
          opt_disc.step(res.model.discriminator, read_mlp_grads(disc));
        }
        // Encoder/classifier phase: encoder ascends the discriminator loss.
        for (int i = 0; i < config.n_e; ++i) {
          std::vector<int> rows = sampler.draw(batch_rng);
          Tape tape;
          ForwardPass fp = forward_batch(tape, res.model, train_ds, rows, spec,
                                         /*grl=*/false, 1.0);
          Tensor total = add(fp.cls_loss, scale(fp.adv_loss, -config.lambda));
          tape.backward(total);
          opt_enc.step(res.model.encoder, read_mlp_grads(fp.enc));
          opt_cls.step(res.model.classifier, read_mlp_grads(fp.cls));
        }
      }
      const long done = step + 1;
      if (done % config.eval_every == 0 || done == config.steps) {
        log_metrics(done);
      }
    }
  } catch (const NumericError&) {
    res.diverged = true;
    res.log.diverged = true;
  }
  return res;
}

void write_metrics_jsonl(std::ostream& os, const MetricLog& log) {
  char buf[64];
  auto num = [&](double v) {
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
  };
  for (const MetricRecord& r : log.records) {
    os << "{\"step\":" << r.step << ",\"cls_loss\":" << num(r.cls_loss)
       << ",\"adv_loss\":" << num(r.adv_loss)
       << ",\"encoder_adv_grad_norm\":" << num(r.encoder_adv_grad_norm)
       << ",\"gamma\":" << num(r.gamma) << ",\"source_acc\":[";
    for (std::size_t i = 0; i < r.source_acc.size(); ++i) {
      os << (i ? "," : "") << num(r.source_acc[i]);
    }
    os << "],\"target_acc\":[";
    for (std::size_t i = 0; i < r.target_acc.size(); ++i) {
      os << (i ? "," : "") << num(r.target_acc[i]);
    }
    os << "]}\n";
  }
}

}  // namespace elslab
