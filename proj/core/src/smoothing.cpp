#include "elslab/smoothing.hpp"

#include <cmath>

#include "elslab/rng.hpp"

namespace elslab {

const char* smoothing_mode_name(SmoothingMode m) {
  switch (m) {
    case SmoothingMode::two_sided: return "two_sided";
    case SmoothingMode::one_sided: return "one_sided";
    case SmoothingMode::none: return "none";
  }
  return "?";
}

SmoothingMode smoothing_mode_from_name(const std::string& name) {
  if (name == "two_sided") return SmoothingMode::two_sided;
  if (name == "one_sided") return SmoothingMode::one_sided;
  if (name == "none") return SmoothingMode::none;
  throw OpError("unknown smoothing mode: " + name);
}

void SmoothingSpec::validate() const {
  if (num_domains < 2) throw OpError("smoothing: num_domains must be >= 2");
  switch (mode) {
    case SmoothingMode::two_sided:
      if (gamma < 1.0 / num_domains - 1e-15 || gamma > 1.0) {
        throw OpError("smoothing: two_sided gamma must lie in [1/M, 1]");
      }
      break;
    case SmoothingMode::one_sided:
      if (num_domains != 2) {
        throw OpError("smoothing: one_sided is defined for M = 2 only");
      }
      if (gamma <= 0.0 || gamma > 1.0) {
        throw OpError("smoothing: one_sided gamma must lie in (0, 1]");
      }
      break;
    case SmoothingMode::none:
      break;  // gamma ignored
  }
}

std::vector<double> smooth_labels(int env_label, const SmoothingSpec& spec) {
  spec.validate();
  const int m = spec.num_domains;
  if (env_label < 0 || env_label >= m) {
    throw OpError("smooth_labels: env_label " + std::to_string(env_label) +
                  " out of range for M = " + std::to_string(m));
  }
  std::vector<double> t(static_cast<std::size_t>(m), 0.0);
  switch (spec.mode) {
    case SmoothingMode::none:
      t[static_cast<std::size_t>(env_label)] = 1.0;
      break;
    case SmoothingMode::two_sided: {
      const double off = (1.0 - spec.gamma) / (m - 1);
      for (double& v : t) v = off;
      t[static_cast<std::size_t>(env_label)] = spec.gamma;
      break;
    }
    case SmoothingMode::one_sided:
      if (env_label == 0) {  // the "real"/source domain is softened
        t[0] = spec.gamma;
        t[1] = 1.0 - spec.gamma;
      } else {
        t[1] = 1.0;
      }
      break;
  }
  return t;
}

Tensor els_discriminator_loss(Tape& tape, const Tensor& logits,
                              std::span<const int> env_labels,
                              const SmoothingSpec& spec) {
  spec.validate();
  const Shape s = logits.shape();
  if (s.cols != spec.num_domains) {
    throw OpError("els_discriminator_loss: logits have " + std::to_string(s.cols) +
                  " columns but M = " + std::to_string(spec.num_domains));
  }
  if (env_labels.size() != static_cast<std::size_t>(s.rows)) {
    throw OpError("els_discriminator_loss: batch/label count mismatch");
  }
  std::vector<double> targets(static_cast<std::size_t>(s.numel()));
  for (int r = 0; r < s.rows; ++r) {
    const std::vector<double> t = smooth_labels(env_labels[static_cast<std::size_t>(r)], spec);
    for (int j = 0; j < s.cols; ++j) {
      targets[static_cast<std::size_t>(r) * s.cols + j] = t[static_cast<std::size_t>(j)];
    }
  }
  Tensor target = tape.constant(s, std::move(targets));
  Tensor logp = log_softmax_rows(logits);
  // mean over the batch of -<target, logp>
  return scale(sum(mul(target, logp)), -1.0 / s.rows);
}

double total_objective(double cls_loss, double adv_loss, double lambda) {
  if (lambda < 0.0) throw OpError("total_objective: lambda must be >= 0");
  return cls_loss + lambda * adv_loss;
}

Tensor total_objective(const Tensor& cls_loss, const Tensor& adv_loss, double lambda) {
  if (lambda < 0.0) throw OpError("total_objective: lambda must be >= 0");
  return add(cls_loss, scale(adv_loss, lambda));
}

double anneal_gamma(long t, long total_steps, int num_domains) {
  if (total_steps <= 0) throw OpError("anneal_gamma: T must be > 0");
  if (num_domains < 2) throw OpError("anneal_gamma: M must be >= 2");
  if (t < 0 || t > total_steps) {
    throw OpError("anneal_gamma: t out of [0, T]");
  }
  const double m = static_cast<double>(num_domains);
  const double frac = static_cast<double>(t) / static_cast<double>(total_steps);
  // (M - (M-1) * t/T) / M: hits 1 at t = 0 and 1/M at t = T exactly.
  return (m - (m - 1.0) * frac) / m;
}

void NoiseModel::validate() const {
  if (rate < 0.0 || rate >= 0.5) {
    throw OpError("noise model: rate must lie in [0, 0.5)");
  }
}

std::vector<int> flip_labels(std::span<const int> env_labels, const NoiseModel& model) {
  model.validate();
  Rng rng = substream(model.seed, "label-noise");
  std::vector<int> out(env_labels.begin(), env_labels.end());
  for (int& y : out) {
    if (y != 0 && y != 1) {
      throw OpError("flip_labels: labels must be binary");
    }
    if (rng.bernoulli(model.rate)) y = 1 - y;
  }
  return out;
}

double optimal_gamma_under_noise(double gamma_star, double e) {
  if (e < 0.0 || e >= 0.5) throw OpError("optimal_gamma_under_noise: e must lie in [0, 0.5)");
  const double g = (gamma_star - e) / (1.0 - 2.0 * e);
  if (!(g > 0.5) || g > 1.0) {
    throw InfeasibleSmoothing(
        "infeasible smoothing for this noise rate: (gamma*-e)/(1-2e) = " +
        std::to_string(g) + " outside (0.5, 1]");
  }
  return g;
}

double noisy_loss_coefficient(double gamma_star, double gamma, double e) {
  // Algebraically gamma_star - gamma - e + 2*gamma*e.
  return ((gamma_star - e) / (1.0 - 2.0 * e) - gamma) * (1.0 - 2.0 * e);
}

std::vector<double> smoothed_ce_gradient_closed_form(std::span<const double> probs,
                                                     int true_idx,
                                                     const SmoothingSpec& spec) {
  double mass = 0.0;
  for (double p : probs) mass += p;
  if (std::abs(mass - 1.0) > 1e-9) {
    throw OpError("smoothed_ce_gradient_closed_form: probs must sum to 1");
  }
  if (probs.size() != static_cast<std::size_t>(spec.num_domains)) {
    throw OpError("smoothed_ce_gradient_closed_form: probs length != M");
  }
  const std::vector<double> target = smooth_labels(true_idx, spec);
  std::vector<double> grad(probs.size());
  for (std::size_t j = 0; j < probs.size(); ++j) {
    grad[j] = probs[j] - target[j];
  }
  return grad;
}

}  // namespace elslab
