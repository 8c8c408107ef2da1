#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "elslab/tensor.hpp"

namespace elslab {

enum class SmoothingMode { two_sided, one_sided, none };

const char* smoothing_mode_name(SmoothingMode m);
SmoothingMode smoothing_mode_from_name(const std::string& name);

// Governs how one-hot environment labels are softened before the
// discriminator loss. Two-sided puts gamma on the true environment and
// (1-gamma)/(M-1) on each other; one-sided (M = 2 only, domain 0 designated
// "real"/source) softens only domain-0 targets; none leaves labels one-hot.
//
// An equivalent convention in the literature puts weight (1-g') on the true
// environment with g' = M*(1-gamma)/(M-1); this module uses the gamma form
// everywhere.
struct SmoothingSpec {
  double gamma = 1.0;
  SmoothingMode mode = SmoothingMode::two_sided;
  bool anneal = false;
  int num_domains = 2;

  void validate() const;
  SmoothingSpec with_gamma(double g) const {
    SmoothingSpec s = *this;
    s.gamma = g;
    return s;
  }
};

// Raised when a requested smoothing parameter cannot be represented by a
// valid SmoothingSpec (e.g. the noise-corrected gamma exceeds 1).
class InfeasibleSmoothing : public OpError {
 public:
  using OpError::OpError;
};

// Length-M probability target for one environment label.
std::vector<double> smooth_labels(int env_label, const SmoothingSpec& spec);

// Mean over the batch of -<smooth_labels(env), log_softmax(logits)>.
// With mode none this is standard cross-entropy.
Tensor els_discriminator_loss(Tape& tape, const Tensor& logits,
                              std::span<const int> env_labels,
                              const SmoothingSpec& spec);

// Classification + lambda * adversarial term.
double total_objective(double cls_loss, double adv_loss, double lambda);
Tensor total_objective(const Tensor& cls_loss, const Tensor& adv_loss, double lambda);

// Linear schedule from one-hot (gamma = 1 at t = 0) toward the uniform
// target (gamma = 1/M at t = T).
double anneal_gamma(long t, long total_steps, int num_domains);

// Symmetric label noise: each binary environment label flips with
// probability rate, independently, from the seeded stream.
struct NoiseModel {
  double rate = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

std::vector<int> flip_labels(std::span<const int> env_labels, const NoiseModel& model);

// gamma that cancels the reverse-optimization term when training on labels
// flipped at rate e, given the clean-data optimum gamma_star:
// (gamma_star - e) / (1 - 2e). Throws InfeasibleSmoothing when the result
// leaves (0.5, 1].
double optimal_gamma_under_noise(double gamma_star, double e);

// Weight of the reverse-optimization term under noisy labels:
// gamma_star - gamma - e + 2*gamma*e, evaluated in the factored form
// ((gamma_star - e)/(1 - 2e) - gamma) * (1 - 2e) so it is exactly zero at
// gamma = optimal_gamma_under_noise(gamma_star, e).
double noisy_loss_coefficient(double gamma_star, double gamma, double e);

// d/d(logits) of the smoothed cross-entropy for a single sample:
// grad[j] = probs[j] - target[j]. Written directly from the softmax
// probabilities, independently of the tape, to serve as an oracle.
std::vector<double> smoothed_ce_gradient_closed_form(std::span<const double> probs,
                                                     int true_idx,
                                                     const SmoothingSpec& spec);

}  // namespace elslab
