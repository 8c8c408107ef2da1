#pragma once

#include <span>
#include <vector>

#include "elslab/smoothing.hpp"
#include "elslab/tensor.hpp"

namespace elslab {

// 1-D density discretized at the midpoints of n uniform cells on [lo, hi].
// Integrals are midpoint sums; probability densities carry mass 1 within
// quadrature error, mixtures may carry other masses.
struct GridDensity {
  double lo = 0.0;
  double hi = 1.0;
  int n = 0;
  std::vector<double> values;

  double cell() const { return (hi - lo) / n; }
  double x(int i) const { return lo + (i + 0.5) * cell(); }
  double mass() const;
  void validate() const;
  bool same_grid(const GridDensity& other) const {
    return lo == other.lo && hi == other.hi && n == other.n;
  }
};

GridDensity gaussian_density(double mu, double sigma, double lo, double hi, int n);

// Normalized mixture sum_k weight[k] * N(mu[k], sigma[k]).
GridDensity gaussian_mixture_density(std::span<const double> weights,
                                     std::span<const double> mus,
                                     std::span<const double> sigmas, double lo,
                                     double hi, int n);

GridDensity uniform_density(double a, double b, double lo, double hi, int n);

struct MixturePair {
  GridDensity s;  // smoothed source-side density
  GridDensity t;  // smoothed target-side density
  double gamma = 1.0;
  SmoothingMode mode = SmoothingMode::two_sided;
  double mass_s = 1.0;
  double mass_t = 1.0;
};

// s' = gamma*p_s + (1-gamma)*p_t, t' = gamma*p_t + (1-gamma)*p_s.
MixturePair mix_two_sided(const GridDensity& p_s, const GridDensity& p_t, double gamma);

// s' = gamma*p_s (mass gamma), t' = p_t + (1-gamma)*p_s (mass 2-gamma).
MixturePair mix_one_sided(const GridDensity& p_s, const GridDensity& p_t, double gamma);

// Pointwise maximizer of the two-domain smoothed objective:
// h*(z) = (p_t + gamma*(p_s - p_t)) / (p_s + p_t). Cells with no density are
// returned as NaN and excluded from integrals.
std::vector<double> optimal_discriminator_two(const GridDensity& p_s,
                                              const GridDensity& p_t, double gamma);

// i-th head of the multi-domain optimum:
// h_i*(z) = (gamma*p_i + (1-gamma)/(M-1) * sum_{j != i} p_j) / sum_j p_j.
std::vector<double> optimal_discriminator_multi(std::span<const GridDensity> densities,
                                                double gamma, int i);

// Jensen-Shannon divergence between probability densities via midpoint
// quadrature; 0.5*KL(p||m) + 0.5*KL(q||m) with m = (p+q)/2.
double js_divergence(const GridDensity& p, const GridDensity& q);

// Integral of p*log(p/q) where q may be an unnormalized measure; returns
// +infinity when q vanishes on the support of p.
double generalized_kl(const GridDensity& p, const GridDensity& q);

struct ObjectiveReport {
  double gamma = 1.0;
  SmoothingMode mode = SmoothingMode::two_sided;
  double objective = 0.0;       // smoothed objective with the closed-form optimum
  double identity_value = 0.0;  // independently computed divergence identity
  double residual = 0.0;        // objective - identity_value
};

// Plugs the closed-form optimal discriminator into the smoothed two-domain
// objective integral, and independently evaluates the identity value
// 2*JS(mixtures) - 2*log(2) (for one-sided, the generalized form over the
// sub-probability mixtures).
ObjectiveReport smoothed_objective_at_optimum(const GridDensity& p_s,
                                              const GridDensity& p_t, double gamma,
                                              SmoothingMode mode);

// Multi-domain analogue: objective with the closed-form optimum on one path,
// sum_i generalized_kl(p_i', p_mix) on the other, p_mix unnormalized (mass M).
ObjectiveReport multi_objective_at_optimum(std::span<const GridDensity> densities,
                                           double gamma);

}  // namespace elslab
