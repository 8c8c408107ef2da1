#pragma once

#include <array>
#include <cstdint>
#include <iosfwd>
#include <vector>

namespace elslab {

struct LabeledPoint {
  std::array<double, 2> x{0.0, 0.0};  // only the first `dim` entries are used
  int class_label = 0;                // binary
  int env_true = 0;
  int env_observed = 0;  // equals env_true until noise/partition is applied
};

struct DomainDataset {
  std::vector<LabeledPoint> points;
  int dim = 1;
  int num_domains = 2;       // arity of the observed environment labels
  int num_true_domains = 2;  // arity of env_true (evaluation groups)
  std::vector<int> source_domains;
  std::vector<int> target_domains;

  void validate() const;
};

// 30-domain two-ring dataset: domain i (0-based) occupies the arc of width
// pi/n centered at angle pi * (1 - (i + 0.5)/n). The positive class sits on
// an inner ring at radius ring_radius - label_margin, the negative class on
// an outer ring at ring_radius + label_margin, both with radial Gaussian
// noise. Domains 0..5 are sources, the rest targets.
struct CircleConfig {
  int n_domains = 30;
  int points_per_domain = 100;  // split evenly between the two classes
  double ring_radius = 3.0;
  double radial_noise = 0.15;
  double label_margin = 0.6;
  std::uint64_t seed = 0;

  void validate() const;
};

DomainDataset gen_circle(const CircleConfig& config);

// Two isotropic Gaussian domains. Class labels follow the sign of the first
// coordinate relative to the midpoint of the two means, identically in both
// domains, so environment-label experiments isolate the discriminator path.
DomainDataset gen_two_gaussians(const std::vector<double>& mu_s,
                                const std::vector<double>& mu_t, double sigma,
                                int n_per_domain, std::uint64_t seed);

// Domain 0 uniform on [0, 1], domain 1 uniform on [1 + offset, 2 + offset];
// the supports are disjoint by construction.
DomainDataset gen_disjoint_support(double offset, int n_per_domain, std::uint64_t seed);

// Reassigns env_observed uniformly into m_prime groups (redrawn if a group
// comes up empty); env_true is preserved, num_domains becomes m_prime.
DomainDataset random_partition(const DomainDataset& ds, int m_prime, std::uint64_t seed);

// Keeps env_observed = env_true for a Bernoulli(fraction_known) subset; every
// other point receives a uniformly random incorrect label (!= env_true) drawn
// from [0, num_domains). The draw is keyed on (seed, point content), so the
// operation commutes with dataset shuffling.
DomainDataset partial_labels(const DomainDataset& ds, double fraction_known,
                             std::uint64_t seed);

// Symmetric flip of binary env_observed with probability rate, keyed on
// (seed, point content) like partial_labels.
DomainDataset flip_env_labels(const DomainDataset& ds, double rate, std::uint64_t seed);

// The training-side view of a domain-generalization dataset: only points
// whose true domain is a source; num_domains shrinks to the source count
// (source domains must be 0..k-1).
DomainDataset source_subset(const DomainDataset& ds);

// CSV with header x0[,x1],class,env_true,env_observed.
void write_dataset_csv(std::ostream& os, const DomainDataset& ds);
DomainDataset read_dataset_csv(std::istream& is);

}  // namespace elslab
