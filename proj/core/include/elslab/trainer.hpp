#pragma once

#include <cstdint>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "elslab/datasets.hpp"
#include "elslab/mlp.hpp"
#include "elslab/smoothing.hpp"

namespace elslab {

// Encoder g, classifier head over C classes, discriminator head over M
// observed domains; both heads read the encoder's feature output.
struct Model {
  MlpParams encoder;
  MlpParams classifier;
  MlpParams discriminator;

  void validate() const;
};

void save_model(std::ostream& os, const Model& m);
Model load_model(std::istream& is);

enum class Schedule { alternating, grl };

const char* schedule_name(Schedule s);
Schedule schedule_from_name(const std::string& name);

struct TrainConfig {
  Schedule schedule = Schedule::grl;
  int n_d = 1;  // discriminator updates per alternating round
  int n_e = 1;  // encoder/classifier updates per alternating round
  double lambda = 1.0;
  double lr = 0.05;
  double momentum = 0.0;
  long steps = 2000;   // grl: joint updates; alternating: rounds
  int batch_size = 60; // rounded down to a multiple of the observed domain count
  std::uint64_t seed = 0;
  SmoothingSpec smoothing;
  long eval_every = 100;

  // architecture
  std::vector<int> encoder_hidden{32, 32};
  int feature_dim = 8;
  std::vector<int> classifier_hidden{};
  std::vector<int> discriminator_hidden{16};
  int num_classes = 2;
  Activation activation = Activation::tanh;

  void validate() const;
};

struct MetricRecord {
  long step = 0;
  double cls_loss = 0.0;
  double adv_loss = 0.0;
  double encoder_adv_grad_norm = 0.0;
  double gamma = 1.0;
  std::vector<double> source_acc;  // per source domain, order of source_domains
  std::vector<double> target_acc;  // per target domain, order of target_domains
};

struct MetricLog {
  std::vector<MetricRecord> records;
  bool diverged = false;
};

// One JSON object per record; fixed keys step, cls_loss, adv_loss,
// encoder_adv_grad_norm, gamma, source_acc, target_acc.
void write_metrics_jsonl(std::ostream& os, const MetricLog& log);

Model init_model(const TrainConfig& config, int input_dim, int num_domains, Rng& rng);

// One batch forwarded through encoder + both heads on a caller-owned tape.
// Classification covers only rows whose true domain is a source; with
// grl = true the discriminator reads gradient_reversal(features, grl_scale).
struct ForwardPass {
  TapeMlp enc, cls, disc;
  Tensor features;
  Tensor cls_loss;  // scalar; 0 when the batch holds no source rows
  Tensor adv_loss;  // scalar smoothed discriminator loss
  int source_rows = 0;
};

ForwardPass forward_batch(Tape& tape, const Model& model, const DomainDataset& ds,
                          std::span<const int> rows, const SmoothingSpec& spec,
                          bool grl, double grl_scale);

struct TrainResult {
  Model model;
  MetricLog log;
  bool diverged = false;
};

// End-to-end domain-adversarial training. train_ds supplies the training
// points and the observed-environment arity (must equal smoothing.num_domains);
// eval_ds supplies the accuracy splits. Deterministic given config.seed.
TrainResult train_dat(const DomainDataset& train_ds, const DomainDataset& eval_ds,
                      const TrainConfig& config);

struct EvalResult {
  std::vector<int> domains;
  std::vector<double> accuracy;    // aligned with domains
  std::vector<int> empty_domains;  // requested but absent from the dataset
};

EvalResult evaluate(const Model& model, const DomainDataset& ds,
                    std::span<const int> domains);

double mean_accuracy(const EvalResult& r);

// L2 norm over all encoder parameters of the gradient of
// lambda * els_discriminator_loss on the given rows.
double adv_grad_norm(const Model& model, const DomainDataset& ds,
                     std::span<const int> rows, const SmoothingSpec& spec,
                     double lambda);

// ---------------------------------------------------------------------------
// Diagnostic experiments
// ---------------------------------------------------------------------------

struct GradientBoundReport {
  double gamma = 1.0;
  double disc_accuracy = 0.0;
  double measured_grad_norm = 0.0;
  double c_hat = 0.0;   // sampled sup of the encoder-Jacobian spectral norm
  double bound = 0.0;   // M * (1 - gamma) * c_hat
  bool inconclusive = false;  // accuracy target missed within budget
};

struct BoundCheckConfig {
  std::vector<int> encoder_hidden{16};
  int feature_dim = 2;
  Activation activation = Activation::tanh;
  long warm_steps = 2000;    // confidence phase on the unsmoothed loss
  long adapt_steps = 80000;  // per-gamma refinement phase
  double lr = 2.0;
  double accuracy_target = 0.99;
  int jacobian_samples = 1000;
  int power_iters = 20;
  std::uint64_t seed = 0;
};

// Frozen random encoder, linear discriminator head. The discriminator is
// first brought to a confident near-optimum on the plain loss, then refined
// on each gamma's smoothed loss; the report compares the measured encoder
// adversarial gradient norm against M*(1-gamma)*C_hat.
std::vector<GradientBoundReport> gradient_bound_check(const DomainDataset& ds,
                                                      std::span<const double> gammas,
                                                      const BoundCheckConfig& config);

struct NoiseSweepConfig {
  double gamma_star = 0.7;
  std::vector<double> e_grid{0.0, 0.1, 0.2};
  int num_seeds = 3;
  long steps = 1200;
  double lr = 0.2;
  int batch_size = 128;
  std::vector<int> disc_hidden{8};
  Activation activation = Activation::tanh;
  int probe_points = 256;
  std::uint64_t seed = 0;
};

struct NoiseSweepCell {
  double e = 0.0;
  int seed_index = 0;
  double gamma_opt = 0.0;     // (gamma_star - e) / (1 - 2e) when feasible
  bool infeasible = false;    // gamma_opt outside (0.5, 1]
  double dist_plain = 0.0;    // gamma = 1 discriminator vs clean reference
  double dist_opt = 0.0;      // gamma = gamma_opt (when feasible)
  double dist_star = 0.0;     // gamma = gamma_star
};

// Trains discriminators directly on the inputs of a two-domain dataset under
// symmetric label noise and reports probe-grid L2 distances to a clean-label
// reference discriminator (e = 0, gamma = gamma_star).
std::vector<NoiseSweepCell> noise_sweep(const DomainDataset& ds,
                                        const NoiseSweepConfig& config);

struct PartialLabelRow {
  std::string setting;    // "fraction <f>" or "random_partition"
  double fraction = 1.0;  // meaningful for fraction rows
  double dann_mean = 0.0, dann_std = 0.0;
  double els_mean = 0.0, els_std = 0.0;
};

struct PartialLabelConfig {
  std::vector<double> fractions{1.0, 0.5, 0.3, 0.2};
  bool include_random_partition = true;
  int partition_domains = 2;
  int num_seeds = 3;
  std::uint64_t label_seed_base = 777;
  std::uint64_t partition_seed_base = 555;
  TrainConfig base;  // gamma/anneal/num_domains overridden per arm
};

// Target-domain accuracy of plain DAT (gamma = 1) vs annealed smoothing under
// partially correct environment labels and under a random 2-way partition.
std::vector<PartialLabelRow> partial_label_experiment(const DomainDataset& full_ds,
                                                      const PartialLabelConfig& config);

}  // namespace elslab
