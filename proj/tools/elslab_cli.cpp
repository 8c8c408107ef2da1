// Experiment runner: every subcommand is deterministic given its seed and
// writes machine-readable outputs plus a resolved-config echo sufficient to
// re-run it. Exit codes: 0 success, 1 validation/usage error, 2 numerical
// divergence flagged in an output artifact.

#include <algorithm>
#include <cmath>
#include <complex>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "elslab/convergence.hpp"
#include "elslab/divergence.hpp"
#include "elslab/trainer.hpp"

namespace fs = std::filesystem;
using namespace elslab;

namespace {

std::string fmt(double v) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

std::vector<double> parse_list(const std::string& csv) {
  std::vector<double> out;
  std::stringstream ss(csv);
  std::string tok;
  while (std::getline(ss, tok, ',')) {
    if (!tok.empty()) out.push_back(std::strtod(tok.c_str(), nullptr));
  }
  if (out.empty()) throw OpError("expected a comma-separated list, got: " + csv);
  return out;
}

std::ofstream open_out(const fs::path& dir, const std::string& name) {
  fs::create_directories(dir);
  std::ofstream os(dir / name);
  if (!os) throw OpError("cannot write " + (dir / name).string());
  return os;
}

// Flat key=value echo of every effective option value of the parsed
// subcommand; enough to reproduce the run.
void write_resolved_config(const CLI::App& sub, const fs::path& dir) {
  std::ofstream os = open_out(dir, "resolved-config");
  os << "subcommand=" << sub.get_name() << "\n";
  for (const CLI::Option* opt : sub.get_options()) {
    std::string name = opt->get_name();
    if (name.rfind("--", 0) != 0) continue;
    name = name.substr(2);
    if (name == "help" || name == "config") continue;
    // the last result wins, matching the parser's override order
    const std::string value =
        opt->count() > 0 ? opt->results().back() : opt->get_default_str();
    os << name << "=" << value << "\n";
  }
}

// Expands `--config FILE` into --key=value tokens inserted right after the
// subcommand name, so every explicitly passed flag overrides the file and
// unknown keys fail parsing like any unknown option.
std::vector<std::string> expand_config_args(int argc, char** argv,
                                            const std::vector<std::string>& subcommands) {
  std::vector<std::string> args(argv + 1, argv + argc);
  std::string path;
  for (std::size_t i = 0; i < args.size(); ++i) {
    if (args[i] == "--config" && i + 1 < args.size()) {
      path = args[i + 1];
      args.erase(args.begin() + static_cast<long>(i), args.begin() + static_cast<long>(i) + 2);
      break;
    }
    if (args[i].rfind("--config=", 0) == 0) {
      path = args[i].substr(9);
      args.erase(args.begin() + static_cast<long>(i));
      break;
    }
  }
  if (path.empty()) return args;

  std::ifstream is(path);
  if (!is) throw OpError("cannot read config file: " + path);
  std::vector<std::string> injected;
  std::string line;
  while (std::getline(is, line)) {
    const std::size_t bgn = line.find_first_not_of(" \t");
    if (bgn == std::string::npos || line[bgn] == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) throw OpError("config line is not key=value: " + line);
    std::string key = line.substr(bgn, eq - bgn);
    key.erase(key.find_last_not_of(" \t") + 1);
    std::string value = line.substr(eq + 1);
    const std::size_t vb = value.find_first_not_of(" \t");
    value = vb == std::string::npos ? "" : value.substr(vb, value.find_last_not_of(" \t") - vb + 1);
    injected.push_back("--" + key + "=" + value);
  }
  // insert right after the subcommand token
  auto sub_pos = std::find_if(args.begin(), args.end(), [&](const std::string& a) {
    return std::find(subcommands.begin(), subcommands.end(), a) != subcommands.end();
  });
  if (sub_pos == args.end()) throw OpError("--config requires a subcommand");
  args.insert(sub_pos + 1, injected.begin(), injected.end());
  return args;
}

struct CommonTrainFlags {
  std::string dataset = "circle";
  std::string dataset_file;
  int n_domains = 30;
  int points_per_domain = 100;
  double ring_radius = 3.0;
  double radial_noise = 0.15;
  double label_margin = 0.6;
  double mu_s = -1.0, mu_t = 1.0, sigma = 1.0;
  int n_per_domain = 400;
  double offset = 1.0;
  std::uint64_t data_seed = 12345;

  void add_flags(CLI::App* cmd) {
    cmd->add_option("--dataset", dataset, "circle | two-gaussians | disjoint | csv")
        ->default_str("circle");
    cmd->add_option("--dataset-file", dataset_file, "input CSV when --dataset=csv");
    cmd->add_option("--n-domains", n_domains, "circle: number of domains")->default_str("30");
    cmd->add_option("--points-per-domain", points_per_domain, "circle: points per domain (even)")
        ->default_str("100");
    cmd->add_option("--ring-radius", ring_radius)->default_str("3");
    cmd->add_option("--radial-noise", radial_noise)->default_str("0.15");
    cmd->add_option("--label-margin", label_margin)->default_str("0.6");
    cmd->add_option("--mu-s", mu_s, "two-gaussians: source mean")->default_str("-1");
    cmd->add_option("--mu-t", mu_t, "two-gaussians: target mean")->default_str("1");
    cmd->add_option("--sigma", sigma)->default_str("1");
    cmd->add_option("--n-per-domain", n_per_domain)->default_str("400");
    cmd->add_option("--offset", offset, "disjoint: gap between supports")->default_str("1");
    cmd->add_option("--data-seed", data_seed, "seed of the data substream")->default_str("12345");
  }

  DomainDataset make() const {
    if (dataset == "circle") {
      CircleConfig c;
      c.n_domains = n_domains;
      c.points_per_domain = points_per_domain;
      c.ring_radius = ring_radius;
      c.radial_noise = radial_noise;
      c.label_margin = label_margin;
      c.seed = data_seed;
      return gen_circle(c);
    }
    if (dataset == "two-gaussians") {
      return gen_two_gaussians({mu_s}, {mu_t}, sigma, n_per_domain, data_seed);
    }
    if (dataset == "disjoint") {
      return gen_disjoint_support(offset, n_per_domain, data_seed);
    }
    if (dataset == "csv") {
      std::ifstream is(dataset_file);
      if (!is) throw OpError("cannot read dataset file: " + dataset_file);
      return read_dataset_csv(is);
    }
    throw OpError("unknown dataset kind: " + dataset);
  }
};

int cmd_gen(const CommonTrainFlags& data, const fs::path& out) {
  const DomainDataset ds = data.make();
  std::ofstream os = open_out(out, "dataset.csv");
  write_dataset_csv(os, ds);
  std::cout << "wrote " << (out / "dataset.csv").string() << " (" << ds.points.size()
            << " points, " << ds.num_domains << " domains)\n";
  return 0;
}

struct OracleFlags {
  std::string gammas = "0.5,0.6,0.75,0.9,1.0";
  std::string mode = "two_sided";
  int domains = 3;
  double lo = -8.0, hi = 9.0;
  int cells = 4096;
  double mu_s = 0.0, mu_t = 1.0, sigma_s = 1.0, sigma_t = 1.0;
};

int cmd_oracle(const OracleFlags& f, const fs::path& out) {
  std::ofstream os = open_out(out, "oracle.csv");
  os << "gamma,mode,objective,identity_value,residual\n";
  const GridDensity ps = gaussian_density(f.mu_s, f.sigma_s, f.lo, f.hi, f.cells);
  const GridDensity pt = gaussian_density(f.mu_t, f.sigma_t, f.lo, f.hi, f.cells);
  for (double gamma : parse_list(f.gammas)) {
    ObjectiveReport r;
    if (f.mode == "multi") {
      std::vector<GridDensity> ds;
      for (int i = 0; i < f.domains; ++i) {
        ds.push_back(gaussian_density(f.mu_s + i * (f.mu_t - f.mu_s), f.sigma_s, f.lo, f.hi, f.cells));
      }
      r = multi_objective_at_optimum(ds, gamma);
    } else {
      r = smoothed_objective_at_optimum(ps, pt, gamma, smoothing_mode_from_name(f.mode));
    }
    os << fmt(gamma) << ',' << (f.mode == "multi" ? "multi" : f.mode) << ','
       << fmt(r.objective) << ',' << fmt(r.identity_value) << ',' << fmt(r.residual) << '\n';
    std::cout << "gamma=" << fmt(gamma) << " objective=" << fmt(r.objective)
              << " identity=" << fmt(r.identity_value) << " residual=" << fmt(r.residual)
              << "\n";
  }
  return 0;
}

struct ConvergeFlags {
  double xs = 1.0, xt = -1.0;
  double eta = 0.5;
  double eta_min = 0.0, eta_max = 0.0;
  int eta_count = 0;
  int nd = 1, ne = 1;
  double gamma = 1.0;
  long steps = 10000;
  double init_e = 0.01, init_d = 0.01;
  std::string kind = "alternating";
  std::string order = "disc-first";
};

int cmd_converge(const ConvergeFlags& f, const fs::path& out) {
  DiracGame game{f.xs, f.xt};
  GdScheme scheme;
  scheme.kind = f.kind == "simultaneous" ? GdKind::simultaneous : GdKind::alternating;
  scheme.n_d = f.nd;
  scheme.n_e = f.ne;
  scheme.eta = f.eta;
  scheme.gamma = f.gamma;
  scheme.order = f.order == "enc-first" ? RoundOrder::encoder_first
                                        : RoundOrder::discriminator_first;

  if (f.eta_count > 0) {
    // learning-rate sweep: spectral radius and simulated excursion per eta
    if (f.eta_count < 2 || f.eta_max <= f.eta_min || f.eta_min <= 0.0) {
      throw OpError("eta sweep needs --eta-min < --eta-max and --eta-count >= 2");
    }
    std::ofstream os = open_out(out, "eta_sweep.csv");
    os << "eta,spectral_radius,max_distance_ratio,diverged\n";
    for (int i = 0; i < f.eta_count; ++i) {
      GdScheme s = scheme;
      s.eta = f.eta_min + (f.eta_max - f.eta_min) * i / (f.eta_count - 1);
      const EigenReport rep = eigen_report(game, s);
      const Trajectory traj = simulate_training(game, s, f.steps, f.init_e, f.init_d);
      double max_dist = 0.0;
      for (const TrajectoryPoint& p : traj.points) max_dist = std::max(max_dist, p.distance);
      os << fmt(s.eta) << ',' << fmt(rep.spectral_radius) << ','
         << fmt(max_dist / traj.points.front().distance) << ',' << (traj.diverged ? 1 : 0)
         << '\n';
    }
    std::cout << "wrote " << (out / "eta_sweep.csv").string() << "\n";
    return 0;
  }

  const EigenReport rep = eigen_report(game, scheme);
  {
    std::ofstream os = open_out(out, "eigen.json");
    os << "{\n"
       << "  \"eigenvalues\": [[" << fmt(rep.eigenvalues[0].real()) << ", "
       << fmt(rep.eigenvalues[0].imag()) << "], [" << fmt(rep.eigenvalues[1].real()) << ", "
       << fmt(rep.eigenvalues[1].imag()) << "]],\n"
       << "  \"spectral_radius\": " << fmt(rep.spectral_radius) << ",\n"
       << "  \"eta_threshold\": " << fmt(rep.eta_threshold) << ",\n"
       << "  \"alpha\": " << fmt(rep.alpha) << "\n}\n";
  }
  const Trajectory traj = simulate_training(game, scheme, f.steps, f.init_e, f.init_d);
  {
    std::ofstream os = open_out(out, "trajectory.csv");
    os << "step,theta_e,theta_d,distance\n";
    for (const TrajectoryPoint& p : traj.points) {
      os << p.step << ',' << fmt(p.theta_e) << ',' << fmt(p.theta_d) << ','
         << fmt(p.distance) << '\n';
    }
  }
  std::cout << "spectral_radius=" << fmt(rep.spectral_radius)
            << " eta_threshold=" << fmt(rep.eta_threshold)
            << " final_distance=" << fmt(traj.points.back().distance)
            << (traj.diverged ? " (diverged)" : "") << "\n";
  return traj.diverged ? 2 : 0;
}

struct TrainFlags {
  std::string schedule = "grl";
  int nd = 5, ne = 1;
  double lambda = 3.0;
  double lr = 0.1;
  double momentum = 0.0;
  long steps = 4000;
  int batch = 60;
  std::uint64_t seed = 1;
  std::string gamma = "anneal";
  std::string mode = "two_sided";
  bool anneal = false;
  long eval_every = 500;
  std::string enc_hidden = "32,32";
  int feature_dim = 8;
  std::string disc_hidden = "16";

  void add_flags(CLI::App* cmd) {
    cmd->add_option("--schedule", schedule, "grl | alternating")->default_str("grl");
    cmd->add_option("--nd", nd)->default_str("5");
    cmd->add_option("--ne", ne)->default_str("1");
    cmd->add_option("--lambda", lambda)->default_str("3");
    cmd->add_option("--lr", lr)->default_str("0.1");
    cmd->add_option("--momentum", momentum)->default_str("0");
    cmd->add_option("--steps", steps)->default_str("4000");
    cmd->add_option("--batch", batch)->default_str("60");
    cmd->add_option("--seed", seed)->default_str("1");
    cmd->add_option("--gamma", gamma, "number in (0,1] or 'anneal'")->default_str("anneal");
    cmd->add_option("--mode", mode, "two_sided | one_sided | none")->default_str("two_sided");
    cmd->add_flag("--anneal", anneal, "anneal gamma from 1 to 1/M over the run");
    cmd->add_option("--eval-every", eval_every)->default_str("500");
    cmd->add_option("--enc-hidden", enc_hidden)->default_str("32,32");
    cmd->add_option("--feature-dim", feature_dim)->default_str("8");
    cmd->add_option("--disc-hidden", disc_hidden)->default_str("16");
  }

  TrainConfig make(int num_domains) const {
    TrainConfig c;
    c.schedule = schedule_from_name(schedule);
    c.n_d = nd;
    c.n_e = ne;
    c.lambda = lambda;
    c.lr = lr;
    c.momentum = momentum;
    c.steps = steps;
    c.batch_size = batch;
    c.seed = seed;
    c.eval_every = eval_every;
    c.feature_dim = feature_dim;
    c.encoder_hidden.clear();
    for (double v : parse_list(enc_hidden)) c.encoder_hidden.push_back(static_cast<int>(v));
    c.discriminator_hidden.clear();
    for (double v : parse_list(disc_hidden)) c.discriminator_hidden.push_back(static_cast<int>(v));
    c.smoothing.mode = smoothing_mode_from_name(mode);
    c.smoothing.num_domains = num_domains;
    if (gamma == "anneal" || anneal) {
      c.smoothing.anneal = true;
      c.smoothing.gamma = 1.0;
    } else {
      c.smoothing.anneal = false;
      c.smoothing.gamma = std::strtod(gamma.c_str(), nullptr);
    }
    return c;
  }
};

int cmd_train(const CommonTrainFlags& data, const TrainFlags& tf, const fs::path& out) {
  const DomainDataset ds = data.make();
  const TrainConfig cfg = tf.make(ds.num_domains);
  const TrainResult res = train_dat(ds, ds, cfg);
  {
    std::ofstream os = open_out(out, "metrics.jsonl");
    write_metrics_jsonl(os, res.log);
  }
  {
    std::ofstream os = open_out(out, "model.ckpt");
    save_model(os, res.model);
  }
  const EvalResult src = evaluate(res.model, ds, ds.source_domains);
  const EvalResult tgt = evaluate(res.model, ds, ds.target_domains);
  {
    std::ofstream os = open_out(out, "summary.csv");
    os << "diverged,source_acc_mean,target_acc_mean\n";
    os << (res.diverged ? 1 : 0) << ',' << fmt(mean_accuracy(src)) << ','
       << fmt(mean_accuracy(tgt)) << '\n';
  }
  std::cout << "source_acc=" << fmt(mean_accuracy(src))
            << " target_acc=" << fmt(mean_accuracy(tgt))
            << (res.diverged ? " (diverged)" : "") << "\n";
  return res.diverged ? 2 : 0;
}

struct NoiseFlags {
  double gamma_star = 0.7;
  std::string e_grid = "0.0,0.1,0.2,0.3,0.4";
  int seeds = 3;
  long steps = 1200;
  double lr = 0.2;
  int batch = 128;
  std::uint64_t seed = 0;
};

int cmd_noise_sweep(const CommonTrainFlags& data, const NoiseFlags& f, const fs::path& out) {
  const DomainDataset ds = data.make();
  NoiseSweepConfig cfg;
  cfg.gamma_star = f.gamma_star;
  cfg.e_grid = parse_list(f.e_grid);
  cfg.num_seeds = f.seeds;
  cfg.steps = f.steps;
  cfg.lr = f.lr;
  cfg.batch_size = f.batch;
  cfg.seed = f.seed;
  const std::vector<NoiseSweepCell> cells = noise_sweep(ds, cfg);
  std::ofstream os = open_out(out, "noise_sweep.csv");
  os << "e,seed,gamma_opt,infeasible,dist_plain,dist_opt,dist_star\n";
  for (const NoiseSweepCell& c : cells) {
    os << fmt(c.e) << ',' << c.seed_index << ',' << fmt(c.gamma_opt) << ','
       << (c.infeasible ? 1 : 0) << ',' << fmt(c.dist_plain) << ',' << fmt(c.dist_opt)
       << ',' << fmt(c.dist_star) << '\n';
  }
  std::cout << "wrote " << (out / "noise_sweep.csv").string() << " (" << cells.size()
            << " cells)\n";
  return 0;
}

struct PartialFlags {
  std::string fractions = "1.0,0.5,0.3,0.2";
  int seeds = 3;
  bool no_partition = false;
};

int cmd_partial(const CommonTrainFlags& data, const TrainFlags& tf, const PartialFlags& f,
                const fs::path& out) {
  const DomainDataset ds = data.make();
  PartialLabelConfig cfg;
  cfg.fractions = parse_list(f.fractions);
  cfg.num_seeds = f.seeds;
  cfg.include_random_partition = !f.no_partition;
  cfg.base = tf.make(ds.num_domains);
  const std::vector<PartialLabelRow> rows = partial_label_experiment(ds, cfg);
  std::ofstream os = open_out(out, "partial_labels.csv");
  os << "setting,fraction,dann_mean,dann_std,els_mean,els_std\n";
  for (const PartialLabelRow& r : rows) {
    os << r.setting << ',' << fmt(r.fraction) << ',' << fmt(r.dann_mean) << ','
       << fmt(r.dann_std) << ',' << fmt(r.els_mean) << ',' << fmt(r.els_std) << '\n';
    std::cout << r.setting << ": dann=" << fmt(r.dann_mean) << " els=" << fmt(r.els_mean)
              << "\n";
  }
  return 0;
}

struct GradcheckFlags {
  int mlps = 50;
  double eps = 1e-5;
  double tolerance = 1e-6;
  std::uint64_t seed = 20240601;
};

int cmd_gradcheck(const GradcheckFlags& f, const fs::path& out) {
  Rng rng(f.seed);
  double worst = 0.0;
  int worst_case = -1;
  for (int trial = 0; trial < f.mlps; ++trial) {
    const int in = 2 + static_cast<int>(rng.below(3));
    const int hidden = 3 + static_cast<int>(rng.below(4));
    const int out_dim = 1 + static_cast<int>(rng.below(3));
    MlpParams mlp = init_mlp({in, hidden, out_dim}, Activation::tanh, rng);
    const int batch = 2 + static_cast<int>(rng.below(3));
    std::vector<double> xv(static_cast<std::size_t>(batch) * in);
    for (double& v : xv) v = rng.uniform(-2.0, 2.0);
    const Shape xs{batch, in};

    Tape tape;
    Tensor x = tape.constant(xs, xv);
    TapeMlp on_tape = load_mlp(tape, mlp);
    Tensor y = mlp_forward(tape, on_tape, x, mlp.activation);
    tape.backward(mean(mul(y, y)));
    const std::vector<double> auto_grad = flatten_grads(read_mlp_grads(on_tape));

    const GradCheckReport rep = grad_check(
        [&](std::span<const double> flat) {
          MlpParams p = mlp;
          unflatten_params(p, flat);
          Tape t;
          Tensor xt = t.constant(xs, xv);
          Tensor yt = mlp_forward(t, p, xt);
          return mean(mul(yt, yt)).scalar_value();
        },
        auto_grad, flatten_params(mlp), f.eps);
    if (rep.max_rel_error > worst) {
      worst = rep.max_rel_error;
      worst_case = trial;
    }
  }
  std::ofstream os = open_out(out, "gradcheck.json");
  os << "{ \"mlps\": " << f.mlps << ", \"eps\": " << fmt(f.eps)
     << ", \"max_rel_error\": " << fmt(worst) << ", \"worst_case\": " << worst_case
     << ", \"tolerance\": " << fmt(f.tolerance) << " }\n";
  std::cout << "max_rel_error=" << fmt(worst) << " over " << f.mlps << " models\n";
  return worst <= f.tolerance ? 0 : 2;
}

struct BoundFlags {
  std::string gammas = "1.0,0.9,0.5";
  long warm_steps = 2000;
  long adapt_steps = 80000;
  double lr = 2.0;
  std::uint64_t seed = 0;
};

int cmd_bound_check(const CommonTrainFlags& data, const BoundFlags& f, const fs::path& out) {
  const DomainDataset ds = data.make();
  BoundCheckConfig cfg;
  cfg.warm_steps = f.warm_steps;
  cfg.adapt_steps = f.adapt_steps;
  cfg.lr = f.lr;
  cfg.seed = f.seed;
  const std::vector<double> gammas = parse_list(f.gammas);
  const std::vector<GradientBoundReport> reps = gradient_bound_check(ds, gammas, cfg);
  std::ofstream os = open_out(out, "bound_check.csv");
  os << "gamma,disc_accuracy,measured_grad_norm,c_hat,bound,inconclusive\n";
  for (const GradientBoundReport& r : reps) {
    os << fmt(r.gamma) << ',' << fmt(r.disc_accuracy) << ',' << fmt(r.measured_grad_norm)
       << ',' << fmt(r.c_hat) << ',' << fmt(r.bound) << ',' << (r.inconclusive ? 1 : 0)
       << '\n';
    std::cout << "gamma=" << fmt(r.gamma) << " measured=" << fmt(r.measured_grad_norm)
              << " bound=" << fmt(r.bound) << (r.inconclusive ? " (inconclusive)" : "")
              << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"desk-scale laboratory for smoothed domain-adversarial training"};
  app.require_subcommand(1);
  // duplicated options keep the last value, so explicit flags beat config files
  app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);

  std::string out_dir = ".";
  app.add_option("--out", out_dir, "output directory")->default_str(".");

  CommonTrainFlags data;
  OracleFlags oracle;
  ConvergeFlags conv;
  TrainFlags train;
  NoiseFlags noise;
  PartialFlags partial;
  GradcheckFlags gradcheck;
  BoundFlags bound;

  CLI::App* c_gen = app.add_subcommand("gen", "generate a synthetic dataset CSV");
  data.add_flags(c_gen);

  CLI::App* c_oracle = app.add_subcommand("oracle", "divergence-identity report");
  c_oracle->add_option("--gammas", oracle.gammas)->default_str(oracle.gammas);
  c_oracle->add_option("--gamma", oracle.gammas, "alias of --gammas");
  c_oracle->add_option("--mode", oracle.mode, "two_sided | one_sided | multi")
      ->default_str("two_sided");
  c_oracle->add_option("--domains", oracle.domains)->default_str("3");
  c_oracle->add_option("--lo", oracle.lo)->default_str("-8");
  c_oracle->add_option("--hi", oracle.hi)->default_str("9");
  c_oracle->add_option("--cells", oracle.cells)->default_str("4096");
  c_oracle->add_option("--mu-s", oracle.mu_s)->default_str("0");
  c_oracle->add_option("--mu-t", oracle.mu_t)->default_str("1");
  c_oracle->add_option("--sigma-s", oracle.sigma_s)->default_str("1");
  c_oracle->add_option("--sigma-t", oracle.sigma_t)->default_str("1");

  CLI::App* c_conv = app.add_subcommand("converge", "two-parameter adversarial game");
  c_conv->add_option("--xs", conv.xs)->default_str("1");
  c_conv->add_option("--xt", conv.xt)->default_str("-1");
  c_conv->add_option("--eta", conv.eta)->default_str("0.5");
  c_conv->add_option("--eta-min", conv.eta_min, "sweep start (with --eta-count)")
      ->default_str("0");
  c_conv->add_option("--eta-max", conv.eta_max, "sweep end")->default_str("0");
  c_conv->add_option("--eta-count", conv.eta_count, "sweep points; 0 = single run")
      ->default_str("0");
  c_conv->add_option("--nd", conv.nd)->default_str("1");
  c_conv->add_option("--ne", conv.ne)->default_str("1");
  c_conv->add_option("--gamma", conv.gamma)->default_str("1");
  c_conv->add_option("--steps", conv.steps)->default_str("10000");
  c_conv->add_option("--init-e", conv.init_e)->default_str("0.01");
  c_conv->add_option("--init-d", conv.init_d)->default_str("0.01");
  c_conv->add_option("--kind", conv.kind, "alternating | simultaneous")
      ->default_str("alternating");
  c_conv->add_option("--order", conv.order, "disc-first | enc-first")
      ->default_str("disc-first");

  CLI::App* c_train = app.add_subcommand("train", "end-to-end adversarial training");
  data.add_flags(c_train);
  train.add_flags(c_train);

  CLI::App* c_noise = app.add_subcommand("noise-sweep", "noisy-label discriminator sweep");
  data.add_flags(c_noise);
  c_noise->add_option("--gamma-star", noise.gamma_star)->default_str("0.7");
  c_noise->add_option("--e-grid", noise.e_grid)->default_str(noise.e_grid);
  c_noise->add_option("--sweep-seeds", noise.seeds)->default_str("3");
  c_noise->add_option("--disc-steps", noise.steps)->default_str("1200");
  c_noise->add_option("--disc-lr", noise.lr)->default_str("0.2");
  c_noise->add_option("--disc-batch", noise.batch)->default_str("128");
  c_noise->add_option("--sweep-seed", noise.seed)->default_str("0");

  CLI::App* c_partial = app.add_subcommand("partial-labels", "partial/random label table");
  data.add_flags(c_partial);
  train.add_flags(c_partial);
  c_partial->add_option("--fractions", partial.fractions)->default_str(partial.fractions);
  c_partial->add_option("--table-seeds", partial.seeds)->default_str("3");
  c_partial->add_flag("--no-partition", partial.no_partition,
                      "skip the random-partition row");

  CLI::App* c_gc = app.add_subcommand("gradcheck", "finite-difference gradient audit");
  c_gc->add_option("--mlps", gradcheck.mlps)->default_str("50");
  c_gc->add_option("--eps", gradcheck.eps)->default_str("1e-5");
  c_gc->add_option("--tolerance", gradcheck.tolerance)->default_str("1e-6");
  c_gc->add_option("--seed", gradcheck.seed)->default_str("20240601");

  CLI::App* c_bound = app.add_subcommand("bound-check", "encoder gradient bound report");
  data.add_flags(c_bound);
  c_bound->add_option("--gammas", bound.gammas)->default_str(bound.gammas);
  c_bound->add_option("--warm-steps", bound.warm_steps)->default_str("2000");
  c_bound->add_option("--adapt-steps", bound.adapt_steps)->default_str("80000");
  c_bound->add_option("--disc-lr", bound.lr)->default_str("2");
  c_bound->add_option("--check-seed", bound.seed)->default_str("0");

  std::string config_doc;
  for (CLI::App* sub : {c_gen, c_oracle, c_conv, c_train, c_noise, c_partial, c_gc, c_bound}) {
    sub->add_option("--config", config_doc,
                    "flat key=value config file; explicit flags override it");
  }

  try {
    std::vector<std::string> args = expand_config_args(
        argc, argv,
        {"gen", "oracle", "converge", "train", "noise-sweep", "partial-labels",
         "gradcheck", "bound-check"});
    std::reverse(args.begin(), args.end());  // CLI11 consumes args back to front
    app.parse(args);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);  // prints the usage message
    return 1;
  } catch (const OpError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }

  // The bound-check subcommand defaults to the disjoint-support dataset.
  if (c_bound->parsed() && c_bound->count("--dataset") == 0) data.dataset = "disjoint";

  const fs::path out(out_dir);
  try {
    int rc = 1;
    CLI::App* active = nullptr;
    if (c_gen->parsed()) {
      active = c_gen;
      rc = cmd_gen(data, out);
    } else if (c_oracle->parsed()) {
      active = c_oracle;
      rc = cmd_oracle(oracle, out);
    } else if (c_conv->parsed()) {
      active = c_conv;
      rc = cmd_converge(conv, out);
    } else if (c_train->parsed()) {
      active = c_train;
      rc = cmd_train(data, train, out);
    } else if (c_noise->parsed()) {
      active = c_noise;
      rc = cmd_noise_sweep(data, noise, out);
    } else if (c_partial->parsed()) {
      active = c_partial;
      rc = cmd_partial(data, train, partial, out);
    } else if (c_gc->parsed()) {
      active = c_gc;
      rc = cmd_gradcheck(gradcheck, out);
    } else if (c_bound->parsed()) {
      active = c_bound;
      rc = cmd_bound_check(data, bound, out);
    }
    if (active != nullptr) write_resolved_config(*active, out);
    return rc;
  } catch (const OpError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  } catch (const NumericError& e) {
    std::cerr << "numerical error: " << e.what() << "\n";
    return 2;
  }
}
