#include "elslab/datasets.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <istream>
#include <ostream>
#include <sstream>
#include <string>

#include "elslab/rng.hpp"
#include "elslab/tensor.hpp"  // OpError

namespace elslab {

namespace {

constexpr double kPi = 3.14159265358979323846264338327950288;

void require(bool ok, const char* msg) {
  if (!ok) throw OpError(msg);
}

}  // namespace

void DomainDataset::validate() const {
  require(dim == 1 || dim == 2, "dataset: dim must be 1 or 2");
  require(num_domains >= 2 && num_true_domains >= 2, "dataset: need >= 2 domains");
  for (const LabeledPoint& p : points) {
    require(p.class_label == 0 || p.class_label == 1, "dataset: class labels must be binary");
    require(p.env_true >= 0 && p.env_true < num_true_domains, "dataset: env_true out of range");
    require(p.env_observed >= 0 && p.env_observed < num_domains,
            "dataset: env_observed out of range");
  }
  for (int d : source_domains) {
    require(std::find(target_domains.begin(), target_domains.end(), d) == target_domains.end(),
            "dataset: source and target domains overlap");
  }
}

void CircleConfig::validate() const {
  require(n_domains >= 2, "circle: n_domains must be >= 2");
  require(points_per_domain >= 2 && points_per_domain % 2 == 0,
          "circle: points_per_domain must be even and >= 2");
  require(ring_radius > 0.0 && radial_noise > 0.0 && label_margin > 0.0,
          "circle: radius, noise and margin must be > 0");
  require(label_margin < ring_radius, "circle: margin must be < radius");
}

DomainDataset gen_circle(const CircleConfig& config) {
  config.validate();
  Rng rng = substream(config.seed, "circle");
  DomainDataset ds;
  ds.dim = 2;
  ds.num_domains = config.n_domains;
  ds.num_true_domains = config.n_domains;
  const int n_src = std::min(6, config.n_domains - 1);
  for (int d = 0; d < config.n_domains; ++d) {
    (d < n_src ? ds.source_domains : ds.target_domains).push_back(d);
  }
  const double arc = kPi / config.n_domains;
  ds.points.reserve(static_cast<std::size_t>(config.n_domains) * config.points_per_domain);
  for (int d = 0; d < config.n_domains; ++d) {
    const double center = kPi * (1.0 - (d + 0.5) / config.n_domains);
    for (int i = 0; i < config.points_per_domain; ++i) {
      const int cls = i % 2;  // exact class balance
      const double angle = rng.uniform(center - 0.5 * arc, center + 0.5 * arc);
      const double base =
          cls == 1 ? config.ring_radius - config.label_margin
                   : config.ring_radius + config.label_margin;
      const double r = base + rng.normal(0.0, config.radial_noise);
      LabeledPoint p;
      p.x = {r * std::cos(angle), r * std::sin(angle)};
      p.class_label = cls;
      p.env_true = d;
      p.env_observed = d;
      ds.points.push_back(p);
    }
  }
  ds.validate();
  return ds;
}

DomainDataset gen_two_gaussians(const std::vector<double>& mu_s,
                                const std::vector<double>& mu_t, double sigma,
                                int n_per_domain, std::uint64_t seed) {
  require(sigma > 0.0, "two_gaussians: sigma must be > 0");
  require(!mu_s.empty() && mu_s.size() <= 2 && mu_s.size() == mu_t.size(),
          "two_gaussians: means must share dimension 1 or 2");
  require(n_per_domain >= 1, "two_gaussians: n_per_domain must be >= 1");
  Rng rng = substream(seed, "two-gaussians");
  DomainDataset ds;
  ds.dim = static_cast<int>(mu_s.size());
  ds.num_domains = 2;
  ds.num_true_domains = 2;
  ds.source_domains = {0};
  ds.target_domains = {1};
  const double mid = 0.5 * (mu_s[0] + mu_t[0]);
  for (int d = 0; d < 2; ++d) {
    const std::vector<double>& mu = d == 0 ? mu_s : mu_t;
    for (int i = 0; i < n_per_domain; ++i) {
      LabeledPoint p;
      for (int k = 0; k < ds.dim; ++k) {
        p.x[static_cast<std::size_t>(k)] = rng.normal(mu[static_cast<std::size_t>(k)], sigma);
      }
      p.class_label = p.x[0] > mid ? 1 : 0;  // fixed, domain-independent rule
      p.env_true = d;
      p.env_observed = d;
      ds.points.push_back(p);
    }
  }
  ds.validate();
  return ds;
}

DomainDataset gen_disjoint_support(double offset, int n_per_domain, std::uint64_t seed) {
  require(offset > 0.0, "disjoint_support: offset must be > 0");
  require(n_per_domain >= 1, "disjoint_support: n_per_domain must be >= 1");
  Rng rng = substream(seed, "disjoint-support");
  DomainDataset ds;
  ds.dim = 1;
  ds.num_domains = 2;
  ds.num_true_domains = 2;
  ds.source_domains = {0};
  ds.target_domains = {1};
  for (int d = 0; d < 2; ++d) {
    const double lo = d == 0 ? 0.0 : 1.0 + offset;
    for (int i = 0; i < n_per_domain; ++i) {
      LabeledPoint p;
      const double u = rng.uniform();
      p.x = {lo + u, 0.0};
      p.class_label = u < 0.5 ? 0 : 1;  // position within the segment
      p.env_true = d;
      p.env_observed = d;
      ds.points.push_back(p);
    }
  }
  ds.validate();
  return ds;
}

DomainDataset random_partition(const DomainDataset& ds, int m_prime, std::uint64_t seed) {
  require(m_prime >= 2, "random_partition: m_prime must be >= 2");
  DomainDataset out = ds;
  out.num_domains = m_prime;
  Rng rng = substream(seed, "random-partition");
  for (int attempt = 0; attempt < 1000; ++attempt) {
    std::vector<int> counts(static_cast<std::size_t>(m_prime), 0);
    for (LabeledPoint& p : out.points) {
      p.env_observed = static_cast<int>(rng.below(static_cast<std::uint64_t>(m_prime)));
      ++counts[static_cast<std::size_t>(p.env_observed)];
    }
    if (std::all_of(counts.begin(), counts.end(), [](int c) { return c > 0; })) {
      out.validate();
      return out;
    }
  }
  throw OpError("random_partition: could not draw a partition with all groups nonempty");
}

namespace {

// Stable per-point stream: depends on the point's content, not its position,
// so label operations commute with shuffling.
Rng point_stream(const LabeledPoint& p, int dim, std::uint64_t seed) {
  std::uint64_t h = seed ^ 0x9e3779b97f4a7c15ull;
  auto mix = [&h](std::uint64_t v) {
    h ^= v + 0x9e3779b97f4a7c15ull + (h << 6) + (h >> 2);
  };
  std::uint64_t bits;
  static_assert(sizeof(bits) == sizeof(double));
  for (int k = 0; k < dim; ++k) {
    std::memcpy(&bits, &p.x[static_cast<std::size_t>(k)], sizeof(bits));
    mix(bits);
  }
  mix(static_cast<std::uint64_t>(p.class_label));
  mix(static_cast<std::uint64_t>(p.env_true));
  Rng scrambler(h);
  return Rng(scrambler.next_u64());
}

}  // namespace

DomainDataset partial_labels(const DomainDataset& ds, double fraction_known,
                             std::uint64_t seed) {
  require(fraction_known >= 0.0 && fraction_known <= 1.0,
          "partial_labels: fraction must lie in [0, 1]");
  require(ds.num_domains >= 2, "partial_labels: need >= 2 observed domains");
  DomainDataset out = ds;
  for (LabeledPoint& p : out.points) {
    Rng rng = point_stream(p, ds.dim, seed);
    if (rng.bernoulli(fraction_known)) {
      p.env_observed = p.env_true;
    } else {
      // uniformly random incorrect label
      int wrong = static_cast<int>(rng.below(static_cast<std::uint64_t>(ds.num_domains - 1)));
      if (wrong >= p.env_true) ++wrong;
      p.env_observed = wrong;
    }
  }
  out.validate();
  return out;
}

DomainDataset flip_env_labels(const DomainDataset& ds, double rate, std::uint64_t seed) {
  require(rate >= 0.0 && rate < 0.5, "flip_env_labels: rate must lie in [0, 0.5)");
  DomainDataset out = ds;
  for (LabeledPoint& p : out.points) {
    require(p.env_observed == 0 || p.env_observed == 1,
            "flip_env_labels: labels must be binary");
    Rng rng = point_stream(p, ds.dim, seed ^ 0x5f4d3c2b1a090807ull);
    if (rng.bernoulli(rate)) p.env_observed = 1 - p.env_observed;
  }
  out.validate();
  return out;
}

DomainDataset source_subset(const DomainDataset& ds) {
  DomainDataset out;
  out.dim = ds.dim;
  const int n_src = static_cast<int>(ds.source_domains.size());
  require(n_src >= 2, "source_subset: need >= 2 source domains");
  for (int i = 0; i < n_src; ++i) {
    require(std::find(ds.source_domains.begin(), ds.source_domains.end(), i) !=
                ds.source_domains.end(),
            "source_subset: source domains must be 0..k-1");
  }
  out.num_domains = n_src;
  out.num_true_domains = n_src;
  out.source_domains = ds.source_domains;
  for (const LabeledPoint& p : ds.points) {
    if (p.env_true < n_src) out.points.push_back(p);
  }
  out.validate();
  return out;
}

void write_dataset_csv(std::ostream& os, const DomainDataset& ds) {
  os << (ds.dim == 2 ? "x0,x1,class,env_true,env_observed\n"
                     : "x0,class,env_true,env_observed\n");
  char buf[64];
  for (const LabeledPoint& p : ds.points) {
    for (int k = 0; k < ds.dim; ++k) {
      std::snprintf(buf, sizeof(buf), "%.17g", p.x[static_cast<std::size_t>(k)]);
      os << buf << ',';
    }
    os << p.class_label << ',' << p.env_true << ',' << p.env_observed << '\n';
  }
}

DomainDataset read_dataset_csv(std::istream& is) {
  std::string header;
  if (!std::getline(is, header)) throw OpError("dataset csv: empty stream");
  int dim = 0;
  if (header == "x0,x1,class,env_true,env_observed") {
    dim = 2;
  } else if (header == "x0,class,env_true,env_observed") {
    dim = 1;
  } else {
    throw OpError("dataset csv: unrecognized header: " + header);
  }
  DomainDataset ds;
  ds.dim = dim;
  int max_true = 0, max_obs = 0;
  std::string line;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    std::string field;
    LabeledPoint p;
    for (int k = 0; k < dim; ++k) {
      if (!std::getline(ls, field, ',')) throw OpError("dataset csv: short row");
      p.x[static_cast<std::size_t>(k)] = std::strtod(field.c_str(), nullptr);
    }
    if (!std::getline(ls, field, ',')) throw OpError("dataset csv: short row");
    p.class_label = std::stoi(field);
    if (!std::getline(ls, field, ',')) throw OpError("dataset csv: short row");
    p.env_true = std::stoi(field);
    if (!std::getline(ls, field, ',')) throw OpError("dataset csv: short row");
    p.env_observed = std::stoi(field);
    max_true = std::max(max_true, p.env_true);
    max_obs = std::max(max_obs, p.env_observed);
    ds.points.push_back(p);
  }
  ds.num_true_domains = std::max(2, max_true + 1);
  ds.num_domains = std::max(2, max_obs + 1);
  // Split convention: 30-domain files use the 6-source layout, two-domain
  // files treat domain 0 as the source. Callers may override.
  if (ds.num_true_domains == 30) {
    for (int d = 0; d < 30; ++d) (d < 6 ? ds.source_domains : ds.target_domains).push_back(d);
  } else {
    ds.source_domains = {0};
    for (int d = 1; d < ds.num_true_domains; ++d) ds.target_domains.push_back(d);
  }
  ds.validate();
  return ds;
}

}  // namespace elslab
