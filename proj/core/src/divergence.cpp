#include "elslab/divergence.hpp"

#include <cmath>
#include <limits>

namespace elslab {

namespace {

constexpr double kDensityFloor = 1e-300;  // cells below this are treated as empty
constexpr double kTwoLog2 = 2.0 * 0.69314718055994530941723212145818;

// coeff * log(v) with the 0*log(0) = 0 convention.
double xlog(double coeff, double v) {
  if (coeff == 0.0) return 0.0;
  if (v <= 0.0) return -std::numeric_limits<double>::infinity();
  return coeff * std::log(v);
}

void check_same_grid(const char* op, const GridDensity& a, const GridDensity& b) {
  if (!a.same_grid(b)) {
    throw OpError(std::string(op) + ": densities live on different grids");
  }
}

}  // namespace

double GridDensity::mass() const {
  double acc = 0.0;
  for (double v : values) acc += v;
  return acc * cell();
}

void GridDensity::validate() const {
  if (n <= 0 || hi <= lo || values.size() != static_cast<std::size_t>(n)) {
    throw OpError("grid density: malformed grid");
  }
  for (double v : values) {
    if (!(v >= 0.0) || !std::isfinite(v)) {
      throw OpError("grid density: values must be finite and >= 0");
    }
  }
}

GridDensity gaussian_density(double mu, double sigma, double lo, double hi, int n) {
  if (sigma <= 0.0) throw OpError("gaussian_density: sigma must be > 0");
  GridDensity d{lo, hi, n, std::vector<double>(static_cast<std::size_t>(n))};
  const double norm = 1.0 / (sigma * std::sqrt(2.0 * M_PI));
  for (int i = 0; i < n; ++i) {
    const double z = (d.x(i) - mu) / sigma;
    d.values[static_cast<std::size_t>(i)] = norm * std::exp(-0.5 * z * z);
  }
  d.validate();
  return d;
}

GridDensity gaussian_mixture_density(std::span<const double> weights,
                                     std::span<const double> mus,
                                     std::span<const double> sigmas, double lo,
                                     double hi, int n) {
  if (weights.size() != mus.size() || weights.size() != sigmas.size() || weights.empty()) {
    throw OpError("gaussian_mixture_density: component count mismatch");
  }
  double wsum = 0.0;
  for (double w : weights) {
    if (w < 0.0) throw OpError("gaussian_mixture_density: negative weight");
    wsum += w;
  }
  GridDensity d{lo, hi, n, std::vector<double>(static_cast<std::size_t>(n), 0.0)};
  for (std::size_t k = 0; k < weights.size(); ++k) {
    const GridDensity g = gaussian_density(mus[k], sigmas[k], lo, hi, n);
    for (int i = 0; i < n; ++i) {
      d.values[static_cast<std::size_t>(i)] += (weights[k] / wsum) * g.values[static_cast<std::size_t>(i)];
    }
  }
  return d;
}

GridDensity uniform_density(double a, double b, double lo, double hi, int n) {
  if (b <= a) throw OpError("uniform_density: empty support");
  GridDensity d{lo, hi, n, std::vector<double>(static_cast<std::size_t>(n), 0.0)};
  const double h = 1.0 / (b - a);
  for (int i = 0; i < n; ++i) {
    const double x = d.x(i);
    if (x >= a && x < b) d.values[static_cast<std::size_t>(i)] = h;
  }
  return d;
}

MixturePair mix_two_sided(const GridDensity& p_s, const GridDensity& p_t, double gamma) {
  check_same_grid("mix_two_sided", p_s, p_t);
  if (gamma < 0.5 || gamma > 1.0) {
    throw OpError("mix_two_sided: gamma must lie in [0.5, 1]");
  }
  MixturePair m;
  m.gamma = gamma;
  m.mode = SmoothingMode::two_sided;
  m.s = p_s;
  m.t = p_t;
  for (int i = 0; i < p_s.n; ++i) {
    const std::size_t k = static_cast<std::size_t>(i);
    m.s.values[k] = gamma * p_s.values[k] + (1.0 - gamma) * p_t.values[k];
    m.t.values[k] = gamma * p_t.values[k] + (1.0 - gamma) * p_s.values[k];
  }
  m.mass_s = m.s.mass();
  m.mass_t = m.t.mass();
  return m;
}

MixturePair mix_one_sided(const GridDensity& p_s, const GridDensity& p_t, double gamma) {
  check_same_grid("mix_one_sided", p_s, p_t);
  if (gamma <= 0.0 || gamma > 1.0) {
    throw OpError("mix_one_sided: gamma must lie in (0, 1]");
  }
  MixturePair m;
  m.gamma = gamma;
  m.mode = SmoothingMode::one_sided;
  m.s = p_s;
  m.t = p_t;
  for (int i = 0; i < p_s.n; ++i) {
    const std::size_t k = static_cast<std::size_t>(i);
    m.s.values[k] = gamma * p_s.values[k];
    m.t.values[k] = p_t.values[k] + (1.0 - gamma) * p_s.values[k];
  }
  m.mass_s = m.s.mass();
  m.mass_t = m.t.mass();
  return m;
}

std::vector<double> optimal_discriminator_two(const GridDensity& p_s,
                                              const GridDensity& p_t, double gamma) {
  check_same_grid("optimal_discriminator_two", p_s, p_t);
  std::vector<double> h(static_cast<std::size_t>(p_s.n));
  for (int i = 0; i < p_s.n; ++i) {
    const std::size_t k = static_cast<std::size_t>(i);
    const double ps = p_s.values[k];
    const double pt = p_t.values[k];
    const double tot = ps + pt;
    h[k] = tot < kDensityFloor
               ? std::numeric_limits<double>::quiet_NaN()
               : (pt + gamma * (ps - pt)) / tot;
  }
  return h;
}

std::vector<double> optimal_discriminator_multi(std::span<const GridDensity> densities,
                                                double gamma, int i) {
  const int m = static_cast<int>(densities.size());
  if (m < 2) throw OpError("optimal_discriminator_multi: need M >= 2 densities");
  if (i < 0 || i >= m) throw OpError("optimal_discriminator_multi: index out of range");
  for (const GridDensity& d : densities) {
    check_same_grid("optimal_discriminator_multi", densities[0], d);
  }
  const double off = (1.0 - gamma) / (m - 1);
  std::vector<double> h(static_cast<std::size_t>(densities[0].n));
  for (int c = 0; c < densities[0].n; ++c) {
    const std::size_t k = static_cast<std::size_t>(c);
    double tot = 0.0, num = 0.0;
    for (int j = 0; j < m; ++j) {
      const double pj = densities[static_cast<std::size_t>(j)].values[k];
      tot += pj;
      num += (j == i ? gamma : off) * pj;
    }
    h[k] = tot < kDensityFloor ? std::numeric_limits<double>::quiet_NaN() : num / tot;
  }
  return h;
}

double js_divergence(const GridDensity& p, const GridDensity& q) {
  check_same_grid("js_divergence", p, q);
  if (std::abs(p.mass() - 1.0) > 1e-6 || std::abs(q.mass() - 1.0) > 1e-6) {
    throw OpError("js_divergence: inputs must be probability densities (mass 1)");
  }
  double acc = 0.0;
  for (int i = 0; i < p.n; ++i) {
    const std::size_t k = static_cast<std::size_t>(i);
    const double pv = p.values[k];
    const double qv = q.values[k];
    if (pv + qv < kDensityFloor) continue;
    const double m = 0.5 * (pv + qv);
    acc += 0.5 * xlog(pv, pv / m) + 0.5 * xlog(qv, qv / m);
  }
  return acc * p.cell();
}

double generalized_kl(const GridDensity& p, const GridDensity& q) {
  check_same_grid("generalized_kl", p, q);
  double acc = 0.0;
  for (int i = 0; i < p.n; ++i) {
    const std::size_t k = static_cast<std::size_t>(i);
    const double pv = p.values[k];
    if (pv < kDensityFloor) continue;
    const double qv = q.values[k];
    if (qv < kDensityFloor) {
      return std::numeric_limits<double>::infinity();  // support violation
    }
    acc += pv * std::log(pv / qv);
  }
  return acc * p.cell();
}

ObjectiveReport smoothed_objective_at_optimum(const GridDensity& p_s,
                                              const GridDensity& p_t, double gamma,
                                              SmoothingMode mode) {
  check_same_grid("smoothed_objective_at_optimum", p_s, p_t);
  if (mode == SmoothingMode::none) mode = SmoothingMode::two_sided;  // gamma = 1 path

  ObjectiveReport rep;
  rep.gamma = gamma;
  rep.mode = mode;

  double obj = 0.0;
  if (mode == SmoothingMode::two_sided) {
    const std::vector<double> h = optimal_discriminator_two(p_s, p_t, gamma);
    for (int i = 0; i < p_s.n; ++i) {
      const std::size_t k = static_cast<std::size_t>(i);
      const double ps = p_s.values[k];
      const double pt = p_t.values[k];
      if (ps + pt < kDensityFloor) continue;
      obj += xlog(gamma * ps + (1.0 - gamma) * pt, h[k]) +
             xlog((1.0 - gamma) * ps + gamma * pt, 1.0 - h[k]);
    }
    obj *= p_s.cell();
    const MixturePair m = mix_two_sided(p_s, p_t, gamma);
    rep.identity_value = 2.0 * js_divergence(m.s, m.t) - kTwoLog2;
  } else {
    // One-sided: objective p_s*[g*log h + (1-g)*log(1-h)] + p_t*log(1-h)
    // at h*(z) = g*p_s / (p_s + p_t); identity from the sub-probability
    // mixtures s' = g*p_s, t' = p_t + (1-g)*p_s:
    //   integral of s'*log(s'/(s'+t')) + t'*log(t'/(s'+t')).
    for (int i = 0; i < p_s.n; ++i) {
      const std::size_t k = static_cast<std::size_t>(i);
      const double ps = p_s.values[k];
      const double pt = p_t.values[k];
      const double tot = ps + pt;
      if (tot < kDensityFloor) continue;
      const double h = gamma * ps / tot;
      obj += xlog(gamma * ps, h) + xlog((1.0 - gamma) * ps + pt, 1.0 - h);
    }
    obj *= p_s.cell();
    const MixturePair m = mix_one_sided(p_s, p_t, gamma);
    double ident = 0.0;
    for (int i = 0; i < p_s.n; ++i) {
      const std::size_t k = static_cast<std::size_t>(i);
      const double sv = m.s.values[k];
      const double tv = m.t.values[k];
      const double tot = sv + tv;
      if (tot < kDensityFloor) continue;
      ident += xlog(sv, sv / tot) + xlog(tv, tv / tot);
    }
    rep.identity_value = ident * p_s.cell();
  }
  rep.objective = obj;
  rep.residual = rep.objective - rep.identity_value;
  return rep;
}

ObjectiveReport multi_objective_at_optimum(std::span<const GridDensity> densities,
                                           double gamma) {
  const int m = static_cast<int>(densities.size());
  if (m < 2) throw OpError("multi_objective_at_optimum: need M >= 2 densities");
  for (const GridDensity& d : densities) {
    check_same_grid("multi_objective_at_optimum", densities[0], d);
  }
  ObjectiveReport rep;
  rep.gamma = gamma;
  rep.mode = SmoothingMode::two_sided;

  std::vector<std::vector<double>> h(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    h[static_cast<std::size_t>(i)] = optimal_discriminator_multi(densities, gamma, i);
  }

  const double off = (1.0 - gamma) / (m - 1);
  double obj = 0.0;
  for (int c = 0; c < densities[0].n; ++c) {
    const std::size_t k = static_cast<std::size_t>(c);
    double tot = 0.0;
    for (int j = 0; j < m; ++j) tot += densities[static_cast<std::size_t>(j)].values[k];
    if (tot < kDensityFloor) continue;
    for (int i = 0; i < m; ++i) {
      const double pi = densities[static_cast<std::size_t>(i)].values[k];
      if (pi < kDensityFloor) continue;
      for (int j = 0; j < m; ++j) {
        obj += xlog(pi * (j == i ? gamma : off), h[static_cast<std::size_t>(j)][k]);
      }
    }
  }
  obj *= densities[0].cell();
  rep.objective = obj;

  // Identity path: sum_i KL(p_i' || p_mix) with p_mix unnormalized (mass M).
  GridDensity mix = densities[0];
  for (int c = 0; c < mix.n; ++c) {
    const std::size_t k = static_cast<std::size_t>(c);
    double tot = 0.0;
    for (int j = 0; j < m; ++j) tot += densities[static_cast<std::size_t>(j)].values[k];
    mix.values[k] = tot;
  }
  double ident = 0.0;
  for (int i = 0; i < m; ++i) {
    GridDensity pi_prime = densities[0];
    for (int c = 0; c < mix.n; ++c) {
      const std::size_t k = static_cast<std::size_t>(c);
      double v = 0.0;
      for (int j = 0; j < m; ++j) {
        v += (j == i ? gamma : off) * densities[static_cast<std::size_t>(j)].values[k];
      }
      pi_prime.values[k] = v;
    }
    ident += generalized_kl(pi_prime, mix);
  }
  rep.identity_value = ident;
  rep.residual = rep.objective - rep.identity_value;
  return rep;
}

}  // namespace elslab
