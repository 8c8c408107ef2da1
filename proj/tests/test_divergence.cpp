#include <cmath>
#include <limits>

#include "doctest.h"
#include "elslab/divergence.hpp"
#include "elslab/rng.hpp"

using namespace elslab;

namespace {

constexpr double kLog2 = 0.69314718055994530941723212145818;

GridDensity std_normal(int n = 4096) { return gaussian_density(0.0, 1.0, -8.0, 9.0, n); }
GridDensity shifted_normal(int n = 4096) { return gaussian_density(1.0, 1.0, -8.0, 9.0, n); }

GridDensity random_mixture(Rng& rng, double lo, double hi, int n) {
  const std::size_t k = 1 + rng.below(3);
  std::vector<double> w(k), mu(k), sg(k);
  for (std::size_t i = 0; i < k; ++i) {
    w[i] = rng.uniform(0.2, 1.0);
    mu[i] = rng.uniform(-2.0, 2.0);
    sg[i] = rng.uniform(0.6, 1.5);
  }
  return gaussian_mixture_density(w, mu, sg, lo, hi, n);
}

}  // namespace

TEST_CASE("probability densities carry unit mass") {
  CHECK(std::abs(std_normal().mass() - 1.0) < 1e-8);
  CHECK(std::abs(uniform_density(0.0, 1.0, -1.0, 3.0, 4096).mass() - 1.0) < 1e-8);
}

TEST_CASE("two-sided mixtures") {
  const GridDensity ps = std_normal(), pt = shifted_normal();
  SUBCASE("gamma 1 returns the inputs") {
    const MixturePair m = mix_two_sided(ps, pt, 1.0);
    CHECK(m.s.values == ps.values);
    CHECK(m.t.values == pt.values);
  }
  SUBCASE("gamma 0.5 collapses both to the average") {
    const MixturePair m = mix_two_sided(ps, pt, 0.5);
    for (int i = 0; i < ps.n; ++i) {
      const std::size_t k = static_cast<std::size_t>(i);
      CHECK(m.s.values[k] == doctest::Approx(0.5 * (ps.values[k] + pt.values[k])).epsilon(1e-14));
      CHECK(m.s.values[k] == m.t.values[k]);
    }
  }
  SUBCASE("pointwise convex combination and unit mass") {
    const MixturePair m = mix_two_sided(ps, pt, 0.75);
    for (int i = 0; i < ps.n; i += 97) {
      const std::size_t k = static_cast<std::size_t>(i);
      CHECK(m.s.values[k] ==
            doctest::Approx(0.75 * ps.values[k] + 0.25 * pt.values[k]).epsilon(1e-13));
    }
    CHECK(std::abs(m.mass_s - 1.0) < 1e-8);
    CHECK(std::abs(m.mass_t - 1.0) < 1e-8);
  }
  SUBCASE("grid mismatch rejected") {
    const GridDensity other = gaussian_density(0, 1, -8, 9, 1024);
    CHECK_THROWS_AS(mix_two_sided(ps, other, 0.9), OpError);
  }
}

TEST_CASE("one-sided mixtures carry stated masses") {
  const GridDensity ps = std_normal(), pt = shifted_normal();
  SUBCASE("gamma 1") {
    const MixturePair m = mix_one_sided(ps, pt, 1.0);
    CHECK(std::abs(m.mass_s - 1.0) < 1e-8);
    CHECK(std::abs(m.mass_t - 1.0) < 1e-8);
  }
  SUBCASE("gamma 0.9") {
    const MixturePair m = mix_one_sided(ps, pt, 0.9);
    CHECK(std::abs(m.mass_s - 0.9) < 1e-8);
    CHECK(std::abs(m.mass_t - 1.1) < 1e-8);
  }
  SUBCASE("t' equals p_t where p_s vanishes") {
    const GridDensity a = uniform_density(0.0, 1.0, -1.0, 4.0, 2000);
    const GridDensity b = uniform_density(2.0, 3.0, -1.0, 4.0, 2000);
    const MixturePair m = mix_one_sided(a, b, 0.8);
    for (int i = 0; i < a.n; ++i) {
      const std::size_t k = static_cast<std::size_t>(i);
      if (a.values[k] == 0.0) CHECK(m.t.values[k] == b.values[k]);
    }
  }
}

TEST_CASE("optimal two-domain discriminator") {
  SUBCASE("equal densities give 1/2 for any gamma") {
    const GridDensity p = std_normal(512);
    for (double gamma : {0.6, 0.8, 1.0}) {
      const std::vector<double> h = optimal_discriminator_two(p, p, gamma);
      for (int i = 0; i < p.n; i += 31) {
        CHECK(h[static_cast<std::size_t>(i)] == doctest::Approx(0.5).epsilon(1e-12));
      }
    }
  }
  SUBCASE("pure-source cell at gamma 1 gives 1; pure-target gives 1-gamma") {
    const GridDensity a = uniform_density(0.0, 1.0, -1.0, 4.0, 500);
    const GridDensity b = uniform_density(2.0, 3.0, -1.0, 4.0, 500);
    const std::vector<double> h1 = optimal_discriminator_two(a, b, 1.0);
    const std::vector<double> h2 = optimal_discriminator_two(a, b, 0.8);
    for (int i = 0; i < a.n; ++i) {
      const std::size_t k = static_cast<std::size_t>(i);
      if (a.values[k] > 0.0) {
        CHECK(h1[k] == 1.0);
        CHECK(h2[k] == doctest::Approx(0.8));
      } else if (b.values[k] > 0.0) {
        CHECK(h2[k] == doctest::Approx(0.2));
      } else {
        CHECK(std::isnan(h1[k]));  // masked where no density lives
      }
    }
  }
  SUBCASE("range is [1-gamma, gamma]") {
    const GridDensity ps = std_normal(1024), pt = shifted_normal(1024);
    const std::vector<double> h = optimal_discriminator_two(ps, pt, 0.85);
    for (double v : h) {
      if (std::isnan(v)) continue;
      CHECK(v >= 0.15 - 1e-12);
      CHECK(v <= 0.85 + 1e-12);
    }
  }
}

TEST_CASE("optimal multi-domain discriminator") {
  SUBCASE("equal densities give 1/M") {
    const GridDensity p = std_normal(512);
    const std::vector<GridDensity> ds{p, p, p};
    for (int i = 0; i < 3; ++i) {
      const std::vector<double> h = optimal_discriminator_multi(ds, 0.7, i);
      for (int c = 0; c < p.n; c += 37) {
        CHECK(h[static_cast<std::size_t>(c)] == doctest::Approx(1.0 / 3).epsilon(1e-12));
      }
    }
  }
  SUBCASE("gamma 1 recovers the density ratio") {
    const std::vector<GridDensity> ds{std_normal(512), shifted_normal(512)};
    const std::vector<double> h = optimal_discriminator_multi(ds, 1.0, 0);
    for (int c = 0; c < 512; c += 41) {
      const std::size_t k = static_cast<std::size_t>(c);
      const double expect = ds[0].values[k] / (ds[0].values[k] + ds[1].values[k]);
      CHECK(h[k] == doctest::Approx(expect).epsilon(1e-12));
    }
  }
  SUBCASE("spot arithmetic and heads summing to one") {
    // densities (1, 1, 2) at one cell, gamma 0.8: head 0 = (0.8 + 0.1*3)/4
    GridDensity a{0, 1, 1, {1.0}}, b{0, 1, 1, {1.0}}, c{0, 1, 1, {2.0}};
    const std::vector<GridDensity> ds{a, b, c};
    CHECK(optimal_discriminator_multi(ds, 0.8, 0)[0] == doctest::Approx(0.275).epsilon(1e-15));
    double total = 0.0;
    for (int i = 0; i < 3; ++i) total += optimal_discriminator_multi(ds, 0.8, i)[0];
    CHECK(total == doctest::Approx(1.0).epsilon(1e-14));
  }
}

TEST_CASE("jensen-shannon divergence") {
  SUBCASE("identical densities") {
    const GridDensity p = std_normal(1024);
    CHECK(js_divergence(p, p) == 0.0);
  }
  SUBCASE("disjoint supports reach log 2") {
    // grid chosen so the support endpoints fall on cell edges
    const GridDensity a = uniform_density(0.0, 1.0, 0.0, 4.0, 4096);
    const GridDensity b = uniform_density(2.0, 3.0, 0.0, 4.0, 4096);
    CHECK(std::abs(js_divergence(a, b) - kLog2) < 1e-6);
  }
  SUBCASE("grid refinement confirms the quadrature") {
    const double coarse = js_divergence(std_normal(4096), shifted_normal(4096));
    const double fine = js_divergence(std_normal(40960), shifted_normal(40960));
    CHECK(std::abs(coarse - fine) < 1e-7);
  }
  SUBCASE("mass validated") {
    GridDensity p = std_normal(512);
    GridDensity q = p;
    for (double& v : q.values) v *= 2.0;
    CHECK_THROWS_AS(js_divergence(p, q), OpError);
  }
}

TEST_CASE("generalized KL") {
  const GridDensity p = std_normal(4096);
  SUBCASE("identical probability densities") { CHECK(generalized_kl(p, p) == 0.0); }
  SUBCASE("constant-ratio unnormalized reference") {
    GridDensity q = p;
    for (double& v : q.values) v *= 2.0;
    CHECK(std::abs(generalized_kl(p, q) + kLog2) < 1e-8);
    GridDensity r = p;
    for (double& v : r.values) v *= 5.0;
    CHECK(std::abs(generalized_kl(p, r) + std::log(5.0)) < 1e-8);
  }
  SUBCASE("support violation reports infinity") {
    const GridDensity a = uniform_density(0.0, 2.0, -1.0, 4.0, 1000);
    const GridDensity b = uniform_density(0.0, 1.0, -1.0, 4.0, 1000);
    CHECK(std::isinf(generalized_kl(a, b)));
    CHECK(generalized_kl(a, b) > 0);
  }
}

TEST_CASE("two-domain objective identity") {
  const GridDensity ps = std_normal(), pt = shifted_normal();
  SUBCASE("gamma 0.5 hits -2 log 2") {
    const ObjectiveReport r = smoothed_objective_at_optimum(ps, pt, 0.5, SmoothingMode::two_sided);
    CHECK(std::abs(r.objective + 2.0 * kLog2) < 1e-9);
  }
  SUBCASE("identical domains hit -2 log 2 for any gamma") {
    for (double gamma : {0.5, 0.7, 1.0}) {
      const ObjectiveReport r =
          smoothed_objective_at_optimum(ps, ps, gamma, SmoothingMode::two_sided);
      CHECK(std::abs(r.objective + 2.0 * kLog2) < 1e-9);
    }
  }
  SUBCASE("gamma 1 equals 2 JS - 2 log 2 against the plain quadrature") {
    const ObjectiveReport r = smoothed_objective_at_optimum(ps, pt, 1.0, SmoothingMode::two_sided);
    const double expect = 2.0 * js_divergence(ps, pt) - 2.0 * kLog2;
    CHECK(std::abs(r.objective - expect) < 1e-6);
  }
  SUBCASE("dual-path residual across the gamma grid") {
    for (double gamma : {0.6, 0.75, 0.9, 1.0}) {
      const ObjectiveReport r =
          smoothed_objective_at_optimum(ps, pt, gamma, SmoothingMode::two_sided);
      CHECK(std::abs(r.residual) < 1e-6);
    }
  }
}

TEST_CASE("one-sided objective identity") {
  const GridDensity ps = std_normal(), pt = shifted_normal();
  for (double gamma : {0.8, 0.9, 1.0}) {
    const ObjectiveReport r = smoothed_objective_at_optimum(ps, pt, gamma, SmoothingMode::one_sided);
    CHECK(std::abs(r.residual) < 1e-6);
  }
  SUBCASE("gamma 1 coincides with the two-sided objective") {
    const ObjectiveReport one = smoothed_objective_at_optimum(ps, pt, 1.0, SmoothingMode::one_sided);
    const ObjectiveReport two = smoothed_objective_at_optimum(ps, pt, 1.0, SmoothingMode::two_sided);
    CHECK(one.objective == doctest::Approx(two.objective).epsilon(1e-10));
  }
}

TEST_CASE("multi-domain objective identity") {
  SUBCASE("equal densities give -M log M") {
    const GridDensity p = std_normal();
    for (int m : {2, 3, 5}) {
      const std::vector<GridDensity> ds(static_cast<std::size_t>(m), p);
      const ObjectiveReport r = multi_objective_at_optimum(ds, 0.8);
      CHECK(std::abs(r.objective + m * std::log(m)) < 1e-8);
      CHECK(std::abs(r.residual) < 1e-8);
    }
  }
  SUBCASE("M = 2 at gamma 1 meets the two-domain identity") {
    const std::vector<GridDensity> ds{std_normal(), shifted_normal()};
    const ObjectiveReport r = multi_objective_at_optimum(ds, 1.0);
    const double expect = 2.0 * js_divergence(ds[0], ds[1]) - 2.0 * kLog2;
    CHECK(std::abs(r.objective - expect) < 1e-6);
  }
  SUBCASE("random M = 3 mixtures, gamma grid") {
    Rng rng(77);
    for (double gamma : {0.6, 0.8, 1.0}) {
      const std::vector<GridDensity> ds{random_mixture(rng, -8, 9, 4096),
                                        random_mixture(rng, -8, 9, 4096),
                                        random_mixture(rng, -8, 9, 4096)};
      const ObjectiveReport r = multi_objective_at_optimum(ds, gamma);
      CHECK(std::abs(r.residual) < 1e-6);
    }
  }
}

TEST_CASE("pointwise perturbation never improves the optimal discriminator") {
  const GridDensity ps = std_normal(2048), pt = shifted_normal(2048);
  const double delta = 1e-3;
  Rng rng(13);
  for (double gamma : {0.7, 0.9}) {
    const std::vector<double> h = optimal_discriminator_two(ps, pt, gamma);
    auto cell_value = [&](std::size_t k, double hv) {
      return ps.values[k] * (gamma * std::log(hv) + (1.0 - gamma) * std::log(1.0 - hv)) +
             pt.values[k] * ((1.0 - gamma) * std::log(hv) + gamma * std::log(1.0 - hv));
    };
    int tested = 0;
    while (tested < 100) {
      const std::size_t k = static_cast<std::size_t>(rng.below(static_cast<std::uint64_t>(ps.n)));
      const double hv = h[k];
      if (std::isnan(hv) || hv - delta <= 0.0 || hv + delta >= 1.0) continue;
      const double base = cell_value(k, hv);
      CHECK(cell_value(k, hv + delta) <= base);
      CHECK(cell_value(k, hv - delta) <= base);
      ++tested;
    }
  }
}

TEST_CASE("JS between mixtures grows with gamma") {
  const GridDensity ps = std_normal(2048), pt = shifted_normal(2048);
  double prev = -1.0;
  for (int i = 0; i <= 10; ++i) {
    const double gamma = 0.5 + 0.05 * i;
    const MixturePair m = mix_two_sided(ps, pt, gamma);
    const double js = js_divergence(m.s, m.t);
    CHECK(js >= prev - 1e-14);
    prev = js;
  }
}

TEST_CASE("quadrature converges at second order") {
  auto js_at = [&](int n) { return js_divergence(std_normal(n), shifted_normal(n)); };
  const double j512 = js_at(512), j1024 = js_at(1024), j2048 = js_at(2048), j4096 = js_at(4096);
  const double c1 = std::abs(j1024 - j512);
  const double c2 = std::abs(j2048 - j1024);
  const double c3 = std::abs(j4096 - j2048);
  CHECK(c2 < 4.0 * c1);
  CHECK(c3 < 4.0 * c2);
  // and in fact each halving shrinks the change
  CHECK(c2 <= 0.5 * c1 + 1e-13);
  CHECK(c3 <= 0.5 * c2 + 1e-13);
}
