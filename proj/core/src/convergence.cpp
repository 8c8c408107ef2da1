#include "elslab/convergence.hpp"

#include <cmath>
#include <limits>

#include "elslab/tensor.hpp"  // OpError

namespace elslab {

namespace {

constexpr double kDivergenceBound = 1e6;

// f(t) = log(1/(1+exp(-t))); f'(t) = 1/(1+exp(t)).
double f_logistic(double t) {
  // -log1p(exp(-t)) rewritten for stability on both signs.
  return t >= 0.0 ? -std::log1p(std::exp(-t)) : t - std::log1p(std::exp(t));
}

double f_prime(double t) {
  return t >= 0.0 ? std::exp(-t) / (1.0 + std::exp(-t)) : 1.0 / (1.0 + std::exp(t));
}

// d(d_theta)/du at u = theta_d * theta_e.
double objective_du(const DiracGame& g, double u, double gamma) {
  return gamma * g.x_s * f_prime(u * g.x_s) - (1.0 - gamma) * g.x_s * f_prime(-u * g.x_s) -
         gamma * g.x_t * f_prime(-u * g.x_t) + (1.0 - gamma) * g.x_t * f_prime(u * g.x_t);
}

Mat2 matmul2(const Mat2& l, const Mat2& r) {
  return Mat2{l.a * r.a + l.b * r.c, l.a * r.b + l.b * r.d,
              l.c * r.a + l.d * r.c, l.c * r.b + l.d * r.d};
}

}  // namespace

double dirac_objective(const DiracGame& game, double theta_e, double theta_d,
                       double gamma) {
  const double u = theta_d * theta_e;
  return gamma * f_logistic(u * game.x_s) + (1.0 - gamma) * f_logistic(-u * game.x_s) +
         gamma * f_logistic(-u * game.x_t) + (1.0 - gamma) * f_logistic(u * game.x_t);
}

void GdScheme::validate() const {
  if (eta <= 0.0) throw OpError("gd scheme: eta must be > 0");
  if (kind == GdKind::alternating) {
    if (n_d < 1 || n_e < 1) throw OpError("gd scheme: n_d, n_e must be >= 1");
  }
  if (!(gamma > 0.5) || gamma > 1.0) {
    throw OpError("gd scheme: gamma must lie in (0.5, 1]");
  }
}

Mat2 jacobian_sim(double x_s, double x_t, double eta) {
  if (eta <= 0.0) throw OpError("jacobian_sim: eta must be > 0");
  const double v = 0.5 * eta * (x_s - x_t);
  return Mat2{1.0, -v, v, 1.0};
}

Mat2 jacobian_alt(double x_s, double x_t, double eta, int n_d, int n_e, double gamma) {
  const double kappa = 2.0 * gamma - 1.0;
  const double delta = x_s - x_t;
  const double be = 0.5 * eta * n_e * kappa * delta;
  const double bd = 0.5 * eta * n_d * kappa * delta;
  return Mat2{1.0, -be, bd, 1.0 - bd * be};
}

Mat2 round_jacobian(double x_s, double x_t, double eta, int n_d, int n_e,
                    double gamma, RoundOrder order) {
  const double kappa = 2.0 * gamma - 1.0;
  const double delta = x_s - x_t;
  const Mat2 enc{1.0, -0.5 * eta * n_e * kappa * delta, 0.0, 1.0};
  const Mat2 disc{1.0, 0.0, 0.5 * eta * n_d * kappa * delta, 1.0};
  // The later stage is the left factor of the round's linearization.
  return order == RoundOrder::encoder_first ? matmul2(disc, enc) : matmul2(enc, disc);
}

std::array<std::complex<double>, 2> eigenvalues_2x2(const Mat2& m) {
  const double tr = m.a + m.d;
  const double det = m.a * m.d - m.b * m.c;
  const std::complex<double> disc = std::sqrt(std::complex<double>(tr * tr - 4.0 * det, 0.0));
  return {0.5 * (std::complex<double>(tr, 0.0) + disc),
          0.5 * (std::complex<double>(tr, 0.0) - disc)};
}

double spectral_radius(const std::array<std::complex<double>, 2>& eigs) {
  return std::max(std::abs(eigs[0]), std::abs(eigs[1]));
}

double eta_threshold(double x_s, double x_t, int n_d, int n_e, double gamma) {
  const double delta = std::abs(x_s - x_t);
  if (delta == 0.0) return std::numeric_limits<double>::infinity();
  const double kappa = 2.0 * gamma - 1.0;
  return 4.0 / (std::sqrt(static_cast<double>(n_d) * n_e) * delta) / kappa;
}

EigenReport eigen_report(const DiracGame& game, const GdScheme& scheme) {
  scheme.validate();
  EigenReport r;
  if (scheme.kind == GdKind::simultaneous) {
    r.eigenvalues = eigenvalues_2x2(jacobian_sim(game.x_s, game.x_t, scheme.eta));
    r.eta_threshold = 0.0;  // no stable learning rate exists
  } else {
    r.eigenvalues = eigenvalues_2x2(
        jacobian_alt(game.x_s, game.x_t, scheme.eta, scheme.n_d, scheme.n_e, scheme.gamma));
    r.eta_threshold = eta_threshold(game.x_s, game.x_t, scheme.n_d, scheme.n_e, scheme.gamma);
  }
  r.spectral_radius = spectral_radius(r.eigenvalues);
  r.alpha = 0.5 * (2.0 * scheme.gamma - 1.0) *
            std::sqrt(static_cast<double>(scheme.n_d) * scheme.n_e) * scheme.eta *
            std::abs(game.x_s - game.x_t);
  return r;
}

Trajectory simulate_training(const DiracGame& game, const GdScheme& scheme,
                             long steps, double init_e, double init_d) {
  scheme.validate();
  if (steps < 1) throw OpError("simulate_training: steps must be >= 1");

  Trajectory traj;
  traj.points.reserve(static_cast<std::size_t>(steps) + 1);
  double te = init_e, td = init_d;
  auto record = [&](long step) {
    traj.points.push_back({step, te, td, std::hypot(te, td)});
  };
  auto out_of_bounds = [&]() {
    return std::abs(te) > kDivergenceBound || std::abs(td) > kDivergenceBound;
  };
  record(0);

  for (long s = 1; s <= steps; ++s) {
    if (scheme.kind == GdKind::simultaneous) {
      const double du = objective_du(game, td * te, scheme.gamma);
      const double ge = td * du;
      const double gd = te * du;
      te -= scheme.eta * ge;  // encoder descends
      td += scheme.eta * gd;  // discriminator ascends
    } else {
      auto disc_steps = [&]() {
        for (int i = 0; i < scheme.n_d; ++i) {
          td += scheme.eta * te * objective_du(game, td * te, scheme.gamma);
        }
      };
      auto enc_steps = [&]() {
        for (int i = 0; i < scheme.n_e; ++i) {
          te -= scheme.eta * td * objective_du(game, td * te, scheme.gamma);
        }
      };
      if (scheme.order == RoundOrder::discriminator_first) {
        disc_steps();
        enc_steps();
      } else {
        enc_steps();
        disc_steps();
      }
    }
    record(s);
    if (out_of_bounds()) {
      traj.diverged = true;
      break;
    }
  }
  return traj;
}

}  // namespace elslab
