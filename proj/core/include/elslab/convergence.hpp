#pragma once

#include <array>
#include <complex>
#include <string>
#include <vector>

namespace elslab {

// Two-atom adversarial toy system: a one-parameter encoder theta_e and a
// one-parameter discriminator theta_d play over Dirac masses at x_s and x_t.
// Objective (gamma = 1 is the plain game):
//   d(theta; gamma) = gamma*f(u*x_s) + (1-gamma)*f(-u*x_s)
//                   + gamma*f(-u*x_t) + (1-gamma)*f(u*x_t),
// with u = theta_d * theta_e and f(t) = log(1/(1+exp(-t))). The unique
// equilibrium is theta_e = theta_d = 0. The discriminator ascends d, the
// encoder descends it.
struct DiracGame {
  double x_s = 1.0;
  double x_t = -1.0;
};

double dirac_objective(const DiracGame& game, double theta_e, double theta_d,
                       double gamma);

struct Mat2 {
  double a = 1.0, b = 0.0;  // [[a, b],
  double c = 0.0, d = 1.0;  //  [c, d]]
};

enum class GdKind { simultaneous, alternating };
enum class RoundOrder { discriminator_first, encoder_first };

struct GdScheme {
  GdKind kind = GdKind::alternating;
  int n_d = 1;
  int n_e = 1;
  double eta = 0.1;
  double gamma = 1.0;  // 1 recovers the unsmoothed game
  RoundOrder order = RoundOrder::discriminator_first;

  void validate() const;
};

// Linearization of one simultaneous update at the equilibrium:
// [[1, -(eta/2)*D], [(eta/2)*D, 1]] with D = x_s - x_t.
Mat2 jacobian_sim(double x_s, double x_t, double eta);

// Linearization of one alternating round (n_d discriminator updates, n_e
// encoder updates) at the equilibrium, with kappa = 2*gamma - 1:
// [[1, -(eta*n_e*kappa/2)*D], [(eta*n_d*kappa/2)*D, 1 - (eta^2*n_d*n_e*kappa^2/4)*D^2]].
Mat2 jacobian_alt(double x_s, double x_t, double eta, int n_d, int n_e, double gamma);

// Linearization of one simulated round in the given update order. The
// encoder-first order reproduces jacobian_alt entry-wise; the two orders
// share eigenvalues.
Mat2 round_jacobian(double x_s, double x_t, double eta, int n_d, int n_e,
                    double gamma, RoundOrder order);

// Roots of the characteristic polynomial, (tr +- sqrt(tr^2 - 4 det)) / 2.
std::array<std::complex<double>, 2> eigenvalues_2x2(const Mat2& m);

double spectral_radius(const std::array<std::complex<double>, 2>& eigs);

// Largest learning rate with marginally stable alternating rounds:
// 4 / (sqrt(n_d*n_e) * |x_s - x_t| * (2*gamma - 1)); +infinity when x_s = x_t.
double eta_threshold(double x_s, double x_t, int n_d, int n_e, double gamma);

struct EigenReport {
  std::array<std::complex<double>, 2> eigenvalues;
  double spectral_radius = 0.0;
  double eta_threshold = 0.0;  // alternating only; +inf for degenerate games
  double alpha = 0.0;          // ((2*gamma-1)/2) * sqrt(n_d*n_e) * eta * |x_s - x_t|
};

EigenReport eigen_report(const DiracGame& game, const GdScheme& scheme);

struct TrajectoryPoint {
  long step = 0;
  double theta_e = 0.0;
  double theta_d = 0.0;
  double distance = 0.0;  // sqrt(theta_e^2 + theta_d^2)
};

struct Trajectory {
  std::vector<TrajectoryPoint> points;
  bool diverged = false;  // truncated once |theta| exceeded 1e6
};

// Exact nonlinear gradient dynamics. Simultaneous: `steps` updates, both
// parameters moved from one gradient evaluation. Alternating: `steps` rounds,
// each applying n_d discriminator ascent steps and n_e encoder descent steps
// in the scheme's order.
Trajectory simulate_training(const DiracGame& game, const GdScheme& scheme,
                             long steps, double init_e, double init_d);

}  // namespace elslab
