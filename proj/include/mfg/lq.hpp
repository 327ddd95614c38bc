#pragma once

#include <Eigen/Dense>
#include <string>
#include <vector>

#include "mfg/model.hpp"

namespace mfg {

// Linear-quadratic family: G = a/2 |x|^2 + b x.mean(mu), H = 1/2 |p|^2 - q x.mean(mu).
// a, b, q >= 0 makes both G and H displacement monotone.
struct LQParams {
  double a = 1.0;
  double b = 0.0;
  double q = 0.0;
  double beta = 0.0;
  double T = 1.0;
  int dim = 1;
};

// Coefficient trajectories of the gradient ansatz dxV = P(t) x + Q(t) mean,
// from matching the Pontryagin system termwise:
//   P' = P^2,           P(T) = a
//   Q' = 2 P Q + Q^2 - q, Q(T) = b
// The common-noise intensity drops out of both equations.
struct RiccatiSolution {
  std::vector<double> t;
  std::vector<double> P;
  std::vector<double> Q;

  double P_at(double time) const;
  double Q_at(double time) const;
  std::string to_csv() const;
};

ModelSpec build_lq_model(const LQParams& params);

// Backward RK4 at step dt/4 over a uniform grid with `steps` intervals on [0, T].
RiccatiSolution riccati_solve(const LQParams& params, int steps, double dt_hint = 0.0);

// closed form for the P equation
inline double lq_closed_form_P(double a, double T, double t) {
  return a / (1.0 + a * (T - t));
}

Eigen::VectorXd lq_dxV(const RiccatiSolution& riccati, const LQParams& params, double t,
                       const Eigen::VectorXd& x, const EmpiricalMeasure& mu);

}  // namespace mfg
