#include "mfg/lq.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

#include "mfg/io.hpp"

namespace mfg {

namespace {

void check_params(const LQParams& p) {
  if (p.a < 0 || p.b < 0 || p.q < 0)
    throw std::invalid_argument("LQParams: a, b, q must be nonnegative");
  if (p.T <= 0 || p.dim < 1) throw std::invalid_argument("LQParams: bad T or dim");
}

}  // namespace

ModelSpec build_lq_model(const LQParams& params) {
  check_params(params);
  const double a = params.a, b = params.b, q = params.q;
  const int d = params.dim;
  ModelSpec m;
  m.name = "lq";
  m.dim = d;
  m.horizon = params.T;
  m.beta = params.beta;

  m.hamiltonian = [q](const Eigen::VectorXd& x, const EmpiricalMeasure& mu, const Eigen::VectorXd& p) {
    return 0.5 * p.squaredNorm() - q * x.dot(mu.mean());
  };
  m.h_dx = [q](const Eigen::VectorXd&, const EmpiricalMeasure& mu, const Eigen::VectorXd&) {
    return Eigen::VectorXd(-q * mu.mean());
  };
  m.h_dp = [](const Eigen::VectorXd&, const EmpiricalMeasure&, const Eigen::VectorXd& p) { return p; };
  m.h_dxx = [d](const Eigen::VectorXd&, const EmpiricalMeasure&, const Eigen::VectorXd&) {
    return Eigen::MatrixXd(Eigen::MatrixXd::Zero(d, d));
  };
  m.h_dxp = [d](const Eigen::VectorXd&, const EmpiricalMeasure&, const Eigen::VectorXd&) {
    return Eigen::MatrixXd(Eigen::MatrixXd::Zero(d, d));
  };
  m.h_dpp = [d](const Eigen::VectorXd&, const EmpiricalMeasure&, const Eigen::VectorXd&) {
    return Eigen::MatrixXd(Eigen::MatrixXd::Identity(d, d));
  };
  m.h_dxmu = [q, d](const Eigen::VectorXd&, const EmpiricalMeasure&, const Eigen::VectorXd&,
                    const Eigen::VectorXd&) {
    return Eigen::MatrixXd(-q * Eigen::MatrixXd::Identity(d, d));
  };
  m.h_dpmu = [d](const Eigen::VectorXd&, const EmpiricalMeasure&, const Eigen::VectorXd&,
                 const Eigen::VectorXd&) {
    return Eigen::MatrixXd(Eigen::MatrixXd::Zero(d, d));
  };

  m.terminal = [a, b](const Eigen::VectorXd& x, const EmpiricalMeasure& mu) {
    return 0.5 * a * x.squaredNorm() + b * x.dot(mu.mean());
  };
  m.g_dx = [a, b](const Eigen::VectorXd& x, const EmpiricalMeasure& mu) {
    return Eigen::VectorXd(a * x + b * mu.mean());
  };
  m.g_dxx = [a, d](const Eigen::VectorXd&, const EmpiricalMeasure&) {
    return Eigen::MatrixXd(a * Eigen::MatrixXd::Identity(d, d));
  };
  m.g_dxmu = [b, d](const Eigen::VectorXd&, const EmpiricalMeasure&, const Eigen::VectorXd&) {
    return Eigen::MatrixXd(b * Eigen::MatrixXd::Identity(d, d));
  };

  // L_H also covers the sampled coercivity slack <h_dp,p> - H = |p|^2/2 + q x.mean,
  // which reaches -q * x_box * mu_mean_box on the default probe box.
  m.constants.L_H = std::max({1.0, q, 10.0 * q});
  m.constants.L_G = std::max(a + b, 1e-6);
  m.constants.c0 = 1.0;
  return m;
}

double RiccatiSolution::P_at(double time) const {
  if (t.empty()) throw std::runtime_error("empty riccati solution");
  if (time < t.front() - 1e-12 || time > t.back() + 1e-12)
    throw std::out_of_range("riccati: t outside grid");
  if (time <= t.front()) return P.front();
  if (time >= t.back()) return P.back();
  auto it = std::upper_bound(t.begin(), t.end(), time);
  size_t k = static_cast<size_t>(it - t.begin()) - 1;
  double w = (time - t[k]) / (t[k + 1] - t[k]);
  return (1 - w) * P[k] + w * P[k + 1];
}

double RiccatiSolution::Q_at(double time) const {
  if (t.empty()) throw std::runtime_error("empty riccati solution");
  if (time < t.front() - 1e-12 || time > t.back() + 1e-12)
    throw std::out_of_range("riccati: t outside grid");
  if (time <= t.front()) return Q.front();
  if (time >= t.back()) return Q.back();
  auto it = std::upper_bound(t.begin(), t.end(), time);
  size_t k = static_cast<size_t>(it - t.begin()) - 1;
  double w = (time - t[k]) / (t[k + 1] - t[k]);
  return (1 - w) * Q[k] + w * Q[k + 1];
}

std::string RiccatiSolution::to_csv() const {
  std::ostringstream out;
  out << "t,P,Q\n";
  for (size_t i = 0; i < t.size(); ++i)
    out << fmt17(t[i]) << ',' << fmt17(P[i]) << ',' << fmt17(Q[i]) << '\n';
  return out.str();
}

RiccatiSolution riccati_solve(const LQParams& params, int steps, double) {
  check_params(params);
  if (steps < 1) throw std::invalid_argument("riccati_solve: steps must be >= 1");

  RiccatiSolution sol;
  sol.t.resize(steps + 1);
  sol.P.resize(steps + 1);
  sol.Q.resize(steps + 1);
  for (int k = 0; k <= steps; ++k) sol.t[k] = params.T * k / steps;
  sol.P[steps] = params.a;
  sol.Q[steps] = params.b;

  auto fP = [](double P) { return P * P; };
  auto fQ = [&](double P, double Q) { return 2 * P * Q + Q * Q - params.q; };

  // classical RK4 backward at substep dt/4
  for (int k = steps; k > 0; --k) {
    double P = sol.P[k], Q = sol.Q[k];
    double hsub = (sol.t[k] - sol.t[k - 1]) / 4.0;
    for (int s = 0; s < 4; ++s) {
      double h = -hsub;  // integrating backward in time
      double k1P = fP(P), k1Q = fQ(P, Q);
      double k2P = fP(P + 0.5 * h * k1P), k2Q = fQ(P + 0.5 * h * k1P, Q + 0.5 * h * k1Q);
      double k3P = fP(P + 0.5 * h * k2P), k3Q = fQ(P + 0.5 * h * k2P, Q + 0.5 * h * k2Q);
      double k4P = fP(P + h * k3P), k4Q = fQ(P + h * k3P, Q + h * k3Q);
      P += h / 6.0 * (k1P + 2 * k2P + 2 * k3P + k4P);
      Q += h / 6.0 * (k1Q + 2 * k2Q + 2 * k3Q + k4Q);
      if (!std::isfinite(P) || !std::isfinite(Q) || std::abs(Q) > 1e8)
        throw std::runtime_error("riccati_solve: blow-up (should not happen for a,b,q >= 0)");
    }
    sol.P[k - 1] = P;
    sol.Q[k - 1] = Q;
  }

  // P has a closed form; use it as a cross-check of the integrator
  for (int k = 0; k <= steps; ++k) {
    double exact = lq_closed_form_P(params.a, params.T, sol.t[k]);
    if (std::abs(sol.P[k] - exact) > 1e-8)
      throw std::runtime_error("riccati_solve: P deviates from closed form");
  }
  return sol;
}

Eigen::VectorXd lq_dxV(const RiccatiSolution& riccati, const LQParams& params, double t,
                       const Eigen::VectorXd& x, const EmpiricalMeasure& mu) {
  (void)params;
  return riccati.P_at(t) * x + riccati.Q_at(t) * mu.mean();
}

}  // namespace mfg
