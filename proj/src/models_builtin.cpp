#include "mfg/models_builtin.hpp"

#include <cmath>
#include <stdexcept>

namespace mfg {

ModelSpec make_free_flow(double T, double beta, int dim) {
  LQParams p;
  p.a = 1.0;
  p.b = 0.0;
  p.q = 0.0;
  p.T = T;
  p.beta = beta;
  p.dim = dim;
  ModelSpec m = build_lq_model(p);
  m.name = "free_flow";
  return m;
}

namespace {

// smooth convex bump with f'' in (0, 1]
double lse(const Eigen::VectorXd& x) {
  double s = 0.0;
  for (int c = 0; c < x.size(); ++c) {
    double a = x[c];
    // log(e^a + e^-a), stabilized
    double m = std::abs(a);
    s += m + std::log1p(std::exp(-2.0 * m));
  }
  return s;
}

Eigen::VectorXd lse_grad(const Eigen::VectorXd& x) {
  Eigen::VectorXd g(x.size());
  for (int c = 0; c < x.size(); ++c) g[c] = std::tanh(x[c]);
  return g;
}

Eigen::MatrixXd lse_hess(const Eigen::VectorXd& x) {
  Eigen::MatrixXd h = Eigen::MatrixXd::Zero(x.size(), x.size());
  for (int c = 0; c < x.size(); ++c) {
    double t = std::tanh(x[c]);
    h(c, c) = 1.0 - t * t;
  }
  return h;
}

}  // namespace

ModelSpec make_lse_model(double T, double beta, double strength) {
  LQParams base;
  base.a = 1.0;
  base.b = 0.5;
  base.q = 0.5;
  base.T = T;
  base.beta = beta;
  ModelSpec m = build_lq_model(base);
  m.name = "lse";
  const double s = strength;
  const double q = base.q, a = base.a, b = base.b;

  // H = 1/2|p|^2 - s*lse(x) - q x.mean ; the concave-in-x sign keeps the
  // first-order pairing of H nonnegative.
  m.hamiltonian = [s, q](const Eigen::VectorXd& x, const EmpiricalMeasure& mu, const Eigen::VectorXd& p) {
    return 0.5 * p.squaredNorm() - s * lse(x) - q * x.dot(mu.mean());
  };
  m.h_dx = [s, q](const Eigen::VectorXd& x, const EmpiricalMeasure& mu, const Eigen::VectorXd&) {
    return Eigen::VectorXd(-s * lse_grad(x) - q * mu.mean());
  };
  m.h_dxx = [s](const Eigen::VectorXd& x, const EmpiricalMeasure&, const Eigen::VectorXd&) {
    return Eigen::MatrixXd(-s * lse_hess(x));
  };

  // G = a/2|x|^2 + s*lse(x) + b x.mean
  m.terminal = [s, a, b](const Eigen::VectorXd& x, const EmpiricalMeasure& mu) {
    return 0.5 * a * x.squaredNorm() + s * lse(x) + b * x.dot(mu.mean());
  };
  m.g_dx = [s, a, b](const Eigen::VectorXd& x, const EmpiricalMeasure& mu) {
    return Eigen::VectorXd(a * x + s * lse_grad(x) + b * mu.mean());
  };
  m.g_dxx = [s, a](const Eigen::VectorXd& x, const EmpiricalMeasure&) {
    Eigen::MatrixXd h = s * lse_hess(x);
    h.diagonal().array() += a;
    return h;
  };

  m.constants.L_G = a + b + s;
  return m;
}

ModelSpec make_antimonotone(double T, double beta) {
  LQParams p;
  p.a = 1.0;
  p.T = T;
  p.beta = beta;
  ModelSpec m = build_lq_model(p);
  m.name = "antimonotone";
  const int d = m.dim;
  m.terminal = [](const Eigen::VectorXd& x, const EmpiricalMeasure&) { return -0.5 * x.squaredNorm(); };
  m.g_dx = [](const Eigen::VectorXd& x, const EmpiricalMeasure&) { return Eigen::VectorXd(-x); };
  m.g_dxx = [d](const Eigen::VectorXd&, const EmpiricalMeasure&) {
    return Eigen::MatrixXd(-Eigen::MatrixXd::Identity(d, d));
  };
  m.g_dxmu = [d](const Eigen::VectorXd&, const EmpiricalMeasure&, const Eigen::VectorXd&) {
    return Eigen::MatrixXd(Eigen::MatrixXd::Zero(d, d));
  };
  m.constants.L_G = 1.0;
  return m;
}

ModelSpec make_crosscoupled(double kappa, double theta, double T) {
  LQParams base;
  base.a = 1.0;
  base.T = T;
  ModelSpec m = build_lq_model(base);
  m.name = "crosscoupled";
  const int d = m.dim;
  const double k = kappa, th = theta;

  m.hamiltonian = [k, th](const Eigen::VectorXd& x, const EmpiricalMeasure& mu, const Eigen::VectorXd& p) {
    return 0.5 * p.squaredNorm() + k * p.dot(mu.mean()) - th * x.dot(mu.mean());
  };
  m.h_dx = [th](const Eigen::VectorXd&, const EmpiricalMeasure& mu, const Eigen::VectorXd&) {
    return Eigen::VectorXd(-th * mu.mean());
  };
  m.h_dp = [k](const Eigen::VectorXd&, const EmpiricalMeasure& mu, const Eigen::VectorXd& p) {
    return Eigen::VectorXd(p + k * mu.mean());
  };
  m.h_dxmu = [th, d](const Eigen::VectorXd&, const EmpiricalMeasure&, const Eigen::VectorXd&,
                     const Eigen::VectorXd&) {
    return Eigen::MatrixXd(-th * Eigen::MatrixXd::Identity(d, d));
  };
  m.h_dpmu = [k, d](const Eigen::VectorXd&, const EmpiricalMeasure&, const Eigen::VectorXd&,
                    const Eigen::VectorXd&) {
    return Eigen::MatrixXd(k * Eigen::MatrixXd::Identity(d, d));
  };
  m.constants.L_H = std::max({1.0, k, 10.0 * th});
  return m;
}

ModelSpec make_zero_data(double T, double beta, int dim) {
  LQParams p;
  p.a = 0.0;
  p.T = T;
  p.beta = beta;
  p.dim = dim;
  ModelSpec m = build_lq_model(p);
  m.name = "zero";
  m.constants.L_G = 1e-6;
  return m;
}

ModelSpec make_model(const std::string& name, const LQParams& lq) {
  if (name == "lq") return build_lq_model(lq);
  if (name == "free_flow") return make_free_flow(lq.T, lq.beta, lq.dim);
  if (name == "lse") return make_lse_model(lq.T, lq.beta);
  if (name == "antimonotone") return make_antimonotone(lq.T, lq.beta);
  if (name == "crosscoupled") return make_crosscoupled();
  if (name == "zero") return make_zero_data(lq.T, lq.beta, lq.dim);
  throw std::invalid_argument("unknown model: " + name);
}

std::vector<std::string> bundled_monotone_models() { return {"free_flow", "lq", "lse"}; }

}  // namespace mfg
