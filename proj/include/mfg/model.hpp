#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include <json.hpp>

#include "mfg/measure.hpp"
#include "mfg/rng.hpp"

namespace mfg {

using VecFn = std::function<Eigen::VectorXd(const Eigen::VectorXd&, const EmpiricalMeasure&,
                                            const Eigen::VectorXd&)>;
using MatFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&, const EmpiricalMeasure&,
                                            const Eigen::VectorXd&)>;
// measure-derivative kernels carry an extra atom argument x_tilde
using VecKernelFn = std::function<Eigen::MatrixXd(const Eigen::VectorXd&, const EmpiricalMeasure&,
                                                  const Eigen::VectorXd&, const Eigen::VectorXd&)>;

struct ModelConstants {
  double L_H = 1.0;  // bound on second derivatives of H and coercivity slack
  double L_G = 1.0;  // bound on second derivatives of G
  double c0 = 1.0;   // strong convexity of H in p
};

// The data pair (H, G) with all first/second derivatives as evaluable maps.
// Matrix conventions: h_dxp(i, j) = d^2 H / dx_i dp_j, and the measure
// kernels h_dxmu(x, mu, x_tilde, p)(i, j) = d_{mu_j} [d_{x_i} H](x, mu, x_tilde, p)
// per unit mass, in the jointly-continuous global-extension convention.
// Maps must be pure; ModelSpec is immutable after construction and safe to
// share across workers.
struct ModelSpec {
  std::string name;
  int dim = 1;
  double horizon = 1.0;
  double beta = 0.0;

  std::function<double(const Eigen::VectorXd&, const EmpiricalMeasure&, const Eigen::VectorXd&)>
      hamiltonian;
  VecFn h_dx, h_dp;
  MatFn h_dxx, h_dxp, h_dpp;
  VecKernelFn h_dxmu, h_dpmu;

  std::function<double(const Eigen::VectorXd&, const EmpiricalMeasure&)> terminal;
  std::function<Eigen::VectorXd(const Eigen::VectorXd&, const EmpiricalMeasure&)> g_dx;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&, const EmpiricalMeasure&)> g_dxx;
  std::function<Eigen::MatrixXd(const Eigen::VectorXd&, const EmpiricalMeasure&, const Eigen::VectorXd&)>
      g_dxmu;

  ModelConstants constants;
};

// Probe box for the stochastic audit. Measures are Gaussian clouds with
// mean in [-mu_mean, mu_mean]^d and std in [std_lo, std_hi].
struct SamplerConfig {
  double x_box = 5.0;
  double p_box = 5.0;
  double mu_mean = 2.0;
  double std_lo = 0.1;
  double std_hi = 2.0;
  int max_atoms = 64;
};

struct AssumptionProbe {
  std::string assumption;
  double worst = 0.0;       // worst observed value of the audited quantity
  double bound = 0.0;       // the bound it must respect
  bool larger_is_safe = false;
  bool pass = true;
  int samples = 0;
  // location of the worst violation (or worst margin)
  Eigen::VectorXd x, p;
  Eigen::VectorXd mu_mean;
  int mu_atoms = 0;
};

struct AssumptionReport {
  std::vector<AssumptionProbe> probes;
  bool pass = true;
  nlohmann::json to_json() const;
};

// Randomized audit of the standing bounds: eigenvalues of h_dpp in
// [c0, L_H], operator norms of the second derivatives within L_H / L_G,
// coercivity <h_dp, p> - H >= -L_H, Hessian symmetry, and the sampled
// lower bound G >= -L_G. Deterministic given the seed. Throws
// std::domain_error if any map returns non-finite values.
AssumptionReport validate_assumptions(const ModelSpec& model, const SamplerConfig& sampler,
                                      int trials, std::uint64_t seed = 2024);

// L(x, mu, a) = sup_p ( -<p, a> - H(x, mu, p) ), by damped Newton.
// Throws std::runtime_error when Newton fails to converge.
double legendre_transform(const ModelSpec& model, const Eigen::VectorXd& x,
                          const EmpiricalMeasure& mu, const Eigen::VectorXd& a,
                          Eigen::VectorXd* maximizer = nullptr);

struct FdIssue {
  std::string derivative;
  double rel_error = 0.0;
  Eigen::VectorXd x, p;
};

struct FdReport {
  bool pass = true;
  double worst_rel_error = 0.0;
  std::vector<FdIssue> issues;  // offending derivatives, worst probe each
};

// Central finite-difference check of every analytic derivative against its
// parent map; measure derivatives are checked through single-atom shifts.
FdReport fd_consistency_check(const ModelSpec& model, int probes, double tol = 1e-4,
                              std::uint64_t seed = 77);

EmpiricalMeasure sample_probe_measure(const SamplerConfig& sampler, int dim, Rng& rng);

}  // namespace mfg
