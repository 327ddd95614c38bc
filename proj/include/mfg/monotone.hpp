#pragma once

#include <Eigen/Dense>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>

#include <json.hpp>

#include "mfg/master.hpp"
#include "mfg/measure.hpp"
#include "mfg/model.hpp"

namespace mfg {

// A coupled pair of empirical random variables (and momenta, for the
// Hamiltonian pairing), the witness of the worst observed pairing value.
struct PairingWitness {
  Eigen::MatrixXd xi1, xi2;  // n x d samples on the shared space
  Eigen::MatrixXd p1, p2;    // empty for terminal-data checks
};

struct MonotonicityReport {
  int trials = 0;
  double min_pairing = 0.0;
  PairingWitness witness;
  bool pass = false;
  double tolerance = 0.0;
  nlohmann::json to_json() const;
};

struct MonotoneCheckConfig {
  int atoms = 128;           // atoms per coupled draw
  double sample_box = 2.0;   // Gaussian cloud means within +/- box
  double sample_std = 1.0;
  int descent_steps = 50;    // adversarial local-search budget per restart
  int restarts = 5;
  double step = 0.25;        // local perturbation size
  double tolerance = 1e-9;   // pass threshold: min pairing >= -tolerance
  std::uint64_t seed = 11;
};

using GradMap =
    std::function<Eigen::VectorXd(const Eigen::VectorXd&, const EmpiricalMeasure&)>;

// Displacement pairing of terminal-type data:
//   mean_i [grad(xi1_i, L_xi1) - grad(xi2_i, L_xi2)] . (xi1_i - xi2_i)
double displacement_pairing_G(const GradMap& grad, const Eigen::MatrixXd& xi1,
                              const Eigen::MatrixXd& xi2);

// Two-term pairing of Hamiltonian-type data over coupled (xi, p) samples.
double displacement_pairing_H(const VecFn& h_dx, const VecFn& h_dp, const Eigen::MatrixXd& xi1,
                              const Eigen::MatrixXd& xi2, const Eigen::MatrixXd& p1,
                              const Eigen::MatrixXd& p2);

// Randomized + adversarial search for pairing violations. Couplings drawn
// independent, optimally paired, and by local descent around the worst pair.
MonotonicityReport check_dm_G(const GradMap& grad, int dim, const MonotoneCheckConfig& cfg,
                              int trials);
MonotonicityReport check_dm_H(const VecFn& h_dx, const VecFn& h_dp, int dim,
                              const MonotoneCheckConfig& cfg, int trials);

// Empirical form of the second-order sufficient inequality: reports the
// minimum slack of
//   -(1/4) E~E |(h_dpp)^{-1/2} h_dpmu eta~|^2  -  [xmu + xx quadratic form].
// Informational: strictly stronger than the first-order pairing condition.
struct SecondOrderReport {
  int trials = 0;
  double min_slack = 0.0;
  bool nonnegative = false;
};
SecondOrderReport check_second_order_H(const ModelSpec& model, const MonotoneCheckConfig& cfg,
                                       int trials);

// Pairing check applied to the solved master gradient at time t. At t == T
// this reduces to check_dm_G on the model's terminal data (identical reports
// under identical seeds). Pass threshold is relaxed to the Monte-Carlo scale.
MonotonicityReport check_field_dm(const MasterSolution& sol, double t,
                                  const MonotoneCheckConfig& cfg, int trials);

// Families of measure perturbations with computable W1/W2 distances.
enum class BumpKind { translate_all, shift_one_atom, dirac_shift };
struct LipschitzEstimate {
  double constant = 0.0;  // max |dxV(mu) - dxV(mu')| / W(mu, mu')
  int pairs = 0;
};
LipschitzEstimate estimate_measure_lipschitz(const MasterSolution& sol, double t, int metric_q,
                                             BumpKind kind, int pairs,
                                             const std::vector<Eigen::VectorXd>& x_probes,
                                             std::uint64_t seed = 5);

}  // namespace mfg
