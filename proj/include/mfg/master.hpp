#pragma once

#include <Eigen/Dense>
#include <filesystem>
#include <map>
#include <memory>
#include <mutex>
#include <vector>

#include <json.hpp>

#include "mfg/fbsde.hpp"

namespace mfg {

struct MasterParams {
  PicardParams picard;
  double dt = 1e-2;
  double interval_len = 0.25;
  double min_interval_len = 0.03125;  // halving floor before giving up
  int child_scenario_divisor = 16;    // scenario budget decay down the stitching tree
  int cache_quantize_n = 4096;        // measure-cache quantization resolution
  // resolution of terminal-closure solves below the top level (0 = inherit).
  // Their values only enter through scenario averages, so reduced budgets
  // trade Monte-Carlo spread (visible in the reported standard error) for time.
  int child_particles = 0;
  int child_grid_pts = 0;
};

class GlobalSolveError : public std::runtime_error {
 public:
  GlobalSolveError(double t0, double t1, const std::string& msg)
      : std::runtime_error(msg), t0(t0), t1(t1) {}
  double t0, t1;
};

struct EvalDetail {
  Eigen::VectorXd value;
  Eigen::VectorXd stderr_mc;  // propagated Monte-Carlo standard error
  int scenarios = 0;
};

struct ConsistencyRow {
  Eigen::VectorXd x;
  double discrepancy = 0.0;  // |scenario average of (fresh - stored)|
  double sigma = 0.0;        // scenario spread of (fresh - stored)
};

struct DecouplingConsistencyReport {
  double t_check = 0.0;
  double max_discrepancy = 0.0;
  double max_sigma = 0.0;
  double mc_bound = 0.0;  // 3 * max sigma / sqrt(M)
  int scenarios = 0;
  std::vector<ConsistencyRow> rows;
  nlohmann::json to_json() const;
};

// Global-horizon solution: a ladder of short intervals covered back-to-front,
// each interval's terminal gradient data evaluated lazily by solving the next
// interval from the measure reached at the boundary. Interval solves are
// memoized on (interval, scenario budget, quantized initial measure).
// Evaluations are pure; the memo cache accepts concurrent readers.
class MasterSolution {
 public:
  MasterSolution(std::shared_ptr<const ModelSpec> model, MasterParams params,
                 EmpiricalMeasure mu0);

  // Solves the chain from (0, mu0). Throws GlobalSolveError if some stretch
  // refuses to contract even at the minimum interval length.
  void solve();

  const ModelSpec& model() const { return *model_; }
  const MasterParams& params() const { return params_; }
  double horizon() const { return model_->horizon; }
  const std::vector<IntervalSolvePtr>& chain() const { return chain_; }
  const std::vector<double>& chain_residuals() const { return chain_residuals_; }

  // gradient of the master field at (t, x, mu)
  Eigen::VectorXd eval_dxV(double t, const Eigen::VectorXd& x, const EmpiricalMeasure& mu) const;
  EvalDetail eval_dxV_detailed(double t, const Eigen::VectorXd& x, const EmpiricalMeasure& mu) const;

  // value of the master field, by integrating the Hamiltonian along
  // noise-only state paths under the solved gradient field
  double eval_V(double t, const Eigen::VectorXd& x, const EmpiricalMeasure& mu) const;

  // mixed derivative d_mu d_x V(t, x, mu, x_tilde) . e_axis, per unit mass.
  // Requires T - t within the final interval (the linearized systems need
  // exact terminal second derivatives). discrete_route uses the coupled
  // atom-pair systems and requires x_tilde to be an atom of mu.
  Eigen::VectorXd eval_dxmuV(double t, const Eigen::VectorXd& x, const EmpiricalMeasure& mu,
                             const Eigen::VectorXd& x_tilde, int axis,
                             bool discrete_route = false) const;

  // gradient recomputed along noise-only paths (cross-validation route)
  Eigen::VectorXd eval_dxV_alt_route(double t, const Eigen::VectorXd& x,
                                     const EmpiricalMeasure& mu) const;

  // extremes of the second difference quotient of V over probes and axes
  std::pair<double, double> estimate_second_diff(double t, const EmpiricalMeasure& mu,
                                                 const std::vector<Eigen::VectorXd>& probes,
                                                 double h) const;

  // compares fresh evaluations at the chain's scenario measures against the
  // field stored along the chain at t_check (scenario-averaged, with the
  // scenario spread reported as the Monte-Carlo error bar)
  DecouplingConsistencyReport decoupling_consistency(double t_check,
                                                     const std::vector<Eigen::VectorXd>& probes) const;

  // diagnostic reconstruction of the martingale integrand from field
  // derivatives: beta * (dxx V + mean-field average of dxmu V)
  Eigen::MatrixXd z0_reconstruct(double t, const Eigen::VectorXd& x, const EmpiricalMeasure& mu,
                                 int atom_subsample = 8) const;

  // cached interval solve on [t, next boundary] from mu; depth counts
  // stitching generations (scenario budget decays with it)
  IntervalSolvePtr solve_for(double t, const EmpiricalMeasure& mu, int depth = 0) const;

  double right_boundary(double t) const;
  int scenarios_at_depth(int depth) const;

  // smallest left endpoint among successfully solved intervals; after a
  // failed solve() this floor marks how far back coverage reached before the
  // data stopped cooperating
  double coverage_floor() const;

  nlohmann::json manifest() const;
  void persist(const std::filesystem::path& dir, bool write_flows) const;

 private:
  struct CacheKey {
    std::int64_t t0_bits, t1_bits;
    int scenarios;
    int particles;
    int grid_pts;
    std::uint64_t mu_hash;
    bool operator<(const CacheKey& o) const {
      return std::tie(t0_bits, t1_bits, scenarios, particles, grid_pts, mu_hash) <
             std::tie(o.t0_bits, o.t1_bits, o.scenarios, o.particles, o.grid_pts, o.mu_hash);
    }
  };

  double eval_V_impl(double t, const Eigen::VectorXd& x, const EmpiricalMeasure& mu,
                     int depth) const;

  std::shared_ptr<const ModelSpec> model_;
  MasterParams params_;
  EmpiricalMeasure mu0_;
  std::vector<IntervalSolvePtr> chain_;
  std::vector<double> chain_residuals_;
  mutable std::map<CacheKey, IntervalSolvePtr> cache_;
  mutable std::unique_ptr<std::recursive_mutex> mutex_ =
      std::make_unique<std::recursive_mutex>();

  friend class StitchedTerminal;
};

MasterSolution global_solve(std::shared_ptr<const ModelSpec> model, const MasterParams& params,
                            const EmpiricalMeasure& mu0);

}  // namespace mfg
