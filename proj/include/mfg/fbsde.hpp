#pragma once

#include <Eigen/Dense>
#include <memory>
#include <optional>
#include <stdexcept>
#include <vector>

#include "mfg/field.hpp"
#include "mfg/measure.hpp"
#include "mfg/model.hpp"
#include "mfg/time_grid.hpp"

namespace mfg {

// One common-noise path with its simulated particle system: trajectories
// X, co-states Y read from the field, and per-node measure snapshots.
struct ScenarioFlow {
  int scenario = 0;
  std::vector<Eigen::MatrixXd> X;  // per node: N x d
  std::vector<Eigen::MatrixXd> Y;
  std::vector<EmpiricalMeasure> rho;
  std::optional<std::vector<Eigen::MatrixXd>> Z0;  // diagnostic only
};

struct PicardParams {
  int particles = 2048;   // N
  int scenarios = 64;     // M; a zero-noise model always runs 1
  int grid_pts = 65;
  double tol = 1e-5;
  int max_iter = 60;
  double damping = 1.0;   // blend factor, auto-halved on distance increase
  double box_lo = -6.0;
  double box_hi = 6.0;
  double guard_factor = 2.0;  // hard error beyond guard_factor * box
  bool antithetic = true;
  std::uint64_t seed = 1;
};

struct PicardDiagnostics {
  std::vector<double> distances;  // sup-norm change per iteration (pre-damping)
  std::vector<double> ratios;     // distances[i] / distances[i-1]
  int iterations = 0;
  bool converged = false;
  double final_damping = 1.0;
};

class SolveFailure : public std::runtime_error {
 public:
  enum class Kind { non_contraction, box_escape };
  SolveFailure(Kind k, double t0, double t1, const std::string& msg)
      : std::runtime_error(msg), kind(k), t0(t0), t1(t1) {}
  Kind kind;
  double t0, t1;
};

// Terminal gradient data for one interval. The plain version evaluates
// d_x G; stitched solves plug in the next interval's solution. prepare() is
// called once per Picard iteration with the scenarios' terminal measures.
class TerminalCondition {
 public:
  virtual ~TerminalCondition() = default;
  virtual void prepare(const std::vector<ScenarioFlow>& flows) = 0;
  virtual Eigen::VectorXd grad(int scenario, const Eigen::VectorXd& x) const = 0;
  virtual double value(int scenario, const Eigen::VectorXd& x) const = 0;
  // Monte-Carlo standard error of grad (zero for exact terminal data)
  virtual Eigen::VectorXd grad_stderr(int scenario, const Eigen::VectorXd& x) const;
  virtual bool is_exact_terminal() const { return true; }
};

class GTerminal : public TerminalCondition {
 public:
  explicit GTerminal(std::shared_ptr<const ModelSpec> model) : model_(std::move(model)) {}
  void prepare(const std::vector<ScenarioFlow>& flows) override;
  Eigen::VectorXd grad(int scenario, const Eigen::VectorXd& x) const override;
  double value(int scenario, const Eigen::VectorXd& x) const override;

 private:
  std::shared_ptr<const ModelSpec> model_;
  std::vector<const EmpiricalMeasure*> rho_T_;
};

// A converged short-interval solve: the decoupling-field iterate, the base
// flows under it, and everything needed to evaluate along it.
struct IntervalSolve {
  std::shared_ptr<const ModelSpec> model;
  TimeGrid grid;
  PicardParams params;
  EmpiricalMeasure mu0;  // initial particles actually used (N atoms)
  std::shared_ptr<NoiseBundle> noise;
  DecouplingField field;
  GridInterpolant field_deriv;          // spatial derivative view of `field`
  std::vector<ScenarioFlow> flows;      // under the converged field
  std::shared_ptr<TerminalCondition> terminal;
  PicardDiagnostics diag;
  // per-scenario field values at the initial node (queries x d) and the
  // propagated Monte-Carlo standard error of their scenario average
  Eigen::MatrixXd initial_by_scenario;  // (M*queries) x d stacked per scenario
  Eigen::MatrixXd initial_stderr;       // queries x d
  GridInterpolant stderr_field;         // interpolant over initial_stderr

  IntervalSolve(std::shared_ptr<const ModelSpec> m, const TimeGrid& g, const PicardParams& p,
                EmpiricalMeasure m0)
      : model(std::move(m)), grid(g), params(p), mu0(std::move(m0)) {}
};

using IntervalSolvePtr = std::shared_ptr<const IntervalSolve>;

// Euler-Maruyama forward pass: X_{k+1} = X_k - h_dp(X_k, rho_k, field(t_k, X_k)) dt
// + beta dB0_k, the same increment for every particle of a scenario. Initial
// atoms are shared across scenarios; Y is filled from the field.
std::vector<ScenarioFlow> simulate_forward(const ModelSpec& model, const DecouplingField& field,
                                           const EmpiricalMeasure& mu0, const TimeGrid& grid,
                                           const NoiseBundle& noise);

// Expectation-form backward sweep. For every time node k and grid query x a
// drift-system characteristic is restarted at (t_k, x) under each scenario's
// noise and measure flow; the returned node values are the Monte-Carlo
// averages over scenarios of
//     terminal_grad(X_T) - sum_{j>=k} h_dx(X_j, rho_j, Y_j) dt,
// with Y read along the characteristic from the current field iterate (the
// martingale integrand has zero mean and drops out of the average).
std::vector<Eigen::MatrixXd> backward_expectation_update(
    const ModelSpec& model, const std::vector<ScenarioFlow>& flows, const DecouplingField& field,
    const TimeGrid& grid, const NoiseBundle& noise, const TerminalCondition& terminal,
    const PicardParams& params);

// Picard iteration for the decoupling field on one short interval.
// Throws SolveFailure when iterate distances stop contracting (the horizon
// is too long: shrink the interval) or when characteristics leave the guard box.
IntervalSolvePtr picard_solve(std::shared_ptr<const ModelSpec> model, const EmpiricalMeasure& mu0,
                              const TimeGrid& grid, const PicardParams& params,
                              std::shared_ptr<TerminalCondition> terminal = nullptr);

// ---- linearized systems along a converged interval solve ----
// These need exact second derivatives of the terminal datum and therefore
// require the solve's terminal condition to be the model's G.

// The drift-system characteristic started at x0 at the initial node,
// with co-states read from the converged field.
struct CharPath {
  std::vector<Eigen::VectorXd> X, Y;
};
CharPath simulate_characteristic(const IntervalSolve& solve, int scenario,
                                 const Eigen::VectorXd& x0);

// State and co-state directional derivatives along one characteristic
// (the response of the characteristic to shifting its start along axis k).
struct LinearResponse {
  std::vector<Eigen::VectorXd> state, costate;  // per node, dimension d
};
LinearResponse solve_linearized_state(const IntervalSolve& solve, int scenario,
                                      const CharPath& base, int axis);

// Per-particle response of the population to a unit displacement of an
// infinitesimal mass at the characteristic's start (McKean-Vlasov
// linearization). state[k], costate[k] are N x d.
struct PopulationResponse {
  std::vector<Eigen::MatrixXd> state, costate;
};
PopulationResponse solve_linearized_mkv(const IntervalSolve& solve, int scenario,
                                        const CharPath& char_path, const LinearResponse& char_resp,
                                        int axis);

// Mixed derivative of the master gradient: per-unit-mass response of
// dxV(t0, x, mu) to displacing an atom at x_tilde along axis k. Solved in
// expectation form along noise-only state paths, with the field's spatial
// derivative supplying the gradient-advection coefficient.
Eigen::VectorXd solve_nabla_mu(const IntervalSolve& solve, const Eigen::VectorXd& x,
                               const Eigen::VectorXd& x_tilde, int axis);

// Same derivative via the coupled discrete-measure systems (all atom-pair
// responses solved jointly); valid when mu0 has at most 8 atoms. An
// independent second representation used for cross-validation.
Eigen::VectorXd solve_discrete_nabla_mu(const IntervalSolve& solve, const Eigen::VectorXd& x,
                                        int atom_index, int axis);

// Gradient at (t0, x) recomputed along noise-only paths (no drift), using
// the corrected backward driver h_dx + (dxx V) h_dp with dxx V read from the
// field's derivative view. Cross-validates the characteristic-based field.
Eigen::VectorXd eval_dxV_driftless_route(const IntervalSolve& solve, const Eigen::VectorXd& x);

}  // namespace mfg
