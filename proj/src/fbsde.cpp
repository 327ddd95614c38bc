#include "mfg/fbsde.hpp"

#include <cmath>
#include <sstream>

#include "mfg/parallel.hpp"

namespace mfg {

Eigen::VectorXd TerminalCondition::grad_stderr(int, const Eigen::VectorXd& x) const {
  return Eigen::VectorXd::Zero(x.size());
}

void GTerminal::prepare(const std::vector<ScenarioFlow>& flows) {
  rho_T_.clear();
  rho_T_.reserve(flows.size());
  for (const auto& f : flows) rho_T_.push_back(&f.rho.back());
}

Eigen::VectorXd GTerminal::grad(int scenario, const Eigen::VectorXd& x) const {
  return model_->g_dx(x, *rho_T_[scenario]);
}

double GTerminal::value(int scenario, const Eigen::VectorXd& x) const {
  return model_->terminal(x, *rho_T_[scenario]);
}

namespace {

void check_guard(const GridSpec& spec, const Eigen::VectorXd& x, double factor, const TimeGrid& g) {
  if (!spec.within_guard(x, factor)) {
    std::ostringstream msg;
    msg << "state escaped the extrapolation guard box on [" << g.t0 << ", " << g.t1
        << "] (enlarge the query box)";
    throw SolveFailure(SolveFailure::Kind::box_escape, g.t0, g.t1, msg.str());
  }
}

GridSpec make_grid_spec(const ModelSpec& model, const PicardParams& p) {
  return GridSpec::cube(model.dim, p.box_lo, p.box_hi, p.grid_pts);
}

}  // namespace

std::vector<ScenarioFlow> simulate_forward(const ModelSpec& model, const DecouplingField& field,
                                           const EmpiricalMeasure& mu0, const TimeGrid& grid,
                                           const NoiseBundle& noise) {
  const int M = noise.scenarios();
  const int S = grid.steps;
  const int N = mu0.size();
  const int d = model.dim;
  const double dt = grid.dt();
  const double beta = model.beta;
  const GridSpec& spec = field.spec();

  std::vector<ScenarioFlow> flows(M);
  parallel_for(M, [&](int m) {
    ScenarioFlow& f = flows[m];
    f.scenario = m;
    f.X.assign(S + 1, Eigen::MatrixXd(N, d));
    f.Y.assign(S + 1, Eigen::MatrixXd(N, d));
    f.rho.reserve(S + 1);
    f.X[0] = mu0.points();
    Eigen::VectorXd x(d), y(d);
    for (int k = 0; k <= S; ++k) {
      f.rho.emplace_back(f.X[k], mu0.weights());
      const EmpiricalMeasure& rho = f.rho[k];
      for (int i = 0; i < N; ++i) {
        x = f.X[k].row(i).transpose();
        check_guard(spec, x, 2.0, grid);
        field.eval(k, x, y);
        f.Y[k].row(i) = y.transpose();
        if (k < S) {
          Eigen::VectorXd drift = model.h_dp(x, rho, y);
          f.X[k + 1].row(i) = f.X[k].row(i) - dt * drift.transpose();
          if (beta != 0.0) f.X[k + 1].row(i) += beta * noise.increments(m).row(k);
        }
      }
    }
  });
  return flows;
}

std::vector<Eigen::MatrixXd> backward_expectation_update(
    const ModelSpec& model, const std::vector<ScenarioFlow>& flows, const DecouplingField& field,
    const TimeGrid& grid, const NoiseBundle& noise, const TerminalCondition& terminal,
    const PicardParams& params) {
  const int M = static_cast<int>(flows.size());
  const int S = grid.steps;
  const int d = model.dim;
  const double dt = grid.dt();
  const double beta = model.beta;
  const GridSpec& spec = field.spec();
  const int G = spec.total();

  Eigen::MatrixXd queries(G, d);
  for (int g = 0; g < G; ++g) queries.row(g) = spec.node_coord(g).transpose();

  // per-scenario contributions, reduced serially afterwards
  std::vector<std::vector<Eigen::MatrixXd>> contrib(
      M, std::vector<Eigen::MatrixXd>(S + 1, Eigen::MatrixXd::Zero(G, d)));

  parallel_for(M, [&](int m) {
    const ScenarioFlow& f = flows[m];
    Eigen::MatrixXd states(G, d), acc(G, d);
    Eigen::VectorXd x(d), y(d);
    for (int k0 = 0; k0 <= S; ++k0) {
      states = queries;
      acc.setZero();
      for (int j = k0; j < S; ++j) {
        const EmpiricalMeasure& rho = f.rho[j];
        for (int g = 0; g < G; ++g) {
          x = states.row(g).transpose();
          check_guard(spec, x, params.guard_factor, grid);
          field.eval(j, x, y);
          acc.row(g) += dt * model.h_dx(x, rho, y).transpose();
          states.row(g) -= dt * model.h_dp(x, rho, y).transpose();
        }
        if (beta != 0.0) states.rowwise() += beta * noise.increments(m).row(j);
      }
      for (int g = 0; g < G; ++g) {
        x = states.row(g).transpose();
        check_guard(spec, x, params.guard_factor, grid);
        contrib[m][k0].row(g) = terminal.grad(m, x).transpose() - acc.row(g);
      }
    }
  });

  std::vector<Eigen::MatrixXd> out(S + 1, Eigen::MatrixXd::Zero(G, d));
  for (int m = 0; m < M; ++m)
    for (int k = 0; k <= S; ++k) out[k] += contrib[m][k] / static_cast<double>(M);
  return out;
}

IntervalSolvePtr picard_solve(std::shared_ptr<const ModelSpec> model, const EmpiricalMeasure& mu0,
                              const TimeGrid& grid, const PicardParams& params,
                              std::shared_ptr<TerminalCondition> terminal) {
  PicardParams p = params;
  if (model->beta == 0.0) p.scenarios = 1;  // all scenarios coincide without noise
  if (!terminal) terminal = std::make_shared<GTerminal>(model);

  EmpiricalMeasure atoms =
      (mu0.size() == p.particles) ? mu0 : resample(mu0, p.particles, derive_seed(p.seed, 0xA7));
  auto solve = std::make_shared<IntervalSolve>(model, grid, p, std::move(atoms));
  solve->noise = std::make_shared<NoiseBundle>(p.scenarios, grid.steps, model->dim, grid.dt(),
                                               derive_seed(p.seed, 0xB3), p.antithetic);
  solve->terminal = terminal;

  GridSpec spec = make_grid_spec(*model, p);
  DecouplingField field(spec, grid.nodes(), model->dim);
  PicardDiagnostics diag;
  double lambda = p.damping;
  bool converged = false;

  for (int it = 0; it < p.max_iter; ++it) {
    auto flows = simulate_forward(*model, field, solve->mu0, grid, *solve->noise);
    terminal->prepare(flows);
    auto update = backward_expectation_update(*model, flows, field, grid, *solve->noise,
                                              *terminal, p);

    double dist = 0.0;
    for (int k = 0; k < grid.nodes(); ++k)
      dist = std::max(dist, (update[k] - field.node_values(k)).cwiseAbs().maxCoeff());
    if (!std::isfinite(dist) || dist > 1e12)
      throw SolveFailure(SolveFailure::Kind::non_contraction, grid.t0, grid.t1,
                         "Picard iterates blew up; shrink the time interval");

    if (!diag.distances.empty()) {
      double prev = diag.distances.back();
      diag.ratios.push_back(dist / std::max(prev, 1e-300));
      if (dist > prev) lambda = std::max(0.0625, lambda * 0.5);
    }
    diag.distances.push_back(dist);
    diag.iterations = it + 1;

    size_t nr = diag.ratios.size();
    if (nr >= 3 && dist > 10.0 * p.tol && diag.ratios[nr - 1] >= 0.999 &&
        diag.ratios[nr - 2] >= 0.999 && diag.ratios[nr - 3] >= 0.999)
      throw SolveFailure(SolveFailure::Kind::non_contraction, grid.t0, grid.t1,
                         "Picard iteration stopped contracting; the horizon exceeds the "
                         "contraction threshold, shrink the time interval");

    for (int k = 0; k < grid.nodes(); ++k)
      field.node_values(k) = (1.0 - lambda) * field.node_values(k) + lambda * update[k];

    if (dist <= p.tol) {
      converged = true;
      break;
    }
  }
  diag.final_damping = lambda;
  diag.converged = converged;
  if (!converged)
    throw SolveFailure(SolveFailure::Kind::non_contraction, grid.t0, grid.t1,
                       "Picard iteration did not reach tolerance within max_iter; "
                       "shrink the time interval");

  // flows consistent with the converged field, then the scenario-resolved
  // initial-node pass for the Monte-Carlo error bookkeeping
  solve->flows = simulate_forward(*model, field, solve->mu0, grid, *solve->noise);
  terminal->prepare(solve->flows);

  const int M = p.scenarios, S = grid.steps, d = model->dim, G = spec.total();
  const double dt = grid.dt();
  Eigen::MatrixXd by_scenario(M * G, d);
  Eigen::MatrixXd child_var = Eigen::MatrixXd::Zero(G, d);
  parallel_for(M, [&](int m) {
    const ScenarioFlow& f = solve->flows[m];
    Eigen::VectorXd x(d), y(d);
    for (int g = 0; g < G; ++g) {
      Eigen::VectorXd state = spec.node_coord(g);
      Eigen::VectorXd acc = Eigen::VectorXd::Zero(d);
      for (int j = 0; j < S; ++j) {
        field.eval(j, state, y);
        acc += dt * model->h_dx(state, f.rho[j], y);
        state -= dt * model->h_dp(state, f.rho[j], y);
        if (model->beta != 0.0)
          state += model->beta * solve->noise->increments(m).row(j).transpose();
      }
      by_scenario.row(m * G + g) = (terminal->grad(m, state) - acc).transpose();
      Eigen::VectorXd se = terminal->grad_stderr(m, state);
      child_var.row(g) += se.array().square().matrix().transpose();
    }
  });

  // scenario-spread variance of the mean (antithetic pairs averaged first)
  Eigen::MatrixXd mean = Eigen::MatrixXd::Zero(G, d);
  for (int m = 0; m < M; ++m) mean += by_scenario.middleRows(m * G, G) / double(M);
  Eigen::MatrixXd var1 = Eigen::MatrixXd::Zero(G, d);
  if (p.antithetic && M % 2 == 0 && M >= 2) {
    int P = M / 2;
    for (int pr = 0; pr < P; ++pr) {
      Eigen::MatrixXd pm = 0.5 * (by_scenario.middleRows(2 * pr * G, G) +
                                  by_scenario.middleRows((2 * pr + 1) * G, G));
      var1 += (pm - mean).array().square().matrix();
    }
    var1 /= double(P) * std::max(1, P - 1);
  } else if (M >= 2) {
    for (int m = 0; m < M; ++m)
      var1 += (by_scenario.middleRows(m * G, G) - mean).array().square().matrix();
    var1 /= double(M) * (M - 1);
  }
  solve->initial_by_scenario = std::move(by_scenario);
  solve->initial_stderr = (var1 + child_var / double(M) / double(M)).cwiseSqrt();
  solve->stderr_field = GridInterpolant(spec, 1, d);
  solve->stderr_field.node_values(0) = solve->initial_stderr;

  solve->field = std::move(field);
  solve->field_deriv = spatial_derivative(solve->field);
  solve->diag = std::move(diag);
  return solve;
}

Eigen::VectorXd eval_dxV_driftless_route(const IntervalSolve& solve, const Eigen::VectorXd& x) {
  const ModelSpec& model = *solve.model;
  const int M = static_cast<int>(solve.flows.size());
  const int S = solve.grid.steps;
  const int d = model.dim;
  const double dt = solve.grid.dt();
  Eigen::VectorXd avg = Eigen::VectorXd::Zero(d);
  for (int m = 0; m < M; ++m) {
    const ScenarioFlow& f = solve.flows[m];
    // noise-only state path
    std::vector<Eigen::VectorXd> path(S + 1, x);
    for (int j = 0; j < S; ++j) {
      path[j + 1] = path[j];
      if (model.beta != 0.0)
        path[j + 1] += model.beta * solve.noise->increments(m).row(j).transpose();
    }
    Eigen::VectorXd w = solve.terminal->grad(m, path[S]);
    for (int j = S - 1; j >= 0; --j) {
      Eigen::MatrixXd D = eval_derivative_matrix(solve.field_deriv, j, path[j], d);
      w -= dt * (model.h_dx(path[j], f.rho[j], w) + D * model.h_dp(path[j], f.rho[j], w));
    }
    avg += w / double(M);
  }
  return avg;
}

}  // namespace mfg
