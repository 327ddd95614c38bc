#include <cmath>

#include "mfg/fbsde.hpp"

namespace mfg {

namespace {

void require_exact_terminal(const IntervalSolve& solve, const char* op) {
  if (!solve.terminal->is_exact_terminal())
    throw std::invalid_argument(std::string(op) +
                                ": requires an interval whose terminal datum is the model's G "
                                "(second derivatives of stitched closures are not available); "
                                "evaluate within the final time interval");
}

void check_linear_convergence(std::vector<double>& dists, double dist, const TimeGrid& g) {
  dists.push_back(dist);
  size_t n = dists.size();
  if (n >= 4 && dists[n - 1] >= dists[n - 2] && dists[n - 2] >= dists[n - 3] &&
      dists[n - 3] >= dists[n - 4] && dist > 1e-9)
    throw SolveFailure(SolveFailure::Kind::non_contraction, g.t0, g.t1,
                       "linearized system sub-iteration stopped contracting; "
                       "shrink the time interval");
}

}  // namespace

CharPath simulate_characteristic(const IntervalSolve& solve, int scenario,
                                 const Eigen::VectorXd& x0) {
  const ModelSpec& model = *solve.model;
  const ScenarioFlow& f = solve.flows[scenario];
  const int S = solve.grid.steps;
  const double dt = solve.grid.dt();
  CharPath path;
  path.X.assign(S + 1, x0);
  path.Y.assign(S + 1, Eigen::VectorXd::Zero(model.dim));
  for (int j = 0; j <= S; ++j) {
    if (j < S) {
      path.Y[j] = solve.field.eval(j, path.X[j]);
      path.X[j + 1] = path.X[j] - dt * model.h_dp(path.X[j], f.rho[j], path.Y[j]);
      if (model.beta != 0.0)
        path.X[j + 1] += model.beta * solve.noise->increments(scenario).row(j).transpose();
    } else {
      path.Y[j] = solve.terminal->grad(scenario, path.X[j]);
    }
  }
  return path;
}

LinearResponse solve_linearized_state(const IntervalSolve& solve, int scenario,
                                      const CharPath& base, int axis) {
  require_exact_terminal(solve, "solve_linearized_state");
  const ModelSpec& model = *solve.model;
  const ScenarioFlow& f = solve.flows[scenario];
  const int S = solve.grid.steps;
  const int d = model.dim;
  const double dt = solve.grid.dt();

  // frozen coefficients along the characteristic
  std::vector<Eigen::MatrixXd> Axp(S), App(S), Axx(S);
  for (int j = 0; j < S; ++j) {
    Axp[j] = model.h_dxp(base.X[j], f.rho[j], base.Y[j]);
    App[j] = model.h_dpp(base.X[j], f.rho[j], base.Y[j]);
    Axx[j] = model.h_dxx(base.X[j], f.rho[j], base.Y[j]);
  }
  Eigen::MatrixXd Gxx = model.g_dxx(base.X[S], f.rho[S]);

  LinearResponse r;
  r.state.assign(S + 1, Eigen::VectorXd::Zero(d));
  r.costate.assign(S + 1, Eigen::VectorXd::Zero(d));
  std::vector<double> dists;
  for (int it = 0; it < 80; ++it) {
    // forward with the current costate trajectory
    r.state[0] = Eigen::VectorXd::Unit(d, axis);
    for (int j = 0; j < S; ++j)
      r.state[j + 1] =
          r.state[j] - dt * (Axp[j].transpose() * r.state[j] + App[j].transpose() * r.costate[j]);
    // backward
    std::vector<Eigen::VectorXd> eta(S + 1);
    eta[S] = Gxx * r.state[S];
    for (int j = S - 1; j >= 0; --j)
      eta[j] = eta[j + 1] - dt * (Axx[j] * r.state[j] + Axp[j] * eta[j + 1]);

    double dist = 0.0;
    for (int j = 0; j <= S; ++j) dist = std::max(dist, (eta[j] - r.costate[j]).cwiseAbs().maxCoeff());
    r.costate = std::move(eta);
    if (dist <= 1e-12) return r;
    check_linear_convergence(dists, dist, solve.grid);
  }
  throw SolveFailure(SolveFailure::Kind::non_contraction, solve.grid.t0, solve.grid.t1,
                     "linearized state system did not converge");
}

PopulationResponse solve_linearized_mkv(const IntervalSolve& solve, int scenario,
                                        const CharPath& char_path, const LinearResponse& char_resp,
                                        int axis) {
  (void)axis;
  require_exact_terminal(solve, "solve_linearized_mkv");
  const ModelSpec& model = *solve.model;
  const ScenarioFlow& f = solve.flows[scenario];
  const int S = solve.grid.steps;
  const int d = model.dim;
  const int N = solve.mu0.size();
  const double dt = solve.grid.dt();
  const Eigen::VectorXd& w = solve.mu0.weights();

  // per-particle frozen coefficients and the charted-atom kernels
  std::vector<std::vector<Eigen::MatrixXd>> Axp(S), App(S), Axx(S), Kp(S), Kx(S);
  for (int j = 0; j < S; ++j) {
    Axp[j].resize(N);
    App[j].resize(N);
    Axx[j].resize(N);
    Kp[j].resize(N);
    Kx[j].resize(N);
    for (int i = 0; i < N; ++i) {
      Eigen::VectorXd xi = f.X[j].row(i).transpose();
      Eigen::VectorXd yi = f.Y[j].row(i).transpose();
      Axp[j][i] = model.h_dxp(xi, f.rho[j], yi);
      App[j][i] = model.h_dpp(xi, f.rho[j], yi);
      Axx[j][i] = model.h_dxx(xi, f.rho[j], yi);
      Kp[j][i] = model.h_dpmu(xi, f.rho[j], char_path.X[j], yi);
      Kx[j][i] = model.h_dxmu(xi, f.rho[j], char_path.X[j], yi);
    }
  }
  std::vector<Eigen::MatrixXd> Gxx(N), Gxm_char(N);
  for (int i = 0; i < N; ++i) {
    Eigen::VectorXd xi = f.X[S].row(i).transpose();
    Gxx[i] = model.g_dxx(xi, f.rho[S]);
    Gxm_char[i] = model.g_dxmu(xi, f.rho[S], char_path.X[S]);
  }

  PopulationResponse r;
  r.state.assign(S + 1, Eigen::MatrixXd::Zero(N, d));
  r.costate.assign(S + 1, Eigen::MatrixXd::Zero(N, d));

  std::vector<double> dists;
  for (int it = 0; it < 80; ++it) {
    // forward sweep; the population response starts at zero
    r.state[0].setZero();
    for (int j = 0; j < S; ++j) {
      for (int i = 0; i < N; ++i) {
        Eigen::VectorXd xi = f.X[j].row(i).transpose();
        Eigen::VectorXd yi = f.Y[j].row(i).transpose();
        Eigen::VectorXd pair = Eigen::VectorXd::Zero(d);
        for (int l = 0; l < N; ++l)
          pair += w[l] * (model.h_dpmu(xi, f.rho[j], f.X[j].row(l).transpose(), yi) *
                          r.state[j].row(l).transpose());
        r.state[j + 1].row(i) =
            r.state[j].row(i) -
            dt * (Axp[j][i].transpose() * r.state[j].row(i).transpose() +
                  App[j][i].transpose() * r.costate[j].row(i).transpose() +
                  Kp[j][i] * char_resp.state[j] + pair)
                     .transpose();
      }
    }
    // backward sweep
    std::vector<Eigen::MatrixXd> eta(S + 1, Eigen::MatrixXd(N, d));
    for (int i = 0; i < N; ++i) {
      Eigen::VectorXd xi = f.X[S].row(i).transpose();
      Eigen::VectorXd mix = Gxm_char[i] * char_resp.state[S];
      for (int l = 0; l < N; ++l)
        mix += w[l] * (model.g_dxmu(xi, f.rho[S], f.X[S].row(l).transpose()) *
                       r.state[S].row(l).transpose());
      eta[S].row(i) = (Gxx[i] * r.state[S].row(i).transpose() + mix).transpose();
    }
    for (int j = S - 1; j >= 0; --j) {
      for (int i = 0; i < N; ++i) {
        Eigen::VectorXd xi = f.X[j].row(i).transpose();
        Eigen::VectorXd yi = f.Y[j].row(i).transpose();
        Eigen::VectorXd pair = Eigen::VectorXd::Zero(d);
        for (int l = 0; l < N; ++l)
          pair += w[l] * (model.h_dxmu(xi, f.rho[j], f.X[j].row(l).transpose(), yi) *
                          r.state[j].row(l).transpose());
        eta[j].row(i) = eta[j + 1].row(i) -
                        dt * (Axx[j][i] * r.state[j].row(i).transpose() +
                              Axp[j][i] * eta[j + 1].row(i).transpose() +
                              Kx[j][i] * char_resp.state[j] + pair)
                                 .transpose();
      }
    }

    double dist = 0.0;
    for (int j = 0; j <= S; ++j)
      dist = std::max(dist, (eta[j] - r.costate[j]).cwiseAbs().maxCoeff());
    r.costate = std::move(eta);
    if (dist <= 1e-12) return r;
    check_linear_convergence(dists, dist, solve.grid);
  }
  throw SolveFailure(SolveFailure::Kind::non_contraction, solve.grid.t0, solve.grid.t1,
                     "linearized population system did not converge");
}

namespace {

// backward pass shared by both mixed-derivative representations: integrates
// the output equation along the noise-only path from x, with source kernels
// supplied per node through `source`.
Eigen::VectorXd nabla_mu_output_pass(
    const IntervalSolve& solve, int scenario, const Eigen::VectorXd& x,
    const std::function<void(int node, const Eigen::VectorXd& xq, const Eigen::VectorXd& yq,
                             Eigen::VectorXd& g_x, Eigen::VectorXd& g_p)>& source,
    const std::function<Eigen::VectorXd(const Eigen::VectorXd& xq)>& terminal_source) {
  const ModelSpec& model = *solve.model;
  const ScenarioFlow& f = solve.flows[scenario];
  const int S = solve.grid.steps;
  const int d = model.dim;
  const double dt = solve.grid.dt();

  std::vector<Eigen::VectorXd> path(S + 1, x);
  for (int j = 0; j < S; ++j) {
    path[j + 1] = path[j];
    if (model.beta != 0.0)
      path[j + 1] += model.beta * solve.noise->increments(scenario).row(j).transpose();
  }

  Eigen::VectorXd out = terminal_source(path[S]);
  Eigen::VectorXd gx(d), gp(d);
  for (int j = S - 1; j >= 0; --j) {
    Eigen::VectorXd yq = solve.field.eval(j, path[j]);
    Eigen::MatrixXd D = eval_derivative_matrix(solve.field_deriv, j, path[j], d);
    Eigen::MatrixXd Axp = model.h_dxp(path[j], f.rho[j], yq);
    Eigen::MatrixXd App = model.h_dpp(path[j], f.rho[j], yq);
    source(j, path[j], yq, gx, gp);
    // corrected driver: the advection of the gradient along the optimal
    // drift contributes (dxx V) * (dpp H) to the out-coefficient and
    // (dxx V) * (measure kernel of h_dp) to the source
    Eigen::VectorXd driver = Axp * out + D * (App * out) + gx + D * gp;
    out -= dt * driver;
  }
  return out;
}

}  // namespace

Eigen::VectorXd solve_nabla_mu(const IntervalSolve& solve, const Eigen::VectorXd& x,
                               const Eigen::VectorXd& x_tilde, int axis) {
  require_exact_terminal(solve, "solve_nabla_mu");
  const ModelSpec& model = *solve.model;
  const int M = static_cast<int>(solve.flows.size());
  const int N = solve.mu0.size();
  const int d = model.dim;
  const Eigen::VectorXd& w = solve.mu0.weights();

  Eigen::VectorXd avg = Eigen::VectorXd::Zero(d);
  for (int m = 0; m < M; ++m) {
    CharPath cp = simulate_characteristic(solve, m, x_tilde);
    LinearResponse lr = solve_linearized_state(solve, m, cp, axis);
    PopulationResponse pr = solve_linearized_mkv(solve, m, cp, lr, axis);
    const ScenarioFlow& f = solve.flows[m];

    auto source = [&](int j, const Eigen::VectorXd& xq, const Eigen::VectorXd& yq,
                      Eigen::VectorXd& g_x, Eigen::VectorXd& g_p) {
      g_x = model.h_dxmu(xq, f.rho[j], cp.X[j], yq) * lr.state[j];
      g_p = model.h_dpmu(xq, f.rho[j], cp.X[j], yq) * lr.state[j];
      for (int l = 0; l < N; ++l) {
        Eigen::VectorXd xl = f.X[j].row(l).transpose();
        g_x += w[l] * (model.h_dxmu(xq, f.rho[j], xl, yq) * pr.state[j].row(l).transpose());
        g_p += w[l] * (model.h_dpmu(xq, f.rho[j], xl, yq) * pr.state[j].row(l).transpose());
      }
    };
    auto terminal_source = [&](const Eigen::VectorXd& xq) {
      Eigen::VectorXd t = model.g_dxmu(xq, f.rho.back(), cp.X.back()) * lr.state.back();
      for (int l = 0; l < N; ++l)
        t += w[l] * (model.g_dxmu(xq, f.rho.back(), f.X.back().row(l).transpose()) *
                     pr.state.back().row(l).transpose());
      return t;
    };
    avg += nabla_mu_output_pass(solve, m, x, source, terminal_source) / double(M);
  }
  return avg;
}

Eigen::VectorXd solve_discrete_nabla_mu(const IntervalSolve& solve, const Eigen::VectorXd& x,
                                        int atom_index, int axis) {
  require_exact_terminal(solve, "solve_discrete_nabla_mu");
  const ModelSpec& model = *solve.model;
  const int M = static_cast<int>(solve.flows.size());
  const int n = solve.mu0.size();
  const int d = model.dim;
  const int S = solve.grid.steps;
  const double dt = solve.grid.dt();
  const Eigen::VectorXd& p = solve.mu0.weights();
  if (n > 8)
    throw std::invalid_argument("solve_discrete_nabla_mu: at most 8 atoms (coupled systems)");
  if (atom_index < 0 || atom_index >= n)
    throw std::invalid_argument("solve_discrete_nabla_mu: bad atom index");

  Eigen::VectorXd avg = Eigen::VectorXd::Zero(d);
  for (int m = 0; m < M; ++m) {
    const ScenarioFlow& f = solve.flows[m];
    // coupled response of all atom trajectories to shifting atom_index
    std::vector<Eigen::MatrixXd> u(S + 1, Eigen::MatrixXd::Zero(n, d));
    std::vector<Eigen::MatrixXd> v(S + 1, Eigen::MatrixXd::Zero(n, d));

    std::vector<std::vector<Eigen::MatrixXd>> Axp(S), App(S), Axx(S);
    for (int j = 0; j < S; ++j) {
      Axp[j].resize(n);
      App[j].resize(n);
      Axx[j].resize(n);
      for (int i = 0; i < n; ++i) {
        Eigen::VectorXd xi = f.X[j].row(i).transpose();
        Eigen::VectorXd yi = f.Y[j].row(i).transpose();
        Axp[j][i] = model.h_dxp(xi, f.rho[j], yi);
        App[j][i] = model.h_dpp(xi, f.rho[j], yi);
        Axx[j][i] = model.h_dxx(xi, f.rho[j], yi);
      }
    }

    std::vector<double> dists;
    for (int it = 0; it < 80; ++it) {
      u[0].setZero();
      u[0].row(atom_index) = Eigen::VectorXd::Unit(d, axis).transpose();
      for (int j = 0; j < S; ++j) {
        for (int i = 0; i < n; ++i) {
          Eigen::VectorXd xi = f.X[j].row(i).transpose();
          Eigen::VectorXd yi = f.Y[j].row(i).transpose();
          Eigen::VectorXd pair = Eigen::VectorXd::Zero(d);
          for (int l = 0; l < n; ++l)
            pair += p[l] * (model.h_dpmu(xi, f.rho[j], f.X[j].row(l).transpose(), yi) *
                            u[j].row(l).transpose());
          u[j + 1].row(i) = u[j].row(i) - dt * (Axp[j][i].transpose() * u[j].row(i).transpose() +
                                                App[j][i].transpose() * v[j].row(i).transpose() +
                                                pair)
                                              .transpose();
        }
      }
      std::vector<Eigen::MatrixXd> eta(S + 1, Eigen::MatrixXd(n, d));
      for (int i = 0; i < n; ++i) {
        Eigen::VectorXd xi = f.X[S].row(i).transpose();
        Eigen::VectorXd mix = Eigen::VectorXd::Zero(d);
        for (int l = 0; l < n; ++l)
          mix += p[l] * (model.g_dxmu(xi, f.rho[S], f.X[S].row(l).transpose()) *
                         u[S].row(l).transpose());
        eta[S].row(i) =
            (model.g_dxx(xi, f.rho[S]) * u[S].row(i).transpose() + mix).transpose();
      }
      for (int j = S - 1; j >= 0; --j) {
        for (int i = 0; i < n; ++i) {
          Eigen::VectorXd xi = f.X[j].row(i).transpose();
          Eigen::VectorXd yi = f.Y[j].row(i).transpose();
          Eigen::VectorXd pair = Eigen::VectorXd::Zero(d);
          for (int l = 0; l < n; ++l)
            pair += p[l] * (model.h_dxmu(xi, f.rho[j], f.X[j].row(l).transpose(), yi) *
                            u[j].row(l).transpose());
          eta[j].row(i) = eta[j + 1].row(i) -
                          dt * (Axx[j][i] * u[j].row(i).transpose() +
                                Axp[j][i] * eta[j + 1].row(i).transpose() + pair)
                                   .transpose();
        }
      }
      double dist = 0.0;
      for (int j = 0; j <= S; ++j) dist = std::max(dist, (eta[j] - v[j]).cwiseAbs().maxCoeff());
      v = std::move(eta);
      if (dist <= 1e-12) break;
      check_linear_convergence(dists, dist, solve.grid);
      if (it == 79)
        throw SolveFailure(SolveFailure::Kind::non_contraction, solve.grid.t0, solve.grid.t1,
                           "discrete coupled system did not converge");
    }

    // output equation: self-atom response enters at unit scale, the others
    // through the per-unit-mass rescaling of the perturbed atom's weight
    const int i0 = atom_index;
    auto source = [&](int j, const Eigen::VectorXd& xq, const Eigen::VectorXd& yq,
                      Eigen::VectorXd& g_x, Eigen::VectorXd& g_p) {
      g_x = model.h_dxmu(xq, f.rho[j], f.X[j].row(i0).transpose(), yq) * u[j].row(i0).transpose();
      g_p = model.h_dpmu(xq, f.rho[j], f.X[j].row(i0).transpose(), yq) * u[j].row(i0).transpose();
      for (int l = 0; l < n; ++l) {
        if (l == i0) continue;
        double scale = p[l] / p[i0];
        Eigen::VectorXd xl = f.X[j].row(l).transpose();
        g_x += scale * (model.h_dxmu(xq, f.rho[j], xl, yq) * u[j].row(l).transpose());
        g_p += scale * (model.h_dpmu(xq, f.rho[j], xl, yq) * u[j].row(l).transpose());
      }
    };
    auto terminal_source = [&](const Eigen::VectorXd& xq) {
      Eigen::VectorXd t = model.g_dxmu(xq, f.rho.back(), f.X[S].row(i0).transpose()) *
                          u[S].row(i0).transpose();
      for (int l = 0; l < n; ++l) {
        if (l == i0) continue;
        t += (p[l] / p[i0]) * (model.g_dxmu(xq, f.rho.back(), f.X[S].row(l).transpose()) *
                               u[S].row(l).transpose());
      }
      return t;
    };
    avg += nabla_mu_output_pass(solve, m, x, source, terminal_source) / double(M);
  }
  return avg;
}

}  // namespace mfg
