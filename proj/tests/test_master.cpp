#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "mfg/io.hpp"
#include "mfg/lq.hpp"
#include "mfg/master.hpp"
#include "mfg/models_builtin.hpp"
#include "mfg/rng.hpp"

using namespace mfg;

namespace {

EmpiricalMeasure cloud(int n, int d, double mean, double stddev, std::uint64_t seed) {
  Rng rng(seed);
  Eigen::MatrixXd pts(n, d);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < d; ++c) pts(i, c) = mean + stddev * rng.normal();
  return EmpiricalMeasure::uniform(std::move(pts));
}

MasterParams small_params(int N, int M, double dt, double tol, std::uint64_t seed = 1,
                          int grid_pts = 33) {
  MasterParams mp;
  mp.dt = dt;
  mp.picard.particles = N;
  mp.picard.scenarios = M;
  mp.picard.grid_pts = grid_pts;
  mp.picard.tol = tol;
  mp.picard.max_iter = 200;
  mp.picard.seed = seed;
  return mp;
}

Eigen::VectorXd x1(double v) { return Eigen::VectorXd::Constant(1, v); }

}  // namespace

TEST_CASE("free flow over four stitched intervals matches the closed form") {
  auto model = std::make_shared<const ModelSpec>(make_free_flow(1.0, 0.0));
  auto mu0 = cloud(64, 1, 0.0, 0.5, 2);
  MasterSolution sol = global_solve(model, small_params(64, 1, 0.01, 1e-8), mu0);
  CHECK(sol.chain().size() == 4);
  for (double t : {0.0, 0.25, 0.6, 0.9}) {
    for (double x : {-2.0, -0.5, 1.0, 2.5}) {
      double want = x / (1.0 + (1.0 - t));
      double got = sol.eval_dxV(t, x1(x), mu0)[0];
      CHECK(std::abs(got - want) <= 3.0 * 0.01);
      CHECK(std::abs(got - want) <= 2e-5);  // scheme-exact up to tolerance here
    }
  }
  // terminal slice: the gradient is the terminal datum itself
  CHECK(sol.eval_dxV(1.0, x1(1.3), mu0)[0] == doctest::Approx(1.3));
  // stitching residuals at the solver tolerance
  for (double r : sol.chain_residuals()) CHECK(r <= 10.0 * 1e-8);
}

TEST_CASE("x-independent data gives the zero gradient field") {
  auto model = std::make_shared<const ModelSpec>(make_zero_data(0.6));
  auto mu0 = cloud(16, 1, 0.5, 0.5, 3);
  MasterSolution sol = global_solve(model, small_params(16, 1, 0.02, 1e-9), mu0);
  for (double t : {0.0, 0.3}) CHECK(sol.eval_dxV(t, x1(0.7), mu0)[0] == 0.0);
}

TEST_CASE("degenerate schedule: horizon below one interval is a single solve") {
  auto model = std::make_shared<const ModelSpec>(make_free_flow(0.2, 0.0));
  auto mu0 = cloud(32, 1, 0.0, 0.5, 4);
  MasterSolution sol = global_solve(model, small_params(32, 1, 0.01, 1e-9), mu0);
  CHECK(sol.chain().size() == 1);
  CHECK(sol.eval_dxV(0.0, x1(1.0), mu0)[0] == doctest::Approx(1.0 / 1.2).epsilon(1e-6));
}

TEST_CASE("lq gradient matches the riccati oracle across the horizon") {
  LQParams lp;
  lp.a = 1.0;
  lp.b = 0.5;
  lp.q = 0.5;
  lp.T = 1.0;
  auto model = std::make_shared<const ModelSpec>(build_lq_model(lp));
  auto ric = riccati_solve(lp, 400);
  auto mu0 = cloud(256, 1, 1.0, 0.5, 5);
  MasterSolution sol = global_solve(model, small_params(256, 1, 0.01, 1e-7), mu0);
  for (double t : {0.0, 0.5, 0.75}) {
    for (double x : {-2.0, 0.0, 1.5}) {
      double want = ric.P_at(t) * x + ric.Q_at(t) * mu0.mean()[0];
      double got = sol.eval_dxV(t, x1(x), mu0)[0];
      CHECK(std::abs(got - want) / (1.0 + std::abs(want)) < 0.02);
    }
  }
}

TEST_CASE("common noise leaves the lq gradient unchanged within noise") {
  LQParams lp;
  lp.a = 1.0;
  lp.b = 0.5;
  lp.q = 0.5;
  lp.T = 0.5;
  auto mu0 = cloud(128, 1, 1.0, 0.5, 6);

  auto m0 = std::make_shared<const ModelSpec>(build_lq_model(lp));
  MasterSolution s0 = global_solve(m0, small_params(128, 1, 0.01, 1e-7), mu0);

  lp.beta = 0.5;
  auto mb = std::make_shared<const ModelSpec>(build_lq_model(lp));
  MasterSolution sb = global_solve(mb, small_params(128, 16, 0.01, 1e-7), mu0);

  for (double x : {-1.0, 0.0, 2.0}) {
    auto d0 = s0.eval_dxV(0.0, x1(x), mu0);
    auto db = sb.eval_dxV_detailed(0.0, x1(x), mu0);
    CHECK(std::abs(d0[0] - db.value[0]) <= 5e-3);
    CHECK(db.scenarios == 16);
  }
}

TEST_CASE("value evaluation: constant terminal data and zero Hamiltonian") {
  ModelSpec m = make_zero_data(0.4);
  m.terminal = [](const Eigen::VectorXd&, const EmpiricalMeasure&) { return 3.7; };
  auto model = std::make_shared<const ModelSpec>(m);
  auto mu0 = cloud(8, 1, 0.0, 0.6, 7);
  MasterSolution sol = global_solve(model, small_params(8, 1, 0.02, 1e-9), mu0);
  CHECK(sol.eval_V(0.0, x1(0.3), mu0) == doctest::Approx(3.7).epsilon(1e-12));
  CHECK(sol.eval_V(0.17, x1(-1.0), mu0) == doctest::Approx(3.7).epsilon(1e-12));
}

TEST_CASE("finite differences of the value match the gradient field") {
  auto model = std::make_shared<const ModelSpec>(make_free_flow(1.0, 0.0));
  auto mu0 = cloud(64, 1, 0.0, 0.5, 8);
  MasterSolution sol = global_solve(model, small_params(64, 1, 0.005, 1e-8), mu0);
  double h = 0.25;
  for (double t : {0.0, 0.5}) {
    for (double x : {-1.0, 0.8, 2.0}) {
      double fd = (sol.eval_V(t, x1(x + h), mu0) - sol.eval_V(t, x1(x - h), mu0)) / (2 * h);
      double grad = sol.eval_dxV(t, x1(x), mu0)[0];
      CHECK(std::abs(fd - grad) / (1.0 + std::abs(grad)) < 0.03);
    }
  }
}

TEST_CASE("candidate optimal control attains the value; perturbed controls cost more") {
  auto model = std::make_shared<const ModelSpec>(make_free_flow(0.5, 0.0));
  auto mu0 = cloud(32, 1, 0.0, 0.5, 9);
  double dt = 0.005;
  MasterSolution sol = global_solve(model, small_params(32, 1, dt, 1e-9), mu0);

  Eigen::VectorXd x0 = x1(1.2);
  double V = sol.eval_V(0.0, x0, mu0);

  auto control_cost = [&](double eps, std::uint64_t pseed) {
    Rng rng(pseed);
    Eigen::VectorXd x = x0;
    double cost = 0.0;
    for (const auto& seg : sol.chain()) {
      for (int j = 0; j < seg->grid.steps; ++j) {
        const EmpiricalMeasure& rj = seg->flows[0].rho[j];
        Eigen::VectorXd y = seg->field.eval(j, x);
        Eigen::VectorXd alpha = -model->h_dp(x, rj, y);
        if (eps != 0.0) alpha[0] += eps * (rng.uniform() - 0.5) * 2.0;
        cost += dt * legendre_transform(*model, x, rj, alpha);
        x += dt * alpha;
      }
    }
    cost += model->terminal(x, sol.chain().back()->flows[0].rho.back());
    return cost;
  };

  double opt = control_cost(0.0, 0);
  CHECK(std::abs(opt - V) <= 2.0 * dt);
  for (std::uint64_t s = 1; s <= 5; ++s) {
    double sub = control_cost(0.6, s);
    CHECK(sub >= V - 1e-6);
    CHECK(sub > opt);
  }
}

TEST_CASE("second difference quotient recovers the curvature coefficient") {
  auto model = std::make_shared<const ModelSpec>(make_free_flow(1.0, 0.0));
  auto mu0 = cloud(48, 1, 0.0, 0.5, 10);
  MasterParams mp = small_params(48, 1, 0.005, 1e-8);
  MasterSolution sol = global_solve(model, mp, mu0);
  std::vector<Eigen::VectorXd> probes = {x1(-1.0), x1(0.0), x1(0.7)};
  for (double t : {0.0, 0.5, 0.9}) {
    auto [lo, hi] = sol.estimate_second_diff(t, mu0, probes, 0.375);
    double want = 1.0 / (1.0 + (1.0 - t));
    CHECK(std::abs(lo - want) <= 1e-2);
    CHECK(std::abs(hi - want) <= 1e-2);
  }
}

TEST_CASE("affine value: linear terminal data has zero second difference") {
  LQParams lp;
  lp.a = 0.0;
  lp.b = 0.5;
  lp.T = 0.5;
  auto model = std::make_shared<const ModelSpec>(build_lq_model(lp));
  auto mu0 = cloud(32, 1, 0.8, 0.5, 11);
  MasterSolution sol = global_solve(model, small_params(32, 1, 0.01, 1e-9), mu0);
  auto [lo, hi] = sol.estimate_second_diff(0.0, mu0, {x1(0.0), x1(1.0)}, 0.375);
  CHECK(std::abs(lo) <= 1e-9);
  CHECK(std::abs(hi) <= 1e-9);
}

TEST_CASE("anti-monotone data: long horizons fail no later than the blow-up time") {
  auto model = std::make_shared<const ModelSpec>(make_antimonotone(2.0, 0.0));
  auto mu0 = cloud(32, 1, 0.0, 0.4, 12);
  MasterParams mp = small_params(32, 1, 0.01, 1e-6);
  mp.picard.box_lo = -8.0;
  mp.picard.box_hi = 8.0;
  MasterSolution sol(model, mp, mu0);
  bool failed = false;
  try {
    sol.solve();
  } catch (const GlobalSolveError&) {
    failed = true;
  }
  CHECK(failed);
  // the curvature ODE blows up at horizon distance 1: every interval that
  // solved successfully starts at or after that time, minus halving slack
  CHECK(sol.coverage_floor() >= 1.0 - 0.26);
}

TEST_CASE("anti-monotone data on a short horizon solves with negative curvature") {
  auto model = std::make_shared<const ModelSpec>(make_antimonotone(0.5, 0.0));
  auto mu0 = cloud(32, 1, 0.0, 0.4, 13);
  MasterParams mp = small_params(32, 1, 0.005, 1e-8);
  mp.picard.box_lo = -8.0;
  mp.picard.box_hi = 8.0;
  MasterSolution sol = global_solve(model, mp, mu0);
  auto [lo, hi] = sol.estimate_second_diff(0.0, mu0, {x1(0.0), x1(0.5)}, 0.25);
  CHECK(lo < 0.0);
  CHECK(lo == doctest::Approx(-2.0).epsilon(0.03));  // closed form curvature at t = 0
  (void)hi;
}

TEST_CASE("decoupling consistency along the chain") {
  LQParams lp;
  lp.a = 1.0;
  lp.b = 0.5;
  lp.q = 0.5;
  lp.T = 0.5;
  auto model = std::make_shared<const ModelSpec>(build_lq_model(lp));
  auto mu0 = cloud(64, 1, 1.0, 0.5, 14);
  MasterSolution sol = global_solve(model, small_params(64, 1, 0.01, 1e-7), mu0);
  std::vector<Eigen::VectorXd> probes = {x1(-1.0), x1(0.5), x1(1.5)};

  auto rep0 = sol.decoupling_consistency(0.0, probes);
  CHECK(rep0.max_discrepancy <= 1e-12);  // the initial node is the solve itself

  auto rep = sol.decoupling_consistency(0.3, probes);
  CHECK(rep.max_discrepancy <= 2.0 * 0.01);
}

TEST_CASE("mixed derivative: restriction, oracle match and measure-bump FD") {
  LQParams lp;
  lp.a = 1.0;
  lp.b = 0.5;
  lp.q = 0.5;
  lp.T = 1.0;
  auto model = std::make_shared<const ModelSpec>(build_lq_model(lp));
  auto ric = riccati_solve(lp, 400);
  auto mu0 = cloud(64, 1, 1.0, 0.5, 15);
  MasterSolution sol = global_solve(model, small_params(64, 1, 0.01, 1e-8), mu0);

  CHECK_THROWS_AS(sol.eval_dxmuV(0.0, x1(0.5), mu0, x1(1.0), 0), std::invalid_argument);

  double t = 0.75;  // start of the final interval
  double got = sol.eval_dxmuV(t, x1(0.5), mu0, x1(1.2), 0)[0];
  CHECK(std::abs(got - ric.Q_at(t)) / std::abs(ric.Q_at(t)) < 0.05);

  // measure-bump finite difference of the gradient at the same slice
  int atom = 3;
  double h = 1.0, w = mu0.weight(atom);
  auto up = mu0.with_atom_shifted(atom, x1(h));
  auto dn = mu0.with_atom_shifted(atom, x1(-h));
  double fd =
      (sol.eval_dxV(t, x1(0.5), up)[0] - sol.eval_dxV(t, x1(0.5), dn)[0]) / (2.0 * h * w);
  CHECK(std::abs(got - fd) / (1.0 + std::abs(fd)) < 0.05);
}

TEST_CASE("alternative gradient route agrees across stitched intervals") {
  auto model = std::make_shared<const ModelSpec>(make_free_flow(0.5, 0.0));
  auto mu0 = cloud(48, 1, 0.0, 0.5, 16);
  MasterSolution sol = global_solve(model, small_params(48, 1, 0.01, 1e-9), mu0);
  for (double x : {-1.5, 0.0, 2.0}) {
    double a = sol.eval_dxV(0.0, x1(x), mu0)[0];
    double b = sol.eval_dxV_alt_route(0.0, x1(x), mu0)[0];
    CHECK(std::abs(a - b) <= 1e-4);
  }
}

TEST_CASE("repeated evaluations reuse the cache bit-identically") {
  LQParams lp;
  lp.a = 1.0;
  lp.b = 0.5;
  lp.q = 0.5;
  lp.T = 0.5;
  auto model = std::make_shared<const ModelSpec>(build_lq_model(lp));
  auto mu0 = cloud(32, 1, 1.0, 0.5, 17);
  MasterSolution sol = global_solve(model, small_params(32, 1, 0.01, 1e-7), mu0);
  auto v1 = sol.eval_dxV(0.1, x1(0.4), mu0);
  auto v2 = sol.eval_dxV(0.1, x1(0.4), mu0);
  CHECK(v1[0] == v2[0]);
}

TEST_CASE("persisted solution directory carries manifest and parsable fields") {
  namespace fs = std::filesystem;
  auto model = std::make_shared<const ModelSpec>(make_free_flow(0.5, 0.0));
  auto mu0 = cloud(16, 1, 0.0, 0.5, 18);
  MasterSolution sol = global_solve(model, small_params(16, 1, 0.025, 1e-8, 1, 9), mu0);
  fs::path dir = fs::temp_directory_path() / "mfg_master_persist_test";
  fs::remove_all(dir);
  sol.persist(dir, true);
  CHECK(fs::exists(dir / "solution.json"));
  CHECK(fs::exists(dir / "interval_0" / "meta.json"));
  CHECK(fs::exists(dir / "interval_0" / "field_t0.csv"));
  CHECK(fs::exists(dir / "interval_0" / "flow_s0.csv"));
  auto j = nlohmann::json::parse(read_text_file(dir / "solution.json"));
  CHECK(j["intervals"].size() == sol.chain().size());
  fs::remove_all(dir);
}
