#include <doctest.h>

#include <cmath>

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

}  // namespace

TEST_CASE("free flow passes the assumption audit with unit convexity") {
  ModelSpec m = make_free_flow();
  SamplerConfig sampler;
  auto rep = validate_assumptions(m, sampler, 50);
  CHECK(rep.pass);
  for (const auto& p : rep.probes) {
    if (p.assumption.rfind("min_eig", 0) == 0) CHECK(p.worst == doctest::Approx(1.0));
    if (p.assumption.rfind("<h_dp,p>", 0) == 0) CHECK(p.worst >= 0.0);  // |p|^2/2 >= 0
  }
}

TEST_CASE("lq audit: worst mixed-derivative probe equals q") {
  LQParams p;
  p.a = 1.0;
  p.b = 0.5;
  p.q = 0.5;
  ModelSpec m = build_lq_model(p);
  SamplerConfig sampler;
  auto rep = validate_assumptions(m, sampler, 60);
  CHECK(rep.pass);
  for (const auto& probe : rep.probes)
    if (probe.assumption == "|h_dxmu| <= L_H") CHECK(probe.worst == doctest::Approx(0.5));

  // the claimed bound must actually cover the probes: shrinking it fails the audit
  ModelSpec weak = m;
  weak.constants.L_H = 0.4;
  CHECK_FALSE(validate_assumptions(weak, sampler, 60).pass);
}

TEST_CASE("audit rejects non-finite model maps") {
  ModelSpec m = make_free_flow();
  m.h_dp = [](const Eigen::VectorXd& x, const EmpiricalMeasure&, const Eigen::VectorXd&) {
    return Eigen::VectorXd(std::numeric_limits<double>::quiet_NaN() * x);
  };
  SamplerConfig sampler;
  CHECK_THROWS_AS(validate_assumptions(m, sampler, 3), std::domain_error);
}

TEST_CASE("legendre transform of the quadratic Hamiltonian") {
  ModelSpec m = make_free_flow();
  auto mu = cloud(8, 1, 0.0, 1.0, 2);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(1);

  // sup_p(-2p - p^2/2) = 2 at p = -2
  Eigen::VectorXd a = Eigen::VectorXd::Constant(1, 2.0);
  Eigen::VectorXd pstar;
  CHECK(legendre_transform(m, x, mu, a, &pstar) == doctest::Approx(2.0).epsilon(1e-10));
  CHECK(pstar[0] == doctest::Approx(-2.0).epsilon(1e-8));

  // with H = |p|^2/2 - q x.mean, the maximizer at a = 0 is p = 0 and L = q x.mean
  LQParams lp;
  lp.q = 0.5;
  ModelSpec lq = build_lq_model(lp);
  Eigen::VectorXd x1 = Eigen::VectorXd::Constant(1, 1.5);
  double want = 0.5 * x1[0] * mu.mean()[0];
  CHECK(legendre_transform(lq, x1, mu, Eigen::VectorXd::Zero(1)) ==
        doctest::Approx(want).epsilon(1e-10));
}

TEST_CASE("legendre transform matches a dense grid search on a non-quadratic H") {
  ModelSpec m = make_free_flow();
  m.hamiltonian = [](const Eigen::VectorXd&, const EmpiricalMeasure&, const Eigen::VectorXd& p) {
    return 0.5 * p.squaredNorm() + 0.1 * std::sin(p[0]);
  };
  m.h_dp = [](const Eigen::VectorXd&, const EmpiricalMeasure&, const Eigen::VectorXd& p) {
    return Eigen::VectorXd(p + Eigen::VectorXd::Constant(1, 0.1 * std::cos(p[0])));
  };
  m.h_dpp = [](const Eigen::VectorXd&, const EmpiricalMeasure&, const Eigen::VectorXd& p) {
    return Eigen::MatrixXd(Eigen::MatrixXd::Identity(1, 1) * (1.0 - 0.1 * std::sin(p[0])));
  };
  auto mu = cloud(4, 1, 0.0, 1.0, 3);
  Eigen::VectorXd x = Eigen::VectorXd::Zero(1);
  Eigen::VectorXd a = Eigen::VectorXd::Ones(1);

  double grid_best = -1e300;
  for (double p = -10.0; p <= 10.0; p += 1e-4) {
    Eigen::VectorXd pv = Eigen::VectorXd::Constant(1, p);
    grid_best = std::max(grid_best, -pv.dot(a) - m.hamiltonian(x, mu, pv));
  }
  CHECK(legendre_transform(m, x, mu, a) == doctest::Approx(grid_best).epsilon(1e-6));
}

TEST_CASE("fenchel equality at the duality point (property)") {
  LQParams lp;
  lp.a = 1.0;
  lp.b = 0.5;
  lp.q = 0.5;
  ModelSpec m = build_lq_model(lp);
  Rng rng(17);
  for (int rep = 0; rep < 20; ++rep) {
    Eigen::VectorXd x = Eigen::VectorXd::Constant(1, rng.uniform(-3, 3));
    Eigen::VectorXd pstar = Eigen::VectorXd::Constant(1, rng.uniform(-3, 3));
    auto mu = cloud(6, 1, rng.uniform(-1, 1), 0.5, 100 + rep);
    Eigen::VectorXd a = -m.h_dp(x, mu, pstar);
    double L = legendre_transform(m, x, mu, a);
    CHECK(L + m.hamiltonian(x, mu, pstar) == doctest::Approx(-pstar.dot(a)).epsilon(1e-8));
  }
}

TEST_CASE("finite-difference consistency of all bundled models") {
  for (const auto& name : {"free_flow", "lq", "lse", "antimonotone", "crosscoupled", "zero"}) {
    LQParams p;
    p.a = 1.0;
    p.b = 0.5;
    p.q = 0.5;
    ModelSpec m = make_model(name, p);
    auto rep = fd_consistency_check(m, 6);
    INFO("model ", name, " worst rel error ", rep.worst_rel_error);
    CHECK(rep.pass);
  }
}

TEST_CASE("quadratic terminal data: FD of G matches g_dx to rounding") {
  ModelSpec m = make_free_flow();
  auto rep = fd_consistency_check(m, 10, 1e-6);
  CHECK(rep.pass);  // FD of a quadratic is exact up to rounding
}

TEST_CASE("an injected wrong derivative is flagged with its name") {
  ModelSpec m = make_free_flow();
  m.g_dx = [](const Eigen::VectorXd& x, const EmpiricalMeasure&) { return Eigen::VectorXd(2.0 * x); };
  auto rep = fd_consistency_check(m, 5);
  CHECK_FALSE(rep.pass);
  bool named = false;
  for (const auto& issue : rep.issues) named = named || issue.derivative == "g_dx";
  CHECK(named);
}

TEST_CASE("lq mixed measure derivative agrees with particle-shift differences") {
  LQParams p;
  p.b = 0.5;
  p.q = 0.5;
  ModelSpec m = build_lq_model(p);
  // directly verify h_dxmu == -q per unit mass via an atom shift
  auto mu = cloud(10, 1, 0.0, 1.0, 4);
  double h = 1e-5, w = mu.weight(3);
  Eigen::VectorXd e = Eigen::VectorXd::Constant(1, h);
  Eigen::VectorXd fd = (m.h_dx(Eigen::VectorXd::Zero(1), mu.with_atom_shifted(3, e),
                               Eigen::VectorXd::Zero(1)) -
                        m.h_dx(Eigen::VectorXd::Zero(1), mu.with_atom_shifted(3, -e),
                               Eigen::VectorXd::Zero(1))) /
                       (2 * h * w);
  CHECK(fd[0] == doctest::Approx(-0.5).epsilon(1e-7));
}
