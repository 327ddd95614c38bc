#include "mfg/monotone.hpp"

#include <cmath>
#include <limits>

#include "mfg/rng.hpp"

namespace mfg {

nlohmann::json MonotonicityReport::to_json() const {
  nlohmann::json j;
  j["trials"] = trials;
  j["min_pairing"] = min_pairing;
  j["pass"] = pass;
  j["tolerance"] = tolerance;
  auto dump = [](const Eigen::MatrixXd& m) {
    std::vector<std::vector<double>> rows;
    for (int i = 0; i < m.rows(); ++i)
      rows.emplace_back(m.row(i).begin(), m.row(i).end());
    return rows;
  };
  j["witness"]["xi1"] = dump(witness.xi1);
  j["witness"]["xi2"] = dump(witness.xi2);
  if (witness.p1.size() > 0) {
    j["witness"]["p1"] = dump(witness.p1);
    j["witness"]["p2"] = dump(witness.p2);
  }
  return j;
}

double displacement_pairing_G(const GradMap& grad, const Eigen::MatrixXd& xi1,
                              const Eigen::MatrixXd& xi2) {
  EmpiricalMeasure mu1 = EmpiricalMeasure::uniform(xi1);
  EmpiricalMeasure mu2 = EmpiricalMeasure::uniform(xi2);
  const int n = static_cast<int>(xi1.rows());
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd a = grad(xi1.row(i).transpose(), mu1) - grad(xi2.row(i).transpose(), mu2);
    acc += a.dot((xi1.row(i) - xi2.row(i)).transpose());
  }
  return acc / n;
}

double displacement_pairing_H(const VecFn& h_dx, const VecFn& h_dp, const Eigen::MatrixXd& xi1,
                              const Eigen::MatrixXd& xi2, const Eigen::MatrixXd& p1,
                              const Eigen::MatrixXd& p2) {
  EmpiricalMeasure mu1 = EmpiricalMeasure::uniform(xi1);
  EmpiricalMeasure mu2 = EmpiricalMeasure::uniform(xi2);
  const int n = static_cast<int>(xi1.rows());
  double acc = 0.0;
  for (int i = 0; i < n; ++i) {
    Eigen::VectorXd x1 = xi1.row(i).transpose(), x2 = xi2.row(i).transpose();
    Eigen::VectorXd q1 = p1.row(i).transpose(), q2 = p2.row(i).transpose();
    Eigen::VectorXd dx = -h_dx(x1, mu1, q1) + h_dx(x2, mu2, q2);
    Eigen::VectorXd dp = h_dp(x1, mu1, q1) - h_dp(x2, mu2, q2);
    acc += dx.dot(x1 - x2) + dp.dot(q1 - q2);
  }
  return acc / n;
}

namespace {

Eigen::MatrixXd sample_cloud(Rng& rng, int n, int d, double box, double stddev) {
  Eigen::VectorXd mean(d);
  for (int c = 0; c < d; ++c) mean[c] = rng.uniform(-box, box);
  Eigen::MatrixXd pts(n, d);
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < d; ++c) pts(i, c) = mean[c] + stddev * rng.normal();
  return pts;
}

// reorder the rows of `cloud` by the W2-optimal assignment against `anchor`
Eigen::MatrixXd reorder_optimal(const Eigen::MatrixXd& anchor, const Eigen::MatrixXd& cloud) {
  Coupling plan = optimal_pairing(EmpiricalMeasure::uniform(anchor),
                                  EmpiricalMeasure::uniform(cloud));
  Eigen::MatrixXd out(cloud.rows(), cloud.cols());
  for (const auto& e : plan.entries) out.row(e.source) = cloud.row(e.target);
  return out;
}

struct SearchState {
  double value = std::numeric_limits<double>::infinity();
  PairingWitness witness;
};

template <class EvalFn, class MutateFn>
void adversarial_descent(SearchState& best, const EvalFn& eval, const MutateFn& mutate, Rng& rng,
                         int steps) {
  PairingWitness cur = best.witness;
  double cur_val = best.value;
  for (int s = 0; s < steps; ++s) {
    PairingWitness cand = cur;
    mutate(cand, rng);
    double v = eval(cand);
    if (v < cur_val) {
      cur = cand;
      cur_val = v;
      if (v < best.value) {
        best.value = v;
        best.witness = cur;
      }
    }
  }
}

}  // namespace

MonotonicityReport check_dm_G(const GradMap& grad, int dim, const MonotoneCheckConfig& cfg,
                              int trials) {
  if (trials < 1) throw std::invalid_argument("check_dm_G: trials must be >= 1");
  Rng rng(cfg.seed);
  auto eval = [&](const PairingWitness& w) {
    return displacement_pairing_G(grad, w.xi1, w.xi2);
  };
  SearchState best;
  int used = 0;
  // random phase: independent and optimally-paired couplings
  int random_budget = std::max(1, trials - cfg.restarts * cfg.descent_steps);
  for (int t = 0; t < random_budget && used < trials; ++t, ++used) {
    PairingWitness w;
    w.xi1 = sample_cloud(rng, cfg.atoms, dim, cfg.sample_box, cfg.sample_std);
    w.xi2 = sample_cloud(rng, cfg.atoms, dim, cfg.sample_box, cfg.sample_std);
    if (t % 2 == 1) w.xi2 = reorder_optimal(w.xi1, w.xi2);
    double v = eval(w);
    if (v < best.value) {
      best.value = v;
      best.witness = w;
    }
  }
  // adversarial phase: coordinate perturbations around the worst witness
  auto mutate = [&](PairingWitness& w, Rng& r) {
    int which = static_cast<int>(r.uniform() * 2);
    Eigen::MatrixXd& m = which == 0 ? w.xi1 : w.xi2;
    int i = static_cast<int>(r.uniform() * m.rows()) % m.rows();
    int c = static_cast<int>(r.uniform() * m.cols()) % m.cols();
    m(i, c) += cfg.step * (r.uniform() - 0.5) * 2.0;
  };
  for (int rs = 0; rs < cfg.restarts && used < trials; ++rs) {
    int steps = std::min(cfg.descent_steps, trials - used);
    adversarial_descent(best, eval, mutate, rng, steps);
    used += steps;
  }
  MonotonicityReport rep;
  rep.trials = used;
  rep.min_pairing = best.value;
  rep.witness = best.witness;
  rep.tolerance = cfg.tolerance;
  rep.pass = best.value >= -cfg.tolerance;
  return rep;
}

MonotonicityReport check_dm_H(const VecFn& h_dx, const VecFn& h_dp, int dim,
                              const MonotoneCheckConfig& cfg, int trials) {
  if (trials < 1) throw std::invalid_argument("check_dm_H: trials must be >= 1");
  Rng rng(cfg.seed);
  auto eval = [&](const PairingWitness& w) {
    return displacement_pairing_H(h_dx, h_dp, w.xi1, w.xi2, w.p1, w.p2);
  };
  SearchState best;
  int used = 0;
  int random_budget = std::max(1, trials - cfg.restarts * cfg.descent_steps);
  for (int t = 0; t < random_budget && used < trials; ++t, ++used) {
    PairingWitness w;
    w.xi1 = sample_cloud(rng, cfg.atoms, dim, cfg.sample_box, cfg.sample_std);
    w.xi2 = sample_cloud(rng, cfg.atoms, dim, cfg.sample_box, cfg.sample_std);
    w.p1 = sample_cloud(rng, cfg.atoms, dim, cfg.sample_box, cfg.sample_std);
    w.p2 = sample_cloud(rng, cfg.atoms, dim, cfg.sample_box, cfg.sample_std);
    if (t % 2 == 1) w.xi2 = reorder_optimal(w.xi1, w.xi2);
    double v = eval(w);
    if (v < best.value) {
      best.value = v;
      best.witness = w;
    }
  }
  auto mutate = [&](PairingWitness& w, Rng& r) {
    int which = static_cast<int>(r.uniform() * 4);
    Eigen::MatrixXd& m = which == 0 ? w.xi1 : which == 1 ? w.xi2 : which == 2 ? w.p1 : w.p2;
    int i = static_cast<int>(r.uniform() * m.rows()) % m.rows();
    int c = static_cast<int>(r.uniform() * m.cols()) % m.cols();
    m(i, c) += cfg.step * (r.uniform() - 0.5) * 2.0;
  };
  for (int rs = 0; rs < cfg.restarts && used < trials; ++rs) {
    int steps = std::min(cfg.descent_steps, trials - used);
    adversarial_descent(best, eval, mutate, rng, steps);
    used += steps;
  }
  MonotonicityReport rep;
  rep.trials = used;
  rep.min_pairing = best.value;
  rep.witness = best.witness;
  rep.tolerance = cfg.tolerance;
  rep.pass = best.value >= -cfg.tolerance;
  return rep;
}

SecondOrderReport check_second_order_H(const ModelSpec& model, const MonotoneCheckConfig& cfg,
                                       int trials) {
  if (trials < 1) throw std::invalid_argument("check_second_order_H: trials must be >= 1");
  const int d = model.dim;
  Rng rng(cfg.seed);
  SecondOrderReport rep;
  rep.trials = trials;
  rep.min_slack = std::numeric_limits<double>::infinity();
  for (int t = 0; t < trials; ++t) {
    int n = cfg.atoms;
    Eigen::MatrixXd xi = sample_cloud(rng, n, d, cfg.sample_box, cfg.sample_std);
    Eigen::MatrixXd eta = sample_cloud(rng, n, d, 0.0, cfg.sample_std);
    Eigen::MatrixXd p = sample_cloud(rng, n, d, cfg.sample_box, cfg.sample_std);
    EmpiricalMeasure mu = EmpiricalMeasure::uniform(xi);

    double lhs = 0.0, rhs = 0.0;
    for (int i = 0; i < n; ++i) {
      Eigen::VectorXd xi_i = xi.row(i).transpose(), eta_i = eta.row(i).transpose(),
                      p_i = p.row(i).transpose();
      Eigen::MatrixXd hxx = model.h_dxx(xi_i, mu, p_i);
      lhs += eta_i.dot(hxx * eta_i) / n;
      Eigen::MatrixXd hpp = model.h_dpp(xi_i, mu, p_i);
      Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(hpp);
      if (es.eigenvalues().minCoeff() <= 0)
        throw std::domain_error("check_second_order_H: h_dpp not positive definite");
      Eigen::MatrixXd inv_sqrt = es.operatorInverseSqrt();
      for (int j = 0; j < n; ++j) {
        Eigen::VectorXd xt = xi.row(j).transpose(), eta_j = eta.row(j).transpose();
        lhs += eta_i.dot(model.h_dxmu(xi_i, mu, xt, p_i) * eta_j) / (n * n);
        Eigen::VectorXd v = inv_sqrt * (model.h_dpmu(xi_i, mu, xt, p_i) * eta_j);
        rhs += v.squaredNorm() / (n * n);
      }
    }
    double slack = (-0.25 * rhs) - lhs;
    rep.min_slack = std::min(rep.min_slack, slack);
  }
  rep.nonnegative = rep.min_slack >= -cfg.tolerance;
  return rep;
}

MonotonicityReport check_field_dm(const MasterSolution& sol, double t,
                                  const MonotoneCheckConfig& cfg, int trials) {
  GradMap grad = [&sol, t](const Eigen::VectorXd& x, const EmpiricalMeasure& mu) {
    return sol.eval_dxV(t, x, mu);
  };
  return check_dm_G(grad, sol.model().dim, cfg, trials);
}

LipschitzEstimate estimate_measure_lipschitz(const MasterSolution& sol, double t, int metric_q,
                                             BumpKind kind, int pairs,
                                             const std::vector<Eigen::VectorXd>& x_probes,
                                             std::uint64_t seed) {
  if (metric_q != 1 && metric_q != 2)
    throw std::invalid_argument("estimate_measure_lipschitz: metric must be W1 or W2");
  const int d = sol.model().dim;
  Rng rng(seed);
  LipschitzEstimate est;
  for (int k = 0; k < pairs; ++k) {
    EmpiricalMeasure mu = [&]() {
      if (kind == BumpKind::dirac_shift) {
        Eigen::VectorXd x0(d);
        for (int c = 0; c < d; ++c) x0[c] = rng.uniform(-1.5, 1.5);
        return EmpiricalMeasure::dirac(x0);
      }
      return EmpiricalMeasure::uniform(sample_cloud(rng, 64, d, 1.0, 0.5));
    }();
    Eigen::VectorXd v(d);
    for (int c = 0; c < d; ++c) v[c] = rng.uniform(-1.0, 1.0);
    if (v.norm() < 0.1) v.setConstant(0.5);

    EmpiricalMeasure mu2 = [&]() {
      switch (kind) {
        case BumpKind::translate_all:
        case BumpKind::dirac_shift:
          return mu.translated(v);
        case BumpKind::shift_one_atom:
        default:
          return mu.with_atom_shifted(0, v);
      }
    }();
    double w = wasserstein(metric_q, mu, mu2);
    if (w < 1e-9) continue;  // degenerate pair
    for (const auto& x : x_probes) {
      double diff = (sol.eval_dxV(t, x, mu) - sol.eval_dxV(t, x, mu2)).norm();
      est.constant = std::max(est.constant, diff / w);
    }
    est.pairs++;
  }
  return est;
}

}  // namespace mfg
