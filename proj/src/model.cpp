#include "mfg/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <stdexcept>

namespace mfg {

namespace {

void require_finite(double v, const std::string& what) {
  if (!std::isfinite(v))
    throw std::domain_error("model map '" + what + "' returned a non-finite value");
}

template <class M>
void require_finite(const M& m, const std::string& what) {
  if (!m.allFinite())
    throw std::domain_error("model map '" + what + "' returned a non-finite value");
}

double operator_norm(const Eigen::MatrixXd& m) {
  return m.jacobiSvd().singularValues()(0);
}

struct ProbePoint {
  Eigen::VectorXd x, p;
  EmpiricalMeasure mu;
};

}  // namespace

EmpiricalMeasure sample_probe_measure(const SamplerConfig& sampler, int dim, Rng& rng) {
  int atoms = 1 + static_cast<int>(rng.uniform() * sampler.max_atoms);
  atoms = std::min(atoms, sampler.max_atoms);
  Eigen::VectorXd mean(dim), stds(dim);
  for (int c = 0; c < dim; ++c) {
    mean[c] = rng.uniform(-sampler.mu_mean, sampler.mu_mean);
    stds[c] = rng.uniform(sampler.std_lo, sampler.std_hi);
  }
  Eigen::MatrixXd pts(atoms, dim);
  for (int i = 0; i < atoms; ++i)
    for (int c = 0; c < dim; ++c) pts(i, c) = mean[c] + stds[c] * rng.normal();
  return EmpiricalMeasure::uniform(std::move(pts));
}

nlohmann::json AssumptionReport::to_json() const {
  nlohmann::json j;
  j["pass"] = pass;
  auto arr = nlohmann::json::array();
  for (const auto& p : probes) {
    nlohmann::json e;
    e["assumption"] = p.assumption;
    e["worst"] = p.worst;
    e["bound"] = p.bound;
    e["pass"] = p.pass;
    e["samples"] = p.samples;
    e["x"] = std::vector<double>(p.x.data(), p.x.data() + p.x.size());
    e["p"] = std::vector<double>(p.p.data(), p.p.data() + p.p.size());
    e["mu_mean"] = std::vector<double>(p.mu_mean.data(), p.mu_mean.data() + p.mu_mean.size());
    e["mu_atoms"] = p.mu_atoms;
    arr.push_back(e);
  }
  j["probes"] = arr;
  return j;
}

AssumptionReport validate_assumptions(const ModelSpec& model, const SamplerConfig& sampler,
                                      int trials, std::uint64_t seed) {
  if (trials < 1) throw std::invalid_argument("validate_assumptions: trials must be >= 1");
  const int d = model.dim;
  const double tol = 1e-9;

  // audited quantities; "larger_is_safe" flips the comparison direction
  enum Q {
    kMinEigHdpp,
    kNormHdxp,
    kNormHdxx,
    kNormHdpp,
    kNormHdxmu,
    kNormHdpmu,
    kNormGdxx,
    kNormGdxmu,
    kCoercivity,
    kSymHdpp,
    kSymGdxx,
    kLowerBoundG,
    kCount
  };
  AssumptionReport rep;
  rep.probes.resize(kCount);
  auto& pr = rep.probes;
  auto init = [&](Q q, std::string name, double bound, bool larger_safe) {
    pr[q].assumption = std::move(name);
    pr[q].bound = bound;
    pr[q].larger_is_safe = larger_safe;
    pr[q].worst = larger_safe ? std::numeric_limits<double>::infinity()
                              : -std::numeric_limits<double>::infinity();
  };
  init(kMinEigHdpp, "min_eig(h_dpp) >= c0", model.constants.c0, true);
  init(kNormHdxp, "|h_dxp| <= L_H", model.constants.L_H, false);
  init(kNormHdxx, "|h_dxx| <= L_H", model.constants.L_H, false);
  init(kNormHdpp, "|h_dpp| <= L_H", model.constants.L_H, false);
  init(kNormHdxmu, "|h_dxmu| <= L_H", model.constants.L_H, false);
  init(kNormHdpmu, "|h_dpmu| <= L_H", model.constants.L_H, false);
  init(kNormGdxx, "|g_dxx| <= L_G", model.constants.L_G, false);
  init(kNormGdxmu, "|g_dxmu| <= L_G", model.constants.L_G, false);
  init(kCoercivity, "<h_dp,p> - H >= -L_H", -model.constants.L_H, true);
  init(kSymHdpp, "h_dpp symmetric", tol, false);
  init(kSymGdxx, "g_dxx symmetric", tol, false);
  init(kLowerBoundG, "G >= -L_G", -model.constants.L_G, true);

  Rng rng(seed);
  for (int t = 0; t < trials; ++t) {
    ProbePoint pt{Eigen::VectorXd(d), Eigen::VectorXd(d), sample_probe_measure(sampler, d, rng)};
    for (int c = 0; c < d; ++c) {
      pt.x[c] = rng.uniform(-sampler.x_box, sampler.x_box);
      pt.p[c] = rng.uniform(-sampler.p_box, sampler.p_box);
    }
    Eigen::VectorXd xt = pt.mu.point(static_cast<int>(rng.uniform() * pt.mu.size()) % pt.mu.size());

    auto record = [&](Q q, double value) {
      auto& probe = pr[q];
      probe.samples++;
      bool worse = probe.larger_is_safe ? value < probe.worst : value > probe.worst;
      if (worse) {
        probe.worst = value;
        probe.x = pt.x;
        probe.p = pt.p;
        probe.mu_mean = pt.mu.mean();
        probe.mu_atoms = pt.mu.size();
      }
    };

    Eigen::MatrixXd hpp = model.h_dpp(pt.x, pt.mu, pt.p);
    require_finite(hpp, "h_dpp");
    record(kSymHdpp, (hpp - hpp.transpose()).cwiseAbs().maxCoeff());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (hpp + hpp.transpose()));
    record(kMinEigHdpp, es.eigenvalues().minCoeff());
    record(kNormHdpp, operator_norm(hpp));

    Eigen::MatrixXd hxp = model.h_dxp(pt.x, pt.mu, pt.p);
    require_finite(hxp, "h_dxp");
    record(kNormHdxp, operator_norm(hxp));

    Eigen::MatrixXd hxx = model.h_dxx(pt.x, pt.mu, pt.p);
    require_finite(hxx, "h_dxx");
    record(kNormHdxx, operator_norm(hxx));

    Eigen::MatrixXd hxm = model.h_dxmu(pt.x, pt.mu, xt, pt.p);
    require_finite(hxm, "h_dxmu");
    record(kNormHdxmu, operator_norm(hxm));

    Eigen::MatrixXd hpm = model.h_dpmu(pt.x, pt.mu, xt, pt.p);
    require_finite(hpm, "h_dpmu");
    record(kNormHdpmu, operator_norm(hpm));

    Eigen::MatrixXd gxx = model.g_dxx(pt.x, pt.mu);
    require_finite(gxx, "g_dxx");
    record(kSymGdxx, (gxx - gxx.transpose()).cwiseAbs().maxCoeff());
    record(kNormGdxx, operator_norm(gxx));

    Eigen::MatrixXd gxm = model.g_dxmu(pt.x, pt.mu, xt);
    require_finite(gxm, "g_dxmu");
    record(kNormGdxmu, operator_norm(gxm));

    double h = model.hamiltonian(pt.x, pt.mu, pt.p);
    require_finite(h, "hamiltonian");
    Eigen::VectorXd hp = model.h_dp(pt.x, pt.mu, pt.p);
    require_finite(hp, "h_dp");
    require_finite(model.h_dx(pt.x, pt.mu, pt.p), "h_dx");
    record(kCoercivity, hp.dot(pt.p) - h);

    double g = model.terminal(pt.x, pt.mu);
    require_finite(g, "terminal");
    require_finite(model.g_dx(pt.x, pt.mu), "g_dx");
    record(kLowerBoundG, g);
  }

  rep.pass = true;
  for (auto& probe : pr) {
    probe.pass = probe.larger_is_safe ? probe.worst >= probe.bound - tol
                                      : probe.worst <= probe.bound + tol;
    rep.pass = rep.pass && probe.pass;
  }
  return rep;
}

double legendre_transform(const ModelSpec& model, const Eigen::VectorXd& x,
                          const EmpiricalMeasure& mu, const Eigen::VectorXd& a,
                          Eigen::VectorXd* maximizer) {
  // maximize phi(p) = -<p, a> - H(x, mu, p); strongly concave by c0
  auto phi = [&](const Eigen::VectorXd& p) { return -p.dot(a) - model.hamiltonian(x, mu, p); };
  Eigen::VectorXd p = Eigen::VectorXd::Zero(model.dim);
  double val = phi(p);
  for (int it = 0; it < 100; ++it) {
    Eigen::VectorXd grad = -a - model.h_dp(x, mu, p);
    if (grad.norm() <= 1e-10) {
      if (maximizer) *maximizer = p;
      return val;
    }
    Eigen::MatrixXd hess = model.h_dpp(x, mu, p);  // = -phi''
    Eigen::VectorXd step = hess.ldlt().solve(grad);
    if (!step.allFinite()) throw std::runtime_error("legendre_transform: singular h_dpp");
    double lambda = 1.0;
    for (int damp = 0; damp < 60; ++damp) {
      Eigen::VectorXd cand = p + lambda * step;
      double cand_val = phi(cand);
      if (cand_val > val) {
        p = cand;
        val = cand_val;
        break;
      }
      lambda *= 0.5;
      if (damp == 59)
        throw std::runtime_error("legendre_transform: no ascent direction (convexity violated?)");
    }
  }
  throw std::runtime_error("legendre_transform: Newton did not converge in 100 iterations");
}

namespace {

struct FdWorst {
  double rel = 0.0;
  Eigen::VectorXd x, p;
};

void track(std::map<std::string, FdWorst>& worst, const std::string& name, double rel,
           const Eigen::VectorXd& x, const Eigen::VectorXd& p) {
  auto& w = worst[name];
  if (rel > w.rel) {
    w.rel = rel;
    w.x = x;
    w.p = p;
  }
}

double rel_err(double got, double want, double scale) {
  return std::abs(got - want) / std::max({1.0, scale, std::abs(want)});
}

}  // namespace

FdReport fd_consistency_check(const ModelSpec& model, int probes, double tol, std::uint64_t seed) {
  if (probes < 1) throw std::invalid_argument("fd_consistency_check: probes must be >= 1");
  const int d = model.dim;
  Rng rng(seed);
  SamplerConfig sampler;
  sampler.x_box = 2.0;
  sampler.p_box = 2.0;
  sampler.max_atoms = 16;
  std::map<std::string, FdWorst> worst;

  for (int t = 0; t < probes; ++t) {
    Eigen::VectorXd x(d), p(d);
    for (int c = 0; c < d; ++c) {
      x[c] = rng.uniform(-sampler.x_box, sampler.x_box);
      p[c] = rng.uniform(-sampler.p_box, sampler.p_box);
    }
    EmpiricalMeasure mu = sample_probe_measure(sampler, d, rng);
    const double h = 1e-5 * std::max(1.0, std::max(x.cwiseAbs().maxCoeff(), p.cwiseAbs().maxCoeff()));

    auto bump = [](const Eigen::VectorXd& v, int c, double eps) {
      Eigen::VectorXd out = v;
      out[c] += eps;
      return out;
    };

    // first derivatives of H and G
    Eigen::VectorXd hx = model.h_dx(x, mu, p), hp = model.h_dp(x, mu, p);
    Eigen::VectorXd gx = model.g_dx(x, mu);
    for (int c = 0; c < d; ++c) {
      double fd_x = (model.hamiltonian(bump(x, c, h), mu, p) - model.hamiltonian(bump(x, c, -h), mu, p)) / (2 * h);
      track(worst, "h_dx", rel_err(hx[c], fd_x, hp.norm()), x, p);
      double fd_p = (model.hamiltonian(x, mu, bump(p, c, h)) - model.hamiltonian(x, mu, bump(p, c, -h))) / (2 * h);
      track(worst, "h_dp", rel_err(hp[c], fd_p, hp.norm()), x, p);
      double fd_g = (model.terminal(bump(x, c, h), mu) - model.terminal(bump(x, c, -h), mu)) / (2 * h);
      track(worst, "g_dx", rel_err(gx[c], fd_g, gx.norm()), x, p);
    }

    // second derivatives against FD of the first
    Eigen::MatrixXd hxx = model.h_dxx(x, mu, p), hxp = model.h_dxp(x, mu, p), hpp = model.h_dpp(x, mu, p);
    Eigen::MatrixXd gxx = model.g_dxx(x, mu);
    for (int c = 0; c < d; ++c) {
      Eigen::VectorXd fd = (model.h_dx(bump(x, c, h), mu, p) - model.h_dx(bump(x, c, -h), mu, p)) / (2 * h);
      for (int r = 0; r < d; ++r) track(worst, "h_dxx", rel_err(hxx(r, c), fd[r], 1.0), x, p);
      fd = (model.h_dp(bump(x, c, h), mu, p) - model.h_dp(bump(x, c, -h), mu, p)) / (2 * h);
      // h_dxp(i, j) = d_{x_i} d_{p_j} H, so column j of the FD in x matches row c
      for (int r = 0; r < d; ++r) track(worst, "h_dxp", rel_err(hxp(c, r), fd[r], 1.0), x, p);
      fd = (model.h_dp(x, mu, bump(p, c, h)) - model.h_dp(x, mu, bump(p, c, -h))) / (2 * h);
      for (int r = 0; r < d; ++r) track(worst, "h_dpp", rel_err(hpp(r, c), fd[r], 1.0), x, p);
      fd = (model.g_dx(bump(x, c, h), mu) - model.g_dx(bump(x, c, -h), mu)) / (2 * h);
      for (int r = 0; r < d; ++r) track(worst, "g_dxx", rel_err(gxx(r, c), fd[r], 1.0), x, p);
    }

    // measure derivatives via the single-atom perturbation characterization:
    // shifting atom i (weight w) by eps*e_c moves h_dx by w*h_dxmu(.,.,x_i,.)*eps*e_c
    int atom = static_cast<int>(rng.uniform() * mu.size()) % mu.size();
    double w = mu.weight(atom);
    Eigen::VectorXd xt = mu.point(atom);
    double hm = 1e-4;  // atom shifts need a slightly larger step
    for (int c = 0; c < d; ++c) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(d);
      e[c] = hm;
      EmpiricalMeasure up = mu.with_atom_shifted(atom, e);
      EmpiricalMeasure dn = mu.with_atom_shifted(atom, -e);
      Eigen::VectorXd fd = (model.h_dx(x, up, p) - model.h_dx(x, dn, p)) / (2 * hm * w);
      Eigen::MatrixXd hxm = model.h_dxmu(x, mu, xt, p);
      for (int r = 0; r < d; ++r) track(worst, "h_dxmu", rel_err(hxm(r, c), fd[r], 1.0), x, p);
      fd = (model.h_dp(x, up, p) - model.h_dp(x, dn, p)) / (2 * hm * w);
      Eigen::MatrixXd hpm = model.h_dpmu(x, mu, xt, p);
      for (int r = 0; r < d; ++r) track(worst, "h_dpmu", rel_err(hpm(r, c), fd[r], 1.0), x, p);
      fd = (model.g_dx(x, up) - model.g_dx(x, dn)) / (2 * hm * w);
      Eigen::MatrixXd gxm = model.g_dxmu(x, mu, xt);
      for (int r = 0; r < d; ++r) track(worst, "g_dxmu", rel_err(gxm(r, c), fd[r], 1.0), x, p);
    }
  }

  FdReport rep;
  for (const auto& [name, w] : worst) {
    rep.worst_rel_error = std::max(rep.worst_rel_error, w.rel);
    if (w.rel > tol) {
      rep.pass = false;
      rep.issues.push_back({name, w.rel, w.x, w.p});
    }
  }
  return rep;
}

}  // namespace mfg
