#include "mfg/measure.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <limits>
#include <map>
#include <numeric>
#include <queue>
#include <sstream>
#include <stdexcept>

#include "mfg/io.hpp"
#include "mfg/rng.hpp"

namespace mfg {

EmpiricalMeasure::EmpiricalMeasure(Eigen::MatrixXd points, Eigen::VectorXd weights)
    : points_(std::move(points)), weights_(std::move(weights)) {
  if (points_.rows() == 0) throw std::invalid_argument("empirical measure needs at least one atom");
  if (weights_.size() != points_.rows())
    throw std::invalid_argument("weights/points size mismatch");
  if (!points_.allFinite() || !weights_.allFinite())
    throw std::invalid_argument("non-finite atom data");
  if ((weights_.array() <= 0.0).any())
    throw std::invalid_argument("weights must be positive");
  double s = weights_.sum();
  if (std::abs(s - 1.0) > 1e-12)
    throw std::invalid_argument("weights must sum to 1 (got " + std::to_string(s) + ")");
  mean_ = points_.transpose() * weights_;
  second_moment_ = (points_.rowwise().squaredNorm().array() * weights_.array()).sum();
}

EmpiricalMeasure EmpiricalMeasure::uniform(Eigen::MatrixXd points) {
  Eigen::Index n = points.rows();
  return EmpiricalMeasure(std::move(points), Eigen::VectorXd::Constant(n, 1.0 / static_cast<double>(n)));
}

EmpiricalMeasure EmpiricalMeasure::dirac(const Eigen::VectorXd& x) {
  Eigen::MatrixXd pts(1, x.size());
  pts.row(0) = x.transpose();
  return uniform(std::move(pts));
}

EmpiricalMeasure EmpiricalMeasure::translated(const Eigen::VectorXd& v) const {
  Eigen::MatrixXd pts = points_;
  pts.rowwise() += v.transpose();
  return EmpiricalMeasure(std::move(pts), weights_);
}

EmpiricalMeasure EmpiricalMeasure::with_atom_shifted(int atom, const Eigen::VectorXd& delta) const {
  Eigen::MatrixXd pts = points_;
  pts.row(atom) += delta.transpose();
  return EmpiricalMeasure(std::move(pts), weights_);
}

std::string EmpiricalMeasure::to_csv() const {
  std::ostringstream out;
  for (int i = 0; i < size(); ++i) {
    out << fmt17(weights_[i]);
    for (int c = 0; c < dim(); ++c) out << ',' << fmt17(points_(i, c));
    out << '\n';
  }
  return out.str();
}

EmpiricalMeasure EmpiricalMeasure::from_csv(const std::string& body) {
  std::istringstream in(body);
  std::string line;
  std::vector<std::vector<double>> rows;
  while (std::getline(in, line)) {
    if (line.empty() || line == "\r") continue;
    auto cells = split_csv_line(line);
    std::vector<double> row;
    row.reserve(cells.size());
    for (const auto& c : cells) row.push_back(std::strtod(c.c_str(), nullptr));
    rows.push_back(std::move(row));
  }
  if (rows.empty()) throw std::invalid_argument("empty measure CSV");
  int d = static_cast<int>(rows[0].size()) - 1;
  Eigen::MatrixXd pts(rows.size(), d);
  Eigen::VectorXd w(rows.size());
  for (size_t i = 0; i < rows.size(); ++i) {
    if (static_cast<int>(rows[i].size()) != d + 1)
      throw std::invalid_argument("ragged measure CSV");
    w[static_cast<Eigen::Index>(i)] = rows[i][0];
    for (int c = 0; c < d; ++c) pts(static_cast<Eigen::Index>(i), c) = rows[i][c + 1];
  }
  return EmpiricalMeasure(std::move(pts), std::move(w));
}

nlohmann::json EmpiricalMeasure::to_json() const {
  nlohmann::json j;
  j["weights"] = std::vector<double>(weights_.data(), weights_.data() + weights_.size());
  auto pts = nlohmann::json::array();
  for (int i = 0; i < size(); ++i) {
    pts.push_back(std::vector<double>(points_.row(i).begin(), points_.row(i).end()));
  }
  j["points"] = pts;
  return j;
}

EmpiricalMeasure EmpiricalMeasure::from_json(const nlohmann::json& j) {
  auto w = j.at("weights").get<std::vector<double>>();
  auto pts = j.at("points").get<std::vector<std::vector<double>>>();
  if (pts.empty()) throw std::invalid_argument("empty measure JSON");
  Eigen::MatrixXd p(pts.size(), pts[0].size());
  Eigen::VectorXd wv(w.size());
  for (size_t i = 0; i < pts.size(); ++i) {
    wv[static_cast<Eigen::Index>(i)] = w[i];
    for (size_t c = 0; c < pts[i].size(); ++c) p(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(c)) = pts[i][c];
  }
  return EmpiricalMeasure(std::move(p), std::move(wv));
}

Eigen::VectorXd Coupling::source_marginal(int n) const {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(n);
  for (const auto& e : entries) m[e.source] += e.mass;
  return m;
}

Eigen::VectorXd Coupling::target_marginal(int m_atoms) const {
  Eigen::VectorXd m = Eigen::VectorXd::Zero(m_atoms);
  for (const auto& e : entries) m[e.target] += e.mass;
  return m;
}

namespace {

double atom_cost(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu, int i, int j, int q) {
  double d = (mu.points().row(i) - nu.points().row(j)).norm();
  return q == 1 ? d : d * d;
}

// Exact 1-D transport via the monotone (quantile) coupling.
Coupling coupling_1d(int q, const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  std::vector<int> is(mu.size()), js(nu.size());
  std::iota(is.begin(), is.end(), 0);
  std::iota(js.begin(), js.end(), 0);
  std::sort(is.begin(), is.end(), [&](int a, int b) { return mu.points()(a, 0) < mu.points()(b, 0); });
  std::sort(js.begin(), js.end(), [&](int a, int b) { return nu.points()(a, 0) < nu.points()(b, 0); });

  Coupling plan;
  size_t a = 0, b = 0;
  double ra = mu.weight(is[0]), rb = nu.weight(js[0]);
  while (true) {
    double m = std::min(ra, rb);
    plan.entries.push_back({is[a], js[b], m});
    plan.cost += m * atom_cost(mu, nu, is[a], js[b], q);
    ra -= m;
    rb -= m;
    if (ra <= 1e-15) {
      if (++a >= is.size()) break;
      ra = mu.weight(is[a]);
    }
    if (rb <= 1e-15) {
      if (++b >= js.size()) break;
      rb = nu.weight(js[b]);
    }
  }
  return plan;
}

// Successive-shortest-path min-cost flow on the complete bipartite graph.
// Exact for real-valued weights; the number of augmentations is bounded by
// n + m - 1 because each one saturates a source or a sink.
Coupling coupling_flow(int q, const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  const int n = mu.size(), m = nu.size();
  if (n > 512 || m > 512)
    throw std::invalid_argument("exact transport capped at 512 atoms per side for d > 1");

  Eigen::MatrixXd cost(n, m);
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j) cost(i, j) = atom_cost(mu, nu, i, j, q);

  Eigen::VectorXd supply = mu.weights();
  Eigen::VectorXd demand = nu.weights();
  Eigen::MatrixXd flow = Eigen::MatrixXd::Zero(n, m);
  // Johnson potentials keep reduced costs nonnegative for Dijkstra.
  Eigen::VectorXd pot_u = Eigen::VectorXd::Zero(n), pot_v = Eigen::VectorXd::Zero(m);

  const double inf = std::numeric_limits<double>::infinity();
  const int max_augmentations = (n + m) * 32 + 64;
  int augmentations = 0;
  while (true) {
    int start = -1;
    for (int i = 0; i < n; ++i)
      if (supply[i] > 1e-15) { start = i; break; }
    if (start < 0) break;
    if (++augmentations > max_augmentations)
      throw std::runtime_error("transport solver exceeded augmentation budget");

    // Dijkstra over the residual bipartite graph from all surplus sources.
    Eigen::VectorXd du = Eigen::VectorXd::Constant(n, inf), dv = Eigen::VectorXd::Constant(m, inf);
    std::vector<int> prev_v(m, -1);          // source atom used to reach target j
    std::vector<int> prev_u(n, -1);          // target atom whose residual arc reached source i
    std::vector<bool> done_u(n, false), done_v(m, false);
    using Node = std::pair<double, int>;     // (dist, id); id < n => source, else target
    std::priority_queue<Node, std::vector<Node>, std::greater<>> heap;
    for (int i = 0; i < n; ++i)
      if (supply[i] > 1e-15) {
        du[i] = 0.0;
        heap.push({0.0, i});
      }
    while (!heap.empty()) {
      auto [dist, id] = heap.top();
      heap.pop();
      if (id < n) {
        int i = id;
        if (done_u[i] || dist > du[i] + 1e-18) continue;
        done_u[i] = true;
        for (int j = 0; j < m; ++j) {
          double rc = cost(i, j) - pot_u[i] - pot_v[j];
          if (rc < 0) rc = 0;  // clamp fp drift
          if (du[i] + rc < dv[j] - 1e-18) {
            dv[j] = du[i] + rc;
            prev_v[j] = i;
            heap.push({dv[j], n + j});
          }
        }
      } else {
        int j = id - n;
        if (done_v[j] || dist > dv[j] + 1e-18) continue;
        done_v[j] = true;
        for (int i = 0; i < n; ++i) {
          if (flow(i, j) <= 1e-15) continue;  // residual arc j -> i
          double rc = -(cost(i, j) - pot_u[i] - pot_v[j]);
          if (rc < 0) rc = 0;
          if (dv[j] + rc < du[i] - 1e-18) {
            du[i] = dv[j] + rc;
            prev_u[i] = j;
            heap.push({du[i], i});
          }
        }
      }
    }

    // cheapest reachable target with unmet demand
    int best = -1;
    double best_d = inf;
    for (int j = 0; j < m; ++j)
      if (demand[j] > 1e-15 && dv[j] < best_d) {
        best_d = dv[j];
        best = j;
      }
    if (best < 0) throw std::runtime_error("transport: no augmenting path (imbalanced weights?)");

    // bottleneck along the alternating path
    double push = demand[best];
    for (int j = best;;) {
      int i = prev_v[j];
      if (prev_u[i] == -1) {
        push = std::min(push, supply[i]);
        break;
      }
      push = std::min(push, flow(i, prev_u[i]));
      j = prev_u[i];
    }
    for (int j = best;;) {
      int i = prev_v[j];
      flow(i, j) += push;
      if (prev_u[i] == -1) {
        supply[i] -= push;
        break;
      }
      flow(i, prev_u[i]) -= push;
      j = prev_u[i];
    }
    demand[best] -= push;

    // potential update keeps reduced costs nonnegative and flow arcs tight:
    // source potentials decrease by the (capped) distance, target potentials
    // increase by it
    for (int i = 0; i < n; ++i)
      if (du[i] < inf) pot_u[i] -= std::min(du[i], best_d);
    for (int j = 0; j < m; ++j)
      if (dv[j] < inf) pot_v[j] += std::min(dv[j], best_d);
  }

  Coupling plan;
  for (int i = 0; i < n; ++i)
    for (int j = 0; j < m; ++j)
      if (flow(i, j) > 1e-15) {
        plan.entries.push_back({i, j, flow(i, j)});
        plan.cost += flow(i, j) * cost(i, j);
      }
  return plan;
}

}  // namespace

Coupling optimal_coupling(int q, const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  if (q != 1 && q != 2) throw std::invalid_argument("wasserstein: q must be 1 or 2");
  if (mu.dim() != nu.dim()) throw std::invalid_argument("wasserstein: dimension mismatch");
  if (mu.dim() == 1) return coupling_1d(q, mu, nu);
  return coupling_flow(q, mu, nu);
}

double wasserstein(int q, const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  Coupling plan = optimal_coupling(q, mu, nu);
  return q == 1 ? plan.cost : std::sqrt(plan.cost);
}

Coupling optimal_pairing(const EmpiricalMeasure& mu, const EmpiricalMeasure& nu) {
  if (mu.size() != nu.size())
    throw std::invalid_argument("optimal_pairing: atom counts differ (resample first)");
  const int n = mu.size();
  double w = 1.0 / static_cast<double>(n);
  auto uniformish = [&](const EmpiricalMeasure& m) {
    return (m.weights().array() - w).abs().maxCoeff() < 1e-12;
  };
  if (!uniformish(mu) || !uniformish(nu))
    throw std::invalid_argument("optimal_pairing: weights must be uniform");

  if (mu.dim() == 1) {
    // monotone matching
    std::vector<int> is(n), js(n);
    std::iota(is.begin(), is.end(), 0);
    std::iota(js.begin(), js.end(), 0);
    std::sort(is.begin(), is.end(), [&](int a, int b) { return mu.points()(a, 0) < mu.points()(b, 0); });
    std::sort(js.begin(), js.end(), [&](int a, int b) { return nu.points()(a, 0) < nu.points()(b, 0); });
    Coupling plan;
    for (int r = 0; r < n; ++r) {
      plan.entries.push_back({is[r], js[r], w});
      plan.cost += w * atom_cost(mu, nu, is[r], js[r], 2);
    }
    std::sort(plan.entries.begin(), plan.entries.end(),
              [](const CouplingEntry& a, const CouplingEntry& b) { return a.source < b.source; });
    return plan;
  }

  Coupling plan = coupling_flow(2, mu, nu);
  // uniform supplies make the optimal flow a permutation; merge fp slivers
  std::vector<CouplingEntry> best(n);
  std::vector<double> best_mass(n, 0.0);
  for (const auto& e : plan.entries) {
    if (e.mass > best_mass[e.source]) {
      best_mass[e.source] = e.mass;
      best[e.source] = e;
    }
  }
  Coupling out;
  out.entries.reserve(n);
  for (int i = 0; i < n; ++i) {
    if (best_mass[i] < w * 0.999)
      throw std::runtime_error("optimal_pairing: flow solution is not an assignment");
    out.entries.push_back({i, best[i].target, w});
    out.cost += w * atom_cost(mu, nu, i, best[i].target, 2);
  }
  return out;
}

EmpiricalMeasure quantize_cube(const EmpiricalMeasure& mu, int n) {
  if (n < 3) throw std::invalid_argument("quantize_cube: n must be >= 3");
  const int d = mu.dim();
  const double nd = static_cast<double>(n);
  const double clamp = static_cast<double>(n) * static_cast<double>(n);
  std::map<std::vector<double>, double> cells;
  for (int i = 0; i < mu.size(); ++i) {
    std::vector<double> corner(d);
    for (int c = 0; c < d; ++c) {
      double idx = std::floor(mu.points()(i, c) * nd);
      idx = std::min(std::max(idx, -clamp), clamp);
      corner[c] = idx / nd;
    }
    cells[corner] += mu.weight(i);
  }
  Eigen::MatrixXd pts(cells.size(), d);
  Eigen::VectorXd w(cells.size());
  Eigen::Index r = 0;
  for (const auto& [corner, mass] : cells) {
    for (int c = 0; c < d; ++c) pts(r, c) = corner[c];
    w[r] = mass;
    ++r;
  }
  return EmpiricalMeasure(std::move(pts), std::move(w));
}

EmpiricalMeasure resample(const EmpiricalMeasure& mu, int n, std::uint64_t seed) {
  if (n < 1) throw std::invalid_argument("resample: n must be >= 1");
  Eigen::VectorXd cdf(mu.size());
  double acc = 0.0;
  for (int i = 0; i < mu.size(); ++i) {
    acc += mu.weight(i);
    cdf[i] = acc;
  }
  Rng rng(seed);
  Eigen::MatrixXd pts(n, mu.dim());
  for (int k = 0; k < n; ++k) {
    double u = rng.uniform() * acc;
    const double* lo = cdf.data();
    const double* hi = cdf.data() + cdf.size();
    int idx = static_cast<int>(std::upper_bound(lo, hi, u) - lo);
    if (idx >= mu.size()) idx = mu.size() - 1;
    pts.row(k) = mu.points().row(idx);
  }
  return EmpiricalMeasure::uniform(std::move(pts));
}

std::uint64_t measure_bit_hash(const EmpiricalMeasure& mu) {
  // sort atoms lexicographically so the hash ignores atom order
  std::vector<int> order(mu.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](int a, int b) {
    for (int c = 0; c < mu.dim(); ++c) {
      if (mu.points()(a, c) != mu.points()(b, c)) return mu.points()(a, c) < mu.points()(b, c);
    }
    return mu.weight(a) < mu.weight(b);
  });
  auto mix_double = [](std::uint64_t h, double x) {
    std::uint64_t bits;
    static_assert(sizeof(bits) == sizeof(x));
    std::memcpy(&bits, &x, sizeof(bits));
    return mix_seed(h ^ bits);
  };
  std::uint64_t h = 0x243f6a8885a308d3ull ^ static_cast<std::uint64_t>(mu.size());
  for (int i : order) {
    for (int c = 0; c < mu.dim(); ++c) h = mix_double(h, mu.points()(i, c));
    h = mix_double(h, mu.weight(i));
  }
  return h;
}

}  // namespace mfg
