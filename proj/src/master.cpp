#include "mfg/master.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <sstream>

#include "mfg/io.hpp"

namespace mfg {

namespace {

std::int64_t time_bits(double t) {
  // times are snapped to a fine lattice so that bit-keys ignore fp dust
  return static_cast<std::int64_t>(std::llround(t * 1e9));
}

}  // namespace

// Terminal gradient data of an inner interval: the next interval's solution
// evaluated at each scenario's boundary measure.
class StitchedTerminal : public TerminalCondition {
 public:
  StitchedTerminal(const MasterSolution* sol, double boundary, int depth)
      : sol_(sol), boundary_(boundary), depth_(depth) {}

  void prepare(const std::vector<ScenarioFlow>& flows) override {
    children_.clear();
    measures_.clear();
    children_.reserve(flows.size());
    measures_.reserve(flows.size());
    for (const auto& f : flows) {
      measures_.push_back(f.rho.back());
      children_.push_back(sol_->solve_for(boundary_, f.rho.back(), depth_));
    }
  }

  Eigen::VectorXd grad(int scenario, const Eigen::VectorXd& x) const override {
    return children_[scenario]->field.eval(0, x);
  }

  double value(int scenario, const Eigen::VectorXd& x) const override {
    return sol_->eval_V_impl(boundary_, x, measures_[scenario], depth_);
  }

  Eigen::VectorXd grad_stderr(int scenario, const Eigen::VectorXd& x) const override {
    return children_[scenario]->stderr_field.eval(0, x).cwiseAbs();
  }

  bool is_exact_terminal() const override { return false; }

 private:
  const MasterSolution* sol_;
  double boundary_;
  int depth_;
  std::vector<IntervalSolvePtr> children_;
  std::vector<EmpiricalMeasure> measures_;
};

MasterSolution::MasterSolution(std::shared_ptr<const ModelSpec> model, MasterParams params,
                               EmpiricalMeasure mu0)
    : model_(std::move(model)), params_(std::move(params)), mu0_(std::move(mu0)) {
  if (params_.interval_len <= 0 || params_.min_interval_len <= 0 ||
      params_.min_interval_len > params_.interval_len)
    throw std::invalid_argument("MasterParams: bad interval lengths");
  if (params_.dt <= 0) throw std::invalid_argument("MasterParams: bad dt");
}

double MasterSolution::right_boundary(double t) const {
  const double T = horizon();
  if (t >= T - 1e-12) throw std::invalid_argument("right_boundary: t at or beyond the horizon");
  double len = params_.interval_len;
  double j = std::floor((T - t - 1e-12) / len);
  double b = T - j * len;
  if (b <= t + 1e-12) b = std::min(T, b + len);
  return b;
}

int MasterSolution::scenarios_at_depth(int depth) const {
  int M = params_.picard.scenarios;
  for (int k = 0; k < depth; ++k) {
    if (M <= 1) return 1;
    if (M == 2) return 2;
    M = std::max(2, (M / params_.child_scenario_divisor / 2) * 2);
  }
  return M;
}

double MasterSolution::coverage_floor() const {
  std::lock_guard<std::recursive_mutex> lock(*mutex_);
  double floor_t = horizon();
  for (const auto& [key, solve] : cache_)
    floor_t = std::min(floor_t, solve->grid.t0);
  return floor_t;
}

IntervalSolvePtr MasterSolution::solve_for(double t, const EmpiricalMeasure& mu, int depth) const {
  const double T = horizon();
  // an initial measure beyond the guard box signals that the upstream flow
  // already blew up; no interval length can fix that here
  {
    GridSpec spec = GridSpec::cube(model_->dim, params_.picard.box_lo, params_.picard.box_hi,
                                   params_.picard.grid_pts);
    for (int i = 0; i < mu.size(); ++i)
      if (!spec.within_guard(mu.point(i), params_.picard.guard_factor))
        throw GlobalSolveError(
            t, right_boundary(t),
            "initial measure reached the extrapolation guard box at t = " + std::to_string(t) +
                "; the upstream measure flow blew up (non-monotone data?)");
  }
  double b = right_boundary(t);
  while (true) {
    CacheKey key{time_bits(t), time_bits(b), scenarios_at_depth(depth),
                 measure_bit_hash(quantize_cube(mu, params_.cache_quantize_n))};
    {
      std::lock_guard<std::recursive_mutex> lock(*mutex_);
      auto it = cache_.find(key);
      if (it != cache_.end()) return it->second;
    }

    PicardParams p = params_.picard;
    p.scenarios = scenarios_at_depth(depth);
    if (depth >= 1 && params_.child_particles > 0) p.particles = params_.child_particles;
    if (depth >= 1 && params_.child_grid_pts > 1) p.grid_pts = params_.child_grid_pts;
    p.seed = derive_seed(params_.picard.seed, static_cast<std::uint64_t>(key.t0_bits),
                         static_cast<std::uint64_t>(key.t1_bits), key.mu_hash);
    int steps = std::max(1, static_cast<int>(std::llround((b - t) / params_.dt)));
    TimeGrid grid(t, b, steps);

    std::shared_ptr<TerminalCondition> terminal;
    if (b >= T - 1e-12)
      terminal = std::make_shared<GTerminal>(model_);
    else
      terminal = std::make_shared<StitchedTerminal>(this, b, depth + 1);

    try {
      std::lock_guard<std::recursive_mutex> lock(*mutex_);
      auto it = cache_.find(key);
      if (it != cache_.end()) return it->second;
      IntervalSolvePtr s = picard_solve(model_, mu, grid, p, terminal);
      cache_.emplace(key, s);
      return s;
    } catch (const SolveFailure& f) {
      if (b - t <= params_.min_interval_len + 1e-12)
        throw GlobalSolveError(t, b,
                               std::string("global solve failed on [") + std::to_string(t) + ", " +
                                   std::to_string(b) + "] even at the minimum interval length: " +
                                   f.what());
      b = t + 0.5 * (b - t);
    }
  }
}

void MasterSolution::solve() {
  chain_.clear();
  chain_residuals_.clear();
  const double T = horizon();
  double t = 0.0;
  EmpiricalMeasure mu = mu0_;
  while (t < T - 1e-12) {
    IntervalSolvePtr s = solve_for(t, mu, 0);
    chain_.push_back(s);
    // residual between the stored terminal node and a fresh terminal average
    const GridSpec& spec = s->field.spec();
    double res = 0.0;
    int S = s->grid.steps;
    for (int g = 0; g < spec.total(); ++g) {
      Eigen::VectorXd x = spec.node_coord(g);
      Eigen::VectorXd avg = Eigen::VectorXd::Zero(model_->dim);
      for (int m = 0; m < static_cast<int>(s->flows.size()); ++m)
        avg += s->terminal->grad(m, x) / static_cast<double>(s->flows.size());
      res = std::max(res, (avg - s->field.eval(S, x)).cwiseAbs().maxCoeff());
    }
    chain_residuals_.push_back(res);
    mu = s->flows[0].rho.back();
    t = s->grid.t1;
  }
}

Eigen::VectorXd MasterSolution::eval_dxV(double t, const Eigen::VectorXd& x,
                                         const EmpiricalMeasure& mu) const {
  if (t >= horizon() - 1e-12) return model_->g_dx(x, mu);
  IntervalSolvePtr s = solve_for(t, mu, 0);
  return s->field.eval(0, x);
}

EvalDetail MasterSolution::eval_dxV_detailed(double t, const Eigen::VectorXd& x,
                                             const EmpiricalMeasure& mu) const {
  EvalDetail out;
  if (t >= horizon() - 1e-12) {
    out.value = model_->g_dx(x, mu);
    out.stderr_mc = Eigen::VectorXd::Zero(model_->dim);
    out.scenarios = 0;
    return out;
  }
  IntervalSolvePtr s = solve_for(t, mu, 0);
  out.value = s->field.eval(0, x);
  out.stderr_mc = s->stderr_field.eval(0, x).cwiseAbs();
  out.scenarios = static_cast<int>(s->flows.size());
  return out;
}

double MasterSolution::eval_V(double t, const Eigen::VectorXd& x,
                              const EmpiricalMeasure& mu) const {
  return eval_V_impl(t, x, mu, 0);
}

double MasterSolution::eval_V_impl(double t, const Eigen::VectorXd& x, const EmpiricalMeasure& mu,
                                   int depth) const {
  const double T = horizon();
  if (t >= T - 1e-12) return model_->terminal(x, mu);
  IntervalSolvePtr s = solve_for(t, mu, depth);
  const int M = static_cast<int>(s->flows.size());
  const int S = s->grid.steps;
  const double dt = s->grid.dt();
  const bool last = s->grid.t1 >= T - 1e-12;

  double avg = 0.0;
  for (int m = 0; m < M; ++m) {
    const ScenarioFlow& f = s->flows[m];
    Eigen::VectorXd state = x;
    double acc = 0.0;
    for (int j = 0; j < S; ++j) {
      Eigen::VectorXd y = s->field.eval(j, state);
      acc += dt * model_->hamiltonian(state, f.rho[j], y);
      if (model_->beta != 0.0) state += model_->beta * s->noise->increments(m).row(j).transpose();
    }
    double term = last ? model_->terminal(state, f.rho[S])
                       : eval_V_impl(s->grid.t1, state, f.rho[S], depth + 1);
    avg += (term - acc) / M;
  }
  return avg;
}

Eigen::VectorXd MasterSolution::eval_dxmuV(double t, const Eigen::VectorXd& x,
                                           const EmpiricalMeasure& mu,
                                           const Eigen::VectorXd& x_tilde, int axis,
                                           bool discrete_route) const {
  if (t >= horizon() - 1e-12)
    return model_->g_dxmu(x, mu, x_tilde).col(axis);
  IntervalSolvePtr s = solve_for(t, mu, 0);
  if (s->grid.t1 < horizon() - 1e-12)
    throw std::invalid_argument(
        "eval_dxmuV: t must lie in the final time interval (the mixed-derivative systems need "
        "exact terminal second derivatives); use a shorter horizon or a later t");
  if (!discrete_route) return solve_nabla_mu(*s, x, x_tilde, axis);

  int atom = -1;
  for (int i = 0; i < s->mu0.size(); ++i)
    if ((s->mu0.point(i) - x_tilde).cwiseAbs().maxCoeff() < 1e-12) {
      atom = i;
      break;
    }
  if (atom < 0)
    throw std::invalid_argument("eval_dxmuV: discrete route requires x_tilde to be an atom of mu");
  return solve_discrete_nabla_mu(*s, x, atom, axis);
}

Eigen::VectorXd MasterSolution::eval_dxV_alt_route(double t, const Eigen::VectorXd& x,
                                                   const EmpiricalMeasure& mu) const {
  if (t >= horizon() - 1e-12) return model_->g_dx(x, mu);
  IntervalSolvePtr s = solve_for(t, mu, 0);
  return eval_dxV_driftless_route(*s, x);
}

std::pair<double, double> MasterSolution::estimate_second_diff(
    double t, const EmpiricalMeasure& mu, const std::vector<Eigen::VectorXd>& probes,
    double h) const {
  double lo = std::numeric_limits<double>::infinity();
  double hi = -lo;
  for (const auto& x : probes) {
    double mid = eval_V(t, x, mu);
    for (int c = 0; c < model_->dim; ++c) {
      Eigen::VectorXd e = Eigen::VectorXd::Zero(model_->dim);
      e[c] = h;
      double quot = (eval_V(t, x + e, mu) + eval_V(t, x - e, mu) - 2.0 * mid) / (h * h);
      lo = std::min(lo, quot);
      hi = std::max(hi, quot);
    }
  }
  return {lo, hi};
}

DecouplingConsistencyReport MasterSolution::decoupling_consistency(
    double t_check, const std::vector<Eigen::VectorXd>& probes) const {
  if (chain_.empty()) throw std::logic_error("decoupling_consistency: call solve() first");
  const IntervalSolve* seg = nullptr;
  for (const auto& s : chain_)
    if (t_check >= s->grid.t0 - 1e-12 && t_check < s->grid.t1 - 1e-12) {
      seg = s.get();
      break;
    }
  if (!seg) throw std::invalid_argument("decoupling_consistency: t_check outside (t0, T)");
  int k = static_cast<int>(std::llround((t_check - seg->grid.t0) / seg->grid.dt()));
  k = std::min(std::max(k, 0), seg->grid.steps);
  double t_node = seg->grid.node(k);
  const int M = static_cast<int>(seg->flows.size());

  DecouplingConsistencyReport rep;
  rep.t_check = t_node;
  rep.scenarios = M;
  for (const auto& x : probes) {
    Eigen::VectorXd stored = seg->field.eval(k, x);
    Eigen::MatrixXd diffs(M, model_->dim);
    for (int m = 0; m < M; ++m) {
      // fresh conditional evaluation from this scenario's measure; children
      // run on the reduced scenario budget
      Eigen::VectorXd fresh =
          (t_node >= horizon() - 1e-12)
              ? model_->g_dx(x, seg->flows[m].rho[k])
              : solve_for(t_node, seg->flows[m].rho[k], 1)->field.eval(0, x);
      diffs.row(m) = (fresh - stored).transpose();
    }
    ConsistencyRow row;
    row.x = x;
    row.discrepancy = diffs.colwise().mean().cwiseAbs().maxCoeff();
    if (M > 1) {
      Eigen::RowVectorXd mean = diffs.colwise().mean();
      Eigen::RowVectorXd sd =
          ((diffs.rowwise() - mean).array().square().colwise().sum() / (M - 1)).sqrt();
      row.sigma = sd.maxCoeff();
    }
    rep.rows.push_back(row);
    rep.max_discrepancy = std::max(rep.max_discrepancy, row.discrepancy);
    rep.max_sigma = std::max(rep.max_sigma, row.sigma);
  }
  rep.mc_bound = 3.0 * rep.max_sigma / std::sqrt(static_cast<double>(std::max(M, 1)));
  return rep;
}

Eigen::MatrixXd MasterSolution::z0_reconstruct(double t, const Eigen::VectorXd& x,
                                               const EmpiricalMeasure& mu,
                                               int atom_subsample) const {
  const int d = model_->dim;
  IntervalSolvePtr s = solve_for(t, mu, 0);
  Eigen::MatrixXd dxx = eval_derivative_matrix(s->field_deriv, 0, x, d);
  Eigen::MatrixXd mixed = Eigen::MatrixXd::Zero(d, d);
  int n = s->mu0.size();
  int stride = std::max(1, n / std::max(1, atom_subsample));
  int used = 0;
  for (int i = 0; i < n; i += stride) {
    for (int c = 0; c < d; ++c)
      mixed.col(c) += eval_dxmuV(t, x, mu, s->mu0.point(i), c, false);
    ++used;
  }
  mixed /= std::max(1, used);
  return model_->beta * (dxx + mixed);
}

nlohmann::json MasterSolution::manifest() const {
  nlohmann::json j;
  j["model"] = model_->name;
  j["beta"] = model_->beta;
  j["horizon"] = horizon();
  j["dt"] = params_.dt;
  j["interval_len"] = params_.interval_len;
  j["seed"] = params_.picard.seed;
  j["particles"] = params_.picard.particles;
  j["scenarios"] = params_.picard.scenarios;
  j["grid_pts"] = params_.picard.grid_pts;
  j["tol"] = params_.picard.tol;
  auto intervals = nlohmann::json::array();
  for (size_t i = 0; i < chain_.size(); ++i) {
    const auto& s = chain_[i];
    nlohmann::json e;
    e["t0"] = s->grid.t0;
    e["t1"] = s->grid.t1;
    e["steps"] = s->grid.steps;
    e["iterations"] = s->diag.iterations;
    e["distances"] = s->diag.distances;
    e["ratios"] = s->diag.ratios;
    e["converged"] = s->diag.converged;
    e["stitch_residual"] = chain_residuals_[i];
    intervals.push_back(e);
  }
  j["intervals"] = intervals;
  return j;
}

void MasterSolution::persist(const std::filesystem::path& dir, bool write_flows) const {
  namespace fs = std::filesystem;
  fs::create_directories(dir);
  nlohmann::json j = manifest();
  j["created_at"] = static_cast<std::uint64_t>(
      std::chrono::duration_cast<std::chrono::seconds>(
          std::chrono::system_clock::now().time_since_epoch())
          .count());
  write_text_file(dir / "solution.json", j.dump(2) + "\n");

  for (size_t i = 0; i < chain_.size(); ++i) {
    const auto& s = chain_[i];
    fs::path sub = dir / ("interval_" + std::to_string(i));
    fs::create_directories(sub);
    nlohmann::json meta;
    meta["t0"] = s->grid.t0;
    meta["t1"] = s->grid.t1;
    meta["steps"] = s->grid.steps;
    meta["dt"] = s->grid.dt();
    meta["seed"] = s->params.seed;
    meta["particles"] = s->mu0.size();
    meta["scenarios"] = static_cast<int>(s->flows.size());
    meta["grid_pts"] = s->field.spec().pts;
    meta["box_lo"] = s->params.box_lo;
    meta["box_hi"] = s->params.box_hi;
    meta["tol"] = s->params.tol;
    write_text_file(sub / "meta.json", meta.dump(2) + "\n");

    const GridSpec& spec = s->field.spec();
    for (int k = 0; k <= s->grid.steps; ++k) {
      std::ostringstream csv;
      for (int g = 0; g < spec.total(); ++g) {
        Eigen::VectorXd x = spec.node_coord(g);
        Eigen::VectorXd v = s->field.node_values(k).row(g).transpose();
        for (int c = 0; c < x.size(); ++c) csv << fmt17(x[c]) << ',';
        for (int c = 0; c < v.size(); ++c) csv << fmt17(v[c]) << (c + 1 < v.size() ? "," : "");
        csv << '\n';
      }
      write_text_file(sub / ("field_t" + std::to_string(k) + ".csv"), csv.str());
    }
    if (write_flows) {
      for (size_t m = 0; m < s->flows.size(); ++m) {
        std::ostringstream csv;
        const auto& f = s->flows[m];
        for (int k = 0; k <= s->grid.steps; ++k)
          for (int p = 0; p < f.X[k].rows(); ++p) {
            csv << k << ',' << p;
            for (int c = 0; c < f.X[k].cols(); ++c) csv << ',' << fmt17(f.X[k](p, c));
            for (int c = 0; c < f.Y[k].cols(); ++c) csv << ',' << fmt17(f.Y[k](p, c));
            csv << '\n';
          }
        write_text_file(sub / ("flow_s" + std::to_string(m) + ".csv"), csv.str());
      }
    }
  }
}

nlohmann::json DecouplingConsistencyReport::to_json() const {
  nlohmann::json j;
  j["t_check"] = t_check;
  j["max_discrepancy"] = max_discrepancy;
  j["max_sigma"] = max_sigma;
  j["mc_bound"] = mc_bound;
  j["scenarios"] = scenarios;
  auto rows_j = nlohmann::json::array();
  for (const auto& r : rows) {
    nlohmann::json e;
    e["x"] = std::vector<double>(r.x.data(), r.x.data() + r.x.size());
    e["discrepancy"] = r.discrepancy;
    e["sigma"] = r.sigma;
    rows_j.push_back(e);
  }
  j["rows"] = rows_j;
  return j;
}

MasterSolution global_solve(std::shared_ptr<const ModelSpec> model, const MasterParams& params,
                            const EmpiricalMeasure& mu0) {
  MasterSolution sol(std::move(model), params, mu0);
  sol.solve();
  return sol;
}

}  // namespace mfg
