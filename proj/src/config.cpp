#include "mfg/config.hpp"

#include <algorithm>
#include <sstream>

#include "mfg/io.hpp"
#include "mfg/rng.hpp"

namespace mfg {

namespace {

std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

double to_double(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    double x = std::stod(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (...) {
    throw ConfigError("bad numeric value for '" + key + "': " + v);
  }
}

long long to_int(const std::string& key, const std::string& v) {
  try {
    size_t pos = 0;
    long long x = std::stoll(v, &pos);
    if (pos != v.size()) throw std::invalid_argument("trailing");
    return x;
  } catch (...) {
    throw ConfigError("bad integer value for '" + key + "': " + v);
  }
}

bool to_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("bad boolean value for '" + key + "': " + v);
}

std::vector<std::string> split_list(const std::string& v) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : v) {
    if (ch == ',') {
      if (!trim(cur).empty()) out.push_back(trim(cur));
      cur.clear();
    } else {
      cur += ch;
    }
  }
  if (!trim(cur).empty()) out.push_back(trim(cur));
  return out;
}

}  // namespace

RunConfig RunConfig::parse(const std::string& text) {
  RunConfig cfg;
  std::istringstream in(text);
  std::string line, section;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    // strip comments
    size_t hash = line.find_first_of("#;");
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("malformed section header at line " + std::to_string(lineno));
      section = trim(line.substr(1, line.size() - 2));
      if (section != "model" && section != "solver" && section != "initial" && section != "run" &&
          section != "check")
        throw ConfigError("unknown section [" + section + "]");
      continue;
    }
    size_t eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("expected key = value at line " + std::to_string(lineno));
    std::string key = trim(line.substr(0, eq));
    std::string val = trim(line.substr(eq + 1));
    std::string qual = section + "." + key;

    if (qual == "model.name") cfg.model_name = val;
    else if (qual == "model.a") cfg.lq.a = to_double(qual, val);
    else if (qual == "model.b") cfg.lq.b = to_double(qual, val);
    else if (qual == "model.q") cfg.lq.q = to_double(qual, val);
    else if (qual == "model.beta") cfg.lq.beta = to_double(qual, val);
    else if (qual == "model.dim") cfg.lq.dim = static_cast<int>(to_int(qual, val));
    else if (qual == "solver.T") cfg.lq.T = to_double(qual, val);
    else if (qual == "solver.dt") cfg.master.dt = to_double(qual, val);
    else if (qual == "solver.N") cfg.master.picard.particles = static_cast<int>(to_int(qual, val));
    else if (qual == "solver.M") cfg.master.picard.scenarios = static_cast<int>(to_int(qual, val));
    else if (qual == "solver.G_pts") cfg.master.picard.grid_pts = static_cast<int>(to_int(qual, val));
    else if (qual == "solver.tol") cfg.master.picard.tol = to_double(qual, val);
    else if (qual == "solver.max_iter") cfg.master.picard.max_iter = static_cast<int>(to_int(qual, val));
    else if (qual == "solver.damping") cfg.master.picard.damping = to_double(qual, val);
    else if (qual == "solver.interval_len") cfg.master.interval_len = to_double(qual, val);
    else if (qual == "solver.min_interval_len") cfg.master.min_interval_len = to_double(qual, val);
    else if (qual == "solver.box") {
      double b = to_double(qual, val);
      cfg.master.picard.box_lo = -b;
      cfg.master.picard.box_hi = b;
    } else if (qual == "solver.antithetic") cfg.master.picard.antithetic = to_bool(qual, val);
    else if (qual == "solver.child_divisor") cfg.master.child_scenario_divisor = static_cast<int>(to_int(qual, val));
    else if (qual == "solver.cache_n") cfg.master.cache_quantize_n = static_cast<int>(to_int(qual, val));
    else if (qual == "initial.kind") cfg.initial_kind = val;
    else if (qual == "initial.mean") cfg.initial_mean = to_double(qual, val);
    else if (qual == "initial.std") cfg.initial_std = to_double(qual, val);
    else if (qual == "initial.atoms") cfg.initial_atoms = static_cast<int>(to_int(qual, val));
    else if (qual == "initial.file") cfg.initial_file = val;
    else if (qual == "run.seed") cfg.seed = static_cast<std::uint64_t>(to_int(qual, val));
    else if (qual == "run.tasks") cfg.tasks = split_list(val);
    else if (qual == "run.out") cfg.out_dir = val;
    else if (qual == "run.write_flows") cfg.write_flows = to_bool(qual, val);
    else if (qual == "check.t_slices") {
      cfg.t_slices.clear();
      for (const auto& s : split_list(val)) cfg.t_slices.push_back(to_double(qual, s));
    } else if (qual == "check.trials") cfg.trials = static_cast<int>(to_int(qual, val));
    else if (qual == "check.x_min") cfg.x_min = to_double(qual, val);
    else if (qual == "check.x_max") cfg.x_max = to_double(qual, val);
    else if (qual == "check.x_count") cfg.x_count = static_cast<int>(to_int(qual, val));
    else if (qual == "check.second_diff_h") cfg.second_diff_h = to_double(qual, val);
    else if (qual == "check.rel_tol") cfg.rel_tol = to_double(qual, val);
    else if (qual == "check.mono_tol") cfg.mono_tol = to_double(qual, val);
    else throw ConfigError("unknown key '" + key + "' in section [" + section + "]");
  }

  // range validation
  if (cfg.lq.T <= 0 || cfg.master.dt <= 0 || cfg.master.dt > cfg.lq.T)
    throw ConfigError("solver: need 0 < dt <= T");
  if (cfg.master.picard.particles < 1 || cfg.master.picard.scenarios < 1)
    throw ConfigError("solver: N and M must be positive");
  if (cfg.master.picard.grid_pts < 2 || cfg.master.picard.grid_pts > 4097)
    throw ConfigError("solver: G_pts out of range");
  if (cfg.master.picard.tol <= 0 || cfg.master.picard.tol > 1)
    throw ConfigError("solver: tol out of range");
  if (cfg.master.interval_len <= 0) throw ConfigError("solver: interval_len must be positive");
  if (cfg.master.min_interval_len <= 0 || cfg.master.min_interval_len > cfg.master.interval_len)
    cfg.master.min_interval_len = cfg.master.interval_len / 8.0;
  if (cfg.initial_atoms < 1) throw ConfigError("initial: atoms must be >= 1");
  if (cfg.trials < 1) throw ConfigError("check: trials must be >= 1");
  if (cfg.t_slices.empty()) throw ConfigError("check: t_slices must be nonempty");
  for (double t : cfg.t_slices)
    if (t < 0 || t > cfg.lq.T) throw ConfigError("check: t_slices must lie in [0, T]");
  if (cfg.x_count < 1 || cfg.x_min >= cfg.x_max) throw ConfigError("check: bad x probe range");
  for (const auto& t : cfg.tasks)
    if (t != "validate" && t != "solve" && t != "check-monotone" && t != "oracle-compare" &&
        t != "lipschitz-sweep")
      throw ConfigError("unknown task: " + t);
  return cfg;
}

RunConfig RunConfig::parse_file(const std::filesystem::path& path) {
  std::string body;
  try {
    body = read_text_file(path);
  } catch (const std::exception& e) {
    throw ConfigError(e.what());
  }
  return parse(body);
}

ModelSpec RunConfig::build_model() const { return make_model(model_name, lq); }

EmpiricalMeasure RunConfig::build_initial() const {
  if (initial_kind == "file") {
    if (initial_file.empty()) throw ConfigError("initial: kind=file needs a file path");
    return EmpiricalMeasure::from_csv(read_text_file(initial_file));
  }
  if (initial_kind != "gaussian") throw ConfigError("initial: unknown kind " + initial_kind);
  Rng rng(derive_seed(seed, 0x1517));
  Eigen::MatrixXd pts(initial_atoms, lq.dim);
  for (int i = 0; i < initial_atoms; ++i)
    for (int c = 0; c < lq.dim; ++c) pts(i, c) = initial_mean + initial_std * rng.normal();
  return EmpiricalMeasure::uniform(std::move(pts));
}

std::vector<Eigen::VectorXd> RunConfig::x_probes(int dim) const {
  std::vector<Eigen::VectorXd> probes;
  for (int i = 0; i < x_count; ++i) {
    double v = x_count == 1 ? x_min : x_min + (x_max - x_min) * i / (x_count - 1);
    probes.push_back(Eigen::VectorXd::Constant(dim, v));
  }
  return probes;
}

}  // namespace mfg
