#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "mfg/lq.hpp"
#include "mfg/master.hpp"
#include "mfg/models_builtin.hpp"

namespace mfg {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Flat INI-style run configuration. Unknown sections or keys are rejected so
// a config is always total with respect to what the run will do.
struct RunConfig {
  // [model]
  std::string model_name = "lq";
  LQParams lq;  // beta / T / dim are shared with non-LQ models

  // [solver]
  MasterParams master;

  // [initial]
  std::string initial_kind = "gaussian";  // gaussian | file
  double initial_mean = 1.0;
  double initial_std = 0.5;
  int initial_atoms = 2048;
  std::string initial_file;

  // [run]
  std::uint64_t seed = 1;
  std::vector<std::string> tasks = {"solve"};
  std::string out_dir = "out";
  bool write_flows = false;

  // [check]
  std::vector<double> t_slices = {0.0, 0.5, 1.0};
  int trials = 200;
  double x_min = -3.0, x_max = 3.0;
  int x_count = 13;
  double second_diff_h = 0.375;
  double rel_tol = 0.02;
  double mono_tol = 1e-3;

  static RunConfig parse(const std::string& text);
  static RunConfig parse_file(const std::filesystem::path& path);

  ModelSpec build_model() const;
  EmpiricalMeasure build_initial() const;
  std::vector<Eigen::VectorXd> x_probes(int dim) const;
};

}  // namespace mfg
