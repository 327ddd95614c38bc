#include <CLI11.hpp>
#include <filesystem>
#include <iostream>

#include "mfg/config.hpp"
#include "mfg/io.hpp"
#include "mfg/lq.hpp"
#include "mfg/master.hpp"
#include "mfg/monotone.hpp"

namespace fs = std::filesystem;
using namespace mfg;

namespace {

constexpr int kExitPass = 0;
constexpr int kExitUsage = 1;
constexpr int kExitViolation = 2;
constexpr int kExitNonContraction = 3;

struct CommonArgs {
  std::string config_path;
  std::string out_override;
  std::uint64_t seed_override = 0;
  bool has_seed = false;
};

RunConfig load_config(const CommonArgs& args) {
  RunConfig cfg = RunConfig::parse_file(args.config_path);
  if (args.has_seed) {
    cfg.seed = args.seed_override;
  }
  cfg.master.picard.seed = cfg.seed;
  if (!args.out_override.empty()) cfg.out_dir = args.out_override;
  return cfg;
}

MasterSolution solve_from_config(const RunConfig& cfg, std::shared_ptr<const ModelSpec>& model) {
  model = std::make_shared<const ModelSpec>(cfg.build_model());
  return global_solve(model, cfg.master, cfg.build_initial());
}

void print_interval_table(const MasterSolution& sol) {
  std::printf("%10s %10s %6s %6s %12s %10s\n", "t0", "t1", "steps", "iters", "last_dist",
              "last_ratio");
  for (const auto& s : sol.chain()) {
    double ratio = s->diag.ratios.empty() ? 0.0 : s->diag.ratios.back();
    std::printf("%10.4f %10.4f %6d %6d %12.3e %10.3f\n", s->grid.t0, s->grid.t1, s->grid.steps,
                s->diag.iterations, s->diag.distances.back(), ratio);
  }
}

int cmd_validate(const RunConfig& cfg) {
  ModelSpec model = cfg.build_model();
  SamplerConfig sampler;
  AssumptionReport rep = validate_assumptions(model, sampler, cfg.trials, cfg.seed);
  FdReport fd = fd_consistency_check(model, std::max(4, cfg.trials / 16));

  fs::create_directories(cfg.out_dir);
  write_text_file(fs::path(cfg.out_dir) / "assumption_report.json", rep.to_json().dump(2) + "\n");
  nlohmann::json fdj;
  fdj["pass"] = fd.pass;
  fdj["worst_rel_error"] = fd.worst_rel_error;
  auto arr = nlohmann::json::array();
  for (const auto& issue : fd.issues) {
    nlohmann::json e;
    e["derivative"] = issue.derivative;
    e["rel_error"] = issue.rel_error;
    arr.push_back(e);
  }
  fdj["issues"] = arr;
  write_text_file(fs::path(cfg.out_dir) / "fd_report.json", fdj.dump(2) + "\n");

  for (const auto& p : rep.probes)
    std::printf("%-24s worst=%12.5g bound=%10.4g %s\n", p.assumption.c_str(), p.worst, p.bound,
                p.pass ? "pass" : "FAIL");
  std::printf("fd consistency: worst rel error %.3g %s\n", fd.worst_rel_error,
              fd.pass ? "pass" : "FAIL");
  return (rep.pass && fd.pass) ? kExitPass : kExitViolation;
}

int cmd_solve(const RunConfig& cfg) {
  std::shared_ptr<const ModelSpec> model;
  try {
    MasterSolution sol = solve_from_config(cfg, model);
    print_interval_table(sol);
    sol.persist(cfg.out_dir, cfg.write_flows);
    std::printf("solution written to %s\n", cfg.out_dir.c_str());
    return kExitPass;
  } catch (const GlobalSolveError& e) {
    std::fprintf(stderr, "non-contraction: %s (interval [%g, %g])\n", e.what(), e.t0, e.t1);
    return kExitNonContraction;
  }
}

int cmd_check(const RunConfig& cfg) {
  std::shared_ptr<const ModelSpec> model;
  try {
    MasterSolution sol = solve_from_config(cfg, model);
    fs::create_directories(cfg.out_dir);
    bool ok = true;

    MonotoneCheckConfig mcfg;
    mcfg.tolerance = cfg.mono_tol;
    mcfg.seed = derive_seed(cfg.seed, 0x30D0);
    auto probes = cfg.x_probes(model->dim);

    std::string sd_csv = "t,min_quotient,max_quotient\n";
    for (double t : cfg.t_slices) {
      auto rep = check_field_dm(sol, t, mcfg, cfg.trials);
      write_text_file(fs::path(cfg.out_dir) / ("monotone_t" + fmt17(t) + ".json"),
                      rep.to_json().dump(2) + "\n");
      auto [lo, hi] =
          sol.estimate_second_diff(t, sol.chain().front()->mu0, probes, cfg.second_diff_h);
      sd_csv += fmt17(t) + "," + fmt17(lo) + "," + fmt17(hi) + "\n";
      std::printf("t=%-8g min_pairing=%12.4e %s   second_diff=[%.4f, %.4f]\n", t, rep.min_pairing,
                  rep.pass ? "pass" : "FAIL", lo, hi);
      ok = ok && rep.pass && lo >= -1e-2;
    }
    write_text_file(fs::path(cfg.out_dir) / "second_diff.csv", sd_csv);
    return ok ? kExitPass : kExitViolation;
  } catch (const GlobalSolveError& e) {
    std::fprintf(stderr, "non-contraction: %s\n", e.what());
    return kExitNonContraction;
  }
}

int cmd_oracle_compare(const RunConfig& cfg) {
  if (cfg.model_name != "lq" && cfg.model_name != "free_flow") {
    std::fprintf(stderr, "oracle-compare requires the lq (or free_flow) model\n");
    return kExitUsage;
  }
  LQParams lp = cfg.lq;
  if (cfg.model_name == "free_flow") {
    lp.a = 1.0;
    lp.b = 0.0;
    lp.q = 0.0;
  }
  try {
    auto model = std::make_shared<const ModelSpec>(build_lq_model(lp));
    EmpiricalMeasure mu0 = cfg.build_initial();
    MasterSolution sol = global_solve(model, cfg.master, mu0);
    RiccatiSolution ric =
        riccati_solve(lp, std::max(64, 4 * static_cast<int>(lp.T / cfg.master.dt)));

    double max_rel = 0.0;
    std::string csv = "t,x,solver,oracle,abs_err,rel_err\n";
    for (double t : cfg.t_slices) {
      for (const auto& x : cfg.x_probes(model->dim)) {
        Eigen::VectorXd got = sol.eval_dxV(t, x, mu0);
        Eigen::VectorXd want = lq_dxV(ric, lp, t, x, mu0);
        double abs_err = (got - want).cwiseAbs().maxCoeff();
        double rel = abs_err / (1.0 + want.cwiseAbs().maxCoeff());
        max_rel = std::max(max_rel, rel);
        csv += fmt17(t) + "," + fmt17(x[0]) + "," + fmt17(got[0]) + "," + fmt17(want[0]) + "," +
               fmt17(abs_err) + "," + fmt17(rel) + "\n";
      }
    }
    // mixed derivative at the final interval's start, identified with Q there
    double t_mix = std::max(0.0, lp.T - cfg.master.interval_len);
    {
      Eigen::VectorXd xm = Eigen::VectorXd::Zero(model->dim);
      Eigen::VectorXd xt = Eigen::VectorXd::Constant(model->dim, 1.0);
      double got = sol.eval_dxmuV(t_mix, xm, mu0, xt, 0)[0];
      double want = ric.Q_at(t_mix);
      double rel = std::abs(got - want) / (1.0 + std::abs(want));
      max_rel = std::max(max_rel, rel);
      csv += fmt17(t_mix) + ",mixed," + fmt17(got) + "," + fmt17(want) + "," +
             fmt17(std::abs(got - want)) + "," + fmt17(rel) + "\n";
    }
    fs::create_directories(cfg.out_dir);
    write_text_file(fs::path(cfg.out_dir) / "oracle_compare.csv", csv);
    std::printf("max relative error %.4g (tolerance %.4g)\n", max_rel, cfg.rel_tol);
    return max_rel <= cfg.rel_tol ? kExitPass : kExitViolation;
  } catch (const GlobalSolveError& e) {
    std::fprintf(stderr, "non-contraction: %s\n", e.what());
    return kExitNonContraction;
  }
}

int cmd_lipschitz(const RunConfig& cfg) {
  std::shared_ptr<const ModelSpec> model;
  try {
    MasterSolution sol = solve_from_config(cfg, model);
    auto probes = cfg.x_probes(model->dim);
    std::string csv = "t,metric,bump,constant,pairs\n";
    for (double t : cfg.t_slices) {
      for (int q : {1, 2}) {
        for (auto [kind, name] : {std::pair{BumpKind::translate_all, "translate"},
                                  std::pair{BumpKind::shift_one_atom, "atom_shift"}}) {
          auto est = estimate_measure_lipschitz(sol, t, q, kind, std::max(2, cfg.trials / 16),
                                                probes, derive_seed(cfg.seed, 0x11));
          csv += fmt17(t) + ",W" + std::to_string(q) + "," + name + "," + fmt17(est.constant) +
                 "," + std::to_string(est.pairs) + "\n";
          std::printf("t=%-8g W%d %-10s constant=%.5f\n", t, q, name, est.constant);
        }
      }
    }
    fs::create_directories(cfg.out_dir);
    write_text_file(fs::path(cfg.out_dir) / "lipschitz_sweep.csv", csv);
    return kExitPass;
  } catch (const GlobalSolveError& e) {
    std::fprintf(stderr, "non-contraction: %s\n", e.what());
    return kExitNonContraction;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"particle solver and property checks for mean field master gradients"};
  app.require_subcommand(1);

  CommonArgs args;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", args.config_path, "run configuration file")->required();
    sub->add_option("--seed", args.seed_override, "override the config seed")
        ->each([&](const std::string&) { args.has_seed = true; });
    sub->add_option("--out", args.out_override, "override the output directory");
  };

  auto* validate = app.add_subcommand("validate", "audit model assumptions and derivatives");
  auto* solve = app.add_subcommand("solve", "solve the master gradient field and persist it");
  auto* check = app.add_subcommand("check", "monotonicity and curvature checks on the solution");
  auto* oracle = app.add_subcommand("oracle-compare", "compare against the closed-form family");
  auto* lip = app.add_subcommand("lipschitz-sweep", "measure-Lipschitz constants of the gradient");
  for (auto* sub : {validate, solve, check, oracle, lip}) add_common(sub);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    RunConfig cfg = load_config(args);
    if (validate->parsed()) return cmd_validate(cfg);
    if (solve->parsed()) return cmd_solve(cfg);
    if (check->parsed()) return cmd_check(cfg);
    if (oracle->parsed()) return cmd_oracle_compare(cfg);
    if (lip->parsed()) return cmd_lipschitz(cfg);
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitViolation;
  }
}
