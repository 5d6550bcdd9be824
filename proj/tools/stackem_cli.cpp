// Command-line driver for stacking-design campaigns: run a campaign on a
// built-in family or an external simulator, sweep error tolerances, and
// query a saved emulator.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "stackem/serialization.hpp"
#include "stackem/subprocess.hpp"

namespace fs = std::filesystem;
using namespace stackem;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitMaxLevels = 3;
constexpr int kExitSimulator = 4;
constexpr int kExitBudget = 5;

struct CliOptions {
  double epsilon = 1.0;
  std::vector<double> epsilons;  // sweep
  std::string norm = "l2";
  int T = 2;
  double xi0 = 16.0;
  int n0 = 10;
  int max_levels = 10;
  std::uint64_t seed = 0;
  std::string sim = "currin";
  std::string out_dir = ".";
  double alpha = 0.0;  // 0 -> estimate
  int mc_budget = 2000;
  int linf_budget = 4096;
  int dim = 0;
  std::vector<double> lo, hi;
  std::vector<double> costs;
};

struct SimSetup {
  std::unique_ptr<Simulator> sim;
  Rect domain;
  bool has_limit = false;
};

SimSetup make_simulator(const CliOptions& opt) {
  SimSetup s;
  if (opt.sim == "currin") {
    s.sim = std::make_unique<CurrinSimulator>(1.0, opt.xi0, opt.T);
    s.domain = Rect::unit_cube(2);
    s.has_limit = true;
  } else if (opt.sim == "poissonlike") {
    s.sim = make_poisson_like(1.0, opt.xi0, opt.T);
    s.domain = poisson_like_domain();
    s.has_limit = true;
  } else if (opt.sim.rfind("cmd:", 0) == 0) {
    SubprocessConfig sc;
    sc.command = opt.sim.substr(4);
    sc.max_level = opt.max_levels;
    sc.xi0 = opt.xi0;
    sc.T = opt.T;
    sc.costs = opt.costs;
    s.sim = std::make_unique<SubprocessSimulator>(sc);
    if (opt.dim < 1)
      throw CLI::ValidationError("--dim", "required for cmd: simulators");
    Vector lo = Vector::Zero(opt.dim), hi = Vector::Ones(opt.dim);
    if (!opt.lo.empty()) {
      if (static_cast<int>(opt.lo.size()) != opt.dim ||
          static_cast<int>(opt.hi.size()) != opt.dim)
        throw CLI::ValidationError("--lo/--hi", "need one value per dimension");
      for (int j = 0; j < opt.dim; ++j) {
        lo[j] = opt.lo[j];
        hi[j] = opt.hi[j];
      }
    }
    s.domain = Rect(lo, hi);
  } else {
    throw CLI::ValidationError("--sim",
                               "expected currin, poissonlike, or cmd:...");
  }
  return s;
}

StackingConfig make_config(const CliOptions& opt, const Rect& domain,
                           double epsilon) {
  StackingConfig cfg;
  cfg.epsilon = epsilon;
  cfg.norm = norm_from_string(opt.norm);
  cfg.domain = domain;
  cfg.n0 = opt.n0;
  cfg.T = opt.T;
  cfg.xi0 = opt.xi0;
  cfg.max_levels = opt.max_levels;
  cfg.mc_budget = opt.mc_budget;
  cfg.linf_budget = opt.linf_budget;
  cfg.seed = opt.seed;
  if (opt.alpha > 0.0) cfg.alpha_pinned = opt.alpha;
  cfg.validate();
  return cfg;
}

void print_stage_table(const std::vector<StageReport>& stages) {
  for (const StageReport& s : stages) {
    std::printf("stage L=%d  cum_cost=%.6g%s\n", s.L, s.cumulative_cost,
                s.converged ? "  [converged]" : "");
    std::printf("  %-4s %-12s %-12s %-6s\n", "l", "xi_l", "C_l", "n_l");
    for (int l = 1; l <= s.L; ++l)
      std::printf("  %-4d %-12.6g %-12.6g %-6d\n", l, s.xi[l - 1],
                  s.cost[l - 1], s.n[l - 1]);
    if (s.alpha_hat) std::printf("  alpha_hat = %.6g\n", *s.alpha_hat);
    if (s.simulation_bound)
      std::printf("  simulation bound = %.6g\n", *s.simulation_bound);
    std::printf("  emulation bound  = %.6g\n", s.emulation_bound);
  }
}

// Achieved error of the emulator against the analytic limit, matching the
// campaign norm: L2 via 1e4 Monte Carlo points, Linf via a 256^d grid
// (256^2 in 2-d, 65536 grid points in 1-d).
double achieved_error(const MultiLevelEmulator& em, const Simulator& sim,
                      const Rect& domain, Norm norm, std::uint64_t seed) {
  auto diff = [&](const Vector& x) {
    return em.predict(x) - *sim.exact_limit(x);
  };
  if (norm == Norm::L2)
    return detail::function_norm(diff, Norm::L2, domain, 10000, seed + 777);
  const int d = domain.dim();
  long per_side = d == 1 ? 65536 : 256;
  long total = 1;
  for (int j = 0; j < d; ++j) total *= per_side;
  double worst = 0.0;
  for (long i = 0; i < total; ++i) {
    Vector x(d);
    long rem = i;
    for (int j = 0; j < d; ++j) {
      x[j] = domain.lo[j] +
             domain.side(j) * (rem % per_side) / double(per_side - 1);
      rem /= per_side;
    }
    worst = std::max(worst, std::abs(diff(x)));
  }
  return worst;
}

json report_json(const CliOptions& opt, double epsilon,
                 const StackingResult& result) {
  json j;
  j["config"] = {{"epsilon", epsilon},   {"norm", opt.norm},
                 {"T", opt.T},           {"xi0", opt.xi0},
                 {"n0", opt.n0},         {"max_levels", opt.max_levels},
                 {"seed", opt.seed},     {"sim", opt.sim},
                 {"mc_budget", opt.mc_budget}};
  j["converged"] = result.converged;
  j["total_cost"] = result.ledger.total_cost;
  j["stages"] = json::array();
  for (const StageReport& s : result.stages) j["stages"].push_back(stage_to_json(s));
  return j;
}

int cmd_run(const CliOptions& opt) {
  SimSetup setup = make_simulator(opt);
  StackingConfig cfg = make_config(opt, setup.domain, opt.epsilon);
  StackingResult result = run_stacking(*setup.sim, cfg);
  print_stage_table(result.stages);

  fs::create_directories(opt.out_dir);
  write_file(opt.out_dir + "/report.json",
             report_json(opt, opt.epsilon, result).dump(2) + "\n");
  write_file(opt.out_dir + "/stages.csv", stages_to_csv(result.stages));
  write_file(opt.out_dir + "/emulator.json",
             emulator_to_json(result.emulator).dump() + "\n");
  std::printf("total cost: %.6g\n", result.ledger.total_cost);
  return kExitOk;
}

int cmd_sweep(const CliOptions& opt) {
  if (opt.epsilons.empty())
    throw CLI::ValidationError("--epsilon", "sweep needs at least one value");
  SimSetup setup = make_simulator(opt);
  std::ostringstream csv;
  csv << "epsilon,achieved_error,total_cost,L_final,n_l\n";
  int exit_code = kExitOk;
  for (double eps : opt.epsilons) {
    try {
      StackingConfig cfg = make_config(opt, setup.domain, eps);
      StackingResult result = run_stacking(*setup.sim, cfg);
      const StageReport& last = result.stages.back();
      std::string nlist;
      for (size_t i = 0; i < last.n.size(); ++i)
        nlist += (i ? ";" : "") + std::to_string(last.n[i]);
      char buf[64];
      csv << eps << ',';
      if (setup.has_limit) {
        double err = achieved_error(result.emulator, *setup.sim, setup.domain,
                                    cfg.norm, cfg.seed);
        std::snprintf(buf, sizeof(buf), "%.10g", err);
        csv << buf;
      } else {
        std::fprintf(stderr,
                     "warning: no analytic limit for %s; achieved_error "
                     "omitted\n",
                     opt.sim.c_str());
      }
      std::snprintf(buf, sizeof(buf), ",%.10g,%d,", result.ledger.total_cost,
                    last.L);
      csv << buf << nlist << '\n';
    } catch (const MaxLevelsExceeded& e) {
      std::fprintf(stderr, "epsilon %g: %s\n", eps, e.what());
      exit_code = kExitMaxLevels;
    } catch (const BudgetInfeasible& e) {
      std::fprintf(stderr, "epsilon %g: %s\n", eps, e.what());
      exit_code = kExitBudget;
    } catch (const SimulatorError& e) {
      std::fprintf(stderr, "epsilon %g: %s\n", eps, e.what());
      exit_code = kExitSimulator;
    }
  }
  fs::create_directories(opt.out_dir);
  write_file(opt.out_dir + "/sweep.csv", csv.str());
  std::printf("%s", csv.str().c_str());
  return exit_code;
}

int cmd_predict(const std::string& emulator_path,
                const std::string& points_path,
                const std::string& out_path) {
  std::ifstream in(emulator_path);
  if (!in) {
    std::fprintf(stderr, "cannot open %s\n", emulator_path.c_str());
    return kExitConfig;
  }
  MultiLevelEmulator em;
  try {
    em = emulator_from_json(json::parse(in));
  } catch (const std::exception& e) {
    std::fprintf(stderr, "emulator schema mismatch: %s\n", e.what());
    return kExitConfig;
  }
  const int d = em.levels.empty() ? 0 : em.levels.front().interp.dim();

  std::ifstream pts(points_path);
  if (!pts) {
    std::fprintf(stderr, "cannot open %s\n", points_path.c_str());
    return kExitConfig;
  }
  std::ostringstream csv;
  csv << "prediction,lower,upper\n";
  std::string line;
  int row = 0;
  bool intervals = em.alpha_hat && em.num_levels() >= 2;
  while (std::getline(pts, line)) {
    ++row;
    for (char& c : line)
      if (c == ',') c = ' ';
    std::istringstream is(line);
    std::vector<double> vals;
    double v;
    while (is >> v) vals.push_back(v);
    if (vals.empty()) continue;
    if (static_cast<int>(vals.size()) != d) {
      std::fprintf(stderr, "row %d: expected %d coordinates, got %zu\n", row,
                   d, vals.size());
      return kExitConfig;
    }
    Vector x = Eigen::Map<Vector>(vals.data(), vals.size());
    char buf[128];
    if (intervals) {
      auto [lo, hi] = em.error_interval(x, *em.alpha_hat);
      std::snprintf(buf, sizeof(buf), "%.10g,%.10g,%.10g\n", em.predict(x),
                    lo, hi);
    } else {
      std::snprintf(buf, sizeof(buf), "%.10g,,\n", em.predict(x));
    }
    csv << buf;
  }
  if (out_path.empty() || out_path == "-") {
    std::printf("%s", csv.str().c_str());
  } else {
    write_file(out_path, csv.str());
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Multi-fidelity stacking-design emulator"};
  app.require_subcommand(1);
  CliOptions opt;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--norm", opt.norm, "l2 or linf")
        ->check(CLI::IsMember({"l2", "linf"}));
    cmd->add_option("--T", opt.T, "fidelity ladder base (integer >= 2)");
    cmd->add_option("--xi0", opt.xi0, "base fidelity parameter");
    cmd->add_option("--n0", opt.n0, "pilot sample size");
    cmd->add_option("--max-levels", opt.max_levels, "level cap");
    cmd->add_option("--seed", opt.seed, "RNG seed");
    cmd->add_option("--sim", opt.sim, "currin | poissonlike | cmd:<command>");
    cmd->add_option("--out", opt.out_dir, "output directory");
    cmd->add_option("--alpha", opt.alpha, "pin the decay rate (0 = estimate)");
    cmd->add_option("--mc-budget", opt.mc_budget, "L2 Monte Carlo budget");
    cmd->add_option("--linf-budget", opt.linf_budget, "Linf candidate budget");
    cmd->add_option("--dim", opt.dim, "input dimension (cmd simulators)");
    cmd->add_option("--lo", opt.lo, "domain lower bounds (cmd simulators)");
    cmd->add_option("--hi", opt.hi, "domain upper bounds (cmd simulators)");
    cmd->add_option("--cost", opt.costs, "per-level cost list (cmd simulators)");
  };

  CLI::App* run = app.add_subcommand("run", "run one stacking campaign");
  run->add_option("--epsilon", opt.epsilon, "target accuracy")
      ->check(CLI::PositiveNumber);
  add_common(run);

  CLI::App* sweep =
      app.add_subcommand("sweep", "run campaigns over a tolerance list");
  sweep->add_option("--epsilon", opt.epsilons, "target accuracies")
      ->check(CLI::PositiveNumber);
  add_common(sweep);

  std::string emulator_path, points_path, predict_out;
  CLI::App* predict =
      app.add_subcommand("predict", "evaluate a saved emulator at points");
  predict->add_option("emulator", emulator_path, "emulator.json")->required();
  predict->add_option("points", points_path, "points file (CSV)")->required();
  predict->add_option("--out", predict_out, "output CSV (default stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int rc = app.exit(e);
    return rc == 0 ? 0 : kExitConfig;
  }

  try {
    if (run->parsed()) return cmd_run(opt);
    if (sweep->parsed()) return cmd_sweep(opt);
    if (predict->parsed())
      return cmd_predict(emulator_path, points_path, predict_out);
  } catch (const CLI::ValidationError& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return kExitConfig;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "config error: %s\n", e.what());
    return kExitConfig;
  } catch (const MaxLevelsExceeded& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return kExitMaxLevels;
  } catch (const BudgetInfeasible& e) {
    std::fprintf(stderr, "%s\n", e.what());
    return kExitBudget;
  } catch (const SimulatorError& e) {
    std::fprintf(stderr, "simulator failure: %s\n", e.what());
    return kExitSimulator;
  }
  return kExitConfig;
}
