// evoprobe: hard-label evolutionary attack runner.
//
// Exit status: 0 when every run completed and passed its invariant checks,
// 1 when a run failed or an invariant check did not hold, 2 on usage or
// configuration errors.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"

#include "evoprobe/config.hpp"
#include "evoprobe/harness.hpp"
#include "evoprobe/theory.hpp"

using namespace evoprobe;
using nlohmann::json;

namespace {

constexpr int kExitFailure = 1;
constexpr int kExitUsage = 2;

json shape_array(const std::string& text) {
  const GridShape s = parse_grid_shape(text);
  return json::array({s.height, s.width, s.channels});
}

struct ConfigFlags {
  std::string config_path;
  std::vector<std::string> sets;
  std::map<std::string, std::string> values;  // config path -> raw value

  void add(CLI::App* app) {
    app->add_option("--config", config_path, "JSON experiment config")->check(CLI::ExistingFile);
    app->add_option("--set", sets, "Override any config key, e.g. --set evo.c_cov=0.01 (repeatable)");
    option(app, "--name", "name", "Experiment name");
    option(app, "--criterion", "criterion", "dodge-binary | impersonate-binary | dodge-multiclass | impersonate-multiclass");
    option(app, "--true-label", "true_label", "True label for dodge-multiclass");
    option(app, "--target-label", "target_label", "Target label for impersonate-multiclass");
    option(app, "--output-dir", "output_dir", "Run directory");
    option(app, "--workers", "workers", "Parallel cells");
    list_option(app, "--methods", "methods", "Comma-separated methods", true);
    list_option(app, "--budgets", "budgets", "Comma-separated checkpoint budgets", false);
    list_option(app, "--seeds", "seeds", "Comma-separated seeds", false);
    option(app, "--init", "init.mode", "random-uniform | given");
    option(app, "--max-attempts", "init.max_attempts", "Random initialization attempts");
    option(app, "--search-shape", "evo.search_shape", "Search grid HxWxC, or full");
    option(app, "--k", "evo.k", "Coordinates per step");
    option(app, "--c-c", "evo.c_c", "Evolution path rate");
    option(app, "--c-cov", "evo.c_cov", "Covariance rate");
    option(app, "--sigma-factor", "evo.sigma_factor", "Step scale relative to distance");
    option(app, "--mu-init", "evo.mu_init", "Initial bias strength");
    option(app, "--success-window", "evo.success_window", "Window of the success rule");
    option(app, "--cma-enabled", "evo.cma_enabled", "true | false");
    option(app, "--scs-enabled", "evo.scs_enabled", "true | false");
    option(app, "--scs-weighting", "evo.scs_weighting", "covariance | uniform");
    list_option(app, "--m-sweep", "m_sweep", "Comma-separated search shapes for ablate", true);
  }

  void option(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help) {
    app->add_option_function<std::string>(flag, [this, key](const std::string& v) { values[key] = v; }, help);
  }

  void list_option(CLI::App* app, const std::string& flag, const std::string& key, const std::string& help,
                   bool strings) {
    app->add_option_function<std::string>(
        flag,
        [this, key, strings](const std::string& v) {
          json arr = json::array();
          std::stringstream in(v);
          std::string item;
          while (std::getline(in, item, ',')) {
            if (strings) arr.push_back(item);
            else arr.push_back(json::parse(item));
          }
          values[key] = arr.dump();
        },
        help);
  }

  ExperimentConfig load() const {
    json doc;
    if (!config_path.empty()) {
      std::ifstream in(config_path);
      doc = json::parse(in);
    } else {
      doc = ExperimentConfig{};
    }
    for (const auto& [key, raw] : values) {
      std::string v = raw;
      if (key == "evo.search_shape") v = raw == "full" ? "null" : shape_array(raw).dump();
      if (key == "m_sweep") {
        json shapes = json::array();
        for (const auto& s : json::parse(raw)) shapes.push_back(shape_array(s.get<std::string>()));
        v = shapes.dump();
      }
      apply_override(doc, key, v);
    }
    for (const std::string& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + s + "'");
      apply_override(doc, s.substr(0, eq), s.substr(eq + 1));
    }
    return doc.get<ExperimentConfig>();
  }
};

void print_summary(const std::vector<SummaryRow>& rows) {
  std::fprintf(stderr, "%-14s %-12s %9s %5s %13s %13s %13s\n", "method", "oracle", "budget", "runs", "mean_mse",
               "median_mse", "max_mse");
  for (const auto& r : rows) {
    std::fprintf(stderr, "%-14s %-12s %9llu %5zu %13.6g %13.6g %13.6g\n", r.method.c_str(), r.oracle.c_str(),
                 static_cast<unsigned long long>(r.budget), r.runs, r.mean_mse, r.median_mse, r.max_mse);
  }
}

void report_progress(const RunOutcome& r) {
  if (r.completed && r.invariants_ok) {
    std::fprintf(stderr, "  %-14s seed %-6llu mse %.6g (%llu queries, %.2fs)\n", to_string(r.method).c_str(),
                 static_cast<unsigned long long>(r.seed), r.final_mse,
                 static_cast<unsigned long long>(r.init_queries + r.attack_queries), r.wall_seconds);
  } else {
    std::fprintf(stderr, "  %-14s seed %-6llu FAILED: %s\n", to_string(r.method).c_str(),
                 static_cast<unsigned long long>(r.seed), r.error.c_str());
  }
}

int cmd_attack(const ConfigFlags& flags, const std::string& method, std::uint64_t seed, const std::string& trace) {
  ExperimentConfig config = flags.load();
  config.methods = {parse_method(method)};
  config.seeds = {seed};
  config.validate();
  std::filesystem::path trace_path = trace;
  if (trace_path.empty()) trace_path = config.output_dir / (method + "_seed" + std::to_string(seed) + ".csv");
  if (trace_path.has_parent_path()) std::filesystem::create_directories(trace_path.parent_path());
  const RunOutcome r = run_cell(config, config.methods[0], seed, trace_path);
  report_progress(r);
  if (!r.completed || !r.invariants_ok) return kExitFailure;
  std::printf("initial_l2=%.17g final_l2=%.17g final_mse=%.17g init_queries=%llu attack_queries=%llu trace=%s\n",
              r.trace.initial_l2, r.final_l2, r.final_mse, static_cast<unsigned long long>(r.init_queries),
              static_cast<unsigned long long>(r.attack_queries), trace_path.string().c_str());
  return 0;
}

int cmd_matrix(const ConfigFlags& flags) {
  const ExperimentConfig config = flags.load();
  const MatrixResult m = run_matrix(config, report_progress);
  print_summary(m.summary);
  std::printf("%s\n", (config.output_dir / "summary.csv").string().c_str());
  return m.all_completed() && m.all_invariants_ok() ? 0 : kExitFailure;
}

int cmd_ablate(const ConfigFlags& flags) {
  const ExperimentConfig config = flags.load();
  const AblationReport rep = ablation_report(config, report_progress);
  std::cout << ablation_to_csv(rep);
  if (rep.low_confidence) std::fprintf(stderr, "note: fewer than %zu seeds, low confidence\n", kConfidentSeeds);
  return rep.all_completed ? 0 : kExitFailure;
}

int cmd_verify(const std::vector<std::size_t>& ns, const std::vector<double>& sigmas, std::uint64_t samples,
               std::uint64_t seed, const std::string& out) {
  Rng rng(seed);
  const auto reports = verify_bound_grid(ns, sigmas, samples, rng);
  const std::string csv = bound_reports_csv(reports);
  if (out.empty()) {
    std::cout << csv;
  } else {
    std::ofstream(out, std::ios::binary) << csv;
  }
  const bool ok = all_hold(reports);
  std::fprintf(stderr, "%zu cells, bound %s\n", reports.size(), ok ? "holds everywhere" : "VIOLATED");
  return ok ? 0 : kExitFailure;
}

int cmd_curves(const std::string& run_dir, std::string out_dir) {
  if (out_dir.empty()) out_dir = (std::filesystem::path(run_dir) / "curves").string();
  for (const auto& p : curve_export(run_dir, out_dir)) std::printf("%s\n", p.string().c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Hard-label evolutionary attack engine"};
  app.require_subcommand(1);

  ConfigFlags attack_flags, matrix_flags, ablate_flags;
  std::string method = "evolutionary", trace;
  std::uint64_t seed = 0;
  auto* attack = app.add_subcommand("attack", "Run a single attack");
  attack_flags.add(attack);
  attack->add_option("--method", method, "evolutionary | boundary | unbiased-es");
  attack->add_option("--seed", seed, "Random seed");
  attack->add_option("--trace", trace, "Trace CSV path (default <output_dir>/<method>_seed<seed>.csv)");

  auto* matrix = app.add_subcommand("matrix", "Run every method x seed cell and summarize");
  matrix_flags.add(matrix);

  auto* ablate = app.add_subcommand("ablate", "Compare CMA/SCS settings and search dimensions");
  ablate_flags.add(ablate);

  std::vector<std::size_t> ns{10, 100, 1000};
  std::vector<double> sigmas{0.01, 0.1, 1.0};
  std::uint64_t samples = 100000, verify_seed = 0;
  std::string verify_out;
  auto* verify = app.add_subcommand("verify-theorem1", "Monte Carlo check of the zero-mean success bound");
  verify->add_option("--n", ns, "Dimensions")->delimiter(',');
  verify->add_option("--sigma", sigmas, "Step scales")->delimiter(',');
  verify->add_option("--samples", samples, "Samples per cell (at least 10000)");
  verify->add_option("--seed", verify_seed, "Random seed");
  verify->add_option("--out", verify_out, "CSV path (default stdout)");

  std::string run_dir, curves_out;
  auto* curves = app.add_subcommand("curves", "Export distortion-vs-query curves from a run directory");
  curves->add_option("--run-dir", run_dir, "Directory written by matrix")->required();
  curves->add_option("--out-dir", curves_out, "Output directory (default <run-dir>/curves)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : kExitUsage;
  }

  try {
    if (attack->parsed()) return cmd_attack(attack_flags, method, seed, trace);
    if (matrix->parsed()) return cmd_matrix(matrix_flags);
    if (ablate->parsed()) return cmd_ablate(ablate_flags);
    if (verify->parsed()) return cmd_verify(ns, sigmas, samples, verify_seed, verify_out);
    if (curves->parsed()) return cmd_curves(run_dir, curves_out);
  } catch (const ConfigError& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const json::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::invalid_argument& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitUsage;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "error: %s\n", e.what());
    return kExitFailure;
  }
  return kExitUsage;
}
