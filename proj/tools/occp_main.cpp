#include "occp/config.hpp"
#include "occp/runner.hpp"

#include <CLI11.hpp>

#include <iostream>

int main(int argc, char** argv) {
  CLI::App app{"Occlusion-aware contingency planner: scenario runner"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run a scenario for one or more seeded trials");
  std::string scenario, mode, sweep, out_dir = "occp_out";
  int trials = 1;
  std::uint64_t seed = 0;
  bool strict = false, trace_admm = false, dump_risk = false;
  run->add_option("scenario", scenario, "Scenario JSON file")->required()->check(CLI::ExistingFile);
  run->add_option("--mode", mode, "aware, ignorant or replay")
      ->check(CLI::IsMember({"aware", "ignorant", "replay"}));
  run->add_option("--trials", trials, "Number of trials; trial i uses seed + i")->check(CLI::PositiveNumber);
  auto* seed_opt = run->add_option("--seed", seed, "Seed base (default: the scenario seed)");
  run->add_option("--sweep", sweep, "Dotted key and values, e.g. solver.N_s=3,5,8");
  run->add_flag("--strict", strict, "Exit 1 when an aware-mode trial collides");
  run->add_flag("--trace-admm", trace_admm, "Write per-iteration ADMM traces");
  run->add_flag("--dump-risk", dump_risk, "Write the risk field of every planning cycle");
  run->add_option("--out", out_dir, "Output directory");

  auto* show = app.add_subcommand("config", "Print a scenario with every default filled in");
  std::string show_path;
  show->add_option("scenario", show_path, "Scenario JSON file (omit for the defaults)");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*show) {
      const occp::ScenarioConfig cfg = show_path.empty() ? occp::ScenarioConfig{} : occp::parse_config(show_path);
      std::cout << occp::serialize_config(cfg) << "\n";
      return 0;
    }
    occp::RunSpec spec;
    spec.base = occp::parse_config(scenario);
    if (!mode.empty()) spec.mode = occp::parse_mode(mode);
    if (*seed_opt) spec.seed = seed;
    spec.trials = trials;
    if (!sweep.empty()) spec.sweep = occp::parse_sweep(sweep);
    spec.strict = strict;
    spec.trace_admm = trace_admm;
    spec.dump_risk = dump_risk;
    spec.out_dir = out_dir;

    const occp::RunOutcome out = occp::run(spec);
    std::cout << occp::summary_table(out, spec.mode ? *spec.mode : spec.base.mode);
    for (const auto& p : out.points)
      for (const auto& t : p.trials)
        if (!t.ok) std::cerr << p.label << " seed " << t.seed << ": " << t.error << "\n";
    std::cout << "wrote " << out_dir << "/metrics.json\n";
    return out.exit_code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
}
