// qe run <config> [--seed S] [--out DIR] [--workers W]
// qe validate <config>
// Exit status: 0 success, 1 config error, 2 some sweep points failed.

#include <iostream>

#include <CLI11.hpp>

#include "qe/experiments.hpp"

namespace {

int report_config_error(const std::exception& e) {
  std::cerr << "config error: " << e.what() << '\n';
  return 1;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"qe: quantum ergodicity experiment runner"};
  app.set_version_flag("--version", QE_VERSION);
  app.require_subcommand(1);

  std::string run_config, validate_config, out;
  std::uint64_t seed = 0;
  int workers = 0;
  auto* run = app.add_subcommand("run", "run an experiment config");
  run->add_option("config", run_config, "config file (JSON)")->required()->check(CLI::ExistingFile);
  auto* seed_opt = run->add_option("--seed", seed, "override parameters.seed");
  auto* out_opt = run->add_option("--out", out, "override the output directory");
  auto* workers_opt = run->add_option("--workers", workers, "override parameters.workers")->check(CLI::Range(1, 256));

  auto* validate = app.add_subcommand("validate", "check a config and print the plan");
  validate->add_option("config", validate_config, "config file (JSON)")->required()->check(CLI::ExistingFile);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 1;
  }

  qe::Overrides ov;
  if (*seed_opt) ov.seed = seed;
  if (*out_opt) ov.out = out;
  const std::string path = *run ? run_config : validate_config;

  qe::Plan plan;
  try {
    auto config = qe::load_config(path);
    if (*workers_opt) {
      if (!config.contains("parameters") || !config["parameters"].is_object()) config["parameters"] = qe::json::object();
      config["parameters"]["workers"] = workers;
    }
    plan = qe::make_plan(std::move(config), ov);
  } catch (const qe::Error& e) {
    return report_config_error(e);
  } catch (const std::exception& e) {
    return report_config_error(e);
  }

  if (*validate) {
    std::cout << "ok: " << plan.experiment << ", " << plan.points.size() << " point(s), output " << plan.output.string()
              << " (" << plan.format << ")\n";
    for (const auto& p : plan.points) std::cout << "  " << p.label << '\n';
    return 0;
  }

  try {
    const auto res = qe::run_plan(plan);
    for (const auto& o : res.outcomes)
      std::cout << (o.ok ? "ok     " : "FAILED ") << o.label << (o.ok ? "" : ": " + o.error) << '\n';
    std::cout << "manifest: " << res.manifest.string() << '\n';
    return res.exit_code;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
}
