#include <iostream>

#include "CLI11.hpp"
#include "archrefine/cli.hpp"

namespace cli = archrefine::cli;

int main(int argc, char** argv) {
  CLI::App app{"archrefine: stretch / symmetric-split refinement of CNN architectures"};
  app.require_subcommand(1);

  cli::RunConfig cfg;
  std::string out_dir = ".";

  auto add_common = [&](CLI::App* sub) { sub->add_option("--out", out_dir, "Output directory"); };
  auto add_ir = [&](CLI::App* sub) {
    sub->add_option("--ir", cfg.ir, "Network IR file")->required();
  };
  auto add_stats = [&](CLI::App* sub) {
    sub->add_option("--manifest", cfg.manifests, "Activation manifest (one per round for iterate)");
    sub->add_option("--tie-tol", cfg.tie_tol, "Absolute tolerance for unchanged correlations")
        ->capture_default_str();
    sub->add_flag("--strict-degenerate", cfg.strict_degenerate,
                  "Fail on constant class-mean vectors instead of warning");
    sub->add_flag("--unordered-pairs", cfg.unordered_pairs,
                  "Count the M(M-1)/2 unordered class pairs instead of all M^2 ordered pairs");
  };
  auto add_lambda = [&](CLI::App* sub) {
    sub->add_option("--lambda", cfg.lambda, "Reduction control parameter")->capture_default_str();
  };

  auto* analyze = app.add_subcommand("analyze", "Correlation heatmaps and separation tallies");
  add_common(analyze);
  add_ir(analyze);
  add_stats(analyze);

  auto* plan = app.add_subcommand("plan", "Stretch and split factors for one lambda");
  add_common(plan);
  add_ir(plan);
  add_stats(plan);
  add_lambda(plan);
  plan->add_option("--tallies", cfg.tallies, "tallies.csv written by analyze");

  auto* apply = app.add_subcommand("apply", "Rewrite an IR with a plan and report its size");
  add_common(apply);
  add_ir(apply);
  apply->add_option("--plan", cfg.plan, "Plan file")->required();

  auto* sweep = app.add_subcommand("sweep", "Factors and model size over a lambda grid");
  add_common(sweep);
  add_ir(sweep);
  add_stats(sweep);
  sweep->add_option("--tallies", cfg.tallies, "tallies.csv written by analyze");
  sweep->add_option("--sweep-min", cfg.sweep_min)->capture_default_str();
  sweep->add_option("--sweep-max", cfg.sweep_max, "Defaults to lambda_o");
  sweep->add_option("--sweep-steps", cfg.sweep_steps)->capture_default_str();

  auto* iterate = app.add_subcommand("iterate", "Repeated analyze/plan/apply rounds");
  add_common(iterate);
  add_ir(iterate);
  add_stats(iterate);
  add_lambda(iterate);
  iterate->add_option("--rounds", cfg.rounds)->capture_default_str();

  auto* synth = app.add_subcommand("synth", "Synthetic activation dumps from a correlation profile");
  add_common(synth);
  synth->add_option("--profile", cfg.profile, "JSON profile")->required();
  synth->add_option("--seed", cfg.seed)->capture_default_str();

  auto* precision = app.add_subcommand("precision", "precision@k over a prediction dump");
  add_common(precision);
  precision->add_option("--scores", cfg.scores, "ATNS rank-2 score tensor")->required();
  precision->add_option("--truth", cfg.truth, "ATMH multi-hot truth")->required();
  precision->add_option("--k", cfg.k)->required();

  CLI11_PARSE(app, argc, argv);
  cfg.out = out_dir;

  try {
    if (*analyze) cli::cmd_analyze(cfg, std::cout, std::cerr);
    if (*plan) cli::cmd_plan(cfg, std::cout, std::cerr);
    if (*apply) cli::cmd_apply(cfg, std::cout, std::cerr);
    if (*sweep) cli::cmd_sweep(cfg, std::cout, std::cerr);
    if (*iterate) cli::cmd_iterate(cfg, std::cout, std::cerr);
    if (*synth) cli::cmd_synth(cfg, std::cout, std::cerr);
    if (*precision) cli::cmd_precision(cfg, std::cout, std::cerr);
  } catch (const cli::UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
