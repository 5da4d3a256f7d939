#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "archrefine/error.hpp"
#include "archrefine/planner.hpp"

namespace archrefine::cli {

/// Bad or missing command-line input; the front end exits with status 2.
class UsageError : public Error {
 public:
  using Error::Error;
};

struct RunConfig {
  std::filesystem::path ir;
  std::vector<std::filesystem::path> manifests;  // one per round for `iterate`
  std::filesystem::path tallies;                 // analysis/tallies.csv, alternative to a manifest
  std::filesystem::path plan;
  std::filesystem::path out = ".";
  double lambda = kDefaultLambda;
  double tie_tol = kDefaultTieTolerance;
  bool strict_degenerate = false;
  bool unordered_pairs = false;
  double sweep_min = 0.05;
  std::optional<double> sweep_max;  // defaults to lambda_o
  std::uint32_t sweep_steps = 20;
  std::uint32_t rounds = 1;
  std::filesystem::path profile;
  std::uint64_t seed = 0;
  std::filesystem::path scores;
  std::filesystem::path truth;
  std::uint32_t k = 1;
};

// Each command writes its data under `cfg.out` (analysis/, plans/, refined/,
// reports/, synth/), short status lines to `out` and warnings to `diag`.
// Errors are thrown.
void cmd_analyze(const RunConfig& cfg, std::ostream& out, std::ostream& diag);
void cmd_plan(const RunConfig& cfg, std::ostream& out, std::ostream& diag);
void cmd_apply(const RunConfig& cfg, std::ostream& out, std::ostream& diag);
void cmd_sweep(const RunConfig& cfg, std::ostream& out, std::ostream& diag);
void cmd_iterate(const RunConfig& cfg, std::ostream& out, std::ostream& diag);
void cmd_synth(const RunConfig& cfg, std::ostream& out, std::ostream& diag);
void cmd_precision(const RunConfig& cfg, std::ostream& out, std::ostream& diag);

/// `block,stage,n_plus,n_minus,n_ties,n_total` with a header row.
void write_tallies_csv(std::ostream& out, const NetworkIR& ir, const TallyMap& tallies);
TallyMap read_tallies_csv(const std::filesystem::path& path);

/// Layer name made safe for use as a file name.
std::string file_stem(const std::string& layer_name);

/// Fixed output name for a plan at a given lambda, e.g. plan_lambda0.25.txt.
std::string plan_file_name(double lambda);

}  // namespace archrefine::cli
