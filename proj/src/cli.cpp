#include "archrefine/cli.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

#include "archrefine/evalkit.hpp"
#include "archrefine/featio.hpp"
#include "archrefine/netir.hpp"
#include "archrefine/rewriter.hpp"
#include "archrefine/sepstats.hpp"
#include "archrefine/text.hpp"

namespace archrefine::cli {

namespace fs = std::filesystem;

namespace {

std::ofstream open_output(const fs::path& path, bool binary = false) {
  fs::create_directories(path.parent_path());
  std::ofstream f(path, binary ? std::ios::binary | std::ios::trunc : std::ios::trunc);
  if (!f) throw Error("cannot write '" + path.string() + "'");
  return f;
}

void write_text(const fs::path& path, const std::string& content) {
  auto f = open_output(path);
  f << content;
}

void emit(std::ostream& diag, const std::vector<std::string>& warnings) {
  for (const auto& w : warnings) diag << "warning: " << w << '\n';
}

void require(const fs::path& path, const char* flag) {
  if (path.empty()) throw UsageError(std::string("missing required option ") + flag);
  if (!fs::exists(path)) throw UsageError(std::string(flag) + ": no such file '" + path.string() + "'");
}

void check_lambda(double lambda) {
  if (!(lambda > 0.0)) throw UsageError("--lambda must be positive");
}

AnalysisOptions analysis_options(const RunConfig& cfg) {
  AnalysisOptions opts;
  opts.tie_tol = cfg.tie_tol;
  opts.pair_mode = cfg.unordered_pairs ? PairMode::unordered : PairMode::ordered;
  opts.correlation.strict_degenerate = cfg.strict_degenerate;
  return opts;
}

Manifest manifest_for_cli(const fs::path& path) {
  require(path, "--manifest");
  auto m = load_manifest(path);
  if (m.layers.empty()) throw UsageError("manifest '" + path.string() + "' lists no layers");
  return m;
}

NetworkAnalysis analyze_inputs(const NetworkIR& ir, const fs::path& manifest_path,
                               const RunConfig& cfg) {
  auto sets = load_activations(manifest_for_cli(manifest_path));
  cross_validate(sets, ir);
  std::vector<ClassMeans> means;
  means.reserve(sets.size());
  for (const auto& s : sets) means.push_back(class_means(s));
  return analyze_network(ir, means, analysis_options(cfg));
}

void write_analysis(const fs::path& dir, const NetworkIR& ir, const NetworkAnalysis& analysis) {
  for (const auto& layer : analysis.stack.per_layer) {
    auto stem = file_stem(layer.layer_name);
    auto csv = open_output(dir / (stem + ".csv"));
    write_correlation_csv(csv, layer.matrix);
    auto pgm = open_output(dir / (stem + ".pgm"), true);
    write_correlation_pgm(pgm, layer.matrix);
  }
  auto tallies = open_output(dir / "tallies.csv");
  write_tallies_csv(tallies, ir, analysis.tallies);
}

TallyMap tallies_for(const NetworkIR& ir, const RunConfig& cfg, std::ostream& diag) {
  if (!cfg.tallies.empty()) {
    require(cfg.tallies, "--tallies");
    return read_tallies_csv(cfg.tallies);
  }
  if (cfg.manifests.empty()) throw UsageError("need --tallies or --manifest");
  auto analysis = analyze_inputs(ir, cfg.manifests.front(), cfg);
  emit(diag, analysis.warnings);
  return analysis.tallies;
}

NetworkIR load_ir(const RunConfig& cfg) {
  require(cfg.ir, "--ir");
  return read_network(cfg.ir.string());
}

RefinementPlan plan_and_report(const NetworkIR& ir, const TallyMap& tallies, double lambda,
                               std::ostream& out, std::ostream& diag) {
  auto plan = build_plan(ir, tallies, PlannerConfig{lambda});
  out << "lambda_o=" << text::format_real(plan.lambda_o) << '\n';
  if (lambda > plan.lambda_o) {
    diag << "warning: lambda " << text::format_real(lambda) << " exceeds lambda_o "
         << text::format_real(plan.lambda_o) << "; every factor is identity\n";
  }
  return plan;
}

void write_size_reports(const fs::path& dir, const std::string& stem, const SizeReport& report,
                        const std::vector<ChannelRounding>& rounding) {
  auto txt = open_output(dir / (stem + ".txt"));
  write_size_report_text(txt, report);
  auto csv = open_output(dir / (stem + ".csv"));
  write_size_report_csv(csv, report);
  auto log = open_output(dir / (stem + "_rounding.csv"));
  log << "block,original_out,stretch,target_out,multiple,refined_out\n";
  for (const auto& r : rounding) {
    log << r.block << ',' << r.original_out << ',' << text::format_real(r.stretch) << ','
        << r.target_out << ',' << r.multiple << ',' << r.refined_out << '\n';
  }
}

}  // namespace

std::string file_stem(const std::string& layer_name) {
  std::string s = layer_name;
  std::replace(s.begin(), s.end(), '/', '_');
  return s;
}

std::string plan_file_name(double lambda) {
  return "plan_lambda" + text::format_real(lambda) + ".txt";
}

void write_tallies_csv(std::ostream& out, const NetworkIR& ir, const TallyMap& tallies) {
  out << "block,stage,n_plus,n_minus,n_ties,n_total\n";
  for (const auto& b : ir.blocks()) {
    auto it = tallies.find(b.name);
    if (it == tallies.end()) continue;
    const auto& t = it->second;
    out << b.name << ',' << b.stage << ',' << t.n_plus << ',' << t.n_minus << ',' << t.n_ties
        << ',' << t.n_total << '\n';
  }
}

TallyMap read_tallies_csv(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open tallies file '" + path.string() + "'");
  TallyMap tallies;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    auto trimmed = text::trim(line);
    if (trimmed.empty() || line_no == 1) continue;
    auto fields = text::split(trimmed, ',');
    if (fields.size() != 6) throw ParseError(line_no, "expected 6 comma-separated fields");
    SeparationTally t;
    t.layer_name = std::string(fields[0]);
    std::uint64_t* slots[] = {&t.n_plus, &t.n_minus, &t.n_ties, &t.n_total};
    for (std::size_t i = 0; i < 4; ++i) {
      auto v = text::parse_u32(fields[2 + i]);
      if (!v) throw ParseError(line_no, "tally counts must be unsigned integers");
      *slots[i] = *v;
    }
    if (t.n_plus + t.n_minus + t.n_ties != t.n_total) {
      throw ParseError(line_no, "n_plus + n_minus + n_ties must equal n_total");
    }
    if (!tallies.emplace(t.layer_name, t).second) {
      throw ParseError(line_no, "block '" + t.layer_name + "' listed twice");
    }
  }
  return tallies;
}

void cmd_analyze(const RunConfig& cfg, std::ostream& out, std::ostream& diag) {
  auto ir = load_ir(cfg);
  if (cfg.manifests.empty()) throw UsageError("missing required option --manifest");
  auto analysis = analyze_inputs(ir, cfg.manifests.front(), cfg);
  emit(diag, analysis.warnings);
  write_analysis(cfg.out / "analysis", ir, analysis);
  out << "analysed " << analysis.stack.per_layer.size() << " layers, "
      << analysis.tallies.size() << " tallies -> " << (cfg.out / "analysis").string() << '\n';
}

void cmd_plan(const RunConfig& cfg, std::ostream& out, std::ostream& diag) {
  check_lambda(cfg.lambda);
  auto ir = load_ir(cfg);
  auto tallies = tallies_for(ir, cfg, diag);
  auto plan = plan_and_report(ir, tallies, cfg.lambda, out, diag);
  auto path = cfg.out / "plans" / plan_file_name(cfg.lambda);
  write_text(path, serialize_plan(plan));
  out << "plan -> " << path.string() << '\n';
}

void cmd_apply(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  auto ir = load_ir(cfg);
  require(cfg.plan, "--plan");
  std::ifstream in(cfg.plan);
  std::ostringstream ss;
  ss << in.rdbuf();
  auto plan = parse_plan(ss.str());
  auto result = rewrite(ir, plan);
  auto report = size_report(ir, result.ir);

  auto refined = cfg.out / "refined" / "refined.ir";
  write_text(refined, serialize_network(result.ir));
  write_size_reports(cfg.out / "reports", "size_report", report, result.rounding);
  out << "reduction_pct=" << text::format_real(report.reduction_pct) << '\n'
      << "refined -> " << refined.string() << '\n';
}

void cmd_sweep(const RunConfig& cfg, std::ostream& out, std::ostream& diag) {
  auto ir = load_ir(cfg);
  auto tallies = tallies_for(ir, cfg, diag);
  auto terms = block_terms(ir, tallies);
  const double lambda_o = lambda_upper_bound(terms);

  if (cfg.sweep_steps == 0) throw UsageError("--sweep-steps must be at least 1");
  const double lo = cfg.sweep_min;
  const double hi = cfg.sweep_max.value_or(lambda_o);
  check_lambda(lo);
  if (cfg.sweep_steps > 1 && !(lo < hi)) {
    throw UsageError("sweep needs --sweep-min < --sweep-max (max defaults to lambda_o = " +
                     text::format_real(lambda_o) + ")");
  }

  std::ostringstream table;
  table << "lambda,above_lambda_o,conv_params";
  for (const auto& b : ir.blocks()) table << ',' << b.name << "_stretch," << b.name << "_split";
  table << '\n';
  for (std::uint32_t i = 0; i < cfg.sweep_steps; ++i) {
    double lambda =
        cfg.sweep_steps == 1 ? lo : lo + (hi - lo) * double(i) / double(cfg.sweep_steps - 1);
    auto plan = build_plan(ir, tallies, PlannerConfig{lambda});
    auto refined = apply_plan(ir, plan);
    table << text::format_real(lambda) << ',' << (lambda > lambda_o ? 1 : 0) << ','
          << param_count(refined).conv_total;
    for (const auto& b : ir.blocks()) {
      const auto& f = plan.per_block.at(b.name);
      table << ',' << text::format_real(f.stretch) << ',' << f.split;
    }
    table << '\n';
  }
  auto path = cfg.out / "reports" / "sweep.csv";
  write_text(path, table.str());
  out << "lambda_o=" << text::format_real(lambda_o) << '\n' << "sweep -> " << path.string() << '\n';
}

void cmd_iterate(const RunConfig& cfg, std::ostream& out, std::ostream& diag) {
  check_lambda(cfg.lambda);
  if (cfg.rounds == 0) throw UsageError("--rounds must be at least 1");
  auto ir = load_ir(cfg);
  for (std::uint32_t round = 1; round <= cfg.rounds; ++round) {
    if (cfg.manifests.size() < round) {
      throw UsageError("missing activation manifest for round " + std::to_string(round) +
                       " (pass one --manifest per round)");
    }
    auto analysis = analyze_inputs(ir, cfg.manifests[round - 1], cfg);
    emit(diag, analysis.warnings);
    auto tag = "round_" + std::to_string(round);
    write_analysis(cfg.out / "analysis" / tag, ir, analysis);

    out << tag << ": ";
    auto plan = plan_and_report(ir, analysis.tallies, cfg.lambda, out, diag);
    write_text(cfg.out / "plans" / (tag + ".txt"), serialize_plan(plan));

    auto result = rewrite(ir, plan);
    auto report = size_report(ir, result.ir);
    write_text(cfg.out / "refined" / (tag + ".ir"), serialize_network(result.ir));
    write_size_reports(cfg.out / "reports", tag + "_size", report, result.rounding);
    out << tag << ": reduction_pct=" << text::format_real(report.reduction_pct) << '\n';
    ir = std::move(result.ir);
  }
}

void cmd_synth(const RunConfig& cfg, std::ostream& out, std::ostream&) {
  require(cfg.profile, "--profile");
  std::ifstream in(cfg.profile);
  std::ostringstream ss;
  ss << in.rdbuf();
  auto spec = parse_synth_profile(ss.str());
  auto manifest = write_synth_dumps(synth_activations(spec, cfg.seed), cfg.out / "synth");
  out << "manifest -> " << manifest.string() << '\n';
}

void cmd_precision(const RunConfig& cfg, std::ostream& out, std::ostream& diag) {
  require(cfg.scores, "--scores");
  require(cfg.truth, "--truth");
  auto dump = load_prediction_dump(cfg.scores, cfg.truth);
  auto result = precision_at_k(dump, cfg.k);
  if (!result.skipped_images.empty()) {
    diag << "warning: skipped " << result.skipped_images.size()
         << " images without positive labels\n";
  }
  std::ostringstream line;
  line << "precision@" << cfg.k << '=' << text::format_real(result.precision)
       << " tp=" << result.true_positives << " fp=" << result.false_positives << '\n';
  write_text(cfg.out / "reports" / "precision.txt", line.str());
  out << line.str();
}

}  // namespace archrefine::cli
