#include "archrefine/planner.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <set>
#include <sstream>

#include "archrefine/error.hpp"
#include "archrefine/text.hpp"

namespace archrefine {

namespace {

constexpr double kSnapTolerance = 1e-12;
constexpr std::uint32_t kMaxSplitExponent = 31;

double ratio(std::uint64_t count, std::uint64_t total) {
  if (total == 0) throw ValidationError("tally has n_total = 0");
  if (count > total) throw ValidationError("tally count exceeds n_total");
  return double(count) / double(total);
}

bool is_power_of_two(std::uint32_t v) { return v != 0 && (v & (v - 1)) == 0; }

}  // namespace

char case_code(FactorCase c) {
  switch (c) {
    case FactorCase::case_a:
      return 'a';
    case FactorCase::case_b:
      return 'b';
    case FactorCase::excluded:
      break;
  }
  return 'x';
}

FactorCase case_from_code(char code) {
  switch (code) {
    case 'a':
      return FactorCase::case_a;
    case 'b':
      return FactorCase::case_b;
    case 'x':
      return FactorCase::excluded;
    default:
      throw ValidationError(std::string("unknown case code '") + code + "'");
  }
}

std::uint32_t psi(double x, double lambda) {
  if (!(lambda > 0.0) || !std::isfinite(lambda)) {
    throw ValidationError("lambda must be a positive finite number");
  }
  if (!(x >= 0.0) || !std::isfinite(x)) throw ValidationError("psi needs a finite x >= 0");
  double q = x / lambda;
  double nearest = std::round(q);
  if (std::abs(q - nearest) <= kSnapTolerance * std::max(1.0, q)) q = nearest;
  q = std::floor(q);
  if (q > double(std::numeric_limits<std::uint32_t>::max())) {
    throw ValidationError("psi overflow: x / lambda is too large");
  }
  return std::uint32_t(q);
}

double phi(double x, double lambda) { return lambda * psi(x, lambda); }

double xi(std::span<const double> plus_ratio, std::size_t stage) {
  const std::size_t L = plus_ratio.size();
  if (stage + 2 >= L) return 0.0;
  double sum = 0.0;
  for (std::size_t t = stage + 1; t + 1 < L; ++t) {
    if (std::isnan(plus_ratio[t])) {
      throw ValidationError("no separation tallies for stage " + std::to_string(t) +
                            ", needed to average the gains after stage " + std::to_string(stage));
    }
    sum += plus_ratio[t];
  }
  return sum / double(L - stage - 2);
}

std::vector<double> stage_plus_ratios(const NetworkIR& ir, const TallyMap& tallies) {
  std::vector<double> sums(ir.num_stages(), 0.0);
  std::vector<std::size_t> counts(ir.num_stages(), 0);
  for (const auto& b : ir.blocks()) {
    auto it = tallies.find(b.name);
    if (it == tallies.end()) continue;
    sums[b.stage] += ratio(it->second.n_plus, it->second.n_total);
    ++counts[b.stage];
  }
  std::vector<double> out(ir.num_stages(), std::numeric_limits<double>::quiet_NaN());
  for (std::size_t s = 0; s < out.size(); ++s) {
    if (counts[s] > 0) out[s] = sums[s] / double(counts[s]);
  }
  return out;
}

std::uint32_t split_factor(std::uint64_t n_minus, std::uint64_t n_total, double xi_l,
                           double lambda) {
  auto exponent = psi(ratio(n_minus, n_total) * xi_l, lambda);
  if (exponent > kMaxSplitExponent) {
    throw ValidationError("split factor 2^" + std::to_string(exponent) +
                          " overflows; raise lambda");
  }
  return std::uint32_t{1} << exponent;
}

double stretch_factor(std::uint64_t n_plus, std::uint64_t n_total, double xi_l, double lambda) {
  return 1.0 + phi(ratio(n_plus, n_total) * xi_l, lambda);
}

std::vector<BlockTerms> block_terms(const NetworkIR& ir, const TallyMap& tallies) {
  for (const auto& [name, tally] : tallies) {
    if (!ir.find(name)) {
      throw ValidationError("tally for '" + name + "' does not match any block of the IR");
    }
  }
  auto ratios = stage_plus_ratios(ir, tallies);

  std::vector<BlockTerms> out;
  for (const auto& b : ir.blocks()) {
    if (b.excluded || b.prev.empty()) continue;
    auto it = tallies.find(b.name);
    if (it == tallies.end()) {
      throw ValidationError("block '" + b.name + "' is analysed but has no separation tally");
    }
    BlockTerms t;
    t.name = b.name;
    t.stage = b.stage;
    t.tally = it->second;
    t.xi = xi(ratios, b.stage);
    t.plus_term = ratio(t.tally.n_plus, t.tally.n_total) * t.xi;
    t.minus_term = ratio(t.tally.n_minus, t.tally.n_total) * t.xi;
    t.kind = t.tally.n_plus < t.tally.n_minus ? FactorCase::case_a : FactorCase::case_b;
    out.push_back(std::move(t));
  }
  return out;
}

double lambda_upper_bound(std::span<const BlockTerms> terms) {
  if (terms.empty()) throw ValidationError("no analysable blocks: cannot bound lambda");
  double bound = 0.0;
  for (const auto& t : terms) {
    bound = std::max(bound, t.minus_term);
    if (t.kind == FactorCase::case_b) bound = std::max(bound, t.plus_term);
  }
  return bound;
}

double lambda_upper_bound(const NetworkIR& ir, const TallyMap& tallies) {
  auto terms = block_terms(ir, tallies);
  return lambda_upper_bound(terms);
}

RefinementPlan build_plan(const NetworkIR& ir, const TallyMap& tallies,
                          const PlannerConfig& config) {
  if (!(config.lambda > 0.0)) throw ValidationError("lambda must be positive");
  auto terms = block_terms(ir, tallies);

  RefinementPlan plan;
  plan.lambda_used = config.lambda;
  plan.lambda_o = lambda_upper_bound(terms);
  plan.metadata["xi_aggregation"] = "stage_mean";
  for (const auto& b : ir.blocks()) plan.per_block[b.name] = BlockFactors{};

  for (const auto& t : terms) {
    BlockFactors f;
    f.kind = t.kind;
    f.split = split_factor(t.tally.n_minus, t.tally.n_total, t.xi, config.lambda);
    if (t.kind == FactorCase::case_b) {
      f.stretch = stretch_factor(t.tally.n_plus, t.tally.n_total, t.xi, config.lambda);
    }
    plan.per_block[t.name] = f;
  }
  return plan;
}

void validate_plan(const RefinementPlan& plan) {
  if (!(plan.lambda_used > 0.0)) throw ValidationError("plan lambda must be positive");
  if (!(plan.lambda_o >= 0.0)) throw ValidationError("plan lambda_o must be non-negative");
  for (const auto& [name, f] : plan.per_block) {
    auto where = "plan entry '" + name + "': ";
    if (!is_power_of_two(f.split)) {
      throw ValidationError(where + "split " + std::to_string(f.split) + " is not a power of two");
    }
    if (!(f.stretch >= 1.0) || !std::isfinite(f.stretch)) {
      throw ValidationError(where + "stretch must be >= 1");
    }
    double steps = (f.stretch - 1.0) / plan.lambda_used;
    if (std::abs(steps - std::round(steps)) > 1e-9 * std::max(1.0, steps)) {
      throw ValidationError(where + "stretch - 1 is not a multiple of lambda");
    }
    if (f.kind == FactorCase::case_a && f.stretch != 1.0) {
      throw ValidationError(where + "case a entries do not stretch");
    }
    if (f.kind == FactorCase::excluded && !f.is_identity()) {
      throw ValidationError(where + "excluded entries must be (1, 1)");
    }
  }
}

std::string serialize_plan(const RefinementPlan& plan) {
  std::ostringstream out;
  out << "lambda=" << text::format_real(plan.lambda_used) << '\n';
  out << "lambda_o=" << text::format_real(plan.lambda_o) << '\n';
  for (const auto& [key, value] : plan.metadata) out << "meta " << key << '=' << value << '\n';
  for (const auto& [name, f] : plan.per_block) {
    out << "plan " << name << " stretch=" << text::format_real(f.stretch)
        << " split=" << f.split << " case=" << case_code(f.kind) << '\n';
  }
  return out.str();
}

RefinementPlan parse_plan(std::string_view source) {
  RefinementPlan plan;
  bool have_lambda = false, have_lambda_o = false;
  std::size_t line_no = 0;
  for (auto raw : text::split(source, '\n')) {
    ++line_no;
    auto line = text::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    auto tokens = text::split_ws(line);

    if (tokens[0] == "plan") {
      if (tokens.size() != 5 || !text::is_identifier(tokens[1])) {
        throw ParseError(line_no, "expected 'plan <block> stretch=<real> split=<u32> case=<a|b|x>'");
      }
      BlockFactors f;
      const std::string_view keys[] = {"stretch", "split", "case"};
      for (std::size_t i = 0; i < 3; ++i) {
        auto kv = text::key_value(tokens[2 + i]);
        if (!kv || kv->first != keys[i]) {
          throw ParseError(line_no, "expected field '" + std::string(keys[i]) + "='");
        }
        if (i == 0) {
          auto v = text::parse_real(kv->second);
          if (!v) throw ParseError(line_no, "stretch expects a real number");
          f.stretch = *v;
        } else if (i == 1) {
          auto v = text::parse_u32(kv->second);
          if (!v) throw ParseError(line_no, "split expects an unsigned integer");
          f.split = *v;
        } else {
          if (kv->second.size() != 1) throw ParseError(line_no, "case expects a, b or x");
          try {
            f.kind = case_from_code(kv->second.front());
          } catch (const ValidationError& e) {
            throw ParseError(line_no, e.what());
          }
        }
      }
      if (!plan.per_block.emplace(std::string(tokens[1]), f).second) {
        throw ParseError(line_no, "block '" + std::string(tokens[1]) + "' planned twice");
      }
    } else if (tokens[0] == "meta") {
      auto kv = tokens.size() == 2 ? text::key_value(tokens[1]) : std::nullopt;
      if (!kv || !text::is_identifier(kv->first) || kv->second.empty()) {
        throw ParseError(line_no, "expected 'meta <key>=<value>'");
      }
      plan.metadata[std::string(kv->first)] = std::string(kv->second);
    } else if (auto kv = text::key_value(tokens[0]); kv && tokens.size() == 1) {
      auto v = text::parse_real(kv->second);
      if (!v) throw ParseError(line_no, "expected a real value for '" + std::string(kv->first) + "'");
      if (kv->first == "lambda" && !have_lambda) {
        plan.lambda_used = *v;
        have_lambda = true;
      } else if (kv->first == "lambda_o" && !have_lambda_o) {
        plan.lambda_o = *v;
        have_lambda_o = true;
      } else {
        throw ParseError(line_no, "unexpected or repeated header '" + std::string(kv->first) + "'");
      }
    } else {
      throw ParseError(line_no, "unrecognised line");
    }
  }
  if (!have_lambda || !have_lambda_o) {
    throw ValidationError("plan file needs both lambda= and lambda_o= headers");
  }
  validate_plan(plan);
  return plan;
}

}  // namespace archrefine
