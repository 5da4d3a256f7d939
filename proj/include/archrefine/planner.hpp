#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "archrefine/netir.hpp"
#include "archrefine/sepstats.hpp"

namespace archrefine {

using TallyMap = std::map<std::string, SeparationTally>;

inline constexpr double kDefaultLambda = 0.25;

struct PlannerConfig {
  double lambda = kDefaultLambda;
};

enum class FactorCase { excluded, case_a, case_b };

/// 'x', 'a' or 'b'.
char case_code(FactorCase c);
FactorCase case_from_code(char code);

struct BlockFactors {
  double stretch = 1.0;
  std::uint32_t split = 1;
  FactorCase kind = FactorCase::excluded;

  bool is_identity() const { return stretch == 1.0 && split == 1; }
  bool operator==(const BlockFactors&) const = default;
};

struct RefinementPlan {
  std::map<std::string, BlockFactors> per_block;
  double lambda_used = kDefaultLambda;
  double lambda_o = 0.0;
  Metadata metadata;

  bool operator==(const RefinementPlan&) const = default;
};

/// floor(x / lambda). A quotient within 1e-12 (relative) of an integer is
/// snapped to it first, so values that are exact multiples of lambda in real
/// arithmetic are not floored one step low.
std::uint32_t psi(double x, double lambda);

/// lambda * psi(x, lambda).
double phi(double x, double lambda);

/// Average separation gain of the stages after `stage`, excluding the final
/// stage: sum of plus_ratio[t] for t in (stage, L-2], divided by L - stage - 2,
/// with L = plus_ratio.size(). Returns 0 when that range is empty.
/// plus_ratio[t] is the mean of n_plus / n_total over the blocks of stage t;
/// a NaN entry inside the range raises ValidationError.
double xi(std::span<const double> plus_ratio, std::size_t stage);

/// Per-stage mean of n_plus / n_total over blocks with a tally. NaN for
/// stages without any tally (always for stage 0).
std::vector<double> stage_plus_ratios(const NetworkIR& ir, const TallyMap& tallies);

/// 2^psi((n_minus / n_total) * xi_l). Throws when the exponent exceeds 31.
std::uint32_t split_factor(std::uint64_t n_minus, std::uint64_t n_total, double xi_l,
                           double lambda);

/// 1 + phi((n_plus / n_total) * xi_l).
double stretch_factor(std::uint64_t n_plus, std::uint64_t n_total, double xi_l, double lambda);

/// Inputs to the factor formulas for one analysed block.
struct BlockTerms {
  std::string name;
  std::uint32_t stage = 0;
  SeparationTally tally;
  double xi = 0.0;
  double plus_term = 0.0;   // (n_plus / n_total) * xi
  double minus_term = 0.0;  // (n_minus / n_total) * xi
  FactorCase kind = FactorCase::case_b;
};

/// Terms for every analysed block (not excluded and fed by a predecessor).
/// Throws ValidationError when such a block has no tally or a tally names a
/// block that is not in the IR.
std::vector<BlockTerms> block_terms(const NetworkIR& ir, const TallyMap& tallies);

/// Largest term that can still move a factor: plus and minus terms of
/// case-b blocks and minus terms of case-a blocks. Any lambda above it
/// yields identity factors everywhere.
double lambda_upper_bound(std::span<const BlockTerms> terms);
double lambda_upper_bound(const NetworkIR& ir, const TallyMap& tallies);

/// Case a (n_plus < n_minus): split only. Case b: stretch and split.
/// Excluded blocks and blocks without a predecessor get (1, 1).
RefinementPlan build_plan(const NetworkIR& ir, const TallyMap& tallies,
                          const PlannerConfig& config = {});

/// Checks the plan invariants: lambda > 0, splits are powers of two,
/// stretch >= 1 and a whole number of lambda steps above 1, case-a entries do
/// not stretch, excluded entries are identity.
void validate_plan(const RefinementPlan& plan);

/// Header lines `lambda=<real>` and `lambda_o=<real>`, optional
/// `meta <key>=<value>` lines, then `plan <block> stretch=<real>
/// split=<u32> case=<a|b|x>` in block-name order.
std::string serialize_plan(const RefinementPlan& plan);
RefinementPlan parse_plan(std::string_view source);

}  // namespace archrefine
