#pragma once

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include "archrefine/netir.hpp"
#include "archrefine/planner.hpp"

namespace archrefine {

/// How one block's channel count was derived during a rewrite.
struct ChannelRounding {
  std::string block;
  std::uint32_t original_out = 0;
  double stretch = 1.0;
  std::uint64_t target_out = 0;  // round(original_out * stretch)
  std::uint32_t multiple = 1;    // lcm of this block's and its consumers' groups
  std::uint32_t refined_out = 0;
};

struct RewriteResult {
  NetworkIR ir;
  std::vector<ChannelRounding> rounding;
};

/// Applies stretch and split factors:
///   group'        = group * split
///   out_channels' = round(out_channels * stretch), rounded up to a multiple
///                   of lcm(group' of the block and of every consumer)
///   in_channels'  = sum of the producers' out_channels'
/// Input-stage blocks keep their in_channels; if group' does not divide them
/// the rewrite fails with ValidationError naming the block. The plan must
/// cover exactly the blocks of the IR.
RewriteResult rewrite(const NetworkIR& ir, const RefinementPlan& plan);

inline NetworkIR apply_plan(const NetworkIR& ir, const RefinementPlan& plan) {
  return rewrite(ir, plan).ir;
}

/// Plan with (1, 1) for every block of `ir`.
RefinementPlan identity_plan(const NetworkIR& ir, double lambda = kDefaultLambda);

struct BlockDelta {
  std::string block;
  std::uint64_t before = 0;
  std::uint64_t after = 0;
};

struct SizeReport {
  std::uint64_t original_conv_params = 0;
  std::uint64_t refined_conv_params = 0;
  double reduction_pct = 0.0;  // 100 * (1 - refined / original)
  std::vector<BlockDelta> per_block;
};

/// Both IRs must contain the same block names.
SizeReport size_report(const NetworkIR& before, const NetworkIR& after);

void write_size_report_text(std::ostream& out, const SizeReport& report);
void write_size_report_csv(std::ostream& out, const SizeReport& report);

}  // namespace archrefine
