#include "archrefine/rewriter.hpp"

#include <cmath>
#include <numeric>
#include <unordered_map>

#include "archrefine/error.hpp"
#include "archrefine/text.hpp"

namespace archrefine {

RewriteResult rewrite(const NetworkIR& ir, const RefinementPlan& plan) {
  for (const auto& [name, f] : plan.per_block) {
    if (!ir.find(name)) throw ValidationError("plan names unknown block '" + name + "'");
    if (!(f.stretch >= 1.0) || !std::isfinite(f.stretch) || f.split == 0) {
      throw ValidationError("plan entry '" + name + "' needs stretch >= 1 and split >= 1");
    }
  }

  std::unordered_map<std::string, std::uint64_t> new_group;
  for (const auto& b : ir.blocks()) {
    auto it = plan.per_block.find(b.name);
    if (it == plan.per_block.end()) {
      throw ValidationError("plan does not cover block '" + b.name + "'");
    }
    std::uint64_t g = std::uint64_t{b.group} * it->second.split;
    if (g > UINT32_MAX) throw ValidationError("block '" + b.name + "': group overflows");
    new_group.emplace(b.name, g);
  }

  RewriteResult result{ir, {}};
  std::vector<ConvBlock> blocks = ir.blocks();
  std::unordered_map<std::string, std::uint32_t> new_out;

  for (auto& b : blocks) {
    const auto& f = plan.per_block.at(b.name);
    std::uint64_t multiple = new_group.at(b.name);
    for (const auto& c : ir.consumers(b.name)) multiple = std::lcm(multiple, new_group.at(c));

    ChannelRounding r;
    r.block = b.name;
    r.original_out = b.out_channels;
    r.stretch = f.stretch;
    r.target_out = std::uint64_t(std::llround(double(b.out_channels) * f.stretch));
    std::uint64_t out = (r.target_out + multiple - 1) / multiple * multiple;
    if (multiple > UINT32_MAX || out > UINT32_MAX) {
      throw ValidationError("block '" + b.name + "': refined channel count overflows");
    }
    r.multiple = std::uint32_t(multiple);
    r.refined_out = std::uint32_t(out);
    new_out.emplace(b.name, r.refined_out);
    result.rounding.push_back(r);

    b.out_channels = r.refined_out;
    b.group = std::uint32_t(new_group.at(b.name));
  }

  for (auto& b : blocks) {
    if (b.prev.empty()) {
      if (b.in_channels % b.group != 0) {
        throw ValidationError("block '" + b.name + "': split to group " + std::to_string(b.group) +
                              " does not divide its fixed input width " +
                              std::to_string(b.in_channels) + "; cannot repair by rounding");
      }
      continue;
    }
    std::uint64_t in = 0;
    for (const auto& p : b.prev) in += new_out.at(p);
    if (in > UINT32_MAX) throw ValidationError("block '" + b.name + "': in_channels overflows");
    b.in_channels = std::uint32_t(in);
  }

  result.ir = NetworkIR(std::move(blocks), ir.metadata());
  return result;
}

RefinementPlan identity_plan(const NetworkIR& ir, double lambda) {
  RefinementPlan plan;
  plan.lambda_used = lambda;
  for (const auto& b : ir.blocks()) plan.per_block[b.name] = BlockFactors{};
  return plan;
}

SizeReport size_report(const NetworkIR& before, const NetworkIR& after) {
  auto a = param_count(before);
  auto b = param_count(after);
  if (a.per_block.size() != b.per_block.size()) {
    throw ValidationError("size report needs two IRs with the same blocks");
  }
  SizeReport r;
  r.original_conv_params = a.conv_total;
  r.refined_conv_params = b.conv_total;
  for (const auto& [name, n] : a.per_block) {
    auto it = b.per_block.find(name);
    if (it == b.per_block.end()) {
      throw ValidationError("block '" + name + "' missing from the refined IR");
    }
    r.per_block.push_back({name, n, it->second});
  }
  r.reduction_pct =
      100.0 * (1.0 - double(r.refined_conv_params) / double(r.original_conv_params));
  return r;
}

namespace {
double block_reduction(const BlockDelta& d) {
  return 100.0 * (1.0 - double(d.after) / double(d.before));
}
}  // namespace

void write_size_report_text(std::ostream& out, const SizeReport& report) {
  out << "conv params original: " << report.original_conv_params << '\n'
      << "conv params refined:  " << report.refined_conv_params << '\n'
      << "reduction_pct: " << text::format_real(report.reduction_pct) << '\n';
  for (const auto& d : report.per_block) {
    out << "  " << d.block << ": " << d.before << " -> " << d.after << " ("
        << text::format_real(block_reduction(d)) << "%)\n";
  }
}

void write_size_report_csv(std::ostream& out, const SizeReport& report) {
  out << "block,params_before,params_after,reduction_pct\n";
  for (const auto& d : report.per_block) {
    out << d.block << ',' << d.before << ',' << d.after << ','
        << text::format_real(block_reduction(d)) << '\n';
  }
  out << "TOTAL," << report.original_conv_params << ',' << report.refined_conv_params << ','
      << text::format_real(report.reduction_pct) << '\n';
}

}  // namespace archrefine
