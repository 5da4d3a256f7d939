#include "archrefine/netir.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>

#include "archrefine/error.hpp"
#include "archrefine/text.hpp"

namespace archrefine {

namespace {

std::uint32_t max_stage(const std::vector<ConvBlock>& blocks) {
  std::uint32_t m = 0;
  for (const auto& b : blocks) m = std::max(m, b.stage);
  return m;
}

// Kahn's algorithm over the prev-edges. Returns the names left on a cycle.
std::vector<std::string> cyclic_blocks(const std::vector<ConvBlock>& blocks) {
  std::unordered_map<std::string, std::size_t> index;
  for (std::size_t i = 0; i < blocks.size(); ++i) index.emplace(blocks[i].name, i);

  std::vector<std::size_t> indegree(blocks.size(), 0);
  std::vector<std::vector<std::size_t>> out(blocks.size());
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    for (const auto& p : blocks[i].prev) {
      auto it = index.find(p);
      if (it == index.end()) continue;
      out[it->second].push_back(i);
      ++indegree[i];
    }
  }
  std::vector<std::size_t> ready;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (indegree[i] == 0) ready.push_back(i);
  }
  std::size_t visited = 0;
  while (!ready.empty()) {
    auto n = ready.back();
    ready.pop_back();
    ++visited;
    for (auto c : out[n]) {
      if (--indegree[c] == 0) ready.push_back(c);
    }
  }
  std::vector<std::string> left;
  if (visited == blocks.size()) return left;
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    if (indegree[i] > 0) left.push_back(blocks[i].name);
  }
  return left;
}

std::string join(const std::vector<std::string>& names) {
  std::string out;
  for (const auto& n : names) {
    if (!out.empty()) out += ",";
    out += n;
  }
  return out;
}

void check_stage_contiguity(const std::vector<ConvBlock>& blocks) {
  std::set<std::uint32_t> stages;
  for (const auto& b : blocks) stages.insert(b.stage);
  std::uint32_t expected = 0;
  for (auto s : stages) {
    if (s != expected) {
      throw ValidationError("stage numbering has a gap: stage " + std::to_string(expected) +
                            " is empty but stage " + std::to_string(s) + " is populated");
    }
    ++expected;
  }
}

void validate(const std::vector<ConvBlock>& blocks) {
  if (blocks.empty()) throw ValidationError("network has no blocks");

  std::unordered_map<std::string_view, const ConvBlock*> by_name;
  for (const auto& b : blocks) {
    if (!text::is_identifier(b.name)) {
      throw ValidationError("invalid block name '" + b.name + "'");
    }
    if (!by_name.emplace(b.name, &b).second) {
      throw ValidationError("duplicate block name '" + b.name + "'");
    }
    if (b.in_channels == 0 || b.out_channels == 0 || b.kernel_h == 0 || b.kernel_w == 0 ||
        b.group == 0) {
      throw ValidationError("block '" + b.name +
                            "': channel counts, kernel size and group must be positive");
    }
  }

  for (const auto& b : blocks) {
    std::set<std::string_view> seen;
    for (const auto& p : b.prev) {
      if (!by_name.contains(p)) {
        throw ValidationError("block '" + b.name + "': edge from unknown block '" + p + "'");
      }
      if (!seen.insert(p).second) {
        throw ValidationError("block '" + b.name + "': duplicate edge from '" + p + "'");
      }
    }
  }

  if (auto cycle = cyclic_blocks(blocks); !cycle.empty()) {
    throw ValidationError("cycle detected among blocks " + join(cycle));
  }

  for (const auto& b : blocks) {
    for (const auto& p : b.prev) {
      if (by_name.at(p)->stage >= b.stage) {
        throw ValidationError("block '" + b.name + "' (stage " + std::to_string(b.stage) +
                              ") is fed by '" + p + "' whose stage is not strictly earlier");
      }
    }
  }

  check_stage_contiguity(blocks);

  for (const auto& b : blocks) {
    if (!b.prev.empty()) {
      std::uint64_t sum = 0;
      for (const auto& p : b.prev) sum += by_name.at(p)->out_channels;
      if (sum != b.in_channels) {
        throw ValidationError("block '" + b.name + "': in_channels " +
                              std::to_string(b.in_channels) +
                              " does not equal the summed producer out_channels " +
                              std::to_string(sum));
      }
    }
    if (b.in_channels % b.group != 0) {
      throw ValidationError("block '" + b.name + "': group " + std::to_string(b.group) +
                            " does not divide in_channels " + std::to_string(b.in_channels));
    }
    if (b.out_channels % b.group != 0) {
      throw ValidationError("block '" + b.name + "': group " + std::to_string(b.group) +
                            " does not divide out_channels " + std::to_string(b.out_channels));
    }
    for (const auto& p : b.prev) {
      auto producer_out = by_name.at(p)->out_channels;
      if (producer_out % b.group != 0) {
        throw ValidationError("block '" + b.name + "': group " + std::to_string(b.group) +
                              " does not divide out_channels " + std::to_string(producer_out) +
                              " of predecessor '" + p + "'");
      }
    }
  }
}

}  // namespace

NetworkIR::NetworkIR(std::vector<ConvBlock> blocks, Metadata metadata)
    : blocks_(std::move(blocks)), metadata_(std::move(metadata)) {
  validate(blocks_);
  for (const auto& [key, value] : metadata_) {
    if (!text::is_identifier(key) || value.empty() ||
        text::split_ws(value).size() != 1) {
      throw ValidationError("invalid metadata entry '" + key + "'");
    }
  }
  std::stable_sort(blocks_.begin(), blocks_.end(),
                   [](const ConvBlock& a, const ConvBlock& b) { return a.stage < b.stage; });
  num_stages_ = max_stage(blocks_) + 1;
}

const ConvBlock* NetworkIR::find(std::string_view name) const {
  auto it = std::find_if(blocks_.begin(), blocks_.end(),
                         [&](const ConvBlock& b) { return b.name == name; });
  return it == blocks_.end() ? nullptr : &*it;
}

const ConvBlock& NetworkIR::block(std::string_view name) const {
  if (const auto* b = find(name)) return *b;
  throw ValidationError("unknown block '" + std::string(name) + "'");
}

std::vector<Edge> NetworkIR::edges() const {
  std::vector<Edge> out;
  for (const auto& b : blocks_) {
    for (const auto& p : b.prev) out.push_back({p, b.name});
  }
  return out;
}

std::vector<std::string> NetworkIR::consumers(std::string_view name) const {
  std::vector<std::string> out;
  for (const auto& b : blocks_) {
    if (std::find(b.prev.begin(), b.prev.end(), name) != b.prev.end()) out.push_back(b.name);
  }
  return out;
}

bool default_excluded(const std::vector<ConvBlock>& blocks, const ConvBlock& block) {
  auto last = max_stage(blocks);
  if (block.stage == 0 || block.stage == last) return true;
  auto in_last = std::count_if(blocks.begin(), blocks.end(),
                               [&](const ConvBlock& b) { return b.stage == last; });
  return in_last > 1 && block.stage + 1 == last;
}

NetworkIR parse_network(std::string_view source) {
  std::vector<ConvBlock> blocks;
  std::vector<int> explicit_excluded;  // -1 unset, 0 / 1 explicit
  Metadata metadata;

  std::size_t line_no = 0;
  for (auto raw : text::split(source, '\n')) {
    ++line_no;
    auto line = text::trim(raw);
    if (line.empty() || line.front() == '#') continue;
    auto tokens = text::split_ws(line);

    if (tokens[0] == "meta") {
      if (tokens.size() != 2) throw ParseError(line_no, "expected 'meta <key>=<value>'");
      auto kv = text::key_value(tokens[1]);
      if (!kv || !text::is_identifier(kv->first) || kv->second.empty()) {
        throw ParseError(line_no, "expected 'meta <key>=<value>'");
      }
      if (!metadata.emplace(std::string(kv->first), std::string(kv->second)).second) {
        throw ParseError(line_no, "duplicate metadata key '" + std::string(kv->first) + "'");
      }
      continue;
    }
    if (tokens[0] != "block") {
      throw ParseError(line_no, "unknown directive '" + std::string(tokens[0]) + "'");
    }
    if (tokens.size() < 2 || !text::is_identifier(tokens[1])) {
      throw ParseError(line_no, "expected a block name after 'block'");
    }

    ConvBlock b;
    b.name = std::string(tokens[1]);
    int excluded = -1;
    std::set<std::string_view> seen;
    auto need_u32 = [&](std::string_view key, std::string_view value) {
      auto v = text::parse_u32(value);
      if (!v) {
        throw ParseError(line_no, "field '" + std::string(key) + "' expects an unsigned integer, got '" +
                                      std::string(value) + "'");
      }
      return *v;
    };

    for (std::size_t i = 2; i < tokens.size(); ++i) {
      auto tok = tokens[i];
      auto kv = text::key_value(tok);
      std::string_view key = kv ? kv->first : tok;
      if (!seen.insert(key).second) {
        throw ParseError(line_no, "field '" + std::string(key) + "' given twice");
      }
      if (!kv) {
        if (tok == "bias") {
          b.has_bias = true;
        } else if (tok == "excluded") {
          excluded = 1;
        } else {
          throw ParseError(line_no, "unknown flag '" + std::string(tok) + "'");
        }
        continue;
      }
      auto value = kv->second;
      if (key == "in") {
        b.in_channels = need_u32(key, value);
      } else if (key == "out") {
        b.out_channels = need_u32(key, value);
      } else if (key == "k") {
        auto dims = text::split(value, 'x');
        if (dims.size() != 2) throw ParseError(line_no, "field 'k' expects <h>x<w>");
        b.kernel_h = need_u32(key, dims[0]);
        b.kernel_w = need_u32(key, dims[1]);
      } else if (key == "group") {
        b.group = need_u32(key, value);
      } else if (key == "stage") {
        b.stage = need_u32(key, value);
      } else if (key == "excluded") {
        if (value != "0" && value != "1") throw ParseError(line_no, "excluded= expects 0 or 1");
        excluded = value == "1" ? 1 : 0;
      } else if (key == "prev") {
        for (auto p : text::split(value, ',')) {
          if (!text::is_identifier(p)) {
            throw ParseError(line_no, "invalid predecessor name '" + std::string(p) + "'");
          }
          b.prev.emplace_back(p);
        }
      } else {
        throw ParseError(line_no, "unknown field '" + std::string(key) + "'");
      }
    }
    for (std::string_view required : {"in", "out", "k", "group", "stage"}) {
      if (!seen.contains(required)) {
        throw ParseError(line_no, "missing field '" + std::string(required) + "'");
      }
    }
    blocks.push_back(std::move(b));
    explicit_excluded.push_back(excluded);
  }

  for (std::size_t i = 0; i < blocks.size(); ++i) {
    blocks[i].excluded = explicit_excluded[i] < 0 ? default_excluded(blocks, blocks[i])
                                                  : explicit_excluded[i] == 1;
  }
  return NetworkIR(std::move(blocks), std::move(metadata));
}

NetworkIR read_network(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open IR file '" + path + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_network(ss.str());
}

std::string serialize_network(const NetworkIR& ir) {
  std::ostringstream out;
  for (const auto& [key, value] : ir.metadata()) out << "meta " << key << '=' << value << '\n';
  for (const auto& b : ir.blocks()) {
    out << "block " << b.name << " in=" << b.in_channels << " out=" << b.out_channels
        << " k=" << b.kernel_h << 'x' << b.kernel_w << " group=" << b.group
        << " stage=" << b.stage;
    if (b.has_bias) out << " bias";
    if (b.excluded) {
      out << " excluded";
    } else if (default_excluded(ir.blocks(), b)) {
      out << " excluded=0";
    }
    if (!b.prev.empty()) out << " prev=" << join(b.prev);
    out << '\n';
  }
  return out.str();
}

std::vector<Stage> analysis_sequence(const NetworkIR& ir) {
  const auto& blocks = ir.blocks();
  if (auto cycle = cyclic_blocks(blocks); !cycle.empty()) {
    throw ValidationError("cycle detected among blocks " + join(cycle));
  }
  check_stage_contiguity(blocks);

  std::vector<Stage> stages(max_stage(blocks) + 1);
  for (std::uint32_t s = 0; s < stages.size(); ++s) stages[s].index = s;
  for (const auto& b : blocks) stages[b.stage].blocks.push_back(b.name);
  return stages;
}

std::vector<std::string> subsequent_blocks(const NetworkIR& ir, std::uint32_t stage) {
  std::vector<std::string> out;
  auto last = ir.num_stages() - 1;
  for (const auto& b : ir.blocks()) {
    if (b.stage > stage && b.stage < last) out.push_back(b.name);
  }
  return out;
}

std::uint64_t block_params(const ConvBlock& b) {
  if (b.group == 0 || b.in_channels % b.group != 0) {
    throw ValidationError("block '" + b.name + "': group " + std::to_string(b.group) +
                          " does not divide in_channels " + std::to_string(b.in_channels));
  }
  std::uint64_t weights = std::uint64_t{b.in_channels / b.group} * b.kernel_h * b.kernel_w *
                          b.out_channels;
  return weights + (b.has_bias ? b.out_channels : 0);
}

ParamCount param_count(const NetworkIR& ir) {
  ParamCount pc;
  for (const auto& b : ir.blocks()) {
    auto n = block_params(b);
    pc.per_block.emplace(b.name, n);
    pc.conv_total += n;
  }
  return pc;
}

}  // namespace archrefine
