#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace archrefine {

/// One convolutional block. `group` is the symmetric-split factor applied to
/// this block's inputs; `stage` is its position in the analysis sequence.
struct ConvBlock {
  std::string name;
  std::uint32_t in_channels = 1;
  std::uint32_t out_channels = 1;
  std::uint32_t kernel_h = 1;
  std::uint32_t kernel_w = 1;
  std::uint32_t group = 1;
  bool has_bias = false;
  std::uint32_t stage = 0;
  bool excluded = false;
  std::vector<std::string> prev;

  bool operator==(const ConvBlock&) const = default;
};

struct Edge {
  std::string producer;
  std::string consumer;

  bool operator==(const Edge&) const = default;
};

using Metadata = std::map<std::string, std::string>;

/// Immutable, validated network of convolutional blocks.
///
/// Blocks are kept stably sorted by stage. Construction throws
/// ValidationError when any invariant fails:
///   - unique names, `prev` names resolve, graph acyclic
///   - every predecessor sits in a strictly earlier stage
///   - stages 0..num_stages-1 are all populated
///   - in_channels equals the summed out_channels of the predecessors
///   - group divides in_channels, out_channels and each predecessor's
///     out_channels
class NetworkIR {
 public:
  explicit NetworkIR(std::vector<ConvBlock> blocks, Metadata metadata = {});

  const std::vector<ConvBlock>& blocks() const noexcept { return blocks_; }
  const Metadata& metadata() const noexcept { return metadata_; }
  std::uint32_t num_stages() const noexcept { return num_stages_; }

  const ConvBlock* find(std::string_view name) const;
  /// Throws ValidationError for an unknown name.
  const ConvBlock& block(std::string_view name) const;

  std::vector<Edge> edges() const;
  /// Names of blocks that list `name` in their `prev`, in block order.
  std::vector<std::string> consumers(std::string_view name) const;

  bool operator==(const NetworkIR& other) const {
    return blocks_ == other.blocks_ && metadata_ == other.metadata_;
  }

 private:
  std::vector<ConvBlock> blocks_;
  Metadata metadata_;
  std::uint32_t num_stages_ = 0;
};

/// Default exclusion rule: blocks in the first stage, blocks in the last
/// stage, and, when the last stage holds several blocks (an inception-style
/// unit spanning two stages), blocks in the stage before it too.
bool default_excluded(const std::vector<ConvBlock>& blocks, const ConvBlock& block);

/// Parses the line-oriented IR text. Blocks without an explicit `excluded`
/// or `excluded=0|1` field get default_excluded().
NetworkIR parse_network(std::string_view text);
NetworkIR read_network(const std::string& path);

/// Canonical text: `meta` lines sorted by key, then one line per block in
/// stage order with fields in grammar order.
std::string serialize_network(const NetworkIR& ir);

struct Stage {
  std::uint32_t index = 0;
  std::vector<std::string> blocks;
  bool operator==(const Stage&) const = default;
};

/// Stages in ascending order; excluded blocks are retained in their stage.
/// Re-checks acyclicity and stage contiguity.
std::vector<Stage> analysis_sequence(const NetworkIR& ir);

/// Blocks considered "subsequent" to `stage` when averaging separation gains:
/// every block in a strictly later stage, up to but excluding the final stage.
std::vector<std::string> subsequent_blocks(const NetworkIR& ir, std::uint32_t stage);

struct ParamCount {
  std::map<std::string, std::uint64_t> per_block;
  std::uint64_t conv_total = 0;
};

/// (in/group) * kh * kw * out, plus out when the block has a bias.
std::uint64_t block_params(const ConvBlock& block);
ParamCount param_count(const NetworkIR& ir);

}  // namespace archrefine
