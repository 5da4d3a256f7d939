#include "archrefine/netir.hpp"

#include <random>

#include "archrefine/error.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "random_instances.hpp"

using namespace archrefine;

namespace {

std::string fixture(const char* name) { return std::string(FIXTURE_DIR) + "/" + name; }

ConvBlock make_block(std::string name, std::uint32_t in, std::uint32_t out, std::uint32_t k,
                     std::uint32_t group, std::uint32_t stage, std::vector<std::string> prev = {},
                     bool bias = false) {
  ConvBlock b;
  b.name = std::move(name);
  b.in_channels = in;
  b.out_channels = out;
  b.kernel_h = b.kernel_w = k;
  b.group = group;
  b.stage = stage;
  b.prev = std::move(prev);
  b.has_bias = bias;
  return b;
}

}  // namespace

TEST_CASE("minimal block parses and serializes to one canonical line") {
  auto ir = parse_network("block conv1 in=3 out=64 k=3x3 group=1 stage=0\n");
  REQUIRE(ir.blocks().size() == 1);
  CHECK(ir.num_stages() == 1);
  const auto& b = ir.blocks().front();
  CHECK(b.in_channels == 3);
  CHECK(b.out_channels == 64);
  CHECK(b.kernel_h == 3);
  CHECK(b.kernel_w == 3);
  CHECK(b.excluded);  // first and last stage at once
  CHECK(serialize_network(ir) == "block conv1 in=3 out=64 k=3x3 group=1 stage=0 excluded\n");
}

TEST_CASE("fields may come in any order; canonical output fixes the order") {
  auto ir = parse_network(
      "# comment\n"
      "block a stage=0 group=1 k=1x1 out=96 in=3\n"
      "\n"
      "block b prev=a stage=1 k=11x11 bias group=2 out=256 in=96\n");
  CHECK(serialize_network(ir) ==
        "block a in=3 out=96 k=1x1 group=1 stage=0 excluded\n"
        "block b in=96 out=256 k=11x11 group=2 stage=1 bias excluded prev=a\n");
}

TEST_CASE("96 -> 256 chain with a split of 2 on the consumer is valid") {
  auto ir = parse_network(
      "block conv_1 in=3 out=96 k=11x11 group=1 stage=0\n"
      "block conv_2 in=96 out=256 k=11x11 group=2 stage=1 prev=conv_1\n");
  CHECK(ir.block("conv_2").group == 2);
  CHECK(ir.edges() == std::vector<Edge>{{"conv_1", "conv_2"}});
  CHECK(ir.consumers("conv_1") == std::vector<std::string>{"conv_2"});
}

TEST_CASE("group 3 on a 96 -> 256 block feeding a group-6 consumer is rejected") {
  // Enumerate the divisibility relations the validator must see.
  CHECK(96 % 3 == 0);
  CHECK(256 % 3 != 0);
  CHECK(256 % 6 != 0);
  CHECK_THROWS_AS(parse_network("block a in=3 out=96 k=3x3 group=1 stage=0\n"
                                "block b in=96 out=256 k=3x3 group=3 stage=1 prev=a\n"
                                "block c in=256 out=60 k=3x3 group=6 stage=2 prev=b\n"),
                  ValidationError);
  // Each violation on its own.
  CHECK_THROWS_WITH_AS(parse_network("block a in=3 out=96 k=3x3 group=1 stage=0\n"
                                     "block b in=96 out=256 k=3x3 group=3 stage=1 prev=a\n"),
                       doctest::Contains("does not divide out_channels 256"), ValidationError);
  CHECK_THROWS_WITH_AS(parse_network("block a in=3 out=90 k=3x3 group=1 stage=0\n"
                                     "block b in=90 out=12 k=3x3 group=6 stage=1 prev=a\n"
                                     "block c in=90 out=12 k=3x3 group=4 stage=1 prev=a\n"),
                       doctest::Contains("does not divide in_channels 90"), ValidationError);
}

TEST_CASE("group must divide every predecessor's contribution") {
  // 18 + 14 = 32 is divisible by 4, but 18 and 14 are not.
  CHECK_THROWS_WITH_AS(parse_network("block s in=3 out=3 k=1x1 group=1 stage=0\n"
                                     "block a in=3 out=18 k=1x1 group=1 stage=1 prev=s\n"
                                     "block b in=3 out=14 k=1x1 group=1 stage=1 prev=s\n"
                                     "block c in=32 out=8 k=1x1 group=4 stage=2 prev=a,b\n"),
                       doctest::Contains("of predecessor"), ValidationError);
}

TEST_CASE("syntax errors carry the line number") {
  auto line_of = [](const char* src) {
    try {
      parse_network(src);
    } catch (const ParseError& e) {
      return e.line();
    }
    return std::size_t{0};
  };
  CHECK(line_of("# c\nblock a in=3 out=4 k=3x3 group=1 stage=0 colour=red\n") == 2);
  CHECK(line_of("block a in=3 out=4 k=3 group=1 stage=0\n") == 1);
  CHECK(line_of("block a in=3 out=4 k=3x3 stage=0\n") == 1);
  CHECK(line_of("\n\nlayer a\n") == 3);
  CHECK(line_of("block a in=-3 out=4 k=3x3 group=1 stage=0\n") == 1);
  CHECK(line_of("block a in=3 in=3 out=4 k=3x3 group=1 stage=0\n") == 1);
  CHECK(line_of("block a in=3 out=4 k=3x3 group=1 stage=0 excluded=2\n") == 1);
  CHECK(line_of("meta novalue\n") == 1);
}

TEST_CASE("structural validation") {
  SUBCASE("unknown predecessor") {
    CHECK_THROWS_WITH_AS(parse_network("block a in=3 out=4 k=1x1 group=1 stage=0\n"
                                       "block b in=4 out=4 k=1x1 group=1 stage=1 prev=zz\n"),
                         doctest::Contains("unknown block 'zz'"), ValidationError);
  }
  SUBCASE("cycle") {
    CHECK_THROWS_WITH_AS(parse_network("block a in=4 out=4 k=1x1 group=1 stage=0 prev=b\n"
                                       "block b in=4 out=4 k=1x1 group=1 stage=1 prev=a\n"),
                         doctest::Contains("cycle"), ValidationError);
  }
  SUBCASE("predecessor in the same stage") {
    CHECK_THROWS_WITH_AS(parse_network("block a in=3 out=4 k=1x1 group=1 stage=0\n"
                                       "block b in=4 out=4 k=1x1 group=1 stage=0 prev=a\n"),
                         doctest::Contains("strictly earlier"), ValidationError);
  }
  SUBCASE("stage gap") {
    CHECK_THROWS_WITH_AS(parse_network("block a in=3 out=4 k=1x1 group=1 stage=0\n"
                                       "block b in=4 out=4 k=1x1 group=1 stage=1 prev=a\n"
                                       "block c in=4 out=4 k=1x1 group=1 stage=3 prev=b\n"),
                         doctest::Contains("gap"), ValidationError);
  }
  SUBCASE("channel sum") {
    CHECK_THROWS_WITH_AS(parse_network("block a in=3 out=4 k=1x1 group=1 stage=0\n"
                                       "block b in=5 out=4 k=1x1 group=1 stage=1 prev=a\n"),
                         doctest::Contains("summed producer"), ValidationError);
  }
  SUBCASE("duplicate name") {
    CHECK_THROWS_AS(parse_network("block a in=3 out=4 k=1x1 group=1 stage=0\n"
                                  "block a in=3 out=4 k=1x1 group=1 stage=0\n"),
                    ValidationError);
  }
  SUBCASE("zero channels") {
    CHECK_THROWS_AS(parse_network("block a in=3 out=0 k=1x1 group=1 stage=0\n"),
                    ValidationError);
  }
  SUBCASE("empty") { CHECK_THROWS_AS(parse_network("# nothing\n"), ValidationError); }
}

TEST_CASE("VGG-11 fixture round-trips and serializes byte-stably") {
  auto ir = read_network(fixture("vgg11.ir"));
  REQUIRE(ir.blocks().size() == 8);
  CHECK(ir.num_stages() == 8);
  auto text = serialize_network(ir);
  CHECK(text == serialize_network(ir));
  auto again = parse_network(text);
  CHECK(again == ir);
  CHECK(serialize_network(again) == text);

  // First and last conv layers are excluded, everything else is analysed.
  for (const auto& b : ir.blocks()) {
    CHECK(b.excluded == (b.name == "conv1" || b.name == "conv8"));
  }
}

TEST_CASE("explicit exclusion overrides the default and survives a round trip") {
  auto ir = parse_network(
      "block a in=3 out=4 k=1x1 group=1 stage=0 excluded=0\n"
      "block b in=4 out=4 k=1x1 group=1 stage=1 excluded prev=a\n"
      "block c in=4 out=4 k=1x1 group=1 stage=2 prev=b\n");
  CHECK_FALSE(ir.block("a").excluded);
  CHECK(ir.block("b").excluded);
  CHECK(ir.block("c").excluded);
  auto text = serialize_network(ir);
  CHECK(text.find("block a in=3 out=4 k=1x1 group=1 stage=0 excluded=0\n") != std::string::npos);
  CHECK(parse_network(text) == ir);
}

TEST_CASE("default exclusion covers the final two-stage unit when the last stage branches") {
  auto ir = parse_network(
      "block s in=3 out=8 k=1x1 group=1 stage=0\n"
      "block m in=8 out=8 k=1x1 group=1 stage=1 prev=s\n"
      "block u1 in=8 out=8 k=1x1 group=1 stage=2 prev=m\n"
      "block u2 in=8 out=8 k=1x1 group=1 stage=3 prev=u1\n"
      "block u3 in=8 out=8 k=1x1 group=1 stage=3 prev=u1\n");
  CHECK(ir.block("s").excluded);
  CHECK_FALSE(ir.block("m").excluded);
  CHECK(ir.block("u1").excluded);
  CHECK(ir.block("u2").excluded);
  CHECK(ir.block("u3").excluded);
}

TEST_CASE("metadata lines round-trip in key order") {
  auto ir = parse_network("meta z=1\nmeta a=x\nblock c in=3 out=4 k=1x1 group=1 stage=0\n");
  CHECK(ir.metadata().at("a") == "x");
  auto text = serialize_network(ir);
  CHECK(text.rfind("meta a=x\nmeta z=1\n", 0) == 0);
  CHECK(parse_network(text) == ir);
}

TEST_CASE("analysis sequence") {
  SUBCASE("linear chain") {
    auto ir = read_network(fixture("vgg11.ir"));
    auto seq = analysis_sequence(ir);
    REQUIRE(seq.size() == 8);
    for (std::uint32_t s = 0; s < 8; ++s) {
      CHECK(seq[s].index == s);
      CHECK(seq[s].blocks == std::vector<std::string>{"conv" + std::to_string(s + 1)});
    }
  }
  SUBCASE("inception unit") {
    auto ir = read_network(fixture("inception.ir"));
    auto seq = analysis_sequence(ir);
    REQUIRE(seq.size() == 4);
    CHECK(seq[1].blocks.size() == 3);
    CHECK(seq[2].blocks.size() == 3);
    const std::vector<std::string> layer2 = {"inc/3x3", "inc/5x5", "inc/pool_proj"};
    for (const auto& name : seq[1].blocks) {
      CHECK(subsequent_blocks(ir, ir.block(name).stage) == layer2);
    }
    // The previous block of a layer-2 block is only the one it is fed by.
    CHECK(ir.block("inc/3x3").prev == std::vector<std::string>{"inc/3x3_reduce"});
    // Final stage contributes to nobody's subsequent set.
    CHECK(subsequent_blocks(ir, 2).empty());
  }
  SUBCASE("excluded blocks are retained") {
    auto ir = read_network(fixture("vgg11.ir"));
    std::size_t total = 0;
    for (const auto& s : analysis_sequence(ir)) total += s.blocks.size();
    CHECK(total == ir.blocks().size());
  }
}

TEST_CASE("parameter counts") {
  auto block = make_block("conv_2", 96, 256, 11, 1, 1);
  CHECK(block_params(block) == oracle::enumerate_connections(96, 256, 11, 11, 1, false));
  CHECK(block_params(block) == 2'973'696);
  block.group = 2;
  CHECK(block_params(block) == oracle::enumerate_connections(96, 256, 11, 11, 2, false));
  CHECK(block_params(block) == 1'486'848);
  CHECK(block_params(make_block("tiny", 3, 1, 1, 1, 0, {}, true)) == 4);

  block.group = 5;
  CHECK_THROWS_AS(block_params(block), ValidationError);

  auto ir = read_network(fixture("vgg11.ir"));
  auto pc = param_count(ir);
  std::uint64_t sum = 0;
  for (const auto& [name, n] : pc.per_block) sum += n;
  CHECK(pc.conv_total == sum);
  // 3*64*9 + 64 for conv1.
  CHECK(pc.per_block.at("conv1") == 1792);
}

TEST_CASE("property: no-bias params with group g equal group-1 params divided by g") {
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<std::uint32_t> e(0, 5), w(1, 12), k(1, 7);
  for (int i = 0; i < 500; ++i) {
    std::uint32_t g = 1u << e(rng);
    auto b = make_block("b", g * w(rng), g * w(rng), k(rng), 1, 0);
    auto dense = block_params(b);
    b.group = g;
    CHECK(block_params(b) * g == dense);
  }
}

TEST_CASE("property: parse(serialize(ir)) == ir on random networks") {
  std::mt19937_64 rng(11);
  for (int i = 0; i < 200; ++i) {
    auto ir = testgen::random_network(rng, 8, true);
    auto text = serialize_network(ir);
    auto back = parse_network(text);
    REQUIRE(back == ir);
    CHECK(serialize_network(back) == text);
  }
}
