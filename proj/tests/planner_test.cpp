#include "archrefine/planner.hpp"

#include <cmath>
#include <limits>
#include <random>

#include "archrefine/error.hpp"
#include "doctest.h"
#include "oracles.hpp"
#include "random_instances.hpp"

using namespace archrefine;

namespace {

const double kNaN = std::numeric_limits<double>::quiet_NaN();

SeparationTally tally(std::string name, std::uint64_t plus, std::uint64_t minus,
                      std::uint64_t total = 16) {
  return {std::move(name), plus, minus, total - plus - minus, total};
}

NetworkIR chain5() {
  return parse_network(
      "block s0 in=3 out=32 k=3x3 group=1 stage=0\n"
      "block s1 in=32 out=64 k=3x3 group=1 stage=1 prev=s0\n"
      "block s2 in=64 out=64 k=3x3 group=1 stage=2 prev=s1\n"
      "block s3 in=64 out=128 k=3x3 group=1 stage=3 prev=s2\n"
      "block s4 in=128 out=10 k=1x1 group=1 stage=4 prev=s3\n");
}

TallyMap chain5_tallies() {
  TallyMap t;
  for (auto x : {tally("s1", 12, 4), tally("s2", 2, 8), tally("s3", 12, 0), tally("s4", 4, 4)}) {
    t.emplace(x.layer_name, x);
  }
  return t;
}

}  // namespace

TEST_CASE("xi averages the later stages before the last one") {
  const std::vector<double> r = {kNaN, 0.5, 0.5, 0.75, 0.1};
  CHECK(xi(r, 1) == 0.625);
  CHECK(xi(r, 2) == 0.75);
  CHECK(xi(r, 3) == 0.0);
  CHECK(xi(r, 4) == 0.0);
  CHECK(xi(r, 0) == doctest::Approx((0.5 + 0.5 + 0.75) / 3));
  const std::vector<double> gap = {kNaN, 0.5, kNaN, 0.75, 0.1};
  CHECK_THROWS_AS(xi(gap, 1), ValidationError);
  CHECK(xi(gap, 2) == 0.75);
}

TEST_CASE("psi and phi") {
  CHECK(psi(0.46875, 0.25) == 1);
  CHECK(psi(0.5, 0.25) == 2);
  CHECK(psi(0.25, 0.25) == 1);
  CHECK(psi(0.2499, 0.25) == 0);
  CHECK(psi(0.0, 0.25) == 0);
  // 0.3 / 0.1 is 2.9999999999999996 in binary; it means 3.
  CHECK(psi(0.3, 0.1) == 3);
  CHECK(phi(0.46875, 0.25) == 0.25);
  CHECK(phi(0.3, 0.1) == doctest::Approx(0.3));
  CHECK_THROWS_AS(psi(0.5, 0.0), ValidationError);
  CHECK_THROWS_AS(psi(-0.1, 0.25), ValidationError);
  CHECK_THROWS_AS(psi(std::nan(""), 0.25), ValidationError);
}

TEST_CASE("property: phi is lambda times psi and never exceeds x") {
  std::mt19937_64 rng(3);
  std::uniform_real_distribution<double> x_d(0.0, 2.0), l_d(0.01, 1.0);
  for (int i = 0; i < 1000; ++i) {
    const double x = x_d(rng), l = l_d(rng);
    CHECK(phi(x, l) == l * psi(x, l));
    CHECK(phi(x, l) <= x * (1 + 1e-12));
    CHECK(x - phi(x, l) < l);
  }
}

TEST_CASE("split and stretch factors") {
  CHECK(split_factor(12, 16, 0.625, 0.25) == 2);
  CHECK(split_factor(4, 16, 0.625, 0.25) == 1);
  CHECK(split_factor(16, 16, 1.0, 0.25) == 16);
  CHECK(stretch_factor(12, 16, 0.625, 0.25) == 1.25);
  CHECK(stretch_factor(16, 16, 1.0, 0.5) == 2.0);
  CHECK(stretch_factor(0, 16, 1.0, 0.25) == 1.0);
  CHECK_THROWS_AS(split_factor(16, 16, 1.0, 1.0 / 40), ValidationError);
  CHECK_THROWS_AS(split_factor(1, 0, 1.0, 0.25), ValidationError);
  CHECK_THROWS_AS(stretch_factor(17, 16, 1.0, 0.25), ValidationError);
}

TEST_CASE("one term at lambda gives split 2 and stretch 1.25 together") {
  // (n/n_T) * xi = 0.25 on both sides.
  CHECK(split_factor(8, 16, 0.5, 0.25) == 2);
  CHECK(stretch_factor(8, 16, 0.5, 0.25) == 1.25);
}

TEST_CASE("lambda upper bound") {
  std::vector<BlockTerms> terms(2);
  terms[0].kind = FactorCase::case_b;
  terms[0].plus_term = 0.3;
  terms[0].minus_term = 0.1;
  terms[1].kind = FactorCase::case_a;
  terms[1].plus_term = 0.5;  // ignored: case a never stretches
  terms[1].minus_term = 0.2;
  CHECK(lambda_upper_bound(terms) == 0.3);
  terms[1].minus_term = 0.4;
  CHECK(lambda_upper_bound(terms) == 0.4);
  CHECK_THROWS_AS(lambda_upper_bound(std::span<const BlockTerms>{}), ValidationError);

  // A three-stage chain has one analysed block and nothing after it.
  auto ir = parse_network(
      "block a in=3 out=8 k=1x1 group=1 stage=0\n"
      "block b in=8 out=8 k=1x1 group=1 stage=1 prev=a\n"
      "block c in=8 out=8 k=1x1 group=1 stage=2 prev=b\n");
  TallyMap t{{"b", tally("b", 10, 2)}, {"c", tally("c", 3, 3)}};
  CHECK(lambda_upper_bound(ir, t) == 0.0);
}

TEST_CASE("build plan dispatches cases") {
  auto plan = build_plan(chain5(), chain5_tallies());
  CHECK(plan.lambda_used == 0.25);
  CHECK(plan.lambda_o == 0.375);
  CHECK(plan.metadata.at("xi_aggregation") == "stage_mean");
  CHECK(plan.per_block.at("s0") == BlockFactors{1.0, 1, FactorCase::excluded});
  CHECK(plan.per_block.at("s1") == BlockFactors{1.25, 1, FactorCase::case_b});
  CHECK(plan.per_block.at("s2") == BlockFactors{1.0, 2, FactorCase::case_a});
  CHECK(plan.per_block.at("s3") == BlockFactors{1.0, 1, FactorCase::case_b});
  CHECK(plan.per_block.at("s4") == BlockFactors{1.0, 1, FactorCase::excluded});
  validate_plan(plan);

  auto above = build_plan(chain5(), chain5_tallies(), {.lambda = 0.375 * (1 + 1e-9)});
  for (const auto& [name, f] : above.per_block) CHECK(f.is_identity());
  auto at = build_plan(chain5(), chain5_tallies(), {.lambda = 0.375});
  CHECK(at.per_block.at("s2").split == 2);
}

TEST_CASE("build plan errors") {
  auto t = chain5_tallies();
  t.erase("s2");
  CHECK_THROWS_WITH_AS(build_plan(chain5(), t), doctest::Contains("stage 2"), ValidationError);
  t = chain5_tallies();
  t.erase("s3");
  t.emplace("s4", tally("s4", 4, 4));
  // s3 is the last analysed stage; without a tally its own terms are missing.
  auto wide = parse_network(
      "block s0 in=3 out=32 k=3x3 group=1 stage=0\n"
      "block s1 in=32 out=64 k=3x3 group=1 stage=1 prev=s0\n"
      "block s2 in=64 out=64 k=3x3 group=1 stage=2 prev=s1\n"
      "block s3 in=64 out=128 k=3x3 group=1 stage=3 prev=s2\n"
      "block r3 in=64 out=128 k=3x3 group=1 stage=3 prev=s2\n"
      "block s4 in=256 out=10 k=1x1 group=1 stage=4 prev=s3,r3\n");
  t.emplace("r3", tally("r3", 1, 1));
  CHECK_THROWS_WITH_AS(build_plan(wide, t), doctest::Contains("'s3'"), ValidationError);
  t = chain5_tallies();
  t.emplace("ghost", tally("ghost", 1, 1));
  CHECK_THROWS_WITH_AS(build_plan(chain5(), t), doctest::Contains("ghost"), ValidationError);
  CHECK_THROWS_AS(build_plan(chain5(), chain5_tallies(), {.lambda = 0.0}), ValidationError);
  // Excluded blocks need no tally.
  t = chain5_tallies();
  t.erase("s4");
  CHECK_NOTHROW(build_plan(chain5(), t));
}

TEST_CASE("property: planner matches the exact-rational oracle") {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> l_d(0.05, 1.0);
  for (int i = 0; i < 300; ++i) {
    auto inst = testgen::random_instance(rng);
    const double lambda = i % 4 == 0 ? std::ldexp(1.0, -int(rng() % 4 + 1)) : l_d(rng);
    std::optional<RefinementPlan> plan;
    try {
      plan = build_plan(inst.ir, inst.tallies, {.lambda = lambda});
    } catch (const ValidationError&) {
      // No analysable blocks; the oracle must agree.
      CHECK_THROWS(oracle::plan(testgen::oracle_inputs(inst), int(inst.ir.num_stages()), lambda));
      continue;
    }
    auto want = oracle::plan(testgen::oracle_inputs(inst), int(inst.ir.num_stages()), lambda);
    std::string why;
    INFO(serialize_network(inst.ir));
    CHECK_MESSAGE(testgen::matches_oracle(*plan, want, lambda, &why), why);
    CHECK(plan->lambda_o == doctest::Approx(want.lambda_o.convert_to<double>()).epsilon(1e-15));
  }
}

TEST_CASE("property: splits shrink and identity is reached as lambda grows") {
  std::mt19937_64 rng(5);
  for (int i = 0; i < 100; ++i) {
    auto inst = testgen::random_instance(rng);
    double lambda_o = 0;
    try {
      lambda_o = lambda_upper_bound(inst.ir, inst.tallies);
    } catch (const ValidationError&) {
      continue;
    }
    std::map<std::string, std::uint32_t> last;
    for (int g = 1; g <= 20; ++g) {
      const double lambda = 0.05 + g * 0.05;
      auto plan = build_plan(inst.ir, inst.tallies, {.lambda = lambda});
      for (const auto& [name, f] : plan.per_block) {
        if (last.count(name)) CHECK(f.split <= last[name]);
        last[name] = f.split;
        if (lambda > lambda_o) CHECK(f.is_identity());
      }
    }
  }
}

TEST_CASE("plan serialization") {
  auto plan = build_plan(chain5(), chain5_tallies());
  auto text = serialize_plan(plan);
  CHECK(text ==
        "lambda=0.25\n"
        "lambda_o=0.375\n"
        "meta xi_aggregation=stage_mean\n"
        "plan s0 stretch=1 split=1 case=x\n"
        "plan s1 stretch=1.25 split=1 case=b\n"
        "plan s2 stretch=1 split=2 case=a\n"
        "plan s3 stretch=1 split=1 case=b\n"
        "plan s4 stretch=1 split=1 case=x\n");
  CHECK(parse_plan(text) == plan);

  std::mt19937_64 rng(9);
  std::uniform_real_distribution<double> l_d(0.05, 1.0);
  for (int i = 0; i < 100; ++i) {
    auto inst = testgen::random_instance(rng);
    try {
      auto p = build_plan(inst.ir, inst.tallies, {.lambda = l_d(rng)});
      CHECK(parse_plan(serialize_plan(p)) == p);
    } catch (const ValidationError&) {
    }
  }
}

TEST_CASE("plan parse and validation errors") {
  const std::string head = "lambda=0.25\nlambda_o=0.5\n";
  auto line_of = [](const std::string& src) -> std::size_t {
    try {
      parse_plan(src);
    } catch (const ParseError& e) {
      return e.line();
    }
    return 0;
  };
  CHECK(line_of(head + "plan a stretch=1 split=1\n") == 3);
  CHECK(line_of(head + "plan a split=1 stretch=1 case=b\n") == 3);
  CHECK(line_of(head + "plan a stretch=1 split=1 case=q\n") == 3);
  CHECK(line_of(head + "plan a stretch=x split=1 case=b\n") == 3);
  CHECK(line_of(head + "plan a stretch=1 split=1 case=b\nplan a stretch=1 split=1 case=b\n") == 4);
  CHECK(line_of(head + "lambda=0.5\n") == 3);
  CHECK(line_of(head + "bogus\n") == 3);
  CHECK(line_of(head + "meta novalue\n") == 3);

  CHECK_THROWS_AS(parse_plan("lambda=0.25\n"), ValidationError);
  CHECK_THROWS_AS(parse_plan(head + "plan a stretch=1 split=3 case=b\n"), ValidationError);
  CHECK_THROWS_AS(parse_plan(head + "plan a stretch=1.1 split=1 case=b\n"), ValidationError);
  CHECK_THROWS_AS(parse_plan(head + "plan a stretch=1.25 split=1 case=a\n"), ValidationError);
  CHECK_THROWS_AS(parse_plan(head + "plan a stretch=1 split=2 case=x\n"), ValidationError);
  CHECK_THROWS_AS(parse_plan(head + "plan a stretch=0.75 split=1 case=b\n"), ValidationError);
  CHECK_THROWS_AS(parse_plan("lambda=0\nlambda_o=0\n"), ValidationError);
  CHECK_NOTHROW(parse_plan(head + "# comment\n\nplan a stretch=1.5 split=4 case=b\n"));
}
