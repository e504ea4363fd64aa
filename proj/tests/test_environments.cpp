// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>

#include "ticketlab/environments.hpp"
#include "ticketlab/errors.hpp"

using namespace ticketlab;
using namespace ticketlab::env;

TEST_CASE("sort_k instances: distinct symbols, sorted answer") {
  TaskSpec spec;
  spec.task_id = "sort_k";
  spec.sort_k = 4;
  spec.num_symbols = 10;
  for (std::uint64_t i = 0; i < 50; ++i) {
    const auto inst = gen_instance(spec, numerics::SeedStream(i, "sort"));
    REQUIRE(inst.prompt.size() == 5);
    CHECK(inst.prompt.back() == vocab::kSep);
    TokenList body(inst.prompt.begin(), inst.prompt.end() - 1);
    std::sort(body.begin(), body.end());
    CHECK(std::adjacent_find(body.begin(), body.end()) == body.end());
    CHECK(body == inst.canonical_answer);
    for (auto t : body) CHECK((t >= vocab::kFirstSymbol && t < vocab::kFirstSymbol + 10));
    CHECK(verify(inst, inst.canonical_answer) == 1.0);
  }
}

TEST_CASE("mod_add and copy instances") {
  TaskSpec m;
  m.task_id = "mod_add";
  m.modulus = 7;
  for (std::uint64_t i = 0; i < 30; ++i) {
    const auto inst = gen_instance(m, numerics::SeedStream(i, "mod"));
    REQUIRE(inst.prompt.size() == 6);
    const auto a = inst.prompt[0] - vocab::kFirstSymbol, b = inst.prompt[2] - vocab::kFirstSymbol;
    CHECK(inst.prompt[4] == vocab::symbol(7));
    CHECK(inst.canonical_answer == TokenList{vocab::symbol((a + b) % 7)});
  }
  CHECK(m.vocab_needed() == vocab::kFirstSymbol + 8);

  TaskSpec c;
  c.task_id = "copy";
  c.copy_len = 4;
  const auto inst = gen_instance(c, numerics::SeedStream(1, "copy"));
  CHECK(TokenList(inst.prompt.begin(), inst.prompt.end() - 1) == inst.canonical_answer);
}

TEST_CASE("verify: exact match after stripping trailing EOS/PAD") {
  TaskInstance inst;
  inst.canonical_answer = {5, 6, 7};
  CHECK(verify(inst, TokenList{5, 6, 7}) == 1.0);
  CHECK(verify(inst, TokenList{5, 6, 7, vocab::kEos}) == 1.0);
  CHECK(verify(inst, TokenList{5, 6, 7, vocab::kPad, vocab::kEos}) == 1.0);
  CHECK(verify(inst, TokenList{5, 6}) == 0.0);
  CHECK(verify(inst, TokenList{5, 6, 7, 8}) == 0.0);
  CHECK(verify(inst, TokenList{7, 6, 5}) == 0.0);
  CHECK(verify(inst, TokenList{}) == 0.0);
}

TEST_CASE("unknown task ids are config errors") {
  TaskSpec spec;
  spec.task_id = "chess";
  CHECK_THROWS_AS(gen_instance(spec, numerics::SeedStream(0, "x")), ConfigError);
}

TEST_CASE("instance sets are keyed by seed and round-trip through text") {
  TaskSpec spec;
  const auto a = make_instance_set(spec, 2001, "eval", 20);
  const auto b = make_instance_set(spec, 2001, "eval", 20);
  const auto c = make_instance_set(spec, 2002, "eval", 20);
  CHECK(a == b);
  CHECK(a != c);
  const auto text = format_instance_set(a);
  CHECK(parse_instance_set("# comment\n" + text) == a);
}
