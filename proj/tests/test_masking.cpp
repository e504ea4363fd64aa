// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <set>

#include "ticketlab/errors.hpp"
#include "ticketlab/masking.hpp"
#include "ticketlab/policy.hpp"

using namespace ticketlab;
using namespace ticketlab::masking;

namespace {

ParamSet layout(std::vector<std::size_t> hidden = {16, 12}) {
  auto p = policy::make_policy(policy::PolicyArch{9, 4, 6, std::move(hidden)});
  policy::init_policy(p, numerics::SeedStream(1, "mask-test"));
  return p.params;
}

ParamSet random_like(const ParamSet& p, std::uint64_t seed) {
  auto g = p.zeros_like();
  numerics::SeedStream s(seed, "grad");
  for (auto& t : g.tensors())
    for (double& v : t.values) v = s.normal();
  return g;
}

MaskSet empty_mask(const ParamSet& p) {
  auto m = dense_mask(p);
  for (auto& t : m.per_tensor) t.active.clear();
  return m;
}

}  // namespace

TEST_CASE("keep_count follows the floor formula") {
  CHECK(keep_count(0.0, 10) == 10);
  CHECK(keep_count(0.95, 10) == 0);
  CHECK(keep_count(0.99, 1000) == 10);
  CHECK(keep_count(0.99, 99) == 0);
  CHECK(keep_count(0.5, 7) == 3);
  // (1 - 0.7) * 10 is 2.9999999999999996 in binary floating point.
  CHECK(keep_count(0.7, 10) == 3);
}

TEST_CASE("sample_masks: exact counts, sorted unique indices, determinism") {
  const auto p = layout();
  for (double s : {0.0, 0.5, 0.9, 0.99, 0.999}) {
    const auto m = sample_masks(p, s, 42);
    std::size_t expect = 0;
    for (const auto& t : p.tensors()) expect += keep_count(s, t.size());
    CHECK(m.total_active() == expect);
    REQUIRE(m.per_tensor.size() == p.tensors().size());
    for (std::size_t i = 0; i < m.per_tensor.size(); ++i) {
      const auto& tm = m.per_tensor[i];
      CHECK(tm.name == p.tensors()[i].name);
      CHECK(tm.active.size() == keep_count(s, p.tensors()[i].size()));
      for (std::size_t j = 1; j < tm.active.size(); ++j) CHECK(tm.active[j - 1] < tm.active[j]);
      if (!tm.active.empty()) CHECK(tm.active.back() < p.tensors()[i].size());
    }
    CHECK(sample_masks(p, s, 42) == m);
  }
  CHECK(sample_masks(p, 0.5, 1) != sample_masks(p, 0.5, 2));
  CHECK(sample_masks(p, 0.0, 7).per_tensor == dense_mask(p).per_tensor);
  CHECK_THROWS(sample_masks(p, 1.0, 0));
  CHECK_THROWS(sample_masks(p, 1.5, 0));
}

TEST_CASE("per-tensor masks do not depend on tensor enumeration") {
  // A tensor's mask is a function of (mask seed, name, size) only.
  ParamSet a, b;
  a.add("x", {40});
  a.add("y", {50});
  b.add("y", {50});
  b.add("z", {3});
  b.add("x", {40});
  const auto ma = sample_masks(a, 0.8, 9), mb = sample_masks(b, 0.8, 9);
  CHECK(ma.find("x")->active == mb.find("x")->active);
  CHECK(ma.find("y")->active == mb.find("y")->active);
}

TEST_CASE("min_one keeps one entry in tensors the floor would empty") {
  const auto p = layout();
  const auto m = sample_masks(p, 0.999, 3);
  const auto m1 = sample_masks(p, 0.999, 3, true);
  for (std::size_t i = 0; i < m.per_tensor.size(); ++i)
    CHECK(m1.per_tensor[i].active.size() == std::max<std::size_t>(1, m.per_tensor[i].active.size()));
}

TEST_CASE("structured masks: budget matched and confined to one layer") {
  const auto p = layout();
  const auto layers = block_layers(p);
  CHECK(layers == std::vector<std::string>{"h0", "h1", "proj"});
  CHECK(layer_size(p, "h0") == 16 * 24 + 16);

  const auto budget = sample_masks(p, 0.9, 5).total_active();
  for (auto kind : {MaskKind::first_layer, MaskKind::last_layer}) {
    const auto m = structured_mask(p, kind, budget, 5);
    CHECK(m.total_active() == budget);
    CHECK(m.kind == kind);
    const std::string target = kind == MaskKind::first_layer ? "h0" : "proj";
    for (const auto& tm : m.per_tensor)
      if (layer_of(tm.name) != target) CHECK(tm.active.empty());
    CHECK(structured_mask(p, kind, budget, 5) == m);
  }
  CHECK_THROWS_AS(structured_mask(p, MaskKind::last_layer, layer_size(p, "proj") + 1, 0), ConfigError);
  CHECK_THROWS_AS(structured_mask(p, MaskKind::random, 1, 0), ContractViolation);
  CHECK(parse_mask_kind("first_layer") == MaskKind::first_layer);
  CHECK_THROWS(parse_mask_kind("middle"));
}

TEST_CASE("apply_mask agrees with a per-entry reference loop") {
  const auto p = layout();
  const auto g = random_like(p, 1);
  const auto m = sample_masks(p, 0.8, 11);
  const auto out = apply_mask(g, m);
  for (std::size_t i = 0; i < p.tensors().size(); ++i) {
    const auto& tm = m.per_tensor[i];
    const std::set<std::uint64_t> on(tm.active.begin(), tm.active.end());
    const auto& src = g.tensors()[i].values;
    const auto& dst = out.tensors()[i].values;
    for (std::size_t j = 0; j < src.size(); ++j) CHECK(dst[j] == (on.count(j) ? src[j] : 0.0));
  }
  CHECK(apply_mask(g, dense_mask(p)) == g);
  const auto empty = apply_mask(g, empty_mask(p));
  CHECK(empty.norm() == 0.0);

  ParamSet other;
  other.add("embed", {3});
  CHECK_THROWS_AS(apply_mask(other, m), ContractViolation);
}

TEST_CASE("flat_active maps per-tensor indices into flatten() order") {
  const auto p = layout();
  const auto m = sample_masks(p, 0.7, 2);
  const auto flat = flat_active(p, m);
  CHECK(flat.size() == m.total_active());
  const auto g = random_like(p, 3);
  const auto masked = apply_mask(g, m).flatten();
  const auto full = g.flatten();
  for (auto i : flat) CHECK(masked[i] == full[i]);
}

TEST_CASE("mask file round trip is bit exact") {
  const auto p = layout();
  for (auto m : {sample_masks(p, 0.9, 4), dense_mask(p), empty_mask(p),
                 structured_mask(p, MaskKind::last_layer, 20, 4)}) {
    const auto text = format_mask_file(m, "note=x");
    auto back = parse_mask_file(text);
    bind(back, p);
    CHECK(back == m);
    CHECK(format_mask_file(back, "note=x") == text);
  }
  CHECK_THROWS(parse_mask_file("embed\t2\t1\n"));
}

TEST_CASE("masked AdamW: frozen entries never move") {
  auto p = layout();
  const auto init = p;
  const auto m = sample_masks(p, 0.9, 8);
  auto state = make_sparse_state<double>(m, AdamWHyper{1e-2, 0.9, 0.999, 1e-8, 0.1});
  for (int step = 0; step < 100; ++step) masked_adamw_step(p, apply_mask(random_like(p, step), m), state, m);
  CHECK(state.step_count == 100);
  std::size_t moved = 0;
  for (std::size_t i = 0; i < p.tensors().size(); ++i) {
    const std::set<std::uint64_t> on(m.per_tensor[i].active.begin(), m.per_tensor[i].active.end());
    for (std::size_t j = 0; j < p.tensors()[i].size(); ++j) {
      const double a = p.tensors()[i].values[j], b = init.tensors()[i].values[j];
      if (on.count(j)) moved += a != b;
      else CHECK(a == b);
    }
  }
  CHECK(moved == m.total_active());
}

TEST_CASE("masked AdamW: zero gradient only decays active entries") {
  auto p = layout();
  const auto init = p;
  const auto m = sample_masks(p, 0.5, 8);
  auto state = make_sparse_state<double>(m, AdamWHyper{0.1, 0.9, 0.999, 1e-8, 0.0});
  masked_adamw_step(p, p.zeros_like(), state, m);
  CHECK(p == init);

  auto decayed = make_sparse_state<double>(m, AdamWHyper{0.1, 0.9, 0.999, 1e-8, 0.5});
  masked_adamw_step(p, p.zeros_like(), decayed, m);
  const auto& t = m.per_tensor[1];
  for (auto j : t.active)
    CHECK(p.tensors()[1].values[j] == doctest::Approx(init.tensors()[1].values[j] * 0.95).epsilon(1e-15));
}

TEST_CASE("masked AdamW: one active scalar follows the hand recurrence") {
  ParamSet p;
  p.add("w", {4});
  p.values("w")[2] = 0.5;
  MaskSet m;
  m.per_tensor.push_back({"w", {2}, 4});
  const AdamWHyper h{0.01, 0.9, 0.99, 1e-8, 0.1};
  auto state = make_sparse_state<double>(m, h);
  const double grads[3] = {0.3, -0.1, 0.7};
  double theta = 0.5, mm = 0.0, vv = 0.0;
  for (int t = 1; t <= 3; ++t) {
    auto g = p.zeros_like();
    g.values("w")[2] = grads[t - 1];
    masked_adamw_step(p, g, state, m);
    mm = 0.9 * mm + 0.1 * grads[t - 1];
    vv = 0.99 * vv + 0.01 * grads[t - 1] * grads[t - 1];
    const double mhat = mm / (1 - std::pow(0.9, t)), vhat = vv / (1 - std::pow(0.99, t));
    theta = theta * (1 - 0.01 * 0.1) - 0.01 * mhat / (std::sqrt(vhat) + 1e-8);
    CHECK(p.values("w")[2] == doctest::Approx(theta).epsilon(1e-15));
  }
  CHECK(p.values("w")[0] == 0.0);
}

TEST_CASE("masked AdamW rejects misaligned state") {
  auto p = layout();
  const auto m = sample_masks(p, 0.5, 1);
  auto state = make_sparse_state<double>(sample_masks(p, 0.5, 2), AdamWHyper{});
  CHECK_THROWS_AS(masked_adamw_step(p, p.zeros_like(), state, m), ContractViolation);
}

TEST_CASE("memory_footprint equals the live optimizer payload") {
  const auto p = layout();
  for (double s : {0.0, 0.9, 0.99, 0.9999}) {
    const auto m = sample_masks(p, s, 6);
    CHECK(memory_footprint(m, StateLayout::of<double>()) == make_sparse_state<double>(m, {}).payload_bytes());
    CHECK(memory_footprint(m, StateLayout::of<float>()) == make_sparse_state<float>(m, {}).payload_bytes());
  }
  CHECK(memory_footprint(empty_mask(p), StateLayout::of<float>()) == 0);
  const auto m = sample_masks(p, 0.9, 6);
  CHECK(memory_footprint(m, StateLayout{4, 2, 8}) == 16 * m.total_active());
}

TEST_CASE("footprint ratio at 99% sparsity is about 0.02 with index storage") {
  const auto p = layout({256, 256});
  const auto sparse = memory_footprint(sample_masks(p, 0.99, 0), StateLayout{4, 2, 8});
  const auto dense = memory_footprint(dense_mask(p), StateLayout::dense(4));
  const double ratio = double(sparse) / double(dense);
  CHECK(ratio > 0.018);
  CHECK(ratio < 0.021);
}
