// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <map>

#include "ticketlab/errors.hpp"
#include "ticketlab/policy.hpp"

using namespace ticketlab;
using namespace ticketlab::policy;

namespace {

Policy small_policy(std::uint64_t seed, std::vector<std::size_t> hidden = {6}) {
  auto p = make_policy(PolicyArch{5, 3, 4, std::move(hidden)});
  init_policy(p, numerics::SeedStream(seed, "test-policy"), 1.0, 1.5);
  // Nonzero biases so every parameter's gradient path is exercised.
  numerics::SeedStream s(seed, "bias");
  for (auto& t : p.params.tensors())
    if (t.name.find("bias") != std::string::npos)
      for (double& v : t.values) v = 0.3 * s.normal();
  return p;
}

// Brute force: product of per-step softmax probabilities from next_logits.
double brute_logprob(const Policy& p, const TokenList& prompt, const TokenList& resp) {
  TokenList hist = prompt;
  double lp = 0.0;
  for (auto tok : resp) {
    auto l = next_logits(p, hist);
    log_softmax_inplace(l);
    lp += l[tok];
    hist.push_back(tok);
  }
  return lp;
}

}  // namespace

TEST_CASE("layout: declared order, tied head, parameter count") {
  const auto p = make_policy(PolicyArch{5, 3, 4, {6, 7}});
  std::vector<std::string> names;
  for (const auto& t : p.params.tensors()) names.push_back(t.name);
  CHECK(names == std::vector<std::string>{"embed", "h0.weight", "h0.bias", "h1.weight", "h1.bias", "proj.weight",
                                          "proj.bias", "head.bias"});
  CHECK(p.params.is_alias("head.weight"));
  CHECK(p.params.index_of("head.weight") == p.params.index_of("embed"));
  // embed 5*4, h0 6*12+6, h1 7*6+7, proj 4*7+4, head.bias 5; the tied head is counted once.
  CHECK(p.params.total_params() == 20 + 78 + 49 + 32 + 5);
}

TEST_CASE("linear policy (no hidden layers) is allowed") {
  auto p = small_policy(3, {});
  const auto l = next_logits(p, TokenList{1, 2});
  CHECK(l.size() == 5);
}

TEST_CASE("logprob agrees with step-by-step softmax and forward rows") {
  const auto p = small_policy(1);
  const TokenList prompt = {2, 3}, resp = {4, 0, 1};
  const auto lp = logprob(p, prompt, resp);
  CHECK(lp.total == doctest::Approx(brute_logprob(p, prompt, resp)).epsilon(1e-13));
  CHECK(lp.per_token.size() == 3);

  const auto f = forward(p, prompt);
  const auto nl = next_logits(p, prompt);
  for (std::size_t v = 0; v < nl.size(); ++v) CHECK(f(1, v) == doctest::Approx(nl[v]).epsilon(1e-14));
}

TEST_CASE("context window: only the last context_len tokens matter") {
  const auto p = small_policy(2);
  const auto a = next_logits(p, TokenList{4, 4, 1, 2, 3});
  const auto b = next_logits(p, TokenList{0, 1, 2, 3});
  for (std::size_t v = 0; v < a.size(); ++v) CHECK(a[v] == b[v]);
}

TEST_CASE("analytic gradient matches central differences") {
  const auto p = small_policy(5, {6, 5});
  const TokenList prompt = {1, 3}, resp = {2, 4, 1};
  const auto g = logprob_and_grad(p, prompt, resp).grad.flatten();
  const auto theta = p.params.flatten();
  const double h = 1e-6;
  double worst = 0.0;
  for (std::size_t i = 0; i < theta.size(); ++i) {
    std::vector<double> d(theta.size(), 0.0);
    d[i] = h;
    const double up = logprob(perturbed(p, d), prompt, resp).total;
    d[i] = -h;
    const double dn = logprob(perturbed(p, d), prompt, resp).total;
    const double num = (up - dn) / (2 * h);
    const double err = std::abs(num - g[i]) / std::max({std::abs(num), std::abs(g[i]), 1e-6});
    worst = std::max(worst, err);
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("accumulate_weighted_grad is linear in the token weights") {
  const auto p = small_policy(6);
  const TokenList prompt = {1, 2}, resp = {3, 4};
  auto g1 = p.params.zeros_like();
  accumulate_weighted_grad(p, prompt, resp, [](std::span<const double> lp) { return std::vector<double>(lp.size(), 2.0); },
                           g1);
  const auto ref = logprob_and_grad(p, prompt, resp).grad.flatten();
  const auto got = g1.flatten();
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(got[i] == doctest::Approx(2.0 * ref[i]).epsilon(1e-12));
}

TEST_CASE("enumeration: probabilities sum to one and match logprob") {
  const auto p = small_policy(7);
  const TokenList prompt = {2};
  double total = 0.0;
  std::size_t count = 0;
  enumerate_responses(p, prompt, 3, [&](std::span<const Token> y, double prob) {
    total += prob;
    ++count;
    if (count % 17 == 0)
      CHECK(std::log(prob) == doctest::Approx(logprob(p, prompt, TokenList(y.begin(), y.end())).total).epsilon(1e-12));
  });
  CHECK(count == 125);
  CHECK(total == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("enumeration cap raises a capacity error") {
  const auto p = small_policy(7);
  CHECK(enumeration_size(p.arch, 3, 1000) == 125);
  CHECK_THROWS_AS(enumeration_size(p.arch, 5, 1000), CapacityError);
  CHECK_THROWS_AS(exact_kl(p, p, TokenList{1}, 5, 1000), CapacityError);
}

TEST_CASE("exact_kl equals brute-force sum over full responses") {
  const auto a = small_policy(8);
  const auto b = small_policy(9);
  const TokenList prompt = {1, 4};
  std::map<TokenList, double> pa, pb;
  enumerate_responses(a, prompt, 2, [&](std::span<const Token> y, double p) { pa[TokenList(y.begin(), y.end())] = p; });
  enumerate_responses(b, prompt, 2, [&](std::span<const Token> y, double p) { pb[TokenList(y.begin(), y.end())] = p; });
  double kl = 0.0, tv = 0.0;
  for (const auto& [y, p] : pa) {
    kl += p * std::log(p / pb[y]);
    tv += 0.5 * std::abs(p - pb[y]);
  }
  CHECK(exact_kl(a, b, prompt, 2) == doctest::Approx(kl).epsilon(1e-12));
  CHECK(total_variation(a, b, prompt, 2) == doctest::Approx(tv).epsilon(1e-12));
  CHECK(exact_kl(a, a, prompt, 2) == 0.0);
}

TEST_CASE("exact Fisher is symmetric PSD and matches the score outer product") {
  const auto p = small_policy(10, {});
  const std::vector<TokenList> prompts = {{1}, {3}};
  FisherOptions opts;
  opts.horizon = 2;
  const auto f = estimate_fisher(p, prompts, opts);
  const auto d = p.params.total_params();
  REQUIRE(f.matrix.rows() == d);
  const auto e = numerics::sym_eig(f.matrix);
  CHECK(e.values.back() > -1e-10 * e.values.front());

  // Brute-force one entry pair.
  const std::size_t i = 3, j = d - 1;
  double fij = 0.0;
  for (const auto& prompt : prompts)
    enumerate_responses(p, prompt, 2, [&](std::span<const Token> y, double prob) {
      const auto g = flat_score(p, prompt, y);
      fij += 0.5 * prob * g[i] * g[j];
    });
  CHECK(f.matrix(i, j) == doctest::Approx(fij).epsilon(1e-10));
}

TEST_CASE("Monte-Carlo Fisher approaches the exact one") {
  const auto p = small_policy(11, {});
  const std::vector<TokenList> prompts = {{2}};
  FisherOptions exact;
  exact.horizon = 2;
  FisherOptions mc = exact;
  mc.mode = FisherMode::monte_carlo;
  mc.samples = 20000;
  mc.seed = 5;
  const auto fe = estimate_fisher(p, prompts, exact).matrix;
  const auto fm = estimate_fisher(p, prompts, mc).matrix;
  CHECK((fe - fm).frobenius_norm() < 0.05 * fe.frobenius_norm());
}

TEST_CASE("Fisher restricted to a subset is the corresponding submatrix") {
  const auto p = small_policy(12, {});
  const std::vector<TokenList> prompts = {{1}};
  FisherOptions full;
  full.horizon = 2;
  FisherOptions sub = full;
  sub.subset = std::vector<std::size_t>{0, 5, 9};
  const auto ff = estimate_fisher(p, prompts, full).matrix;
  const auto fs = estimate_fisher(p, prompts, sub).matrix;
  for (std::size_t a = 0; a < 3; ++a)
    for (std::size_t b = 0; b < 3; ++b)
      CHECK(fs(a, b) == doctest::Approx(ff((*sub.subset)[a], (*sub.subset)[b])).epsilon(1e-12));
}

TEST_CASE("sampling: deterministic per stream, stops at EOS, respects max_len") {
  const auto p = small_policy(13);
  numerics::SeedStream s1(1, "sample"), s2(1, "sample");
  const auto a = sample_response(p, TokenList{2}, {6, 1.0, true}, s1);
  const auto b = sample_response(p, TokenList{2}, {6, 1.0, true}, s2);
  CHECK(a == b);
  CHECK(a.size() <= 6);
  for (std::size_t i = 0; i + 1 < a.size(); ++i) CHECK(a[i] != vocab::kEos);
  numerics::SeedStream s3(1, "sample");
  CHECK_THROWS_AS(sample_response(p, TokenList{2}, {6, 0.0, true}, s3), ContractViolation);
}

TEST_CASE("sampling frequencies follow the softmax") {
  const auto p = small_policy(14);
  auto l = next_logits(p, TokenList{3});
  log_softmax_inplace(l);
  std::vector<int> counts(5, 0);
  numerics::SeedStream s(2, "freq");
  const int n = 20000;
  for (int i = 0; i < n; ++i) ++counts[sample_response(p, TokenList{3}, {1, 1.0, false}, s)[0]];
  for (std::size_t v = 0; v < 5; ++v) {
    const double pv = std::exp(l[v]);
    CHECK(std::abs(counts[v] / double(n) - pv) < 5 * std::sqrt(pv * (1 - pv) / n) + 1e-9);
  }
}

TEST_CASE("checkpoint round trip is bitwise") {
  const auto p = small_policy(15);
  std::string meta;
  const auto bytes = encode_checkpoint(p.params, "hello");
  const auto back = decode_checkpoint(bytes, &meta);
  CHECK(back == p.params);
  CHECK(meta == "hello");
  auto bad = bytes;
  bad[0] ^= 1;
  CHECK_THROWS(decode_checkpoint(bad));
}
