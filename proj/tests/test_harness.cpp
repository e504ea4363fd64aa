// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <set>
#include <sstream>

#include "ticketlab/errors.hpp"
#include "ticketlab/harness.hpp"
#include "ticketlab/sweep.hpp"

using namespace ticketlab;
namespace fs = std::filesystem;

namespace {

RunConfig tiny_config() {
  RunConfig c;
  c.task.task_id = "sort_k";
  c.task.sort_k = 2;
  c.task.num_symbols = 4;
  c.model.context_len = 6;
  c.model.embedding_dim = 6;
  c.model.hidden_dims = {12};
  c.grpo.group_size = 4;
  c.grpo.batch_prompts = 3;
  c.grpo.max_tokens = 3;
  c.grpo.steps = 6;
  c.grpo.lr = 1e-2;
  c.eval_interval = 2;
  c.eval_set_size = 16;
  c.pretrain.steps = 5;
  c.pretrain.batch = 8;
  return c;
}

fs::path scratch_dir(const std::string& name) {
  auto d = fs::temp_directory_path() / ("ticketlab_test_" + name);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("config text round trips losslessly") {
  auto c = tiny_config();
  c.sparsity = 0.99;
  c.mask_seed = 1002;
  c.mask_mode = masking::MaskKind::last_layer;
  c.grpo.aggregation = grpo::LossAggregation::sequence;
  c.grpo.lr = 0.1 + 0.2;  // not representable in short decimal
  c.log_gradients = true;
  const auto text = to_config_text(c);
  CHECK(parse_config_text(text) == c);
  CHECK(to_config_text(parse_config_text(text)) == text);
  CHECK(config_hash(parse_config_text(text)) == config_hash(c));
  auto d = c;
  d.mask_seed = 1003;
  CHECK(config_hash(d) != config_hash(c));
  CHECK(config_hash(c).size() == 16);
}

TEST_CASE("config parsing rejects bad input") {
  CHECK_THROWS_AS(parse_config_text("nope.key=1\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("grpo.lr=1\ngrpo.lr=2\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("grpo.lr=abc\n"), ConfigError);
  CHECK_THROWS_AS(parse_config_text("grpo.lr\n"), ConfigError);
  CHECK_THROWS_AS(load_config("/nonexistent/ticketlab.cfg"), ConfigError);
  const auto c = parse_config_text("# comment\n\ngrpo.lr = 0.5\nrun.sparsity=0.9\n");
  CHECK(c.grpo.lr == 0.5);
  CHECK(c.sparsity == 0.9);

  auto bad = tiny_config();
  bad.sparsity = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = tiny_config();
  bad.grpo.group_size = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = tiny_config();
  bad.model.context_len = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}

TEST_CASE("overrides use the same keys as the file form") {
  auto c = tiny_config();
  apply_override(c, "grpo.lr=3e-2");
  apply_override(c, "model.hidden_dims=5,7");
  apply_override(c, "run.mask_mode=first_layer");
  CHECK(c.grpo.lr == 3e-2);
  CHECK(c.model.hidden_dims == std::vector<std::size_t>{5, 7});
  CHECK(c.mask_mode == masking::MaskKind::first_layer);
  CHECK_THROWS_AS(apply_override(c, "grpo.lr"), ConfigError);
  CHECK_THROWS_AS(apply_override(c, "bogus=1"), ConfigError);
}

TEST_CASE("expected_pass equals brute-force enumeration at temperature 1") {
  const auto cfg = tiny_config();
  auto p = policy::make_policy(cfg.resolved_arch());
  policy::init_policy(p, numerics::SeedStream(3, "ep"), 1.0, 2.0);
  for (const auto& inst : env::make_instance_set(cfg.task, 1, "ep", 5)) {
    // Full fixed-length sequences; truncating at the first EOS gives the sampled response.
    double oracle = 0.0;
    policy::enumerate_responses(p, inst.prompt, 3, [&](std::span<const Token> y, double prob) {
      TokenList cut;
      for (auto t : y) {
        cut.push_back(t);
        if (t == vocab::kEos) break;
      }
      oracle += prob * env::verify(inst, cut);
    });
    CHECK(expected_pass(p, inst, 3, 1.0) == doctest::Approx(oracle).epsilon(1e-12));
  }
}

TEST_CASE("expected_pass at temperature 0.7 agrees with sampling") {
  const auto cfg = tiny_config();
  auto p = policy::make_policy(cfg.resolved_arch());
  policy::init_policy(p, numerics::SeedStream(4, "ep"), 1.0, 2.0);
  // Bias the head towards the answer so the probability is not tiny.
  const auto inst = env::make_instance_set(cfg.task, 2, "ep", 1)[0];
  for (auto t : inst.canonical_answer) p.params.values("head.bias")[t] += 1.5;
  const double exact = expected_pass(p, inst, 3, 0.7);
  numerics::SeedStream s(5, "mc");
  const int n = 20000;
  int hits = 0;
  for (int i = 0; i < n; ++i) hits += env::verify(inst, policy::sample_response(p, inst.prompt, {3, 0.7, true}, s)) > 0;
  CHECK(std::abs(hits / double(n) - exact) < 5 * std::sqrt(exact * (1 - exact) / n) + 1e-9);
}

TEST_CASE("train_run: replay determinism and thread independence") {
  auto cfg = tiny_config();
  cfg.sparsity = 0.8;
  const auto a = train_run(cfg);
  const auto b = train_run(cfg);
  TrainOptions t3;
  t3.threads = 3;
  const auto c = train_run(cfg, t3);
  CHECK(harness::metrics_csv(a) == harness::metrics_csv(b));
  CHECK(harness::metrics_csv(a) == harness::metrics_csv(c));
  CHECK(harness::checkpoint_bytes(a) == harness::checkpoint_bytes(c));
  CHECK(harness::run_json(a) == harness::run_json(b));
  CHECK(a.steps.size() == cfg.grpo.steps);
  CHECK(a.eval_trace.front().first == 0);
  CHECK(a.eval_trace.back().first == cfg.grpo.steps);
  CHECK(a.final_eval == a.eval_trace.back().second);
  CHECK_FALSE(a.collapsed);
}

TEST_CASE("train_run leaves frozen coordinates at their base values") {
  auto cfg = tiny_config();
  cfg.sparsity = 0.9;
  const auto base = build_base_model(cfg);
  TrainOptions opts;
  opts.base = &base;
  const auto h = train_run(cfg, opts);
  const auto before = base.params.flatten(), after = h.final_policy.params.flatten();
  const auto active = masking::flat_active(base.params, h.masks);
  std::vector<char> on(before.size(), 0);
  for (auto i : active) on[i] = 1;
  std::size_t frozen_changed = 0;
  for (std::size_t i = 0; i < before.size(); ++i)
    if (!on[i]) frozen_changed += before[i] != after[i];
  CHECK(frozen_changed == 0);
}

TEST_CASE("run outputs embed the config hash and are stable across reruns") {
  const auto cfg = tiny_config();
  const auto h = train_run(cfg);
  const auto d1 = scratch_dir("out1"), d2 = scratch_dir("out2");
  harness::write_run_outputs(h, d1);
  harness::write_run_outputs(train_run(cfg), d2);
  for (const char* f : {"metrics.csv", "masks.tsv", "eval_set.tsv", "run.json"}) {
    const auto text = slurp(d1 / f);
    CHECK(text.find(h.config_hash) != std::string::npos);
    CHECK(text == slurp(d2 / f));
  }
  CHECK(slurp(d1 / "checkpoint.bin") == slurp(d2 / "checkpoint.bin"));
  const auto j = nlohmann::json::parse(slurp(d1 / "run.json"));
  CHECK(j["config_hash"] == h.config_hash);
  auto back = parse_config_text(j["config"].get<std::string>());
  CHECK(back == cfg);
  fs::remove_all(d1);
  fs::remove_all(d2);
}

TEST_CASE("output root environment override") {
  ::setenv("TICKETLAB_OUTPUT_ROOT", "/tmp/ticketlab_root", 1);
  CHECK(harness::resolve_output_dir("runs/x") == fs::path("/tmp/ticketlab_root/runs/x"));
  CHECK(harness::resolve_output_dir("/abs/y") == fs::path("/abs/y"));
  ::unsetenv("TICKETLAB_OUTPUT_ROOT");
  CHECK(harness::resolve_output_dir("runs/x") == fs::path("runs/x"));
}

TEST_CASE("default mask seeds start with the declared list") {
  CHECK(harness::default_mask_seeds(5) == analysis::kDefaultMaskSeeds);
  const auto seven = harness::default_mask_seeds(7);
  CHECK(seven.size() == 7);
  CHECK(std::set<std::uint64_t>(seven.begin(), seven.end()).size() == 7);
}

TEST_CASE("multiticket with duplicate seeds warns and reports Jaccard 1") {
  auto cfg = tiny_config();
  cfg.sparsity = 0.9;
  cfg.grpo.steps = 2;
  const auto rep = harness::multiticket(cfg, {7, 7});
  CHECK_FALSE(rep.warnings.empty());
  CHECK(rep.jaccard.mean == 1.0);
  CHECK(rep.runs.size() == 2);
  const auto j = nlohmann::json::parse(harness::multiticket_json(rep));
  CHECK(j["config_hash"] == rep.config_hash);
}

TEST_CASE("sweep CSV resumes without duplicate rows") {
  auto cfg = tiny_config();
  cfg.grpo.steps = 2;
  const auto dir = scratch_dir("sweep");
  analysis::SweepOptions opts;
  opts.csv = dir / "sweep.csv";
  std::size_t ran = 0, reused = 0;
  opts.on_row = [&](const analysis::SweepRow&, bool r) { ++(r ? reused : ran); };
  const analysis::SweepSpec spec{{0.0, 0.9}, {0, 10}, {1e-2}};
  const auto first = analysis::run_sweep(cfg, spec, opts);
  CHECK(ran == 3);  // s=0 runs once
  CHECK(first.rows.size() == 3);
  const auto text = slurp(*opts.csv);

  ran = reused = 0;
  const auto again = analysis::run_sweep(cfg, spec, opts);
  CHECK(ran == 0);
  CHECK(reused == 3);
  CHECK(slurp(*opts.csv) == text);

  // Drop the last row, as if interrupted, and resume.
  auto cut = text.substr(0, text.rfind('\n', text.size() - 2) + 1);
  { std::ofstream(*opts.csv, std::ios::binary) << cut; }
  ran = reused = 0;
  analysis::run_sweep(cfg, spec, opts);
  CHECK(ran == 1);
  CHECK(reused == 2);
  CHECK(slurp(*opts.csv) == text);
  CHECK(analysis::parse_sweep_csv(text).size() == 3);

  // Per-row keys do not change the sweep hash; anything else does.
  auto other_lr = cfg;
  other_lr.grpo.lr = 0.5;
  CHECK_NOTHROW(analysis::run_sweep(other_lr, spec, opts));
  auto other = cfg;
  other.grpo.group_size = 6;
  CHECK_THROWS_AS(analysis::run_sweep(other, spec, opts), ConfigError);

  const auto levels = analysis::summarize(first.rows);
  REQUIRE(levels.size() == 2);
  CHECK(levels[0].sparsity == 0.0);
  CHECK(levels[1].runs == 2);
  fs::remove_all(dir);
}

TEST_CASE("sweep summary picks the lr with the best mean") {
  std::vector<analysis::SweepRow> rows = {
      {0.99, 0, 1e-3, 0.2, false}, {0.99, 10, 1e-3, 0.4, false},
      {0.99, 0, 1e-2, 0.5, false}, {0.99, 10, 1e-2, 0.7, false},
      {0.99, 0, 1e-1, 0.9, true},  {0.99, 10, 1e-1, 0.0, false},
  };
  const auto lv = analysis::summarize(rows);
  REQUIRE(lv.size() == 1);
  CHECK(lv[0].best_lr == 1e-2);
  CHECK(lv[0].mean == doctest::Approx(0.6));
  CHECK(lv[0].stddev == doctest::Approx(0.1));
  CHECK(lv[0].median == doctest::Approx(0.6));
  CHECK(lv[0].runs == 6);
  CHECK(lv[0].collapsed == 1);
}
