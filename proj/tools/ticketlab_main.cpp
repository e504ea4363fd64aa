// SPDX-License-Identifier: Apache-2.0
//
// ticketlab: train masked GRPO runs, sweep sparsity, inspect masks and run
// the Fisher-subspace checks.

#include <CLI11.hpp>
#include <fstream>
#include <iostream>
#include <json.hpp>
#include <sstream>

#include "ticketlab/analysis.hpp"
#include "ticketlab/errors.hpp"
#include "ticketlab/harness.hpp"
#include "ticketlab/sweep.hpp"
#include "ticketlab/theory.hpp"

namespace fs = std::filesystem;
using namespace ticketlab;

namespace {

RunConfig load_with_overrides(const std::string& path, const std::vector<std::string>& overrides) {
  auto cfg = load_config(path);
  for (const auto& o : overrides) apply_override(cfg, o);
  cfg.validate();
  return cfg;
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

int cmd_train(const RunConfig& cfg, std::size_t threads) {
  TrainOptions opts;
  opts.threads = threads;
  const auto h = train_run(cfg, opts);
  const auto dir = harness::resolve_output_dir(cfg.output_dir);
  harness::write_run_outputs(h, dir);
  std::cout << "final_eval=" << format_double(h.final_eval) << " initial_eval=" << format_double(h.initial_eval)
            << " active=" << h.masks.total_active() << " collapsed=" << (h.collapsed ? 1 : 0) << " out=" << dir.string()
            << "\n";
  if (h.collapsed) {
    std::cerr << "run collapsed: " << h.collapse_reason << "\n";
    return harness::kNumericCollapse;
  }
  return harness::kOk;
}

int cmd_multiticket(const RunConfig& cfg, std::size_t n, const std::vector<std::uint64_t>& seeds, std::size_t threads) {
  const auto list = seeds.empty() ? harness::default_mask_seeds(n) : seeds;
  const auto rep = harness::multiticket(cfg, list, threads);
  for (const auto& w : rep.warnings) std::cerr << "warning: " << w << "\n";
  const auto dir = harness::resolve_output_dir(cfg.output_dir);
  harness::write_file(dir / "multiticket.json", harness::multiticket_json(rep));
  std::cout << "success_rate=" << format_double(rep.success_rate) << " mean_jaccard=" << format_double(rep.jaccard.mean)
            << " expected_jaccard=" << format_double(rep.expected_jaccard) << "\n";
  return harness::kOk;
}

int print_sweep(const analysis::SweepTable& t, const fs::path& summary_path, const std::string& hash) {
  nlohmann::ordered_json j;
  j["config_hash"] = hash;
  nlohmann::ordered_json levels = nlohmann::ordered_json::array();
  for (const auto& lv : t.levels) {
    std::cout << "sparsity=" << format_double(lv.sparsity) << " active=" << lv.active_params
              << " best_lr=" << format_double(lv.best_lr) << " mean=" << format_double(lv.mean)
              << " std=" << format_double(lv.stddev) << " collapsed=" << lv.collapsed << "/" << lv.runs << "\n";
    levels.push_back({{"sparsity", lv.sparsity},
                      {"active_params", lv.active_params},
                      {"best_lr", lv.best_lr},
                      {"mean", lv.mean},
                      {"std", lv.stddev},
                      {"median", lv.median},
                      {"runs", lv.runs},
                      {"collapsed", lv.collapsed}});
  }
  j["levels"] = std::move(levels);
  harness::write_file(summary_path, j.dump(2) + "\n");
  return harness::kOk;
}

int cmd_eigen(RunConfig cfg, std::size_t steps, double epsilon, bool post_mask, std::size_t threads) {
  cfg.grpo.steps = steps;
  cfg.log_gradients = true;
  cfg.log_post_mask = post_mask;
  cfg.validate();
  TrainOptions opts;
  opts.threads = threads;
  const auto h = train_run(cfg, opts);
  const auto rep = analysis::gram_spectrum(*h.gradients, epsilon);
  const auto dir = harness::resolve_output_dir(cfg.output_dir);
  harness::write_file(dir / "eigen_report.json", analysis::eigen_report_json(rep, h.config_hash));
  std::cout << "steps=" << h.gradients->steps() << " dim=" << h.gradients->dim << " effective_rank=" << rep.effective_rank
            << " epsilon=" << format_double(epsilon) << "\n";
  return h.collapsed ? harness::kNumericCollapse : harness::kOk;
}

int run(int argc, char** argv) {
  CLI::App app{"ticketlab: sparse-mask GRPO experiments on synthetic verifiable tasks"};
  app.require_subcommand(1);
  std::size_t threads = 1;
  app.add_option("--threads", threads, "Worker threads for rollouts (results do not depend on it)")
      ->check(CLI::PositiveNumber);

  std::string config_path;
  std::vector<std::string> overrides;
  auto add_config = [&](CLI::App* sub) {
    sub->add_option("config", config_path, "Run config file (key=value)")->required();
    sub->add_option("--set", overrides, "Override a config key, e.g. --set grpo.lr=1e-3");
  };

  auto* train = app.add_subcommand("train", "Train one run and write its artifacts");
  add_config(train);

  auto* multi = app.add_subcommand("multiticket", "Train several random masks and compare them");
  add_config(multi);
  std::size_t n_seeds = 5;
  std::vector<std::uint64_t> seeds;
  multi->add_option("-n,--n-seeds", n_seeds, "Number of mask seeds from the default list")->check(CLI::Range(2, 1000));
  multi->add_option("--seeds", seeds, "Explicit mask seeds")->delimiter(',');

  auto* sweep = app.add_subcommand("sweep", "Sparsity sweep (append-only sweep.csv)");
  add_config(sweep);
  std::vector<double> sparsities = analysis::kDefaultSparsityLadder;
  std::vector<std::uint64_t> sweep_seeds = analysis::kDefaultMaskSeeds;
  std::vector<double> lrs;
  sweep->add_option("--sparsities", sparsities, "Sparsity ladder")->delimiter(',');
  sweep->add_option("--seeds", sweep_seeds, "Mask seeds")->delimiter(',');
  sweep->add_option("--lrs", lrs, "Learning rates (default: grpo.lr)")->delimiter(',');

  auto* lrsweep = app.add_subcommand("lr-sweep", "Learning-rate sweep at one sparsity");
  add_config(lrsweep);
  double lr_sparsity = -1.0;
  std::vector<double> lr_list;
  lrsweep->add_option("--sparsity", lr_sparsity, "Sparsity (default: run.sparsity)");
  lrsweep->add_option("--lrs", lr_list, "Learning rates")->delimiter(',')->required();

  auto* eigen = app.add_subcommand("eigen", "Log gradients for T steps and report the Gram spectrum");
  add_config(eigen);
  std::size_t eigen_steps = 150;
  double epsilon = 0.01;
  bool post_mask = false;
  eigen->add_option("--steps", eigen_steps, "Training steps to log")->check(CLI::PositiveNumber);
  eigen->add_option("--epsilon", epsilon, "Effective-rank threshold");
  eigen->add_flag("--post-mask", post_mask, "Log masked gradients instead of full ones");

  auto* verify = app.add_subcommand("verify", "Run the Fisher-subspace checks");
  std::string suite = "all";
  std::uint64_t verify_seed = 0;
  bool quick = false;
  std::string verify_out = "verify";
  verify->add_option("--suite", suite, "all | kl | subspace | phase | concentration | coherence");
  verify->add_option("--seed", verify_seed, "Root seed");
  verify->add_flag("--quick", quick, "Fewer trials");
  verify->add_option("--out", verify_out, "Output directory");

  auto* masks = app.add_subcommand("masks", "Sample, inspect and compare mask files");
  masks->require_subcommand(1);
  auto* msample = masks->add_subcommand("sample", "Sample the mask a config would use");
  add_config(msample);
  std::string mask_out;
  msample->add_option("-o,--out", mask_out, "Write here instead of stdout");
  auto* minspect = masks->add_subcommand("inspect", "Summarize a mask file");
  std::string mask_a, mask_b;
  minspect->add_option("file", mask_a)->required();
  auto* mjac = masks->add_subcommand("jaccard", "Jaccard similarity of two mask files");
  mjac->add_option("a", mask_a)->required();
  mjac->add_option("b", mask_b)->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? harness::kOk : harness::kConfigError;
  }

  if (*train) return cmd_train(load_with_overrides(config_path, overrides), threads);
  if (*multi) return cmd_multiticket(load_with_overrides(config_path, overrides), n_seeds, seeds, threads);
  if (*sweep || *lrsweep) {
    const auto cfg = load_with_overrides(config_path, overrides);
    const auto dir = harness::resolve_output_dir(cfg.output_dir);
    analysis::SweepOptions opts;
    opts.threads = threads;
    opts.csv = dir / (*sweep ? "sweep.csv" : "lr_sweep.csv");
    opts.on_row = [](const analysis::SweepRow& r, bool reused) {
      std::cerr << (reused ? "reused " : "ran ") << analysis::format_sweep_row(r) << "\n";
    };
    analysis::SweepTable t;
    if (*sweep) {
      t = analysis::run_sweep(cfg, {sparsities, sweep_seeds, lrs.empty() ? std::vector<double>{cfg.grpo.lr} : lrs}, opts);
    } else {
      t = analysis::lr_sweep(cfg, lr_sparsity < 0.0 ? cfg.sparsity : lr_sparsity, lr_list, opts);
    }
    return print_sweep(t, dir / (*sweep ? "sweep_summary.json" : "lr_sweep_summary.json"), analysis::sweep_config_hash(cfg));
  }
  if (*eigen) return cmd_eigen(load_with_overrides(config_path, overrides), eigen_steps, epsilon, post_mask, threads);
  if (*verify) {
    const auto text = theory::run_suite({suite, verify_seed, quick});
    harness::write_file(harness::resolve_output_dir(verify_out) / "theory_report.json", text);
    const auto j = nlohmann::json::parse(text);
    int failed = 0;
    for (const auto& c : j["checks"]) {
      std::cout << c["name"].get<std::string>() << ": " << c["status"].get<std::string>() << "\n";
      if (c["status"] == "fail") ++failed;
    }
    return failed ? harness::kFailure : harness::kOk;
  }
  if (*msample) {
    const auto cfg = load_with_overrides(config_path, overrides);
    const auto layout = policy::make_policy(cfg.resolved_arch()).params;
    const auto text = masking::format_mask_file(masks_for(cfg, layout), "config_hash=" + config_hash(cfg));
    if (mask_out.empty()) std::cout << text;
    else harness::write_file(mask_out, text);
    return harness::kOk;
  }
  if (*minspect) {
    const auto m = masking::parse_mask_file(read_text(mask_a));
    std::cout << "kind=" << masking::to_string(m.kind) << " sparsity=" << format_double(m.sparsity)
              << " mask_seed=" << m.mask_seed << " active=" << m.total_active() << "\n";
    for (const auto& t : m.per_tensor) std::cout << t.name << "\t" << t.active.size() << "\n";
    return harness::kOk;
  }
  if (*mjac) {
    const auto a = masking::parse_mask_file(read_text(mask_a));
    const auto b = masking::parse_mask_file(read_text(mask_b));
    std::cout << format_double(analysis::jaccard(a, b)) << "\n";
    return harness::kOk;
  }
  return harness::kFailure;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return run(argc, argv);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return harness::kConfigError;
  } catch (const NumericFailure& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return harness::kNumericCollapse;
  } catch (const CapacityError& e) {
    std::cerr << "capacity error: " << e.what() << "\n";
    return harness::kCapacityError;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return harness::kFailure;
  }
}
