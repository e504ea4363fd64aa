// SPDX-License-Identifier: Apache-2.0

#include "ticketlab/harness.hpp"

#include <cstdlib>
#include <fstream>
#include <json.hpp>
#include <set>

#include "ticketlab/errors.hpp"
#include "ticketlab/seed_stream.hpp"

namespace ticketlab::harness {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

fs::path resolve_output_dir(const std::string& dir) {
  fs::path p(dir);
  if (p.is_relative()) {
    if (const char* root = std::getenv("TICKETLAB_OUTPUT_ROOT"); root && *root) return fs::path(root) / p;
  }
  return p;
}

namespace {

template <typename Bytes>
void write_bytes(const fs::path& path, const Bytes& content) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write '" + tmp.string() + "'");
    out.write(reinterpret_cast<const char*>(content.data()), static_cast<std::streamsize>(content.size()));
    if (!out) throw ConfigError("short write to '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

std::string hex16(std::uint64_t h) {
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 0; i < 16; ++i) out[15 - i] = digits[(h >> (4 * i)) & 0xF];
  return out;
}

}  // namespace

void write_file(const fs::path& path, const std::string& content) { write_bytes(path, content); }
void write_file(const fs::path& path, const std::vector<std::uint8_t>& content) { write_bytes(path, content); }

std::string content_hash(std::string_view bytes) { return hex16(numerics::fnv1a64(bytes)); }

std::string metrics_csv(const RunHistory& h) {
  std::string out = "# config_hash=" + h.config_hash + "\n";
  out += "step,mean_reward,eval_pass1,clip_frac,kl_to_old,grad_norm,collapsed_flag\n";
  for (const auto& s : h.steps) {
    out += std::to_string(s.step) + "," + format_double(s.mean_reward) + "," +
           (s.eval_pass1 ? format_double(*s.eval_pass1) : std::string()) + "," + format_double(s.clip_frac) + "," +
           format_double(s.kl_to_old) + "," + format_double(s.grad_norm) + "," + (s.collapsed ? "1" : "0") + "\n";
  }
  return out;
}

std::string mask_file(const RunHistory& h) {
  return masking::format_mask_file(h.masks, "config_hash=" + h.config_hash);
}

std::vector<std::uint8_t> checkpoint_bytes(const RunHistory& h) {
  return encode_checkpoint(h.final_policy.params, "config_hash=" + h.config_hash);
}

std::string run_json(const RunHistory& h) {
  const auto ckpt = checkpoint_bytes(h);
  const auto mask_text = mask_file(h);
  ordered_json j;
  j["config_hash"] = h.config_hash;
  j["config"] = to_config_text(h.config);
  j["total_params"] = h.final_policy.params.total_params();
  j["active_params"] = h.masks.total_active();
  j["mask_hash"] = content_hash(mask_text);
  j["checkpoint_hash"] = content_hash(std::string_view(reinterpret_cast<const char*>(ckpt.data()), ckpt.size()));
  j["initial_eval"] = h.initial_eval;
  j["final_eval"] = h.final_eval;
  j["steps_completed"] = h.steps.size();
  j["skipped_updates"] = h.skipped_updates;
  j["collapsed"] = h.collapsed;
  if (h.collapsed) j["collapse_reason"] = h.collapse_reason;
  ordered_json trace = ordered_json::array();
  for (const auto& [step, v] : h.eval_trace) trace.push_back({{"step", step}, {"eval_pass1", v}});
  j["eval_trace"] = std::move(trace);
  return j.dump(2) + "\n";
}

void write_run_outputs(const RunHistory& h, const fs::path& dir) {
  fs::create_directories(dir);
  write_file(dir / "metrics.csv", metrics_csv(h));
  write_file(dir / "masks.tsv", mask_file(h));
  write_file(dir / "checkpoint.bin", checkpoint_bytes(h));
  const auto evals = eval_set(h.config);
  write_file(dir / "eval_set.tsv", "# config_hash=" + h.config_hash + "\n" + env::format_instance_set(evals));
  write_file(dir / "run.json", run_json(h));
  ordered_json t;
  t["config_hash"] = h.config_hash;
  t["wall_seconds"] = h.wall_seconds;
  write_file(dir / "timing.json", t.dump(2) + "\n");
}

std::vector<std::uint64_t> default_mask_seeds(std::size_t n) {
  std::vector<std::uint64_t> out = {0, 10, 42, 1002, 2001};
  if (n <= out.size()) {
    out.resize(n);
    return out;
  }
  for (std::size_t i = out.size(); i < n; ++i) out.push_back(10000 + i);
  return out;
}

MultiticketReport multiticket(const RunConfig& cfg, const std::vector<std::uint64_t>& mask_seeds,
                              std::size_t threads) {
  if (mask_seeds.size() < 2) throw ConfigError("multiticket needs at least 2 mask seeds");
  cfg.validate();
  MultiticketReport rep;
  rep.config_hash = config_hash(cfg);
  rep.sparsity = cfg.sparsity;

  std::set<std::uint64_t> unique(mask_seeds.begin(), mask_seeds.end());
  if (unique.size() != mask_seeds.size()) rep.warnings.push_back("duplicate mask seeds requested");

  const auto base = build_base_model(cfg);
  TrainOptions opts;
  opts.threads = threads;
  opts.base = &base;

  RunConfig dense_cfg = cfg;
  dense_cfg.sparsity = 0.0;
  dense_cfg.mask_mode = masking::MaskKind::random;
  rep.dense_final_eval = train_run(dense_cfg, opts).final_eval;

  std::vector<masking::MaskSet> masks;
  std::size_t ok = 0;
  for (auto seed : mask_seeds) {
    RunConfig rc = cfg;
    rc.mask_seed = seed;
    const auto h = train_run(rc, opts);
    TicketRun tr;
    tr.mask_seed = seed;
    tr.final_eval = h.final_eval;
    tr.collapsed = h.collapsed;
    tr.success = !h.collapsed && h.final_eval >= rep.success_fraction * rep.dense_final_eval;
    tr.eval_trace = h.eval_trace;
    ok += tr.success ? 1 : 0;
    rep.runs.push_back(std::move(tr));
    masks.push_back(h.masks);
  }
  rep.jaccard = analysis::pairwise_jaccard(masks);
  const double total = static_cast<double>(base.params.total_params());
  rep.expected_jaccard = analysis::expected_jaccard(static_cast<double>(masks.front().total_active()) / total);
  rep.success_rate = static_cast<double>(ok) / static_cast<double>(mask_seeds.size());
  return rep;
}

std::string multiticket_json(const MultiticketReport& r) {
  ordered_json j;
  j["config_hash"] = r.config_hash;
  j["sparsity"] = r.sparsity;
  j["dense_final_eval"] = r.dense_final_eval;
  j["success_fraction"] = r.success_fraction;
  j["success_rate"] = r.success_rate;
  j["mean_pairwise_jaccard"] = r.jaccard.mean;
  j["expected_jaccard"] = r.expected_jaccard;
  j["jaccard_matrix"] = r.jaccard.matrix;
  ordered_json runs = ordered_json::array();
  for (const auto& t : r.runs) {
    ordered_json tr = ordered_json::array();
    for (const auto& [step, v] : t.eval_trace) tr.push_back({{"step", step}, {"eval_pass1", v}});
    runs.push_back({{"mask_seed", t.mask_seed},
                    {"final_eval", t.final_eval},
                    {"collapsed", t.collapsed},
                    {"success", t.success},
                    {"eval_trace", tr}});
  }
  j["runs"] = std::move(runs);
  j["warnings"] = r.warnings;
  return j.dump(2) + "\n";
}

}  // namespace ticketlab::harness
