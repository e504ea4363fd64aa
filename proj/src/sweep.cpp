// SPDX-License-Identifier: Apache-2.0

#include "ticketlab/sweep.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>

#include "ticketlab/errors.hpp"
#include "ticketlab/masking.hpp"
#include "ticketlab/trainer.hpp"

namespace ticketlab::analysis {

std::string format_sweep_row(const SweepRow& row) {
  return format_double(row.sparsity) + "," + std::to_string(row.mask_seed) + "," + format_double(row.lr) + "," +
         format_double(row.final_eval) + "," + (row.collapsed ? "1" : "0");
}

std::vector<SweepRow> parse_sweep_csv(std::string_view text) {
  std::vector<SweepRow> rows;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#' || line == kSweepCsvHeader) continue;
    std::vector<std::string> f;
    std::stringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 5) throw ConfigError("sweep csv: expected 5 columns in '" + line + "'");
    SweepRow r;
    auto num = [&](const std::string& s, auto& out) {
      auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
      if (ec != std::errc() || p != s.data() + s.size()) throw ConfigError("sweep csv: bad value '" + s + "'");
    };
    num(f[0], r.sparsity);
    num(f[1], r.mask_seed);
    num(f[2], r.lr);
    num(f[3], r.final_eval);
    r.collapsed = f[4] == "1";
    rows.push_back(r);
  }
  return rows;
}

namespace {

using Key = std::tuple<double, std::uint64_t, double>;

double mean_of(const std::vector<double>& v) {
  double s = 0.0;
  for (double x : v) s += x;
  return v.empty() ? 0.0 : s / static_cast<double>(v.size());
}

}  // namespace

std::string sweep_config_hash(const RunConfig& cfg) {
  RunConfig c = cfg;
  const RunConfig defaults;
  c.sparsity = defaults.sparsity;
  c.mask_seed = defaults.mask_seed;
  c.grpo.lr = defaults.grpo.lr;
  return config_hash(c);
}

std::vector<SweepLevel> summarize(const std::vector<SweepRow>& rows) {
  std::map<double, std::map<double, std::vector<const SweepRow*>>> by;
  for (const auto& r : rows) by[r.sparsity][r.lr].push_back(&r);
  std::vector<SweepLevel> out;
  for (const auto& [s, per_lr] : by) {
    SweepLevel lv;
    lv.sparsity = s;
    double best = -1.0;
    for (const auto& [lr, rs] : per_lr) {
      std::vector<double> v;
      for (auto* r : rs) v.push_back(r->final_eval);
      const double m = mean_of(v);
      lv.runs += rs.size();
      for (auto* r : rs) lv.collapsed += r->collapsed ? 1 : 0;
      if (m > best) {
        best = m;
        lv.best_lr = lr;
        lv.mean = m;
        double ss = 0.0;
        for (double x : v) ss += (x - m) * (x - m);
        lv.stddev = std::sqrt(ss / static_cast<double>(v.size()));
        std::sort(v.begin(), v.end());
        const auto n = v.size();
        lv.median = n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
      }
    }
    out.push_back(lv);
  }
  return out;
}

SweepTable run_sweep(const RunConfig& cfg, const SweepSpec& spec, const SweepOptions& options) {
  TICKETLAB_REQUIRE(!spec.sparsities.empty() && !spec.mask_seeds.empty() && !spec.lrs.empty(),
                    "run_sweep: need at least one sparsity, mask seed and lr");
  cfg.validate();

  const std::string hash = sweep_config_hash(cfg);
  const std::string hash_line = "# config_hash=" + hash;
  std::map<Key, SweepRow> done;
  if (options.csv && std::filesystem::exists(*options.csv)) {
    std::ifstream in(*options.csv);
    std::stringstream ss;
    ss << in.rdbuf();
    const auto text = ss.str();
    // Rows from a different base config must never be mixed in.
    if (!text.empty() && text.compare(0, hash_line.size() + 1, hash_line + "\n") != 0)
      throw ConfigError("sweep csv '" + options.csv->string() + "' was produced by a different config");
    for (const auto& r : parse_sweep_csv(text)) done[{r.sparsity, r.mask_seed, r.lr}] = r;
  }
  std::ofstream out;
  if (options.csv) {
    const bool fresh = !std::filesystem::exists(*options.csv) || std::filesystem::file_size(*options.csv) == 0;
    if (options.csv->has_parent_path()) std::filesystem::create_directories(options.csv->parent_path());
    out.open(*options.csv, std::ios::app);
    if (!out) throw ConfigError("cannot open sweep csv '" + options.csv->string() + "'");
    if (fresh) out << hash_line << "\n" << kSweepCsvHeader << "\n" << std::flush;
  }

  std::optional<policy::Policy> own_base;
  const policy::Policy* base = options.base;
  auto ensure_base = [&] {
    if (!base) {
      own_base = build_base_model(cfg);
      base = &*own_base;
    }
  };

  SweepTable table;
  for (double s : spec.sparsities) {
    for (std::size_t si = 0; si < spec.mask_seeds.size(); ++si) {
      if (s == 0.0 && si > 0) continue;
      const auto seed = spec.mask_seeds[si];
      for (double lr : spec.lrs) {
        const Key key{s, seed, lr};
        if (auto it = done.find(key); it != done.end()) {
          table.rows.push_back(it->second);
          if (options.on_row) options.on_row(it->second, true);
          continue;
        }
        ensure_base();
        RunConfig rc = cfg;
        rc.sparsity = s;
        rc.mask_seed = seed;
        rc.grpo.lr = lr;
        TrainOptions to;
        to.threads = options.threads;
        to.base = base;
        const auto h = train_run(rc, to);
        SweepRow row{s, seed, lr, h.final_eval, h.collapsed};
        table.rows.push_back(row);
        done[key] = row;
        if (out.is_open()) out << format_sweep_row(row) << "\n" << std::flush;
        if (options.on_row) options.on_row(row, false);
      }
    }
  }

  table.levels = summarize(table.rows);
  const auto layout = policy::make_policy(cfg.resolved_arch()).params;
  for (auto& lv : table.levels) lv.active_params = masking::sample_masks(layout, lv.sparsity, 0).total_active();
  return table;
}

SweepTable sparsity_sweep(const RunConfig& cfg, const std::vector<double>& sparsities,
                          const std::vector<std::uint64_t>& mask_seeds, const SweepOptions& options) {
  return run_sweep(cfg, {sparsities, mask_seeds, {cfg.grpo.lr}}, options);
}

SweepTable lr_sweep(const RunConfig& cfg, double sparsity, const std::vector<double>& lrs,
                    const SweepOptions& options) {
  return run_sweep(cfg, {{sparsity}, {cfg.mask_seed}, lrs}, options);
}

}  // namespace ticketlab::analysis
