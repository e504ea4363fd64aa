// SPDX-License-Identifier: Apache-2.0
//
// Sparsity and learning-rate sweeps over full training runs, persisted as an
// append-only CSV so an interrupted sweep resumes without duplicating rows.

#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "ticketlab/config.hpp"
#include "ticketlab/policy.hpp"

namespace ticketlab::analysis {

inline const std::vector<double> kDefaultSparsityLadder = {0.0, 0.99, 0.995, 0.999, 0.9995, 0.9999, 0.99999};
inline const std::vector<std::uint64_t> kDefaultMaskSeeds = {0, 10, 42, 1002, 2001};

struct SweepRow {
  double sparsity = 0.0;
  std::uint64_t mask_seed = 0;
  double lr = 0.0;
  double final_eval = 0.0;
  bool collapsed = false;
};

struct SweepLevel {
  double sparsity = 0.0;
  std::size_t active_params = 0;
  double best_lr = 0.0;      ///< lr with the highest mean final eval (ties: smaller lr)
  double mean = 0.0;         ///< over mask seeds at best_lr
  double stddev = 0.0;       ///< population std over mask seeds at best_lr
  double median = 0.0;
  std::size_t runs = 0;
  std::size_t collapsed = 0;
};

struct SweepTable {
  std::vector<SweepRow> rows;
  std::vector<SweepLevel> levels;  ///< ascending sparsity
};

struct SweepSpec {
  std::vector<double> sparsities;
  std::vector<std::uint64_t> mask_seeds;
  std::vector<double> lrs;
};

struct SweepOptions {
  std::optional<std::filesystem::path> csv;  ///< append-only results file
  std::size_t threads = 1;
  const policy::Policy* base = nullptr;
  std::function<void(const SweepRow&, bool reused)> on_row;
};

/// Every (sparsity, mask seed, lr) cell. Sparsity 0 is mask-independent and
/// runs only for the first mask seed.
SweepTable run_sweep(const RunConfig& cfg, const SweepSpec& spec, const SweepOptions& options = {});

SweepTable sparsity_sweep(const RunConfig& cfg, const std::vector<double>& sparsities,
                          const std::vector<std::uint64_t>& mask_seeds, const SweepOptions& options = {});
SweepTable lr_sweep(const RunConfig& cfg, double sparsity, const std::vector<double>& lrs,
                    const SweepOptions& options = {});

// Hash of the base config with the per-row keys (sparsity, mask seed, lr) reset;
// it heads sweep.csv and guards resumption.
std::string sweep_config_hash(const RunConfig& cfg);

std::vector<SweepLevel> summarize(const std::vector<SweepRow>& rows);

inline constexpr const char* kSweepCsvHeader = "sparsity,mask_seed,lr,final_eval,collapsed";
std::string format_sweep_row(const SweepRow& row);
/// Skips '#' comments and the header; ConfigError on malformed rows.
std::vector<SweepRow> parse_sweep_csv(std::string_view text);

}  // namespace ticketlab::analysis
