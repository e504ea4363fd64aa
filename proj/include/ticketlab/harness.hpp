// SPDX-License-Identifier: Apache-2.0
//
// Experiment orchestration and artifact persistence behind the command line.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "ticketlab/analysis.hpp"
#include "ticketlab/config.hpp"
#include "ticketlab/trainer.hpp"

namespace ticketlab::harness {

enum ExitCode : int {
  kOk = 0,
  kFailure = 1,
  kConfigError = 2,
  kNumericCollapse = 3,
  kCapacityError = 4,
};

/// Relative paths are placed under $TICKETLAB_OUTPUT_ROOT when it is set.
std::filesystem::path resolve_output_dir(const std::string& dir);

/// Writes bytes to path via a temporary file and rename.
void write_file(const std::filesystem::path& path, const std::string& content);
void write_file(const std::filesystem::path& path, const std::vector<std::uint8_t>& content);

/// 16 hex digits of FNV-1a.
std::string content_hash(std::string_view bytes);

std::string metrics_csv(const RunHistory& h);
std::string mask_file(const RunHistory& h);
std::vector<std::uint8_t> checkpoint_bytes(const RunHistory& h);
/// Config snapshot, hashes, eval trace and outcome; no wall-clock (see timing.json).
std::string run_json(const RunHistory& h);

/// metrics.csv, masks.tsv, checkpoint.bin, eval_set.tsv, run.json, timing.json.
void write_run_outputs(const RunHistory& h, const std::filesystem::path& dir);

/// {0, 10, 42, 1002, 2001}, extended with 10000 + i beyond five seeds.
std::vector<std::uint64_t> default_mask_seeds(std::size_t n);

struct TicketRun {
  std::uint64_t mask_seed = 0;
  double final_eval = 0.0;
  bool collapsed = false;
  bool success = false;
  std::vector<std::pair<std::size_t, double>> eval_trace;
};

struct MultiticketReport {
  std::string config_hash;
  double sparsity = 0.0;
  double dense_final_eval = 0.0;
  double success_fraction = 0.95;  ///< success: final eval >= fraction * dense final eval
  std::vector<TicketRun> runs;
  analysis::PairwiseJaccard jaccard;
  double expected_jaccard = 0.0;
  double success_rate = 0.0;
  std::vector<std::string> warnings;
};

/// One dense reference run plus one masked run per seed, all from the same base model.
MultiticketReport multiticket(const RunConfig& cfg, const std::vector<std::uint64_t>& mask_seeds,
                              std::size_t threads = 1);
std::string multiticket_json(const MultiticketReport& r);

}  // namespace ticketlab::harness
