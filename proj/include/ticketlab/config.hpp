// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: a flat key=value file with dotted sections. A single file
// fully determines a run; its canonical text is hashed into every output.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>

#include "ticketlab/environments.hpp"
#include "ticketlab/grpo.hpp"
#include "ticketlab/masking.hpp"
#include "ticketlab/policy.hpp"

namespace ticketlab {

struct InitConfig {
  std::uint64_t seed = 1;
  double embed_scale = 1.0;
  double gain = 1.0;
  friend bool operator==(const InitConfig&, const InitConfig&) = default;
};

/// Supervised warmup on canonical answers that produces the base model RL starts from.
struct PretrainConfig {
  std::size_t steps = 0;
  std::size_t batch = 32;
  double lr = 3e-3;
  std::uint64_t seed = 7;
  friend bool operator==(const PretrainConfig&, const PretrainConfig&) = default;
};

struct RunConfig {
  env::TaskSpec task;
  policy::PolicyArch model;  ///< vocab_size 0 means "size it to the task"
  InitConfig init;
  PretrainConfig pretrain;
  grpo::GrpoConfig grpo;

  double sparsity = 0.0;
  std::uint64_t mask_seed = 0;
  masking::MaskKind mask_mode = masking::MaskKind::random;
  std::uint64_t training_seed = 42;

  std::size_t eval_interval = 10;
  std::size_t eval_set_size = 256;
  double eval_temperature = 0.7;
  std::uint64_t eval_seed = 2001;

  std::string output_dir = "runs/default";
  bool log_gradients = false;
  std::size_t log_stride = 1;
  bool log_post_mask = false;

  RunConfig();
  /// Throws ConfigError.
  void validate() const;
  /// The model architecture with vocab_size resolved against the task.
  policy::PolicyArch resolved_arch() const;
  friend bool operator==(const RunConfig&, const RunConfig&) = default;
};

/// Canonical text form: every key, fixed order, shortest round-trip doubles.
std::string to_config_text(const RunConfig& cfg);

/// Unknown keys, malformed values and duplicate keys are ConfigErrors.
/// Lines starting with '#' and blank lines are ignored; unspecified keys keep defaults.
RunConfig parse_config_text(std::string_view text);
RunConfig load_config(const std::filesystem::path& path);

/// Applies one "key=value" override on top of an existing config.
void apply_override(RunConfig& cfg, std::string_view assignment);

/// 16 hex digits of FNV-1a over the canonical text.
std::string config_hash(const RunConfig& cfg);

std::string format_double(double x);

}  // namespace ticketlab
