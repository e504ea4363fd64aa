// SPDX-License-Identifier: Apache-2.0
//
// Base-model warmup, masked GRPO training runs and pass@1 evaluation.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "ticketlab/analysis.hpp"
#include "ticketlab/config.hpp"
#include "ticketlab/environments.hpp"
#include "ticketlab/masking.hpp"
#include "ticketlab/policy.hpp"

namespace ticketlab {

/// Probability that one sampled response (stop at EOS, at most max_len
/// tokens, given temperature) passes the verifier. Computed exactly.
double expected_pass(const policy::Policy& policy, const env::TaskInstance& instance, std::size_t max_len,
                     double temperature);

/// Mean expected pass@1 over the instances.
double evaluate(const policy::Policy& policy, std::span<const env::TaskInstance> instances, std::size_t max_len,
                double temperature);

/// The held-out evaluation set of a config.
std::vector<env::TaskInstance> eval_set(const RunConfig& cfg);

/// Random init followed by `pretrain.steps` of supervised cross-entropy on
/// canonical answers (plus EOS when it fits in max_tokens).
policy::Policy build_base_model(const RunConfig& cfg);

/// Masks for a run: random per-tensor masks, or a structured mask with the
/// same active count as the random mask at this sparsity.
masking::MaskSet masks_for(const RunConfig& cfg, const ParamSet& params);

struct StepRecord {
  std::size_t step = 0;
  double mean_reward = 0.0;
  std::optional<double> eval_pass1;
  double clip_frac = 0.0;
  double kl_to_old = 0.0;
  double grad_norm = 0.0;
  bool collapsed = false;
};

struct RunHistory {
  RunConfig config;
  std::string config_hash;
  double initial_eval = 0.0;
  double final_eval = 0.0;
  std::vector<StepRecord> steps;
  std::vector<std::pair<std::size_t, double>> eval_trace;  ///< (step, pass@1), step 0 = base model
  bool collapsed = false;
  std::string collapse_reason;
  std::size_t skipped_updates = 0;  ///< steps whose gradient was exactly zero
  masking::MaskSet masks;
  policy::Policy final_policy;
  std::optional<analysis::GradientLog> gradients;
  double wall_seconds = 0.0;
};

struct TrainOptions {
  std::size_t threads = 1;           ///< rollout workers; results do not depend on it
  const policy::Policy* base = nullptr;  ///< reuse a prebuilt base model
  bool force_gradient_log = false;
};

/// Deterministic in (config, base model). NumericFailure marks the run
/// collapsed and keeps the partial history.
RunHistory train_run(const RunConfig& cfg, const TrainOptions& options = {});

}  // namespace ticketlab
