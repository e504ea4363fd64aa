// SPDX-License-Identifier: Apache-2.0
//
// Group-relative policy optimization: per-prompt groups of sampled responses,
// rewards normalized within the group, PPO-style clipped token ratios.

#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <vector>

#include "ticketlab/environments.hpp"
#include "ticketlab/masking.hpp"
#include "ticketlab/policy.hpp"

namespace ticketlab::grpo {

struct RolloutGroup {
  TokenList prompt;
  std::vector<TokenList> responses;
  std::vector<double> rewards;
  std::vector<std::vector<double>> old_logprobs;  ///< per response, per token
  std::vector<double> advantages;

  void validate() const;
};

enum class LossAggregation { token, sequence };

struct GrpoConfig {
  std::size_t group_size = 8;
  double clip_eps = 0.2;
  double beta = 0.0;
  double lr = 1e-3;
  std::size_t batch_prompts = 16;
  std::size_t max_tokens = 4;
  double temperature = 1.0;
  double weight_decay = 0.01;
  double grad_clip_norm = 1.0;
  std::size_t steps = 100;
  LossAggregation aggregation = LossAggregation::token;

  void validate() const;
  friend bool operator==(const GrpoConfig&, const GrpoConfig&) = default;
};

/// (R_i - mean) / (population std + 1e-8); all zero when the std is zero.
std::vector<double> group_advantages(std::span<const double> rewards);

double clipped_surrogate(double ratio, double advantage, double eps);

/// Samples group_size responses, scores them and records their log-probs
/// under `policy`. Response g uses stream.split(g).
RolloutGroup collect_group(const policy::Policy& policy, const env::TaskInstance& instance, const GrpoConfig& cfg,
                           const numerics::SeedStream& stream);

struct StepMetrics {
  double mean_reward = 0.0;
  double clip_frac = 0.0;   ///< tokens whose clipped branch is active (zero gradient)
  double kl_to_old = 0.0;   ///< mean per-token k3 estimate of KL(old || current)
  double grad_norm = 0.0;   ///< after masking, before clipping
  std::size_t tokens = 0;
};

struct StepResult {
  ParamSet gradient;  ///< gradient of the negated objective, masked then clipped
  StepMetrics metrics;
  std::optional<ParamSet> pre_mask;  ///< raw gradient, when requested
};

/// `masks` may be null (unmasked). `reference` is read only when beta > 0.
/// Throws NumericFailure if the gradient is not finite.
StepResult grpo_step(const policy::Policy& policy, std::span<const RolloutGroup> batch, const GrpoConfig& cfg,
                     const masking::MaskSet* masks, const policy::Policy* reference = nullptr,
                     bool keep_pre_mask = false);

/// Scales `grad` down to at most max_norm; returns the norm before scaling.
double clip_global_norm(ParamSet& grad, double max_norm);

}  // namespace ticketlab::grpo
