// SPDX-License-Identifier: Apache-2.0

#include "ticketlab/grpo.hpp"

#include <algorithm>
#include <cmath>

#include "ticketlab/errors.hpp"

namespace ticketlab::grpo {

void RolloutGroup::validate() const {
  const auto g = responses.size();
  TICKETLAB_REQUIRE(g >= 2, "rollout group needs at least 2 responses");
  TICKETLAB_REQUIRE(rewards.size() == g && old_logprobs.size() == g && advantages.size() == g,
                    "rollout group fields have inconsistent sizes");
  for (std::size_t i = 0; i < g; ++i)
    TICKETLAB_REQUIRE(old_logprobs[i].size() == responses[i].size(), "old log-probs do not match response length");
}

void GrpoConfig::validate() const {
  if (group_size < 2) throw ConfigError("grpo.group_size must be >= 2");
  if (!(clip_eps > 0.0 && clip_eps < 1.0)) throw ConfigError("grpo.clip_eps must lie in (0, 1)");
  if (!(beta >= 0.0)) throw ConfigError("grpo.beta must be >= 0");
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ConfigError("grpo.lr must be finite and >= 0");
  if (batch_prompts < 1) throw ConfigError("grpo.batch_prompts must be >= 1");
  if (max_tokens < 1) throw ConfigError("grpo.max_tokens must be >= 1");
  if (!(temperature > 0.0)) throw ConfigError("grpo.temperature must be > 0");
  if (!(weight_decay >= 0.0)) throw ConfigError("grpo.weight_decay must be >= 0");
  if (!(grad_clip_norm > 0.0)) throw ConfigError("grpo.grad_clip_norm must be > 0");
}

std::vector<double> group_advantages(std::span<const double> rewards) {
  TICKETLAB_REQUIRE(rewards.size() >= 2, "group_advantages: need at least 2 rewards");
  const double n = static_cast<double>(rewards.size());
  double mu = 0.0;
  for (double r : rewards) mu += r;
  mu /= n;
  double var = 0.0;
  for (double r : rewards) var += (r - mu) * (r - mu);
  const double sigma = std::sqrt(var / n);
  std::vector<double> out(rewards.size(), 0.0);
  if (sigma == 0.0) return out;
  for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mu) / (sigma + 1e-8);
  return out;
}

double clipped_surrogate(double ratio, double advantage, double eps) {
  TICKETLAB_REQUIRE(ratio > 0.0, "clipped_surrogate: ratio must be positive");
  const double clipped = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
  return std::min(ratio * advantage, clipped * advantage);
}

RolloutGroup collect_group(const policy::Policy& policy, const env::TaskInstance& instance, const GrpoConfig& cfg,
                           const numerics::SeedStream& stream) {
  RolloutGroup g;
  g.prompt = instance.prompt;
  const policy::SampleOptions opts{cfg.max_tokens, cfg.temperature, true};
  for (std::size_t i = 0; i < cfg.group_size; ++i) {
    auto s = stream.split(i);
    auto resp = policy::sample_response(policy, instance.prompt, opts, s);
    g.rewards.push_back(env::verify(instance, resp));
    g.old_logprobs.push_back(policy::logprob(policy, instance.prompt, resp).per_token);
    g.responses.push_back(std::move(resp));
  }
  g.advantages = group_advantages(g.rewards);
  return g;
}

double clip_global_norm(ParamSet& grad, double max_norm) {
  const double norm = grad.norm();
  if (norm > max_norm) {
    const double scale = max_norm / norm;
    for (auto& t : grad.tensors())
      for (double& v : t.values) v *= scale;
  }
  return norm;
}

StepResult grpo_step(const policy::Policy& policy, std::span<const RolloutGroup> batch, const GrpoConfig& cfg,
                     const masking::MaskSet* masks, const policy::Policy* reference, bool keep_pre_mask) {
  cfg.validate();
  const bool use_kl = cfg.beta > 0.0;
  TICKETLAB_REQUIRE(!use_kl || reference != nullptr, "grpo_step: beta > 0 needs a reference policy");

  std::size_t total_tokens = 0;
  std::size_t sequences = 0;
  double reward_sum = 0.0;
  for (const auto& g : batch) {
    g.validate();
    for (std::size_t i = 0; i < g.responses.size(); ++i) {
      total_tokens += g.responses[i].size();
      reward_sum += g.rewards[i];
    }
    sequences += g.responses.size();
  }

  StepResult out{policy.params.zeros_like(), {}, std::nullopt};
  out.metrics.tokens = total_tokens;
  out.metrics.mean_reward = sequences ? reward_sum / static_cast<double>(sequences) : 0.0;
  if (total_tokens == 0) return out;

  std::size_t clipped = 0;
  double kl_old_sum = 0.0;
  const double eps = cfg.clip_eps;

  for (const auto& g : batch) {
    for (std::size_t i = 0; i < g.responses.size(); ++i) {
      const auto& resp = g.responses[i];
      if (resp.empty()) continue;
      const double norm = cfg.aggregation == LossAggregation::token
                              ? 1.0 / static_cast<double>(total_tokens)
                              : 1.0 / (static_cast<double>(sequences) * static_cast<double>(resp.size()));
      const double adv = g.advantages[i];
      const auto& old_lp = g.old_logprobs[i];
      std::vector<double> ref_lp;
      if (use_kl) ref_lp = policy::logprob(*reference, g.prompt, resp).per_token;

      auto weights = [&](std::span<const double> lp) {
        std::vector<double> w(lp.size(), 0.0);
        for (std::size_t t = 0; t < lp.size(); ++t) {
          const double ratio = std::exp(lp[t] - old_lp[t]);
          kl_old_sum += ratio - 1.0 - (lp[t] - old_lp[t]);
          const double clipped_ratio = std::clamp(ratio, 1.0 - eps, 1.0 + eps);
          // The min picks the clipped branch only when it is strictly smaller.
          if (clipped_ratio * adv < ratio * adv) {
            ++clipped;
          } else {
            w[t] = -norm * adv * ratio;
          }
          if (use_kl) {
            // k3 estimator r - log r - 1 with r = pi_ref / pi; d/dlogpi = 1 - r.
            const double r = std::exp(ref_lp[t] - lp[t]);
            w[t] += norm * cfg.beta * (1.0 - r);
          }
        }
        return w;
      };
      policy::accumulate_weighted_grad(policy, g.prompt, resp, weights, out.gradient);
    }
  }

  out.metrics.clip_frac = static_cast<double>(clipped) / static_cast<double>(total_tokens);
  out.metrics.kl_to_old = kl_old_sum / static_cast<double>(total_tokens);

  if (keep_pre_mask) out.pre_mask = out.gradient;
  if (masks) masking::apply_mask_inplace(out.gradient, *masks);
  if (!out.gradient.all_finite()) throw NumericFailure("grpo_step: non-finite gradient");
  out.metrics.grad_norm = clip_global_norm(out.gradient, cfg.grad_clip_norm);
  return out;
}

}  // namespace ticketlab::grpo
