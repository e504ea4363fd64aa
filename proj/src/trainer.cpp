// SPDX-License-Identifier: Apache-2.0

#include "ticketlab/trainer.hpp"

#include <chrono>
#include <cmath>
#include <thread>

#include "ticketlab/errors.hpp"
#include "ticketlab/grpo.hpp"

namespace ticketlab {

namespace {

std::vector<double> next_logprobs(const policy::Policy& p, std::span<const Token> history, double temperature) {
  auto l = policy::next_logits(p, history);
  for (double& v : l) v /= temperature;
  policy::log_softmax_inplace(l);
  return l;
}

// Runs body(i) for i in [0, n) on up to `threads` workers with a static split.
template <typename Body>
void parallel_for(std::size_t n, std::size_t threads, Body&& body) {
  if (threads <= 1 || n <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  const auto workers = std::min(threads, n);
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) body(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors)
    if (e) std::rethrow_exception(e);
}

}  // namespace

double expected_pass(const policy::Policy& policy, const env::TaskInstance& instance, std::size_t max_len,
                     double temperature) {
  TICKETLAB_REQUIRE(temperature > 0.0, "expected_pass: temperature must be > 0");
  const auto& ans = instance.canonical_answer;
  if (ans.empty() || ans.size() > max_len) return 0.0;
  std::vector<Token> hist(instance.prompt.begin(), instance.prompt.end());
  double p = 1.0;
  for (auto tok : ans) {
    if (tok == vocab::kEos) return 0.0;  // sampling would stop before the answer completes
    p *= std::exp(next_logprobs(policy, hist, temperature)[tok]);
    hist.push_back(tok);
  }
  // Trailing PADs and one terminating EOS are stripped by the verifier.
  double tail = 1.0;
  double pad_run = 1.0;
  std::size_t remaining = max_len - ans.size();
  if (remaining > 0) {
    tail = 0.0;
    while (remaining > 0) {
      const auto lp = next_logprobs(policy, hist, temperature);
      tail += pad_run * std::exp(lp[vocab::kEos]);
      pad_run *= std::exp(lp[vocab::kPad]);
      hist.push_back(vocab::kPad);
      --remaining;
    }
    tail += pad_run;  // ran out of budget on PADs only
  }
  return p * tail;
}

double evaluate(const policy::Policy& policy, std::span<const env::TaskInstance> instances, std::size_t max_len,
                double temperature) {
  TICKETLAB_REQUIRE(!instances.empty(), "evaluate: empty instance set");
  double s = 0.0;
  for (const auto& inst : instances) s += expected_pass(policy, inst, max_len, temperature);
  return s / static_cast<double>(instances.size());
}

std::vector<env::TaskInstance> eval_set(const RunConfig& cfg) {
  return env::make_instance_set(cfg.task, cfg.eval_seed, "eval", cfg.eval_set_size);
}

policy::Policy build_base_model(const RunConfig& cfg) {
  cfg.validate();
  auto pol = policy::make_policy(cfg.resolved_arch());
  policy::init_policy(pol, numerics::SeedStream(cfg.init.seed, "init"), cfg.init.embed_scale, cfg.init.gain);
  if (cfg.pretrain.steps == 0) return pol;

  const auto dense = masking::dense_mask(pol.params);
  masking::AdamWHyper hyper;
  hyper.lr = cfg.pretrain.lr;
  hyper.weight_decay = 0.0;
  auto state = masking::make_sparse_state<double>(dense, hyper);
  const numerics::SeedStream root(cfg.pretrain.seed, "pretrain");
  const bool with_eos = cfg.task.answer_len() < cfg.grpo.max_tokens;

  for (std::size_t step = 0; step < cfg.pretrain.steps; ++step) {
    std::vector<env::TaskInstance> batch;
    std::size_t tokens = 0;
    for (std::size_t b = 0; b < cfg.pretrain.batch; ++b) {
      batch.push_back(env::gen_instance(cfg.task, root.split(step).split(b)));
      tokens += batch.back().canonical_answer.size() + (with_eos ? 1 : 0);
    }
    auto grad = pol.params.zeros_like();
    const double w = -1.0 / static_cast<double>(tokens);
    for (const auto& inst : batch) {
      TokenList target = inst.canonical_answer;
      if (with_eos) target.push_back(vocab::kEos);
      policy::accumulate_weighted_grad(
          pol, inst.prompt, target, [w](std::span<const double> lp) { return std::vector<double>(lp.size(), w); },
          grad);
    }
    if (!grad.all_finite()) throw NumericFailure("pretraining produced a non-finite gradient");
    masking::masked_adamw_step(pol.params, grad, state, dense);
  }
  return pol;
}

masking::MaskSet masks_for(const RunConfig& cfg, const ParamSet& params) {
  auto random = masking::sample_masks(params, cfg.sparsity, cfg.mask_seed);
  if (cfg.mask_mode == masking::MaskKind::random) return random;
  auto m = masking::structured_mask(params, cfg.mask_mode, random.total_active(), cfg.mask_seed);
  m.sparsity = cfg.sparsity;
  return m;
}

RunHistory train_run(const RunConfig& cfg, const TrainOptions& options) {
  const auto t0 = std::chrono::steady_clock::now();
  cfg.validate();
  RunHistory h;
  h.config = cfg;
  h.config_hash = config_hash(cfg);

  policy::Policy pol = options.base ? *options.base : build_base_model(cfg);
  TICKETLAB_REQUIRE(pol.arch == cfg.resolved_arch(), "train_run: base model architecture does not match config");
  h.masks = masks_for(cfg, pol.params);

  masking::AdamWHyper hyper;
  hyper.lr = cfg.grpo.lr;
  hyper.weight_decay = cfg.grpo.weight_decay;
  auto state = masking::make_sparse_state<double>(h.masks, hyper);

  const auto evals = eval_set(cfg);
  const auto evaluate_now = [&] {
    return evaluate(pol, evals, cfg.grpo.max_tokens, cfg.eval_temperature);
  };
  h.initial_eval = evaluate_now();
  h.final_eval = h.initial_eval;
  h.eval_trace.emplace_back(0, h.initial_eval);

  const bool log_grads = cfg.log_gradients || options.force_gradient_log;
  if (log_grads) h.gradients.emplace();

  const numerics::SeedStream prompts_root(cfg.training_seed, "train");
  const numerics::SeedStream rollout_root(cfg.training_seed, "rollout");

  for (std::size_t step = 1; step <= cfg.grpo.steps; ++step) {
    StepRecord rec;
    rec.step = step;
    try {
      std::vector<grpo::RolloutGroup> groups(cfg.grpo.batch_prompts);
      parallel_for(groups.size(), options.threads, [&](std::size_t b) {
        const auto inst = env::gen_instance(cfg.task, prompts_root.split(step).split(b));
        groups[b] = grpo::collect_group(pol, inst, cfg.grpo, rollout_root.split(step).split(b));
      });
      const bool want_raw = log_grads && !cfg.log_post_mask;
      auto res = grpo::grpo_step(pol, groups, cfg.grpo, &h.masks, nullptr, want_raw);
      rec.mean_reward = res.metrics.mean_reward;
      rec.clip_frac = res.metrics.clip_frac;
      rec.kl_to_old = res.metrics.kl_to_old;
      rec.grad_norm = res.metrics.grad_norm;

      if (log_grads && (step - 1) % cfg.log_stride == 0)
        h.gradients->append(want_raw ? res.pre_mask->flatten() : res.gradient.flatten());

      // A group set with no reward variance carries no signal; leave the
      // parameters (and the optimizer clock) untouched.
      if (res.metrics.grad_norm == 0.0) {
        ++h.skipped_updates;
      } else {
        masking::masked_adamw_step(pol.params, res.gradient, state, h.masks);
        if (!pol.params.all_finite()) throw NumericFailure("parameters became non-finite");
      }
    } catch (const NumericFailure& e) {
      rec.collapsed = true;
      h.collapsed = true;
      h.collapse_reason = e.what();
      h.steps.push_back(rec);
      break;
    }

    if (step % cfg.eval_interval == 0 || step == cfg.grpo.steps) {
      const double e = evaluate_now();
      rec.eval_pass1 = e;
      h.eval_trace.emplace_back(step, e);
      h.final_eval = e;
    }
    h.steps.push_back(rec);
  }

  h.final_policy = std::move(pol);
  h.wall_seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return h;
}

}  // namespace ticketlab
