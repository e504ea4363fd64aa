// SPDX-License-Identifier: Apache-2.0
//
// Autoregressive softmax policy: the last `context_len` tokens (left-padded)
// are embedded and concatenated, passed through tanh hidden layers, projected
// back to embedding width, and scored against the tied embedding table plus a
// vocabulary bias. Gradients are derived by hand.
//
// Tensor layout (declared order, which is also the flattening order):
//   embed        [vocab, emb]
//   h<i>.weight  [hidden_i, fan_in]   h<i>.bias [hidden_i]
//   proj.weight  [emb, last_width]    proj.bias [emb]
//   head.bias    [vocab]
//   head.weight  -> alias of embed

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "ticketlab/numerics.hpp"
#include "ticketlab/param_set.hpp"
#include "ticketlab/seed_stream.hpp"
#include "ticketlab/vocab.hpp"

namespace ticketlab::policy {

struct PolicyArch {
  std::size_t vocab_size = 16;
  std::size_t context_len = 8;
  std::size_t embedding_dim = 16;
  std::vector<std::size_t> hidden_dims = {64};

  void validate() const;
  friend bool operator==(const PolicyArch&, const PolicyArch&) = default;
};

struct Policy {
  PolicyArch arch;
  ParamSet params;
};

/// All-zero parameters with the layout above.
Policy make_policy(const PolicyArch& arch);

/// Gaussian init: embeddings N(0, embed_scale^2), weights N(0, gain^2 / fan_in),
/// biases zero.
void init_policy(Policy& policy, numerics::SeedStream stream, double embed_scale = 1.0, double gain = 1.0);

/// Next-token logits after each prefix prompt[0..j]; row j predicts token j+1.
numerics::Matrix forward(const Policy& policy, std::span<const Token> prompt);

/// Next-token logits given the full history (only the last context_len tokens are seen).
std::vector<double> next_logits(const Policy& policy, std::span<const Token> history);

void log_softmax_inplace(std::span<double> logits);

struct SequenceLogprob {
  double total = 0.0;
  std::vector<double> per_token;
};

SequenceLogprob logprob(const Policy& policy, std::span<const Token> prompt, std::span<const Token> response);

struct LogprobGrad {
  double total = 0.0;
  std::vector<double> per_token;
  ParamSet grad;
};

LogprobGrad logprob_and_grad(const Policy& policy, std::span<const Token> prompt, std::span<const Token> response);

/// Maps per-token log-probabilities to per-token weights w_t.
using TokenWeightFn = std::function<std::vector<double>(std::span<const double> per_token_logprob)>;

/// grad += sum_t w_t * d/dtheta log pi(response_t | history); returns per-token log-probs.
std::vector<double> accumulate_weighted_grad(const Policy& policy, std::span<const Token> prompt,
                                             std::span<const Token> response, const TokenWeightFn& weights,
                                             ParamSet& grad);

struct SampleOptions {
  std::size_t max_len = 8;
  double temperature = 1.0;
  bool stop_at_eos = true;
};

TokenList sample_response(const Policy& policy, std::span<const Token> prompt, const SampleOptions& options,
                          numerics::SeedStream& stream);
TokenList greedy_response(const Policy& policy, std::span<const Token> prompt, std::size_t max_len,
                          bool stop_at_eos = true);

// ---------------------------------------------------------------------------
// Exact enumeration over fixed-horizon responses (EOS is an ordinary token).

inline constexpr std::uint64_t kDefaultEnumerationCap = 1'000'000;

/// vocab^horizon, or throws CapacityError if it exceeds cap.
std::uint64_t enumeration_size(const PolicyArch& arch, std::size_t horizon, std::uint64_t cap);

/// Calls visit(response, probability) for every length-`horizon` response.
void enumerate_responses(const Policy& policy, std::span<const Token> prompt, std::size_t horizon,
                         const std::function<void(std::span<const Token>, double)>& visit,
                         std::uint64_t cap = kDefaultEnumerationCap);

/// KL(pi_a || pi_b) over length-`horizon` responses to `prompt`.
double exact_kl(const Policy& a, const Policy& b, std::span<const Token> prompt, std::size_t horizon,
                std::uint64_t cap = kDefaultEnumerationCap);

/// Total-variation distance between the two response distributions.
double total_variation(const Policy& a, const Policy& b, std::span<const Token> prompt, std::size_t horizon,
                       std::uint64_t cap = kDefaultEnumerationCap);

// ---------------------------------------------------------------------------
// Fisher information F = E_y[g g^T], g = grad log pi(y | x), averaged over prompts.

enum class FisherMode { exact_enumeration, monte_carlo };

struct FisherEstimate {
  numerics::Matrix matrix;
  std::size_t sample_count = 0;
  FisherMode mode = FisherMode::exact_enumeration;
};

struct FisherOptions {
  FisherMode mode = FisherMode::exact_enumeration;
  std::size_t horizon = 2;
  std::size_t samples = 10000;              ///< per prompt, monte_carlo only
  std::uint64_t cap = kDefaultEnumerationCap;
  std::optional<std::vector<std::size_t>> subset;  ///< flattened coordinates
  std::uint64_t seed = 0;                   ///< monte_carlo only
};

FisherEstimate estimate_fisher(const Policy& policy, std::span<const TokenList> prompts, const FisherOptions& options);

/// Flattened gradient of log pi(response | prompt), optionally restricted to `subset`.
std::vector<double> flat_score(const Policy& policy, std::span<const Token> prompt, std::span<const Token> response,
                               const std::optional<std::vector<std::size_t>>& subset = std::nullopt);

/// Copy of `policy` with flattened parameters shifted by `delta`.
Policy perturbed(const Policy& policy, std::span<const double> delta);

}  // namespace ticketlab::policy
