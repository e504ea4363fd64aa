// SPDX-License-Identifier: Apache-2.0

#include "ticketlab/policy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "ticketlab/errors.hpp"

namespace ticketlab::policy {

void PolicyArch::validate() const {
  TICKETLAB_REQUIRE(vocab_size >= 2, "PolicyArch: vocab_size must be >= 2");
  TICKETLAB_REQUIRE(context_len >= 1, "PolicyArch: context_len must be >= 1");
  TICKETLAB_REQUIRE(embedding_dim >= 1, "PolicyArch: embedding_dim must be >= 1");
  for (auto h : hidden_dims) TICKETLAB_REQUIRE(h >= 1, "PolicyArch: hidden dims must be >= 1");
}

Policy make_policy(const PolicyArch& arch) {
  arch.validate();
  Policy p{arch, {}};
  const std::size_t e = arch.embedding_dim;
  p.params.add("embed", {arch.vocab_size, e});
  std::size_t width = arch.context_len * e;
  for (std::size_t i = 0; i < arch.hidden_dims.size(); ++i) {
    const std::string prefix = "h" + std::to_string(i);
    p.params.add(prefix + ".weight", {arch.hidden_dims[i], width});
    p.params.add(prefix + ".bias", {arch.hidden_dims[i]});
    width = arch.hidden_dims[i];
  }
  p.params.add("proj.weight", {e, width});
  p.params.add("proj.bias", {e});
  p.params.add("head.bias", {arch.vocab_size});
  p.params.tie("embed", "head.weight");
  return p;
}

void init_policy(Policy& policy, numerics::SeedStream stream, double embed_scale, double gain) {
  for (auto& t : policy.params.tensors()) {
    auto s = stream.split(t.name);
    if (t.name == "embed") {
      for (double& x : t.values) x = embed_scale * s.normal();
    } else if (t.shape.size() == 2) {
      const double sd = gain / std::sqrt(static_cast<double>(t.shape[1]));
      for (double& x : t.values) x = sd * s.normal();
    } else {
      std::fill(t.values.begin(), t.values.end(), 0.0);
    }
  }
}

namespace {

// Resolved tensor indices for one forward/backward pass.
struct Layout {
  std::size_t embed;
  std::vector<std::size_t> weight;
  std::vector<std::size_t> bias;
  std::size_t proj_w;
  std::size_t proj_b;
  std::size_t head_b;

  explicit Layout(const Policy& p) {
    embed = p.params.index_of("embed");
    for (std::size_t i = 0; i < p.arch.hidden_dims.size(); ++i) {
      const std::string prefix = "h" + std::to_string(i);
      weight.push_back(p.params.index_of(prefix + ".weight"));
      bias.push_back(p.params.index_of(prefix + ".bias"));
    }
    proj_w = p.params.index_of("proj.weight");
    proj_b = p.params.index_of("proj.bias");
    head_b = p.params.index_of("head.bias");
  }
};

struct Activations {
  std::vector<Token> window;
  std::vector<double> x;
  std::vector<std::vector<double>> h;  // post-tanh, one per hidden layer
  std::vector<double> z;
  std::vector<double> logits;
};

void check_tokens(const PolicyArch& arch, std::span<const Token> tokens) {
  for (Token t : tokens)
    TICKETLAB_REQUIRE(t < arch.vocab_size,
                      "token " + std::to_string(t) + " out of range for vocab " + std::to_string(arch.vocab_size));
}

std::vector<Token> window_of(const PolicyArch& arch, std::span<const Token> history) {
  std::vector<Token> w(arch.context_len, vocab::kPad);
  const std::size_t n = std::min(history.size(), arch.context_len);
  std::copy(history.end() - static_cast<std::ptrdiff_t>(n), history.end(),
            w.end() - static_cast<std::ptrdiff_t>(n));
  return w;
}

// y = W x + b for W [rows, cols] row-major.
void affine(std::span<const double> w, std::span<const double> b, std::span<const double> x, std::vector<double>& y) {
  const std::size_t rows = b.size();
  const std::size_t cols = x.size();
  y.resize(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* wr = w.data() + r * cols;
    double s = b[r];
    for (std::size_t c = 0; c < cols; ++c) s += wr[c] * x[c];
    y[r] = s;
  }
}

Activations run_position(const Policy& p, const Layout& L, std::span<const Token> history) {
  const auto& T = p.params.tensors();
  const std::size_t e = p.arch.embedding_dim;
  Activations a;
  a.window = window_of(p.arch, history);
  a.x.resize(p.arch.context_len * e);
  const auto& E = T[L.embed].values;
  for (std::size_t j = 0; j < a.window.size(); ++j)
    std::copy_n(E.begin() + static_cast<std::ptrdiff_t>(a.window[j] * e), e,
                a.x.begin() + static_cast<std::ptrdiff_t>(j * e));

  std::span<const double> in = a.x;
  a.h.resize(L.weight.size());
  for (std::size_t i = 0; i < L.weight.size(); ++i) {
    affine(T[L.weight[i]].values, T[L.bias[i]].values, in, a.h[i]);
    for (double& v : a.h[i]) v = std::tanh(v);
    in = a.h[i];
  }
  affine(T[L.proj_w].values, T[L.proj_b].values, in, a.z);

  // logits = E z + head.bias
  const std::size_t V = p.arch.vocab_size;
  const auto& hb = T[L.head_b].values;
  a.logits.resize(V);
  for (std::size_t v = 0; v < V; ++v) {
    double s = hb[v];
    const double* ev = E.data() + v * e;
    for (std::size_t k = 0; k < e; ++k) s += ev[k] * a.z[k];
    a.logits[v] = s;
  }
  return a;
}

// grad += d/dtheta of sum_v dlogits[v] * logits[v] at this position.
void backprop_position(const Policy& p, const Layout& L, const Activations& a, std::span<const double> dlogits,
                       ParamSet& grad) {
  const auto& T = p.params.tensors();
  auto G = grad.tensors();
  const std::size_t e = p.arch.embedding_dim;
  const std::size_t V = p.arch.vocab_size;
  const auto& E = T[L.embed].values;
  auto& gE = G[L.embed].values;

  auto& ghb = G[L.head_b].values;
  std::vector<double> dz(e, 0.0);
  for (std::size_t v = 0; v < V; ++v) {
    const double d = dlogits[v];
    if (d == 0.0) continue;
    ghb[v] += d;
    double* gev = gE.data() + v * e;
    const double* ev = E.data() + v * e;
    for (std::size_t k = 0; k < e; ++k) {
      gev[k] += d * a.z[k];  // tied head.weight contribution
      dz[k] += d * ev[k];
    }
  }

  // proj
  std::span<const double> in = a.h.empty() ? std::span<const double>(a.x) : std::span<const double>(a.h.back());
  {
    auto& gw = G[L.proj_w].values;
    auto& gb = G[L.proj_b].values;
    const auto& w = T[L.proj_w].values;
    const std::size_t cols = in.size();
    std::vector<double> din(cols, 0.0);
    for (std::size_t r = 0; r < e; ++r) {
      const double d = dz[r];
      gb[r] += d;
      if (d == 0.0) continue;
      double* gwr = gw.data() + r * cols;
      const double* wr = w.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) {
        gwr[c] += d * in[c];
        din[c] += d * wr[c];
      }
    }
    dz = std::move(din);
  }

  // hidden layers, last to first; dz now holds d/d(output of layer i)
  for (std::size_t ii = L.weight.size(); ii-- > 0;) {
    const auto& h = a.h[ii];
    std::span<const double> layer_in = ii == 0 ? std::span<const double>(a.x) : std::span<const double>(a.h[ii - 1]);
    auto& gw = G[L.weight[ii]].values;
    auto& gb = G[L.bias[ii]].values;
    const auto& w = T[L.weight[ii]].values;
    const std::size_t rows = h.size();
    const std::size_t cols = layer_in.size();
    std::vector<double> din(cols, 0.0);
    for (std::size_t r = 0; r < rows; ++r) {
      const double d = dz[r] * (1.0 - h[r] * h[r]);
      gb[r] += d;
      if (d == 0.0) continue;
      double* gwr = gw.data() + r * cols;
      const double* wr = w.data() + r * cols;
      for (std::size_t c = 0; c < cols; ++c) {
        gwr[c] += d * layer_in[c];
        din[c] += d * wr[c];
      }
    }
    dz = std::move(din);
  }

  // input embeddings
  for (std::size_t j = 0; j < a.window.size(); ++j) {
    double* gev = gE.data() + a.window[j] * e;
    for (std::size_t k = 0; k < e; ++k) gev[k] += dz[j * e + k];
  }
}

std::vector<Token> concat(std::span<const Token> a, std::span<const Token> b) {
  std::vector<Token> out(a.begin(), a.end());
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

}  // namespace

void log_softmax_inplace(std::span<double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double s = 0.0;
  for (double v : logits) s += std::exp(v - m);
  const double lse = m + std::log(s);
  for (double& v : logits) v -= lse;
}

numerics::Matrix forward(const Policy& policy, std::span<const Token> prompt) {
  TICKETLAB_REQUIRE(!prompt.empty(), "forward: empty prompt");
  TICKETLAB_REQUIRE(prompt.size() <= policy.arch.context_len, "forward: prompt longer than context_len");
  check_tokens(policy.arch, prompt);
  const Layout L(policy);
  numerics::Matrix out(prompt.size(), policy.arch.vocab_size);
  for (std::size_t j = 0; j < prompt.size(); ++j) {
    const auto a = run_position(policy, L, prompt.first(j + 1));
    std::copy(a.logits.begin(), a.logits.end(), out.row(j).begin());
  }
  return out;
}

std::vector<double> next_logits(const Policy& policy, std::span<const Token> history) {
  check_tokens(policy.arch, history);
  const Layout L(policy);
  return run_position(policy, L, history).logits;
}

SequenceLogprob logprob(const Policy& policy, std::span<const Token> prompt, std::span<const Token> response) {
  TICKETLAB_REQUIRE(!response.empty(), "logprob: empty response");
  check_tokens(policy.arch, prompt);
  check_tokens(policy.arch, response);
  const Layout L(policy);
  const auto seq = concat(prompt, response);
  SequenceLogprob out;
  out.per_token.reserve(response.size());
  for (std::size_t t = 0; t < response.size(); ++t) {
    auto a = run_position(policy, L, std::span<const Token>(seq).first(prompt.size() + t));
    log_softmax_inplace(a.logits);
    out.per_token.push_back(a.logits[response[t]]);
    out.total += a.logits[response[t]];
  }
  return out;
}

std::vector<double> accumulate_weighted_grad(const Policy& policy, std::span<const Token> prompt,
                                             std::span<const Token> response, const TokenWeightFn& weights,
                                             ParamSet& grad) {
  TICKETLAB_REQUIRE(!response.empty(), "logprob_and_grad: empty response");
  TICKETLAB_REQUIRE(grad.same_layout(policy.params), "accumulate_weighted_grad: gradient layout mismatch");
  check_tokens(policy.arch, prompt);
  check_tokens(policy.arch, response);
  const Layout L(policy);
  const auto seq = concat(prompt, response);

  std::vector<Activations> acts;
  std::vector<double> per_token;
  acts.reserve(response.size());
  per_token.reserve(response.size());
  for (std::size_t t = 0; t < response.size(); ++t) {
    acts.push_back(run_position(policy, L, std::span<const Token>(seq).first(prompt.size() + t)));
    std::vector<double> lp = acts.back().logits;
    log_softmax_inplace(lp);
    per_token.push_back(lp[response[t]]);
    acts.back().logits = std::move(lp);  // keep log-probs for the backward pass
  }

  const std::vector<double> w = weights(per_token);
  TICKETLAB_REQUIRE(w.size() == response.size(), "token weight function returned wrong length");

  std::vector<double> dlogits(policy.arch.vocab_size);
  for (std::size_t t = 0; t < response.size(); ++t) {
    if (w[t] == 0.0) continue;
    const auto& lp = acts[t].logits;
    for (std::size_t v = 0; v < dlogits.size(); ++v) dlogits[v] = -w[t] * std::exp(lp[v]);
    dlogits[response[t]] += w[t];
    backprop_position(policy, L, acts[t], dlogits, grad);
  }
  return per_token;
}

LogprobGrad logprob_and_grad(const Policy& policy, std::span<const Token> prompt, std::span<const Token> response) {
  LogprobGrad out;
  out.grad = policy.params.zeros_like();
  out.per_token = accumulate_weighted_grad(
      policy, prompt, response, [](std::span<const double> lp) { return std::vector<double>(lp.size(), 1.0); },
      out.grad);
  for (double v : out.per_token) out.total += v;
  return out;
}

TokenList sample_response(const Policy& policy, std::span<const Token> prompt, const SampleOptions& options,
                          numerics::SeedStream& stream) {
  TICKETLAB_REQUIRE(options.temperature > 0.0 && std::isfinite(options.temperature),
                    "sample_response: temperature must be > 0");
  check_tokens(policy.arch, prompt);
  const Layout L(policy);
  std::vector<Token> seq(prompt.begin(), prompt.end());
  TokenList out;
  std::vector<double> probs(policy.arch.vocab_size);
  while (out.size() < options.max_len) {
    auto a = run_position(policy, L, seq);
    for (double& v : a.logits) v /= options.temperature;
    log_softmax_inplace(a.logits);
    const double u = stream.uniform();
    double acc = 0.0;
    Token pick = static_cast<Token>(a.logits.size() - 1);
    for (std::size_t v = 0; v < a.logits.size(); ++v) {
      acc += std::exp(a.logits[v]);
      if (u < acc) {
        pick = static_cast<Token>(v);
        break;
      }
    }
    // Guard against the cumulative sum falling short of 1 by rounding.
    while (pick > 0 && std::exp(a.logits[pick]) == 0.0) --pick;
    out.push_back(pick);
    seq.push_back(pick);
    if (options.stop_at_eos && pick == vocab::kEos) break;
  }
  return out;
}

TokenList greedy_response(const Policy& policy, std::span<const Token> prompt, std::size_t max_len,
                          bool stop_at_eos) {
  check_tokens(policy.arch, prompt);
  const Layout L(policy);
  std::vector<Token> seq(prompt.begin(), prompt.end());
  TokenList out;
  while (out.size() < max_len) {
    const auto a = run_position(policy, L, seq);
    const auto pick = static_cast<Token>(std::max_element(a.logits.begin(), a.logits.end()) - a.logits.begin());
    out.push_back(pick);
    seq.push_back(pick);
    if (stop_at_eos && pick == vocab::kEos) break;
  }
  return out;
}

// ---------------------------------------------------------------------------

std::uint64_t enumeration_size(const PolicyArch& arch, std::size_t horizon, std::uint64_t cap) {
  std::uint64_t n = 1;
  for (std::size_t t = 0; t < horizon; ++t) {
    if (n > cap / arch.vocab_size)
      throw CapacityError("enumeration of vocab^" + std::to_string(horizon) + " responses exceeds cap " +
                          std::to_string(cap));
    n *= arch.vocab_size;
  }
  if (n > cap) throw CapacityError("enumeration exceeds cap " + std::to_string(cap));
  return n;
}

void enumerate_responses(const Policy& policy, std::span<const Token> prompt, std::size_t horizon,
                         const std::function<void(std::span<const Token>, double)>& visit, std::uint64_t cap) {
  enumeration_size(policy.arch, horizon, cap);
  check_tokens(policy.arch, prompt);
  const Layout L(policy);
  std::vector<Token> seq(prompt.begin(), prompt.end());
  std::vector<double> logp_prefix = {0.0};  // log-prob of the current prefix, by depth
  logp_prefix.resize(horizon + 1);

  // Recursive lambda; leaf probabilities are products along the path.
  std::function<void(std::size_t)> rec = [&](std::size_t depth) {
    if (depth == horizon) {
      visit(std::span<const Token>(seq).subspan(prompt.size()), std::exp(logp_prefix[depth]));
      return;
    }
    auto a = run_position(policy, L, seq);
    log_softmax_inplace(a.logits);
    for (std::size_t v = 0; v < a.logits.size(); ++v) {
      seq.push_back(static_cast<Token>(v));
      logp_prefix[depth + 1] = logp_prefix[depth] + a.logits[v];
      rec(depth + 1);
      seq.pop_back();
    }
  };
  rec(0);
}

double exact_kl(const Policy& a, const Policy& b, std::span<const Token> prompt, std::size_t horizon,
                std::uint64_t cap) {
  TICKETLAB_REQUIRE(a.arch == b.arch, "exact_kl: architectures differ");
  enumeration_size(a.arch, horizon, cap);
  check_tokens(a.arch, prompt);
  // KL of sequence distributions = sum over prefixes of P_a(prefix) * KL(next_a || next_b).
  std::vector<Token> seq(prompt.begin(), prompt.end());
  const Layout la_layout(a);
  const Layout lb_layout(b);
  double kl = 0.0;
  std::function<void(std::size_t, double)> rec = [&](std::size_t depth, double logp) {
    if (depth == horizon) return;
    auto la = run_position(a, la_layout, seq);
    auto lb = run_position(b, lb_layout, seq);
    log_softmax_inplace(la.logits);
    log_softmax_inplace(lb.logits);
    double node_kl = 0.0;
    for (std::size_t v = 0; v < la.logits.size(); ++v) {
      const double pa = std::exp(la.logits[v]);
      if (pa > 0.0) node_kl += pa * (la.logits[v] - lb.logits[v]);
    }
    kl += std::exp(logp) * node_kl;
    for (std::size_t v = 0; v < la.logits.size(); ++v) {
      seq.push_back(static_cast<Token>(v));
      rec(depth + 1, logp + la.logits[v]);
      seq.pop_back();
    }
  };
  rec(0, 0.0);
  return std::max(kl, 0.0);
}

double total_variation(const Policy& a, const Policy& b, std::span<const Token> prompt, std::size_t horizon,
                       std::uint64_t cap) {
  TICKETLAB_REQUIRE(a.arch == b.arch, "total_variation: architectures differ");
  std::vector<double> pa;
  std::vector<double> pb;
  enumerate_responses(a, prompt, horizon, [&](std::span<const Token>, double p) { pa.push_back(p); }, cap);
  enumerate_responses(b, prompt, horizon, [&](std::span<const Token>, double p) { pb.push_back(p); }, cap);
  double tv = 0.0;
  for (std::size_t i = 0; i < pa.size(); ++i) tv += std::abs(pa[i] - pb[i]);
  return 0.5 * tv;
}

// ---------------------------------------------------------------------------

std::vector<double> flat_score(const Policy& policy, std::span<const Token> prompt, std::span<const Token> response,
                               const std::optional<std::vector<std::size_t>>& subset) {
  const auto g = logprob_and_grad(policy, prompt, response).grad.flatten();
  if (!subset) return g;
  std::vector<double> out;
  out.reserve(subset->size());
  for (auto i : *subset) out.push_back(g[i]);
  return out;
}

FisherEstimate estimate_fisher(const Policy& policy, std::span<const TokenList> prompts, const FisherOptions& options) {
  TICKETLAB_REQUIRE(!prompts.empty(), "estimate_fisher: no prompts");
  const std::size_t total = policy.params.total_params();
  if (options.subset)
    for (auto i : *options.subset) TICKETLAB_REQUIRE(i < total, "estimate_fisher: subset index out of range");
  const std::size_t d = options.subset ? options.subset->size() : total;

  FisherEstimate est;
  est.mode = options.mode;
  est.matrix = numerics::Matrix(d, d);
  auto add_outer = [&](const std::vector<double>& g, double weight) {
    for (std::size_t i = 0; i < d; ++i) {
      const double gi = weight * g[i];
      if (gi == 0.0) continue;
      auto row = est.matrix.row(i);
      for (std::size_t j = 0; j < d; ++j) row[j] += gi * g[j];
    }
  };

  const double per_prompt = 1.0 / static_cast<double>(prompts.size());
  if (options.mode == FisherMode::exact_enumeration) {
    enumeration_size(policy.arch, options.horizon, options.cap);
    for (const auto& prompt : prompts) {
      enumerate_responses(
          policy, prompt, options.horizon,
          [&](std::span<const Token> y, double p) {
            if (p == 0.0) return;
            add_outer(flat_score(policy, prompt, y, options.subset), per_prompt * p);
            ++est.sample_count;
          },
          options.cap);
    }
  } else {
    TICKETLAB_REQUIRE(options.samples > 0, "estimate_fisher: monte_carlo needs samples > 0");
    numerics::SeedStream root(options.seed, "fisher/mc");
    const double w = per_prompt / static_cast<double>(options.samples);
    for (std::size_t pi = 0; pi < prompts.size(); ++pi) {
      auto stream = root.split(pi);
      for (std::size_t s = 0; s < options.samples; ++s) {
        const auto y = sample_response(policy, prompts[pi], {options.horizon, 1.0, false}, stream);
        add_outer(flat_score(policy, prompts[pi], y, options.subset), w);
        ++est.sample_count;
      }
    }
  }
  // Symmetrize away rounding asymmetry.
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = i + 1; j < d; ++j) {
      const double m = 0.5 * (est.matrix(i, j) + est.matrix(j, i));
      est.matrix(i, j) = m;
      est.matrix(j, i) = m;
    }
  return est;
}

Policy perturbed(const Policy& policy, std::span<const double> delta) {
  Policy out = policy;
  auto flat = out.params.flatten();
  TICKETLAB_REQUIRE(delta.size() == flat.size(), "perturbed: delta length mismatch");
  for (std::size_t i = 0; i < flat.size(); ++i) flat[i] += delta[i];
  out.params.assign_flat(flat);
  return out;
}

}  // namespace ticketlab::policy
