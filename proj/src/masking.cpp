// SPDX-License-Identifier: Apache-2.0

#include "ticketlab/masking.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <sstream>

#include "ticketlab/errors.hpp"
#include "ticketlab/seed_stream.hpp"

namespace ticketlab::masking {

std::string_view to_string(MaskKind kind) {
  switch (kind) {
    case MaskKind::random: return "random";
    case MaskKind::first_layer: return "first_layer";
    case MaskKind::last_layer: return "last_layer";
  }
  return "random";
}

MaskKind parse_mask_kind(std::string_view s) {
  if (s == "random") return MaskKind::random;
  if (s == "first_layer") return MaskKind::first_layer;
  if (s == "last_layer") return MaskKind::last_layer;
  throw ConfigError("unknown mask kind '" + std::string(s) + "'");
}

std::size_t MaskSet::total_active() const {
  std::size_t n = 0;
  for (const auto& t : per_tensor) n += t.active.size();
  return n;
}

const TensorMask* MaskSet::find(std::string_view name) const {
  for (const auto& t : per_tensor)
    if (t.name == name) return &t;
  return nullptr;
}

std::size_t keep_count(double sparsity, std::size_t n) {
  TICKETLAB_REQUIRE(sparsity >= 0.0 && sparsity < 1.0, "sparsity must lie in [0, 1)");
  const double x = (1.0 - sparsity) * static_cast<double>(n);
  const auto k = static_cast<std::size_t>(std::floor(x + 1e-9 * std::max(1.0, x)));
  return std::min(k, n);
}

MaskSet sample_masks(const ParamSet& params, double sparsity, std::uint64_t mask_seed, bool min_one) {
  MaskSet out;
  out.sparsity = sparsity;
  out.mask_seed = mask_seed;
  out.kind = MaskKind::random;
  for (const auto& t : params.tensors()) {
    std::size_t k = keep_count(sparsity, t.size());
    if (min_one && k == 0 && t.size() > 0) k = 1;
    numerics::SeedStream stream(mask_seed, "mask/" + t.name);
    out.per_tensor.push_back(TensorMask{t.name, numerics::random_subset(t.size(), k, stream), t.size()});
  }
  return out;
}

MaskSet dense_mask(const ParamSet& params) { return sample_masks(params, 0.0, 0); }

std::vector<std::string> block_layers(const ParamSet& params) {
  std::vector<std::string> out;
  for (const auto& t : params.tensors()) {
    auto layer = layer_of(t.name);
    if (layer == "embed" || layer == "head") continue;
    if (std::find(out.begin(), out.end(), layer) == out.end()) out.push_back(std::move(layer));
  }
  return out;
}

std::size_t layer_size(const ParamSet& params, std::string_view layer) {
  std::size_t n = 0;
  for (const auto& t : params.tensors())
    if (layer_of(t.name) == layer) n += t.size();
  return n;
}

MaskSet structured_mask(const ParamSet& params, MaskKind mode, std::size_t budget, std::uint64_t mask_seed) {
  TICKETLAB_REQUIRE(mode != MaskKind::random, "structured_mask: mode must be first_layer or last_layer");
  const auto layers = block_layers(params);
  if (layers.empty()) throw ConfigError("structured_mask: parameter set has no block layers");
  const std::string target = mode == MaskKind::first_layer ? layers.front() : layers.back();
  const std::size_t n = layer_size(params, target);
  if (budget > n)
    throw ConfigError("structured_mask: budget " + std::to_string(budget) + " exceeds layer '" + target +
                      "' size " + std::to_string(n));

  // Uniform over the layer's concatenated coordinates, then split per tensor.
  const auto picked = numerics::random_subset(n, budget, numerics::SeedStream(mask_seed, "structured/" + target));
  MaskSet out;
  out.mask_seed = mask_seed;
  out.kind = mode;
  out.sparsity = 1.0 - static_cast<double>(budget) / static_cast<double>(params.total_params());
  std::size_t layer_offset = 0;
  auto it = picked.begin();
  for (const auto& t : params.tensors()) {
    TensorMask tm{t.name, {}, t.size()};
    if (layer_of(t.name) == target) {
      while (it != picked.end() && *it < layer_offset + t.size()) tm.active.push_back(*it++ - layer_offset);
      layer_offset += t.size();
    }
    out.per_tensor.push_back(std::move(tm));
  }
  return out;
}

void bind(MaskSet& masks, const ParamSet& params) {
  TICKETLAB_REQUIRE(masks.per_tensor.size() == params.tensors().size(), "mask/parameter tensor count mismatch");
  for (std::size_t i = 0; i < masks.per_tensor.size(); ++i) {
    auto& m = masks.per_tensor[i];
    const auto& t = params.tensors()[i];
    TICKETLAB_REQUIRE(m.name == t.name, "mask tensor '" + m.name + "' does not match parameter '" + t.name + "'");
    TICKETLAB_REQUIRE(m.tensor_size == 0 || m.tensor_size == t.size(), "mask size mismatch for '" + m.name + "'");
    for (std::size_t j = 0; j < m.active.size(); ++j) {
      TICKETLAB_REQUIRE(m.active[j] < t.size(), "mask index out of bounds in '" + m.name + "'");
      TICKETLAB_REQUIRE(j == 0 || m.active[j - 1] < m.active[j], "mask indices not strictly increasing in '" + m.name + "'");
    }
    m.tensor_size = t.size();
  }
}

void apply_mask_inplace(ParamSet& grads, const MaskSet& masks) {
  auto tensors = grads.tensors();
  TICKETLAB_REQUIRE(masks.per_tensor.size() == tensors.size(), "apply_mask: tensor count mismatch");
  std::vector<double> kept;
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& t = tensors[i];
    const auto& m = masks.per_tensor[i];
    TICKETLAB_REQUIRE(m.name == t.name, "apply_mask: tensor name mismatch '" + m.name + "' vs '" + t.name + "'");
    TICKETLAB_REQUIRE(m.tensor_size == 0 || m.tensor_size == t.size(), "apply_mask: shape mismatch for '" + t.name + "'");
    if (m.active.size() == t.size()) continue;
    kept.resize(m.active.size());
    for (std::size_t j = 0; j < m.active.size(); ++j) {
      TICKETLAB_REQUIRE(m.active[j] < t.size(), "apply_mask: index out of bounds");
      kept[j] = t.values[m.active[j]];
    }
    std::fill(t.values.begin(), t.values.end(), 0.0);
    for (std::size_t j = 0; j < m.active.size(); ++j) t.values[m.active[j]] = kept[j];
  }
}

ParamSet apply_mask(const ParamSet& grads, const MaskSet& masks) {
  ParamSet out = grads;
  apply_mask_inplace(out, masks);
  return out;
}

std::vector<std::size_t> flat_active(const ParamSet& params, const MaskSet& masks) {
  const auto offsets = params.offsets();
  TICKETLAB_REQUIRE(masks.per_tensor.size() == offsets.size(), "flat_active: tensor count mismatch");
  std::vector<std::size_t> out;
  out.reserve(masks.total_active());
  for (std::size_t i = 0; i < offsets.size(); ++i)
    for (auto j : masks.per_tensor[i].active) out.push_back(offsets[i] + static_cast<std::size_t>(j));
  return out;
}

// ---------------------------------------------------------------------------

namespace {

std::string format_double(double x) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, r.ptr);
}

}  // namespace

std::string format_mask_file(const MaskSet& masks, std::string_view extra_header) {
  std::string out = "# ticketlab-mask sparsity=" + format_double(masks.sparsity) +
                    " mask_seed=" + std::to_string(masks.mask_seed) + " kind=" + std::string(to_string(masks.kind));
  if (!extra_header.empty()) {
    out += ' ';
    out += extra_header;
  }
  out += '\n';
  for (const auto& t : masks.per_tensor) {
    out += t.name;
    out += '\t';
    out += std::to_string(t.active.size());
    out += '\t';
    for (std::size_t j = 0; j < t.active.size(); ++j) {
      if (j) out += ',';
      out += std::to_string(t.active[j]);
    }
    out += '\n';
  }
  return out;
}

MaskSet parse_mask_file(std::string_view text) {
  MaskSet out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    if (line[0] == '#') {
      std::istringstream h(line.substr(1));
      std::string kv;
      while (h >> kv) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos) continue;
        const std::string key = kv.substr(0, eq);
        const std::string val = kv.substr(eq + 1);
        if (key == "sparsity") {
          std::from_chars(val.data(), val.data() + val.size(), out.sparsity);
        } else if (key == "mask_seed") {
          std::from_chars(val.data(), val.data() + val.size(), out.mask_seed);
        } else if (key == "kind") {
          out.kind = parse_mask_kind(val);
        }
      }
      continue;
    }
    const auto t1 = line.find('\t');
    const auto t2 = t1 == std::string::npos ? std::string::npos : line.find('\t', t1 + 1);
    if (t2 == std::string::npos) throw ConfigError("mask file: expected name<TAB>k<TAB>indices");
    TensorMask tm;
    tm.name = line.substr(0, t1);
    std::size_t k = 0;
    const std::string kstr = line.substr(t1 + 1, t2 - t1 - 1);
    auto [kp, kec] = std::from_chars(kstr.data(), kstr.data() + kstr.size(), k);
    if (kec != std::errc() || kp != kstr.data() + kstr.size()) throw ConfigError("mask file: bad count for " + tm.name);
    std::string_view idx = std::string_view(line).substr(t2 + 1);
    tm.active.reserve(k);
    while (!idx.empty()) {
      const auto comma = idx.find(',');
      const auto part = idx.substr(0, comma);
      std::uint64_t v = 0;
      auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
      if (ec != std::errc() || p != part.data() + part.size()) throw ConfigError("mask file: bad index in " + tm.name);
      tm.active.push_back(v);
      if (comma == std::string_view::npos) break;
      idx.remove_prefix(comma + 1);
    }
    if (tm.active.size() != k) throw ConfigError("mask file: count does not match indices for " + tm.name);
    out.per_tensor.push_back(std::move(tm));
  }
  return out;
}

// ---------------------------------------------------------------------------

template <typename Moment>
BasicSparseOptState<Moment> make_sparse_state(const MaskSet& masks, const AdamWHyper& hyper) {
  BasicSparseOptState<Moment> s;
  s.hyper = hyper;
  for (const auto& t : masks.per_tensor) {
    typename BasicSparseOptState<Moment>::Slot slot;
    slot.name = t.name;
    slot.index = t.active;
    slot.m.assign(t.active.size(), Moment{0});
    slot.v.assign(t.active.size(), Moment{0});
    s.per_tensor.push_back(std::move(slot));
  }
  return s;
}

template <typename Moment>
void masked_adamw_step(ParamSet& params, const ParamSet& masked_grads, BasicSparseOptState<Moment>& state,
                       const MaskSet& masks) {
  TICKETLAB_REQUIRE(params.same_layout(masked_grads), "masked_adamw_step: gradient layout mismatch");
  auto tensors = params.tensors();
  TICKETLAB_REQUIRE(state.per_tensor.size() == tensors.size() && masks.per_tensor.size() == tensors.size(),
                    "masked_adamw_step: state/mask not aligned with parameters");
  for (std::size_t i = 0; i < tensors.size(); ++i) {
    const auto& slot = state.per_tensor[i];
    TICKETLAB_REQUIRE(slot.name == tensors[i].name && slot.index == masks.per_tensor[i].active &&
                          slot.m.size() == slot.index.size() && slot.v.size() == slot.index.size(),
                      "masked_adamw_step: optimizer state misaligned for '" + tensors[i].name + "'");
  }

  const auto& h = state.hyper;
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(h.beta1, t);
  const double bc2 = 1.0 - std::pow(h.beta2, t);
  const double decay = 1.0 - h.lr * h.weight_decay;

  for (std::size_t i = 0; i < tensors.size(); ++i) {
    auto& theta = tensors[i].values;
    const auto& g = masked_grads.tensors()[i].values;
    auto& slot = state.per_tensor[i];
    for (std::size_t j = 0; j < slot.index.size(); ++j) {
      const auto idx = slot.index[j];
      const double gj = g[idx];
      const double m = h.beta1 * static_cast<double>(slot.m[j]) + (1.0 - h.beta1) * gj;
      const double v = h.beta2 * static_cast<double>(slot.v[j]) + (1.0 - h.beta2) * gj * gj;
      slot.m[j] = static_cast<Moment>(m);
      slot.v[j] = static_cast<Moment>(v);
      const double mhat = static_cast<double>(slot.m[j]) / bc1;
      const double vhat = static_cast<double>(slot.v[j]) / bc2;
      theta[idx] = theta[idx] * decay - h.lr * mhat / (std::sqrt(vhat) + h.eps);
    }
  }
}

template BasicSparseOptState<double> make_sparse_state<double>(const MaskSet&, const AdamWHyper&);
template BasicSparseOptState<float> make_sparse_state<float>(const MaskSet&, const AdamWHyper&);
template void masked_adamw_step<double>(ParamSet&, const ParamSet&, BasicSparseOptState<double>&, const MaskSet&);
template void masked_adamw_step<float>(ParamSet&, const ParamSet&, BasicSparseOptState<float>&, const MaskSet&);

std::size_t memory_footprint(const MaskSet& masks, const StateLayout& layout) {
  return masks.total_active() * (layout.moments * layout.moment_bytes + layout.index_bytes);
}

}  // namespace ticketlab::masking
