// SPDX-License-Identifier: Apache-2.0
//
// Fixed sparse parameter masks ("tickets") and an AdamW whose moments exist
// only for the active coordinates.

#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "ticketlab/param_set.hpp"

namespace ticketlab::masking {

struct TensorMask {
  std::string name;
  std::vector<std::uint64_t> active;  ///< strictly increasing flat indices into the tensor
  std::size_t tensor_size = 0;        ///< 0 when unknown (e.g. parsed from a file without binding)
  friend bool operator==(const TensorMask&, const TensorMask&) = default;
};

enum class MaskKind { random, first_layer, last_layer };
std::string_view to_string(MaskKind kind);
MaskKind parse_mask_kind(std::string_view s);

struct MaskSet {
  std::vector<TensorMask> per_tensor;  ///< one entry per non-alias tensor, declared order
  double sparsity = 0.0;
  std::uint64_t mask_seed = 0;
  MaskKind kind = MaskKind::random;

  std::size_t total_active() const;
  const TensorMask* find(std::string_view name) const;
  friend bool operator==(const MaskSet&, const MaskSet&) = default;
};

/// floor(keep * n), absorbing representation error of keep = 1 - s
/// (1 - 0.9 is 0.0999...98 in binary).
std::size_t keep_count(double sparsity, std::size_t n);

/// Per tensor, floor((1-s)|theta|) indices uniformly without replacement, each
/// tensor drawn from its own (mask_seed, name) stream. Aliases get no mask.
/// With min_one, tensors that would get 0 keep one entry.
MaskSet sample_masks(const ParamSet& params, double sparsity, std::uint64_t mask_seed, bool min_one = false);

/// Every coordinate active.
MaskSet dense_mask(const ParamSet& params);

/// Ordered layer groups (name prefix before '.') that count as network
/// layers for structured baselines: everything except the embedding and head.
std::vector<std::string> block_layers(const ParamSet& params);
std::size_t layer_size(const ParamSet& params, std::string_view layer);

/// `budget` coordinates from the first or last block layer, uniform within
/// the layer when budget is smaller than it. ConfigError if budget > layer size.
MaskSet structured_mask(const ParamSet& params, MaskKind mode, std::size_t budget, std::uint64_t mask_seed);

/// Checks names/sizes against `params` and fills tensor_size. ContractViolation on mismatch.
void bind(MaskSet& masks, const ParamSet& params);

/// Inactive entries become exactly 0; active entries are untouched.
ParamSet apply_mask(const ParamSet& grads, const MaskSet& masks);
void apply_mask_inplace(ParamSet& grads, const MaskSet& masks);

/// Flattened coordinates (declared order) of all active entries.
std::vector<std::size_t> flat_active(const ParamSet& params, const MaskSet& masks);

/// Text form: one "name<TAB>k<TAB>i,j,..." line per tensor after a '#' header
/// carrying sparsity, seed, kind and optional extra key=value fields.
std::string format_mask_file(const MaskSet& masks, std::string_view extra_header = {});
MaskSet parse_mask_file(std::string_view text);

// ---------------------------------------------------------------------------

struct AdamWHyper {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.01;
};

/// Moments for active coordinates only, with a private copy of the indices.
template <typename Moment>
struct BasicSparseOptState {
  struct Slot {
    std::string name;
    std::vector<std::uint64_t> index;
    std::vector<Moment> m;
    std::vector<Moment> v;
  };
  std::vector<Slot> per_tensor;
  std::uint64_t step_count = 0;
  AdamWHyper hyper;

  /// Bytes held by indices and moments.
  std::size_t payload_bytes() const {
    std::size_t b = 0;
    for (const auto& s : per_tensor)
      b += s.index.size() * sizeof(std::uint64_t) + (s.m.size() + s.v.size()) * sizeof(Moment);
    return b;
  }
};

using SparseOptState = BasicSparseOptState<double>;
using SparseOptStateF32 = BasicSparseOptState<float>;

template <typename Moment>
BasicSparseOptState<Moment> make_sparse_state(const MaskSet& masks, const AdamWHyper& hyper);

/// AdamW with decoupled weight decay, restricted to active entries. Inactive
/// entries of `params` are never written.
template <typename Moment>
void masked_adamw_step(ParamSet& params, const ParamSet& masked_grads, BasicSparseOptState<Moment>& state,
                       const MaskSet& masks);

struct StateLayout {
  std::size_t moment_bytes = 8;
  std::size_t moments = 2;
  std::size_t index_bytes = 8;

  template <typename Moment>
  static StateLayout of() {
    return {sizeof(Moment), 2, sizeof(std::uint64_t)};
  }
  /// Dense optimizer state: no index array.
  static StateLayout dense(std::size_t moment_bytes) { return {moment_bytes, 2, 0}; }
};

/// sum over active entries of (moments * moment_bytes + index_bytes).
std::size_t memory_footprint(const MaskSet& masks, const StateLayout& layout);

}  // namespace ticketlab::masking
