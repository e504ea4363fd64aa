// SPDX-License-Identifier: Apache-2.0
//
// Named parameter tensors in declared order. Tied aliases (an output head
// reusing the embedding) resolve to their source tensor's buffer, so gradient
// contributions through either name land in one place and an update of the
// source is visible through the alias.

#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace ticketlab {

struct Tensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::vector<double> values;

  std::size_t size() const { return values.size(); }
  friend bool operator==(const Tensor&, const Tensor&) = default;
};

struct TiedPair {
  std::string source;
  std::string alias;
  friend bool operator==(const TiedPair&, const TiedPair&) = default;
};

class ParamSet {
 public:
  /// Appends a zero-filled tensor. Names must be unique across tensors and aliases.
  Tensor& add(std::string name, std::vector<std::size_t> shape);
  void tie(std::string source, std::string alias);

  std::span<const Tensor> tensors() const { return tensors_; }
  std::span<Tensor> tensors() { return tensors_; }
  std::span<const TiedPair> tied_pairs() const { return tied_; }

  bool has(std::string_view name) const;
  bool is_alias(std::string_view name) const;
  /// Index into tensors(), resolving aliases to their source.
  std::size_t index_of(std::string_view name) const;

  const Tensor& tensor(std::string_view name) const { return tensors_[index_of(name)]; }
  std::span<double> values(std::string_view name) { return tensors_[index_of(name)].values; }
  std::span<const double> values(std::string_view name) const { return tensors_[index_of(name)].values; }

  /// Sum of sizes over non-alias tensors.
  std::size_t total_params() const;
  /// Start of each tensor in the flattened coordinate space.
  std::vector<std::size_t> offsets() const;

  std::vector<double> flatten() const;
  void assign_flat(std::span<const double> flat);

  /// Same names, shapes and ties; every value zero.
  ParamSet zeros_like() const;
  bool same_layout(const ParamSet& other) const;

  void fill(double value);
  /// this += scale * other (layouts must match).
  void axpy(double scale, const ParamSet& other);
  bool all_finite() const;
  double norm() const;

  friend bool operator==(const ParamSet&, const ParamSet&) = default;

 private:
  std::vector<Tensor> tensors_;
  std::vector<TiedPair> tied_;
};

/// Layer group of a tensor: its name up to the first '.'.
std::string layer_of(std::string_view tensor_name);

/// Binary checkpoint: magic, metadata string, (name, shape) table, tied pairs,
/// then little-endian float64 payloads in declared order.
std::vector<std::uint8_t> encode_checkpoint(const ParamSet& params, std::string_view metadata = {});
ParamSet decode_checkpoint(std::span<const std::uint8_t> bytes, std::string* metadata = nullptr);
void save_checkpoint(const std::filesystem::path& path, const ParamSet& params, std::string_view metadata = {});
ParamSet load_checkpoint(const std::filesystem::path& path, std::string* metadata = nullptr);

}  // namespace ticketlab
