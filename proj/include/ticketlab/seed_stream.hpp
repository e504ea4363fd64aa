// SPDX-License-Identifier: Apache-2.0
//
// Counter-based deterministic randomness. A stream is keyed by
// (root_seed, label); draw i is a pure function of (key, i), so splitting a
// stream never depends on how many values were drawn before the split.
// Distributions are implemented here (not via <random> distributions) so the
// draw sequences are identical across standard libraries.

#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace ticketlab::numerics {

std::uint64_t fnv1a64(std::string_view bytes);
std::uint64_t splitmix64(std::uint64_t x);

class SeedStream {
 public:
  SeedStream(std::uint64_t root_seed, std::string label);

  std::uint64_t root_seed() const { return root_seed_; }
  const std::string& label() const { return label_; }
  std::uint64_t key() const { return key_; }
  std::uint64_t position() const { return counter_; }

  /// Independent child stream labelled "<label>/<child>".
  SeedStream split(std::string_view child) const;
  SeedStream split(std::uint64_t child) const;

  std::uint64_t next_u64();
  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Uniform integer in [0, bound); bound > 0. Lemire's rejection method.
  std::uint64_t below(std::uint64_t bound);
  double normal();

  // UniformRandomBitGenerator, for use with std::shuffle and friends.
  using result_type = std::uint64_t;
  static constexpr result_type min() { return 0; }
  static constexpr result_type max() { return ~result_type{0}; }
  result_type operator()() { return next_u64(); }

 private:
  std::uint64_t root_seed_;
  std::string label_;
  std::uint64_t key_;
  std::uint64_t counter_ = 0;
};

/// k distinct indices from [0, n), sorted ascending, uniform over all size-k
/// subsets. Partial Fisher-Yates over an implicit identity permutation.
std::vector<std::uint64_t> random_subset(std::uint64_t n, std::uint64_t k, SeedStream stream);

}  // namespace ticketlab::numerics
