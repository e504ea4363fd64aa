// SPDX-License-Identifier: Apache-2.0

#include "ticketlab/seed_stream.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_map>

#include "ticketlab/errors.hpp"

namespace ticketlab::numerics {

std::uint64_t fnv1a64(std::string_view bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

SeedStream::SeedStream(std::uint64_t root_seed, std::string label)
    : root_seed_(root_seed), label_(std::move(label)) {
  key_ = splitmix64(root_seed_ ^ splitmix64(fnv1a64(label_)));
}

SeedStream SeedStream::split(std::string_view child) const {
  std::string label = label_;
  label += '/';
  label += child;
  return SeedStream(root_seed_, std::move(label));
}

SeedStream SeedStream::split(std::uint64_t child) const { return split(std::to_string(child)); }

std::uint64_t SeedStream::next_u64() {
  // Draw i = mix(key + (i+1) * golden), i.e. SplitMix64 seeded at key.
  const std::uint64_t i = counter_++;
  return splitmix64(key_ + i * 0x9e3779b97f4a7c15ULL);
}

double SeedStream::uniform() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

std::uint64_t SeedStream::below(std::uint64_t bound) {
  TICKETLAB_REQUIRE(bound > 0, "SeedStream::below: bound must be positive");
  std::uint64_t x = next_u64();
  __uint128_t m = static_cast<__uint128_t>(x) * bound;
  auto low = static_cast<std::uint64_t>(m);
  if (low < bound) {
    const std::uint64_t threshold = (0 - bound) % bound;
    while (low < threshold) {
      x = next_u64();
      m = static_cast<__uint128_t>(x) * bound;
      low = static_cast<std::uint64_t>(m);
    }
  }
  return static_cast<std::uint64_t>(m >> 64);
}

double SeedStream::normal() {
  // Box-Muller, one output per pair of uniforms; u1 in (0, 1].
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::vector<std::uint64_t> random_subset(std::uint64_t n, std::uint64_t k, SeedStream stream) {
  TICKETLAB_REQUIRE(k <= n, "random_subset: k > n");
  std::vector<std::uint64_t> out;
  out.reserve(k);
  if (k == n) {
    for (std::uint64_t i = 0; i < n; ++i) out.push_back(i);
    return out;
  }
  // swapped[i] holds the value at slot i of the virtual permutation when it
  // differs from i.
  std::unordered_map<std::uint64_t, std::uint64_t> swapped;
  swapped.reserve(2 * k);
  auto value_at = [&](std::uint64_t i) {
    auto it = swapped.find(i);
    return it == swapped.end() ? i : it->second;
  };
  for (std::uint64_t i = 0; i < k; ++i) {
    const std::uint64_t j = i + stream.below(n - i);
    const std::uint64_t vi = value_at(i);
    const std::uint64_t vj = value_at(j);
    out.push_back(vj);
    swapped[j] = vi;
  }
  std::sort(out.begin(), out.end());
  return out;
}

}  // namespace ticketlab::numerics
