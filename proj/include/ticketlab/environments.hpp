// SPDX-License-Identifier: Apache-2.0
//
// Synthetic tasks with exact-match verifiers.
//
//   sort_k   prompt: s_1 .. s_k SEP        answer: the k symbols sorted ascending
//   mod_add  prompt: a PLUS b MOD m SEP    answer: (a + b) mod m
//   copy     prompt: s_1 .. s_n SEP        answer: s_1 .. s_n

#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "ticketlab/seed_stream.hpp"
#include "ticketlab/vocab.hpp"

namespace ticketlab::env {

struct TaskSpec {
  std::string task_id = "sort_k";
  std::uint32_t sort_k = 3;        ///< symbols per sort_k prompt (distinct)
  std::uint32_t num_symbols = 8;   ///< alphabet size for sort_k / copy
  std::uint32_t modulus = 5;       ///< mod_add modulus; operands drawn from [0, modulus)
  std::uint32_t copy_len = 3;

  void validate() const;
  /// Smallest vocabulary that covers every token this task can emit.
  std::size_t vocab_needed() const;
  std::size_t prompt_len() const;
  std::size_t answer_len() const;
  friend bool operator==(const TaskSpec&, const TaskSpec&) = default;
};

struct TaskInstance {
  TokenList prompt;
  TokenList canonical_answer;
  std::string task_id;
  std::uint64_t instance_seed = 0;
  friend bool operator==(const TaskInstance&, const TaskInstance&) = default;
};

/// Throws ConfigError for an unknown task id.
TaskInstance gen_instance(const TaskSpec& spec, numerics::SeedStream stream);

/// 1.0 iff the response, with trailing EOS/PAD stripped, equals the answer.
double verify(const TaskInstance& instance, std::span<const Token> response);

/// `count` instances keyed by (seed, index).
std::vector<TaskInstance> make_instance_set(const TaskSpec& spec, std::uint64_t seed, std::string_view label,
                                            std::size_t count);

/// One instance per line: task_id TAB seed TAB prompt ids TAB answer ids (ids comma-separated).
/// The parser skips '#' comment lines.
std::string format_instance_set(std::span<const TaskInstance> instances);
std::vector<TaskInstance> parse_instance_set(std::string_view text);

}  // namespace ticketlab::env
