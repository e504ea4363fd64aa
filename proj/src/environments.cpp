// SPDX-License-Identifier: Apache-2.0

#include "ticketlab/environments.hpp"

#include <algorithm>
#include <charconv>
#include <sstream>

#include "ticketlab/errors.hpp"

namespace ticketlab::env {

void TaskSpec::validate() const {
  if (task_id == "sort_k") {
    if (sort_k < 1 || sort_k > num_symbols) throw ConfigError("sort_k: need 1 <= k <= num_symbols");
  } else if (task_id == "mod_add") {
    if (modulus < 2) throw ConfigError("mod_add: modulus must be >= 2");
  } else if (task_id == "copy") {
    if (copy_len < 1 || num_symbols < 1) throw ConfigError("copy: need copy_len >= 1 and num_symbols >= 1");
  } else {
    throw ConfigError("unknown task_id '" + task_id + "'");
  }
}

std::size_t TaskSpec::vocab_needed() const {
  validate();
  if (task_id == "mod_add") return vocab::kFirstSymbol + modulus + 1;
  return vocab::kFirstSymbol + num_symbols;
}

std::size_t TaskSpec::prompt_len() const {
  validate();
  if (task_id == "sort_k") return sort_k + 1;
  if (task_id == "mod_add") return 6;
  return copy_len + 1;
}

std::size_t TaskSpec::answer_len() const {
  validate();
  if (task_id == "sort_k") return sort_k;
  if (task_id == "mod_add") return 1;
  return copy_len;
}

TaskInstance gen_instance(const TaskSpec& spec, numerics::SeedStream stream) {
  spec.validate();
  TaskInstance inst;
  inst.task_id = spec.task_id;
  inst.instance_seed = stream.key();
  if (spec.task_id == "sort_k") {
    auto picked = numerics::random_subset(spec.num_symbols, spec.sort_k, stream.split("pick"));
    auto order = stream.split("order");
    for (std::size_t i = picked.size(); i > 1; --i) std::swap(picked[i - 1], picked[order.below(i)]);
    for (auto s : picked) inst.prompt.push_back(vocab::symbol(static_cast<std::uint32_t>(s)));
    inst.prompt.push_back(vocab::kSep);
    std::sort(picked.begin(), picked.end());
    for (auto s : picked) inst.canonical_answer.push_back(vocab::symbol(static_cast<std::uint32_t>(s)));
  } else if (spec.task_id == "mod_add") {
    const auto a = static_cast<std::uint32_t>(stream.below(spec.modulus));
    const auto b = static_cast<std::uint32_t>(stream.below(spec.modulus));
    inst.prompt = {vocab::symbol(a), vocab::kPlus, vocab::symbol(b), vocab::kMod, vocab::symbol(spec.modulus),
                   vocab::kSep};
    inst.canonical_answer = {vocab::symbol((a + b) % spec.modulus)};
  } else {
    for (std::uint32_t i = 0; i < spec.copy_len; ++i)
      inst.prompt.push_back(vocab::symbol(static_cast<std::uint32_t>(stream.below(spec.num_symbols))));
    inst.canonical_answer.assign(inst.prompt.begin(), inst.prompt.end());
    inst.prompt.push_back(vocab::kSep);
  }
  return inst;
}

double verify(const TaskInstance& instance, std::span<const Token> response) {
  std::size_t n = response.size();
  while (n > 0 && (response[n - 1] == vocab::kEos || response[n - 1] == vocab::kPad)) --n;
  if (n == 0 || n != instance.canonical_answer.size()) return 0.0;
  return std::equal(response.begin(), response.begin() + static_cast<std::ptrdiff_t>(n),
                    instance.canonical_answer.begin())
             ? 1.0
             : 0.0;
}

std::vector<TaskInstance> make_instance_set(const TaskSpec& spec, std::uint64_t seed, std::string_view label,
                                            std::size_t count) {
  numerics::SeedStream root(seed, std::string(label));
  std::vector<TaskInstance> out;
  out.reserve(count);
  for (std::size_t i = 0; i < count; ++i) out.push_back(gen_instance(spec, root.split(i)));
  return out;
}

namespace {

void append_ids(std::string& out, std::span<const Token> ids) {
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(ids[i]);
  }
}

TokenList parse_ids(std::string_view s) {
  TokenList out;
  while (!s.empty()) {
    const auto comma = s.find(',');
    const auto part = s.substr(0, comma);
    Token v = 0;
    auto [p, ec] = std::from_chars(part.data(), part.data() + part.size(), v);
    if (ec != std::errc() || p != part.data() + part.size()) throw ConfigError("bad token id '" + std::string(part) + "'");
    out.push_back(v);
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

}  // namespace

std::string format_instance_set(std::span<const TaskInstance> instances) {
  std::string out;
  for (const auto& inst : instances) {
    out += inst.task_id;
    out += '\t';
    out += std::to_string(inst.instance_seed);
    out += '\t';
    append_ids(out, inst.prompt);
    out += '\t';
    append_ids(out, inst.canonical_answer);
    out += '\n';
  }
  return out;
}

std::vector<TaskInstance> parse_instance_set(std::string_view text) {
  std::vector<TaskInstance> out;
  std::istringstream in{std::string(text)};
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::vector<std::string_view> fields;
    std::string_view rest = line;
    for (;;) {
      const auto tab = rest.find('\t');
      fields.push_back(rest.substr(0, tab));
      if (tab == std::string_view::npos) break;
      rest.remove_prefix(tab + 1);
    }
    if (fields.size() != 4) throw ConfigError("instance line needs 4 tab-separated fields");
    TaskInstance inst;
    inst.task_id = std::string(fields[0]);
    auto [p, ec] = std::from_chars(fields[1].data(), fields[1].data() + fields[1].size(), inst.instance_seed);
    if (ec != std::errc()) throw ConfigError("bad instance seed");
    inst.prompt = parse_ids(fields[2]);
    inst.canonical_answer = parse_ids(fields[3]);
    out.push_back(std::move(inst));
  }
  return out;
}

}  // namespace ticketlab::env
