// SPDX-License-Identifier: Apache-2.0

#include "ticketlab/config.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <functional>
#include <set>
#include <sstream>
#include <vector>

#include "ticketlab/errors.hpp"
#include "ticketlab/seed_stream.hpp"

namespace ticketlab {

std::string format_double(double x) {
  char buf[64];
  auto r = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, r.ptr);
}

namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(std::string_view key, const std::string& v) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError("bad value '" + v + "' for " + std::string(key));
  if constexpr (std::is_floating_point_v<T>) {
    if (!std::isfinite(out)) throw ConfigError("non-finite value for " + std::string(key));
  }
  return out;
}

bool parse_bool(std::string_view key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  throw ConfigError("bad boolean '" + v + "' for " + std::string(key));
}

std::string join_sizes(const std::vector<std::size_t>& v) {
  std::string out;
  for (std::size_t i = 0; i < v.size(); ++i) {
    if (i) out += ',';
    out += std::to_string(v[i]);
  }
  return out;
}

std::vector<std::size_t> parse_sizes(std::string_view key, const std::string& v) {
  std::vector<std::size_t> out;
  if (v.empty()) return out;
  std::string_view s = v;
  while (true) {
    const auto comma = s.find(',');
    out.push_back(parse_number<std::size_t>(key, trim(s.substr(0, comma))));
    if (comma == std::string_view::npos) break;
    s.remove_prefix(comma + 1);
  }
  return out;
}

struct Field {
  std::string key;
  std::function<std::string(const RunConfig&)> get;
  std::function<void(RunConfig&, const std::string&)> set;
};

template <typename T>
Field num_field(std::string key, T RunConfig::*member) {
  return {key, [member](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return format_double(c.*member);
            else return std::to_string(c.*member);
          },
          [member, key](RunConfig& c, const std::string& v) { c.*member = parse_number<T>(key, v); }};
}

template <typename Sub, typename T>
Field sub_field(std::string key, Sub RunConfig::*sub, T Sub::*member) {
  return {key, [sub, member](const RunConfig& c) {
            if constexpr (std::is_floating_point_v<T>) return format_double(c.*sub.*member);
            else return std::to_string(c.*sub.*member);
          },
          [sub, member, key](RunConfig& c, const std::string& v) { c.*sub.*member = parse_number<T>(key, v); }};
}

Field bool_field(std::string key, bool RunConfig::*member) {
  return {key, [member](const RunConfig& c) { return std::string(c.*member ? "true" : "false"); },
          [member, key](RunConfig& c, const std::string& v) { c.*member = parse_bool(key, v); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    using env::TaskSpec;
    using grpo::GrpoConfig;
    using policy::PolicyArch;
    std::vector<Field> f;
    f.push_back({"task.id", [](const RunConfig& c) { return c.task.task_id; },
                 [](RunConfig& c, const std::string& v) { c.task.task_id = v; }});
    f.push_back(sub_field("task.sort_k", &RunConfig::task, &TaskSpec::sort_k));
    f.push_back(sub_field("task.num_symbols", &RunConfig::task, &TaskSpec::num_symbols));
    f.push_back(sub_field("task.modulus", &RunConfig::task, &TaskSpec::modulus));
    f.push_back(sub_field("task.copy_len", &RunConfig::task, &TaskSpec::copy_len));

    f.push_back(sub_field("model.vocab_size", &RunConfig::model, &PolicyArch::vocab_size));
    f.push_back(sub_field("model.context_len", &RunConfig::model, &PolicyArch::context_len));
    f.push_back(sub_field("model.embedding_dim", &RunConfig::model, &PolicyArch::embedding_dim));
    f.push_back({"model.hidden_dims", [](const RunConfig& c) { return join_sizes(c.model.hidden_dims); },
                 [](RunConfig& c, const std::string& v) { c.model.hidden_dims = parse_sizes("model.hidden_dims", v); }});

    f.push_back(sub_field("init.seed", &RunConfig::init, &InitConfig::seed));
    f.push_back(sub_field("init.embed_scale", &RunConfig::init, &InitConfig::embed_scale));
    f.push_back(sub_field("init.gain", &RunConfig::init, &InitConfig::gain));

    f.push_back(sub_field("pretrain.steps", &RunConfig::pretrain, &PretrainConfig::steps));
    f.push_back(sub_field("pretrain.batch", &RunConfig::pretrain, &PretrainConfig::batch));
    f.push_back(sub_field("pretrain.lr", &RunConfig::pretrain, &PretrainConfig::lr));
    f.push_back(sub_field("pretrain.seed", &RunConfig::pretrain, &PretrainConfig::seed));

    f.push_back(sub_field("grpo.group_size", &RunConfig::grpo, &GrpoConfig::group_size));
    f.push_back(sub_field("grpo.clip_eps", &RunConfig::grpo, &GrpoConfig::clip_eps));
    f.push_back(sub_field("grpo.beta", &RunConfig::grpo, &GrpoConfig::beta));
    f.push_back(sub_field("grpo.lr", &RunConfig::grpo, &GrpoConfig::lr));
    f.push_back(sub_field("grpo.batch_prompts", &RunConfig::grpo, &GrpoConfig::batch_prompts));
    f.push_back(sub_field("grpo.max_tokens", &RunConfig::grpo, &GrpoConfig::max_tokens));
    f.push_back(sub_field("grpo.temperature", &RunConfig::grpo, &GrpoConfig::temperature));
    f.push_back(sub_field("grpo.weight_decay", &RunConfig::grpo, &GrpoConfig::weight_decay));
    f.push_back(sub_field("grpo.grad_clip_norm", &RunConfig::grpo, &GrpoConfig::grad_clip_norm));
    f.push_back(sub_field("grpo.steps", &RunConfig::grpo, &GrpoConfig::steps));
    f.push_back({"grpo.aggregation",
                 [](const RunConfig& c) {
                   return std::string(c.grpo.aggregation == grpo::LossAggregation::token ? "token" : "sequence");
                 },
                 [](RunConfig& c, const std::string& v) {
                   if (v == "token") c.grpo.aggregation = grpo::LossAggregation::token;
                   else if (v == "sequence") c.grpo.aggregation = grpo::LossAggregation::sequence;
                   else throw ConfigError("grpo.aggregation must be token or sequence");
                 }});

    f.push_back(num_field("run.sparsity", &RunConfig::sparsity));
    f.push_back(num_field("run.mask_seed", &RunConfig::mask_seed));
    f.push_back({"run.mask_mode", [](const RunConfig& c) { return std::string(masking::to_string(c.mask_mode)); },
                 [](RunConfig& c, const std::string& v) { c.mask_mode = masking::parse_mask_kind(v); }});
    f.push_back(num_field("run.training_seed", &RunConfig::training_seed));

    f.push_back(num_field("eval.interval", &RunConfig::eval_interval));
    f.push_back(num_field("eval.set_size", &RunConfig::eval_set_size));
    f.push_back(num_field("eval.temperature", &RunConfig::eval_temperature));
    f.push_back(num_field("eval.seed", &RunConfig::eval_seed));

    f.push_back({"output.dir", [](const RunConfig& c) { return c.output_dir; },
                 [](RunConfig& c, const std::string& v) { c.output_dir = v; }});
    f.push_back(bool_field("log.gradients", &RunConfig::log_gradients));
    f.push_back(num_field("log.stride", &RunConfig::log_stride));
    f.push_back(bool_field("log.post_mask", &RunConfig::log_post_mask));
    return f;
  }();
  return table;
}

const Field& field_for(std::string_view key) {
  for (const auto& f : fields())
    if (f.key == key) return f;
  throw ConfigError("unknown config key '" + std::string(key) + "'");
}

}  // namespace

RunConfig::RunConfig() {
  model.vocab_size = 0;
  model.context_len = 8;
  model.embedding_dim = 16;
  model.hidden_dims = {128, 128};
}

void RunConfig::validate() const {
  task.validate();
  resolved_arch().validate();
  grpo.validate();
  if (!(sparsity >= 0.0 && sparsity < 1.0)) throw ConfigError("run.sparsity must lie in [0, 1)");
  if (eval_interval < 1) throw ConfigError("eval.interval must be >= 1");
  if (eval_set_size < 1) throw ConfigError("eval.set_size must be >= 1");
  if (!(eval_temperature > 0.0)) throw ConfigError("eval.temperature must be > 0");
  if (log_stride < 1) throw ConfigError("log.stride must be >= 1");
  if (pretrain.steps > 0 && (pretrain.batch < 1 || !(pretrain.lr > 0.0)))
    throw ConfigError("pretrain.batch must be >= 1 and pretrain.lr > 0");
  if (grpo.max_tokens < task.answer_len()) throw ConfigError("grpo.max_tokens is shorter than the task answer");
  if (model.context_len < task.prompt_len())
    throw ConfigError("model.context_len must cover the prompt");
}

policy::PolicyArch RunConfig::resolved_arch() const {
  auto a = model;
  const auto need = task.vocab_needed();
  if (a.vocab_size == 0) a.vocab_size = need;
  if (a.vocab_size < need)
    throw ConfigError("model.vocab_size " + std::to_string(a.vocab_size) + " is smaller than the task needs (" +
                      std::to_string(need) + ")");
  return a;
}

std::string to_config_text(const RunConfig& cfg) {
  std::string out;
  for (const auto& f : fields()) {
    out += f.key;
    out += '=';
    out += f.get(cfg);
    out += '\n';
  }
  return out;
}

void apply_override(RunConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("expected key=value, got '" + std::string(assignment) + "'");
  const auto key = trim(assignment.substr(0, eq));
  field_for(key).set(cfg, trim(assignment.substr(eq + 1)));
}

RunConfig parse_config_text(std::string_view text) {
  RunConfig cfg;
  std::set<std::string> seen;
  std::istringstream in{std::string(text)};
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    const auto key = trim(std::string_view(t).substr(0, eq));
    if (!seen.insert(key).second) throw ConfigError("duplicate config key '" + key + "'");
    field_for(key).set(cfg, trim(std::string_view(t).substr(eq + 1)));
  }
  return cfg;
}

RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string config_hash(const RunConfig& cfg) {
  const auto h = numerics::fnv1a64(to_config_text(cfg));
  static const char* digits = "0123456789abcdef";
  std::string out(16, '0');
  for (int i = 0; i < 16; ++i) out[15 - i] = digits[(h >> (4 * i)) & 0xF];
  return out;
}

}  // namespace ticketlab
