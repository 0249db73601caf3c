#pragma once

// Flat declarative config for the command-line tools.
//
//   # comment
//   seed = 7
//   search.width = 4
//   remote.base_url = ${PSR_ENDPOINT}
//
// One `key = value` per line. `${NAME}` expands from the environment; an
// unset variable is an error. Later assignments win, and flags passed as
// `--set key=value` are applied after the file.

#include <psr/datasets.hpp>
#include <psr/error.hpp>
#include <psr/evalkit.hpp>
#include <psr/iteration.hpp>
#include <psr/remote.hpp>

#include <charconv>
#include <cstdlib>
#include <functional>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace psr {

enum class BackendKind { toy, remote };

struct CliConfig {
  IterationConfig iteration;
  EFTBuildConfig eft;
  std::string eft_questions = "synth:11:50:3";
  BackendKind backend = BackendKind::toy;
  RemoteBackendConfig remote;

  CliConfig() {
    iteration.eval_suite.benchmarks = {"synth:900:200:3"};
    iteration.eval_suite.judge_test = "synth:901:200:3";
  }

  void validate() const {
    try {
      iteration.validate();
      eft.validate();
      if (backend == BackendKind::remote) remote.validate();
    } catch (const InvalidArgument& e) {
      throw ConfigError(e.what());
    }
  }
};

namespace cfgparse {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

inline std::string interpolate(std::string_view value) {
  std::string out;
  for (std::size_t k = 0; k < value.size();) {
    if (value.substr(k, 2) == "${") {
      const auto close = value.find('}', k + 2);
      if (close == std::string_view::npos) throw ConfigError("unterminated ${ in '" + std::string(value) + "'");
      const std::string name(value.substr(k + 2, close - k - 2));
      const char* v = std::getenv(name.c_str());
      if (!v) throw ConfigError("environment variable " + name + " is not set");
      out += v;
      k = close + 1;
    } else {
      out += value[k++];
    }
  }
  return out;
}

template <class T>
T integer(const std::string& key, const std::string& v) {
  T out{};
  auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size())
    throw ConfigError(key + " expects an integer, got '" + v + "'");
  return out;
}

inline double real(const std::string& key, const std::string& v) {
  char* end = nullptr;
  const double x = std::strtod(v.c_str(), &end);
  if (v.empty() || end != v.c_str() + v.size()) throw ConfigError(key + " expects a number, got '" + v + "'");
  return x;
}

inline bool boolean(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError(key + " expects true or false, got '" + v + "'");
}

inline std::vector<std::string> list(const std::string& v) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= v.size()) {
    const auto comma = v.find(',', start);
    const auto item = trim(std::string_view(v).substr(start, comma == std::string::npos ? std::string::npos : comma - start));
    if (!item.empty()) out.push_back(item);
    if (comma == std::string::npos) break;
    start = comma + 1;
  }
  return out;
}

template <class F>
auto wrap(const std::string& key, F&& f) {
  try {
    return f();
  } catch (const InvalidArgument& e) {
    throw ConfigError(key + ": " + e.what());
  }
}

using Setter = std::function<void(CliConfig&, const std::string& key, const std::string& value)>;

inline const std::map<std::string, Setter, std::less<>>& setters() {
  static const std::map<std::string, Setter, std::less<>> table = [] {
    std::map<std::string, Setter, std::less<>> t;
    auto i = [](auto member) {
      return [member](CliConfig& c, const std::string& k, const std::string& v) {
        auto& field = member(c);
        field = integer<std::remove_reference_t<decltype(field)>>(k, v);
      };
    };
    auto d = [](auto member) {
      return [member](CliConfig& c, const std::string& k, const std::string& v) { member(c) = real(k, v); };
    };
    auto s = [](auto member) {
      return [member](CliConfig& c, const std::string&, const std::string& v) { member(c) = v; };
    };

    t["seed"] = [](CliConfig& c, const std::string& k, const std::string& v) {
      const auto seed = integer<std::uint64_t>(k, v);
      c.iteration.master_seed = seed;
      c.iteration.init.seed = seed;
      c.iteration.eval_suite.seed = seed;
      c.eft.seed = seed;
    };
    t["run_dir"] = s([](CliConfig& c) -> auto& { return c.iteration.run_dir; });
    t["parallelism"] = [](CliConfig& c, const std::string& k, const std::string& v) {
      const auto p = integer<std::size_t>(k, v);
      c.iteration.parallelism = c.iteration.search.parallelism = c.iteration.eval_suite.parallelism = p;
      c.eft.parallelism = c.remote.parallelism = p;
    };
    t["backend"] = [](CliConfig& c, const std::string& k, const std::string& v) {
      if (v == "toy") c.backend = BackendKind::toy;
      else if (v == "remote") c.backend = BackendKind::remote;
      else throw ConfigError(k + " must be toy or remote, got '" + v + "'");
    };
    t["iterations"] = i([](CliConfig& c) -> auto& { return c.iteration.n_iterations; });
    t["questions_per_iteration"] = [](CliConfig& c, const std::string& k, const std::string& v) {
      c.iteration.questions_per_iteration.clear();
      for (const auto& item : list(v)) c.iteration.questions_per_iteration.push_back(integer<int>(k, item));
    };
    t["pool"] = s([](CliConfig& c) -> auto& { return c.iteration.question_pool; });

    t["init.correct_mass"] = d([](CliConfig& c) -> auto& { return c.iteration.init.correct_mass; });
    t["init.spread"] = d([](CliConfig& c) -> auto& { return c.iteration.init.spread; });
    t["init.seed"] = i([](CliConfig& c) -> auto& { return c.iteration.init.seed; });
    t["judge.q"] = [](CliConfig& c, const std::string& k, const std::string& v) {
      c.iteration.judge.accuracy_q = real(k, v);
      wrap(k, [&] { c.iteration.judge.validate(); });
    };
    t["judge.unparseable"] = [](CliConfig& c, const std::string& k, const std::string& v) {
      UnparseablePolicy p;
      if (v == "discard") p = UnparseablePolicy::discard;
      else if (v == "count_as_loss") p = UnparseablePolicy::count_as_loss;
      else throw ConfigError(k + " must be discard or count_as_loss, got '" + v + "'");
      c.iteration.search.judge.unparseable = c.iteration.eval_suite.judge.unparseable = c.eft.judge.unparseable = p;
    };

    t["search.width"] = i([](CliConfig& c) -> auto& { return c.iteration.search.width_w; });
    t["search.max_steps"] = i([](CliConfig& c) -> auto& { return c.iteration.search.max_steps; });
    t["search.max_rollbacks"] = i([](CliConfig& c) -> auto& { return c.iteration.search.max_rollbacks; });
    t["search.temperature"] = d([](CliConfig& c) -> auto& { return c.iteration.search.sampling.temperature; });
    t["search.top_p"] = d([](CliConfig& c) -> auto& { return c.iteration.search.sampling.top_p; });
    t["search.max_tokens"] = i([](CliConfig& c) -> auto& { return c.iteration.search.sampling.max_tokens; });
    t["search.comparison"] = [](CliConfig& c, const std::string& k, const std::string& v) {
      c.iteration.search.comparison_mode = wrap(k, [&] { return comparison_mode_from_string(v); });
    };

    t["dpo.beta"] = d([](CliConfig& c) -> auto& { return c.iteration.dpo.beta; });
    t["dpo.lr"] = d([](CliConfig& c) -> auto& { return c.iteration.dpo.learning_rate; });
    t["dpo.epochs"] = i([](CliConfig& c) -> auto& { return c.iteration.dpo.epochs; });
    t["dpo.batch_size"] = i([](CliConfig& c) -> auto& { return c.iteration.dpo.batch_size; });

    t["eval.enabled"] = [](CliConfig& c, const std::string& k, const std::string& v) { c.iteration.eval_enabled = boolean(k, v); };
    t["eval.benchmarks"] = [](CliConfig& c, const std::string&, const std::string& v) { c.iteration.eval_suite.benchmarks = list(v); };
    t["eval.judge_test"] = s([](CliConfig& c) -> auto& { return c.iteration.eval_suite.judge_test; });
    t["eval.mode"] = [](CliConfig& c, const std::string& k, const std::string& v) {
      c.iteration.eval_suite.mode = wrap(k, [&] { return eval_mode_from_string(v); });
    };
    t["eval.tts_n"] = i([](CliConfig& c) -> auto& { return c.iteration.eval_suite.tts_n; });
    t["eval.temperature"] = d([](CliConfig& c) -> auto& { return c.iteration.eval_suite.tts_sampling.temperature; });
    t["eval.top_p"] = d([](CliConfig& c) -> auto& { return c.iteration.eval_suite.tts_sampling.top_p; });
    t["eval.max_steps"] = i([](CliConfig& c) -> auto& { return c.iteration.eval_suite.max_steps; });
    t["eval.max_tokens"] = i([](CliConfig& c) -> auto& { return c.iteration.eval_suite.max_tokens; });
    t["eval.answer"] = [](CliConfig& c, const std::string& k, const std::string& v) {
      c.iteration.eval_suite.answer_kind = wrap(k, [&] { return answer_kind_from_string(v); });
    };

    t["eft.questions"] = s([](CliConfig& c) -> auto& { return c.eft_questions; });
    t["eft.depth"] = i([](CliConfig& c) -> auto& { return c.eft.simulation_depth; });
    t["eft.iterations"] = i([](CliConfig& c) -> auto& { return c.eft.num_iterations; });
    t["eft.children"] = i([](CliConfig& c) -> auto& { return c.eft.children_per_node; });
    t["eft.temperature"] = d([](CliConfig& c) -> auto& { return c.eft.sampling.temperature; });
    t["eft.top_p"] = d([](CliConfig& c) -> auto& { return c.eft.sampling.top_p; });

    t["remote.base_url"] = s([](CliConfig& c) -> auto& { return c.remote.base_url; });
    t["remote.model"] = s([](CliConfig& c) -> auto& { return c.remote.model_name; });
    t["remote.api_key_env"] = s([](CliConfig& c) -> auto& { return c.remote.api_key_env_var; });
    t["remote.timeout_ms"] = i([](CliConfig& c) -> auto& { return c.remote.timeout_ms; });
    t["remote.max_retries"] = i([](CliConfig& c) -> auto& { return c.remote.max_retries; });
    t["remote.backoff_ms"] = i([](CliConfig& c) -> auto& { return c.remote.backoff_base_ms; });
    t["remote.backoff_cap_ms"] = i([](CliConfig& c) -> auto& { return c.remote.backoff_cap_ms; });
    t["remote.system_prompt"] = s([](CliConfig& c) -> auto& { return c.remote.system_prompt; });
    return t;
  }();
  return table;
}

}  // namespace cfgparse

/// Applies one assignment; unknown keys and ill-typed values are ConfigError.
inline void apply_setting(CliConfig& cfg, const std::string& key, const std::string& raw_value) {
  const auto& table = cfgparse::setters();
  const auto it = table.find(key);
  if (it == table.end()) throw ConfigError("unknown config key '" + key + "'");
  it->second(cfg, key, cfgparse::interpolate(raw_value));
}

/// "key=value" as given to --set.
inline void apply_override(CliConfig& cfg, std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(assignment) + "' lacks '='");
  apply_setting(cfg, cfgparse::trim(assignment.substr(0, eq)), cfgparse::trim(assignment.substr(eq + 1)));
}

inline void apply_config_text(CliConfig& cfg, std::string_view text, const std::string& origin = "config") {
  std::size_t line_no = 0;
  std::size_t start = 0;
  while (start < text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    auto line = cfgparse::trim(text.substr(start, end - start));
    start = end + 1;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(origin + ":" + std::to_string(line_no) + ": expected key = value");
    try {
      apply_setting(cfg, cfgparse::trim(std::string_view(line).substr(0, eq)), cfgparse::trim(std::string_view(line).substr(eq + 1)));
    } catch (const ConfigError& e) {
      throw ConfigError(origin + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
}

inline CliConfig load_config(const std::string& path) {
  CliConfig cfg;
  std::string text;
  try {
    text = read_text_file(path);
  } catch (const IoError& e) {
    throw ConfigError(e.what());
  }
  apply_config_text(cfg, text, path);
  return cfg;
}

/// Keys accepted by apply_setting, for --help output.
inline std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : cfgparse::setters()) keys.push_back(k);
  return keys;
}

}  // namespace psr
