#pragma once

// Tabular softmax policy over a finite vocabulary of step templates.
//
// A policy row is keyed by a canonical context key derived from the task
// state a prefix leads to. The environment that defines those states and
// renders an action into step text is supplied separately (`ToyEnvironment`),
// so the same policy machinery serves any small task family.

#include <psr/core.hpp>
#include <psr/error.hpp>
#include <psr/rng.hpp>

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <map>
#include <numeric>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

namespace psr {

/// Maps prefixes to context keys and actions to step text.
class ToyEnvironment {
 public:
  virtual ~ToyEnvironment() = default;

  virtual std::vector<std::string> vocab() const = 0;
  virtual std::string context_key(const StepPrefix& prefix) const = 0;
  /// Body of the step that `action` produces after `prefix`.
  virtual std::string render_action(const StepPrefix& prefix, std::size_t action) const = 0;

  /// Inverse of `render_action` at a fixed prefix; nullopt for foreign text.
  std::optional<std::size_t> classify(const StepPrefix& prefix, const Step& step) const {
    const auto n = vocab().size();
    const auto body = trim(step.body());
    for (std::size_t a = 0; a < n; ++a)
      if (render_action(prefix, a) == body) return a;
    return std::nullopt;
  }
};

inline std::vector<double> log_softmax(std::span<const double> logits) {
  const double m = *std::max_element(logits.begin(), logits.end());
  double acc = 0.0;
  for (double x : logits) acc += std::exp(x - m);
  const double lse = m + std::log(acc);
  std::vector<double> out(logits.size());
  for (std::size_t k = 0; k < logits.size(); ++k) out[k] = logits[k] - lse;
  return out;
}

inline std::vector<double> softmax(std::span<const double> logits) {
  auto out = log_softmax(logits);
  for (auto& x : out) x = std::exp(x);
  return out;
}

class ToyPolicy {
 public:
  using Table = std::map<std::string, std::vector<double>>;

  ToyPolicy() = default;
  explicit ToyPolicy(std::vector<std::string> vocab, int version = 1)
      : vocab_(std::move(vocab)), zeros_(vocab_.size(), 0.0), version_(version) {
    if (vocab_.empty()) throw InvalidArgument("policy vocabulary is empty");
  }

  const std::vector<std::string>& vocab() const noexcept { return vocab_; }
  std::size_t arity() const noexcept { return vocab_.size(); }
  int version() const noexcept { return version_; }
  void set_version(int v) { version_ = v; }

  const Table& rows() const noexcept { return rows_; }
  bool has_row(const std::string& key) const { return rows_.count(key) != 0; }

  /// Logits for `key`; unseen keys read as all zeros without being inserted.
  std::span<const double> row(const std::string& key) const {
    auto it = rows_.find(key);
    return it == rows_.end() ? std::span<const double>(zeros_) : std::span<const double>(it->second);
  }

  std::vector<double>& mutable_row(const std::string& key) {
    validate_key(key);
    return rows_.try_emplace(key, zeros_).first->second;
  }

  void set_row(const std::string& key, std::vector<double> logits) {
    if (logits.size() != arity())
      throw InvalidArgument("row '" + key + "' has arity " + std::to_string(logits.size()) +
                            ", vocabulary has " + std::to_string(arity()));
    for (double x : logits)
      if (!std::isfinite(x)) throw NonFiniteInput("row '" + key + "' has a non-finite logit");
    validate_key(key);
    rows_[key] = std::move(logits);
  }

  friend bool operator==(const ToyPolicy& a, const ToyPolicy& b) {
    return a.vocab_ == b.vocab_ && a.version_ == b.version_ && a.rows_ == b.rows_;
  }

 private:
  static void validate_key(const std::string& key) {
    if (key.empty() || key.find_first_of("\t\n\r") != std::string::npos)
      throw InvalidArgument("context key must be non-empty and free of tabs/newlines");
  }

  std::vector<std::string> vocab_;
  std::vector<double> zeros_;
  Table rows_;
  int version_ = 1;
};

/// Frozen copy of a policy taken at the start of an optimization round.
class ReferencePolicy {
 public:
  static ReferencePolicy freeze(const ToyPolicy& p) { return ReferencePolicy(p); }

  const ToyPolicy& policy() const noexcept { return frozen_; }
  int version() const noexcept { return frozen_.version(); }

 private:
  explicit ReferencePolicy(ToyPolicy p) : frozen_(std::move(p)) {}
  ToyPolicy frozen_;
};

inline double toy_step_logprob(const ToyPolicy& policy, const std::string& context_key,
                               std::size_t action_id) {
  if (action_id >= policy.arity())
    throw UnknownAction("action " + std::to_string(action_id) + " outside vocabulary of size " +
                        std::to_string(policy.arity()));
  return log_softmax(policy.row(context_key))[action_id];
}

inline double toy_step_logprob(const ReferencePolicy& ref, const std::string& context_key,
                               std::size_t action_id) {
  return toy_step_logprob(ref.policy(), context_key, action_id);
}

/// Tempered, nucleus-truncated sampling distribution over actions.
/// Temperature 0 collapses onto the lowest-index argmax.
inline std::vector<double> sampling_distribution(std::span<const double> logits,
                                                 const SamplingParams& params) {
  params.validate();
  std::vector<double> probs(logits.size(), 0.0);
  if (params.temperature == 0.0) {
    const auto best = std::max_element(logits.begin(), logits.end()) - logits.begin();
    probs[static_cast<std::size_t>(best)] = 1.0;
    return probs;
  }
  std::vector<double> scaled(logits.begin(), logits.end());
  for (auto& x : scaled) x /= params.temperature;
  probs = softmax(scaled);
  if (params.top_p < 1.0) {
    std::vector<std::size_t> order(probs.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return probs[a] > probs[b]; });
    double cum = 0.0;
    std::size_t keep = 0;
    while (keep < order.size() && cum < params.top_p - 1e-12) cum += probs[order[keep++]];
    for (std::size_t k = keep; k < order.size(); ++k) probs[order[k]] = 0.0;
    for (auto& p : probs) p /= cum;
  }
  return probs;
}

struct SampledStep {
  Step step;
  std::size_t action;
  double logprob;  // under the untempered policy
};

inline std::size_t draw_index(std::span<const double> probs, double u) {
  double cum = 0.0;
  std::size_t last_nonzero = 0;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (probs[k] <= 0.0) continue;
    cum += probs[k];
    last_nonzero = k;
    if (u < cum) return k;
  }
  return last_nonzero;
}

inline SampledStep toy_sample_step(const ToyPolicy& policy, const ToyEnvironment& env,
                                   const StepPrefix& prefix, const SamplingParams& params,
                                   std::uint64_t seed) {
  const auto key = env.context_key(prefix);
  const auto logits = policy.row(key);
  const auto probs = sampling_distribution(logits, params);
  const auto u = rng::to_unit(rng::derive(seed, render_steps(prefix.steps) + "\n" + prefix.question.id));
  const auto action = draw_index(probs, u);
  auto step = Step::make(prefix.next_index(), env.render_action(prefix, action));
  return {std::move(step), action, log_softmax(logits)[action]};
}

// ---------------------------------------------------------------------------
// Snapshot file
//
//   psr.policy.v1
//   version <int>
//   vocab <n>
//   <name>            (n lines)
//   rows <m>
//   <key>\t<x_1> <x_2> ... <x_n>   (m lines, shortest round-trip decimals)
// ---------------------------------------------------------------------------

inline constexpr std::string_view kPolicySnapshotMagic = "psr.policy.v1";

inline std::string format_double(double x) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, x);
  return std::string(buf, ptr);
}

inline double parse_double(std::string_view s) {
  double x = 0.0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), x);
  if (ec != std::errc() || ptr != s.data() + s.size())
    throw InvalidArgument("not a number: '" + std::string(s) + "'");
  return x;
}

inline std::string serialize_policy(const ToyPolicy& p) {
  std::ostringstream out;
  out << kPolicySnapshotMagic << '\n';
  out << "version " << p.version() << '\n';
  out << "vocab " << p.arity() << '\n';
  for (const auto& v : p.vocab()) out << v << '\n';
  out << "rows " << p.rows().size() << '\n';
  for (const auto& [key, row] : p.rows()) {
    out << key << '\t';
    for (std::size_t k = 0; k < row.size(); ++k) out << (k ? " " : "") << format_double(row[k]);
    out << '\n';
  }
  return out.str();
}

inline ToyPolicy deserialize_policy(std::string_view text) {
  auto lines = split_lines(text);
  std::size_t at = 0;
  auto next = [&]() -> const std::string& {
    if (at >= lines.size()) throw MalformedLine(at + 1, "unexpected end of policy snapshot");
    return lines[at++];
  };
  auto expect_field = [&](std::string_view field) {
    const auto& line = next();
    if (line.rfind(std::string(field) + " ", 0) != 0)
      throw MalformedLine(at, "expected '" + std::string(field) + " <n>'");
    try {
      return std::stoll(line.substr(field.size() + 1));
    } catch (const std::exception&) {
      throw MalformedLine(at, "bad integer in '" + line + "'");
    }
  };
  if (next() != kPolicySnapshotMagic) throw SchemaMismatch("not a psr.policy.v1 snapshot");
  const auto version = static_cast<int>(expect_field("version"));
  const auto n_vocab = expect_field("vocab");
  std::vector<std::string> vocab;
  for (long long k = 0; k < n_vocab; ++k) vocab.push_back(next());
  ToyPolicy p(std::move(vocab), version);
  const auto n_rows = expect_field("rows");
  for (long long r = 0; r < n_rows; ++r) {
    const auto& line = next();
    const auto tab = line.find('\t');
    if (tab == std::string::npos) throw MalformedLine(at, "row lacks a tab separator");
    std::vector<double> row;
    std::istringstream fields(line.substr(tab + 1));
    std::string tok;
    while (fields >> tok) {
      try {
        row.push_back(parse_double(tok));
      } catch (const Error& e) {
        throw MalformedLine(at, e.what());
      }
    }
    p.set_row(line.substr(0, tab), std::move(row));
  }
  return p;
}

inline void write_policy_snapshot(const std::string& path, const ToyPolicy& p) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out << serialize_policy(p);
  if (!out) throw IoError("write to '" + path + "' failed");
}

inline ToyPolicy read_policy_snapshot(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize_policy(buf.str());
}

}  // namespace psr
