#pragma once

// Domain types shared across the pipeline and the "Step n: " text format.

#include <psr/error.hpp>

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstddef>
#include <functional>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace psr {

// ---------------------------------------------------------------------------
// String helpers
// ---------------------------------------------------------------------------

inline std::string_view trim_view(std::string_view s) {
  auto is_space = [](unsigned char c) { return std::isspace(c) != 0; };
  while (!s.empty() && is_space(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && is_space(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

inline std::string trim(std::string_view s) { return std::string(trim_view(s)); }

/// Collapses every whitespace run to one space and trims the ends.
inline std::string normalize_whitespace(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  bool pending_space = false;
  for (char c : s) {
    if (std::isspace(static_cast<unsigned char>(c))) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

inline std::vector<std::string> split_lines(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start <= text.size()) {
    auto end = text.find('\n', start);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(start, end - start);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    lines.emplace_back(line);
    start = end + 1;
  }
  return lines;
}

inline std::size_t count_whitespace_tokens(std::string_view s) {
  std::size_t n = 0;
  bool in_token = false;
  for (char c : s) {
    const bool space = std::isspace(static_cast<unsigned char>(c)) != 0;
    if (!space && !in_token) ++n;
    in_token = !space;
  }
  return n;
}

// ---------------------------------------------------------------------------
// Domain types
// ---------------------------------------------------------------------------

enum class QuestionSource { synthetic, external };

inline std::string to_string(QuestionSource s) {
  return s == QuestionSource::synthetic ? "synthetic" : "external";
}

inline QuestionSource question_source_from_string(std::string_view s) {
  if (s == "synthetic") return QuestionSource::synthetic;
  if (s == "external") return QuestionSource::external;
  throw InvalidArgument("unknown question source '" + std::string(s) + "'");
}

struct Question {
  std::string id;
  std::string text;
  std::optional<std::string> gold_answer;
  QuestionSource source = QuestionSource::external;

  friend bool operator==(const Question&, const Question&) = default;
};

/// One reasoning step. Constructed only through `Step::make`, which keeps
/// `raw == "Step " + index + ": " + body`.
class Step {
 public:
  static Step make(int index, std::string body) {
    if (index < 1) throw MalformedStep("step index must be positive, got " + std::to_string(index));
    if (trim_view(body).empty()) throw MalformedStep("step " + std::to_string(index) + " has an empty body");
    if (body.find('\n') != std::string::npos)
      throw MalformedStep("step " + std::to_string(index) + " body spans several lines");
    return Step(index, std::move(body));
  }

  int index() const noexcept { return index_; }
  const std::string& body() const noexcept { return body_; }
  std::string raw() const { return "Step " + std::to_string(index_) + ": " + body_; }

  /// Same body renumbered; used when a candidate is re-homed at another level.
  Step with_index(int index) const { return make(index, body_); }

  friend bool operator==(const Step&, const Step&) = default;

 private:
  Step(int index, std::string body) : index_(index), body_(std::move(body)) {}
  int index_;
  std::string body_;
};

inline void check_contiguous(const std::vector<Step>& steps) {
  for (std::size_t k = 0; k < steps.size(); ++k) {
    if (steps[k].index() != static_cast<int>(k + 1)) {
      throw NonContiguousIndex("expected Step " + std::to_string(k + 1) + ", found Step " +
                               std::to_string(steps[k].index()));
    }
  }
}

/// Decides whether a step concludes a solution and, if so, extracts its answer.
struct TerminalDetector {
  std::string name;
  std::function<std::optional<std::string>(const Step&)> answer_of;

  bool is_terminal(const Step& s) const { return answer_of(s).has_value(); }
};

/// Text after the last "Answer:" marker, trimmed. Empty answers do not count.
inline std::optional<std::string> answer_marker_value(std::string_view text) {
  constexpr std::string_view kMarker = "Answer:";
  const auto pos = text.rfind(kMarker);
  if (pos == std::string_view::npos) return std::nullopt;
  auto value = trim(text.substr(pos + kMarker.size()));
  if (value.empty()) return std::nullopt;
  return value;
}

/// Content of the last balanced \boxed{...} in `text`.
inline std::optional<std::string> boxed_value(std::string_view text) {
  constexpr std::string_view kMarker = "\\boxed{";
  const auto pos = text.rfind(kMarker);
  if (pos == std::string_view::npos) return std::nullopt;
  int depth = 1;
  const std::size_t open = pos + kMarker.size();
  for (std::size_t k = open; k < text.size(); ++k) {
    if (text[k] == '{') ++depth;
    if (text[k] == '}' && --depth == 0) return trim(text.substr(open, k - open));
  }
  return std::nullopt;
}

inline TerminalDetector answer_line_detector() {
  return {"answer_line", [](const Step& s) { return answer_marker_value(s.body()); }};
}

inline TerminalDetector boxed_detector() {
  return {"boxed", [](const Step& s) { return boxed_value(s.body()); }};
}

inline TerminalDetector never_terminal_detector() {
  return {"never", [](const Step&) -> std::optional<std::string> { return std::nullopt; }};
}

struct Solution {
  std::string question_id;
  std::vector<Step> steps;
  bool terminal = false;
  std::optional<std::string> answer;

  /// Builds a solution, deriving `terminal` and `answer` from the last step.
  static Solution make(std::string question_id, std::vector<Step> steps,
                       const TerminalDetector& detector) {
    check_contiguous(steps);
    Solution s{std::move(question_id), std::move(steps), false, std::nullopt};
    if (!s.steps.empty()) {
      s.answer = detector.answer_of(s.steps.back());
      s.terminal = s.answer.has_value();
    }
    return s;
  }

  friend bool operator==(const Solution&, const Solution&) = default;
};

struct StepPrefix {
  Question question;
  std::vector<Step> steps;

  StepPrefix() = default;
  StepPrefix(Question q, std::vector<Step> s) : question(std::move(q)), steps(std::move(s)) {
    check_contiguous(steps);
  }

  int next_index() const { return static_cast<int>(steps.size()) + 1; }

  StepPrefix extended(const Step& next) const {
    auto s = steps;
    s.push_back(next);
    return StepPrefix(question, std::move(s));
  }

  friend bool operator==(const StepPrefix&, const StepPrefix&) = default;
};

struct SamplingParams {
  double temperature = 0.5;
  double top_p = 0.95;
  int max_tokens = 256;

  void validate() const {
    if (!(temperature >= 0.0)) throw InvalidArgument("temperature must be non-negative");
    if (!(top_p > 0.0 && top_p <= 1.0)) throw InvalidArgument("top_p must lie in (0, 1]");
    if (max_tokens < 1) throw InvalidArgument("max_tokens must be positive");
  }

  friend bool operator==(const SamplingParams&, const SamplingParams&) = default;
};

struct StepStats {
  std::optional<double> mean_step_num;
  std::optional<double> mean_step_len;
  std::size_t n_solutions = 0;
};

// ---------------------------------------------------------------------------
// Step-format parsing and rendering
// ---------------------------------------------------------------------------

/// Splits "Step <k>: <body>" into (k, body); nullopt when the prefix is absent.
inline std::optional<std::pair<int, std::string>> split_step_line(std::string_view line) {
  constexpr std::string_view kHead = "Step ";
  if (line.substr(0, kHead.size()) != kHead) return std::nullopt;
  std::size_t pos = kHead.size();
  std::size_t digits_end = pos;
  while (digits_end < line.size() && std::isdigit(static_cast<unsigned char>(line[digits_end])))
    ++digits_end;
  if (digits_end == pos) return std::nullopt;
  if (line.substr(digits_end, 2) != ": ") return std::nullopt;
  int index = 0;
  auto [ptr, ec] = std::from_chars(line.data() + pos, line.data() + digits_end, index);
  if (ec != std::errc()) return std::nullopt;
  return std::make_pair(index, std::string(line.substr(digits_end + 2)));
}

inline std::vector<Step> parse_steps(std::string_view text) {
  std::vector<Step> steps;
  for (const auto& line : split_lines(text)) {
    if (trim_view(line).empty()) continue;
    auto parsed = split_step_line(line);
    if (!parsed) throw MalformedStep("line lacks a 'Step n: ' prefix: \"" + line + "\"");
    if (parsed->first != static_cast<int>(steps.size() + 1)) {
      throw NonContiguousIndex("expected Step " + std::to_string(steps.size() + 1) +
                               ", found Step " + std::to_string(parsed->first));
    }
    steps.push_back(Step::make(parsed->first, std::move(parsed->second)));
  }
  return steps;
}

inline Solution parse_step_solution(std::string_view text, const TerminalDetector& detector,
                                    std::string question_id = {}) {
  if (trim_view(text).empty()) throw EmptyInput("solution text is empty");
  return Solution::make(std::move(question_id), parse_steps(text), detector);
}

inline std::string render_steps(const std::vector<Step>& steps) {
  std::string out;
  for (std::size_t k = 0; k < steps.size(); ++k) {
    if (k) out += '\n';
    out += steps[k].raw();
  }
  return out;
}

/// Text with `{name}` placeholders.
class PromptTemplate {
 public:
  PromptTemplate() = default;
  explicit PromptTemplate(std::string text) : text_(std::move(text)) {}

  const std::string& text() const noexcept { return text_; }

  bool has(std::string_view name) const {
    return text_.find("{" + std::string(name) + "}") != std::string::npos;
  }

  void require(std::initializer_list<std::string_view> names) const {
    for (auto n : names)
      if (!has(n)) throw MissingPlaceholder("template lacks {" + std::string(n) + "}");
  }

  std::string fill(const std::vector<std::pair<std::string, std::string>>& values) const {
    std::string out;
    out.reserve(text_.size());
    std::size_t k = 0;
    while (k < text_.size()) {
      bool replaced = false;
      if (text_[k] == '{') {
        for (const auto& [name, value] : values) {
          const auto token = "{" + name + "}";
          if (text_.compare(k, token.size(), token) == 0) {
            out += value;
            k += token.size();
            replaced = true;
            break;
          }
        }
      }
      if (!replaced) out.push_back(text_[k++]);
    }
    return out;
  }

 private:
  std::string text_;
};

inline PromptTemplate default_generation_template() {
  return PromptTemplate(
      "Solve the problem step by step. Write each step on its own line, prefixed with "
      "\"Step n: \". Write only the next step.\n\n"
      "Problem:\n{question}\n\n"
      "Steps so far:\n{prior_steps}\n");
}

inline std::string render_prefix(const StepPrefix& prefix, const PromptTemplate& tmpl) {
  tmpl.require({"question", "prior_steps"});
  return tmpl.fill({{"question", prefix.question.text}, {"prior_steps", render_steps(prefix.steps)}});
}

inline StepStats step_statistics(const std::vector<Solution>& solutions) {
  if (solutions.empty()) throw EmptyInput("step_statistics needs at least one solution");
  std::size_t total_steps = 0;
  std::size_t total_tokens = 0;
  for (const auto& s : solutions) {
    total_steps += s.steps.size();
    for (const auto& st : s.steps) total_tokens += count_whitespace_tokens(st.body());
  }
  StepStats stats;
  stats.n_solutions = solutions.size();
  stats.mean_step_num = static_cast<double>(total_steps) / static_cast<double>(solutions.size());
  if (total_steps > 0)
    stats.mean_step_len = static_cast<double>(total_tokens) / static_cast<double>(total_steps);
  return stats;
}

}  // namespace psr
