#pragma once

// Accuracy evaluation: greedy step-by-step decoding, best-of-n per step with
// the model's own judge, answer extraction, and report emission.

#include <psr/backend.hpp>
#include <psr/core.hpp>
#include <psr/datasets.hpp>
#include <psr/error.hpp>
#include <psr/judge.hpp>
#include <psr/parallel.hpp>
#include <psr/rng.hpp>
#include <psr/search.hpp>
#include <psr/synthtask.hpp>

#include <json.hpp>

#include <cstdint>
#include <cstdio>
#include <optional>
#include <string>
#include <vector>

namespace psr {

enum class EvalMode { greedy, tts };
enum class AnswerKind { synthetic, boxed };

inline std::string to_string(EvalMode m) { return m == EvalMode::greedy ? "greedy" : "tts"; }
inline std::string to_string(AnswerKind k) { return k == AnswerKind::synthetic ? "synthetic" : "boxed"; }

inline EvalMode eval_mode_from_string(std::string_view s) {
  if (s == "greedy") return EvalMode::greedy;
  if (s == "tts") return EvalMode::tts;
  throw InvalidArgument("unknown eval mode '" + std::string(s) + "'");
}

inline AnswerKind answer_kind_from_string(std::string_view s) {
  if (s == "synthetic") return AnswerKind::synthetic;
  if (s == "boxed") return AnswerKind::boxed;
  throw InvalidArgument("unknown answer kind '" + std::string(s) + "'");
}

struct EvalConfig {
  EvalMode mode = EvalMode::greedy;
  int tts_n = 6;
  SamplingParams tts_sampling{0.5, 0.95, 256};
  std::vector<std::string> benchmarks;  // "synth:seed:n:depth" or an ift.v1 path
  std::string judge_test;               // "synth:seed:n:depth" or an eft.v1 path; empty skips
  AnswerKind answer_kind = AnswerKind::synthetic;
  int max_steps = 20;
  int max_tokens = 256;
  PromptTemplate generation_template = default_generation_template();
  JudgeOptions judge;
  std::size_t parallelism = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (tts_n < 1) throw InvalidArgument("tts_n must be positive");
    if (max_steps < 1) throw InvalidArgument("max_steps must be positive");
    if (parallelism < 1) throw InvalidArgument("parallelism must be at least 1");
    tts_sampling.validate();
  }

  TerminalDetector detector() const {
    return answer_kind == AnswerKind::synthetic ? answer_line_detector() : boxed_detector();
  }
};

struct BenchmarkResult {
  std::string name;
  std::size_t n_questions = 0;
  std::size_t n_correct = 0;
  std::size_t n_terminal = 0;
  StepStats step_stats;

  double accuracy() const {
    return n_questions == 0 ? 0.0 : static_cast<double>(n_correct) / static_cast<double>(n_questions);
  }
};

struct EvalReport {
  EvalMode mode = EvalMode::greedy;
  std::vector<BenchmarkResult> benchmarks;
  std::optional<double> judge_accuracy;
  std::size_t judge_n = 0;
  std::size_t judge_correct = 0;

  std::size_t n_questions() const {
    std::size_t n = 0;
    for (const auto& b : benchmarks) n += b.n_questions;
    return n;
  }
};

// ---------------------------------------------------------------------------
// Answers
// ---------------------------------------------------------------------------

inline std::string extract_answer(const Solution& solution, AnswerKind kind) {
  if (!solution.terminal) throw InvalidArgument("answer extraction needs a terminal solution");
  std::optional<std::string> found;
  if (kind == AnswerKind::synthetic) {
    found = answer_marker_value(solution.steps.back().body());
  } else {
    std::string all;
    for (const auto& s : solution.steps) all += s.body() + '\n';
    found = boxed_value(all);
  }
  if (!found) throw NoAnswerFound("no " + to_string(kind) + " answer in solution for " + solution.question_id);
  return trim(*found);
}

inline bool is_correct(const Solution& solution, const Question& q, AnswerKind kind) {
  if (!solution.terminal || !q.gold_answer) return false;
  try {
    return extract_answer(solution, kind) == trim(*q.gold_answer);
  } catch (const NoAnswerFound&) {
    return false;
  }
}

// ---------------------------------------------------------------------------
// Decoding
// ---------------------------------------------------------------------------

/// One sampled step per level until terminal or `max_steps`. A completion
/// that is not a step ends the solution unanswered.
inline Solution sample_decode(const Question& q, GeneratorBackend& gen, const SamplingParams& params, int max_steps,
                              const TerminalDetector& detector, const PromptTemplate& tmpl, std::uint64_t seed) {
  StepPrefix prefix(q, {});
  for (int level = 1; level <= max_steps; ++level) {
    const auto prompt = render_prefix(prefix, tmpl);
    const auto raw = gen.generate({prefix, prompt, params, rng::derive(seed, {static_cast<std::uint64_t>(level), 0})});
    std::optional<Step> parsed;
    try {
      parsed = coerce_step(raw, level);
    } catch (const MalformedStep&) {
      break;
    }
    const auto& step = *parsed;
    const bool terminal = detector.answer_of(step).has_value();
    prefix = prefix.extended(step);
    if (terminal) break;
  }
  return Solution::make(q.id, prefix.steps, detector);
}

/// Best of n candidates per level under the judge's tournament. A tie commits
/// the lowest index; nothing is rolled back. Candidates that are not steps
/// sit out; a level with none left ends the solution.
inline Solution tts_decode(const Question& q, GeneratorBackend& gen, JudgeBackend& judge_backend, const EvalConfig& cfg,
                           std::uint64_t seed) {
  const auto detector = cfg.detector();
  StepJudge judge(judge_backend, cfg.judge);
  StepPrefix prefix(q, {});
  for (int level = 1; level <= cfg.max_steps; ++level) {
    const auto prompt = render_prefix(prefix, cfg.generation_template);
    CandidateSet cands{level, {}};
    for (int c = 0; c < cfg.tts_n; ++c) {
      const auto s = rng::derive(seed, {static_cast<std::uint64_t>(level), static_cast<std::uint64_t>(c)});
      try {
        cands.candidates.push_back(coerce_step(gen.generate({prefix, prompt, cfg.tts_sampling, s}), level));
      } catch (const MalformedStep&) {
      }
    }
    if (cands.candidates.empty()) break;
    std::size_t pick = 0;
    if (cands.candidates.size() > 1) {
      pick = run_tournament(prefix, cands, judge, ComparisonMode::ordered_full,
                            rng::derive(seed, {static_cast<std::uint64_t>(level), 1u << 20}))
                 .best_idx;
    }
    const auto& step = cands.candidates[pick];
    const bool terminal = detector.answer_of(step).has_value();
    prefix = prefix.extended(step);
    if (terminal) break;
  }
  return Solution::make(q.id, prefix.steps, detector);
}

namespace detail {

inline void check_questions(const std::vector<Question>& questions) {
  if (questions.empty()) throw EmptyInput("no questions to evaluate");
  for (const auto& q : questions)
    if (!q.gold_answer) throw InvalidArgument("question " + q.id + " has no gold answer");
}

inline BenchmarkResult summarize(std::string name, const std::vector<Question>& questions,
                                 const std::vector<Solution>& solutions, AnswerKind kind) {
  BenchmarkResult r;
  r.name = std::move(name);
  r.n_questions = questions.size();
  for (std::size_t k = 0; k < questions.size(); ++k) {
    r.n_terminal += solutions[k].terminal;
    r.n_correct += is_correct(solutions[k], questions[k], kind);
  }
  r.step_stats = step_statistics(solutions);
  return r;
}

}  // namespace detail

/// Greedy decoding at temperature 0.
inline BenchmarkResult eval_accuracy(GeneratorBackend& gen, const std::vector<Question>& questions, const EvalConfig& cfg,
                                     std::string name = "questions", std::vector<Solution>* solutions_out = nullptr) {
  cfg.validate();
  detail::check_questions(questions);
  std::vector<std::optional<Solution>> slots(questions.size());
  const SamplingParams greedy{0.0, 1.0, cfg.max_tokens};
  parallel_for(questions.size(), cfg.parallelism, [&](std::size_t k) {
    slots[k] = sample_decode(questions[k], gen, greedy, cfg.max_steps, cfg.detector(), cfg.generation_template,
                             rng::derive(cfg.seed, questions[k].id));
  });
  std::vector<Solution> solutions;
  for (auto& s : slots) solutions.push_back(std::move(*s));
  auto r = detail::summarize(std::move(name), questions, solutions, cfg.answer_kind);
  if (solutions_out) *solutions_out = std::move(solutions);
  return r;
}

inline BenchmarkResult tts_eval(GeneratorBackend& gen, JudgeBackend& judge, const std::vector<Question>& questions,
                                const EvalConfig& cfg, std::string name = "questions",
                                std::vector<Solution>* solutions_out = nullptr) {
  cfg.validate();
  detail::check_questions(questions);
  std::vector<std::optional<Solution>> slots(questions.size());
  parallel_for(questions.size(), cfg.parallelism, [&](std::size_t k) {
    slots[k] = tts_decode(questions[k], gen, judge, cfg, rng::derive(cfg.seed, questions[k].id));
  });
  std::vector<Solution> solutions;
  for (auto& s : slots) solutions.push_back(std::move(*s));
  auto r = detail::summarize(std::move(name), questions, solutions, cfg.answer_kind);
  if (solutions_out) *solutions_out = std::move(solutions);
  return r;
}

// ---------------------------------------------------------------------------
// Suites
// ---------------------------------------------------------------------------

inline std::vector<Question> load_benchmark(const std::string& spec) {
  if (spec.rfind("synth:", 0) == 0) return synth::load_suite(spec);
  std::vector<Question> out;
  for (const auto& r : read_jsonl<IFTRecord>(spec)) {
    auto q = r.question;
    if (!q.gold_answer) q.gold_answer = r.answer;
    out.push_back(std::move(q));
  }
  return out;
}

inline std::vector<EFTRecord> load_judge_test(const std::string& spec) {
  if (spec.rfind("synth:", 0) == 0) {
    const auto s = synth::parse_suite_spec(spec);
    return synthetic_eft_records(s.n, s.seed, s.depth);
  }
  return read_jsonl<EFTRecord>(spec);
}

/// Runs every benchmark in `cfg` and, when a judge and a judge test set are
/// given, the judge's accuracy on it.
inline EvalReport eval_suite(GeneratorBackend& gen, JudgeBackend* judge, const EvalConfig& cfg) {
  cfg.validate();
  if (cfg.mode == EvalMode::tts && !judge) throw InvalidArgument("tts evaluation needs a judge");
  EvalReport report;
  report.mode = cfg.mode;
  for (const auto& spec : cfg.benchmarks) {
    const auto questions = load_benchmark(spec);
    report.benchmarks.push_back(cfg.mode == EvalMode::greedy ? eval_accuracy(gen, questions, cfg, spec)
                                                             : tts_eval(gen, *judge, questions, cfg, spec));
  }
  if (judge && !cfg.judge_test.empty()) {
    const auto test = load_judge_test(cfg.judge_test);
    report.judge_n = test.size();
    report.judge_correct = judge_hits(test, *judge, cfg.judge);
    report.judge_accuracy = static_cast<double>(report.judge_correct) / static_cast<double>(report.judge_n);
  }
  return report;
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const StepStats& s) {
  return {{"mean_step_num", s.mean_step_num ? nlohmann::json(*s.mean_step_num) : nlohmann::json(nullptr)},
          {"mean_step_len", s.mean_step_len ? nlohmann::json(*s.mean_step_len) : nlohmann::json(nullptr)},
          {"n_solutions", s.n_solutions}};
}

inline StepStats step_stats_from_json(const nlohmann::json& j) {
  StepStats s;
  if (!j.at("mean_step_num").is_null()) s.mean_step_num = j["mean_step_num"].get<double>();
  if (!j.at("mean_step_len").is_null()) s.mean_step_len = j["mean_step_len"].get<double>();
  s.n_solutions = j.at("n_solutions").get<std::size_t>();
  return s;
}

inline nlohmann::json to_json(const EvalReport& r) {
  auto benches = nlohmann::json::array();
  for (const auto& b : r.benchmarks) {
    benches.push_back({{"name", b.name},
                       {"n_questions", b.n_questions},
                       {"n_correct", b.n_correct},
                       {"n_terminal", b.n_terminal},
                       {"accuracy", b.accuracy()},
                       {"step_stats", to_json(b.step_stats)}});
  }
  nlohmann::json j{{"mode", to_string(r.mode)}, {"n_questions", r.n_questions()}, {"benchmarks", benches}};
  if (r.judge_accuracy) {
    j["judge_accuracy"] = *r.judge_accuracy;
    j["judge_n"] = r.judge_n;
    j["judge_correct"] = r.judge_correct;
  } else {
    j["judge_accuracy"] = nullptr;
  }
  return j;
}

inline EvalReport eval_report_from_json(const nlohmann::json& j) {
  EvalReport r;
  r.mode = eval_mode_from_string(j.at("mode").get<std::string>());
  for (const auto& b : j.at("benchmarks")) {
    BenchmarkResult br;
    br.name = b.at("name").get<std::string>();
    br.n_questions = b.at("n_questions").get<std::size_t>();
    br.n_correct = b.at("n_correct").get<std::size_t>();
    br.n_terminal = b.at("n_terminal").get<std::size_t>();
    br.step_stats = step_stats_from_json(b.at("step_stats"));
    r.benchmarks.push_back(std::move(br));
  }
  if (!j.at("judge_accuracy").is_null()) {
    r.judge_accuracy = j["judge_accuracy"].get<double>();
    r.judge_n = j.at("judge_n").get<std::size_t>();
    r.judge_correct = j.at("judge_correct").get<std::size_t>();
  }
  return r;
}

/// Accuracy table, one row per model, one column per benchmark plus the mean.
inline std::string render_table(const std::vector<std::pair<std::string, EvalReport>>& rows) {
  if (rows.empty()) return "";
  std::vector<std::string> header = {"Model"};
  for (const auto& b : rows.front().second.benchmarks) header.push_back(b.name);
  header.push_back("Avg.");
  std::vector<std::vector<std::string>> cells = {header};
  for (const auto& [tag, report] : rows) {
    std::vector<std::string> line = {tag};
    double sum = 0.0;
    for (const auto& b : report.benchmarks) {
      char buf[32];
      std::snprintf(buf, sizeof buf, "%.1f", 100.0 * b.accuracy());
      line.emplace_back(buf);
      sum += 100.0 * b.accuracy();
    }
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.1f", report.benchmarks.empty() ? 0.0 : sum / static_cast<double>(report.benchmarks.size()));
    line.emplace_back(buf);
    cells.push_back(std::move(line));
  }
  std::vector<std::size_t> width(header.size(), 0);
  for (const auto& line : cells)
    for (std::size_t c = 0; c < line.size() && c < width.size(); ++c) width[c] = std::max(width[c], line[c].size());
  std::string out;
  for (std::size_t r = 0; r < cells.size(); ++r) {
    for (std::size_t c = 0; c < cells[r].size() && c < width.size(); ++c) {
      out += c == 0 ? "" : " | ";
      out += cells[r][c] + std::string(width[c] - cells[r][c].size(), ' ');
    }
    out += '\n';
    if (r == 0) {
      for (std::size_t c = 0; c < width.size(); ++c) out += (c == 0 ? "" : "-+-") + std::string(width[c], '-');
      out += '\n';
    }
  }
  return out;
}

}  // namespace psr
