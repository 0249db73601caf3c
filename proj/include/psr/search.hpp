#pragma once

// Step-by-step candidate search with pairwise self-judging.
//
// At each level l the generator proposes w candidate steps, the judge scores
// them with a round-robin tournament
//
//     score_i = sum over j != i of O(s_i, s_j | question, s_1..s_{l-1})
//
// and the argmax is committed while (argmax, argmin) becomes a preference
// pair. When every score is equal the previously committed step and its pair
// are discarded and the search rolls back one level.

#include <psr/backend.hpp>
#include <psr/core.hpp>
#include <psr/error.hpp>
#include <psr/judge.hpp>
#include <psr/parallel.hpp>
#include <psr/rng.hpp>

#include <json.hpp>

#include <algorithm>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace psr {

enum class ComparisonMode { ordered_full, single_pass };

inline std::string to_string(ComparisonMode m) {
  return m == ComparisonMode::ordered_full ? "ordered_full" : "single_pass";
}

inline ComparisonMode comparison_mode_from_string(std::string_view s) {
  if (s == "ordered_full") return ComparisonMode::ordered_full;
  if (s == "single_pass") return ComparisonMode::single_pass;
  throw InvalidArgument("unknown comparison mode '" + std::string(s) + "'");
}

struct SearchConfig {
  int width_w = 6;
  int max_steps = 20;      // committed steps per trajectory
  int max_rollbacks = 20;  // separate budget for tie rollbacks
  SamplingParams sampling{0.5, 0.95, 256};
  ComparisonMode comparison_mode = ComparisonMode::ordered_full;
  std::size_t parallelism = 1;
  PromptTemplate generation_template = default_generation_template();
  JudgeOptions judge;
  TerminalDetector detector = answer_line_detector();

  void validate() const {
    if (width_w < 2) throw InvalidArgument("search width must be at least 2, got " + std::to_string(width_w));
    if (max_steps < 1) throw InvalidArgument("max_steps must be positive");
    if (max_rollbacks < 0) throw InvalidArgument("max_rollbacks must be non-negative");
    if (parallelism < 1) throw InvalidArgument("parallelism must be at least 1");
    sampling.validate();
  }
};

struct CandidateSet {
  int level_l = 1;
  std::vector<Step> candidates;
};

struct ComparisonRecord {
  std::size_t i = 0;
  std::size_t j = 0;
  int o = 0;
  bool discarded = false;
};

struct TournamentResult {
  std::vector<int> scores;
  std::size_t best_idx = 0;
  std::size_t worst_idx = 0;
  bool tie = false;
  std::vector<ComparisonRecord> comparisons;
};

struct StepPreferencePair {
  Question question;
  std::vector<Step> prefix_steps;
  Step chosen = Step::make(1, "-");
  Step rejected = Step::make(1, "-");
  int level = 1;
  int producer_version = 1;  // n of the producing model M_n
  int attempt = 1;           // which sampling attempt at this level produced it

  friend bool operator==(const StepPreferencePair&, const StepPreferencePair&) = default;
};

enum class TrajectoryStatus { completed, aborted_max_steps, aborted_rollback_budget };

inline std::string to_string(TrajectoryStatus s) {
  switch (s) {
    case TrajectoryStatus::completed: return "completed";
    case TrajectoryStatus::aborted_max_steps: return "aborted_max_steps";
    case TrajectoryStatus::aborted_rollback_budget: return "aborted_rollback_budget";
  }
  return "completed";
}

struct TrajectoryOutcome {
  std::optional<Solution> solution;
  std::vector<StepPreferencePair> pairs;
  TrajectoryStatus status = TrajectoryStatus::completed;
  int rollback_count = 0;
  std::vector<nlohmann::json> trace;  // one JSON object per event
};

/// Reduces a raw completion to the single step at `level`. Accepts either a
/// "Step <level>: " line (the first non-empty line) or a bare single line.
inline Step coerce_step(std::string_view completion, int level) {
  for (const auto& line : split_lines(completion)) {
    if (trim_view(line).empty()) continue;
    if (auto parsed = split_step_line(trim_view(line))) {
      if (parsed->first != level)
        throw MalformedStep("expected Step " + std::to_string(level) + ", completion starts with Step " +
                            std::to_string(parsed->first));
      return Step::make(level, trim(parsed->second));
    }
    if (trim_view(line).substr(0, 5) == "Step ")
      throw MalformedStep("unreadable step header in completion: \"" + line + "\"");
    return Step::make(level, trim(line));
  }
  throw MalformedStep("completion is empty");
}

inline CandidateSet sample_candidates(const StepPrefix& prefix, const SearchConfig& cfg, GeneratorBackend& gen,
                                      std::uint64_t seed) {
  cfg.validate();
  const int level = prefix.next_index();
  const auto prompt = render_prefix(prefix, cfg.generation_template);
  CandidateSet set{level, {}};
  std::vector<std::optional<Step>> slots(static_cast<std::size_t>(cfg.width_w));
  parallel_for(slots.size(), cfg.parallelism, [&](std::size_t c) {
    GenerationRequest req{prefix, prompt, cfg.sampling, rng::derive(seed, {c})};
    std::string completion;
    try {
      completion = gen.generate(req);
    } catch (const Error&) {
      throw;
    } catch (const std::exception& e) {
      throw GenerationError("candidate " + std::to_string(c) + ": " + e.what());
    }
    slots[c] = coerce_step(completion, level);
  });
  for (auto& s : slots) set.candidates.push_back(std::move(*s));
  return set;
}

/// Index of the first maximum (or minimum) score: lowest index breaks ties.
inline std::pair<std::size_t, std::size_t> extremes(const std::vector<int>& scores) {
  std::size_t best = 0, worst = 0;
  for (std::size_t k = 1; k < scores.size(); ++k) {
    if (scores[k] > scores[best]) best = k;
    if (scores[k] < scores[worst]) worst = k;
  }
  return {best, worst};
}

inline TournamentResult run_tournament(const StepPrefix& prefix, const CandidateSet& cands, const StepJudge& judge,
                                       ComparisonMode mode, std::uint64_t seed = 0, std::size_t parallelism = 1) {
  const auto w = cands.candidates.size();
  if (w < 2) throw InvalidArgument("a tournament needs at least two candidates");
  std::vector<ComparisonRecord> plan;
  for (std::size_t i = 0; i < w; ++i)
    for (std::size_t j = 0; j < w; ++j)
      if (i != j && (mode == ComparisonMode::ordered_full || i < j)) plan.push_back({i, j, 0, false});

  parallel_for(plan.size(), parallelism, [&](std::size_t k) {
    auto& rec = plan[k];
    try {
      auto c = judge.compare(prefix, cands.candidates[rec.i], cands.candidates[rec.j], rng::derive(seed, {rec.i, rec.j}));
      rec.o = c.o;
      rec.discarded = c.discarded;
    } catch (const std::exception& e) {
      throw JudgeError(rec.i, rec.j, e.what());
    }
  });

  TournamentResult r;
  r.scores.assign(w, 0);
  for (const auto& rec : plan) {
    if (rec.discarded) continue;
    if (mode == ComparisonMode::ordered_full) {
      r.scores[rec.i] += rec.o;
    } else {
      r.scores[rec.o == 1 ? rec.i : rec.j] += 1;
    }
  }
  std::tie(r.best_idx, r.worst_idx) = extremes(r.scores);
  r.tie = r.scores[r.best_idx] == r.scores[r.worst_idx];
  r.comparisons = std::move(plan);
  return r;
}

namespace detail {

inline nlohmann::json steps_json(const std::vector<Step>& steps) {
  auto arr = nlohmann::json::array();
  for (const auto& s : steps) arr.push_back(s.raw());
  return arr;
}

}  // namespace detail

/// Full search for one question. Aborts are statuses; only backend failures
/// throw. An aborted trajectory emits no pairs.
inline TrajectoryOutcome search_trajectory(const Question& question, const SearchConfig& cfg, GeneratorBackend& gen,
                                           JudgeBackend& judge_backend, std::uint64_t seed, int producer_version = 1) {
  cfg.validate();
  StepJudge judge(judge_backend, cfg.judge);
  TrajectoryOutcome out;
  auto event = [&](const char* kind) {
    nlohmann::json e;
    e["event"] = kind;
    e["question_id"] = question.id;
    return e;
  };

  std::vector<Step> committed;
  std::vector<std::optional<StepPreferencePair>> level_pairs;  // index l-1
  std::vector<int> attempts;                                    // per level

  while (true) {
    if (static_cast<int>(committed.size()) >= cfg.max_steps) {
      out.status = TrajectoryStatus::aborted_max_steps;
      auto e = event("abort");
      e["reason"] = "max_steps";
      e["committed"] = committed.size();
      out.trace.push_back(std::move(e));
      break;
    }
    const StepPrefix prefix(question, committed);
    const int level = prefix.next_index();
    if (static_cast<int>(attempts.size()) < level) attempts.resize(static_cast<std::size_t>(level), 0);
    const int attempt = ++attempts[static_cast<std::size_t>(level - 1)];
    const auto level_seed = rng::derive(seed, {static_cast<std::uint64_t>(level), static_cast<std::uint64_t>(attempt)});

    auto cands = sample_candidates(prefix, cfg, gen, rng::derive(level_seed, {0}));
    {
      auto e = event("sample");
      e["level"] = level;
      e["attempt"] = attempt;
      e["candidates"] = detail::steps_json(cands.candidates);
      out.trace.push_back(std::move(e));
    }
    auto result = run_tournament(prefix, cands, judge, cfg.comparison_mode, rng::derive(level_seed, {1}), cfg.parallelism);
    for (const auto& c : result.comparisons) {
      auto e = event("compare");
      e["level"] = level;
      e["attempt"] = attempt;
      e["i"] = c.i;
      e["j"] = c.j;
      e["o"] = c.o;
      if (c.discarded) e["discarded"] = true;
      out.trace.push_back(std::move(e));
    }

    if (result.tie) {
      if (out.rollback_count >= cfg.max_rollbacks) {
        out.status = TrajectoryStatus::aborted_rollback_budget;
        auto e = event("abort");
        e["reason"] = "rollback_budget";
        e["level"] = level;
        out.trace.push_back(std::move(e));
        break;
      }
      ++out.rollback_count;
      auto e = event("rollback");
      e["level"] = level;
      e["attempt"] = attempt;
      e["scores"] = result.scores;
      if (level > 1) {
        e["discarded_level"] = level - 1;
        e["discarded_step"] = committed.back().raw();
        committed.pop_back();
        level_pairs.resize(committed.size());
      } else {
        e["discarded_level"] = nullptr;
      }
      e["rollbacks_used"] = out.rollback_count;
      out.trace.push_back(std::move(e));
      continue;
    }

    const auto& best = cands.candidates[result.best_idx];
    const auto& worst = cands.candidates[result.worst_idx];
    std::optional<StepPreferencePair> pair;
    if (best.body() != worst.body())
      pair = StepPreferencePair{question, committed, best, worst, level, producer_version, attempt};
    {
      auto e = event("commit");
      e["level"] = level;
      e["attempt"] = attempt;
      e["scores"] = result.scores;
      e["best"] = result.best_idx;
      e["worst"] = result.worst_idx;
      e["step"] = best.raw();
      e["rejected"] = worst.raw();
      e["pair_emitted"] = pair.has_value();
      out.trace.push_back(std::move(e));
    }
    committed.push_back(best);
    level_pairs.resize(committed.size());
    level_pairs.back() = std::move(pair);

    if (cfg.detector.is_terminal(best)) {
      out.status = TrajectoryStatus::completed;
      auto e = event("complete");
      e["steps"] = committed.size();
      out.trace.push_back(std::move(e));
      break;
    }
  }

  if (out.status == TrajectoryStatus::completed) {
    out.solution = Solution::make(question.id, committed, cfg.detector);
    for (auto& p : level_pairs)
      if (p) out.pairs.push_back(std::move(*p));
  }
  return out;
}

/// State reconstructed from a trajectory trace.
struct TraceReplay {
  std::vector<std::string> committed;  // raw step lines
  struct Commit {
    int level;
    int attempt;
    std::vector<std::string> prefix;  // committed raw lines below `level` at commit time
    std::string chosen;
    std::string rejected;
    bool pair_emitted;
  };
  std::vector<Commit> surviving;  // commits still in force at the end, by level
  int rollbacks = 0;
  std::optional<std::string> abort_reason;
};

/// Replays commit and rollback events; the surviving commits are exactly the
/// ones whose pairs a completed trajectory emits.
inline TraceReplay replay_trace(const std::vector<nlohmann::json>& trace) {
  TraceReplay r;
  for (const auto& e : trace) {
    const auto kind = e.at("event").get<std::string>();
    if (kind == "commit") {
      const int level = e.at("level").get<int>();
      if (level != static_cast<int>(r.committed.size()) + 1)
        throw InvalidArgument("trace commits level " + std::to_string(level) + " on a prefix of " +
                              std::to_string(r.committed.size()) + " steps");
      r.surviving.push_back({level, e.at("attempt").get<int>(), r.committed, e.at("step").get<std::string>(),
                             e.at("rejected").get<std::string>(), e.at("pair_emitted").get<bool>()});
      r.committed.push_back(e.at("step").get<std::string>());
    } else if (kind == "rollback") {
      ++r.rollbacks;
      if (!e.at("discarded_level").is_null()) {
        r.committed.pop_back();
        r.surviving.pop_back();
      }
    } else if (kind == "abort") {
      r.abort_reason = e.at("reason").get<std::string>();
    }
  }
  return r;
}

}  // namespace psr
