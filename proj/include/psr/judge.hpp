#pragma once

// Step-wise pairwise LLM-as-a-judge: prompt assembly, verdict parsing, the
// comparison function used by the tournament, order-swap metrics, and the
// whole-solution scoring baseline.

#include <psr/backend.hpp>
#include <psr/core.hpp>
#include <psr/error.hpp>

#include <atomic>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace psr {

enum class Verdict { first, second, unparseable };

inline std::string to_string(Verdict v) {
  switch (v) {
    case Verdict::first: return "first";
    case Verdict::second: return "second";
    case Verdict::unparseable: return "unparseable";
  }
  return "unparseable";
}

inline Verdict verdict_from_string(std::string_view s) {
  if (s == "first") return Verdict::first;
  if (s == "second") return Verdict::second;
  if (s == "unparseable") return Verdict::unparseable;
  throw InvalidArgument("unknown verdict '" + std::string(s) + "'");
}

struct JudgeVerdict {
  Verdict preferred = Verdict::unparseable;
  std::string explanation;
  std::string raw;
};

inline constexpr std::string_view kMarkerA = "[[A]]";
inline constexpr std::string_view kMarkerB = "[[B]]";

/// The last "[[A]]" / "[[B]]" marker decides; text before it is the explanation.
inline JudgeVerdict parse_verdict(std::string_view completion) {
  JudgeVerdict v;
  v.raw = std::string(completion);
  const auto a = completion.rfind(kMarkerA);
  const auto b = completion.rfind(kMarkerB);
  if (a == std::string_view::npos && b == std::string_view::npos) {
    v.explanation = trim(completion);
    return v;
  }
  std::size_t at;
  if (b == std::string_view::npos || (a != std::string_view::npos && a > b)) {
    at = a;
    v.preferred = Verdict::first;
  } else {
    at = b;
    v.preferred = Verdict::second;
  }
  v.explanation = trim(completion.substr(0, at));
  return v;
}

inline std::string render_verdict(Verdict preferred, std::string_view explanation) {
  std::string out(explanation);
  if (!out.empty()) out += ' ';
  out += preferred == Verdict::first ? kMarkerA : kMarkerB;
  return out;
}

inline PromptTemplate default_judge_template() {
  return PromptTemplate(
      "You are judging the next step of a step-by-step solution.\n\n"
      "Problem:\n{question}\n\n"
      "Previous steps:\n{prior_steps}\n\n"
      "Candidate next step A:\n{candidate_a}\n\n"
      "Candidate next step B:\n{candidate_b}\n\n"
      "Decide which candidate is the better next step: check its correctness, its consistency "
      "with the previous steps, and whether it makes progress toward the answer. Explain your "
      "reasoning first, then end your reply with [[A]] if candidate A is better or [[B]] if "
      "candidate B is better.\n");
}

inline PromptTemplate default_score_template() {
  return PromptTemplate(
      "Review the user's question and the corresponding response using the additive 5-point "
      "scoring system described below. Points are accumulated based on the satisfaction of "
      "each criterion:\n"
      "- Add 1 point if the response is relevant and provides some information related to the "
      "question.\n"
      "- Add another point if the response addresses a substantial portion of the question.\n"
      "- Award a third point if the response answers the basic elements of the question in a "
      "useful way.\n"
      "- Grant a fourth point if the response is clearly written, well organized and its "
      "reasoning is correct.\n"
      "- Bestow a fifth point if the response is impeccable: correct, complete and concise.\n\n"
      "Question:\n{question}\n\n"
      "Response:\n{solution}\n\n"
      "After examining the response, briefly justify your total score, then conclude with the "
      "score using the format: \"Score: <total points>\".\n");
}

inline PromptTemplate load_template(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open template '" + path + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return PromptTemplate(buf.str());
}

inline std::string assemble_judge_prompt(const StepPrefix& prefix, const Step& cand_a, const Step& cand_b,
                                         const PromptTemplate& tmpl = default_judge_template()) {
  tmpl.require({"question", "prior_steps", "candidate_a", "candidate_b"});
  const int next = prefix.next_index();
  if (cand_a.index() != next || cand_b.index() != next)
    throw InvalidArgument("candidates must both be Step " + std::to_string(next) + ", got Step " +
                          std::to_string(cand_a.index()) + " and Step " + std::to_string(cand_b.index()));
  const auto prior = prefix.steps.empty() ? std::string("(none)") : render_steps(prefix.steps);
  return tmpl.fill({{"question", prefix.question.text},
                    {"prior_steps", prior},
                    {"candidate_a", cand_a.raw()},
                    {"candidate_b", cand_b.raw()}});
}

// ---------------------------------------------------------------------------
// The comparison function O
// ---------------------------------------------------------------------------

enum class UnparseablePolicy { count_as_loss, discard };

struct JudgeOptions {
  PromptTemplate tmpl = default_judge_template();
  UnparseablePolicy unparseable = UnparseablePolicy::count_as_loss;
};

struct Comparison {
  int o = 0;               // 1 iff the first-listed step was judged better
  bool discarded = false;  // unparseable verdict under the discard policy
  JudgeVerdict verdict;
};

/// Wraps a judge backend as the comparison O(s_i, s_j | prefix). Counts
/// unparseable verdicts; safe to call concurrently.
class StepJudge {
 public:
  explicit StepJudge(JudgeBackend& backend, JudgeOptions opts = {})
      : backend_(&backend), opts_(std::move(opts)) {}

  Comparison compare(const StepPrefix& prefix, const Step& s_i, const Step& s_j, std::uint64_t seed = 0) const {
    PairwiseRequest req{prefix, s_i, s_j, assemble_judge_prompt(prefix, s_i, s_j, opts_.tmpl), seed};
    Comparison c;
    c.verdict = parse_verdict(backend_->judge_pair(req));
    if (c.verdict.preferred == Verdict::unparseable) {
      unparseable_.fetch_add(1, std::memory_order_relaxed);
      c.discarded = opts_.unparseable == UnparseablePolicy::discard;
    }
    c.o = c.verdict.preferred == Verdict::first ? 1 : 0;
    return c;
  }

  std::size_t unparseable_count() const { return unparseable_.load(); }
  JudgeBackend& backend() const { return *backend_; }

 private:
  JudgeBackend* backend_;
  JudgeOptions opts_;
  mutable std::atomic<std::size_t> unparseable_{0};
};

inline int pairwise_O(const StepPrefix& prefix, const Step& s_i, const Step& s_j, JudgeBackend& backend) {
  return StepJudge(backend).compare(prefix, s_i, s_j).o;
}

// ---------------------------------------------------------------------------
// Labeled pairs and metrics
// ---------------------------------------------------------------------------

enum class Provenance { scorer_filtered, human, synthetic };

inline std::string to_string(Provenance p) {
  switch (p) {
    case Provenance::scorer_filtered: return "scorer_filtered";
    case Provenance::human: return "human";
    case Provenance::synthetic: return "synthetic";
  }
  return "synthetic";
}

inline Provenance provenance_from_string(std::string_view s) {
  if (s == "scorer_filtered") return Provenance::scorer_filtered;
  if (s == "human") return Provenance::human;
  if (s == "synthetic") return Provenance::synthetic;
  throw InvalidArgument("unknown provenance '" + std::string(s) + "'");
}

/// A labeled step-pair judgment.
struct EFTRecord {
  StepPrefix prefix;
  Step cand_a;
  Step cand_b;
  Verdict gold = Verdict::first;  // first or second
  std::string explanation;
  Provenance provenance = Provenance::synthetic;

  void validate() const {
    if (cand_a == cand_b) throw InvalidArgument("EFT candidates must differ");
    if (cand_a.index() != prefix.next_index() || cand_b.index() != prefix.next_index())
      throw InvalidArgument("EFT candidates must sit at the prefix's next index");
    if (gold == Verdict::unparseable) throw InvalidArgument("EFT gold must be first or second");
  }
};

struct JudgeMetrics {
  double consistency = 0.0;
  double agreement = 0.0;
  std::size_t n_pairs = 0;
  std::size_t n_unparseable = 0;
  // Exact counts behind the two ratios.
  std::size_t n_consistent = 0;
  std::size_t n_both_parseable = 0;
  std::size_t n_agree = 0;
  std::size_t n_first_parseable = 0;
};

/// Judges every pair in both orders. Consistency is the fraction of pairs
/// whose two verdicts name the same underlying step, over pairs where both
/// verdicts parsed; agreement is the fraction of parseable first-order
/// verdicts that match gold.
inline JudgeMetrics consistency_agreement(const std::vector<EFTRecord>& records, JudgeBackend& backend,
                                          const JudgeOptions& opts = {}) {
  if (records.empty()) throw EmptyInput("consistency_agreement needs records");
  StepJudge judge(backend, opts);
  JudgeMetrics m;
  m.n_pairs = records.size();
  for (std::size_t k = 0; k < records.size(); ++k) {
    const auto& r = records[k];
    const auto forward = judge.compare(r.prefix, r.cand_a, r.cand_b, 2 * k).verdict.preferred;
    const auto swapped = judge.compare(r.prefix, r.cand_b, r.cand_a, 2 * k + 1).verdict.preferred;
    if (forward != Verdict::unparseable) {
      ++m.n_first_parseable;
      if (forward == r.gold) ++m.n_agree;
    }
    if (forward != Verdict::unparseable && swapped != Verdict::unparseable) {
      ++m.n_both_parseable;
      // Same underlying step iff the positional verdicts differ.
      if (forward != swapped) ++m.n_consistent;
    }
  }
  m.n_unparseable = judge.unparseable_count();
  if (m.n_both_parseable) m.consistency = static_cast<double>(m.n_consistent) / static_cast<double>(m.n_both_parseable);
  if (m.n_first_parseable) m.agreement = static_cast<double>(m.n_agree) / static_cast<double>(m.n_first_parseable);
  return m;
}

/// Records whose first-order verdict matches gold; unparseable verdicts count
/// as misses.
inline std::size_t judge_hits(const std::vector<EFTRecord>& test_set, JudgeBackend& backend,
                              const JudgeOptions& opts = {}) {
  if (test_set.empty()) throw EmptyInput("judge_accuracy needs records");
  StepJudge judge(backend, opts);
  std::size_t hits = 0;
  for (std::size_t k = 0; k < test_set.size(); ++k) {
    const auto& r = test_set[k];
    if (judge.compare(r.prefix, r.cand_a, r.cand_b, k).verdict.preferred == r.gold) ++hits;
  }
  return hits;
}

inline double judge_accuracy(const std::vector<EFTRecord>& test_set, JudgeBackend& backend,
                             const JudgeOptions& opts = {}) {
  const auto hits = judge_hits(test_set, backend, opts);
  return static_cast<double>(hits) / static_cast<double>(test_set.size());
}

// ---------------------------------------------------------------------------
// Whole-solution scoring baseline
// ---------------------------------------------------------------------------

/// Last unsigned integer in `text`, if any.
inline std::optional<long long> last_integer(std::string_view text) {
  std::optional<long long> found;
  std::size_t k = 0;
  while (k < text.size()) {
    if (std::isdigit(static_cast<unsigned char>(text[k]))) {
      std::size_t end = k;
      while (end < text.size() && std::isdigit(static_cast<unsigned char>(text[end]))) ++end;
      try {
        found = std::stoll(std::string(text.substr(k, end - k)));
      } catch (const std::out_of_range&) {
        found = -1;
      }
      k = end;
    } else {
      ++k;
    }
  }
  return found;
}

inline int score_solution(const Question& question, const Solution& solution, JudgeBackend& backend,
                          const PromptTemplate& tmpl = default_score_template()) {
  if (!solution.terminal) throw InvalidArgument("score_solution requires a terminal solution");
  tmpl.require({"question", "solution"});
  const auto prompt = tmpl.fill({{"question", question.text}, {"solution", render_steps(solution.steps)}});
  const auto completion = backend.score(ScoreRequest{question, solution, prompt});
  auto v = last_integer(completion);
  if (!v) throw UnparseableScore("no integer in completion");
  if (*v < 0 || *v > 5) throw UnparseableScore("score " + std::to_string(*v) + " outside [0, 5]");
  return static_cast<int>(*v);
}

}  // namespace psr
