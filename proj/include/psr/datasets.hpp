#pragma once

// JSON-lines persistence for the three record kinds, EFT construction by
// scored expansion, and solution segmentation.
//
// Every file starts with a header line {"schema": "<kind>", "schema_version": N}
// followed by one record per line.

#include <psr/backend.hpp>
#include <psr/core.hpp>
#include <psr/error.hpp>
#include <psr/judge.hpp>
#include <psr/parallel.hpp>
#include <psr/rng.hpp>
#include <psr/search.hpp>
#include <psr/synthtask.hpp>

#include <json.hpp>

#include <algorithm>
#include <cctype>
#include <cstdint>
#include <fstream>
#include <set>
#include <string>
#include <tuple>
#include <vector>

namespace psr {

struct IFTRecord {
  Question question;
  std::vector<Step> steps;
  std::string answer;

  friend bool operator==(const IFTRecord&, const IFTRecord&) = default;
};

inline bool operator==(const EFTRecord& a, const EFTRecord& b) {
  return std::tie(a.prefix, a.cand_a, a.cand_b, a.gold, a.explanation, a.provenance) ==
         std::tie(b.prefix, b.cand_a, b.cand_b, b.gold, b.explanation, b.provenance);
}

// ---------------------------------------------------------------------------
// JSON conversion
// ---------------------------------------------------------------------------

namespace json_io {

using nlohmann::json;

inline json question(const Question& q) {
  json j{{"id", q.id}, {"text", q.text}, {"source", to_string(q.source)}};
  j["gold_answer"] = q.gold_answer ? json(*q.gold_answer) : json(nullptr);
  return j;
}

inline Question question(const json& j) {
  Question q;
  q.id = j.at("id").get<std::string>();
  q.text = j.at("text").get<std::string>();
  q.source = question_source_from_string(j.at("source").get<std::string>());
  if (const auto& g = j.at("gold_answer"); !g.is_null()) q.gold_answer = g.get<std::string>();
  return q;
}

inline json step(const Step& s) { return {{"index", s.index()}, {"body", s.body()}}; }
inline Step step(const json& j) { return Step::make(j.at("index").get<int>(), j.at("body").get<std::string>()); }

inline json steps(const std::vector<Step>& v) {
  json out = json::array();
  for (const auto& s : v) out.push_back(step(s));
  return out;
}

inline std::vector<Step> steps(const json& j) {
  std::vector<Step> out;
  for (const auto& s : j) out.push_back(step(s));
  check_contiguous(out);
  return out;
}

}  // namespace json_io

template <class R>
struct RecordSchema;

template <>
struct RecordSchema<IFTRecord> {
  static constexpr const char* name = "ift";
  static constexpr int version = 1;
  static nlohmann::json to_json(const IFTRecord& r) {
    return {{"question", json_io::question(r.question)}, {"steps", json_io::steps(r.steps)}, {"answer", r.answer}};
  }
  static IFTRecord from_json(const nlohmann::json& j) {
    return IFTRecord{json_io::question(j.at("question")), json_io::steps(j.at("steps")), j.at("answer").get<std::string>()};
  }
};

template <>
struct RecordSchema<EFTRecord> {
  static constexpr const char* name = "eft";
  static constexpr int version = 1;
  static nlohmann::json to_json(const EFTRecord& r) {
    return {{"question", json_io::question(r.prefix.question)},
            {"prefix", json_io::steps(r.prefix.steps)},
            {"cand_a", json_io::step(r.cand_a)},
            {"cand_b", json_io::step(r.cand_b)},
            {"gold", to_string(r.gold)},
            {"explanation", r.explanation},
            {"provenance", to_string(r.provenance)}};
  }
  static EFTRecord from_json(const nlohmann::json& j) {
    EFTRecord r{StepPrefix(json_io::question(j.at("question")), json_io::steps(j.at("prefix"))),
                json_io::step(j.at("cand_a")),
                json_io::step(j.at("cand_b")),
                verdict_from_string(j.at("gold").get<std::string>()),
                j.at("explanation").get<std::string>(),
                provenance_from_string(j.at("provenance").get<std::string>())};
    r.validate();
    return r;
  }
};

template <>
struct RecordSchema<StepPreferencePair> {
  static constexpr const char* name = "ppd";
  static constexpr int version = 1;
  static nlohmann::json to_json(const StepPreferencePair& p) {
    return {{"question", json_io::question(p.question)},
            {"prefix", json_io::steps(p.prefix_steps)},
            {"chosen", json_io::step(p.chosen)},
            {"rejected", json_io::step(p.rejected)},
            {"level", p.level},
            {"producer_version", p.producer_version},
            {"attempt", p.attempt}};
  }
  static StepPreferencePair from_json(const nlohmann::json& j) {
    StepPreferencePair p{json_io::question(j.at("question")),
                         json_io::steps(j.at("prefix")),
                         json_io::step(j.at("chosen")),
                         json_io::step(j.at("rejected")),
                         j.at("level").get<int>(),
                         j.at("producer_version").get<int>(),
                         j.at("attempt").get<int>()};
    if (p.level != static_cast<int>(p.prefix_steps.size()) + 1 || p.chosen.index() != p.level ||
        p.rejected.index() != p.level)
      throw InvalidArgument("pair level does not match its prefix");
    return p;
  }
};

template <class R>
std::string jsonl_header() {
  return nlohmann::json{{"schema", RecordSchema<R>::name}, {"schema_version", RecordSchema<R>::version}}.dump();
}

template <class R>
std::string to_jsonl(const std::vector<R>& records) {
  std::string out = jsonl_header<R>() + '\n';
  for (const auto& r : records) out += RecordSchema<R>::to_json(r).dump() + '\n';
  return out;
}

template <class R>
std::vector<R> from_jsonl(std::string_view text) {
  const auto lines = split_lines(text);
  std::size_t first = 0;
  while (first < lines.size() && trim_view(lines[first]).empty()) ++first;
  if (first == lines.size()) throw SchemaMismatch("missing header line");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(lines[first]);
  } catch (const nlohmann::json::exception& e) {
    throw MalformedLine(first + 1, e.what());
  }
  if (!header.is_object() || !header.contains("schema") || !header.contains("schema_version"))
    throw SchemaMismatch("first line is not a schema header");
  if (header["schema"] != RecordSchema<R>::name)
    throw SchemaMismatch("expected schema '" + std::string(RecordSchema<R>::name) + "', file holds '" +
                         header["schema"].dump() + "'");
  if (header["schema_version"] != RecordSchema<R>::version)
    throw SchemaMismatch("unsupported schema_version " + header["schema_version"].dump() + " for " +
                         RecordSchema<R>::name);
  std::vector<R> out;
  for (std::size_t k = first + 1; k < lines.size(); ++k) {
    if (trim_view(lines[k]).empty()) continue;
    try {
      out.push_back(RecordSchema<R>::from_json(nlohmann::json::parse(lines[k])));
    } catch (const nlohmann::json::exception& e) {
      throw MalformedLine(k + 1, e.what());
    } catch (const MalformedLine&) {
      throw;
    } catch (const Error& e) {
      throw MalformedLine(k + 1, e.what());
    }
  }
  return out;
}

inline std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open '" + path + "' for reading");
  std::string text((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (in.bad()) throw IoError("read failed for '" + path + "'");
  return text;
}

inline void write_text_file(const std::string& path, std::string_view text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open '" + path + "' for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw IoError("write failed for '" + path + "'");
}

template <class R>
void write_jsonl(const std::string& path, const std::vector<R>& records) {
  write_text_file(path, to_jsonl(records));
}

template <class R>
std::vector<R> read_jsonl(const std::string& path) {
  return from_jsonl<R>(read_text_file(path));
}

// ---------------------------------------------------------------------------
// EFT construction
// ---------------------------------------------------------------------------

class StepScorer {
 public:
  virtual ~StepScorer() = default;
  /// Probability in [0, 1] that `step` is a correct continuation of `prefix`.
  virtual double score(const StepPrefix& prefix, const Step& step) = 0;
};

class OracleScorer final : public StepScorer {
 public:
  double score(const StepPrefix& prefix, const Step& step) override { return synth::oracle_prm(prefix, step); }
};

struct EFTBuildConfig {
  int simulation_depth = 3;
  int num_iterations = 100;
  SamplingParams sampling{0.7, 0.95, 256};
  int children_per_node = 6;
  PromptTemplate generation_template = default_generation_template();
  JudgeOptions judge;
  TerminalDetector detector = answer_line_detector();
  std::size_t parallelism = 1;
  std::uint64_t seed = 0;

  void validate() const {
    if (simulation_depth < 1) throw InvalidArgument("simulation_depth must be positive");
    if (num_iterations < 1) throw InvalidArgument("num_iterations must be positive");
    if (children_per_node < 2) throw InvalidArgument("children_per_node must be at least 2");
    if (parallelism < 1) throw InvalidArgument("parallelism must be at least 1");
    sampling.validate();
  }
};

/// (argmax, argmin) of one scored layer.
struct RawPair {
  StepPrefix prefix;
  Step best = Step::make(1, "-");
  Step worst = Step::make(1, "-");
  double best_score = 0.0;
  double worst_score = 0.0;
};

struct EFTBuildStats {
  std::size_t raw_pairs = 0;
  std::size_t inconsistent = 0;  // the two orders named different candidates
  std::size_t disagreed = 0;     // consistent, but not the scorer's argmax
  std::size_t records = 0;
};

/// Scored expansion of one question. Each iteration descends from the root
/// along the scorer's argmax for up to `simulation_depth` layers; duplicate
/// pairs across iterations are kept once.
inline std::vector<RawPair> expand_question(const Question& question, StepScorer& scorer, GeneratorBackend& gen,
                                            const EFTBuildConfig& cfg, std::uint64_t seed) {
  std::vector<RawPair> out;
  std::set<std::string> seen;
  for (int it = 0; it < cfg.num_iterations; ++it) {
    StepPrefix node(question, {});
    for (int depth = 0; depth < cfg.simulation_depth; ++depth) {
      const auto prompt = render_prefix(node, cfg.generation_template);
      std::vector<Step> children;
      std::vector<double> scores;
      for (int c = 0; c < cfg.children_per_node; ++c) {
        const auto child_seed = rng::derive(seed, {static_cast<std::uint64_t>(it), static_cast<std::uint64_t>(depth),
                                                   static_cast<std::uint64_t>(c)});
        children.push_back(coerce_step(gen.generate({node, prompt, cfg.sampling, child_seed}), node.next_index()));
        scores.push_back(scorer.score(node, children.back()));
      }
      const auto best = static_cast<std::size_t>(std::max_element(scores.begin(), scores.end()) - scores.begin());
      const auto worst = static_cast<std::size_t>(std::min_element(scores.begin(), scores.end()) - scores.begin());
      if (scores[best] > scores[worst] && children[best] != children[worst]) {
        auto key = render_steps(node.steps) + '\x1f' + children[best].body() + '\x1f' + children[worst].body();
        if (seen.insert(std::move(key)).second)
          out.push_back(RawPair{node, children[best], children[worst], scores[best], scores[worst]});
      }
      const bool terminal = cfg.detector.answer_of(children[best]).has_value();
      node = node.extended(children[best]);
      if (terminal) break;
    }
  }
  return out;
}

/// Judges a raw pair in both orders. Returns a record only when both orders
/// name the scorer's argmax; the record's A/B order is drawn from `seed`.
inline std::optional<EFTRecord> annotate_pair(const RawPair& raw, const StepJudge& judge, std::uint64_t seed,
                                              EFTBuildStats* stats = nullptr) {
  const auto forward = judge.compare(raw.prefix, raw.best, raw.worst, rng::derive(seed, {0}));
  const auto swapped = judge.compare(raw.prefix, raw.worst, raw.best, rng::derive(seed, {1}));
  const auto named_forward = forward.verdict.preferred;
  const auto named_swapped = swapped.verdict.preferred == Verdict::first    ? Verdict::second
                             : swapped.verdict.preferred == Verdict::second ? Verdict::first
                                                                            : Verdict::unparseable;
  if (named_forward == Verdict::unparseable || named_forward != named_swapped) {
    if (stats) ++stats->inconsistent;
    return std::nullopt;
  }
  if (named_forward != Verdict::first) {
    if (stats) ++stats->disagreed;
    return std::nullopt;
  }
  const bool best_first = (rng::derive(seed, {2}) & 1u) == 0;
  EFTRecord r{raw.prefix,
              best_first ? raw.best : raw.worst,
              best_first ? raw.worst : raw.best,
              best_first ? Verdict::first : Verdict::second,
              best_first ? forward.verdict.explanation : swapped.verdict.explanation,
              Provenance::scorer_filtered};
  return r;
}

inline std::vector<EFTRecord> build_eft(const std::vector<Question>& questions, StepScorer& scorer, GeneratorBackend& gen,
                                        JudgeBackend& annotator, const EFTBuildConfig& cfg,
                                        EFTBuildStats* stats = nullptr) {
  cfg.validate();
  StepJudge judge(annotator, cfg.judge);
  std::vector<std::vector<EFTRecord>> per_question(questions.size());
  std::vector<EFTBuildStats> per_stats(questions.size());
  parallel_for(questions.size(), cfg.parallelism, [&](std::size_t qi) {
    const auto qseed = rng::derive(cfg.seed, questions[qi].id);
    const auto raw = expand_question(questions[qi], scorer, gen, cfg, rng::derive(qseed, {0}));
    per_stats[qi].raw_pairs = raw.size();
    for (std::size_t k = 0; k < raw.size(); ++k)
      if (auto r = annotate_pair(raw[k], judge, rng::derive(qseed, {1, k}), &per_stats[qi]))
        per_question[qi].push_back(std::move(*r));
  });
  std::vector<EFTRecord> out;
  EFTBuildStats total;
  for (std::size_t qi = 0; qi < questions.size(); ++qi) {
    total.raw_pairs += per_stats[qi].raw_pairs;
    total.inconsistent += per_stats[qi].inconsistent;
    total.disagreed += per_stats[qi].disagreed;
    for (auto& r : per_question[qi]) out.push_back(std::move(r));
  }
  total.records = out.size();
  if (stats) *stats = total;
  return out;
}

/// Labeled pairs on synthetic questions, gold from the oracle. Candidates are
/// drawn from the action vocabulary at random correct-so-far prefixes and
/// always differ in error.
inline std::vector<EFTRecord> synthetic_eft_records(std::size_t n, std::uint64_t seed, std::size_t depth = 3) {
  synth::ChainEnvironment env;
  const auto pool = synth::gen_questions(seed, std::max<std::size_t>(n, 16), depth);
  rng::Stream s(rng::derive(seed, "eft"));
  std::vector<EFTRecord> out;
  const auto n_actions = static_cast<std::int64_t>(synth::action_vocab().size());
  while (out.size() < n) {
    const auto q = synth::to_question(pool[static_cast<std::size_t>(s.uniform_int(0, static_cast<std::int64_t>(pool.size()) - 1))]);
    StepPrefix p(q, {});
    const auto levels = s.uniform_int(0, static_cast<std::int64_t>(depth) - 1);
    for (std::int64_t l = 0; l < levels; ++l)
      p = p.extended(Step::make(p.next_index(), env.render_action(p, synth::kCorrectAction)));
    auto a = Step::make(p.next_index(), env.render_action(p, static_cast<std::size_t>(s.uniform_int(0, n_actions - 1))));
    auto b = Step::make(p.next_index(), env.render_action(p, static_cast<std::size_t>(s.uniform_int(0, n_actions - 1))));
    if (synth::assess(p, a).abs_error == synth::assess(p, b).abs_error) continue;
    const auto gold = synth::oracle_compare(p, a, b) == synth::Preference::first ? Verdict::first : Verdict::second;
    out.push_back(EFTRecord{std::move(p), std::move(a), std::move(b), gold, "", Provenance::synthetic});
  }
  return out;
}

/// Step-by-step gold solutions for synthetic questions.
inline std::vector<IFTRecord> synthetic_ift_records(const std::vector<synth::SynthQuestion>& questions) {
  synth::ChainEnvironment env;
  std::vector<IFTRecord> out;
  for (const auto& sq : questions) {
    StepPrefix p(synth::to_question(sq), {});
    for (std::size_t l = 0; l < sq.depth(); ++l)
      p = p.extended(Step::make(p.next_index(), env.render_action(p, synth::kCorrectAction)));
    out.push_back(IFTRecord{p.question, p.steps, std::to_string(sq.gold_answer)});
  }
  return out;
}

// ---------------------------------------------------------------------------
// Segmentation
// ---------------------------------------------------------------------------

/// Sentences end at '.', '?' or '!' followed by whitespace or end of text;
/// blank lines always end a step.
inline std::vector<Step> rule_segment(std::string_view raw_text) {
  std::vector<std::string> bodies;
  std::string current;
  auto flush = [&] {
    auto t = normalize_whitespace(current);
    if (!t.empty()) bodies.push_back(std::move(t));
    current.clear();
  };
  std::size_t blank_run = 0;
  for (const auto& line : split_lines(raw_text)) {
    if (trim_view(line).empty()) {
      if (++blank_run == 1) flush();
      continue;
    }
    blank_run = 0;
    for (std::size_t k = 0; k < line.size(); ++k) {
      current += line[k];
      const char c = line[k];
      if ((c == '.' || c == '?' || c == '!') && (k + 1 == line.size() || std::isspace(static_cast<unsigned char>(line[k + 1]))))
        flush();
    }
    current += ' ';
  }
  flush();
  std::vector<Step> out;
  for (std::size_t k = 0; k < bodies.size(); ++k) out.push_back(Step::make(static_cast<int>(k + 1), bodies[k]));
  return out;
}

inline PromptTemplate default_segmentation_template() {
  return PromptTemplate(
      "Divide the following solution into individual steps logically, without altering any information. "
      "Write each step on its own line as \"Step k: ...\".\n\n"
      "Solution:\n{solution}\n");
}

inline void check_unaltered(std::string_view raw_text, const std::vector<Step>& steps) {
  std::string joined;
  for (const auto& s : steps) joined += s.body() + ' ';
  if (normalize_whitespace(joined) != normalize_whitespace(raw_text))
    throw ContentAltered("segmented steps do not reproduce the original solution text");
}

inline std::vector<Step> segment_solution(std::string_view raw_text, TextBackend* annotator = nullptr,
                                          const PromptTemplate& tmpl = default_segmentation_template()) {
  if (trim_view(raw_text).empty()) throw EmptyInput("solution text is empty");
  if (!annotator) return rule_segment(raw_text);
  std::string reply;
  try {
    reply = annotator->complete(tmpl.fill({{"solution", std::string(raw_text)}}), SamplingParams{0.0, 1.0, 2048});
  } catch (const Error& e) {
    throw AnnotatorError(std::string("segmentation request failed: ") + e.what());
  }
  std::vector<Step> steps;
  try {
    steps = parse_steps(reply);
  } catch (const Error& e) {
    throw AnnotatorError(std::string("segmentation reply is not a step list: ") + e.what());
  }
  if (steps.empty()) throw AnnotatorError("segmentation reply holds no steps");
  check_unaltered(raw_text, steps);
  return steps;
}

/// Reads problem/solution JSON lines; the answer is the last \boxed{} value.
/// Lines without one are skipped and counted.
struct NuminaLoad {
  std::vector<IFTRecord> records;
  std::size_t skipped = 0;
};

inline NuminaLoad load_numina_jsonl(const std::string& path) {
  NuminaLoad out;
  const auto lines = split_lines(read_text_file(path));
  for (std::size_t k = 0; k < lines.size(); ++k) {
    if (trim_view(lines[k]).empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(lines[k]);
    } catch (const nlohmann::json::exception& e) {
      throw MalformedLine(k + 1, e.what());
    }
    if (!j.is_object() || !j.contains("problem") || !j.contains("solution"))
      throw MalformedLine(k + 1, "expected 'problem' and 'solution' fields");
    const auto solution = j["solution"].get<std::string>();
    auto answer = boxed_value(solution);
    if (!answer || trim_view(solution).empty()) {
      ++out.skipped;
      continue;
    }
    Question q{"numina-" + std::to_string(k + 1), j["problem"].get<std::string>(), answer, QuestionSource::external};
    out.records.push_back(IFTRecord{std::move(q), rule_segment(solution), *answer});
  }
  return out;
}

}  // namespace psr
