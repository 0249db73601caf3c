#include <psr/datasets.hpp>
#include <psr/toy.hpp>

#include <gtest/gtest.h>

#include <filesystem>
#include <memory>

namespace psr {
namespace {

namespace fs = std::filesystem;

struct TempDir {
  fs::path path;
  TempDir() {
    path = fs::temp_directory_path() / ("psr-ds-" + std::to_string(rng::derive(reinterpret_cast<std::uintptr_t>(this), "tmp")));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

// Random printable text including quotes, backslashes and multi-byte UTF-8.
std::string random_text(rng::Stream& s, std::size_t max_len, bool allow_newline) {
  static const std::vector<std::string> pieces = {"a", "Z", "7", " ", "\"", "\\", "{", "}", "=", "+", "é", "∑", "√2", "[[A]]", "\t", "/"};
  std::string out = "x";
  const auto n = static_cast<std::size_t>(s.uniform_int(0, static_cast<std::int64_t>(max_len)));
  for (std::size_t k = 0; k < n; ++k) {
    if (allow_newline && s.uniform() < 0.05) out += '\n';
    else out += pieces[static_cast<std::size_t>(s.uniform_int(0, static_cast<std::int64_t>(pieces.size()) - 1))];
  }
  return out;
}

Question random_question(rng::Stream& s) {
  Question q{random_text(s, 8, false), random_text(s, 40, true), std::nullopt,
             s.uniform() < 0.5 ? QuestionSource::synthetic : QuestionSource::external};
  if (s.uniform() < 0.5) q.gold_answer = random_text(s, 5, false);
  return q;
}

std::vector<Step> random_steps(rng::Stream& s, std::size_t n) {
  std::vector<Step> out;
  for (std::size_t k = 0; k < n; ++k) out.push_back(Step::make(static_cast<int>(k + 1), random_text(s, 20, false)));
  return out;
}

StepPreferencePair random_pair(rng::Stream& s) {
  const auto n = static_cast<std::size_t>(s.uniform_int(0, 4));
  const int level = static_cast<int>(n) + 1;
  return StepPreferencePair{random_question(s), random_steps(s, n), Step::make(level, random_text(s, 20, false)),
                            Step::make(level, random_text(s, 20, false)), level,
                            static_cast<int>(s.uniform_int(1, 5)), static_cast<int>(s.uniform_int(1, 3))};
}

TEST(Jsonl, EmptyListIsHeaderOnly) {
  TempDir dir;
  write_jsonl(dir.file("empty.jsonl"), std::vector<StepPreferencePair>{});
  EXPECT_EQ(read_text_file(dir.file("empty.jsonl")), "{\"schema\":\"ppd\",\"schema_version\":1}\n");
  EXPECT_TRUE(read_jsonl<StepPreferencePair>(dir.file("empty.jsonl")).empty());
}

TEST(Jsonl, ThreePpdRecordsRoundTrip) {
  TempDir dir;
  rng::Stream s(1);
  std::vector<StepPreferencePair> pairs = {random_pair(s), random_pair(s), random_pair(s)};
  write_jsonl(dir.file("ppd.jsonl"), pairs);
  EXPECT_EQ(read_jsonl<StepPreferencePair>(dir.file("ppd.jsonl")), pairs);
  EXPECT_EQ(to_jsonl(read_jsonl<StepPreferencePair>(dir.file("ppd.jsonl"))), read_text_file(dir.file("ppd.jsonl")));
}

TEST(JsonlProperty, AllKindsRoundTrip) {
  rng::Stream s(99);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<IFTRecord> ift;
    std::vector<EFTRecord> eft;
    std::vector<StepPreferencePair> ppd;
    const auto n = static_cast<std::size_t>(s.uniform_int(0, 5));
    for (std::size_t k = 0; k < n; ++k) {
      ift.push_back(IFTRecord{random_question(s), random_steps(s, static_cast<std::size_t>(s.uniform_int(1, 5))),
                              random_text(s, 6, false)});
      StepPrefix p(random_question(s), random_steps(s, static_cast<std::size_t>(s.uniform_int(0, 3))));
      auto a = Step::make(p.next_index(), "A " + random_text(s, 10, false));
      auto b = Step::make(p.next_index(), "B " + random_text(s, 10, false));
      eft.push_back(EFTRecord{p, a, b, s.uniform() < 0.5 ? Verdict::first : Verdict::second, random_text(s, 30, true),
                              static_cast<Provenance>(s.uniform_int(0, 2))});
      ppd.push_back(random_pair(s));
    }
    ASSERT_EQ(from_jsonl<IFTRecord>(to_jsonl(ift)), ift);
    ASSERT_EQ(from_jsonl<EFTRecord>(to_jsonl(eft)), eft);
    ASSERT_EQ(from_jsonl<StepPreferencePair>(to_jsonl(ppd)), ppd);
  }
}

TEST(Jsonl, SchemaChecks) {
  EXPECT_THROW(from_jsonl<StepPreferencePair>("{\"schema\":\"ppd\",\"schema_version\":2}\n"), SchemaMismatch);
  EXPECT_THROW(from_jsonl<StepPreferencePair>("{\"schema\":\"eft\",\"schema_version\":1}\n"), SchemaMismatch);
  EXPECT_THROW(from_jsonl<StepPreferencePair>("{\"level\":1}\n"), SchemaMismatch);
  EXPECT_THROW(from_jsonl<StepPreferencePair>(""), SchemaMismatch);
}

TEST(Jsonl, MalformedLineNumber) {
  rng::Stream s(5);
  auto text = to_jsonl(std::vector<StepPreferencePair>{random_pair(s)}) + "{not json\n";
  try {
    from_jsonl<StepPreferencePair>(text);
    FAIL();
  } catch (const MalformedLine& e) {
    EXPECT_EQ(e.line_no(), 3u);
  }
  auto missing = jsonl_header<IFTRecord>() + "\n{\"question\":1}\n";
  EXPECT_THROW(from_jsonl<IFTRecord>(missing), MalformedLine);
}

TEST(Jsonl, MissingFileIsIoError) {
  EXPECT_THROW(read_jsonl<IFTRecord>("/nonexistent/dir/file.jsonl"), IoError);
  EXPECT_THROW(write_jsonl("/nonexistent/dir/file.jsonl", std::vector<IFTRecord>{}), IoError);
}

TEST(Jsonl, SyntheticIftRoundTripsThroughParser) {
  for (const auto& r : synthetic_ift_records(synth::gen_questions(3, 20, 3))) {
    auto sol = parse_step_solution(render_steps(r.steps), answer_line_detector(), r.question.id);
    EXPECT_EQ(sol.steps, r.steps);
    EXPECT_EQ(*sol.answer, r.answer);
  }
}

// --- EFT construction ------------------------------------------------------

struct EftFixture : ::testing::Test {
  std::shared_ptr<ToyPolicy> policy = std::make_shared<ToyPolicy>(synth::noisy_policy(3, 0.5, 2));
  ToyModel model{policy, std::make_shared<synth::ChainEnvironment>(), ToyJudgeConfig{1.0, 0}};
  std::vector<Question> questions = synth::to_questions(synth::gen_questions(8, 4, 3));
  OracleScorer scorer;

  EFTBuildConfig cfg(int iterations = 20) {
    EFTBuildConfig c;
    c.num_iterations = iterations;
    c.seed = 3;
    return c;
  }
};

TEST_F(EftFixture, Defaults) {
  EFTBuildConfig c;
  EXPECT_EQ(c.simulation_depth, 3);
  EXPECT_EQ(c.num_iterations, 100);
  EXPECT_EQ(c.sampling.temperature, 0.7);
  EXPECT_EQ(c.sampling.top_p, 0.95);
}

TEST_F(EftFixture, OracleAnnotatorKeepsEveryPair) {
  OracleJudge annotator;
  EFTBuildStats stats;
  auto records = build_eft(questions, scorer, model, annotator, cfg(), &stats);
  ASSERT_GT(stats.raw_pairs, 0u);
  EXPECT_EQ(stats.records, stats.raw_pairs);
  EXPECT_EQ(records.size(), stats.raw_pairs);
  std::size_t gold_second = 0;
  for (const auto& r : records) {
    r.validate();
    EXPECT_EQ(r.provenance, Provenance::scorer_filtered);
    const auto& chosen = r.gold == Verdict::first ? r.cand_a : r.cand_b;
    const auto& other = r.gold == Verdict::first ? r.cand_b : r.cand_a;
    EXPECT_GT(scorer.score(r.prefix, chosen), scorer.score(r.prefix, other));
    gold_second += r.gold == Verdict::second;
  }
  EXPECT_GT(gold_second, 0u);
  EXPECT_LT(gold_second, records.size());
}

TEST_F(EftFixture, OrderBiasedAnnotatorKeepsNothing) {
  ScriptedText always_a({"Looks right. [[A]]"});
  EFTBuildStats stats;
  auto records = build_eft(questions, scorer, model, always_a, cfg(), &stats);
  EXPECT_TRUE(records.empty());
  EXPECT_GT(stats.raw_pairs, 0u);
  EXPECT_EQ(stats.inconsistent, stats.raw_pairs);
}

TEST_F(EftFixture, ConsistentButWrongAnnotatorKeepsNothing) {
  // Prefers the worse step in both orders.
  FunctionJudge contrarian([](const PairwiseRequest& r) {
    return std::string(synth::oracle_compare(r.prefix, r.first, r.second) == synth::Preference::first ? "[[B]]" : "[[A]]");
  });
  EFTBuildStats stats;
  EXPECT_TRUE(build_eft(questions, scorer, model, contrarian, cfg(), &stats).empty());
  EXPECT_EQ(stats.disagreed, stats.raw_pairs);
}

TEST_F(EftFixture, DeterministicAndParallelSafe) {
  OracleJudge annotator;
  auto a = build_eft(questions, scorer, model, annotator, cfg(10));
  auto c = cfg(10);
  c.parallelism = 4;
  auto b = build_eft(questions, scorer, model, annotator, c);
  EXPECT_EQ(a, b);
}

TEST_F(EftFixture, ExplanationsKeptVerbatim) {
  FunctionJudge explaining([](const PairwiseRequest& r) {
    const bool first = synth::oracle_compare(r.prefix, r.first, r.second) == synth::Preference::first;
    return std::string(first ? "A computes \"it\" right. [[A]]" : "B computes \"it\" right. [[B]]");
  });
  for (const auto& r : build_eft(questions, scorer, model, explaining, cfg(5)))
    EXPECT_EQ(r.explanation, r.gold == Verdict::first ? "A computes \"it\" right." : "B computes \"it\" right.");
}

class PlantedScorer final : public StepScorer {
 public:
  double score(const StepPrefix&, const Step& s) override {
    if (s.body() == "high") return 0.9;
    if (s.body() == "mid") return 0.6;
    return 0.2;
  }
};

TEST(ExpandQuestion, PlantedScoresPickExtremes) {
  std::size_t call = 0;
  FunctionGenerator gen([&](const GenerationRequest&) {
    static const char* bodies[] = {"mid", "high", "low"};
    return std::string(bodies[call++ % 3]);
  });
  PlantedScorer scorer;
  EFTBuildConfig cfg;
  cfg.children_per_node = 3;
  cfg.simulation_depth = 1;
  cfg.num_iterations = 1;
  auto raw = expand_question(Question{"q", "text", std::nullopt, QuestionSource::external}, scorer, gen, cfg, 0);
  ASSERT_EQ(raw.size(), 1u);
  EXPECT_EQ(raw[0].best.body(), "high");
  EXPECT_EQ(raw[0].worst.body(), "low");
  EXPECT_EQ(raw[0].best_score, 0.9);
  EXPECT_EQ(raw[0].worst_score, 0.2);
}

TEST(ExpandQuestion, DescendsAlongArgmaxAndDeduplicates) {
  FunctionGenerator gen([](const GenerationRequest& r) {
    return std::string(r.seed % 2 ? "high" : "low") + " " + std::to_string(r.prefix.steps.size());
  });
  class Scorer final : public StepScorer {
   public:
    double score(const StepPrefix&, const Step& s) override { return s.body()[0] == 'h' ? 1.0 : 0.0; }
  } scorer;
  EFTBuildConfig cfg;
  cfg.num_iterations = 30;
  auto raw = expand_question(Question{"q", "text", std::nullopt, QuestionSource::external}, scorer, gen, cfg, 11);
  ASSERT_EQ(raw.size(), 3u);
  for (std::size_t d = 0; d < 3; ++d) {
    EXPECT_EQ(raw[d].prefix.steps.size(), d);
    for (const auto& s : raw[d].prefix.steps) EXPECT_EQ(s.body()[0], 'h');
  }
}

// --- segmentation ------------------------------------------------------------

TEST(SegmentSolution, RuleBasedSentences) {
  auto steps = segment_solution("a. b. c.");
  ASSERT_EQ(steps.size(), 3u);
  EXPECT_EQ(steps[0], Step::make(1, "a."));
  EXPECT_EQ(steps[1], Step::make(2, "b."));
  EXPECT_EQ(steps[2], Step::make(3, "c."));
}

TEST(SegmentSolution, RuleBasedKeepsDecimalsAndSplitsParagraphs) {
  auto steps = segment_solution("x is 3.5 here\nand continues\n\nthen y");
  ASSERT_EQ(steps.size(), 2u);
  EXPECT_EQ(steps[0].body(), "x is 3.5 here and continues");
  EXPECT_EQ(steps[1].body(), "then y");
  EXPECT_THROW(segment_solution("  \n"), EmptyInput);
}

TEST(SegmentSolution, AnnotatorMustNotAlterContent) {
  const std::string text = "First add 2 and 3 to get 5. Then double it to get 10.";
  ScriptedText good({"Step 1: First add 2 and 3 to get 5.\nStep 2: Then double it to get 10."});
  auto steps = segment_solution(text, &good);
  ASSERT_EQ(steps.size(), 2u);
  check_unaltered(text, steps);

  ScriptedText dropped({"Step 1: First add 2 and 3 to get 5.\nStep 2: Then double it to 10."});
  EXPECT_THROW(segment_solution(text, &dropped), ContentAltered);
  ScriptedText junk({"I would rather not."});
  EXPECT_THROW(segment_solution(text, &junk), AnnotatorError);
}

TEST(SegmentSolutionProperty, RuleBasedNeverAltersContent) {
  rng::Stream s(8);
  for (int trial = 0; trial < 500; ++trial) {
    std::string text;
    const auto n = s.uniform_int(1, 30);
    for (std::int64_t k = 0; k < n; ++k) {
      static const char* words[] = {"a", "b.", "3.5", "x?", "\n", "\n\n", "!", "y!", " ", "="};
      text += words[s.uniform_int(0, 9)];
      text += ' ';
    }
    if (trim_view(text).empty()) continue;
    check_unaltered(text, segment_solution(text));
  }
}

TEST(LoadNumina, ReadsBoxedAnswers) {
  TempDir dir;
  write_text_file(dir.file("n.jsonl"),
                  "{\"problem\":\"What is 2+2?\",\"solution\":\"Add them. The result is \\\\boxed{4}.\"}\n"
                  "{\"problem\":\"Open\",\"solution\":\"No box here.\"}\n");
  auto load = load_numina_jsonl(dir.file("n.jsonl"));
  ASSERT_EQ(load.records.size(), 1u);
  EXPECT_EQ(load.skipped, 1u);
  EXPECT_EQ(load.records[0].answer, "4");
  EXPECT_EQ(load.records[0].steps.size(), 2u);
  write_text_file(dir.file("bad.jsonl"), "{\"problem\":1}\n");
  EXPECT_THROW(load_numina_jsonl(dir.file("bad.jsonl")), MalformedLine);
}

}  // namespace
}  // namespace psr
