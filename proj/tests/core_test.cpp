#include <psr/core.hpp>
#include <psr/rng.hpp>

#include <gtest/gtest.h>

#include <string>
#include <vector>

namespace psr {
namespace {

TEST(ParseStepSolution, TerminalWithAnswer) {
  auto s = parse_step_solution("Step 1: a+b\nStep 2: Answer: 5", answer_line_detector());
  ASSERT_EQ(s.steps.size(), 2u);
  EXPECT_EQ(s.steps[0].body(), "a+b");
  EXPECT_EQ(s.steps[1].raw(), "Step 2: Answer: 5");
  EXPECT_TRUE(s.terminal);
  ASSERT_TRUE(s.answer.has_value());
  EXPECT_EQ(*s.answer, "5");
}

TEST(ParseStepSolution, NonContiguousIndex) {
  EXPECT_THROW(parse_step_solution("Step 1: x\nStep 3: y", answer_line_detector()), NonContiguousIndex);
  EXPECT_THROW(parse_step_solution("Step 2: x", answer_line_detector()), NonContiguousIndex);
}

TEST(ParseStepSolution, MalformedStep) {
  EXPECT_THROW(parse_step_solution("no prefix here", answer_line_detector()), MalformedStep);
  EXPECT_THROW(parse_step_solution("Step 1: ok\nStep 2:", answer_line_detector()), MalformedStep);
  EXPECT_THROW(parse_step_solution("Step one: x", answer_line_detector()), MalformedStep);
}

TEST(ParseStepSolution, EmptyTextRejected) {
  EXPECT_THROW(parse_step_solution("  \n", answer_line_detector()), EmptyInput);
}

TEST(ParseStepSolution, NonTerminalHasNoAnswer) {
  auto s = parse_step_solution("Step 1: 2 + 2 = 4\n\nStep 2: 4 * 3 = 12\n", answer_line_detector());
  EXPECT_EQ(s.steps.size(), 2u);
  EXPECT_FALSE(s.terminal);
  EXPECT_FALSE(s.answer.has_value());
}

TEST(ParseStepSolution, BoxedDetector) {
  auto s = parse_step_solution("Step 1: so \\boxed{\\frac{3}{4}} holds", boxed_detector());
  EXPECT_TRUE(s.terminal);
  EXPECT_EQ(*s.answer, "\\frac{3}{4}");
}

TEST(Step, RawMatchesIndexAndBody) {
  auto s = Step::make(7, "x = 1");
  EXPECT_EQ(s.raw(), "Step 7: x = 1");
  EXPECT_THROW(Step::make(0, "x"), MalformedStep);
  EXPECT_THROW(Step::make(1, "   "), MalformedStep);
  EXPECT_THROW(Step::make(1, "a\nb"), MalformedStep);
}

TEST(StepPrefix, ContiguityEnforced) {
  Question q{"q", "text", std::nullopt, QuestionSource::external};
  EXPECT_THROW(StepPrefix(q, {Step::make(2, "x")}), NonContiguousIndex);
  StepPrefix p(q, {Step::make(1, "x")});
  EXPECT_EQ(p.next_index(), 2);
}

TEST(RenderPrefix, EmptyStepsBlock) {
  PromptTemplate t("Q: {question}\nS: [{prior_steps}]");
  StepPrefix p(Question{"q", "What?", std::nullopt, QuestionSource::external}, {});
  EXPECT_EQ(render_prefix(p, t), "Q: What?\nS: []");
}

TEST(RenderPrefix, StepsInOrder) {
  PromptTemplate t("{question}|{prior_steps}");
  StepPrefix p(Question{"q", "Q", std::nullopt, QuestionSource::external},
               {Step::make(1, "first"), Step::make(2, "second")});
  EXPECT_EQ(render_prefix(p, t), "Q|Step 1: first\nStep 2: second");
}

TEST(RenderPrefix, MissingPlaceholder) {
  StepPrefix p(Question{"q", "Q", std::nullopt, QuestionSource::external}, {});
  EXPECT_THROW(render_prefix(p, PromptTemplate("only {prior_steps}")), MissingPlaceholder);
  EXPECT_THROW(render_prefix(p, PromptTemplate("only {question}")), MissingPlaceholder);
}

TEST(StepStatistics, MeanStepNum) {
  auto a = parse_step_solution("Step 1: a\nStep 2: b", never_terminal_detector());
  auto b = parse_step_solution("Step 1: a\nStep 2: b\nStep 3: c\nStep 4: d", never_terminal_detector());
  auto st = step_statistics({a, b});
  EXPECT_EQ(st.n_solutions, 2u);
  EXPECT_EQ(*st.mean_step_num, 3.0);
}

TEST(StepStatistics, MeanStepLenExcludesPrefix) {
  auto a = parse_step_solution("Step 1: a b c\nStep 2: d e", never_terminal_detector());
  auto st = step_statistics({a});
  EXPECT_EQ(*st.mean_step_len, 2.5);
}

TEST(StepStatistics, EmptyInput) { EXPECT_THROW(step_statistics({}), EmptyInput); }

TEST(StepStatistics, NoStepsLeavesLengthAbsent) {
  Solution empty{"q", {}, false, std::nullopt};
  auto st = step_statistics({empty});
  EXPECT_EQ(*st.mean_step_num, 0.0);
  EXPECT_FALSE(st.mean_step_len.has_value());
}

// Property: rendering a well-formed step list and parsing it back is the
// identity; corrupting one header always raises.
TEST(StepFormatProperty, RenderParseRoundTripAndCorruption) {
  rng::Stream s(42);
  const std::vector<std::string> words = {"x", "=", "3", "+", "4", "Answer:", "y", "(a)", "7.5"};
  for (int trial = 0; trial < 300; ++trial) {
    const auto n = static_cast<int>(s.uniform_int(1, 8));
    std::vector<Step> steps;
    for (int k = 1; k <= n; ++k) {
      std::string body;
      const auto len = s.uniform_int(1, 6);
      for (int t = 0; t < len; ++t) body += (t ? " " : "") + words[static_cast<std::size_t>(s.uniform_int(0, 8))];
      steps.push_back(Step::make(k, body));
    }
    const auto text = render_steps(steps);
    auto parsed = parse_step_solution(text, answer_line_detector());
    ASSERT_EQ(parsed.steps, steps);

    auto lines = split_lines(text);
    const auto victim = static_cast<std::size_t>(s.uniform_int(0, n - 1));
    if (s.uniform() < 0.5) {
      lines[victim] = lines[victim].substr(lines[victim].find(':') + 2);  // drop the header
      std::string corrupted;
      for (std::size_t k = 0; k < lines.size(); ++k) corrupted += (k ? "\n" : "") + lines[k];
      EXPECT_THROW(parse_step_solution(corrupted, answer_line_detector()), MalformedStep);
    } else {
      lines[victim] = "Step " + std::to_string(victim + 3) + ": z";  // wrong index
      std::string corrupted;
      for (std::size_t k = 0; k < lines.size(); ++k) corrupted += (k ? "\n" : "") + lines[k];
      EXPECT_THROW(parse_step_solution(corrupted, answer_line_detector()), NonContiguousIndex);
    }
  }
}

}  // namespace
}  // namespace psr
