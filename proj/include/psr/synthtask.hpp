#pragma once

// Synthetic chain-arithmetic task with a ground-truth oracle.
//
// A question is a start value followed by `depth` operations. The rendered
// question text fully determines the trace, so every oracle below can work
// from a `StepPrefix` alone.
//
// Step grammar:
//   intermediate step   "<v> <op> <a> = <r>"
//   last step           "<v> <op> <a> = <r>. Answer: <r>"
//   bare answer         "Answer: <x>"
//   restatement         "<v> = <v>"  (only produced past the last operation)
//
// Correctness is local: the expected value of step l applies operation l to
// the value stated by step l-1 (or to the start value), so an error earlier
// in the prefix does not make every later step wrong.

#include <psr/core.hpp>
#include <psr/error.hpp>
#include <psr/policy.hpp>
#include <psr/rng.hpp>

#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <limits>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace psr::synth {

enum class Op { add, sub, mul };

struct Operation {
  Op op;
  std::int64_t operand;
  friend bool operator==(const Operation&, const Operation&) = default;
};

inline std::int64_t apply(Op op, std::int64_t v, std::int64_t a) {
  switch (op) {
    case Op::add: return v + a;
    case Op::sub: return v - a;
    case Op::mul: return v * a;
  }
  return v;
}

inline char symbol(Op op) {
  switch (op) {
    case Op::add: return '+';
    case Op::sub: return '-';
    case Op::mul: return '*';
  }
  return '?';
}

inline std::string op_name(Op op) {
  switch (op) {
    case Op::add: return "add";
    case Op::sub: return "sub";
    case Op::mul: return "mul";
  }
  return "?";
}

/// The operation a "wrong operation" step applies instead of `op`.
inline Op confused_op(Op op) { return op == Op::add ? Op::sub : Op::add; }

struct SynthQuestion {
  std::string id;
  std::int64_t start_value = 0;
  std::vector<Operation> ops;
  std::vector<std::int64_t> gold_trace;
  std::int64_t gold_answer = 0;

  std::size_t depth() const { return ops.size(); }
  friend bool operator==(const SynthQuestion&, const SynthQuestion&) = default;
};

inline SynthQuestion make_question(std::string id, std::int64_t start, std::vector<Operation> ops) {
  if (ops.empty()) throw InvalidArgument("a synthetic question needs at least one operation");
  SynthQuestion q{std::move(id), start, std::move(ops), {}, 0};
  std::int64_t v = start;
  for (const auto& o : q.ops) {
    v = apply(o.op, v, o.operand);
    q.gold_trace.push_back(v);
  }
  q.gold_answer = v;
  return q;
}

inline constexpr std::int64_t kValueBound = 1'000'000;

inline std::vector<SynthQuestion> gen_questions(std::uint64_t seed, std::size_t n, std::size_t depth) {
  if (depth < 1) throw InvalidArgument("depth must be at least 1");
  std::vector<SynthQuestion> out;
  out.reserve(n);
  for (std::size_t k = 0; k < n; ++k) {
    rng::Stream s(rng::derive(seed, {k}));
    const auto start = s.uniform_int(0, 20);
    std::vector<Operation> ops;
    std::int64_t v = start;
    while (ops.size() < depth) {
      Operation o{static_cast<Op>(s.uniform_int(0, 2)), s.uniform_int(1, 9)};
      const auto next = apply(o.op, v, o.operand);
      if (std::llabs(next) > kValueBound) continue;
      ops.push_back(o);
      v = next;
    }
    out.push_back(make_question("synth-" + std::to_string(seed) + "-" + std::to_string(k), start,
                                std::move(ops)));
  }
  return out;
}

inline std::string render_text(const SynthQuestion& q) {
  std::string text = "Start with " + std::to_string(q.start_value) + ".";
  for (const auto& o : q.ops) {
    switch (o.op) {
      case Op::add: text += " Add " + std::to_string(o.operand) + "."; break;
      case Op::sub: text += " Subtract " + std::to_string(o.operand) + "."; break;
      case Op::mul: text += " Multiply by " + std::to_string(o.operand) + "."; break;
    }
  }
  text += " What is the final value?";
  return text;
}

inline Question to_question(const SynthQuestion& q) {
  return Question{q.id, render_text(q), std::to_string(q.gold_answer), QuestionSource::synthetic};
}

inline std::vector<Question> to_questions(const std::vector<SynthQuestion>& qs) {
  std::vector<Question> out;
  out.reserve(qs.size());
  for (const auto& q : qs) out.push_back(to_question(q));
  return out;
}

inline std::optional<std::int64_t> parse_int(std::string_view s) {
  s = trim_view(s);
  if (s.empty()) return std::nullopt;
  std::int64_t v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || ptr != s.data() + s.size()) return std::nullopt;
  return v;
}

/// Recovers the question structure from its rendered text.
inline SynthQuestion parse_question(const Question& question) {
  auto fail = [&](const std::string& why) -> NotSynthetic {
    return NotSynthetic("question '" + question.id + "' is not a synthetic chain question (" + why + ")");
  };
  if (question.source != QuestionSource::synthetic) throw fail("source is external");
  std::string_view t = question.text;
  constexpr std::string_view kStart = "Start with ";
  constexpr std::string_view kEnd = " What is the final value?";
  if (t.substr(0, kStart.size()) != kStart) throw fail("missing start clause");
  if (t.size() < kEnd.size() || t.substr(t.size() - kEnd.size()) != kEnd) throw fail("missing final clause");
  t = t.substr(kStart.size(), t.size() - kStart.size() - kEnd.size());
  std::vector<std::string_view> clauses;
  while (!t.empty()) {
    auto dot = t.find('.');
    if (dot == std::string_view::npos) throw fail("unterminated clause");
    clauses.push_back(trim_view(t.substr(0, dot)));
    t = t.substr(dot + 1);
  }
  if (clauses.size() < 2) throw fail("no operations");
  auto start = parse_int(clauses[0]);
  if (!start) throw fail("bad start value");
  std::vector<Operation> ops;
  for (std::size_t k = 1; k < clauses.size(); ++k) {
    auto c = clauses[k];
    std::optional<Op> op;
    std::string_view rest;
    for (auto [word, o] : {std::pair<std::string_view, Op>{"Add ", Op::add},
                           {"Subtract ", Op::sub},
                           {"Multiply by ", Op::mul}}) {
      if (c.substr(0, word.size()) == word) {
        op = o;
        rest = c.substr(word.size());
      }
    }
    auto a = parse_int(rest);
    if (!op || !a) throw fail("bad operation clause '" + std::string(c) + "'");
    ops.push_back({*op, *a});
  }
  return make_question(question.id, *start, std::move(ops));
}

inline std::vector<SynthQuestion> parse_questions(const std::vector<Question>& qs) {
  std::vector<SynthQuestion> out;
  for (const auto& q : qs) out.push_back(parse_question(q));
  return out;
}

/// "synth:<seed>:<n>:<depth>"
struct SuiteSpec {
  std::uint64_t seed;
  std::size_t n;
  std::size_t depth;
};

inline bool is_suite_spec(std::string_view s) { return s.substr(0, 6) == "synth:"; }

inline SuiteSpec parse_suite_spec(std::string_view s) {
  if (!is_suite_spec(s)) throw InvalidArgument("not a synthetic suite spec: '" + std::string(s) + "'");
  std::vector<std::string_view> parts;
  std::string_view rest = s.substr(6);
  while (true) {
    auto c = rest.find(':');
    parts.push_back(rest.substr(0, c));
    if (c == std::string_view::npos) break;
    rest = rest.substr(c + 1);
  }
  if (parts.size() != 3) throw InvalidArgument("suite spec must be synth:<seed>:<n>:<depth>");
  auto seed = parse_int(parts[0]);
  auto n = parse_int(parts[1]);
  auto depth = parse_int(parts[2]);
  if (!seed || !n || !depth || *seed < 0 || *n < 1 || *depth < 1)
    throw InvalidArgument("bad numbers in suite spec '" + std::string(s) + "'");
  return {static_cast<std::uint64_t>(*seed), static_cast<std::size_t>(*n), static_cast<std::size_t>(*depth)};
}

inline std::vector<Question> load_suite(std::string_view spec) {
  auto s = parse_suite_spec(spec);
  return to_questions(gen_questions(s.seed, s.n, s.depth));
}

// ---------------------------------------------------------------------------
// States and step assessment
// ---------------------------------------------------------------------------

/// What a stated step claims: a value, and whether it ends the solution.
struct StepClaim {
  std::int64_t value;
  bool terminal;
};

inline std::optional<StepClaim> read_claim(std::string_view body) {
  body = trim_view(body);
  if (auto ans = answer_marker_value(body)) {
    auto v = parse_int(*ans);
    if (!v) return std::nullopt;
    return StepClaim{*v, true};
  }
  auto eq = body.rfind('=');
  if (eq == std::string_view::npos) return std::nullopt;
  auto v = parse_int(body.substr(eq + 1));
  if (!v) return std::nullopt;
  return StepClaim{*v, false};
}

/// Task state reached after a prefix: the current value and the next level.
struct TaskState {
  SynthQuestion question;
  std::int64_t value;
  std::size_t level;  // 1-based level of the next step

  bool past_end() const { return level > question.depth(); }
  bool last_op() const { return level == question.depth(); }
  const Operation& next_op() const { return question.ops.at(level - 1); }

  std::int64_t expected_value() const {
    return past_end() ? value : apply(next_op().op, value, next_op().operand);
  }
  bool expects_terminal() const { return level >= question.depth(); }
};

inline TaskState state_after(const StepPrefix& prefix) {
  TaskState st{parse_question(prefix.question), 0, prefix.steps.size() + 1};
  st.value = st.question.start_value;
  for (const auto& s : prefix.steps) {
    auto c = read_claim(s.body());
    if (!c) throw NotSynthetic("prefix step " + std::to_string(s.index()) + " states no value");
    if (c->terminal) throw NotSynthetic("prefix step " + std::to_string(s.index()) + " is terminal");
    st.value = c->value;
  }
  return st;
}

/// Penalty added to the value error of a step of the wrong kind (answering
/// early, or continuing past the last operation).
inline constexpr double kKindMismatchPenalty = 10.0;

struct Assessment {
  bool correct;
  double abs_error;  // +inf for text that states no value
};

inline Assessment assess(const TaskState& st, const Step& step) {
  auto c = read_claim(step.body());
  if (!c) return {false, std::numeric_limits<double>::infinity()};
  double err = std::fabs(static_cast<double>(c->value - st.expected_value()));
  if (c->terminal != st.expects_terminal()) err += kKindMismatchPenalty;
  return {err == 0.0, err};
}

inline Assessment assess(const StepPrefix& prefix, const Step& step) {
  return assess(state_after(prefix), step);
}

enum class Preference { first, second };

/// Total preorder on candidates at a fixed prefix: smaller error is better
/// (so every correct step beats every incorrect one); equal errors prefer the
/// first argument.
inline Preference oracle_compare(const TaskState& st, const Step& a, const Step& b) {
  return assess(st, b).abs_error < assess(st, a).abs_error ? Preference::second : Preference::first;
}

inline Preference oracle_compare(const StepPrefix& prefix, const Step& a, const Step& b) {
  return oracle_compare(state_after(prefix), a, b);
}

/// Smooth surrogate for a process reward model: 1 for a correct step,
/// otherwise 1 / (1 + abs_error).
inline double oracle_prm(const StepPrefix& prefix, const Step& step) {
  auto a = assess(prefix, step);
  if (a.correct) return 1.0;
  return 1.0 / (1.0 + a.abs_error);
}

// ---------------------------------------------------------------------------
// Toy environment
// ---------------------------------------------------------------------------

/// Action vocabulary of the toy policy. Every action renders to a distinct
/// body in every state, and `apply` is the one correct action everywhere.
inline const std::vector<std::string>& action_vocab() {
  static const std::vector<std::string> v = {"apply",    "over_by_one",      "under_by_one",
                                             "wrong_op", "premature_answer", "flip_terminal"};
  return v;
}

inline constexpr std::size_t kCorrectAction = 0;

inline std::string expression(std::int64_t v, Op op, std::int64_t a, std::int64_t r) {
  return std::to_string(v) + " " + symbol(op) + " " + std::to_string(a) + " = " + std::to_string(r);
}

inline std::string answer_suffix(std::int64_t r) { return ". Answer: " + std::to_string(r); }

inline std::string render_action(const TaskState& st, std::size_t action) {
  const auto v = st.value;
  if (st.past_end()) {
    switch (action) {
      case 0: return "Answer: " + std::to_string(v);
      case 1: return "Answer: " + std::to_string(v + 1);
      case 2: return "Answer: " + std::to_string(v - 1);
      case 3: return "Answer: " + std::to_string(v + 2);
      case 4: return std::to_string(v) + " = " + std::to_string(v);
      case 5: return expression(v, Op::add, 0, v);
    }
    throw UnknownAction("action " + std::to_string(action));
  }
  const auto& o = st.next_op();
  const auto r = apply(o.op, v, o.operand);
  const bool last = st.last_op();
  auto with_answer = [&](std::string e, std::int64_t x, bool add) { return add ? e + answer_suffix(x) : e; };
  switch (action) {
    case 0: return with_answer(expression(v, o.op, o.operand, r), r, last);
    case 1: return with_answer(expression(v, o.op, o.operand, r + 1), r + 1, last);
    case 2: return with_answer(expression(v, o.op, o.operand, r - 1), r - 1, last);
    case 3: {
      const auto wrong = confused_op(o.op);
      const auto rw = apply(wrong, v, o.operand);
      return with_answer(expression(v, wrong, o.operand, rw), rw, last);
    }
    case 4: return "Answer: " + std::to_string(v);
    case 5: return with_answer(expression(v, o.op, o.operand, r), r, !last);
  }
  throw UnknownAction("action " + std::to_string(action));
}

/// Context key "L<level>:<op>" while operations remain, "end" afterwards.
inline std::string context_key(const TaskState& st) {
  if (st.past_end()) return "end";
  return "L" + std::to_string(st.level) + ":" + op_name(st.next_op().op);
}

class ChainEnvironment final : public ToyEnvironment {
 public:
  std::vector<std::string> vocab() const override { return action_vocab(); }
  std::string context_key(const StepPrefix& prefix) const override {
    return synth::context_key(state_after(prefix));
  }
  std::string render_action(const StepPrefix& prefix, std::size_t action) const override {
    return synth::render_action(state_after(prefix), action);
  }
};

/// Every context key reachable by questions of `depth` operations.
inline std::vector<std::string> context_keys(std::size_t depth) {
  std::vector<std::string> keys;
  for (std::size_t l = 1; l <= depth; ++l)
    for (Op op : {Op::add, Op::sub, Op::mul}) keys.push_back("L" + std::to_string(l) + ":" + op_name(op));
  keys.push_back("end");
  return keys;
}

/// Policy whose rows put, on average, `correct_mass` probability on the
/// correct action. A seeded half of the rows get `correct_mass + spread`, the
/// other half `correct_mass - spread` (a middle row keeps `correct_mass` when
/// the row count is odd). In every row 80% of the remaining mass sits on one
/// seeded distractor and the rest is spread evenly, so low-mass rows have a
/// wrong argmax.
inline ToyPolicy noisy_policy(std::size_t depth, double correct_mass, std::uint64_t seed,
                              double spread = 0.3) {
  if (!(correct_mass > 0.0 && correct_mass < 1.0)) throw InvalidArgument("correct_mass must lie in (0, 1)");
  const double hi = correct_mass + spread, lo = correct_mass - spread;
  if (!(lo > 0.0 && hi < 1.0)) throw InvalidArgument("correct_mass +/- spread must stay inside (0, 1)");
  const auto& vocab = action_vocab();
  ToyPolicy p(vocab, 1);
  auto keys = context_keys(depth);
  rng::Stream s(rng::derive(seed, "noisy_policy"));
  // Fisher-Yates with the portable stream.
  std::vector<std::size_t> order(keys.size());
  for (std::size_t k = 0; k < order.size(); ++k) order[k] = k;
  for (std::size_t k = order.size(); k > 1; --k)
    std::swap(order[k - 1], order[static_cast<std::size_t>(s.uniform_int(0, static_cast<std::int64_t>(k - 1)))]);
  const std::size_t half = keys.size() / 2;
  for (std::size_t r = 0; r < order.size(); ++r) {
    double mass = correct_mass;
    if (r < half) mass = hi;
    else if (r >= keys.size() - half) mass = lo;
    const auto distractor = static_cast<std::size_t>(s.uniform_int(1, static_cast<std::int64_t>(vocab.size() - 1)));
    const double rest = 1.0 - mass;
    const double other = rest * 0.2 / static_cast<double>(vocab.size() - 2);
    std::vector<double> logits(vocab.size());
    for (std::size_t a = 0; a < vocab.size(); ++a) {
      const double prob = a == kCorrectAction ? mass : a == distractor ? rest * 0.8 : other;
      logits[a] = std::log(prob);
    }
    p.set_row(keys[order[r]], std::move(logits));
  }
  return p;
}

/// Policy that puts probability `correct_mass` on the correct action in every
/// row and spreads the rest uniformly.
inline ToyPolicy uniform_mass_policy(std::size_t depth, double correct_mass) {
  const auto& vocab = action_vocab();
  ToyPolicy p(vocab, 1);
  const double other = (1.0 - correct_mass) / static_cast<double>(vocab.size() - 1);
  for (const auto& key : context_keys(depth)) {
    std::vector<double> logits(vocab.size());
    for (std::size_t a = 0; a < vocab.size(); ++a) {
      const double prob = a == kCorrectAction ? correct_mass : other;
      logits[a] = prob > 0.0 ? std::log(prob) : -50.0;
    }
    p.set_row(key, std::move(logits));
  }
  return p;
}

}  // namespace psr::synth
