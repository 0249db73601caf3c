// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// nonzero if any fails.

#include <psr/datasets.hpp>
#include <psr/dpo.hpp>
#include <psr/evalkit.hpp>
#include <psr/iteration.hpp>
#include <psr/remote.hpp>
#include <psr/search.hpp>
#include <psr/stub_server.hpp>
#include <psr/toy.hpp>

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

using namespace psr;
namespace fs = std::filesystem;

namespace {

// Tolerances and sizes.
constexpr double kLn2 = 0.69314718055994530942;
constexpr double kLossTol = 1e-12;
constexpr double kGradRelTol = 1e-6;
constexpr double kFdStep = 1e-5;
constexpr int kGradConfigs = 100;
constexpr int kSeeds = 5;
constexpr double kGainQ1 = 10.0;     // points
constexpr double kGainQ09 = 5.0;     // points
constexpr double kDriftQ05 = 5.0;    // points, mean |M_4 - M_1|
constexpr double kCalibTol = 0.03;
constexpr std::size_t kCalibPairs = 2000;

struct Outcome {
  bool pass;
  std::string detail;
};

std::string fmt(const char* f, double x) {
  char buf[64];
  std::snprintf(buf, sizeof buf, f, x);
  return buf;
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("psr-acceptance-" + name);
  fs::remove_all(p);
  fs::create_directories(p);
  return p;
}

// --- 1 --------------------------------------------------------------------

Outcome dpo_exactness() {
  double worst = 0.0;
  rng::Stream s(1);
  for (int k = 0; k < 1000; ++k) {
    const double a = -s.uniform() * 30, b = -s.uniform() * 30;
    worst = std::max(worst, std::abs(dpo_loss({a, b, a, b}, s.uniform() * 10) - kLn2));
    worst = std::max(worst, std::abs(dpo_loss({a, b, -s.uniform() * 30, -s.uniform() * 30}, 0.0) - kLn2));
  }
  synth::ChainEnvironment env;
  auto policy = synth::noisy_policy(3, 0.6, 4);
  const auto ref = ReferencePolicy::freeze(policy);
  StepPrefix root(synth::load_suite("synth:1:1:3").front(), {});
  StepPreferencePair pair{root.question, {}, Step::make(1, env.render_action(root, 0)),
                          Step::make(1, env.render_action(root, 2)), 1, 1, 1};
  const std::vector<ResolvedPair> pairs{resolve_pair(pair, env)};
  worst = std::max(worst, std::abs(mean_dpo_loss(policy, ref, pairs, 0.1) - kLn2));
  return {worst <= kLossTol, "max |loss - ln2| = " + fmt("%.2e", worst)};
}

// --- 2 --------------------------------------------------------------------

Outcome gradient_check() {
  synth::ChainEnvironment env;
  rng::Stream s(2718);
  const auto keys = synth::context_keys(2);
  const auto questions = synth::gen_questions(5, 20, 2);
  double worst = 0.0;
  for (int trial = 0; trial < kGradConfigs; ++trial) {
    ToyPolicy policy(synth::action_vocab()), base(synth::action_vocab());
    for (const auto& k : keys) {
      std::vector<double> r(6), b(6);
      for (auto& x : r) x = (s.uniform() - 0.5) * 6;
      for (auto& x : b) x = (s.uniform() - 0.5) * 6;
      policy.set_row(k, r);
      base.set_row(k, b);
    }
    const auto ref = ReferencePolicy::freeze(base);
    const double beta = 0.05 + s.uniform() * 2.0;
    const auto q = synth::to_question(questions[static_cast<std::size_t>(s.uniform_int(0, 19))]);
    StepPrefix root(q, {});
    const auto c = static_cast<std::size_t>(s.uniform_int(0, 5));
    auto r = static_cast<std::size_t>(s.uniform_int(0, 4));
    if (r >= c) ++r;
    StepPreferencePair pair{q, {}, Step::make(1, env.render_action(root, c)), Step::make(1, env.render_action(root, r)), 1, 1, 1};
    const std::vector<ResolvedPair> pairs{resolve_pair(pair, env)};
    const auto analytic = dpo_gradient(policy, ref, pairs, beta);

    double diff = 0.0, na = 0.0, nn = 0.0;
    for (const auto& [key, row] : policy.rows()) {
      const auto it = analytic.find(key);
      for (std::size_t a = 0; a < row.size(); ++a) {
        ToyPolicy plus = policy, minus = policy;
        plus.mutable_row(key)[a] += kFdStep;
        minus.mutable_row(key)[a] -= kFdStep;
        const double num = (mean_dpo_loss(plus, ref, pairs, beta) - mean_dpo_loss(minus, ref, pairs, beta)) / (2 * kFdStep);
        const double an = it == analytic.end() ? 0.0 : it->second[a];
        diff += (an - num) * (an - num);
        na += an * an;
        nn += num * num;
      }
    }
    worst = std::max(worst, std::sqrt(diff) / std::max({std::sqrt(na), std::sqrt(nn), 1e-300}));
  }
  return {worst < kGradRelTol, "max relative error " + fmt("%.2e", worst) + " over " + std::to_string(kGradConfigs) + " configs"};
}

// --- 3 --------------------------------------------------------------------

Outcome tournament_oracle() {
  StepPrefix root(synth::load_suite("synth:1:1:3").front(), {});
  std::size_t orders = 0;
  bool ok = true;
  for (int w = 2; w <= 6 && ok; ++w) {
    std::vector<int> rank(static_cast<std::size_t>(w));
    std::iota(rank.begin(), rank.end(), 0);
    CandidateSet cands{1, {}};
    for (int k = 0; k < w; ++k) cands.candidates.push_back(Step::make(1, "c" + std::to_string(k)));
    do {
      ++orders;
      // rank 0 is best
      FunctionJudge judge_backend([&](const PairwiseRequest& r) {
        const auto i = static_cast<std::size_t>(std::stoi(r.first.body().substr(1)));
        const auto j = static_cast<std::size_t>(std::stoi(r.second.body().substr(1)));
        return std::string(rank[i] < rank[j] ? "[[A]]" : "[[B]]");
      });
      StepJudge judge(judge_backend);
      const auto t = run_tournament(root, cands, judge, ComparisonMode::ordered_full);
      std::vector<int> brute(static_cast<std::size_t>(w), 0);
      for (int i = 0; i < w; ++i)
        for (int j = 0; j < w; ++j)
          if (i != j)
            brute[static_cast<std::size_t>(i)] +=
                pairwise_O(root, cands.candidates[static_cast<std::size_t>(i)], cands.candidates[static_cast<std::size_t>(j)], judge_backend);
      const auto best = static_cast<std::size_t>(std::min_element(rank.begin(), rank.end()) - rank.begin());
      const auto worst = static_cast<std::size_t>(std::max_element(rank.begin(), rank.end()) - rank.begin());
      ok = t.scores == brute && t.best_idx == best && t.worst_idx == worst && !t.tie &&
           std::accumulate(t.scores.begin(), t.scores.end(), 0) == w * (w - 1) / 2 &&
           t.comparisons.size() == static_cast<std::size_t>(w * (w - 1));
    } while (ok && std::next_permutation(rank.begin(), rank.end()));
  }
  return {ok, std::to_string(orders) + " planted orders, w = 2..6"};
}

// --- 4 --------------------------------------------------------------------

class CyclingGenerator final : public GeneratorBackend {
 public:
  std::string generate(const GenerationRequest& req) override {
    static constexpr std::size_t kCycle[] = {1, 0, 3, 4};
    const auto action = kCycle[calls_++ % 4];
    return Step::make(req.prefix.next_index(), env_.render_action(req.prefix, action)).raw();
  }

 private:
  std::size_t calls_ = 0;
  synth::ChainEnvironment env_;
};

class TieOnceJudge final : public JudgeBackend {
 public:
  TieOnceJudge(int level, int width) : level_(level), budget_(width * (width - 1)) {}
  std::string judge_pair(const PairwiseRequest& r) override {
    if (r.prefix.next_index() == level_ && budget_ > 0) {
      --budget_;
      return "[[A]]";
    }
    return oracle_.judge_pair(r);
  }

 private:
  int level_;
  int budget_;
  OracleJudge oracle_;
};

Outcome rollback_semantics() {
  const auto q = synth::to_question(synth::make_question("r", 5, {{synth::Op::add, 3}, {synth::Op::mul, 2}, {synth::Op::sub, 4}}));
  SearchConfig cfg;
  cfg.width_w = 4;
  auto run = [&] {
    CyclingGenerator gen;
    TieOnceJudge judge(2, 4);
    return search_trajectory(q, cfg, gen, judge, 7, 1);
  };
  const auto a = run();
  const auto b = run();
  const auto replay = replay_trace(a.trace);
  bool stale = false;
  for (const auto& p : a.pairs) stale = stale || (p.level == 1 && p.attempt == 1);
  const bool ok = a.status == TrajectoryStatus::completed && a.rollback_count == 1 && replay.rollbacks == 1 && !stale &&
                  a.pairs.size() == 3 && a.pairs == b.pairs && a.trace == b.trace;
  return {ok, "rollbacks " + std::to_string(replay.rollbacks) + ", pairs " + std::to_string(a.pairs.size()) +
                  (stale ? ", stale level-1 pair present" : ", pre-rollback pair absent")};
}

// --- 5, 6 -----------------------------------------------------------------

IterationConfig closed_loop_config(int seed, double q, const fs::path& dir) {
  IterationConfig cfg;
  cfg.n_iterations = 3;
  cfg.questions_per_iteration = {100, 100, 100};
  cfg.question_pool = "synth:" + std::to_string(100 + seed) + ":1000:3";
  cfg.search.width_w = 4;
  cfg.search.sampling.temperature = 1.0;
  cfg.dpo.learning_rate = 0.3;
  cfg.dpo.beta = 0.5;
  cfg.dpo.epochs = 5;
  cfg.eval_suite.benchmarks = {"synth:" + std::to_string(900 + seed) + ":200:3"};
  cfg.eval_suite.judge_test.clear();
  cfg.init.correct_mass = 0.6;
  cfg.init.seed = static_cast<std::uint64_t>(seed);
  cfg.judge.accuracy_q = q;
  cfg.master_seed = static_cast<std::uint64_t>(seed);
  cfg.run_dir = (dir / ("seed" + std::to_string(seed))).string();
  return cfg;
}

std::vector<std::vector<double>> closed_loop_curves(double q, const std::string& tag) {
  const auto dir = scratch(tag);
  std::vector<std::vector<double>> curves;
  for (int seed = 0; seed < kSeeds; ++seed) {
    const auto cfg = closed_loop_config(seed, q, dir);
    curves.push_back(accuracy_curve(run_pipeline(cfg, initial_snapshot(cfg))));
  }
  fs::remove_all(dir);
  return curves;
}

std::string curve_text(const std::vector<double>& c) {
  std::string s;
  for (std::size_t k = 0; k < c.size(); ++k) s += (k ? ">" : "") + fmt("%.1f", 100 * c[k]);
  return s;
}

Outcome closed_loop_q1() {
  bool ok = true;
  std::string detail;
  for (const auto& c : closed_loop_curves(1.0, "q1")) {
    const bool monotone = std::is_sorted(c.begin(), c.end());
    ok = ok && c.size() == 4 && monotone && 100 * (c.back() - c.front()) >= kGainQ1;
    detail += (detail.empty() ? "" : " ") + curve_text(c);
  }
  return {ok, detail};
}

Outcome judge_noise() {
  bool ok = true;
  std::string detail = "q=0.9:";
  for (const auto& c : closed_loop_curves(0.9, "q09")) {
    ok = ok && c.size() == 4 && 100 * (c.back() - c.front()) >= kGainQ09;
    detail += " " + fmt("%+.1f", 100 * (c.back() - c.front()));
  }
  double drift = 0.0;
  for (const auto& c : closed_loop_curves(0.5, "q05")) drift += std::abs(100 * (c.back() - c.front()));
  drift /= kSeeds;
  ok = ok && drift < kDriftQ05;
  return {ok, detail + "; q=0.5 mean |delta| " + fmt("%.2f", drift)};
}

// --- 7 --------------------------------------------------------------------

Outcome tts_direction() {
  bool ok = true;
  std::string detail;
  for (int seed = 0; seed < kSeeds; ++seed) {
    auto policy = std::make_shared<ToyPolicy>(synth::noisy_policy(3, 0.6, static_cast<std::uint64_t>(seed)));
    ToyModel gen(policy, std::make_shared<synth::ChainEnvironment>(), ToyJudgeConfig{1.0, 0});
    OracleJudge oracle;
    EvalConfig cfg;
    cfg.tts_n = 6;
    cfg.tts_sampling.temperature = 0.5;
    cfg.seed = static_cast<std::uint64_t>(seed);
    const auto questions = load_benchmark("synth:" + std::to_string(700 + seed) + ":200:3");
    const double greedy = eval_accuracy(gen, questions, cfg).accuracy();
    const double tts = tts_eval(gen, oracle, questions, cfg).accuracy();
    ok = ok && tts >= greedy;
    detail += (detail.empty() ? "" : " ") + fmt("%.1f", 100 * greedy) + "/" + fmt("%.1f", 100 * tts);
  }
  return {ok, "greedy/tts " + detail};
}

// --- 8 --------------------------------------------------------------------

/// Oracle verdicts, except that a fixed 25% of pairs (keyed on the unordered
/// pair) get a position-only answer and so flip when the order is swapped.
class SwapFlipJudge final : public JudgeBackend {
 public:
  explicit SwapFlipJudge(double p) : p_(p) {}
  std::string judge_pair(const PairwiseRequest& r) override {
    const auto& lo = std::min(r.first.body(), r.second.body());
    const auto& hi = std::max(r.first.body(), r.second.body());
    const auto key = rng::derive(rng::fnv1a(r.prefix.question.id), lo + '\x1f' + hi);
    if (rng::to_unit(key) < p_) return "[[A]]";
    return oracle_.judge_pair(r);
  }

 private:
  double p_;
  OracleJudge oracle_;
};

Outcome judge_calibration() {
  const auto records = synthetic_eft_records(kCalibPairs, 8);
  SwapFlipJudge flip(0.25);
  const auto m = consistency_agreement(records, flip);
  auto policy = std::make_shared<ToyPolicy>(synth::uniform_mass_policy(3, 0.5));
  ToyModel random_judge(policy, std::make_shared<synth::ChainEnvironment>(), ToyJudgeConfig{0.5, 99});
  const double acc = judge_accuracy(records, random_judge);
  const bool ok = std::abs(m.consistency - 0.75) <= kCalibTol && std::abs(acc - 0.5) <= kCalibTol;
  return {ok, "consistency " + fmt("%.4f", m.consistency) + ", random accuracy " + fmt("%.4f", acc)};
}

// --- 9 --------------------------------------------------------------------

Outcome eft_filter() {
  auto policy = std::make_shared<ToyPolicy>(synth::noisy_policy(3, 0.5, 2));
  ToyModel gen(policy, std::make_shared<synth::ChainEnvironment>(), ToyJudgeConfig{1.0, 0});
  const auto questions = load_benchmark("synth:8:20:3");
  OracleScorer scorer;
  EFTBuildConfig cfg;
  cfg.num_iterations = 20;
  cfg.seed = 3;

  ScriptedText always_a({"The first step is right. [[A]]"});
  EFTBuildStats biased;
  const auto none = build_eft(questions, scorer, gen, always_a, cfg, &biased);

  OracleJudge oracle;
  EFTBuildStats kept;
  const auto records = build_eft(questions, scorer, gen, oracle, cfg, &kept);
  std::map<std::string, std::string> argmax;
  for (const auto& q : questions)
    for (const auto& raw : expand_question(q, scorer, gen, cfg, rng::derive(rng::derive(cfg.seed, q.id), {0})))
      argmax[render_steps(raw.prefix.steps) + '\x1f' + q.id + '\x1f' + std::min(raw.best.body(), raw.worst.body()) +
             '\x1f' + std::max(raw.best.body(), raw.worst.body())] = raw.best.body();
  std::size_t matched = 0;
  for (const auto& r : records) {
    const auto key = render_steps(r.prefix.steps) + '\x1f' + r.prefix.question.id + '\x1f' +
                     std::min(r.cand_a.body(), r.cand_b.body()) + '\x1f' + std::max(r.cand_a.body(), r.cand_b.body());
    const auto it = argmax.find(key);
    const auto& gold = r.gold == Verdict::first ? r.cand_a : r.cand_b;
    if (it != argmax.end() && it->second == gold.body()) ++matched;
  }
  const bool ok = none.empty() && biased.raw_pairs > 0 && !records.empty() && matched == records.size();
  return {ok, "inconsistent annotator kept " + std::to_string(none.size()) + " of " + std::to_string(biased.raw_pairs) +
                  "; oracle annotator " + std::to_string(matched) + "/" + std::to_string(records.size()) + " gold = argmax"};
}

// --- 10 -------------------------------------------------------------------

struct Killed : std::runtime_error {
  Killed() : std::runtime_error("killed") {}
};

Outcome determinism_resume() {
  const auto dir = scratch("determinism");
  auto make = [&](const std::string& name, std::size_t parallelism) {
    IterationConfig cfg = closed_loop_config(3, 1.0, dir);
    cfg.questions_per_iteration = {60, 60, 60};
    cfg.eval_suite.benchmarks = {"synth:950:100:3"};
    cfg.eval_suite.judge_test = "synth:951:100:3";
    cfg.parallelism = parallelism;
    cfg.run_dir = (dir / name).string();
    return cfg;
  };
  auto text = [](const IterationConfig& c) {
    return manifest_without_timing(nlohmann::json::parse(read_text_file(c.run_dir + "/manifest.json"))).dump();
  };
  const auto a = make("a", 1), b = make("b", 4), k1 = make("k1", 2), k2 = make("k2", 1);
  run_pipeline(a, initial_snapshot(a));
  run_pipeline(b, initial_snapshot(b));

  PipelineHooks between;
  between.after_iteration = [](int tag) { if (tag == 3) throw Killed(); };
  PipelineHooks mid;
  mid.after_ppd = [](int tag) { if (tag == 4) throw Killed(); };
  bool killed1 = false, killed2 = false;
  try { run_pipeline(k1, initial_snapshot(k1), false, between); } catch (const Killed&) { killed1 = true; }
  try { run_pipeline(k2, initial_snapshot(k2), false, mid); } catch (const Killed&) { killed2 = true; }
  run_pipeline(k1, initial_snapshot(k1), true);
  run_pipeline(k2, initial_snapshot(k2), true);

  const auto ref = text(a);
  const bool same_ab = ref == text(b) &&
                       read_text_file(a.run_dir + "/M_4/policy.snapshot") == read_text_file(b.run_dir + "/M_4/policy.snapshot");
  const bool resumed = killed1 && killed2 && ref == text(k1) && ref == text(k2);
  fs::remove_all(dir);
  return {same_ab && resumed, std::string("repeat runs ") + (same_ab ? "identical" : "differ") + ", resumed runs " +
                                  (resumed ? "identical" : "differ")};
}

// --- 11 -------------------------------------------------------------------

std::string random_text(rng::Stream& s, std::size_t max_len) {
  static const std::vector<std::string> pieces = {"a", "Z", "7", " ", "\"", "\\", "{", "}", "é", "∑", "√2", "[[B]]", "\t", "\n"};
  std::string out = "x";
  const auto n = static_cast<std::size_t>(s.uniform_int(0, static_cast<std::int64_t>(max_len)));
  for (std::size_t k = 0; k < n; ++k) out += pieces[static_cast<std::size_t>(s.uniform_int(0, static_cast<std::int64_t>(pieces.size()) - 1))];
  return out;
}

std::string one_line(rng::Stream& s, std::size_t max_len) {
  auto t = random_text(s, max_len);
  std::replace(t.begin(), t.end(), '\n', ' ');
  return t;
}

Question random_question(rng::Stream& s) {
  Question q{one_line(s, 8), random_text(s, 40), std::nullopt, s.uniform() < 0.5 ? QuestionSource::synthetic : QuestionSource::external};
  if (s.uniform() < 0.5) q.gold_answer = one_line(s, 5);
  return q;
}

std::vector<Step> random_steps(rng::Stream& s, std::size_t n) {
  std::vector<Step> out;
  for (std::size_t k = 0; k < n; ++k) out.push_back(Step::make(static_cast<int>(k + 1), one_line(s, 20)));
  return out;
}

Outcome formats_and_remote() {
  rng::Stream s(11);
  bool roundtrip = true;
  std::size_t n_records = 0;
  for (int trial = 0; trial < 300 && roundtrip; ++trial) {
    std::vector<IFTRecord> ift;
    std::vector<EFTRecord> eft;
    std::vector<StepPreferencePair> ppd;
    const auto n = static_cast<std::size_t>(s.uniform_int(0, 6));
    for (std::size_t k = 0; k < n; ++k) {
      ift.push_back(IFTRecord{random_question(s), random_steps(s, static_cast<std::size_t>(s.uniform_int(1, 5))), one_line(s, 6)});
      StepPrefix p(random_question(s), random_steps(s, static_cast<std::size_t>(s.uniform_int(0, 3))));
      eft.push_back(EFTRecord{p, Step::make(p.next_index(), "A " + one_line(s, 10)), Step::make(p.next_index(), "B " + one_line(s, 10)),
                              s.uniform() < 0.5 ? Verdict::first : Verdict::second, random_text(s, 30),
                              static_cast<Provenance>(s.uniform_int(0, 2))});
      const auto m = static_cast<std::size_t>(s.uniform_int(0, 4));
      const int level = static_cast<int>(m) + 1;
      ppd.push_back(StepPreferencePair{random_question(s), random_steps(s, m), Step::make(level, one_line(s, 20)),
                                       Step::make(level, one_line(s, 20)), level, static_cast<int>(s.uniform_int(1, 5)),
                                       static_cast<int>(s.uniform_int(1, 3))});
    }
    n_records += 3 * n;
    roundtrip = from_jsonl<IFTRecord>(to_jsonl(ift)) == ift && from_jsonl<EFTRecord>(to_jsonl(eft)) == eft &&
                from_jsonl<StepPreferencePair>(to_jsonl(ppd)) == ppd;
  }

  RemoteBackendConfig rc;
  rc.timeout_ms = 2000;
  rc.backoff_base_ms = 5;
  rc.backoff_cap_ms = 50;
  bool retry_ok = false, timeout_ok = false;
  {
    StubServer server(R"({"responses": ["Step 1: ok"], "schedule": [429, 429]})");
    server.start();
    rc.base_url = server.base_url();
    RemoteBackend client(rc);
    retry_ok = client.complete("ping", SamplingParams{}) == "Step 1: ok" && client.backoff_log().size() == 2 &&
               server.request_count() == 3;
  }
  {
    StubServer server(R"({"delay_ms": 500})");
    server.start();
    rc.base_url = server.base_url();
    rc.timeout_ms = 100;
    rc.max_retries = 1;
    RemoteBackend client(rc);
    try {
      client.complete("ping", SamplingParams{});
    } catch (const Timeout&) {
      timeout_ok = true;
    } catch (const Error&) {
    }
  }
  return {roundtrip && retry_ok && timeout_ok, std::to_string(n_records) + " records round-tripped" +
                                                   (roundtrip ? "" : " (mismatch)") + ", 429 retry " +
                                                   (retry_ok ? "ok" : "failed") + ", timeout " + (timeout_ok ? "ok" : "failed")};
}

// --- 12 -------------------------------------------------------------------

Outcome statistics_exactness() {
  auto sol = [](std::vector<std::string> bodies) {
    std::vector<Step> steps;
    for (std::size_t k = 0; k < bodies.size(); ++k) steps.push_back(Step::make(static_cast<int>(k + 1), bodies[k]));
    return Solution::make("s", steps, answer_line_detector());
  };
  // 6 steps, 10 whitespace tokens.
  const auto st = step_statistics({sol({"a b", "c"}), sol({"d e f", "g", "h i", "j"})});
  const auto empty = step_statistics({sol({}), sol({})});
  const bool ok = st.mean_step_num == 3.0 && st.mean_step_len == 10.0 / 6.0 && empty.mean_step_num == 0.0 &&
                  !empty.mean_step_len.has_value();
  return {ok, "mean steps " + fmt("%.17g", *st.mean_step_num) + ", mean length " + fmt("%.17g", *st.mean_step_len)};
}

}  // namespace

int main() {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
      {"dpo loss is ln 2 at theta = ref and at beta = 0", dpo_exactness},
      {"analytic dpo gradient matches central differences", gradient_check},
      {"tournament scores match brute force on planted orders", tournament_oracle},
      {"a single tie at level 2 rolls back once", rollback_semantics},
      {"closed-loop improvement with q = 1.0", closed_loop_q1},
      {"judge-noise sensitivity", judge_noise},
      {"tts accuracy at least greedy with an oracle judge", tts_direction},
      {"judge metrics calibration", judge_calibration},
      {"eft double-judge filter", eft_filter},
      {"determinism and resumability", determinism_resume},
      {"jsonl round-trip and remote contract", formats_and_remote},
      {"step statistics exactness", statistics_exactness},
  };
  int failures = 0;
  for (std::size_t k = 0; k < criteria.size(); ++k) {
    const auto started = std::chrono::steady_clock::now();
    Outcome o{false, ""};
    try {
      o = criteria[k].second();
    } catch (const std::exception& e) {
      o = {false, std::string("threw ") + e.what()};
    }
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    failures += !o.pass;
    std::printf("%s %2zu  %s: %s (%.1fs)\n", o.pass ? "PASS" : "FAIL", k + 1, criteria[k].first.c_str(), o.detail.c_str(), secs);
    std::fflush(stdout);
  }
  return failures == 0 ? 0 : 1;
}
