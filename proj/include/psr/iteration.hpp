#pragma once

// Iterated self-rewarding: M_n searches and judges its own step candidates to
// produce PPD(M_n), step-wise DPO against a frozen copy of M_n yields M_{n+1},
// and every snapshot is evaluated. Everything is persisted under one run
// directory:
//
//   run_dir/manifest.json
//   run_dir/M_n/{policy.snapshot, ppd.jsonl, trace.jsonl, eval.json}

#include <psr/datasets.hpp>
#include <psr/dpo.hpp>
#include <psr/error.hpp>
#include <psr/evalkit.hpp>
#include <psr/parallel.hpp>
#include <psr/policy.hpp>
#include <psr/rng.hpp>
#include <psr/search.hpp>
#include <psr/synthtask.hpp>
#include <psr/toy.hpp>

#include <json.hpp>

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <memory>
#include <numeric>
#include <optional>
#include <string>
#include <vector>

namespace psr {

inline std::string tag_label(int n) { return "M_" + std::to_string(n); }

struct ModelSnapshot {
  int tag = 1;
  std::optional<int> parent_tag;
  std::shared_ptr<const ToyPolicy> policy;  // null for a remote model
  std::string remote_model;

  std::string label() const { return tag_label(tag); }
};

/// Initial toy policy M_1.
struct ToyInitConfig {
  double correct_mass = 0.6;
  double spread = 0.3;
  std::uint64_t seed = 0;
};

struct IterationConfig {
  int n_iterations = 3;
  std::vector<int> questions_per_iteration = {400, 800, 1200};
  std::string question_pool = "synth:1:2400:3";
  SearchConfig search;
  DPOConfig dpo;
  EvalConfig eval_suite;
  bool eval_enabled = true;
  ToyInitConfig init;
  ToyJudgeConfig judge;
  std::string run_dir = "run";
  std::uint64_t master_seed = 0;
  std::size_t parallelism = 1;  // questions searched concurrently

  void validate() const {
    if (n_iterations < 0) throw ConfigError("iterations must be non-negative");
    if (static_cast<int>(questions_per_iteration.size()) != n_iterations)
      throw ConfigError("questions_per_iteration lists " + std::to_string(questions_per_iteration.size()) +
                        " counts for " + std::to_string(n_iterations) + " iterations");
    for (int n : questions_per_iteration)
      if (n < 1) throw ConfigError("questions_per_iteration entries must be positive");
    if (parallelism < 1) throw ConfigError("parallelism must be at least 1");
    search.validate();
    dpo.validate();
    judge.validate();
    if (eval_enabled) eval_suite.validate();
  }
};

// ---------------------------------------------------------------------------
// Config echo and hashing
// ---------------------------------------------------------------------------

inline nlohmann::json to_json(const SamplingParams& p) {
  return {{"temperature", p.temperature}, {"top_p", p.top_p}, {"max_tokens", p.max_tokens}};
}

inline SamplingParams sampling_from_json(const nlohmann::json& j) {
  return {j.at("temperature").get<double>(), j.at("top_p").get<double>(), j.at("max_tokens").get<int>()};
}

/// Everything that influences results. Paths and parallelism are left out so
/// equal runs in different directories hash equally.
inline nlohmann::json config_echo(const IterationConfig& c) {
  return {
      {"iterations", c.n_iterations},
      {"questions_per_iteration", c.questions_per_iteration},
      {"pool", c.question_pool},
      {"master_seed", c.master_seed},
      {"search",
       {{"width", c.search.width_w},
        {"max_steps", c.search.max_steps},
        {"max_rollbacks", c.search.max_rollbacks},
        {"sampling", to_json(c.search.sampling)},
        {"comparison_mode", to_string(c.search.comparison_mode)},
        {"generation_template", c.search.generation_template.text()},
        {"judge_template", c.search.judge.tmpl.text()},
        {"unparseable", c.search.judge.unparseable == UnparseablePolicy::discard ? "discard" : "count_as_loss"}}},
      {"dpo",
       {{"beta", c.dpo.beta},
        {"learning_rate", c.dpo.learning_rate},
        {"epochs", c.dpo.epochs},
        {"batch_size", c.dpo.batch_size}}},
      {"eval",
       {{"enabled", c.eval_enabled},
        {"mode", to_string(c.eval_suite.mode)},
        {"tts_n", c.eval_suite.tts_n},
        {"tts_sampling", to_json(c.eval_suite.tts_sampling)},
        {"benchmarks", c.eval_suite.benchmarks},
        {"judge_test", c.eval_suite.judge_test},
        {"answer_kind", to_string(c.eval_suite.answer_kind)},
        {"max_steps", c.eval_suite.max_steps}}},
      {"init", {{"correct_mass", c.init.correct_mass}, {"spread", c.init.spread}, {"seed", c.init.seed}}},
      {"judge", {{"q", c.judge.accuracy_q}}},
  };
}

inline std::string hex64(std::uint64_t h) {
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

inline std::string content_hash(std::string_view bytes) { return hex64(rng::fnv1a(bytes)); }
inline std::string file_hash(const std::string& path) { return content_hash(read_text_file(path)); }
inline std::string config_hash(const IterationConfig& c) { return content_hash(config_echo(c).dump()); }

// ---------------------------------------------------------------------------
// Manifest
// ---------------------------------------------------------------------------

struct TrajectoryCounts {
  std::size_t completed = 0;
  std::size_t aborted_max_steps = 0;
  std::size_t aborted_rollback_budget = 0;
  std::size_t rollbacks = 0;
};

inline nlohmann::json to_json(const TrajectoryCounts& t) {
  return {{"completed", t.completed},
          {"aborted_max_steps", t.aborted_max_steps},
          {"aborted_rollback_budget", t.aborted_rollback_budget},
          {"rollbacks", t.rollbacks}};
}

inline TrajectoryCounts trajectory_counts_from_json(const nlohmann::json& j) {
  return {j.at("completed").get<std::size_t>(), j.at("aborted_max_steps").get<std::size_t>(),
          j.at("aborted_rollback_budget").get<std::size_t>(), j.at("rollbacks").get<std::size_t>()};
}

/// Snapshot M_n with its files; `eval` is absent when evaluation is disabled.
struct SnapshotEntry {
  std::string tag;
  std::string policy_path;  // relative to the run directory
  std::string policy_hash;
  std::optional<EvalReport> eval;
  std::string eval_path;
  std::string eval_hash;
};

/// One completed iteration M_n -> M_{n+1}.
struct IterationEntry {
  std::string tag;     // M_{n+1}
  std::string parent;  // M_n
  std::string ppd_path;
  std::string ppd_hash;
  std::string trace_path;
  std::string trace_hash;
  std::size_t n_questions = 0;
  std::size_t n_pairs = 0;
  TrajectoryCounts trajectories;
  TrainReport train_report;
  SnapshotEntry snapshot;
  double wall_time_s = 0.0;
};

struct RunManifest {
  std::string config_hash;
  nlohmann::json config;
  std::uint64_t seed = 0;
  SnapshotEntry baseline;
  std::vector<IterationEntry> iterations;
};

inline nlohmann::json to_json(const SnapshotEntry& s) {
  nlohmann::json j{{"tag", s.tag}, {"policy_path", s.policy_path}, {"policy_hash", s.policy_hash}};
  if (s.eval) {
    j["eval_report"] = to_json(*s.eval);
    j["eval_path"] = s.eval_path;
    j["eval_hash"] = s.eval_hash;
  } else {
    j["eval_report"] = nullptr;
  }
  return j;
}

inline SnapshotEntry snapshot_entry_from_json(const nlohmann::json& j) {
  SnapshotEntry s;
  s.tag = j.at("tag").get<std::string>();
  s.policy_path = j.at("policy_path").get<std::string>();
  s.policy_hash = j.at("policy_hash").get<std::string>();
  if (!j.at("eval_report").is_null()) {
    s.eval = eval_report_from_json(j["eval_report"]);
    s.eval_path = j.at("eval_path").get<std::string>();
    s.eval_hash = j.at("eval_hash").get<std::string>();
  }
  return s;
}

inline nlohmann::json to_json(const RunManifest& m) {
  auto iters = nlohmann::json::array();
  for (const auto& e : m.iterations) {
    iters.push_back({{"tag", e.tag},
                     {"parent", e.parent},
                     {"ppd_path", e.ppd_path},
                     {"ppd_hash", e.ppd_hash},
                     {"trace_path", e.trace_path},
                     {"trace_hash", e.trace_hash},
                     {"n_questions", e.n_questions},
                     {"n_pairs", e.n_pairs},
                     {"trajectories", to_json(e.trajectories)},
                     {"train_report", to_json(e.train_report)},
                     {"snapshot", to_json(e.snapshot)},
                     {"wall_time_s", e.wall_time_s}});
  }
  return {{"format", "psr.manifest.v1"},
          {"config_hash", m.config_hash},
          {"config", m.config},
          {"seed", m.seed},
          {"baseline", to_json(m.baseline)},
          {"iterations", iters}};
}

inline RunManifest manifest_from_json(const nlohmann::json& j) {
  if (j.value("format", "") != "psr.manifest.v1") throw SchemaMismatch("not a run manifest");
  RunManifest m;
  m.config_hash = j.at("config_hash").get<std::string>();
  m.config = j.at("config");
  m.seed = j.at("seed").get<std::uint64_t>();
  m.baseline = snapshot_entry_from_json(j.at("baseline"));
  for (const auto& e : j.at("iterations")) {
    IterationEntry it;
    it.tag = e.at("tag").get<std::string>();
    it.parent = e.at("parent").get<std::string>();
    it.ppd_path = e.at("ppd_path").get<std::string>();
    it.ppd_hash = e.at("ppd_hash").get<std::string>();
    it.trace_path = e.at("trace_path").get<std::string>();
    it.trace_hash = e.at("trace_hash").get<std::string>();
    it.n_questions = e.at("n_questions").get<std::size_t>();
    it.n_pairs = e.at("n_pairs").get<std::size_t>();
    it.trajectories = trajectory_counts_from_json(e.at("trajectories"));
    it.train_report = train_report_from_json(e.at("train_report"));
    it.snapshot = snapshot_entry_from_json(e.at("snapshot"));
    it.wall_time_s = e.at("wall_time_s").get<double>();
    m.iterations.push_back(std::move(it));
  }
  return m;
}

/// Manifest JSON with wall-clock fields removed, for run-to-run comparison.
inline nlohmann::json manifest_without_timing(nlohmann::json j) {
  for (auto& e : j.at("iterations")) e.erase("wall_time_s");
  return j;
}

inline void write_manifest(const std::string& run_dir, const RunManifest& m) {
  const auto path = std::filesystem::path(run_dir) / "manifest.json";
  const auto tmp = std::filesystem::path(run_dir) / "manifest.json.tmp";
  write_text_file(tmp.string(), to_json(m).dump(2) + "\n");
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) throw IoError("cannot replace " + path.string() + ": " + ec.message());
}

inline std::optional<RunManifest> read_manifest(const std::string& run_dir) {
  const auto path = std::filesystem::path(run_dir) / "manifest.json";
  if (!std::filesystem::exists(path)) return std::nullopt;
  try {
    return manifest_from_json(nlohmann::json::parse(read_text_file(path.string())));
  } catch (const nlohmann::json::exception& e) {
    throw SchemaMismatch(std::string("unreadable manifest: ") + e.what());
  }
}

// ---------------------------------------------------------------------------
// Questions and models
// ---------------------------------------------------------------------------

/// Disjoint per-iteration draws from one seeded permutation of the pool.
inline std::vector<std::vector<Question>> draw_questions(const std::vector<Question>& pool, const std::vector<int>& counts,
                                                         std::uint64_t seed) {
  const auto needed = static_cast<std::size_t>(std::accumulate(counts.begin(), counts.end(), 0LL));
  if (needed > pool.size())
    throw ConfigError("question pool holds " + std::to_string(pool.size()) + " questions, iterations need " +
                      std::to_string(needed));
  std::vector<std::size_t> order(pool.size());
  std::iota(order.begin(), order.end(), 0);
  rng::Stream s(rng::derive(seed, "questions"));
  for (std::size_t k = order.size(); k > 1; --k)
    std::swap(order[k - 1], order[static_cast<std::size_t>(s.uniform_int(0, static_cast<std::int64_t>(k - 1)))]);
  std::vector<std::vector<Question>> out;
  std::size_t next = 0;
  for (int n : counts) {
    std::vector<Question> block;
    for (int k = 0; k < n; ++k) block.push_back(pool[order[next++]]);
    out.push_back(std::move(block));
  }
  return out;
}

inline ToyPolicy initial_policy(const IterationConfig& cfg) {
  const auto depth = synth::parse_suite_spec(cfg.question_pool).depth;
  return synth::noisy_policy(depth, cfg.init.correct_mass, cfg.init.seed, cfg.init.spread);
}

inline ModelSnapshot initial_snapshot(const IterationConfig& cfg) {
  return ModelSnapshot{1, std::nullopt, std::make_shared<ToyPolicy>(initial_policy(cfg)), ""};
}

inline ToyModel toy_model_of(const ModelSnapshot& m, const IterationConfig& cfg) {
  if (!m.policy) throw InvalidArgument(m.label() + " is not a toy snapshot");
  auto judge = cfg.judge;
  judge.rng_seed = rng::derive(cfg.master_seed, "judge");
  return ToyModel(m.policy, std::make_shared<synth::ChainEnvironment>(), judge);
}

// ---------------------------------------------------------------------------
// One iteration
// ---------------------------------------------------------------------------

struct PpdResult {
  std::vector<StepPreferencePair> pairs;
  std::vector<nlohmann::json> trace;
  TrajectoryCounts counts;
};

/// Searches every question with `model` as both generator and judge.
inline PpdResult generate_ppd(SelfRewardingModel& model, const std::vector<Question>& questions, const SearchConfig& search,
                              int producer_version, std::uint64_t seed, std::size_t parallelism) {
  std::vector<std::optional<TrajectoryOutcome>> outcomes(questions.size());
  parallel_for(questions.size(), parallelism, [&](std::size_t k) {
    outcomes[k] = search_trajectory(questions[k], search, model, model, rng::derive(seed, questions[k].id),
                                    producer_version);
  });
  PpdResult out;
  for (auto& o : outcomes) {
    switch (o->status) {
      case TrajectoryStatus::completed: ++out.counts.completed; break;
      case TrajectoryStatus::aborted_max_steps: ++out.counts.aborted_max_steps; break;
      case TrajectoryStatus::aborted_rollback_budget: ++out.counts.aborted_rollback_budget; break;
    }
    out.counts.rollbacks += static_cast<std::size_t>(o->rollback_count);
    for (auto& p : o->pairs) out.pairs.push_back(std::move(p));
    for (auto& e : o->trace) out.trace.push_back(std::move(e));
  }
  return out;
}

inline std::string trace_jsonl(const std::vector<nlohmann::json>& trace) {
  std::string out;
  for (const auto& e : trace) out += e.dump() + '\n';
  return out;
}

inline void write_policy_file(const std::string& path, const ToyPolicy& p) { write_text_file(path, serialize_policy(p)); }

struct IterationResult {
  ModelSnapshot next;
  IterationEntry entry;
};

/// Hook points for tests and tooling; both receive the tag of the model
/// being produced.
struct PipelineHooks {
  std::function<void(int)> after_ppd;        // PPD written, training not started
  std::function<void(int)> after_iteration;  // manifest updated
};

inline SnapshotEntry persist_snapshot(const ModelSnapshot& m, const IterationConfig& cfg) {
  namespace fs = std::filesystem;
  const auto dir = fs::path(cfg.run_dir) / m.label();
  fs::create_directories(dir);
  SnapshotEntry s;
  s.tag = m.label();
  s.policy_path = m.label() + "/policy.snapshot";
  write_policy_file((fs::path(cfg.run_dir) / s.policy_path).string(), *m.policy);
  s.policy_hash = file_hash((fs::path(cfg.run_dir) / s.policy_path).string());
  if (cfg.eval_enabled) {
    auto model = toy_model_of(m, cfg);
    auto ecfg = cfg.eval_suite;
    ecfg.parallelism = cfg.parallelism;
    s.eval = eval_suite(model, &model, ecfg);
    s.eval_path = m.label() + "/eval.json";
    write_text_file((fs::path(cfg.run_dir) / s.eval_path).string(), to_json(*s.eval).dump(2) + "\n");
    s.eval_hash = file_hash((fs::path(cfg.run_dir) / s.eval_path).string());
  }
  return s;
}

/// PPD(M_n) by self-search and self-judging, then step-wise DPO from a frozen
/// copy of M_n to M_{n+1}.
inline IterationResult run_iteration(const ModelSnapshot& m, const std::vector<Question>& questions,
                                     const IterationConfig& cfg, const PipelineHooks& hooks = {}) {
  namespace fs = std::filesystem;
  const auto started = std::chrono::steady_clock::now();
  auto model = toy_model_of(m, cfg);
  const auto dir = fs::path(cfg.run_dir) / m.label();
  fs::create_directories(dir);

  const auto seed = rng::derive(cfg.master_seed, {static_cast<std::uint64_t>(m.tag), 1});
  auto ppd = generate_ppd(model, questions, cfg.search, m.tag, seed, cfg.parallelism);

  IterationEntry e;
  e.tag = tag_label(m.tag + 1);
  e.parent = m.label();
  e.n_questions = questions.size();
  e.n_pairs = ppd.pairs.size();
  e.trajectories = ppd.counts;
  e.ppd_path = m.label() + "/ppd.jsonl";
  e.trace_path = m.label() + "/trace.jsonl";
  write_jsonl((fs::path(cfg.run_dir) / e.ppd_path).string(), ppd.pairs);
  write_text_file((fs::path(cfg.run_dir) / e.trace_path).string(), trace_jsonl(ppd.trace));
  e.ppd_hash = file_hash((fs::path(cfg.run_dir) / e.ppd_path).string());
  e.trace_hash = file_hash((fs::path(cfg.run_dir) / e.trace_path).string());
  if (hooks.after_ppd) hooks.after_ppd(m.tag + 1);
  if (ppd.pairs.empty())
    throw NoPairsGenerated(m.label() + " produced no preference pairs from " + std::to_string(questions.size()) +
                           " questions");

  const auto ref = ReferencePolicy::freeze(*m.policy);
  auto dpo = cfg.dpo;
  dpo.rng_seed = rng::derive(cfg.master_seed, {static_cast<std::uint64_t>(m.tag), 2});
  auto trained = train_dpo(*m.policy, ref, ppd.pairs, dpo, model.env());
  e.train_report = trained.report;

  ModelSnapshot next{m.tag + 1, m.tag, std::make_shared<ToyPolicy>(std::move(trained.policy)), ""};
  e.snapshot = persist_snapshot(next, cfg);
  e.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
  return {std::move(next), std::move(e)};
}

// ---------------------------------------------------------------------------
// Pipeline
// ---------------------------------------------------------------------------

/// Chains `n_iterations` iterations from `m1`. With `resume`, an existing
/// manifest in the run directory is continued: completed iterations are
/// skipped after their snapshot hash is checked.
inline RunManifest run_pipeline(const IterationConfig& cfg, const ModelSnapshot& m1, bool resume = false,
                                const PipelineHooks& hooks = {}) {
  namespace fs = std::filesystem;
  cfg.validate();
  fs::create_directories(cfg.run_dir);

  RunManifest manifest;
  manifest.config = config_echo(cfg);
  manifest.config_hash = config_hash(cfg);
  manifest.seed = cfg.master_seed;

  ModelSnapshot current = m1;
  const auto existing = read_manifest(cfg.run_dir);
  if (existing && !resume)
    throw ConfigError("run directory " + cfg.run_dir + " already holds a manifest; resume it or choose another");
  if (existing) {
    if (existing->config_hash != manifest.config_hash)
      throw ConfigError("manifest in " + cfg.run_dir + " was written for a different configuration");
    manifest = *existing;
    if (!manifest.iterations.empty()) {
      const auto& last = manifest.iterations.back().snapshot;
      const auto path = (fs::path(cfg.run_dir) / last.policy_path).string();
      const auto text = read_text_file(path);
      if (content_hash(text) != last.policy_hash) throw SchemaMismatch(path + " does not match the manifest");
      auto policy = deserialize_policy(text);
      const int tag = policy.version();
      current = ModelSnapshot{tag, tag - 1, std::make_shared<ToyPolicy>(std::move(policy)), ""};
    }
  } else {
    manifest.baseline = persist_snapshot(current, cfg);
    write_manifest(cfg.run_dir, manifest);
  }

  const auto pool = load_benchmark(cfg.question_pool);
  const auto draws = draw_questions(pool, cfg.questions_per_iteration, cfg.master_seed);
  for (auto k = manifest.iterations.size(); k < static_cast<std::size_t>(cfg.n_iterations); ++k) {
    auto result = run_iteration(current, draws[k], cfg, hooks);
    manifest.iterations.push_back(std::move(result.entry));
    write_manifest(cfg.run_dir, manifest);
    current = std::move(result.next);
    if (hooks.after_iteration) hooks.after_iteration(current.tag);
  }
  return manifest;
}

/// Accuracy per snapshot along the chain, first benchmark only.
inline std::vector<double> accuracy_curve(const RunManifest& m) {
  std::vector<double> out;
  auto push = [&](const SnapshotEntry& s) {
    if (s.eval && !s.eval->benchmarks.empty()) out.push_back(s.eval->benchmarks.front().accuracy());
  };
  push(m.baseline);
  for (const auto& e : m.iterations) push(e.snapshot);
  return out;
}

}  // namespace psr
