// psr: command-line driver for the self-rewarding pipeline.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or config error.

#include <psr/config.hpp>
#include <psr/datasets.hpp>
#include <psr/dpo.hpp>
#include <psr/evalkit.hpp>
#include <psr/iteration.hpp>
#include <psr/remote.hpp>
#include <psr/stub_server.hpp>

#include <CLI11.hpp>

#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <regex>
#include <string>

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Common {
  std::string config_path;
  std::vector<std::string> sets;
  std::string seed;
  std::string parallelism;
  std::string run_dir;
  bool json_out = false;
  bool dry_run = false;
};

void add_common(CLI::App* sub, Common& c) {
  sub->add_option("-c,--config", c.config_path, "Config file (key = value lines)");
  sub->add_option("--set", c.sets, "Override a config key, e.g. --set search.width=4");
  sub->add_option("--seed", c.seed, "Master seed");
  sub->add_option("--parallelism", c.parallelism, "Worker threads for search, eval and EFT building");
  sub->add_option("--run-dir", c.run_dir, "Run directory");
  sub->add_flag("--json", c.json_out, "Machine-readable output on stdout");
  sub->add_flag("--dry-run", c.dry_run, "Validate inputs and print the plan; write nothing");
}

psr::CliConfig resolve(const Common& c) {
  psr::CliConfig cfg;
  if (!c.config_path.empty()) cfg = psr::load_config(c.config_path);
  for (const auto& s : c.sets) psr::apply_override(cfg, s);
  if (!c.seed.empty()) psr::apply_setting(cfg, "seed", c.seed);
  if (!c.parallelism.empty()) psr::apply_setting(cfg, "parallelism", c.parallelism);
  if (!c.run_dir.empty()) psr::apply_setting(cfg, "run_dir", c.run_dir);
  cfg.validate();
  return cfg;
}

void emit(const Common& c, const json& j, const std::string& text) {
  if (c.json_out)
    std::cout << j.dump(2) << '\n';
  else
    std::cout << text;
  std::cout.flush();
}

void progress(const std::string& msg) { std::cerr << "psr: " << msg << '\n'; }

void require_toy(const psr::CliConfig& cfg, const std::string& what) {
  if (cfg.backend != psr::BackendKind::toy) throw psr::ConfigError(what + " needs backend = toy");
}

std::unique_ptr<psr::RemoteBackend> make_remote(const psr::CliConfig& cfg) {
  auto r = std::make_unique<psr::RemoteBackend>(cfg.remote);
  r->on_backoff([](const psr::BackoffEvent& ev) {
    progress("retrying after " + ev.reason + ", waiting " + std::to_string(ev.delay_ms) + " ms");
  });
  return r;
}

psr::ModelSnapshot snapshot_from(const psr::CliConfig& cfg, const std::string& policy_path) {
  if (policy_path.empty()) return psr::initial_snapshot(cfg.iteration);
  auto policy = psr::read_policy_snapshot(policy_path);
  const int tag = policy.version();
  return psr::ModelSnapshot{tag, tag > 1 ? std::optional<int>(tag - 1) : std::nullopt,
                            std::make_shared<psr::ToyPolicy>(std::move(policy)), ""};
}

std::string fmt(double x, int digits = 4) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, x);
  return buf;
}

// ---------------------------------------------------------------------------

int cmd_build_eft(const Common& c, const std::string& policy_path, std::string out) {
  auto cfg = resolve(c);
  if (out.empty()) out = "eft.jsonl";
  const auto questions = psr::load_benchmark(cfg.eft_questions);
  if (c.dry_run) {
    emit(c, {{"questions", questions.size()}, {"out", out}, {"dry_run", true}},
         "would expand " + std::to_string(questions.size()) + " questions into " + out + "\n");
    return 0;
  }
  psr::OracleScorer scorer;
  psr::EFTBuildStats stats;
  std::vector<psr::EFTRecord> records;
  progress("expanding " + std::to_string(questions.size()) + " questions");
  if (cfg.backend == psr::BackendKind::remote) {
    auto remote = make_remote(cfg);
    records = psr::build_eft(questions, scorer, *remote, *remote, cfg.eft, &stats);
  } else {
    auto model = psr::toy_model_of(snapshot_from(cfg, policy_path), cfg.iteration);
    records = psr::build_eft(questions, scorer, model, model, cfg.eft, &stats);
  }
  psr::write_jsonl(out, records);
  emit(c,
       {{"out", out},
        {"records", stats.records},
        {"raw_pairs", stats.raw_pairs},
        {"inconsistent", stats.inconsistent},
        {"disagreed", stats.disagreed}},
       "wrote " + std::to_string(stats.records) + " records to " + out + " (raw " + std::to_string(stats.raw_pairs) +
           ", inconsistent " + std::to_string(stats.inconsistent) + ", disagreed " +
           std::to_string(stats.disagreed) + ")\n");
  return 0;
}

int cmd_gen_ppd(const Common& c, const std::string& policy_path, std::string questions_spec, std::string out,
                const std::string& trace_out, int producer_version) {
  auto cfg = resolve(c);
  if (questions_spec.empty()) questions_spec = cfg.iteration.question_pool;
  if (out.empty()) out = "ppd.jsonl";
  const auto questions = psr::load_benchmark(questions_spec);
  if (c.dry_run) {
    emit(c, {{"questions", questions.size()}, {"out", out}, {"dry_run", true}},
         "would search " + std::to_string(questions.size()) + " questions into " + out + "\n");
    return 0;
  }
  psr::PpdResult ppd;
  progress("searching " + std::to_string(questions.size()) + " questions");
  if (cfg.backend == psr::BackendKind::remote) {
    auto remote = make_remote(cfg);
    ppd = psr::generate_ppd(*remote, questions, cfg.iteration.search, producer_version, cfg.iteration.master_seed,
                            cfg.iteration.parallelism);
  } else {
    const auto snap = snapshot_from(cfg, policy_path);
    auto model = psr::toy_model_of(snap, cfg.iteration);
    ppd = psr::generate_ppd(model, questions, cfg.iteration.search, snap.policy->version(), cfg.iteration.master_seed,
                            cfg.iteration.parallelism);
  }
  psr::write_jsonl(out, ppd.pairs);
  if (!trace_out.empty()) psr::write_text_file(trace_out, psr::trace_jsonl(ppd.trace));
  emit(c, {{"out", out}, {"pairs", ppd.pairs.size()}, {"trajectories", psr::to_json(ppd.counts)}},
       "wrote " + std::to_string(ppd.pairs.size()) + " pairs to " + out + " (completed " +
           std::to_string(ppd.counts.completed) + ", rollbacks " + std::to_string(ppd.counts.rollbacks) + ")\n");
  return 0;
}

int cmd_train_dpo(const Common& c, const std::string& policy_path, const std::string& pairs_path, std::string out) {
  auto cfg = resolve(c);
  require_toy(cfg, "train-dpo");
  if (out.empty()) out = "policy.snapshot";
  const auto pairs = psr::read_jsonl<psr::StepPreferencePair>(pairs_path);
  const auto snap = snapshot_from(cfg, policy_path);
  if (c.dry_run) {
    emit(c, {{"pairs", pairs.size()}, {"from_version", snap.policy->version()}, {"out", out}, {"dry_run", true}},
         "would train version " + std::to_string(snap.policy->version()) + " on " + std::to_string(pairs.size()) +
             " pairs into " + out + "\n");
    return 0;
  }
  psr::synth::ChainEnvironment env;
  auto dpo = cfg.iteration.dpo;
  dpo.rng_seed = cfg.iteration.master_seed;
  auto trained = psr::train_dpo(*snap.policy, psr::ReferencePolicy::freeze(*snap.policy), pairs, dpo, env);
  psr::write_policy_snapshot(out, trained.policy);
  auto j = psr::to_json(trained.report);
  j["out"] = out;
  j["version"] = trained.policy.version();
  emit(c, j,
       "trained version " + std::to_string(trained.policy.version()) + " on " + std::to_string(pairs.size()) +
           " pairs: loss " + fmt(trained.report.initial_loss) + " -> " + fmt(trained.report.final_loss) + "\n");
  return 0;
}

int cmd_iterate(const Common& c, bool resume) {
  auto cfg = resolve(c);
  require_toy(cfg, "iterate");
  const auto& it = cfg.iteration;
  if (c.dry_run) {
    const auto pool = psr::load_benchmark(it.question_pool);
    psr::draw_questions(pool, it.questions_per_iteration, it.master_seed);
    const auto existing = psr::read_manifest(it.run_dir);
    if (existing && !resume) throw psr::ConfigError("run directory " + it.run_dir + " already holds a manifest");
    if (existing && existing->config_hash != psr::config_hash(it))
      throw psr::ConfigError("manifest in " + it.run_dir + " was written for a different configuration");
    emit(c,
         {{"run_dir", it.run_dir},
          {"config_hash", psr::config_hash(it)},
          {"iterations", it.n_iterations},
          {"completed", existing ? existing->iterations.size() : 0},
          {"dry_run", true}},
         "would run " + std::to_string(it.n_iterations) + " iterations in " + it.run_dir + "\n");
    return 0;
  }
  psr::PipelineHooks hooks;
  hooks.after_ppd = [](int tag) { progress("preference data ready, training " + psr::tag_label(tag)); };
  hooks.after_iteration = [](int tag) { progress(psr::tag_label(tag) + " done"); };
  const auto manifest = psr::run_pipeline(it, psr::initial_snapshot(it), resume, hooks);

  std::vector<std::pair<std::string, psr::EvalReport>> rows;
  if (manifest.baseline.eval) rows.emplace_back(manifest.baseline.tag, *manifest.baseline.eval);
  for (const auto& e : manifest.iterations)
    if (e.snapshot.eval) rows.emplace_back(e.snapshot.tag, *e.snapshot.eval);
  json j{{"run_dir", it.run_dir},
         {"config_hash", manifest.config_hash},
         {"iterations", manifest.iterations.size()},
         {"accuracy", psr::accuracy_curve(manifest)}};
  emit(c, j, rows.empty() ? "done\n" : psr::render_table(rows));
  return 0;
}

int cmd_eval(const Common& c, const std::string& mode, const std::string& tag, const std::string& policy_path,
             std::string out) {
  auto cfg = resolve(c);
  auto ecfg = cfg.iteration.eval_suite;
  if (!mode.empty()) ecfg.mode = psr::eval_mode_from_string(mode);
  ecfg.parallelism = cfg.iteration.parallelism;

  std::unique_ptr<psr::RemoteBackend> remote;
  std::optional<psr::ToyModel> toy;
  std::string label = "remote";
  if (cfg.backend == psr::BackendKind::remote) {
    remote = make_remote(cfg);
  } else {
    std::string path = policy_path;
    label = "policy";
    if (!tag.empty()) {
      if (!std::regex_match(tag, std::regex("M_[1-9][0-9]*"))) throw psr::ConfigError("snapshot tag must look like M_1, got '" + tag + "'");
      path = (fs::path(cfg.iteration.run_dir) / tag / "policy.snapshot").string();
      if (!fs::exists(path)) throw psr::ConfigError("unknown snapshot " + tag + " in " + cfg.iteration.run_dir);
      if (out.empty())
        out = (fs::path(cfg.iteration.run_dir) / tag / (ecfg.mode == psr::EvalMode::greedy ? "eval.json" : "eval.tts.json")).string();
      label = tag;
    }
    toy.emplace(psr::toy_model_of(snapshot_from(cfg, path), cfg.iteration));
  }
  if (c.dry_run) {
    emit(c, {{"model", label}, {"mode", psr::to_string(ecfg.mode)}, {"benchmarks", ecfg.benchmarks}, {"dry_run", true}},
         "would evaluate " + label + " (" + psr::to_string(ecfg.mode) + ")\n");
    return 0;
  }
  psr::SelfRewardingModel& model = remote ? static_cast<psr::SelfRewardingModel&>(*remote) : *toy;
  const auto report = psr::eval_suite(model, &model, ecfg);
  if (!out.empty()) psr::write_text_file(out, psr::to_json(report).dump(2) + "\n");
  auto text = psr::render_table({{label, report}});
  if (report.judge_accuracy) text += "judge accuracy " + fmt(100.0 * *report.judge_accuracy, 1) + "\n";
  emit(c, psr::to_json(report), text);
  return 0;
}

int cmd_judge_eval(const Common& c, std::string input) {
  auto cfg = resolve(c);
  if (input.empty()) input = cfg.iteration.eval_suite.judge_test;
  if (input.empty()) throw psr::ConfigError("judge-eval needs --input or eval.judge_test");
  const auto records = psr::load_judge_test(input);
  if (c.dry_run) {
    emit(c, {{"records", records.size()}, {"dry_run", true}}, "would judge " + std::to_string(records.size()) + " records\n");
    return 0;
  }
  std::unique_ptr<psr::RemoteBackend> remote;
  std::optional<psr::ToyModel> toy;
  if (cfg.backend == psr::BackendKind::remote)
    remote = make_remote(cfg);
  else
    toy.emplace(psr::toy_model_of(psr::initial_snapshot(cfg.iteration), cfg.iteration));
  psr::JudgeBackend& judge = remote ? static_cast<psr::JudgeBackend&>(*remote) : *toy;
  const auto opts = cfg.iteration.eval_suite.judge;
  const auto m = psr::consistency_agreement(records, judge, opts);
  const auto hits = psr::judge_hits(records, judge, opts);
  const double acc = static_cast<double>(hits) / static_cast<double>(records.size());
  emit(c,
       {{"records", records.size()},
        {"accuracy", acc},
        {"consistency", m.consistency},
        {"agreement", m.agreement},
        {"unparseable", m.n_unparseable}},
       "records " + std::to_string(records.size()) + "\naccuracy " + fmt(acc) + "\nconsistency " + fmt(m.consistency) +
           "\nagreement " + fmt(m.agreement) + "\nunparseable " + std::to_string(m.n_unparseable) + "\n");
  return 0;
}

int cmd_stats(const Common& c, const std::string& input) {
  resolve(c);
  std::vector<psr::IFTRecord> records;
  if (psr::synth::is_suite_spec(input)) {
    const auto s = psr::synth::parse_suite_spec(input);
    records = psr::synthetic_ift_records(psr::synth::gen_questions(s.seed, s.n, s.depth));
  } else {
    records = psr::read_jsonl<psr::IFTRecord>(input);
  }
  std::vector<psr::Solution> sols;
  for (const auto& r : records) sols.push_back(psr::Solution::make(r.question.id, r.steps, psr::answer_line_detector()));
  const auto st = psr::step_statistics(sols);
  emit(c, psr::to_json(st),
       "solutions " + std::to_string(st.n_solutions) + "\nmean steps " + fmt(*st.mean_step_num) + "\nmean step length " +
           (st.mean_step_len ? fmt(*st.mean_step_len) : std::string("n/a")) + "\n");
  return 0;
}

int cmd_stub_server(const Common& c, const std::string& fixture_path, const std::string& host, int port) {
  std::string text;
  try {
    text = psr::read_text_file(fixture_path);
  } catch (const psr::IoError& e) {
    throw psr::ConfigError(e.what());
  }
  psr::StubServer server(text);
  if (c.dry_run) {
    emit(c, {{"fixture", fixture_path}, {"dry_run", true}}, "fixture ok\n");
    return 0;
  }
  server.serve(host, port, [&](int bound) {
    emit(c, {{"host", host}, {"port", bound}}, "listening on http://" + host + ":" + std::to_string(bound) + "\n");
  });
  return 0;
}

std::string keys_help() {
  std::string s = "Config keys:\n";
  for (const auto& k : psr::config_keys()) s += "  " + k + "\n";
  return s;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Process-based self-rewarding pipeline"};
  app.require_subcommand(1);
  app.footer(keys_help());

  Common common;
  std::string policy, out, questions, trace, pairs, mode, snapshot, input, fixture, host = "127.0.0.1";
  int producer_version = 1;
  int port = 8000;
  bool resume = false;

  auto* build_eft = app.add_subcommand("build-eft", "Build step-pair judgments with a scorer and a double-judge filter");
  add_common(build_eft, common);
  build_eft->add_option("--policy", policy, "Toy policy snapshot (default: initial policy)");
  build_eft->add_option("-o,--out", out, "Output JSONL (default eft.jsonl)");

  auto* gen_ppd = app.add_subcommand("gen-ppd", "Generate step preference pairs by self-search");
  add_common(gen_ppd, common);
  gen_ppd->add_option("--policy", policy, "Toy policy snapshot (default: initial policy)");
  gen_ppd->add_option("--questions", questions, "Question suite or IFT file (default: pool)");
  gen_ppd->add_option("-o,--out", out, "Output JSONL (default ppd.jsonl)");
  gen_ppd->add_option("--trace", trace, "Also write the search trace here");
  gen_ppd->add_option("--producer-version", producer_version, "Version stamped on pairs from a remote model");

  auto* train = app.add_subcommand("train-dpo", "Train a toy policy with step-wise DPO");
  add_common(train, common);
  train->add_option("--policy", policy, "Toy policy snapshot (default: initial policy)");
  train->add_option("--pairs", pairs, "Preference pairs JSONL")->required();
  train->add_option("-o,--out", out, "Output snapshot (default policy.snapshot)");

  auto* iterate = app.add_subcommand("iterate", "Run the self-rewarding iterations");
  add_common(iterate, common);
  iterate->add_flag("--resume", resume, "Continue an interrupted run");

  auto* eval = app.add_subcommand("eval", "Evaluate a snapshot");
  add_common(eval, common);
  eval->add_option("--mode", mode, "greedy or tts")->check(CLI::IsMember({"greedy", "tts"}));
  eval->add_option("--snapshot", snapshot, "Snapshot tag in the run directory, e.g. M_2");
  eval->add_option("--policy", policy, "Toy policy snapshot file");
  eval->add_option("-o,--out", out, "Write the report here");

  auto* judge_eval = app.add_subcommand("judge-eval", "Judge accuracy and order consistency on labeled pairs");
  add_common(judge_eval, common);
  judge_eval->add_option("--input", input, "EFT JSONL or synth suite (default: eval.judge_test)");

  auto* stats = app.add_subcommand("stats", "Step statistics of IFT solutions");
  add_common(stats, common);
  stats->add_option("--input", input, "IFT JSONL or synth suite")->required();

  auto* stub = app.add_subcommand("stub-server", "Serve scripted chat completions");
  add_common(stub, common);
  stub->add_option("--fixture", fixture, "Fixture JSON file")->required();
  stub->add_option("--host", host, "Bind address");
  stub->add_option("--port", port, "Port (0 picks a free one)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (build_eft->parsed()) return cmd_build_eft(common, policy, out);
    if (gen_ppd->parsed()) return cmd_gen_ppd(common, policy, questions, out, trace, producer_version);
    if (train->parsed()) return cmd_train_dpo(common, policy, pairs, out);
    if (iterate->parsed()) return cmd_iterate(common, resume);
    if (eval->parsed()) return cmd_eval(common, mode, snapshot, policy, out);
    if (judge_eval->parsed()) return cmd_judge_eval(common, input);
    if (stats->parsed()) return cmd_stats(common, input);
    if (stub->parsed()) return cmd_stub_server(common, fixture, host, port);
  } catch (const psr::ConfigError& e) {
    std::cerr << "psr: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "psr: " << e.what() << '\n';
    return 1;
  }
  return 2;
}
