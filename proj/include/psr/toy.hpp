#pragma once

// Desk-scale self-rewarding model: the tabular policy generates steps and a
// parametric stochastic judge compares them against the task oracle.

#include <psr/backend.hpp>
#include <psr/judge.hpp>
#include <psr/policy.hpp>
#include <psr/rng.hpp>
#include <psr/synthtask.hpp>

#include <cstdint>
#include <functional>
#include <memory>
#include <string>

namespace psr {

struct ToyJudgeConfig {
  double accuracy_q = 1.0;  // probability the oracle-better step is preferred
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (!(accuracy_q >= 0.5 && accuracy_q <= 1.0)) throw InvalidArgument("accuracy_q must lie in [0.5, 1]");
  }
};

using OracleComparator =
    std::function<synth::Preference(const StepPrefix&, const Step&, const Step&)>;

inline OracleComparator chain_oracle() {
  return [](const StepPrefix& p, const Step& a, const Step& b) { return synth::oracle_compare(p, a, b); };
}

/// With probability q prefers the oracle-better step, otherwise the other
/// one. Identical steps always resolve to the first-listed. The coin is a
/// pure function of (cfg.rng_seed, request_seed, prefix, a, b).
inline JudgeVerdict toy_judge(const ToyJudgeConfig& cfg, const StepPrefix& prefix, const Step& cand_a,
                              const Step& cand_b, const OracleComparator& oracle,
                              std::uint64_t request_seed = 0) {
  cfg.validate();
  Verdict pick = Verdict::first;
  if (cand_a.body() != cand_b.body()) {
    synth::Preference better;
    try {
      better = oracle(prefix, cand_a, cand_b);
    } catch (const NotSynthetic& e) {
      throw OracleUnavailable(e.what());
    }
    const auto content = render_steps(prefix.steps) + "\n" + prefix.question.id + "\n" + cand_a.body() + "\n" +
                         cand_b.body();
    const double u = rng::to_unit(rng::derive(rng::derive(cfg.rng_seed, {request_seed}), content));
    const bool faithful = u < cfg.accuracy_q;
    const bool first_better = better == synth::Preference::first;
    pick = (first_better == faithful) ? Verdict::first : Verdict::second;
  }
  const auto completion = render_verdict(
      pick, pick == Verdict::first ? "Candidate A is the better next step." : "Candidate B is the better next step.");
  return parse_verdict(completion);
}

class ToyModel final : public SelfRewardingModel {
 public:
  ToyModel(std::shared_ptr<const ToyPolicy> policy, std::shared_ptr<const ToyEnvironment> env,
           ToyJudgeConfig judge_cfg, OracleComparator oracle = chain_oracle())
      : policy_(std::move(policy)), env_(std::move(env)), judge_cfg_(judge_cfg), oracle_(std::move(oracle)) {
    judge_cfg_.validate();
  }

  std::string generate(const GenerationRequest& req) override {
    return toy_sample_step(*policy_, *env_, req.prefix, req.params, req.seed).step.raw();
  }

  std::string judge_pair(const PairwiseRequest& req) override {
    return toy_judge(judge_cfg_, req.prefix, req.first, req.second, oracle_, req.seed).raw;
  }

  const ToyPolicy& policy() const { return *policy_; }
  const ToyEnvironment& env() const { return *env_; }
  const ToyJudgeConfig& judge_config() const { return judge_cfg_; }

 private:
  std::shared_ptr<const ToyPolicy> policy_;
  std::shared_ptr<const ToyEnvironment> env_;
  ToyJudgeConfig judge_cfg_;
  OracleComparator oracle_;
};

/// Oracle-faithful judge backend on synthetic prefixes (q = 1).
class OracleJudge final : public JudgeBackend {
 public:
  std::string judge_pair(const PairwiseRequest& req) override {
    return toy_judge(ToyJudgeConfig{1.0, 0}, req.prefix, req.first, req.second, chain_oracle(), req.seed).raw;
  }
};

}  // namespace psr
