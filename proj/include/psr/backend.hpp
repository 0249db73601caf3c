#pragma once

// Backend interfaces. Every request carries both the structured inputs and
// the rendered prompt: text backends read the prompt, toy and oracle
// backends read the structure.

#include <psr/core.hpp>
#include <psr/error.hpp>

#include <cstdint>
#include <functional>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

namespace psr {

struct GenerationRequest {
  const StepPrefix& prefix;
  std::string prompt;
  SamplingParams params;
  std::uint64_t seed = 0;
};

struct PairwiseRequest {
  const StepPrefix& prefix;
  const Step& first;
  const Step& second;
  std::string prompt;
  std::uint64_t seed = 0;
};

struct ScoreRequest {
  const Question& question;
  const Solution& solution;
  std::string prompt;
};

class GeneratorBackend {
 public:
  virtual ~GeneratorBackend() = default;
  /// Raw completion for the next step.
  virtual std::string generate(const GenerationRequest& req) = 0;
};

class JudgeBackend {
 public:
  virtual ~JudgeBackend() = default;
  /// Raw completion for a pairwise step comparison.
  virtual std::string judge_pair(const PairwiseRequest& req) = 0;
  /// Raw completion for whole-solution scoring.
  virtual std::string score(const ScoreRequest&) {
    throw BackendError("backend does not support solution scoring");
  }
};

/// Plain prompt-in, text-out completion (segmentation annotators).
class TextBackend {
 public:
  virtual ~TextBackend() = default;
  virtual std::string complete(const std::string& prompt, const SamplingParams& params) = 0;
};

/// One model acting as both generator and judge: the self-rewarding contract
/// is enforced by taking this type wherever both roles must coincide.
class SelfRewardingModel : public GeneratorBackend, public JudgeBackend {};

// ---------------------------------------------------------------------------
// Scripted backends for fixtures and tests
// ---------------------------------------------------------------------------

class FunctionGenerator final : public GeneratorBackend {
 public:
  using Fn = std::function<std::string(const GenerationRequest&)>;
  explicit FunctionGenerator(Fn fn) : fn_(std::move(fn)) {}
  std::string generate(const GenerationRequest& req) override { return fn_(req); }

 private:
  Fn fn_;
};

class FunctionJudge final : public JudgeBackend {
 public:
  using PairFn = std::function<std::string(const PairwiseRequest&)>;
  using ScoreFn = std::function<std::string(const ScoreRequest&)>;
  explicit FunctionJudge(PairFn pair, ScoreFn score = {}) : pair_(std::move(pair)), score_(std::move(score)) {}

  std::string judge_pair(const PairwiseRequest& req) override { return pair_(req); }
  std::string score(const ScoreRequest& req) override {
    if (!score_) return JudgeBackend::score(req);
    return score_(req);
  }

 private:
  PairFn pair_;
  ScoreFn score_;
};

/// Returns canned completions in order, cycling when exhausted. Thread-safe.
class ScriptedText final : public TextBackend, public JudgeBackend {
 public:
  explicit ScriptedText(std::vector<std::string> replies) : replies_(std::move(replies)) {
    if (replies_.empty()) throw InvalidArgument("scripted backend needs at least one reply");
  }

  std::string complete(const std::string&, const SamplingParams&) override { return next(); }
  std::string judge_pair(const PairwiseRequest&) override { return next(); }
  std::string score(const ScoreRequest&) override { return next(); }

  std::size_t calls() const {
    std::lock_guard lock(mu_);
    return calls_;
  }

 private:
  std::string next() {
    std::lock_guard lock(mu_);
    return replies_[calls_++ % replies_.size()];
  }

  std::vector<std::string> replies_;
  mutable std::mutex mu_;
  std::size_t calls_ = 0;
};

}  // namespace psr
