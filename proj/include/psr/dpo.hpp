#pragma once

// Step-wise DPO on the tabular policy.
//
// For a pair (chosen c, rejected r) sharing the context of its prefix:
//   A    = beta * (log pi(c) - log pi_ref(c))
//   B    = beta * (log pi(r) - log pi_ref(r))
//   loss = -log sigmoid(A - B)
// and for the policy row of that context
//   d loss / d logits = -(1 - sigmoid(A - B)) * beta * ((e_c - p) - (e_r - p)).

#include <psr/error.hpp>
#include <psr/policy.hpp>
#include <psr/rng.hpp>
#include <psr/search.hpp>

#include <json.hpp>

#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

namespace psr {

struct DPOConfig {
  double beta = 0.1;
  double learning_rate = 0.05;
  int epochs = 1;
  int batch_size = 32;
  std::uint64_t rng_seed = 0;

  void validate() const {
    if (!(beta > 0.0)) throw InvalidArgument("beta must be positive");
    if (!(learning_rate >= 0.0)) throw InvalidArgument("learning_rate must be non-negative");
    if (epochs < 1) throw InvalidArgument("epochs must be positive");
    if (batch_size < 1) throw InvalidArgument("batch_size must be positive");
  }
};

/// Learning rate used for full-parameter DPO on large neural models; kept as
/// the default for remote fine-tuning configs. The tabular policy needs a far
/// larger step to move at all.
inline constexpr double kReferenceNeuralLearningRate = 5e-7;

struct PairLogps {
  double logp_theta_chosen = 0.0;
  double logp_ref_chosen = 0.0;
  double logp_theta_rejected = 0.0;
  double logp_ref_rejected = 0.0;
};

inline double sigmoid(double z) {
  return z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
}

/// -log sigmoid(z), computed without overflow.
inline double neg_log_sigmoid(double z) {
  return z >= 0 ? std::log1p(std::exp(-z)) : -z + std::log1p(std::exp(z));
}

inline double dpo_margin(const PairLogps& lp, double beta) {
  const double a = beta * (lp.logp_theta_chosen - lp.logp_ref_chosen);
  const double b = beta * (lp.logp_theta_rejected - lp.logp_ref_rejected);
  return a - b;
}

inline double dpo_loss(const PairLogps& lp, double beta) {
  for (double x : {lp.logp_theta_chosen, lp.logp_ref_chosen, lp.logp_theta_rejected, lp.logp_ref_rejected, beta})
    if (!std::isfinite(x)) throw NonFiniteInput("dpo_loss received a non-finite input");
  if (beta < 0.0) throw InvalidArgument("beta must be non-negative");
  return neg_log_sigmoid(dpo_margin(lp, beta));
}

/// A pair resolved to its policy row and action indices.
struct ResolvedPair {
  std::string key;
  std::size_t chosen;
  std::size_t rejected;
};

inline ResolvedPair resolve_pair(const StepPreferencePair& pair, const ToyEnvironment& env) {
  const StepPrefix prefix(pair.question, pair.prefix_steps);
  auto c = env.classify(prefix, pair.chosen);
  auto r = env.classify(prefix, pair.rejected);
  if (!c) throw UnknownAction("chosen step \"" + pair.chosen.body() + "\" is not in the action vocabulary");
  if (!r) throw UnknownAction("rejected step \"" + pair.rejected.body() + "\" is not in the action vocabulary");
  return {env.context_key(prefix), *c, *r};
}

inline PairLogps pair_logps(const ToyPolicy& policy, const ReferencePolicy& ref, const ResolvedPair& rp) {
  return {toy_step_logprob(policy, rp.key, rp.chosen), toy_step_logprob(ref, rp.key, rp.chosen),
          toy_step_logprob(policy, rp.key, rp.rejected), toy_step_logprob(ref, rp.key, rp.rejected)};
}

inline PairLogps pair_logps(const ToyPolicy& policy, const ReferencePolicy& ref, const StepPreferencePair& pair,
                            const ToyEnvironment& env) {
  return pair_logps(policy, ref, resolve_pair(pair, env));
}

inline double mean_dpo_loss(const ToyPolicy& policy, const ReferencePolicy& ref, const std::vector<ResolvedPair>& pairs,
                            double beta) {
  if (pairs.empty()) throw EmptyPairs("no pairs");
  double total = 0.0;
  for (const auto& p : pairs) total += dpo_loss(pair_logps(policy, ref, p), beta);
  return total / static_cast<double>(pairs.size());
}

using Gradient = std::map<std::string, std::vector<double>>;

/// Gradient of the mean loss over `batch` (indices into `pairs`) with respect
/// to the policy logits. Contributions are summed in batch order.
inline Gradient dpo_gradient(const ToyPolicy& policy, const ReferencePolicy& ref, const std::vector<ResolvedPair>& pairs,
                             const std::vector<std::size_t>& batch, double beta) {
  Gradient g;
  const double scale = 1.0 / static_cast<double>(batch.size());
  for (auto idx : batch) {
    const auto& p = pairs[idx];
    const auto lp = pair_logps(policy, ref, p);
    const double coeff = -(1.0 - sigmoid(dpo_margin(lp, beta))) * beta * scale;
    const auto probs = softmax(policy.row(p.key));
    auto& row = g.try_emplace(p.key, std::vector<double>(policy.arity(), 0.0)).first->second;
    for (std::size_t a = 0; a < policy.arity(); ++a) {
      const double grad_chosen = (a == p.chosen ? 1.0 : 0.0) - probs[a];
      const double grad_rejected = (a == p.rejected ? 1.0 : 0.0) - probs[a];
      row[a] += coeff * (grad_chosen - grad_rejected);
    }
  }
  return g;
}

inline Gradient dpo_gradient(const ToyPolicy& policy, const ReferencePolicy& ref, const std::vector<ResolvedPair>& pairs,
                             double beta) {
  std::vector<std::size_t> all(pairs.size());
  std::iota(all.begin(), all.end(), 0);
  return dpo_gradient(policy, ref, pairs, all, beta);
}

inline double gradient_norm(const Gradient& g) {
  double s = 0.0;
  for (const auto& [k, row] : g)
    for (double x : row) s += x * x;
  return std::sqrt(s);
}

struct TrainReport {
  double initial_loss = 0.0;
  double final_loss = 0.0;
  std::size_t n_pairs = 0;
  std::vector<double> grad_norm_history;
};

inline nlohmann::json to_json(const TrainReport& r) {
  return {{"initial_loss", r.initial_loss},
          {"final_loss", r.final_loss},
          {"n_pairs", r.n_pairs},
          {"steps", r.grad_norm_history.size()},
          {"grad_norm_history", r.grad_norm_history}};
}

inline TrainReport train_report_from_json(const nlohmann::json& j) {
  TrainReport r;
  r.initial_loss = j.at("initial_loss").get<double>();
  r.final_loss = j.at("final_loss").get<double>();
  r.n_pairs = j.at("n_pairs").get<std::size_t>();
  r.grad_norm_history = j.at("grad_norm_history").get<std::vector<double>>();
  return r;
}

struct TrainResult {
  ToyPolicy policy;
  TrainReport report;
};

/// Mini-batch gradient descent on the mean step-wise DPO loss. The returned
/// policy carries version policy.version() + 1; pairs produced by that
/// version or a later one are refused.
inline TrainResult train_dpo(const ToyPolicy& policy, const ReferencePolicy& ref,
                             const std::vector<StepPreferencePair>& pairs, const DPOConfig& cfg,
                             const ToyEnvironment& env) {
  cfg.validate();
  if (pairs.empty()) throw EmptyPairs("train_dpo needs at least one preference pair");
  const int target = policy.version() + 1;
  std::vector<ResolvedPair> resolved;
  resolved.reserve(pairs.size());
  for (const auto& p : pairs) {
    if (p.producer_version >= target)
      throw ProducerVersionError("pair produced by M_" + std::to_string(p.producer_version) +
                                 " cannot train M_" + std::to_string(target));
    resolved.push_back(resolve_pair(p, env));
  }

  TrainResult out{policy, {}};
  out.report.n_pairs = pairs.size();
  out.report.initial_loss = mean_dpo_loss(out.policy, ref, resolved, cfg.beta);

  const auto batch_size = std::min<std::size_t>(static_cast<std::size_t>(cfg.batch_size), resolved.size());
  std::vector<std::size_t> order(resolved.size());
  std::iota(order.begin(), order.end(), 0);
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (batch_size < resolved.size()) {
      rng::Stream s(rng::derive(cfg.rng_seed, {static_cast<std::uint64_t>(epoch)}));
      for (std::size_t k = order.size(); k > 1; --k)
        std::swap(order[k - 1], order[static_cast<std::size_t>(s.uniform_int(0, static_cast<std::int64_t>(k - 1)))]);
    }
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::vector<std::size_t> batch(order.begin() + static_cast<std::ptrdiff_t>(start),
                                           order.begin() + static_cast<std::ptrdiff_t>(std::min(start + batch_size, order.size())));
      const auto g = dpo_gradient(out.policy, ref, resolved, batch, cfg.beta);
      out.report.grad_norm_history.push_back(gradient_norm(g));
      if (cfg.learning_rate == 0.0) continue;
      for (const auto& [key, grow] : g) {
        auto& row = out.policy.mutable_row(key);
        for (std::size_t a = 0; a < row.size(); ++a) row[a] -= cfg.learning_rate * grow[a];
      }
    }
  }
  out.report.final_loss = mean_dpo_loss(out.policy, ref, resolved, cfg.beta);
  out.policy.set_version(target);
  return out;
}

}  // namespace psr
