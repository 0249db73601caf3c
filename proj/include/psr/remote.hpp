#pragma once

// Client for OpenAI-compatible chat-completions servers.
//
//   POST {base_url}/v1/chat/completions
//   {"model", "messages": [system, user], "temperature", "top_p", "max_tokens", "n": 1, "seed"}
//
// The reply text is choices[0].message.content. 429, 5xx, connection
// failures and timeouts are retried with exponential backoff; other
// statuses fail at once.

#include <psr/backend.hpp>
#include <psr/core.hpp>
#include <psr/error.hpp>

#include <httplib.h>
#include <json.hpp>

#include <algorithm>
#include <chrono>
#include <cstdint>
#include <cstdlib>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

namespace psr {

struct RemoteBackendConfig {
  std::string base_url = "http://127.0.0.1:8000";
  std::string model_name = "default";
  std::string api_key_env_var;  // empty: no Authorization header
  int timeout_ms = 60000;
  int max_retries = 3;
  std::size_t parallelism = 1;
  int backoff_base_ms = 200;
  int backoff_cap_ms = 10000;
  std::string system_prompt = "You are a careful mathematical reasoner.";

  void validate() const {
    if (base_url.empty()) throw ConfigError("remote base_url is empty");
    if (model_name.empty()) throw ConfigError("remote model_name is empty");
    if (timeout_ms < 1) throw ConfigError("remote timeout_ms must be positive");
    if (max_retries < 0) throw ConfigError("remote max_retries must be non-negative");
    if (parallelism < 1) throw ConfigError("remote parallelism must be at least 1");
    if (backoff_base_ms < 0 || backoff_cap_ms < backoff_base_ms) throw ConfigError("remote backoff settings are inconsistent");
  }
};

/// One retry wait: after failed attempt `attempt` (0-based) the client slept `delay_ms`.
struct BackoffEvent {
  int attempt = 0;
  int delay_ms = 0;
  std::string reason;
};

inline int backoff_delay_ms(const RemoteBackendConfig& cfg, int attempt) {
  long long d = cfg.backoff_base_ms;
  for (int k = 0; k < attempt && d < cfg.backoff_cap_ms; ++k) d *= 2;
  return static_cast<int>(std::min<long long>(d, cfg.backoff_cap_ms));
}

inline nlohmann::json chat_request_body(const RemoteBackendConfig& cfg, const std::string& prompt,
                                        const SamplingParams& params, std::optional<std::uint64_t> seed = std::nullopt) {
  nlohmann::json body{{"model", cfg.model_name},
                      {"messages",
                       {{{"role", "system"}, {"content", cfg.system_prompt}}, {{"role", "user"}, {"content", prompt}}}},
                      {"temperature", params.temperature},
                      {"top_p", params.top_p},
                      {"max_tokens", params.max_tokens},
                      {"n", 1}};
  if (seed) body["seed"] = *seed & 0x7fffffffffffffffULL;
  return body;
}

inline std::string parse_chat_response(const std::string& body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::exception& e) {
    throw MalformedResponse(std::string("response is not JSON: ") + e.what());
  }
  try {
    const auto& content = j.at("choices").at(0).at("message").at("content");
    if (!content.is_string()) throw MalformedResponse("choices[0].message.content is not a string");
    return content.get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw MalformedResponse(std::string("response lacks choices[0].message.content: ") + e.what());
  }
}

/// Chat-completions client acting as generator, judge and plain text backend.
class RemoteBackend final : public SelfRewardingModel, public TextBackend {
 public:
  explicit RemoteBackend(RemoteBackendConfig cfg) : cfg_(std::move(cfg)) {
    cfg_.validate();
    if (!cfg_.api_key_env_var.empty()) {
      const char* key = std::getenv(cfg_.api_key_env_var.c_str());
      if (!key || !*key) throw ConfigError("environment variable " + cfg_.api_key_env_var + " holds no API key");
      api_key_ = key;
    }
  }

  std::string complete(const std::string& prompt, const SamplingParams& params) override {
    return request(prompt, params, std::nullopt);
  }

  std::string generate(const GenerationRequest& req) override { return request(req.prompt, req.params, req.seed); }

  std::string judge_pair(const PairwiseRequest& req) override {
    return request(req.prompt, SamplingParams{0.0, 1.0, 1024}, req.seed);
  }

  std::string score(const ScoreRequest& req) override { return request(req.prompt, SamplingParams{0.0, 1.0, 1024}, std::nullopt); }

  std::vector<BackoffEvent> backoff_log() const {
    std::lock_guard lock(mu_);
    return log_;
  }

  /// Called for every retry wait, e.g. to report progress on stderr.
  void on_backoff(std::function<void(const BackoffEvent&)> fn) { on_backoff_ = std::move(fn); }

  const RemoteBackendConfig& config() const { return cfg_; }

 private:
  std::string request(const std::string& prompt, const SamplingParams& params, std::optional<std::uint64_t> seed) {
    if (prompt.empty()) throw InvalidArgument("prompt is empty");
    const auto body = chat_request_body(cfg_, prompt, params, seed).dump();
    httplib::Headers headers;
    if (!api_key_.empty()) headers.emplace("Authorization", "Bearer " + api_key_);

    std::string last_reason;
    bool last_was_timeout = false;
    for (int attempt = 0; attempt <= cfg_.max_retries; ++attempt) {
      httplib::Client client(cfg_.base_url);
      const auto secs = cfg_.timeout_ms / 1000;
      const auto usecs = (cfg_.timeout_ms % 1000) * 1000;
      client.set_connection_timeout(secs, usecs);
      client.set_read_timeout(secs, usecs);
      client.set_write_timeout(secs, usecs);

      const auto started = std::chrono::steady_clock::now();
      auto res = client.Post("/v1/chat/completions", headers, body, "application/json");
      const auto elapsed_ms =
          std::chrono::duration_cast<std::chrono::milliseconds>(std::chrono::steady_clock::now() - started).count();

      if (res && res->status == 200) return parse_chat_response(res->body);
      if (res) {
        const int status = res->status;
        if (status != 429 && status < 500) throw HttpError(status, res->body.substr(0, 200));
        last_reason = "status " + std::to_string(status);
        last_was_timeout = false;
      } else {
        const auto err = res.error();
        last_was_timeout = err == httplib::Error::ConnectionTimeout || elapsed_ms >= cfg_.timeout_ms;
        last_reason = last_was_timeout ? "timeout" : httplib::to_string(err);
      }
      if (attempt == cfg_.max_retries) break;
      BackoffEvent ev{attempt, backoff_delay_ms(cfg_, attempt), last_reason};
      {
        std::lock_guard lock(mu_);
        log_.push_back(ev);
      }
      if (on_backoff_) on_backoff_(ev);
      std::this_thread::sleep_for(std::chrono::milliseconds(ev.delay_ms));
    }
    const auto attempts = std::to_string(cfg_.max_retries + 1);
    if (last_was_timeout) throw Timeout("no response within " + std::to_string(cfg_.timeout_ms) + " ms after " + attempts + " attempts");
    throw RetriesExhausted(attempts + " attempts failed, last: " + last_reason);
  }

  RemoteBackendConfig cfg_;
  std::string api_key_;
  mutable std::mutex mu_;
  std::vector<BackoffEvent> log_;
  std::function<void(const BackoffEvent&)> on_backoff_;
};

}  // namespace psr
