#pragma once

// Local chat-completions server driven by a JSON fixture, for contract tests
// and offline runs.
//
//   {"responses": ["Step 1: ok"],   replies, cycled
//    "schedule": [429, 429],        statuses for the first requests, then 200
//    "delay_ms": 0,                 sleep before every reply
//    "malformed": false}            200 with a body that is not a completion

#include <psr/error.hpp>

#include <httplib.h>
#include <json.hpp>

#include <atomic>
#include <chrono>
#include <string>
#include <thread>
#include <vector>

namespace psr {

struct StubFixture {
  std::vector<std::string> responses{"Step 1: ok"};
  std::vector<int> schedule;
  int delay_ms = 0;
  bool malformed = false;
};

inline StubFixture stub_fixture_from_json(const std::string& text) {
  StubFixture f;
  try {
    const auto j = nlohmann::json::parse(text);
    if (!j.is_object()) throw ConfigError("stub fixture must be a JSON object");
    if (j.contains("responses")) f.responses = j.at("responses").get<std::vector<std::string>>();
    if (j.contains("schedule")) f.schedule = j.at("schedule").get<std::vector<int>>();
    f.delay_ms = j.value("delay_ms", 0);
    f.malformed = j.value("malformed", false);
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("unreadable stub fixture: ") + e.what());
  }
  if (f.responses.empty()) throw ConfigError("stub fixture has no responses");
  if (f.delay_ms < 0) throw ConfigError("stub fixture delay_ms is negative");
  for (int s : f.schedule)
    if (s < 100 || s > 599) throw ConfigError("stub fixture schedule holds a bad status " + std::to_string(s));
  return f;
}

class StubServer {
 public:
  explicit StubServer(StubFixture fixture) : fx_(std::move(fixture)) {
    server_.Post("/v1/chat/completions", [this](const httplib::Request& req, httplib::Response& res) {
      const auto k = requests_.fetch_add(1);
      if (fx_.delay_ms > 0) std::this_thread::sleep_for(std::chrono::milliseconds(fx_.delay_ms));
      if (k < fx_.schedule.size() && fx_.schedule[k] != 200) {
        res.status = fx_.schedule[k];
        res.set_content(R"({"error": {"message": "scheduled failure"}})", "application/json");
        return;
      }
      if (fx_.malformed) {
        res.set_content(R"({"unexpected": true)", "application/json");
        return;
      }
      std::string model = "stub";
      try {
        model = nlohmann::json::parse(req.body).value("model", model);
      } catch (const nlohmann::json::exception&) {
        res.status = 400;
        res.set_content(R"({"error": {"message": "request is not JSON"}})", "application/json");
        return;
      }
      const auto n = served_.fetch_add(1);
      nlohmann::json body{{"id", "stub-" + std::to_string(k)},
                          {"object", "chat.completion"},
                          {"model", model},
                          {"choices",
                           {{{"index", 0},
                             {"message", {{"role", "assistant"}, {"content", fx_.responses[n % fx_.responses.size()]}}},
                             {"finish_reason", "stop"}}}}};
      res.set_content(body.dump(), "application/json");
    });
  }

  explicit StubServer(const std::string& fixture_json) : StubServer(stub_fixture_from_json(fixture_json)) {}

  ~StubServer() { stop(); }
  StubServer(const StubServer&) = delete;
  StubServer& operator=(const StubServer&) = delete;

  /// Binds host:port (port 0 picks a free one) and serves on a background thread.
  int start(const std::string& host = "127.0.0.1", int port = 0) {
    port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (port_ < 0) throw IoError("stub server cannot bind " + host + ":" + std::to_string(port));
    host_ = host;
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
    return port_;
  }

  /// Serves on the calling thread until stop() is called elsewhere;
  /// `on_ready` receives the bound port.
  template <class F>
  void serve(const std::string& host, int port, F&& on_ready) {
    port_ = port == 0 ? server_.bind_to_any_port(host) : (server_.bind_to_port(host, port) ? port : -1);
    if (port_ < 0) throw IoError("stub server cannot bind " + host + ":" + std::to_string(port));
    host_ = host;
    on_ready(port_);
    server_.listen_after_bind();
  }

  void stop() {
    server_.stop();
    if (thread_.joinable()) thread_.join();
  }

  int port() const { return port_; }
  std::string base_url() const { return "http://" + host_ + ":" + std::to_string(port_); }
  std::size_t request_count() const { return requests_.load(); }

 private:
  StubFixture fx_;
  httplib::Server server_;
  std::thread thread_;
  std::string host_ = "127.0.0.1";
  int port_ = -1;
  std::atomic<std::size_t> requests_{0};
  std::atomic<std::size_t> served_{0};
};

}  // namespace psr
