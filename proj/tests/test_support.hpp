#pragma once

// shared helpers for the service-level test suites

#include <chrono>
#include <functional>
#include <mutex>
#include <thread>
#include <vector>

#include "liots/http.hpp"
#include "liots/wire.hpp"

namespace liots::testing {

/// Records every notification payload POSTed at it.
class CallbackServer : public HttpServiceBase {
 public:
  CallbackServer() : HttpServiceBase("callback", 4) { start(); }
  ~CallbackServer() override { stop(); }

  struct Received {
    std::string path;
    json body;
    std::string token;
  };

  std::vector<Received> received() const {
    std::lock_guard lock(mutex_);
    return received_;
  }
  size_t count() const {
    std::lock_guard lock(mutex_);
    return received_.size();
  }

  /// Poll until `count() >= n` or the timeout elapses.
  bool wait_for(size_t n, int timeout_ms = 5000) const {
    const auto deadline =
        std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    while (std::chrono::steady_clock::now() < deadline) {
      if (count() >= n) return true;
      std::this_thread::sleep_for(std::chrono::milliseconds(10));
    }
    return count() >= n;
  }

 protected:
  void configure_routes(httplib::Server& server) override {
    auto handler = [this](const httplib::Request& req, httplib::Response& res) {
      {
        std::lock_guard lock(mutex_);
        received_.push_back({req.path, json::parse(req.body, nullptr, false),
                             req.get_header_value(wire::kAuthHeader)});
      }
      reply_json(res, 200, {{"status", "ok"}});
    };
    server.Post(wire::kNotifyContext, handler);
    server.Post(wire::kNotifyAvailability, handler);
  }

 private:
  mutable std::mutex mutex_;
  std::vector<Received> received_;
};

inline bool poll_until(const std::function<bool()>& pred, int timeout_ms = 5000) {
  const auto deadline =
      std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
  while (std::chrono::steady_clock::now() < deadline) {
    if (pred()) return true;
    std::this_thread::sleep_for(std::chrono::milliseconds(10));
  }
  return pred();
}

}  // namespace liots::testing
