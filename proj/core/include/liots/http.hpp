#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <functional>
#include <memory>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include "httplib.h"
#include "json.hpp"

#include "liots/model.hpp"

namespace liots {

using Clock = std::function<TimestampMs()>;
Clock system_clock();
TimestampMs now_ms();

/// One observed HTTP exchange, as seen by a service's listener.
struct WireRecord {
  std::string method;
  std::string path;
  std::string request_body;
  std::string response_body;
  std::vector<std::pair<std::string, std::string>> request_headers;
};
using WireTap = std::function<void(const WireRecord&)>;

struct HttpResult {
  int status = 0;          // 0 = transport failure
  json body;               // parsed when parseable, null otherwise
  std::string raw_body;
  std::string error;       // transport error text when status == 0

  bool ok() const { return status >= 200 && status < 300; }
};

/// POST a JSON body; empty token omits the auth header.
HttpResult post_json(const std::string& endpoint, const std::string& path,
                     const json& body, const std::string& token = "",
                     int timeout_ms = 5000);

HttpResult get_status(const std::string& endpoint, int timeout_ms = 2000);

// ---------------------------------------------------------------------------

/// Base for every LIoTS service: an httplib server bound to an ephemeral
/// loopback port, a data-plane request counter, and an optional wire tap.
class HttpServiceBase {
 public:
  explicit HttpServiceBase(std::string role, int thread_pool_size = 8);
  virtual ~HttpServiceBase();

  HttpServiceBase(const HttpServiceBase&) = delete;
  HttpServiceBase& operator=(const HttpServiceBase&) = delete;

  /// Bind and start serving. Port 0 picks an ephemeral port.
  void start(const std::string& host = "127.0.0.1", int port = 0);
  void stop();

  const std::string& endpoint() const { return endpoint_; }
  int port() const { return port_; }
  const std::string& role() const { return role_; }

  /// Requests seen on any path except /v1/status.
  int64_t request_count() const { return request_count_.load(); }

  void set_tap(WireTap tap);

 protected:
  /// Subclasses register routes here before start().
  virtual void configure_routes(httplib::Server& server) = 0;
  /// Contribution to the /v1/status body.
  virtual json status_extra() const { return json::object(); }

  static void reply_json(httplib::Response& res, int status, const json& body);
  static void reply_error(httplib::Response& res, int status, const std::string& reason);

  httplib::Server server_;

 private:
  std::string role_;
  int thread_pool_size_;
  std::string endpoint_;
  int port_ = 0;
  std::thread listen_thread_;
  std::atomic<int64_t> request_count_{0};
  std::mutex tap_mutex_;
  WireTap tap_;
  bool started_ = false;
};

// ---------------------------------------------------------------------------

/// Asynchronous delivery queue for notifications: at-least-once intent with
/// a bounded retry schedule (attempts with exponential backoff from
/// `backoff_base_ms`), after which the message is dropped and counted.
class NotificationDispatcher {
 public:
  explicit NotificationDispatcher(int max_attempts = 3, int backoff_base_ms = 100,
                                  int workers = 2);
  ~NotificationDispatcher();

  NotificationDispatcher(const NotificationDispatcher&) = delete;
  NotificationDispatcher& operator=(const NotificationDispatcher&) = delete;

  void enqueue(std::string endpoint, std::string path, json body,
               std::string token = "");

  /// Block until the queue drains or the timeout elapses; true when drained.
  bool wait_idle(int timeout_ms = 5000);

  int64_t delivered_count() const { return delivered_.load(); }
  int64_t dropped_count() const { return dropped_.load(); }

 private:
  struct Job {
    std::string endpoint;
    std::string path;
    json body;
    std::string token;
    int attempts_made = 0;
    TimestampMs due_at = 0;
  };

  void worker_loop();

  int max_attempts_;
  int backoff_base_ms_;
  std::mutex mutex_;
  std::condition_variable cv_;
  std::condition_variable idle_cv_;
  std::deque<Job> queue_;
  int in_flight_ = 0;
  bool stopping_ = false;
  std::atomic<int64_t> delivered_{0};
  std::atomic<int64_t> dropped_{0};
  std::vector<std::thread> workers_;
};

}  // namespace liots
