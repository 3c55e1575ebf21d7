#include "liots/http.hpp"

#include <chrono>

#include "liots/wire.hpp"

namespace liots {

namespace {

struct ParsedUrl {
  std::string scheme_host_port;
  std::string path_prefix;
};

ParsedUrl split_url(const std::string& endpoint) {
  ParsedUrl out;
  const size_t scheme_end = endpoint.find("://");
  const size_t path_start =
      scheme_end == std::string::npos ? endpoint.find('/') : endpoint.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    out.scheme_host_port = endpoint;
  } else {
    out.scheme_host_port = endpoint.substr(0, path_start);
    out.path_prefix = endpoint.substr(path_start);
  }
  while (!out.path_prefix.empty() && out.path_prefix.back() == '/') {
    out.path_prefix.pop_back();
  }
  return out;
}

}  // namespace

Clock system_clock() {
  return [] { return now_ms(); };
}

TimestampMs now_ms() {
  return std::chrono::duration_cast<std::chrono::milliseconds>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

HttpResult post_json(const std::string& endpoint, const std::string& path,
                     const json& body, const std::string& token, int timeout_ms) {
  const ParsedUrl url = split_url(endpoint);
  httplib::Client client(url.scheme_host_port);
  client.set_tcp_nodelay(true);
  client.set_connection_timeout(std::chrono::milliseconds(timeout_ms));
  client.set_read_timeout(std::chrono::milliseconds(timeout_ms));
  client.set_write_timeout(std::chrono::milliseconds(timeout_ms));

  httplib::Headers headers;
  if (!token.empty()) headers.emplace(wire::kAuthHeader, token);

  HttpResult out;
  auto res = client.Post(url.path_prefix + path, headers, body.dump(), "application/json");
  if (!res) {
    out.error = httplib::to_string(res.error());
    return out;
  }
  out.status = res->status;
  out.raw_body = res->body;
  out.body = json::parse(res->body, nullptr, /*allow_exceptions=*/false);
  return out;
}

HttpResult get_status(const std::string& endpoint, int timeout_ms) {
  const ParsedUrl url = split_url(endpoint);
  httplib::Client client(url.scheme_host_port);
  client.set_tcp_nodelay(true);
  client.set_connection_timeout(std::chrono::milliseconds(timeout_ms));
  client.set_read_timeout(std::chrono::milliseconds(timeout_ms));
  HttpResult out;
  auto res = client.Get(url.path_prefix + std::string(wire::kStatus));
  if (!res) {
    out.error = httplib::to_string(res.error());
    return out;
  }
  out.status = res->status;
  out.raw_body = res->body;
  out.body = json::parse(res->body, nullptr, false);
  return out;
}

// ---------------------------------------------------------------------------

HttpServiceBase::HttpServiceBase(std::string role, int thread_pool_size)
    : role_(std::move(role)), thread_pool_size_(thread_pool_size) {}

HttpServiceBase::~HttpServiceBase() { stop(); }

void HttpServiceBase::start(const std::string& host, int port) {
  if (started_) return;

  server_.new_task_queue = [n = thread_pool_size_] { return new httplib::ThreadPool(n); };
  server_.set_tcp_nodelay(true);

  server_.set_pre_routing_handler(
      [this](const httplib::Request& req, httplib::Response&) {
        if (req.path != wire::kStatus) request_count_.fetch_add(1);
        return httplib::Server::HandlerResponse::Unhandled;
      });

  server_.set_logger([this](const httplib::Request& req, const httplib::Response& res) {
    std::lock_guard lock(tap_mutex_);
    if (!tap_) return;
    WireRecord rec;
    rec.method = req.method;
    rec.path = req.path;
    rec.request_body = req.body;
    rec.response_body = res.body;
    for (const auto& [k, v] : req.headers) rec.request_headers.emplace_back(k, v);
    tap_(rec);
  });

  server_.Get(wire::kStatus, [this](const httplib::Request&, httplib::Response& res) {
    json body{{"role", role_},
              {"endpoint", endpoint_},
              {"requestCount", request_count_.load()}};
    body.update(status_extra());
    reply_json(res, 200, body);
  });

  configure_routes(server_);

  if (port == 0) {
    port_ = server_.bind_to_any_port(host);
    if (port_ <= 0) throw std::runtime_error("failed to bind ephemeral port");
  } else {
    if (!server_.bind_to_port(host, port)) {
      throw std::runtime_error("failed to bind port " + std::to_string(port));
    }
    port_ = port;
  }
  endpoint_ = "http://" + host + ":" + std::to_string(port_);

  listen_thread_ = std::thread([this] { server_.listen_after_bind(); });
  server_.wait_until_ready();
  started_ = true;
}

void HttpServiceBase::stop() {
  if (!started_) return;
  server_.stop();
  if (listen_thread_.joinable()) listen_thread_.join();
  started_ = false;
}

void HttpServiceBase::set_tap(WireTap tap) {
  std::lock_guard lock(tap_mutex_);
  tap_ = std::move(tap);
}

void HttpServiceBase::reply_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void HttpServiceBase::reply_error(httplib::Response& res, int status,
                                  const std::string& reason) {
  res.status = status;
  res.set_content(wire::error_body(status, reason), "application/json");
}

// ---------------------------------------------------------------------------

NotificationDispatcher::NotificationDispatcher(int max_attempts, int backoff_base_ms,
                                               int workers)
    : max_attempts_(max_attempts), backoff_base_ms_(backoff_base_ms) {
  for (int i = 0; i < workers; ++i) {
    workers_.emplace_back([this] { worker_loop(); });
  }
}

NotificationDispatcher::~NotificationDispatcher() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  cv_.notify_all();
  for (auto& w : workers_) {
    if (w.joinable()) w.join();
  }
}

void NotificationDispatcher::enqueue(std::string endpoint, std::string path, json body,
                                     std::string token) {
  {
    std::lock_guard lock(mutex_);
    queue_.push_back(Job{std::move(endpoint), std::move(path), std::move(body),
                         std::move(token), 0, now_ms()});
  }
  cv_.notify_one();
}

bool NotificationDispatcher::wait_idle(int timeout_ms) {
  std::unique_lock lock(mutex_);
  return idle_cv_.wait_for(lock, std::chrono::milliseconds(timeout_ms),
                           [this] { return queue_.empty() && in_flight_ == 0; });
}

void NotificationDispatcher::worker_loop() {
  std::unique_lock lock(mutex_);
  while (true) {
    TimestampMs next_due = 0;
    auto pick = [&]() -> std::optional<Job> {
      const TimestampMs now = now_ms();
      next_due = 0;
      for (auto it = queue_.begin(); it != queue_.end(); ++it) {
        if (it->due_at <= now) {
          Job j = std::move(*it);
          queue_.erase(it);
          return j;
        }
        if (next_due == 0 || it->due_at < next_due) next_due = it->due_at;
      }
      return std::nullopt;
    };

    std::optional<Job> job;
    while (!(job = pick())) {
      if (stopping_) return;
      if (queue_.empty() && in_flight_ == 0) idle_cv_.notify_all();
      if (next_due == 0) {
        cv_.wait(lock);
      } else {
        cv_.wait_for(lock, std::chrono::milliseconds(next_due - now_ms() + 1));
      }
    }

    ++in_flight_;
    lock.unlock();

    HttpResult result = post_json(job->endpoint, job->path, job->body, job->token);
    const bool success = result.ok();

    lock.lock();
    --in_flight_;
    if (success) {
      delivered_.fetch_add(1);
    } else {
      job->attempts_made += 1;
      if (job->attempts_made >= max_attempts_) {
        dropped_.fetch_add(1);
      } else {
        job->due_at = now_ms() + backoff_base_ms_ * (int64_t{1} << (job->attempts_made - 1));
        queue_.push_back(std::move(*job));
        cv_.notify_one();
      }
    }
    if (queue_.empty() && in_flight_ == 0) idle_cv_.notify_all();
  }
}

}  // namespace liots
