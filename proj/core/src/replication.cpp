#include "liots/replication.hpp"

#include "liots/http.hpp"
#include "liots/wire.hpp"

namespace liots {

namespace {

const char* kind_name(ReplicationKind k) {
  switch (k) {
    case ReplicationKind::registration: return "registration";
    case ReplicationKind::identity: return "identity";
    case ReplicationKind::token: return "token";
    case ReplicationKind::policy: return "policy";
  }
  return "registration";
}

ReplicationKind kind_from(const std::string& s) {
  if (s == "registration") return ReplicationKind::registration;
  if (s == "identity") return ReplicationKind::identity;
  if (s == "token") return ReplicationKind::token;
  if (s == "policy") return ReplicationKind::policy;
  throw wire::DecodeError("unknown replication kind '" + s + "'");
}

constexpr int64_t kMaxBackoffMs = 2000;

}  // namespace

json to_json(const ReplicationOp& op) {
  return {{"opId", op.op_id},
          {"kind", kind_name(op.kind)},
          {"payload", op.payload},
          {"originDomain", op.origin_domain},
          {"version", op.version}};
}

ReplicationOp replication_op_from_json(const json& j) {
  ReplicationOp op;
  op.op_id = j.at("opId").get<std::string>();
  op.kind = kind_from(j.at("kind").get<std::string>());
  op.payload = j.at("payload");
  op.origin_domain = j.value("originDomain", "");
  op.version = j.value("version", int64_t{0});
  return op;
}

Replicator::Replicator() {
  worker_ = std::thread([this] { worker_loop(); });
}

Replicator::~Replicator() {
  {
    std::lock_guard lock(mutex_);
    stopping_ = true;
  }
  cv_.notify_all();
  if (worker_.joinable()) worker_.join();
}

void Replicator::set_peers(std::vector<std::string> peer_endpoints) {
  std::lock_guard lock(mutex_);
  peers_ = std::move(peer_endpoints);
}

std::vector<std::string> Replicator::peers() const {
  std::lock_guard lock(mutex_);
  return peers_;
}

void Replicator::broadcast(const ReplicationOp& op) {
  const json body = to_json(op);
  {
    std::lock_guard lock(mutex_);
    for (const auto& peer : peers_) {
      queue_.push_back(Delivery{peer, body, 0, now_ms()});
    }
  }
  cv_.notify_all();
}

bool Replicator::remember(const std::string& op_id) {
  std::lock_guard lock(mutex_);
  return seen_ops_.insert(op_id).second;
}

bool Replicator::wait_idle(int timeout_ms) {
  std::unique_lock lock(mutex_);
  return idle_cv_.wait_for(lock, std::chrono::milliseconds(timeout_ms),
                           [this] { return queue_.empty() && in_flight_ == 0; });
}

int64_t Replicator::pending_count() const {
  std::lock_guard lock(mutex_);
  return static_cast<int64_t>(queue_.size()) + in_flight_;
}

void Replicator::worker_loop() {
  std::unique_lock lock(mutex_);
  while (true) {
    TimestampMs next_due = 0;
    auto pick = [&]() -> std::optional<Delivery> {
      const TimestampMs now = now_ms();
      next_due = 0;
      for (auto it = queue_.begin(); it != queue_.end(); ++it) {
        if (it->due_at <= now) {
          Delivery d = std::move(*it);
          queue_.erase(it);
          return d;
        }
        if (next_due == 0 || it->due_at < next_due) next_due = it->due_at;
      }
      return std::nullopt;
    };

    std::optional<Delivery> delivery;
    while (!(delivery = pick())) {
      if (stopping_) return;
      if (queue_.empty() && in_flight_ == 0) idle_cv_.notify_all();
      if (next_due == 0) {
        cv_.wait(lock);
      } else {
        cv_.wait_for(lock, std::chrono::milliseconds(next_due - now_ms() + 1));
      }
    }
    if (stopping_) return;

    ++in_flight_;
    lock.unlock();
    const HttpResult result =
        post_json(delivery->peer, wire::kReplicate, delivery->body, "", 2000);
    lock.lock();
    --in_flight_;

    if (!result.ok()) {
      delivery->attempts += 1;
      const int64_t backoff =
          std::min<int64_t>(kMaxBackoffMs, 100 * (int64_t{1} << std::min(delivery->attempts, 10)));
      delivery->due_at = now_ms() + backoff;
      queue_.push_back(std::move(*delivery));
    }
    if (queue_.empty() && in_flight_ == 0) idle_cv_.notify_all();
  }
}

}  // namespace liots
