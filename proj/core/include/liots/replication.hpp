#pragma once

#include <atomic>
#include <condition_variable>
#include <deque>
#include <functional>
#include <mutex>
#include <string>
#include <thread>
#include <unordered_set>
#include <vector>

#include "liots/model.hpp"

namespace liots {

enum class ReplicationKind { registration, identity, token, policy };

/// One state mutation broadcast to every peer replica. Applying the same
/// opId twice is a no-op; conflicting keys resolve last-writer-wins on
/// (version, originDomain).
struct ReplicationOp {
  std::string op_id;  // UUID
  ReplicationKind kind = ReplicationKind::registration;
  json payload;
  std::string origin_domain;
  int64_t version = 0;
};

json to_json(const ReplicationOp& op);
ReplicationOp replication_op_from_json(const json& j);

/// Reliable full-mesh op broadcast: every op is queued per peer and retried
/// with capped exponential backoff until the peer acknowledges. Inbound
/// dedup (`remember`) lives here too so a replicated service needs exactly
/// one of these.
class Replicator {
 public:
  Replicator();
  ~Replicator();

  Replicator(const Replicator&) = delete;
  Replicator& operator=(const Replicator&) = delete;

  void set_peers(std::vector<std::string> peer_endpoints);
  std::vector<std::string> peers() const;

  /// Queue the op for delivery to every current peer.
  void broadcast(const ReplicationOp& op);

  /// True the first time an opId is seen; false for duplicates.
  bool remember(const std::string& op_id);

  /// Wait until every queued op is acknowledged (true) or timeout (false).
  bool wait_idle(int timeout_ms = 10000);

  int64_t pending_count() const;

 private:
  struct Delivery {
    std::string peer;
    json body;
    int attempts = 0;
    TimestampMs due_at = 0;
  };

  void worker_loop();

  mutable std::mutex mutex_;
  std::condition_variable cv_;
  std::condition_variable idle_cv_;
  std::vector<std::string> peers_;
  std::deque<Delivery> queue_;
  int in_flight_ = 0;
  bool stopping_ = false;
  std::unordered_set<std::string> seen_ops_;
  std::thread worker_;
};

}  // namespace liots
