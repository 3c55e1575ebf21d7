#pragma once

#include <map>
#include <set>
#include <shared_mutex>
#include <unordered_map>

#include "liots/http.hpp"
#include "liots/model.hpp"
#include "liots/replication.hpp"

namespace liots {

/// Registry of provider availability. Registration versions are monotonic
/// per id; expired registrations are filtered lazily at read time and
/// removed by a periodic sweep. A ttl of zero is a tombstone: the record is
/// kept for version checks but never returned.
class RegistrationStore {
 public:
  explicit RegistrationStore(Clock clock = system_clock()) : clock_(std::move(clock)) {}

  enum class RegisterResult { applied, stale, invalid };

  struct RegisterOutcome {
    RegisterResult result = RegisterResult::applied;
    std::string registration_id;
    std::string reason;
    // availability subscriptions matched by the applied registration
    struct PendingNotification {
      std::string subscription_id;
      std::string callback_endpoint;
      Registration registration;
    };
    std::vector<PendingNotification> notifications;
  };

  RegisterOutcome register_registration(Registration reg);

  std::vector<Registration> discover(const QueryRequest& query) const;

  /// Returns the id plus the initial notification (stored matching regs).
  std::pair<std::string, std::vector<Registration>> subscribe_availability(
      Subscription sub);

  bool unsubscribe(const std::string& subscription_id);

  /// Drop long-expired non-tombstone records. Tombstones are retained.
  void sweep();

  size_t registration_count() const;
  size_t live_registration_count() const;
  size_t subscription_count() const;

 private:
  struct StoredRegistration {
    Registration reg;
    TimestampMs received_at = 0;
  };
  struct StoredSubscription {
    Subscription sub;
    TimestampMs created_at = 0;
  };

  bool expired(const StoredRegistration& r, TimestampMs now) const {
    return r.reg.ttl_seconds <= 0 ||
           now - r.received_at > r.reg.ttl_seconds * 1000;
  }
  bool sub_live(const StoredSubscription& s, TimestampMs now) const {
    return s.sub.ttl_seconds <= 0 || now - s.created_at <= s.sub.ttl_seconds * 1000;
  }

  void index_registration(const Registration& reg);
  void unindex_registration(const Registration& reg);
  static bool indexable(const Registration& reg);
  static std::string index_key(const std::string& type, const std::string& id) {
    return type + '\n' + id;
  }

  Clock clock_;
  mutable std::shared_mutex mutex_;
  std::map<std::string, StoredRegistration> regs_;
  std::map<std::string, StoredSubscription> avail_subs_;
  // concrete-entity index: (type, id) -> registration ids; registrations
  // carrying patterns or star types live in unindexed_ and are always scanned
  std::unordered_map<std::string, std::vector<std::string>> concrete_index_;
  std::set<std::string> unindexed_;
};

// ---------------------------------------------------------------------------

struct DiscoveryConfig {
  std::string name = "discovery";
  std::vector<std::string> replication_peers;  // fedD role when non-empty
  std::string origin_domain;
  std::string notify_token;
  int sweep_interval_ms = 1000;
  int thread_pool_size = 8;
  int notify_max_attempts = 3;
  int notify_backoff_base_ms = 100;
};

/// Discovery service; the same binary serves the intra-domain (idD) and
/// federation (fedD) roles, the latter adding op replication.
class DiscoveryService : public HttpServiceBase {
 public:
  explicit DiscoveryService(DiscoveryConfig config = {}, Clock clock = system_clock());
  ~DiscoveryService() override;

  RegistrationStore& store() { return store_; }
  Replicator& replicator() { return replicator_; }
  NotificationDispatcher& dispatcher() { return dispatcher_; }

  void set_replication_peers(std::vector<std::string> peers);

  /// Auth attached to outgoing availability notifications; settable late
  /// because the token scope may only exist after federation wiring.
  void set_notify_token(std::string token);
  std::string notify_token() const;

  /// Register directly (local origin: replicated to peers when fedD).
  RegistrationStore::RegisterOutcome register_local(Registration reg);

 protected:
  void configure_routes(httplib::Server& server) override;
  json status_extra() const override;

 private:
  void notify(
      const std::vector<RegistrationStore::RegisterOutcome::PendingNotification>& pending);
  void sweep_loop();

  DiscoveryConfig config_;
  mutable std::mutex notify_token_mutex_;
  std::string notify_token_;
  RegistrationStore store_;
  NotificationDispatcher dispatcher_;
  Replicator replicator_;
  std::thread sweeper_;
  std::atomic<bool> stopping_{false};
  std::condition_variable sweep_cv_;
  std::mutex sweep_mutex_;
};

}  // namespace liots
