#pragma once

#include <map>
#include <memory>
#include <shared_mutex>

#include "liots/http.hpp"
#include "liots/model.hpp"

namespace liots {

/// In-memory context store with copy-on-read value semantics. Publish
/// batches are atomic with respect to queries: a concurrent query sees all
/// of a batch or none of it.
class ContextStore {
 public:
  explicit ContextStore(Clock clock = system_clock()) : clock_(std::move(clock)) {}

  struct PublishOutcome {
    // per matching subscription: the notification payload to deliver
    struct PendingNotification {
      std::string subscription_id;
      std::string callback_endpoint;
      std::vector<ContextElement> elements;
    };
    std::vector<PendingNotification> notifications;
    std::vector<std::string> newly_seen_types;
    std::vector<EntityRef> newly_seen_entities;
  };

  /// Attribute-wise upsert. Throws std::invalid_argument on malformed input.
  PublishOutcome publish(const std::vector<ContextElement>& elements);

  QueryResponse query(const QueryRequest& request) const;

  /// Returns subscription id and the initial notification payload (current
  /// matching elements, possibly empty).
  std::pair<std::string, std::vector<ContextElement>> subscribe(Subscription sub);

  /// False when the id is unknown.
  bool unsubscribe(const std::string& subscription_id);

  size_t element_count() const;
  size_t subscription_count() const;
  std::vector<ContextElement> snapshot_elements() const;
  std::vector<ContextElement> elements_for(const std::vector<EntityRef>& refs) const;

 private:
  bool subscription_live(const Subscription& s, TimestampMs created_at,
                         TimestampMs now) const;

  struct StoredSubscription {
    Subscription sub;
    TimestampMs created_at = 0;
  };

  Clock clock_;
  mutable std::shared_mutex mutex_;
  std::map<std::pair<std::string, std::string>, ContextElement> elements_;  // (id, type)
  std::map<std::string, StoredSubscription> subscriptions_;
};

// ---------------------------------------------------------------------------

struct ContextManagerConfig {
  std::string name = "cm";
  // availability announcements
  std::string announce_target;            // registry endpoint; empty = no announcements
  std::string announce_token;             // auth for announcements
  bool announce_per_entity = true;        // false = one registration per entity type
  int64_t announce_ttl_seconds = 3600;
  std::string advertised_endpoint;        // endpoint to put in registrations;
                                          // empty = the listen endpoint
  // outbound notification auth
  std::string notify_token;
  // restart persistence: append-only snapshot of publish batches
  std::string snapshot_path;
  // benchmark fault/delay injection
  int artificial_delay_ms = 0;
  int thread_pool_size = 8;
  int notify_max_attempts = 3;
  int notify_backoff_base_ms = 100;
};

/// The Context Manager service: stores and indexes context, answers queries,
/// serves subscriptions, and announces its availability upstream.
class ContextManagerService : public HttpServiceBase {
 public:
  explicit ContextManagerService(ContextManagerConfig config = {},
                                 Clock clock = system_clock());
  ~ContextManagerService() override;

  ContextStore& store() { return store_; }
  const ContextManagerConfig& config() const { return config_; }

  /// Endpoint value used in announced registrations.
  std::string advertised_endpoint() const;

  /// Wire up availability announcements after the fronting PEP is known.
  void configure_announcements(std::string advertised_endpoint, std::string target,
                               std::string token);

  /// Push current availability to the announce target (startup and on
  /// entity/type set changes). No-op without a target.
  void announce();
  /// Incremental form covering only the given entities.
  void announce_for(const std::vector<EntityRef>& refs);

  NotificationDispatcher& dispatcher() { return dispatcher_; }

 protected:
  void configure_routes(httplib::Server& server) override;
  json status_extra() const override;

 private:
  void dispatch(const ContextStore::PublishOutcome& outcome);
  void announce_elements(const std::vector<ContextElement>& elements);
  void append_snapshot(const std::vector<ContextElement>& elements);
  void replay_snapshot();

  ContextManagerConfig config_;
  ContextStore store_;
  NotificationDispatcher dispatcher_;

  std::mutex announce_mutex_;
  // per announced registration: id, version, and the content fingerprint
  struct Announced {
    std::string registration_id;
    int64_t version = 0;
    std::string fingerprint;
  };
  std::map<std::string, Announced> announced_;  // key: entity or type key
  std::mutex snapshot_mutex_;
};

}  // namespace liots
