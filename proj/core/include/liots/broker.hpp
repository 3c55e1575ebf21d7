#pragma once

#include <map>
#include <memory>
#include <mutex>

#include "liots/http.hpp"
#include "liots/model.hpp"

namespace liots {

enum class BrokerRole { intra, in_fed, out_fed };

struct BrokerConfig {
  std::string name = "broker";
  BrokerRole role = BrokerRole::intra;
  std::string discovery_endpoint;
  std::string self_endpoint;  // advertised callback base; empty = listen endpoint
  int fanout_timeout_ms = 5000;
  int fanout_concurrency = 32;
  // outbound auth. Empty means pass the inbound request's token through,
  // which is the idB behaviour; federation brokers substitute their own
  // scope's tokens so intra-domain tokens never cross the boundary.
  std::string discovery_token;
  std::string provider_token;
  std::string notify_token;
  // endpoints never fanned out to (the domain's own boundary broker);
  // prevents federated requests from bouncing back out of the domain
  std::vector<std::string> exclude_endpoints;
  int thread_pool_size = 16;
};

BrokerRole broker_role_from(const std::string& s);
std::string to_string(BrokerRole role);

/// Per inbound subscription: the availability subscription at the discovery
/// plus one provider subscription per discovered endpoint.
struct BrokeredSubscriptionState {
  Subscription inbound;
  std::string inbound_token;
  std::string availability_sub_id;
  std::map<std::string, std::string> provider_sub_ids;  // normalized endpoint -> sub id
  TimestampMs created_at = 0;
};

/// Mediator between context requestors and IoT providers: dispatches
/// queries and subscriptions transparently to the providers advertised by
/// its discovery. One implementation serves the idB, inFedB and outFedB
/// roles, differing only in configuration.
class BrokerService : public HttpServiceBase {
 public:
  explicit BrokerService(BrokerConfig config, Clock clock = system_clock());
  ~BrokerService() override;

  const BrokerConfig& config() const { return config_; }
  std::string self_endpoint() const;

  /// Replace the excluded-endpoint list (the domain's own boundary broker
  /// is typically only known after both federation brokers are up).
  void set_exclude_endpoints(std::vector<std::string> endpoints);

  /// Advertise a fronting PEP instead of the listen endpoint in callbacks.
  void set_advertised_endpoint(std::string endpoint);

  /// Discover providers and fan /v1/queryContext out to each of them in
  /// parallel, then aggregate what arrived before the timeout.
  /// Returns the HTTP status to report (200, 400, 502) plus the response.
  std::pair<int, QueryResponse> brokered_query(const QueryRequest& query,
                                               const std::string& inbound_token);

  struct SubscribeResult {
    int status = 200;
    std::string subscription_id;
    std::string reason;
  };
  SubscribeResult brokered_subscribe(Subscription sub, const std::string& inbound_token);

  bool brokered_unsubscribe(const std::string& subscription_id);

  /// Subscribe to every endpoint in `regs` not already covered for the
  /// state owning `availability_sub_id`. Known endpoints are skipped.
  void handle_availability_notification(const std::string& availability_sub_id,
                                        const std::vector<Registration>& regs);

  /// Filter and forward a provider notification to the inbound requestor.
  /// Returns false when no live state references the provider sub id.
  bool handle_provider_notification(const std::string& provider_sub_id,
                                    const std::vector<ContextElement>& elements);

  size_t active_subscription_count() const;
  NotificationDispatcher& dispatcher() { return dispatcher_; }

 protected:
  void configure_routes(httplib::Server& server) override;
  json status_extra() const override;

 private:
  struct Discovered {
    bool reachable = false;
    std::string error;
    std::vector<Registration> regs;
  };
  Discovered discover(const QueryRequest& query, const std::string& inbound_token);
  std::vector<std::string> provider_endpoints(const std::vector<Registration>& regs) const;
  bool state_live(const BrokeredSubscriptionState& s, TimestampMs now) const;

  BrokerConfig config_;
  Clock clock_;
  NotificationDispatcher dispatcher_;

  mutable std::mutex exclude_mutex_;
  std::vector<std::string> exclude_endpoints_;  // normalized

  mutable std::mutex mutex_;
  // keyed by inbound subscription id; state mutations serialized per id
  std::map<std::string, std::shared_ptr<BrokeredSubscriptionState>> states_;
  std::map<std::string, std::string> by_availability_id_;
  std::map<std::string, std::string> by_provider_sub_id_;
};

}  // namespace liots
