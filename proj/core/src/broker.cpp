#include "liots/broker.hpp"

#include <algorithm>
#include <condition_variable>
#include <semaphore>

#include "liots/wire.hpp"

namespace liots {

BrokerRole broker_role_from(const std::string& s) {
  if (s == "intra") return BrokerRole::intra;
  if (s == "in-fed") return BrokerRole::in_fed;
  if (s == "out-fed") return BrokerRole::out_fed;
  throw std::invalid_argument("unknown broker role '" + s + "'");
}

std::string to_string(BrokerRole role) {
  switch (role) {
    case BrokerRole::intra: return "intra";
    case BrokerRole::in_fed: return "in-fed";
    case BrokerRole::out_fed: return "out-fed";
  }
  return "intra";
}

BrokerService::BrokerService(BrokerConfig config, Clock clock)
    : HttpServiceBase("broker", config.thread_pool_size),
      config_(std::move(config)),
      clock_(std::move(clock)),
      dispatcher_(3, 100) {
  if (config_.fanout_timeout_ms <= 0) {
    throw std::invalid_argument("fanoutTimeout must be > 0");
  }
  set_exclude_endpoints(config_.exclude_endpoints);
}

void BrokerService::set_exclude_endpoints(std::vector<std::string> endpoints) {
  std::lock_guard lock(exclude_mutex_);
  exclude_endpoints_.clear();
  for (const auto& e : endpoints) exclude_endpoints_.push_back(normalize_endpoint(e));
}

void BrokerService::set_advertised_endpoint(std::string endpoint) {
  std::lock_guard lock(exclude_mutex_);
  config_.self_endpoint = std::move(endpoint);
}

BrokerService::~BrokerService() { stop(); }

std::string BrokerService::self_endpoint() const {
  std::lock_guard lock(exclude_mutex_);
  return config_.self_endpoint.empty() ? endpoint() : config_.self_endpoint;
}

BrokerService::Discovered BrokerService::discover(const QueryRequest& query,
                                                  const std::string& inbound_token) {
  QueryRequest probe = query;
  probe.aggregate = AggregateMode::set;
  const std::string token =
      config_.discovery_token.empty() ? inbound_token : config_.discovery_token;
  Discovered out;
  const HttpResult res = post_json(config_.discovery_endpoint, wire::kDiscoverAvailability,
                                   wire::to_json(probe), token, config_.fanout_timeout_ms);
  if (!res.ok()) {
    out.error = res.status == 0 ? res.error : res.raw_body;
    return out;
  }
  out.reachable = true;
  if (res.body.contains("registrations")) {
    for (const auto& r : res.body["registrations"]) {
      out.regs.push_back(wire::registration_from_json(r));
    }
  }
  return out;
}

std::vector<std::string> BrokerService::provider_endpoints(
    const std::vector<Registration>& regs) const {
  std::vector<std::string> excluded;
  {
    std::lock_guard lock(exclude_mutex_);
    excluded = exclude_endpoints_;
  }
  excluded.push_back(normalize_endpoint(self_endpoint()));

  std::vector<std::string> out;
  for (const auto& r : regs) {
    const std::string ep = normalize_endpoint(r.providing_endpoint);
    if (ep.empty()) continue;
    if (std::find(excluded.begin(), excluded.end(), ep) != excluded.end()) continue;
    if (std::find(out.begin(), out.end(), ep) == out.end()) out.push_back(ep);
  }
  return out;
}

std::pair<int, QueryResponse> BrokerService::brokered_query(
    const QueryRequest& query, const std::string& inbound_token) {
  Discovered discovered = discover(query, inbound_token);
  if (!discovered.reachable) {
    QueryResponse err;
    err.errors.push_back({config_.discovery_endpoint, 502,
                          "DiscoveryUnreachable: " + discovered.error});
    return {502, std::move(err)};
  }
  const std::vector<std::string> endpoints = provider_endpoints(discovered.regs);
  if (endpoints.empty()) return {200, QueryResponse{}};

  QueryRequest provider_query = query;
  provider_query.aggregate = AggregateMode::set;
  const json provider_body = wire::to_json(provider_query);
  const std::string token =
      config_.provider_token.empty() ? inbound_token : config_.provider_token;

  struct Fanout {
    std::mutex mutex;
    std::condition_variable cv;
    size_t remaining;
    std::vector<std::pair<std::string, HttpResult>> done;
    std::counting_semaphore<> slots;
    explicit Fanout(size_t n, int concurrency)
        : remaining(n), slots(std::max(1, concurrency)) {}
  };
  auto ctx = std::make_shared<Fanout>(endpoints.size(), config_.fanout_concurrency);
  const auto deadline =
      std::chrono::steady_clock::now() + std::chrono::milliseconds(config_.fanout_timeout_ms);

  for (const auto& ep : endpoints) {
    std::thread([ctx, ep, provider_body, token, deadline] {
      ctx->slots.acquire();
      const auto now = std::chrono::steady_clock::now();
      const int remaining_ms = static_cast<int>(
          std::chrono::duration_cast<std::chrono::milliseconds>(deadline - now).count());
      HttpResult result;
      if (remaining_ms > 0) {
        result = post_json(ep, wire::kQueryContext, provider_body, token, remaining_ms);
      } else {
        result.error = "fan-out deadline exhausted";
      }
      ctx->slots.release();
      std::lock_guard lock(ctx->mutex);
      ctx->done.emplace_back(ep, std::move(result));
      ctx->remaining -= 1;
      ctx->cv.notify_all();
    }).detach();
  }

  std::vector<std::pair<std::string, HttpResult>> collected;
  std::vector<std::string> missing;
  {
    std::unique_lock lock(ctx->mutex);
    ctx->cv.wait_until(lock, deadline + std::chrono::milliseconds(200),
                       [&] { return ctx->remaining == 0; });
    collected = ctx->done;
  }
  for (const auto& ep : endpoints) {
    const bool seen = std::any_of(collected.begin(), collected.end(),
                                  [&](const auto& kv) { return kv.first == ep; });
    if (!seen) missing.push_back(ep);
  }

  std::vector<QueryResponse> parts;
  QueryResponse failures;
  for (const auto& [ep, result] : collected) {
    if (result.ok()) {
      QueryResponse part = wire::query_response_from_json(result.body);
      for (auto& e : part.elements) {
        if (!e.provider_hint) e.provider_hint = ep;
      }
      parts.push_back(std::move(part));
    } else if (result.status == 0) {
      failures.errors.push_back({ep, 504, "provider unreachable: " + result.error});
    } else {
      failures.errors.push_back({ep, result.status, result.raw_body});
    }
  }
  for (const auto& ep : missing) {
    failures.errors.push_back({ep, 504, "provider timed out"});
  }
  parts.push_back(std::move(failures));

  try {
    QueryResponse merged = aggregate_responses(parts, query.aggregate);
    return {200, std::move(merged)};
  } catch (const AggregationTypeError& e) {
    QueryResponse err;
    err.errors.push_back({"", 400, std::string("AggregationTypeError: ") + e.what()});
    return {400, std::move(err)};
  }
}

BrokerService::SubscribeResult BrokerService::brokered_subscribe(
    Subscription sub, const std::string& inbound_token) {
  SubscribeResult out;
  if (sub.kind != SubscriptionKind::context) {
    return {400, "", "broker accepts kind=context"};
  }
  if (!is_valid_endpoint(sub.callback_endpoint)) {
    return {400, "", "InvalidCallback: bad callback endpoint"};
  }
  if (sub.subscription_id.empty()) sub.subscription_id = new_uuid();

  Subscription avail;
  avail.kind = SubscriptionKind::availability;
  avail.entities = sub.entities;
  avail.attribute_names = sub.attribute_names;
  avail.callback_endpoint = self_endpoint();
  avail.ttl_seconds = sub.ttl_seconds;

  const std::string token =
      config_.discovery_token.empty() ? inbound_token : config_.discovery_token;
  const HttpResult res =
      post_json(config_.discovery_endpoint, wire::kSubscribeAvailability,
                wire::to_json(avail), token, config_.fanout_timeout_ms);
  if (!res.ok()) {
    return {502, "",
            "DiscoveryUnreachable: " + (res.status == 0 ? res.error : res.raw_body)};
  }

  auto state = std::make_shared<BrokeredSubscriptionState>();
  state->inbound = sub;
  state->inbound_token = inbound_token;
  state->availability_sub_id = res.body.at("subscriptionId").get<std::string>();
  state->created_at = clock_();

  {
    std::lock_guard lock(mutex_);
    states_[sub.subscription_id] = state;
    by_availability_id_[state->availability_sub_id] = sub.subscription_id;
  }
  out.subscription_id = sub.subscription_id;
  return out;
}

bool BrokerService::brokered_unsubscribe(const std::string& subscription_id) {
  std::shared_ptr<BrokeredSubscriptionState> state;
  {
    std::lock_guard lock(mutex_);
    auto it = states_.find(subscription_id);
    if (it == states_.end()) return false;
    state = it->second;
    states_.erase(it);
    by_availability_id_.erase(state->availability_sub_id);
    for (const auto& [ep, sub_id] : state->provider_sub_ids) {
      if (!sub_id.empty()) by_provider_sub_id_.erase(sub_id);
    }
  }
  const std::string disc_token =
      config_.discovery_token.empty() ? state->inbound_token : config_.discovery_token;
  post_json(config_.discovery_endpoint, wire::kUnsubscribeContext,
            {{"subscriptionId", state->availability_sub_id}}, disc_token, 2000);
  const std::string prov_token =
      config_.provider_token.empty() ? state->inbound_token : config_.provider_token;
  for (const auto& [ep, sub_id] : state->provider_sub_ids) {
    if (sub_id.empty()) continue;  // reservation that never completed
    post_json(ep, wire::kUnsubscribeContext, {{"subscriptionId", sub_id}}, prov_token, 2000);
  }
  return true;
}

void BrokerService::handle_availability_notification(
    const std::string& availability_sub_id, const std::vector<Registration>& regs) {
  std::shared_ptr<BrokeredSubscriptionState> state;
  {
    std::lock_guard lock(mutex_);
    auto it = by_availability_id_.find(availability_sub_id);
    if (it == by_availability_id_.end()) return;
    state = states_.at(it->second);
  }

  for (const auto& ep : provider_endpoints(regs)) {
    {
      // reserve the endpoint so concurrent notifications cannot double-subscribe
      std::lock_guard lock(mutex_);
      if (state->provider_sub_ids.contains(ep)) continue;
      state->provider_sub_ids[ep] = "";
    }
    Subscription provider_sub;
    provider_sub.kind = SubscriptionKind::context;
    provider_sub.entities = state->inbound.entities;
    provider_sub.attribute_names = state->inbound.attribute_names;
    provider_sub.callback_endpoint = self_endpoint();
    provider_sub.ttl_seconds = state->inbound.ttl_seconds;

    const std::string token =
        config_.provider_token.empty() ? state->inbound_token : config_.provider_token;
    const HttpResult res = post_json(ep, wire::kSubscribeContext,
                                     wire::to_json(provider_sub), token,
                                     config_.fanout_timeout_ms);
    if (!res.ok()) {
      // release the reservation; retried when the next notification arrives
      std::lock_guard lock(mutex_);
      state->provider_sub_ids.erase(ep);
      continue;
    }

    const std::string sub_id = res.body.at("subscriptionId").get<std::string>();
    bool keep = false;
    {
      std::lock_guard lock(mutex_);
      if (states_.contains(state->inbound.subscription_id)) {
        state->provider_sub_ids[ep] = sub_id;
        by_provider_sub_id_[sub_id] = state->inbound.subscription_id;
        keep = true;
      }
    }
    if (!keep) {
      // unsubscribed concurrently; undo
      post_json(ep, wire::kUnsubscribeContext, {{"subscriptionId", sub_id}}, token, 2000);
      return;
    }
  }
}

bool BrokerService::handle_provider_notification(
    const std::string& provider_sub_id, const std::vector<ContextElement>& elements) {
  std::shared_ptr<BrokeredSubscriptionState> state;
  {
    std::lock_guard lock(mutex_);
    auto it = by_provider_sub_id_.find(provider_sub_id);
    if (it == by_provider_sub_id_.end()) return false;
    auto sit = states_.find(it->second);
    if (sit == states_.end()) return false;
    state = sit->second;
  }
  if (!state_live(*state, clock_())) {
    brokered_unsubscribe(state->inbound.subscription_id);
    return false;
  }

  json payload = json::array();
  for (const auto& e : elements) {
    ContextElement filtered = filter_attributes(e, state->inbound.attribute_names);
    if (!filtered.attributes.empty()) payload.push_back(wire::to_json(filtered));
  }
  if (payload.empty()) return true;  // vacuous payload suppressed

  dispatcher_.enqueue(state->inbound.callback_endpoint, wire::kNotifyContext,
                      json{{"subscriptionId", state->inbound.subscription_id},
                           {"elements", std::move(payload)}},
                      config_.notify_token);
  return true;
}

size_t BrokerService::active_subscription_count() const {
  std::lock_guard lock(mutex_);
  return states_.size();
}

bool BrokerService::state_live(const BrokeredSubscriptionState& s, TimestampMs now) const {
  if (s.inbound.ttl_seconds <= 0) return true;
  return now - s.created_at <= s.inbound.ttl_seconds * 1000;
}

void BrokerService::configure_routes(httplib::Server& server) {
  server.Post(wire::kQueryContext, [this](const httplib::Request& req,
                                          httplib::Response& res) {
    try {
      const QueryRequest q = wire::query_request_from_json(json::parse(req.body));
      const std::string token = req.get_header_value(wire::kAuthHeader);
      auto [status, response] = brokered_query(q, token);
      reply_json(res, status, wire::to_json(response));
    } catch (const std::exception& e) {
      reply_error(res, 400, e.what());
    }
  });

  server.Post(wire::kSubscribeContext, [this](const httplib::Request& req,
                                              httplib::Response& res) {
    try {
      Subscription sub = wire::subscription_from_json(json::parse(req.body));
      const std::string token = req.get_header_value(wire::kAuthHeader);
      SubscribeResult result = brokered_subscribe(std::move(sub), token);
      if (result.status == 200) {
        reply_json(res, 200, {{"subscriptionId", result.subscription_id}});
      } else {
        reply_error(res, result.status, result.reason);
      }
    } catch (const std::exception& e) {
      reply_error(res, 400, e.what());
    }
  });

  server.Post(wire::kUnsubscribeContext, [this](const httplib::Request& req,
                                                httplib::Response& res) {
    try {
      const std::string id = json::parse(req.body).at("subscriptionId").get<std::string>();
      if (brokered_unsubscribe(id)) {
        reply_json(res, 200, {{"status", "ok"}});
      } else {
        reply_error(res, 404, "UnknownSubscription: " + id);
      }
    } catch (const std::exception& e) {
      reply_error(res, 400, e.what());
    }
  });

  server.Post(wire::kNotifyAvailability, [this](const httplib::Request& req,
                                                httplib::Response& res) {
    try {
      const json body = json::parse(req.body);
      const std::string sub_id = body.at("subscriptionId").get<std::string>();
      std::vector<Registration> regs;
      for (const auto& r : body.value("registrations", json::array())) {
        regs.push_back(wire::registration_from_json(r));
      }
      handle_availability_notification(sub_id, regs);
      reply_json(res, 200, {{"status", "ok"}});
    } catch (const std::exception& e) {
      reply_error(res, 400, e.what());
    }
  });

  server.Post(wire::kNotifyContext, [this](const httplib::Request& req,
                                           httplib::Response& res) {
    try {
      const json body = json::parse(req.body);
      const std::string sub_id = body.at("subscriptionId").get<std::string>();
      std::vector<ContextElement> elements;
      for (const auto& e : body.value("elements", json::array())) {
        elements.push_back(wire::element_from_json(e));
      }
      if (handle_provider_notification(sub_id, elements)) {
        reply_json(res, 200, {{"status", "ok"}});
      } else {
        reply_error(res, 404, "UnknownSubscription: " + sub_id);
      }
    } catch (const std::exception& e) {
      reply_error(res, 400, e.what());
    }
  });
}

json BrokerService::status_extra() const {
  return {{"name", config_.name},
          {"brokerRole", to_string(config_.role)},
          {"activeSubscriptions", active_subscription_count()},
          {"notificationsDelivered", dispatcher_.delivered_count()},
          {"notificationsDropped", dispatcher_.dropped_count()}};
}

}  // namespace liots
