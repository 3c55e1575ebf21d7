#include "liots/discovery.hpp"

#include <algorithm>

#include "liots/wire.hpp"

namespace liots {

RegistrationStore::RegisterOutcome RegistrationStore::register_registration(
    Registration reg) {
  RegisterOutcome out;
  if (reg.registration_id.empty()) reg.registration_id = new_uuid();
  out.registration_id = reg.registration_id;
  if (auto reason = validate_registration(reg); reason && reg.ttl_seconds > 0) {
    // tombstones (ttl <= 0) skip content validation so a reg can always die
    out.result = RegisterResult::invalid;
    out.reason = *reason;
    return out;
  }
  const TimestampMs now = clock_();

  std::unique_lock lock(mutex_);
  auto it = regs_.find(reg.registration_id);
  if (it != regs_.end() && reg.version <= it->second.reg.version) {
    out.result = RegisterResult::stale;
    out.reason = "StaleVersion: stored version " + std::to_string(it->second.reg.version) +
                 " >= " + std::to_string(reg.version);
    return out;
  }
  if (it != regs_.end()) unindex_registration(it->second.reg);
  StoredRegistration stored{reg, now};
  regs_[reg.registration_id] = stored;
  index_registration(reg);

  if (!expired(stored, now)) {
    for (const auto& [id, s] : avail_subs_) {
      if (!sub_live(s, now)) continue;
      QueryRequest probe;
      probe.entities = s.sub.entities;
      probe.attribute_names = s.sub.attribute_names;
      if (match_registration(probe, reg)) {
        out.notifications.push_back({id, s.sub.callback_endpoint, reg});
      }
    }
  }
  return out;
}

bool RegistrationStore::indexable(const Registration& reg) {
  return std::all_of(reg.entities.begin(), reg.entities.end(), [](const EntityRef& e) {
    return !e.is_pattern && e.type != "*";
  });
}

void RegistrationStore::index_registration(const Registration& reg) {
  if (!indexable(reg)) {
    unindexed_.insert(reg.registration_id);
    return;
  }
  for (const auto& e : reg.entities) {
    concrete_index_[index_key(e.type, e.id)].push_back(reg.registration_id);
  }
}

void RegistrationStore::unindex_registration(const Registration& reg) {
  unindexed_.erase(reg.registration_id);
  for (const auto& e : reg.entities) {
    auto it = concrete_index_.find(index_key(e.type, e.id));
    if (it == concrete_index_.end()) continue;
    std::erase(it->second, reg.registration_id);
    if (it->second.empty()) concrete_index_.erase(it);
  }
}

std::vector<Registration> RegistrationStore::discover(const QueryRequest& query) const {
  const TimestampMs now = clock_();
  std::vector<Registration> out;
  std::shared_lock lock(mutex_);

  const bool needs_scan =
      std::any_of(query.entities.begin(), query.entities.end(),
                  [](const EntityRef& e) { return e.is_pattern || e.type == "*"; });

  if (needs_scan) {
    for (const auto& [id, stored] : regs_) {
      if (expired(stored, now)) continue;
      if (match_registration(query, stored.reg)) out.push_back(stored.reg);
    }
    return out;
  }

  // all query refs concrete: candidates come from the index plus the
  // always-scanned pattern registrations
  std::set<std::string> candidates(unindexed_.begin(), unindexed_.end());
  for (const auto& e : query.entities) {
    auto it = concrete_index_.find(index_key(e.type, e.id));
    if (it == concrete_index_.end()) continue;
    candidates.insert(it->second.begin(), it->second.end());
  }
  for (const auto& id : candidates) {
    auto it = regs_.find(id);
    if (it == regs_.end()) continue;
    if (expired(it->second, now)) continue;
    if (match_registration(query, it->second.reg)) out.push_back(it->second.reg);
  }
  return out;
}

std::pair<std::string, std::vector<Registration>> RegistrationStore::subscribe_availability(
    Subscription sub) {
  if (sub.subscription_id.empty()) sub.subscription_id = new_uuid();
  const TimestampMs now = clock_();
  std::unique_lock lock(mutex_);
  std::vector<Registration> initial;
  QueryRequest probe;
  probe.entities = sub.entities;
  probe.attribute_names = sub.attribute_names;
  for (const auto& [id, stored] : regs_) {
    if (expired(stored, now)) continue;
    if (match_registration(probe, stored.reg)) initial.push_back(stored.reg);
  }
  const std::string id = sub.subscription_id;
  avail_subs_[id] = StoredSubscription{std::move(sub), now};
  return {id, std::move(initial)};
}

bool RegistrationStore::unsubscribe(const std::string& subscription_id) {
  std::unique_lock lock(mutex_);
  return avail_subs_.erase(subscription_id) > 0;
}

void RegistrationStore::sweep() {
  const TimestampMs now = clock_();
  constexpr int64_t kGraceMs = 60'000;
  std::unique_lock lock(mutex_);
  for (auto it = regs_.begin(); it != regs_.end();) {
    const auto& stored = it->second;
    const bool tombstone = stored.reg.ttl_seconds <= 0;
    if (!tombstone && expired(stored, now) &&
        now - stored.received_at > stored.reg.ttl_seconds * 1000 + kGraceMs) {
      unindex_registration(stored.reg);
      it = regs_.erase(it);
    } else {
      ++it;
    }
  }
}

size_t RegistrationStore::registration_count() const {
  std::shared_lock lock(mutex_);
  return regs_.size();
}

size_t RegistrationStore::live_registration_count() const {
  const TimestampMs now = clock_();
  std::shared_lock lock(mutex_);
  return static_cast<size_t>(
      std::count_if(regs_.begin(), regs_.end(),
                    [&](const auto& kv) { return !expired(kv.second, now); }));
}

size_t RegistrationStore::subscription_count() const {
  std::shared_lock lock(mutex_);
  return avail_subs_.size();
}

// ---------------------------------------------------------------------------

DiscoveryService::DiscoveryService(DiscoveryConfig config, Clock clock)
    : HttpServiceBase("discovery", config.thread_pool_size),
      config_(std::move(config)),
      notify_token_(config_.notify_token),
      store_(std::move(clock)),
      dispatcher_(config_.notify_max_attempts, config_.notify_backoff_base_ms) {
  replicator_.set_peers(config_.replication_peers);
  sweeper_ = std::thread([this] { sweep_loop(); });
}

void DiscoveryService::set_notify_token(std::string token) {
  std::lock_guard lock(notify_token_mutex_);
  notify_token_ = std::move(token);
}

std::string DiscoveryService::notify_token() const {
  std::lock_guard lock(notify_token_mutex_);
  return notify_token_;
}

DiscoveryService::~DiscoveryService() {
  stopping_.store(true);
  sweep_cv_.notify_all();
  if (sweeper_.joinable()) sweeper_.join();
  stop();
}

void DiscoveryService::set_replication_peers(std::vector<std::string> peers) {
  replicator_.set_peers(std::move(peers));
}

RegistrationStore::RegisterOutcome DiscoveryService::register_local(Registration reg) {
  auto outcome = store_.register_registration(reg);
  if (outcome.result == RegistrationStore::RegisterResult::applied) {
    notify(outcome.notifications);
    if (!replicator_.peers().empty()) {
      ReplicationOp op;
      op.op_id = new_uuid();
      op.kind = ReplicationKind::registration;
      op.payload = wire::to_json(reg);
      op.origin_domain = config_.origin_domain;
      op.version = reg.version;
      replicator_.broadcast(op);
    }
  }
  return outcome;
}

void DiscoveryService::configure_routes(httplib::Server& server) {
  server.Post(wire::kRegisterContext, [this](const httplib::Request& req,
                                             httplib::Response& res) {
    try {
      Registration reg = wire::registration_from_json(json::parse(req.body));
      auto outcome = register_local(std::move(reg));
      switch (outcome.result) {
        case RegistrationStore::RegisterResult::applied:
          reply_json(res, 200, {{"registrationId", outcome.registration_id}});
          break;
        case RegistrationStore::RegisterResult::stale:
          reply_error(res, 409, outcome.reason);
          break;
        case RegistrationStore::RegisterResult::invalid:
          reply_error(res, 400, outcome.reason);
          break;
      }
    } catch (const std::exception& e) {
      reply_error(res, 400, e.what());
    }
  });

  server.Post(wire::kDiscoverAvailability, [this](const httplib::Request& req,
                                                  httplib::Response& res) {
    try {
      const QueryRequest q = wire::query_request_from_json(json::parse(req.body));
      json regs = json::array();
      for (const auto& r : store_.discover(q)) regs.push_back(wire::to_json(r));
      reply_json(res, 200, {{"registrations", std::move(regs)}});
    } catch (const std::exception& e) {
      reply_error(res, 400, e.what());
    }
  });

  server.Post(wire::kSubscribeAvailability, [this](const httplib::Request& req,
                                                   httplib::Response& res) {
    try {
      Subscription sub = wire::subscription_from_json(json::parse(req.body));
      if (sub.kind != SubscriptionKind::availability) {
        reply_error(res, 400, "InvalidCallback: discovery accepts kind=availability");
        return;
      }
      if (!is_valid_endpoint(sub.callback_endpoint)) {
        reply_error(res, 400, "InvalidCallback: bad callback endpoint");
        return;
      }
      const std::string callback = sub.callback_endpoint;
      auto [id, initial] = store_.subscribe_availability(std::move(sub));
      if (!initial.empty()) {
        json regs = json::array();
        for (const auto& r : initial) regs.push_back(wire::to_json(r));
        dispatcher_.enqueue(callback, wire::kNotifyAvailability,
                            json{{"subscriptionId", id}, {"registrations", std::move(regs)}},
                            notify_token());
      }
      reply_json(res, 200, {{"subscriptionId", id}});
    } catch (const std::exception& e) {
      reply_error(res, 400, e.what());
    }
  });

  server.Post(wire::kUnsubscribeContext, [this](const httplib::Request& req,
                                                httplib::Response& res) {
    try {
      const std::string id = json::parse(req.body).at("subscriptionId").get<std::string>();
      if (store_.unsubscribe(id)) {
        reply_json(res, 200, {{"status", "ok"}});
      } else {
        reply_error(res, 404, "UnknownSubscription: " + id);
      }
    } catch (const std::exception& e) {
      reply_error(res, 400, e.what());
    }
  });

  server.Post(wire::kReplicate, [this](const httplib::Request& req,
                                       httplib::Response& res) {
    try {
      const ReplicationOp op = replication_op_from_json(json::parse(req.body));
      if (op.kind != ReplicationKind::registration) {
        reply_error(res, 400, "discovery replicates registrations only");
        return;
      }
      if (replicator_.remember(op.op_id)) {
        Registration reg = wire::registration_from_json(op.payload);
        // stale result here is a legitimate no-op, not an error
        auto outcome = store_.register_registration(std::move(reg));
        if (outcome.result == RegistrationStore::RegisterResult::applied) {
          notify(outcome.notifications);
        }
      }
      reply_json(res, 200, {{"status", "ok"}});
    } catch (const std::exception& e) {
      reply_error(res, 400, e.what());
    }
  });
}

json DiscoveryService::status_extra() const {
  return {{"name", config_.name},
          {"registrationCount", store_.registration_count()},
          {"liveRegistrationCount", store_.live_registration_count()},
          {"availabilitySubscriptionCount", store_.subscription_count()},
          {"replicationPending", replicator_.pending_count()}};
}

void DiscoveryService::notify(
    const std::vector<RegistrationStore::RegisterOutcome::PendingNotification>& pending) {
  for (const auto& n : pending) {
    dispatcher_.enqueue(n.callback_endpoint, wire::kNotifyAvailability,
                        json{{"subscriptionId", n.subscription_id},
                             {"registrations", json::array({wire::to_json(n.registration)})}},
                        notify_token());
  }
}

void DiscoveryService::sweep_loop() {
  std::unique_lock lock(sweep_mutex_);
  while (!stopping_.load()) {
    sweep_cv_.wait_for(lock, std::chrono::milliseconds(config_.sweep_interval_ms));
    if (stopping_.load()) return;
    store_.sweep();
  }
}

}  // namespace liots
