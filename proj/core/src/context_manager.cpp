#include "liots/context_manager.hpp"

#include <algorithm>
#include <fstream>
#include <set>

#include "liots/wire.hpp"

namespace liots {

namespace {

bool matches_any(const std::vector<EntityRef>& patterns, const EntityRef& candidate) {
  return std::any_of(patterns.begin(), patterns.end(), [&](const EntityRef& p) {
    return match_entity(p, candidate);
  });
}

}  // namespace

ContextStore::PublishOutcome ContextStore::publish(
    const std::vector<ContextElement>& elements) {
  for (const auto& e : elements) {
    if (auto reason = validate_element(e)) {
      throw std::invalid_argument(*reason);
    }
  }
  PublishOutcome outcome;
  const TimestampMs now = clock_();

  std::unique_lock lock(mutex_);
  std::set<std::string> known_types;
  for (const auto& [key, e] : elements_) known_types.insert(e.entity.type);

  // updated view of each published element, carrying only this batch's attrs
  std::vector<ContextElement> updated;
  for (const auto& e : elements) {
    const auto key = std::make_pair(e.entity.id, e.entity.type);
    auto it = elements_.find(key);
    if (it == elements_.end()) {
      it = elements_.emplace(key, ContextElement{e.entity, {}, e.provider_hint}).first;
      outcome.newly_seen_entities.push_back(e.entity);
      if (!known_types.contains(e.entity.type)) {
        known_types.insert(e.entity.type);
        outcome.newly_seen_types.push_back(e.entity.type);
      }
    }
    ContextElement batch_view{e.entity, {}, e.provider_hint};
    for (const auto& a : e.attributes) {
      Attribute stored = a;
      if (stored.timestamp == 0) stored.timestamp = now;
      auto existing = std::find_if(it->second.attributes.begin(),
                                   it->second.attributes.end(),
                                   [&](const Attribute& x) { return x.name == a.name; });
      if (existing == it->second.attributes.end()) {
        it->second.attributes.push_back(stored);
      } else {
        *existing = stored;
      }
      batch_view.attributes.push_back(std::move(stored));
    }
    updated.push_back(std::move(batch_view));
  }

  for (const auto& [id, stored] : subscriptions_) {
    if (stored.sub.kind != SubscriptionKind::context) continue;
    if (!subscription_live(stored.sub, stored.created_at, now)) continue;
    std::vector<ContextElement> payload;
    for (const auto& e : updated) {
      if (!matches_any(stored.sub.entities, e.entity)) continue;
      ContextElement filtered = filter_attributes(e, stored.sub.attribute_names);
      if (!filtered.attributes.empty()) payload.push_back(std::move(filtered));
    }
    if (!payload.empty()) {
      outcome.notifications.push_back(
          {id, stored.sub.callback_endpoint, std::move(payload)});
    }
  }
  return outcome;
}

QueryResponse ContextStore::query(const QueryRequest& request) const {
  QueryResponse out;
  std::shared_lock lock(mutex_);

  // concrete refs resolve by direct lookup; only patterns need a scan
  std::set<std::pair<std::string, std::string>> matched;
  std::vector<const EntityRef*> pattern_refs;
  for (const auto& ref : request.entities) {
    if (!ref.is_pattern && ref.type != "*") {
      auto it = elements_.find({ref.id, ref.type});
      if (it != elements_.end()) matched.insert(it->first);
    } else {
      pattern_refs.push_back(&ref);
    }
  }
  if (!pattern_refs.empty()) {
    for (const auto& [key, e] : elements_) {
      if (matched.contains(key)) continue;
      for (const EntityRef* p : pattern_refs) {
        if (match_entity(*p, e.entity)) {
          matched.insert(key);
          break;
        }
      }
    }
  }
  for (const auto& key : matched) {
    out.elements.push_back(
        filter_attributes(elements_.at(key), request.attribute_names));
  }
  return out;
}

std::pair<std::string, std::vector<ContextElement>> ContextStore::subscribe(
    Subscription sub) {
  if (sub.subscription_id.empty()) sub.subscription_id = new_uuid();
  const TimestampMs now = clock_();
  std::unique_lock lock(mutex_);
  std::vector<ContextElement> initial;
  for (const auto& [key, e] : elements_) {
    if (!matches_any(sub.entities, e.entity)) continue;
    ContextElement filtered = filter_attributes(e, sub.attribute_names);
    if (!filtered.attributes.empty()) initial.push_back(std::move(filtered));
  }
  const std::string id = sub.subscription_id;
  subscriptions_[id] = StoredSubscription{std::move(sub), now};
  return {id, std::move(initial)};
}

bool ContextStore::unsubscribe(const std::string& subscription_id) {
  std::unique_lock lock(mutex_);
  return subscriptions_.erase(subscription_id) > 0;
}

size_t ContextStore::element_count() const {
  std::shared_lock lock(mutex_);
  return elements_.size();
}

size_t ContextStore::subscription_count() const {
  std::shared_lock lock(mutex_);
  return subscriptions_.size();
}

std::vector<ContextElement> ContextStore::snapshot_elements() const {
  std::shared_lock lock(mutex_);
  std::vector<ContextElement> out;
  out.reserve(elements_.size());
  for (const auto& [key, e] : elements_) out.push_back(e);
  return out;
}

std::vector<ContextElement> ContextStore::elements_for(
    const std::vector<EntityRef>& refs) const {
  std::shared_lock lock(mutex_);
  std::vector<ContextElement> out;
  for (const auto& r : refs) {
    auto it = elements_.find({r.id, r.type});
    if (it != elements_.end()) out.push_back(it->second);
  }
  return out;
}

bool ContextStore::subscription_live(const Subscription& s, TimestampMs created_at,
                                     TimestampMs now) const {
  if (s.ttl_seconds <= 0) return true;  // 0 = no expiry
  return now - created_at <= s.ttl_seconds * 1000;
}

// ---------------------------------------------------------------------------

ContextManagerService::ContextManagerService(ContextManagerConfig config, Clock clock)
    : HttpServiceBase("context-manager", config.thread_pool_size),
      config_(std::move(config)),
      store_(std::move(clock)),
      dispatcher_(config_.notify_max_attempts, config_.notify_backoff_base_ms) {
  if (!config_.snapshot_path.empty()) replay_snapshot();
}

ContextManagerService::~ContextManagerService() { stop(); }

std::string ContextManagerService::advertised_endpoint() const {
  return config_.advertised_endpoint.empty() ? endpoint() : config_.advertised_endpoint;
}

void ContextManagerService::configure_announcements(std::string advertised_endpoint,
                                                    std::string target, std::string token) {
  std::lock_guard lock(announce_mutex_);
  config_.advertised_endpoint = std::move(advertised_endpoint);
  config_.announce_target = std::move(target);
  config_.announce_token = std::move(token);
}

void ContextManagerService::configure_routes(httplib::Server& server) {
  server.Post(wire::kUpdateContext, [this](const httplib::Request& req,
                                           httplib::Response& res) {
    if (config_.artificial_delay_ms > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(config_.artificial_delay_ms));
    }
    try {
      const json body = json::parse(req.body);
      std::vector<ContextElement> elements;
      for (const auto& e : body.at("elements")) {
        elements.push_back(wire::element_from_json(e));
      }
      auto outcome = store_.publish(elements);
      if (!config_.snapshot_path.empty()) append_snapshot(elements);
      dispatch(outcome);
      if (!outcome.newly_seen_entities.empty()) {
        announce_for(outcome.newly_seen_entities);
      }
      reply_json(res, 200, {{"status", "ok"}});
    } catch (const std::exception& e) {
      reply_error(res, 400, std::string("MalformedElement: ") + e.what());
    }
  });

  server.Post(wire::kQueryContext, [this](const httplib::Request& req,
                                          httplib::Response& res) {
    if (config_.artificial_delay_ms > 0) {
      std::this_thread::sleep_for(std::chrono::milliseconds(config_.artificial_delay_ms));
    }
    try {
      const QueryRequest q = wire::query_request_from_json(json::parse(req.body));
      reply_json(res, 200, wire::to_json(store_.query(q)));
    } catch (const std::exception& e) {
      reply_error(res, 400, e.what());
    }
  });

  server.Post(wire::kSubscribeContext, [this](const httplib::Request& req,
                                              httplib::Response& res) {
    try {
      Subscription sub = wire::subscription_from_json(json::parse(req.body));
      if (sub.kind != SubscriptionKind::context) {
        reply_error(res, 400, "InvalidCallback: context manager accepts kind=context");
        return;
      }
      if (!is_valid_endpoint(sub.callback_endpoint)) {
        reply_error(res, 400, "InvalidCallback: bad callback endpoint");
        return;
      }
      const std::string callback = sub.callback_endpoint;
      auto [id, initial] = store_.subscribe(std::move(sub));
      if (!initial.empty()) {
        json elements = json::array();
        for (const auto& e : initial) elements.push_back(wire::to_json(e));
        dispatcher_.enqueue(callback, wire::kNotifyContext,
                            json{{"subscriptionId", id}, {"elements", std::move(elements)}},
                            config_.notify_token);
      }
      reply_json(res, 200, {{"subscriptionId", id}});
    } catch (const std::exception& e) {
      reply_error(res, 400, e.what());
    }
  });

  server.Post(wire::kUnsubscribeContext, [this](const httplib::Request& req,
                                                httplib::Response& res) {
    try {
      const json body = json::parse(req.body);
      const std::string id = body.at("subscriptionId").get<std::string>();
      if (store_.unsubscribe(id)) {
        reply_json(res, 200, {{"status", "ok"}});
      } else {
        reply_error(res, 404, "UnknownSubscription: " + id);
      }
    } catch (const std::exception& e) {
      reply_error(res, 400, e.what());
    }
  });
}

json ContextManagerService::status_extra() const {
  return {{"name", config_.name},
          {"elementCount", store_.element_count()},
          {"subscriptionCount", store_.subscription_count()},
          {"notificationsDelivered", dispatcher_.delivered_count()},
          {"notificationsDropped", dispatcher_.dropped_count()}};
}

void ContextManagerService::dispatch(const ContextStore::PublishOutcome& outcome) {
  for (const auto& n : outcome.notifications) {
    json elements = json::array();
    for (const auto& e : n.elements) elements.push_back(wire::to_json(e));
    dispatcher_.enqueue(n.callback_endpoint, wire::kNotifyContext,
                        json{{"subscriptionId", n.subscription_id},
                             {"elements", std::move(elements)}},
                        config_.notify_token);
  }
}

void ContextManagerService::announce() {
  if (config_.announce_target.empty()) return;
  announce_elements(store_.snapshot_elements());
}

void ContextManagerService::announce_for(const std::vector<EntityRef>& refs) {
  if (config_.announce_target.empty()) return;
  announce_elements(store_.elements_for(refs));
}

void ContextManagerService::announce_elements(const std::vector<ContextElement>& elements) {
  std::lock_guard lock(announce_mutex_);

  // group into registration units: one per entity, or one per type
  struct Unit {
    std::vector<EntityRef> entities;
    std::set<std::string> attribute_names;
    Scope scope;
  };
  std::map<std::string, Unit> units;
  for (const auto& e : elements) {
    std::string key;
    Unit* unit = nullptr;
    if (config_.announce_per_entity) {
      key = "e:" + e.entity.type + "/" + e.entity.id;
      unit = &units[key];
      unit->entities = {e.entity};
      // an entity's geo-point "location" attribute becomes the exact scope
      if (const Attribute* loc = e.find_attribute("location");
          loc && loc->value_type == ValueType::geo_point) {
        unit->scope = Scope::exact(loc->as_geo_point().lat, loc->as_geo_point().lon);
      }
    } else {
      key = "t:" + e.entity.type;
      unit = &units[key];
      unit->entities = {EntityRef{"*", e.entity.type, true}};
    }
    for (const auto& a : e.attributes) unit->attribute_names.insert(a.name);
  }

  for (const auto& [key, unit] : units) {
    Registration reg;
    reg.providing_endpoint = advertised_endpoint();
    reg.entities = unit.entities;
    reg.attribute_names.assign(unit.attribute_names.begin(), unit.attribute_names.end());
    reg.scope = unit.scope;
    reg.ttl_seconds = config_.announce_ttl_seconds;

    std::string fingerprint = reg.providing_endpoint;
    for (const auto& er : reg.entities) fingerprint += "|" + er.type + "/" + er.id;
    for (const auto& a : reg.attribute_names) fingerprint += "|" + a;
    fingerprint += "|" + wire::to_json(reg.scope).dump();

    auto& state = announced_[key];
    if (state.fingerprint == fingerprint) continue;
    if (state.registration_id.empty()) state.registration_id = new_uuid();
    state.version += 1;
    state.fingerprint = fingerprint;

    reg.registration_id = state.registration_id;
    reg.version = state.version;
    dispatcher_.enqueue(config_.announce_target, wire::kRegisterContext,
                        wire::to_json(reg), config_.announce_token);
  }
}

void ContextManagerService::append_snapshot(const std::vector<ContextElement>& elements) {
  std::lock_guard lock(snapshot_mutex_);
  std::ofstream out(config_.snapshot_path, std::ios::app);
  json arr = json::array();
  for (const auto& e : elements) arr.push_back(wire::to_json(e));
  out << arr.dump() << "\n";
}

void ContextManagerService::replay_snapshot() {
  std::ifstream in(config_.snapshot_path);
  if (!in) return;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json arr = json::parse(line, nullptr, false);
    if (arr.is_discarded()) continue;
    std::vector<ContextElement> elements;
    for (const auto& e : arr) elements.push_back(wire::element_from_json(e));
    store_.publish(elements);
  }
}

}  // namespace liots
