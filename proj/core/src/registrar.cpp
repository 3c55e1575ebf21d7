#include "liots/registrar.hpp"

#include <algorithm>
#include <fstream>

#include "liots/wire.hpp"

namespace liots {

namespace {

const char* key_field_name(KeyField k) {
  switch (k) {
    case KeyField::entity_type: return "entityType";
    case KeyField::grid_cell: return "gridCell";
    case KeyField::named_region: return "namedRegion";
  }
  return "entityType";
}

KeyField key_field_from(const std::string& s) {
  if (s == "entityType") return KeyField::entity_type;
  if (s == "gridCell") return KeyField::grid_cell;
  if (s == "namedRegion") return KeyField::named_region;
  throw wire::DecodeError("unknown key field '" + s + "'");
}

std::string fnv1a_hex(const std::string& data) {
  uint64_t h = 1469598103934665603ull;
  for (const unsigned char c : data) {
    h ^= c;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

/// Content fingerprint for change detection: version-independent.
std::string fingerprint(const Registration& reg) {
  Registration copy = reg;
  copy.version = 0;
  return wire::to_json(copy).dump();
}

}  // namespace

json to_json(const PrivacyDirective& v) {
  json key_fields = json::array();
  for (const auto k : v.key_fields) key_fields.push_back(key_field_name(k));
  json granularity;
  switch (v.granularity) {
    case LocationGranularity::exact: granularity = {{"mode", "exact"}}; break;
    case LocationGranularity::grid:
      granularity = {{"mode", "grid"}, {"cellSizeDegrees", v.grid_cell_size_degrees}};
      break;
    case LocationGranularity::region:
      granularity = {{"mode", "region"}, {"table", v.region_table_ref}};
      break;
    case LocationGranularity::suppress: granularity = {{"mode", "suppress"}}; break;
  }
  json exposure;
  switch (v.attribute_exposure) {
    case AttributeExposure::all: exposure = {{"mode", "all"}}; break;
    case AttributeExposure::listed:
      exposure = {{"mode", "listed"}, {"names", v.exposed_attribute_names}};
      break;
    case AttributeExposure::none: exposure = {{"mode", "none"}}; break;
  }
  return {{"matchTypes", v.match_types},
          {"keyFields", std::move(key_fields)},
          {"locationGranularity", std::move(granularity)},
          {"exposeAttributes", std::move(exposure)},
          {"exposeEntityIds", v.expose_entity_ids}};
}

PrivacyDirective privacy_directive_from_json(const json& j) {
  PrivacyDirective v;
  v.match_types = j.at("matchTypes").get<std::vector<std::string>>();
  for (const auto& k : j.value("keyFields", json::array())) {
    v.key_fields.insert(key_field_from(k.get<std::string>()));
  }
  const json g = j.value("locationGranularity", json{{"mode", "suppress"}});
  const std::string mode = g.value("mode", "suppress");
  if (mode == "exact") {
    v.granularity = LocationGranularity::exact;
  } else if (mode == "grid") {
    v.granularity = LocationGranularity::grid;
    v.grid_cell_size_degrees = g.at("cellSizeDegrees").get<double>();
  } else if (mode == "region") {
    v.granularity = LocationGranularity::region;
    v.region_table_ref = g.value("table", "");
  } else if (mode == "suppress") {
    v.granularity = LocationGranularity::suppress;
  } else {
    throw wire::DecodeError("unknown locationGranularity mode '" + mode + "'");
  }
  const json e = j.value("exposeAttributes", json{{"mode", "none"}});
  const std::string emode = e.value("mode", "none");
  if (emode == "all") {
    v.attribute_exposure = AttributeExposure::all;
  } else if (emode == "listed") {
    v.attribute_exposure = AttributeExposure::listed;
    v.exposed_attribute_names = e.at("names").get<std::vector<std::string>>();
  } else if (emode == "none") {
    v.attribute_exposure = AttributeExposure::none;
  } else {
    throw wire::DecodeError("unknown exposeAttributes mode '" + emode + "'");
  }
  v.expose_entity_ids = j.value("exposeEntityIds", false);
  return v;
}

std::optional<std::string> validate_directive(const PrivacyDirective& d) {
  if (d.match_types.empty()) return "directive matches no types";
  if (d.granularity == LocationGranularity::grid && d.grid_cell_size_degrees <= 0) {
    return "grid cellSizeDegrees must be > 0";
  }
  // the supported key fields all erase per-entity identity
  if (d.expose_entity_ids) {
    return "exposeEntityIds requires an identity-preserving key field";
  }
  return std::nullopt;
}

json to_json(const RegionTable& v) {
  json arr = json::array();
  for (const auto& e : v) {
    arr.push_back({{"name", e.name},
                   {"latMin", e.lat_min},
                   {"latMax", e.lat_max},
                   {"lonMin", e.lon_min},
                   {"lonMax", e.lon_max}});
  }
  return arr;
}

RegionTable region_table_from_json(const json& j) {
  RegionTable out;
  for (const auto& e : j) {
    RegionEntry entry;
    entry.name = e.at("name").get<std::string>();
    entry.lat_min = e.at("latMin").get<double>();
    entry.lat_max = e.at("latMax").get<double>();
    entry.lon_min = e.at("lonMin").get<double>();
    entry.lon_max = e.at("lonMax").get<double>();
    out.push_back(std::move(entry));
  }
  return out;
}

std::optional<std::string> lookup_region(const RegionTable& table, const GeoPoint& p) {
  for (const auto& e : table) {
    if (p.lat >= e.lat_min && p.lat <= e.lat_max && p.lon >= e.lon_min &&
        p.lon <= e.lon_max) {
      return e.name;
    }
  }
  return std::nullopt;
}

// ---------------------------------------------------------------------------

std::map<std::string, Registration> synthesize(
    const std::vector<Registration>& source,
    const std::vector<PrivacyDirective>& directives, const RegionTable& region_table,
    const std::string& in_fed_b_endpoint, int64_t ttl_seconds) {
  struct Unit {
    EntityRef entity;
    std::vector<std::string> attribute_names;
    Scope scope;
    size_t directive_index = 0;
    std::optional<GridCell> cell;
    std::optional<std::string> region;
  };

  std::vector<Unit> units;
  for (const auto& reg : source) {
    if (reg.ttl_seconds <= 0) continue;  // tombstoned source
    for (const auto& entity : reg.entities) {
      std::optional<size_t> matched;
      for (size_t i = 0; i < directives.size(); ++i) {
        for (const auto& pattern : directives[i].match_types) {
          if (glob_match(pattern, entity.type)) {
            matched = i;
            break;
          }
        }
        if (matched) break;
      }
      if (!matched) continue;  // default-suppress

      Unit u;
      u.entity = entity;
      u.attribute_names = reg.attribute_names;
      u.scope = reg.scope;
      u.directive_index = *matched;
      const PrivacyDirective& d = directives[*matched];
      std::optional<GeoPoint> point;
      if (reg.scope.kind == ScopeKind::exact_point) point = reg.scope.point;
      if (d.granularity == LocationGranularity::grid && point) {
        u.cell = snap_to_grid(*point, d.grid_cell_size_degrees);
      } else if (reg.scope.kind == ScopeKind::grid_cell &&
                 d.granularity == LocationGranularity::grid &&
                 reg.scope.cell.cell_size_degrees == d.grid_cell_size_degrees) {
        u.cell = reg.scope.cell;
      }
      if (d.granularity == LocationGranularity::region && point) {
        u.region = lookup_region(region_table, *point);
      }
      units.push_back(std::move(u));
    }
  }

  // group by the directive's key fields
  std::map<std::string, std::vector<const Unit*>> groups;
  for (const auto& u : units) {
    const PrivacyDirective& d = directives[u.directive_index];
    std::string key = "d" + std::to_string(u.directive_index);
    if (d.key_fields.contains(KeyField::entity_type)) {
      key += "|t:" + u.entity.type;
    }
    if (d.key_fields.contains(KeyField::grid_cell)) {
      key += u.cell ? "|c:" + std::to_string(u.cell->cell_lat) + "," +
                          std::to_string(u.cell->cell_lon) + "@" +
                          std::to_string(u.cell->cell_size_degrees)
                    : "|c:-";
    }
    if (d.key_fields.contains(KeyField::named_region)) {
      key += "|r:" + u.region.value_or("-");
    }
    groups[key].push_back(&u);
  }

  std::map<std::string, Registration> out;
  for (const auto& [key, members] : groups) {
    const PrivacyDirective& d = directives[members.front()->directive_index];

    Registration reg;
    reg.registration_id = "syn-" + fnv1a_hex(key);
    reg.version = 0;  // reconcile assigns
    reg.providing_endpoint = in_fed_b_endpoint;
    reg.ttl_seconds = ttl_seconds;

    std::set<std::string> types;
    std::set<std::pair<std::string, std::string>> concrete;  // (type, id)
    for (const Unit* u : members) {
      types.insert(u->entity.type);
      concrete.insert({u->entity.type, u->entity.id});
    }
    if (d.expose_entity_ids) {
      for (const auto& [type, id] : concrete) reg.entities.push_back({id, type, false});
    } else {
      for (const auto& type : types) reg.entities.push_back({"*", type, true});
    }

    std::set<std::string> attr_union;
    for (const Unit* u : members) {
      attr_union.insert(u->attribute_names.begin(), u->attribute_names.end());
    }
    switch (d.attribute_exposure) {
      case AttributeExposure::all:
        reg.attribute_names.assign(attr_union.begin(), attr_union.end());
        break;
      case AttributeExposure::listed:
        for (const auto& name : d.exposed_attribute_names) {
          if (attr_union.empty() || attr_union.contains(name)) {
            reg.attribute_names.push_back(name);
          }
        }
        break;
      case AttributeExposure::none:
        break;  // empty list: nothing disclosed, matches everything
    }

    switch (d.granularity) {
      case LocationGranularity::exact: {
        std::set<std::string> scopes;
        for (const Unit* u : members) scopes.insert(wire::to_json(u->scope).dump());
        if (scopes.size() == 1) reg.scope = members.front()->scope;
        break;
      }
      case LocationGranularity::grid: {
        std::set<std::string> cells;
        std::optional<GridCell> cell;
        for (const Unit* u : members) {
          if (!u->cell) {
            cells.insert("-");
          } else {
            cells.insert(std::to_string(u->cell->cell_lat) + "," +
                         std::to_string(u->cell->cell_lon));
            cell = u->cell;
          }
        }
        if (cells.size() == 1 && cell) {
          reg.scope = Scope::grid(cell->cell_lat, cell->cell_lon, cell->cell_size_degrees);
        }
        break;
      }
      case LocationGranularity::region: {
        std::set<std::string> regions;
        for (const Unit* u : members) regions.insert(u->region.value_or(""));
        if (regions.size() == 1 && !regions.begin()->empty()) {
          reg.scope = Scope::named(*regions.begin());
        }
        break;
      }
      case LocationGranularity::suppress: break;  // scope stays none
    }

    out.emplace(key, std::move(reg));
  }
  return out;
}

std::vector<ReconcileAction> reconcile(
    const std::map<std::string, Registration>& old_set,
    const std::map<std::string, Registration>& new_set,
    std::map<std::string, int64_t>& versions) {
  std::vector<ReconcileAction> actions;
  for (const auto& [key, reg] : new_set) {
    auto it = old_set.find(key);
    if (it != old_set.end() && fingerprint(it->second) == fingerprint(reg)) continue;
    Registration out = reg;
    out.version = ++versions[out.registration_id];
    actions.push_back({std::move(out)});
  }
  for (const auto& [key, reg] : old_set) {
    if (new_set.contains(key)) continue;
    Registration tombstone = reg;
    tombstone.ttl_seconds = 0;
    tombstone.version = ++versions[tombstone.registration_id];
    actions.push_back({std::move(tombstone)});
  }
  return actions;
}

// ---------------------------------------------------------------------------

RegistrarService::RegistrarService(RegistrarConfig config, Clock clock)
    : HttpServiceBase("iot-registrar", config.thread_pool_size),
      config_(std::move(config)),
      clock_(std::move(clock)) {
  for (const auto& d : config_.directives) {
    if (auto reason = validate_directive(d)) {
      throw std::invalid_argument("invalid privacy directive: " + *reason);
    }
  }
  directives_ = config_.directives;
  region_table_ = config_.region_table;
  if (!config_.directive_file.empty() || !config_.region_table_file.empty()) {
    reload_from_files();
  }
  action_worker_ = std::thread([this] { action_loop(); });
  refresh_worker_ = std::thread([this] { refresh_loop(); });
}

RegistrarService::~RegistrarService() {
  {
    std::lock_guard lock(action_mutex_);
    stopping_ = true;
  }
  action_cv_.notify_all();
  refresh_cv_.notify_all();
  if (action_worker_.joinable()) action_worker_.join();
  if (refresh_worker_.joinable()) refresh_worker_.join();
  stop();
}

void RegistrarService::set_advertised_endpoint(std::string endpoint) {
  std::lock_guard lock(pipeline_mutex_);
  advertised_endpoint_ = std::move(endpoint);
}

void RegistrarService::subscribe_to_source() {
  if (config_.source_discovery_endpoint.empty()) return;
  Subscription sub;
  sub.kind = SubscriptionKind::availability;
  sub.entities = {EntityRef{"*", "*", true}};
  {
    std::lock_guard lock(pipeline_mutex_);
    sub.callback_endpoint = advertised_endpoint_.empty() ? endpoint() : advertised_endpoint_;
  }
  const HttpResult res =
      post_json(config_.source_discovery_endpoint, wire::kSubscribeAvailability,
                wire::to_json(sub), config_.outbound_token);
  if (res.ok()) {
    std::lock_guard lock(pipeline_mutex_);
    source_subscription_id_ = res.body.value("subscriptionId", "");
  }
}

void RegistrarService::ingest(Registration reg) {
  const std::string ep = normalize_endpoint(reg.providing_endpoint);
  for (const auto& ignored : config_.ignore_endpoints) {
    if (normalize_endpoint(ignored) == ep) return;
  }
  std::lock_guard lock(pipeline_mutex_);
  auto it = source_regs_.find(reg.registration_id);
  if (it != source_regs_.end() && reg.version <= it->second.version) return;
  if (reg.ttl_seconds <= 0) {
    source_regs_.erase(reg.registration_id);
  } else {
    source_regs_[reg.registration_id] = std::move(reg);
  }
  run_pipeline();
}

void RegistrarService::refresh() {
  std::lock_guard lock(pipeline_mutex_);
  for (auto& [key, reg] : synthesized_) {
    reg.version = ++versions_[reg.registration_id];
    enqueue_action(reg);
  }
}

void RegistrarService::reload_directives(std::vector<PrivacyDirective> directives,
                                         RegionTable region_table) {
  for (const auto& d : directives) {
    if (auto reason = validate_directive(d)) {
      throw std::invalid_argument("invalid privacy directive: " + *reason);
    }
  }
  std::lock_guard lock(pipeline_mutex_);
  directives_ = std::move(directives);
  region_table_ = std::move(region_table);
  run_pipeline();
}

void RegistrarService::reload_from_files() {
  std::vector<PrivacyDirective> directives = directives_;
  RegionTable table = region_table_;
  if (!config_.directive_file.empty()) {
    std::ifstream in(config_.directive_file);
    if (in) {
      directives.clear();
      for (const auto& d : json::parse(in)) {
        directives.push_back(privacy_directive_from_json(d));
      }
    }
  }
  if (!config_.region_table_file.empty()) {
    std::ifstream in(config_.region_table_file);
    if (in) table = region_table_from_json(json::parse(in));
  }
  reload_directives(std::move(directives), std::move(table));
}

std::map<std::string, Registration> RegistrarService::synthesized() const {
  std::lock_guard lock(pipeline_mutex_);
  return synthesized_;
}

bool RegistrarService::wait_settled(int timeout_ms) {
  std::unique_lock lock(action_mutex_);
  return action_idle_cv_.wait_for(lock, std::chrono::milliseconds(timeout_ms), [this] {
    return action_queue_.empty() && actions_in_flight_ == 0;
  });
}

void RegistrarService::run_pipeline() {
  std::vector<Registration> source;
  source.reserve(source_regs_.size());
  for (const auto& [id, reg] : source_regs_) source.push_back(reg);

  auto next = synthesize(source, directives_, region_table_, config_.in_fed_b_endpoint,
                         config_.synthesized_ttl_seconds);
  auto actions = reconcile(synthesized_, next, versions_);
  synthesized_ = std::move(next);
  for (const auto& action : actions) enqueue_action(action.registration);
}

void RegistrarService::enqueue_action(const Registration& reg) {
  if (config_.target_discovery_endpoint.empty()) return;
  target_ops_.fetch_add(1);
  {
    std::lock_guard lock(action_mutex_);
    action_queue_.push_back({reg, now_ms()});
  }
  action_cv_.notify_one();
}

void RegistrarService::action_loop() {
  std::unique_lock lock(action_mutex_);
  while (true) {
    TimestampMs next_due = 0;
    auto pick = [&]() -> std::optional<PendingAction> {
      const TimestampMs now = now_ms();
      next_due = 0;
      for (auto it = action_queue_.begin(); it != action_queue_.end(); ++it) {
        if (it->due_at <= now) {
          PendingAction a = std::move(*it);
          action_queue_.erase(it);
          return a;
        }
        if (next_due == 0 || it->due_at < next_due) next_due = it->due_at;
      }
      return std::nullopt;
    };

    std::optional<PendingAction> action;
    while (!(action = pick())) {
      if (stopping_) return;
      if (action_queue_.empty() && actions_in_flight_ == 0) action_idle_cv_.notify_all();
      if (next_due == 0) {
        action_cv_.wait(lock);
      } else {
        action_cv_.wait_for(lock, std::chrono::milliseconds(next_due - now_ms() + 1));
      }
    }
    if (stopping_) return;

    ++actions_in_flight_;
    lock.unlock();
    const HttpResult res = post_json(config_.target_discovery_endpoint,
                                     wire::kRegisterContext,
                                     wire::to_json(action->reg),
                                     config_.outbound_token, 2000);
    // 409 means an equal or newer version is already stored: idempotent replay
    const bool settled = res.ok() || res.status == 409 || res.status == 400;
    lock.lock();
    --actions_in_flight_;

    if (!settled) {
      // drop the retry when a newer version of the same reg is already queued
      const bool superseded = std::any_of(
          action_queue_.begin(), action_queue_.end(), [&](const PendingAction& q) {
            return q.reg.registration_id == action->reg.registration_id &&
                   q.reg.version >= action->reg.version;
          });
      if (!superseded) {
        action->due_at = now_ms() + 200;
        action_queue_.push_back(std::move(*action));
      }
    }
    if (action_queue_.empty() && actions_in_flight_ == 0) action_idle_cv_.notify_all();
  }
}

void RegistrarService::refresh_loop() {
  const int interval_ms = config_.refresh_interval_ms > 0
                              ? config_.refresh_interval_ms
                              : static_cast<int>(config_.synthesized_ttl_seconds * 1000 / 2);
  std::unique_lock lock(action_mutex_);
  while (!stopping_) {
    refresh_cv_.wait_for(lock, std::chrono::milliseconds(std::max(50, interval_ms)),
                         [this] { return stopping_; });
    if (stopping_) return;
    lock.unlock();
    refresh();
    lock.lock();
  }
}

void RegistrarService::configure_routes(httplib::Server& server) {
  // providers may register directly with the registrar
  server.Post(wire::kRegisterContext, [this](const httplib::Request& req,
                                             httplib::Response& res) {
    try {
      Registration reg = wire::registration_from_json(json::parse(req.body));
      if (reg.registration_id.empty()) reg.registration_id = new_uuid();
      const std::string id = reg.registration_id;
      ingest(std::move(reg));
      reply_json(res, 200, {{"registrationId", id}});
    } catch (const std::exception& e) {
      reply_error(res, 400, e.what());
    }
  });

  // or the registrar subscribes to the domain discovery and ingests notifications
  server.Post(wire::kNotifyAvailability, [this](const httplib::Request& req,
                                                httplib::Response& res) {
    try {
      const json body = json::parse(req.body);
      for (const auto& r : body.value("registrations", json::array())) {
        ingest(wire::registration_from_json(r));
      }
      reply_json(res, 200, {{"status", "ok"}});
    } catch (const std::exception& e) {
      reply_error(res, 400, e.what());
    }
  });
}

json RegistrarService::status_extra() const {
  size_t source_count = 0, synth_count = 0;
  {
    std::lock_guard lock(pipeline_mutex_);
    source_count = source_regs_.size();
    synth_count = synthesized_.size();
  }
  return {{"name", config_.name},
          {"sourceRegistrations", source_count},
          {"synthesizedRegistrations", synth_count},
          {"targetOps", target_ops_.load()}};
}

}  // namespace liots
