#include "liots/wire.hpp"

namespace liots::wire {

namespace {

const char* value_type_name(ValueType t) {
  switch (t) {
    case ValueType::number: return "number";
    case ValueType::text: return "text";
    case ValueType::geo_point: return "geoPoint";
    case ValueType::structured: return "structured";
  }
  return "number";
}

ValueType value_type_from(const std::string& s) {
  if (s == "number") return ValueType::number;
  if (s == "text") return ValueType::text;
  if (s == "geoPoint") return ValueType::geo_point;
  if (s == "structured") return ValueType::structured;
  throw DecodeError("unknown valueType '" + s + "'");
}

const char* scope_kind_name(ScopeKind k) {
  switch (k) {
    case ScopeKind::exact_point: return "exactPoint";
    case ScopeKind::grid_cell: return "gridCell";
    case ScopeKind::named_region: return "namedRegion";
    case ScopeKind::none: return "none";
  }
  return "none";
}

ScopeKind scope_kind_from(const std::string& s) {
  if (s == "exactPoint") return ScopeKind::exact_point;
  if (s == "gridCell") return ScopeKind::grid_cell;
  if (s == "namedRegion") return ScopeKind::named_region;
  if (s == "none") return ScopeKind::none;
  throw DecodeError("unknown scope kind '" + s + "'");
}

template <typename T>
T require(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw DecodeError(std::string("missing key '") + key + "'");
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw DecodeError(std::string("bad value for '") + key + "': " + e.what());
  }
}

template <typename T>
T optional_or(const json& j, const char* key, T fallback) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  try {
    return it->get<T>();
  } catch (const json::exception& e) {
    throw DecodeError(std::string("bad value for '") + key + "': " + e.what());
  }
}

}  // namespace

json to_json(const EntityRef& v) {
  return {{"id", v.id}, {"type", v.type}, {"isPattern", v.is_pattern}};
}

EntityRef entity_ref_from_json(const json& j) {
  EntityRef v;
  v.id = require<std::string>(j, "id");
  v.type = require<std::string>(j, "type");
  v.is_pattern = optional_or<bool>(j, "isPattern", false);
  if (v.id.empty()) throw DecodeError("entity id is empty");
  return v;
}

json to_json(const Attribute& v) {
  json j{{"name", v.name},
         {"valueType", value_type_name(v.value_type)},
         {"timestamp", v.timestamp}};
  switch (v.value_type) {
    case ValueType::number: j["value"] = v.as_number(); break;
    case ValueType::text: j["value"] = v.as_text(); break;
    case ValueType::geo_point:
      j["value"] = {{"lat", v.as_geo_point().lat}, {"lon", v.as_geo_point().lon}};
      break;
    case ValueType::structured: j["value"] = v.as_structured(); break;
  }
  return j;
}

Attribute attribute_from_json(const json& j) {
  Attribute v;
  v.name = require<std::string>(j, "name");
  v.value_type = value_type_from(require<std::string>(j, "valueType"));
  v.timestamp = optional_or<int64_t>(j, "timestamp", 0);
  auto it = j.find("value");
  if (it == j.end()) throw DecodeError("missing key 'value'");
  switch (v.value_type) {
    case ValueType::number:
      if (!it->is_number()) throw DecodeError("number attribute needs numeric value");
      v.value = it->get<double>();
      break;
    case ValueType::text:
      if (!it->is_string()) throw DecodeError("text attribute needs string value");
      v.value = it->get<std::string>();
      break;
    case ValueType::geo_point: {
      GeoPoint p;
      p.lat = require<double>(*it, "lat");
      p.lon = require<double>(*it, "lon");
      v.value = p;
      break;
    }
    case ValueType::structured: v.value = *it; break;
  }
  return v;
}

json to_json(const ContextElement& v) {
  json attrs = json::array();
  for (const auto& a : v.attributes) attrs.push_back(to_json(a));
  json j{{"entity", to_json(v.entity)}, {"attributes", std::move(attrs)}};
  if (v.provider_hint) j["providerHint"] = *v.provider_hint;
  return j;
}

ContextElement element_from_json(const json& j) {
  ContextElement v;
  auto it = j.find("entity");
  if (it == j.end()) throw DecodeError("missing key 'entity'");
  v.entity = entity_ref_from_json(*it);
  for (const auto& a : optional_or<json>(j, "attributes", json::array())) {
    v.attributes.push_back(attribute_from_json(a));
  }
  if (j.contains("providerHint") && !j["providerHint"].is_null()) {
    v.provider_hint = j["providerHint"].get<std::string>();
  }
  return v;
}

json to_json(const Scope& v) {
  json j{{"kind", scope_kind_name(v.kind)}};
  switch (v.kind) {
    case ScopeKind::exact_point:
      j["lat"] = v.point.lat;
      j["lon"] = v.point.lon;
      break;
    case ScopeKind::grid_cell:
      j["cellLat"] = v.cell.cell_lat;
      j["cellLon"] = v.cell.cell_lon;
      j["cellSizeDegrees"] = v.cell.cell_size_degrees;
      break;
    case ScopeKind::named_region: j["region"] = v.region; break;
    case ScopeKind::none: break;
  }
  return j;
}

Scope scope_from_json(const json& j) {
  Scope v;
  v.kind = scope_kind_from(require<std::string>(j, "kind"));
  switch (v.kind) {
    case ScopeKind::exact_point:
      v.point.lat = require<double>(j, "lat");
      v.point.lon = require<double>(j, "lon");
      break;
    case ScopeKind::grid_cell:
      v.cell.cell_lat = require<int64_t>(j, "cellLat");
      v.cell.cell_lon = require<int64_t>(j, "cellLon");
      v.cell.cell_size_degrees = require<double>(j, "cellSizeDegrees");
      if (v.cell.cell_size_degrees <= 0) throw DecodeError("cellSizeDegrees must be > 0");
      break;
    case ScopeKind::named_region: v.region = require<std::string>(j, "region"); break;
    case ScopeKind::none: break;
  }
  return v;
}

json to_json(const Registration& v) {
  json entities = json::array();
  for (const auto& e : v.entities) entities.push_back(to_json(e));
  return {{"registrationId", v.registration_id},
          {"version", v.version},
          {"providingEndpoint", v.providing_endpoint},
          {"entities", std::move(entities)},
          {"attributeNames", v.attribute_names},
          {"scope", to_json(v.scope)},
          {"ttl", v.ttl_seconds}};
}

Registration registration_from_json(const json& j) {
  Registration v;
  v.registration_id = optional_or<std::string>(j, "registrationId", "");
  v.version = optional_or<int64_t>(j, "version", 1);
  v.providing_endpoint = require<std::string>(j, "providingEndpoint");
  for (const auto& e : require<json>(j, "entities")) {
    v.entities.push_back(entity_ref_from_json(e));
  }
  v.attribute_names = optional_or<std::vector<std::string>>(j, "attributeNames", {});
  if (j.contains("scope") && !j["scope"].is_null()) v.scope = scope_from_json(j["scope"]);
  v.ttl_seconds = optional_or<int64_t>(j, "ttl", 0);
  return v;
}

json to_json(const QueryRequest& v) {
  json entities = json::array();
  for (const auto& e : v.entities) entities.push_back(to_json(e));
  json j{{"entities", std::move(entities)},
         {"attributeNames", v.attribute_names},
         {"aggregate", v.aggregate == AggregateMode::set ? "set" : "average"}};
  if (v.scope) j["scope"] = to_json(*v.scope);
  return j;
}

QueryRequest query_request_from_json(const json& j) {
  QueryRequest v;
  for (const auto& e : require<json>(j, "entities")) {
    v.entities.push_back(entity_ref_from_json(e));
  }
  v.attribute_names = optional_or<std::vector<std::string>>(j, "attributeNames", {});
  if (j.contains("scope") && !j["scope"].is_null()) v.scope = scope_from_json(j["scope"]);
  const std::string agg = optional_or<std::string>(j, "aggregate", "set");
  if (agg == "set") {
    v.aggregate = AggregateMode::set;
  } else if (agg == "average") {
    v.aggregate = AggregateMode::average;
  } else {
    throw DecodeError("unknown aggregate mode '" + agg + "'");
  }
  return v;
}

json to_json(const QueryResponse& v) {
  json elements = json::array();
  for (const auto& e : v.elements) elements.push_back(to_json(e));
  json errors = json::array();
  for (const auto& e : v.errors) {
    errors.push_back({{"providingEndpoint", e.providing_endpoint},
                      {"code", e.code},
                      {"reason", e.reason}});
  }
  return {{"elements", std::move(elements)}, {"errors", std::move(errors)}};
}

QueryResponse query_response_from_json(const json& j) {
  QueryResponse v;
  for (const auto& e : optional_or<json>(j, "elements", json::array())) {
    v.elements.push_back(element_from_json(e));
  }
  for (const auto& e : optional_or<json>(j, "errors", json::array())) {
    ProviderError pe;
    pe.providing_endpoint = optional_or<std::string>(e, "providingEndpoint", "");
    pe.code = optional_or<int>(e, "code", 0);
    pe.reason = optional_or<std::string>(e, "reason", "");
    v.errors.push_back(std::move(pe));
  }
  return v;
}

json to_json(const Subscription& v) {
  json entities = json::array();
  for (const auto& e : v.entities) entities.push_back(to_json(e));
  return {{"subscriptionId", v.subscription_id},
          {"kind", v.kind == SubscriptionKind::context ? "context" : "availability"},
          {"entities", std::move(entities)},
          {"attributeNames", v.attribute_names},
          {"callbackEndpoint", v.callback_endpoint},
          {"ttl", v.ttl_seconds}};
}

Subscription subscription_from_json(const json& j) {
  Subscription v;
  v.subscription_id = optional_or<std::string>(j, "subscriptionId", "");
  const std::string kind = optional_or<std::string>(j, "kind", "context");
  if (kind == "context") {
    v.kind = SubscriptionKind::context;
  } else if (kind == "availability") {
    v.kind = SubscriptionKind::availability;
  } else {
    throw DecodeError("unknown subscription kind '" + kind + "'");
  }
  for (const auto& e : require<json>(j, "entities")) {
    v.entities.push_back(entity_ref_from_json(e));
  }
  v.attribute_names = optional_or<std::vector<std::string>>(j, "attributeNames", {});
  v.callback_endpoint = require<std::string>(j, "callbackEndpoint");
  v.ttl_seconds = optional_or<int64_t>(j, "ttl", 0);
  return v;
}

std::string error_body(int code, const std::string& reason) {
  return json{{"code", code}, {"reason", reason}}.dump();
}

}  // namespace liots::wire
