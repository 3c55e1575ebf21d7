#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "json.hpp"

namespace liots {

using json = nlohmann::json;

// Epoch milliseconds, UTC.
using TimestampMs = int64_t;

/// Glob match with `*` as the only wildcard (`?` is a literal).
bool glob_match(const std::string& pattern, const std::string& text);

/// True iff some string matches both `*`-globs. Used when query and
/// registration entity refs are both patterns.
bool globs_intersect(const std::string& a, const std::string& b);

// ---------------------------------------------------------------------------
// entity / attribute / element

struct EntityRef {
  std::string id;
  std::string type;
  bool is_pattern = false;

  bool operator==(const EntityRef&) const = default;
};

enum class ValueType { number, text, geo_point, structured };

struct GeoPoint {
  double lat = 0.0;
  double lon = 0.0;
  bool operator==(const GeoPoint&) const = default;
};

struct Attribute {
  std::string name;
  ValueType value_type = ValueType::number;
  // payload for the active value_type; structured carries arbitrary json
  std::variant<double, std::string, GeoPoint, json> value = 0.0;
  TimestampMs timestamp = 0;

  bool operator==(const Attribute&) const = default;

  double as_number() const { return std::get<double>(value); }
  const std::string& as_text() const { return std::get<std::string>(value); }
  const GeoPoint& as_geo_point() const { return std::get<GeoPoint>(value); }
  const json& as_structured() const { return std::get<json>(value); }
};

struct ContextElement {
  EntityRef entity;  // is_pattern must be false
  std::vector<Attribute> attributes;
  std::optional<std::string> provider_hint;

  bool operator==(const ContextElement&) const = default;

  const Attribute* find_attribute(const std::string& name) const;
};

// ---------------------------------------------------------------------------
// scope

enum class ScopeKind { exact_point, grid_cell, named_region, none };

struct GridCell {
  int64_t cell_lat = 0;
  int64_t cell_lon = 0;
  double cell_size_degrees = 0.0;
  bool operator==(const GridCell&) const = default;
};

struct Scope {
  ScopeKind kind = ScopeKind::none;
  GeoPoint point;       // exact_point
  GridCell cell;        // grid_cell
  std::string region;   // named_region

  bool operator==(const Scope&) const = default;

  static Scope none() { return {}; }
  static Scope exact(double lat, double lon);
  static Scope grid(int64_t cell_lat, int64_t cell_lon, double cell_size_degrees);
  static Scope named(std::string region);
};

/// Snap a point to the integer cell indices of a grid with the given cell size.
GridCell snap_to_grid(const GeoPoint& p, double cell_size_degrees);

/// True iff the two scopes denote an overlapping area. A scope of kind
/// `none` on either side is compatible with anything. Exact points are
/// snapped to the grid before comparing against grid cells; named regions
/// only overlap identical names.
bool scopes_overlap(const Scope& a, const Scope& b);

// ---------------------------------------------------------------------------
// registration / query / subscription

struct Registration {
  std::string registration_id;           // UUID-shaped opaque string
  int64_t version = 1;                   // >= 1, increments on update
  std::string providing_endpoint;        // URL
  std::vector<EntityRef> entities;
  std::vector<std::string> attribute_names;  // empty = all
  Scope scope;
  int64_t ttl_seconds = 0;

  bool operator==(const Registration&) const = default;
};

enum class AggregateMode { set, average };

struct QueryRequest {
  std::vector<EntityRef> entities;
  std::vector<std::string> attribute_names;  // empty = all
  std::optional<Scope> scope;
  AggregateMode aggregate = AggregateMode::set;
};

struct ProviderError {
  std::string providing_endpoint;
  int code = 0;
  std::string reason;
  bool operator==(const ProviderError&) const = default;
};

struct QueryResponse {
  std::vector<ContextElement> elements;
  std::vector<ProviderError> errors;
};

enum class SubscriptionKind { context, availability };

struct Subscription {
  std::string subscription_id;
  SubscriptionKind kind = SubscriptionKind::context;
  std::vector<EntityRef> entities;
  std::vector<std::string> attribute_names;  // empty = all
  std::string callback_endpoint;
  int64_t ttl_seconds = 0;
};

// ---------------------------------------------------------------------------
// operations

/// Entity pattern match. `candidate` must not be a pattern. Type matches on
/// equality or a `*` pattern type; the id matches under glob semantics when
/// `pattern.is_pattern`, on equality otherwise.
bool match_entity(const EntityRef& pattern, const EntityRef& candidate);

/// Match in either direction: both refs may be patterns, in which case the
/// id globs must have a non-empty intersection.
bool refs_compatible(const EntityRef& a, const EntityRef& b);

/// True iff `name_a` and `name_b` attribute-name lists are compatible:
/// non-empty intersection, or either list empty (empty = all).
bool attribute_names_compatible(const std::vector<std::string>& a,
                                const std::vector<std::string>& b);

/// Discovery predicate: some query entity compatible with some registration
/// entity, attribute lists compatible, scopes overlapping.
bool match_registration(const QueryRequest& query, const Registration& reg);

/// Keep only attributes named in `allowed`; an empty `allowed` list means no
/// restriction. The entity header and provider hint are retained.
ContextElement filter_attributes(const ContextElement& element,
                                 const std::vector<std::string>& allowed);

struct AggregationTypeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Merge provider responses. `set` unions elements, merging same (id, type)
/// attribute-wise with newest timestamp winning (ties broken by provider
/// endpoint order). `average` emits one synthetic element per entity type,
/// id `avg:<type>`, holding the arithmetic mean of each numeric attribute
/// group; attribute names whose values are consistently non-numeric are
/// dropped and reported as error annotations.
///
/// Throws AggregationTypeError when `average` meets both numeric and
/// non-numeric values for one attribute name.
QueryResponse aggregate_responses(const std::vector<QueryResponse>& parts,
                                  AggregateMode mode);

// ---------------------------------------------------------------------------
// misc helpers shared across services

/// Random UUIDv4 string (from std::random_device).
std::string new_uuid();

/// Lowercase the host part and strip any trailing slash; dedup key for
/// provider endpoints.
std::string normalize_endpoint(const std::string& url);

/// Cheap syntactic URL check: scheme://host[:port][/path].
bool is_valid_endpoint(const std::string& url);

/// Validation of well-formedness invariants; returns a reason or nullopt.
std::optional<std::string> validate_element(const ContextElement& element);
std::optional<std::string> validate_registration(const Registration& reg);

}  // namespace liots
