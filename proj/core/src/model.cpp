#include "liots/model.hpp"

#include <algorithm>
#include <cmath>
#include <cctype>
#include <random>
#include <set>
#include <unordered_set>

namespace liots {

bool glob_match(const std::string& pattern, const std::string& text) {
  // iterative two-pointer glob with `*` only; a `*` in the text is literal,
  // so the wildcard branch must win before the equality branch
  size_t p = 0, t = 0;
  size_t star = std::string::npos, mark = 0;
  while (t < text.size()) {
    if (p < pattern.size() && pattern[p] == '*') {
      star = p++;
      mark = t;
    } else if (p < pattern.size() && pattern[p] == text[t]) {
      ++p;
      ++t;
    } else if (star != std::string::npos) {
      p = star + 1;
      t = ++mark;
    } else {
      return false;
    }
  }
  while (p < pattern.size() && pattern[p] == '*') ++p;
  return p == pattern.size();
}

bool globs_intersect(const std::string& a, const std::string& b) {
  // memoized emptiness test of the intersection of two *-glob languages
  const size_t m = a.size(), n = b.size();
  std::vector<int8_t> memo((m + 1) * (n + 1), -1);
  auto idx = [&](size_t i, size_t j) { return i * (n + 1) + j; };

  auto rec = [&](auto&& self, size_t i, size_t j) -> bool {
    int8_t& slot = memo[idx(i, j)];
    if (slot != -1) return slot != 0;
    bool ok = false;
    if (i == m && j == n) {
      ok = true;
    } else {
      if (!ok && i < m && a[i] == '*') {
        // star matches empty, or absorbs the next char demanded by b
        ok = self(self, i + 1, j) || (j < n && self(self, i, j + 1));
      }
      if (!ok && j < n && b[j] == '*') {
        ok = self(self, i, j + 1) || (i < m && self(self, i + 1, j));
      }
      if (!ok && i < m && j < n && a[i] != '*' && b[j] != '*' && a[i] == b[j]) {
        ok = self(self, i + 1, j + 1);
      }
    }
    slot = ok ? 1 : 0;
    return ok;
  };
  return rec(rec, 0, 0);
}

const Attribute* ContextElement::find_attribute(const std::string& name) const {
  for (const auto& a : attributes) {
    if (a.name == name) return &a;
  }
  return nullptr;
}

Scope Scope::exact(double lat, double lon) {
  Scope s;
  s.kind = ScopeKind::exact_point;
  s.point = {lat, lon};
  return s;
}

Scope Scope::grid(int64_t cell_lat, int64_t cell_lon, double cell_size_degrees) {
  Scope s;
  s.kind = ScopeKind::grid_cell;
  s.cell = {cell_lat, cell_lon, cell_size_degrees};
  return s;
}

Scope Scope::named(std::string region) {
  Scope s;
  s.kind = ScopeKind::named_region;
  s.region = std::move(region);
  return s;
}

GridCell snap_to_grid(const GeoPoint& p, double cell_size_degrees) {
  GridCell c;
  c.cell_size_degrees = cell_size_degrees;
  c.cell_lat = static_cast<int64_t>(std::floor(p.lat / cell_size_degrees));
  c.cell_lon = static_cast<int64_t>(std::floor(p.lon / cell_size_degrees));
  return c;
}

namespace {

struct Rect {
  double lat0, lat1, lon0, lon1;  // half-open [lat0, lat1) x [lon0, lon1)
};

Rect cell_rect(const GridCell& c) {
  return {static_cast<double>(c.cell_lat) * c.cell_size_degrees,
          static_cast<double>(c.cell_lat + 1) * c.cell_size_degrees,
          static_cast<double>(c.cell_lon) * c.cell_size_degrees,
          static_cast<double>(c.cell_lon + 1) * c.cell_size_degrees};
}

bool rects_overlap(const Rect& a, const Rect& b) {
  return a.lat0 < b.lat1 && b.lat0 < a.lat1 && a.lon0 < b.lon1 && b.lon0 < a.lon1;
}

bool point_in_cell(const GeoPoint& p, const GridCell& c) {
  const GridCell snapped = snap_to_grid(p, c.cell_size_degrees);
  return snapped.cell_lat == c.cell_lat && snapped.cell_lon == c.cell_lon;
}

}  // namespace

bool scopes_overlap(const Scope& a, const Scope& b) {
  if (a.kind == ScopeKind::none || b.kind == ScopeKind::none) return true;
  if (a.kind == ScopeKind::named_region || b.kind == ScopeKind::named_region) {
    // regions only compare against regions; mixed geo/region never overlaps
    return a.kind == b.kind && a.region == b.region;
  }
  if (a.kind == ScopeKind::exact_point && b.kind == ScopeKind::exact_point) {
    return a.point == b.point;
  }
  if (a.kind == ScopeKind::exact_point) return point_in_cell(a.point, b.cell);
  if (b.kind == ScopeKind::exact_point) return point_in_cell(b.point, a.cell);
  if (a.cell.cell_size_degrees == b.cell.cell_size_degrees) {
    return a.cell.cell_lat == b.cell.cell_lat && a.cell.cell_lon == b.cell.cell_lon;
  }
  return rects_overlap(cell_rect(a.cell), cell_rect(b.cell));
}

bool match_entity(const EntityRef& pattern, const EntityRef& candidate) {
  const bool type_ok = pattern.type == "*" || pattern.type == candidate.type;
  if (!type_ok) return false;
  if (pattern.is_pattern) return glob_match(pattern.id, candidate.id);
  return pattern.id == candidate.id;
}

bool refs_compatible(const EntityRef& a, const EntityRef& b) {
  const bool type_ok = a.type == "*" || b.type == "*" || a.type == b.type;
  if (!type_ok) return false;
  if (!a.is_pattern && !b.is_pattern) return a.id == b.id;
  if (a.is_pattern && b.is_pattern) return globs_intersect(a.id, b.id);
  return a.is_pattern ? glob_match(a.id, b.id) : glob_match(b.id, a.id);
}

bool attribute_names_compatible(const std::vector<std::string>& a,
                                const std::vector<std::string>& b) {
  if (a.empty() || b.empty()) return true;
  for (const auto& x : a) {
    if (std::find(b.begin(), b.end(), x) != b.end()) return true;
  }
  return false;
}

bool match_registration(const QueryRequest& query, const Registration& reg) {
  bool entity_ok = false;
  for (const auto& qe : query.entities) {
    for (const auto& re : reg.entities) {
      if (refs_compatible(qe, re)) {
        entity_ok = true;
        break;
      }
    }
    if (entity_ok) break;
  }
  if (!entity_ok) return false;
  if (!attribute_names_compatible(query.attribute_names, reg.attribute_names)) {
    return false;
  }
  if (!query.scope) return true;
  return scopes_overlap(*query.scope, reg.scope);
}

ContextElement filter_attributes(const ContextElement& element,
                                 const std::vector<std::string>& allowed) {
  if (allowed.empty()) return element;
  ContextElement out;
  out.entity = element.entity;
  out.provider_hint = element.provider_hint;
  for (const auto& a : element.attributes) {
    if (std::find(allowed.begin(), allowed.end(), a.name) != allowed.end()) {
      out.attributes.push_back(a);
    }
  }
  return out;
}

namespace {

std::string provider_of(const ContextElement& e) {
  return e.provider_hint.value_or("");
}

QueryResponse aggregate_set(const std::vector<QueryResponse>& parts) {
  QueryResponse out;
  // key: (type, id); value: merged element + per-attribute winning provider
  std::map<std::pair<std::string, std::string>, ContextElement> merged;
  std::map<std::pair<std::string, std::string>, std::map<std::string, std::string>>
      attr_provider;
  for (const auto& part : parts) {
    for (const auto& err : part.errors) out.errors.push_back(err);
    for (const auto& e : part.elements) {
      const auto key = std::make_pair(e.entity.type, e.entity.id);
      auto it = merged.find(key);
      if (it == merged.end()) {
        merged.emplace(key, e);
        auto& winners = attr_provider[key];
        for (const auto& a : e.attributes) winners[a.name] = provider_of(e);
        continue;
      }
      ContextElement& dst = it->second;
      auto& winners = attr_provider[key];
      if (dst.provider_hint != e.provider_hint) dst.provider_hint.reset();
      for (const auto& a : e.attributes) {
        auto* existing =
            const_cast<Attribute*>(static_cast<const ContextElement&>(dst).find_attribute(a.name));
        if (!existing) {
          dst.attributes.push_back(a);
          winners[a.name] = provider_of(e);
          continue;
        }
        const std::string incoming_provider = provider_of(e);
        const std::string& held_provider = winners[a.name];
        if (a.timestamp > existing->timestamp ||
            (a.timestamp == existing->timestamp && incoming_provider > held_provider)) {
          *existing = a;
          winners[a.name] = incoming_provider;
        }
      }
    }
  }
  for (auto& [key, e] : merged) out.elements.push_back(std::move(e));
  return out;
}

QueryResponse aggregate_average(const std::vector<QueryResponse>& parts) {
  QueryResponse out;
  struct Acc {
    double sum = 0.0;
    int64_t count = 0;
    TimestampMs max_ts = 0;
    bool saw_numeric = false;
    bool saw_other = false;
  };
  std::map<std::pair<std::string, std::string>, Acc> groups;  // (type, attr name)
  for (const auto& part : parts) {
    for (const auto& err : part.errors) out.errors.push_back(err);
    for (const auto& e : part.elements) {
      for (const auto& a : e.attributes) {
        Acc& acc = groups[{e.entity.type, a.name}];
        if (a.value_type == ValueType::number) {
          acc.saw_numeric = true;
          acc.sum += a.as_number();
          acc.count += 1;
          acc.max_ts = std::max(acc.max_ts, a.timestamp);
        } else {
          acc.saw_other = true;
        }
      }
    }
  }
  std::map<std::string, ContextElement> synthetic;  // per entity type
  for (const auto& [key, acc] : groups) {
    const auto& [type, name] = key;
    if (acc.saw_numeric && acc.saw_other) {
      throw AggregationTypeError("mixed value types for attribute '" + name +
                                 "' of type '" + type + "'");
    }
    if (!acc.saw_numeric) {
      out.errors.push_back({"", 422, "non-numeric attribute '" + name +
                                         "' of type '" + type + "' dropped from average"});
      continue;
    }
    auto it = synthetic.find(type);
    if (it == synthetic.end()) {
      ContextElement e;
      e.entity = {"avg:" + type, type, false};
      it = synthetic.emplace(type, std::move(e)).first;
    }
    Attribute a;
    a.name = name;
    a.value_type = ValueType::number;
    a.value = acc.sum / static_cast<double>(acc.count);
    a.timestamp = acc.max_ts;
    it->second.attributes.push_back(std::move(a));
  }
  for (auto& [type, e] : synthetic) out.elements.push_back(std::move(e));
  return out;
}

}  // namespace

QueryResponse aggregate_responses(const std::vector<QueryResponse>& parts,
                                  AggregateMode mode) {
  QueryResponse out =
      mode == AggregateMode::set ? aggregate_set(parts) : aggregate_average(parts);
  // deterministic error order regardless of part permutation
  std::sort(out.errors.begin(), out.errors.end(),
            [](const ProviderError& a, const ProviderError& b) {
              return std::tie(a.providing_endpoint, a.code, a.reason) <
                     std::tie(b.providing_endpoint, b.code, b.reason);
            });
  return out;
}

std::string new_uuid() {
  static thread_local std::random_device rd;
  auto rnd32 = [&] { return static_cast<uint32_t>(rd()); };
  uint32_t a = rnd32(), b = rnd32(), c = rnd32(), d = rnd32();
  b = (b & 0xffff0fffu) | 0x00004000u;  // version 4
  c = (c & 0x3fffffffu) | 0x80000000u;  // variant 10
  char buf[37];
  std::snprintf(buf, sizeof(buf), "%08x-%04x-%04x-%04x-%04x%08x", a, b >> 16,
                b & 0xffff, c >> 16, c & 0xffff, d);
  return buf;
}

std::string normalize_endpoint(const std::string& url) {
  std::string out = url;
  // lowercase scheme and host (up to the path)
  const size_t scheme_end = out.find("://");
  size_t host_end = out.size();
  if (scheme_end != std::string::npos) {
    host_end = out.find('/', scheme_end + 3);
    if (host_end == std::string::npos) host_end = out.size();
  }
  for (size_t i = 0; i < host_end; ++i) {
    out[i] = static_cast<char>(std::tolower(static_cast<unsigned char>(out[i])));
  }
  while (!out.empty() && out.back() == '/') out.pop_back();
  return out;
}

bool is_valid_endpoint(const std::string& url) {
  const size_t scheme_end = url.find("://");
  if (scheme_end == std::string::npos || scheme_end == 0) return false;
  const std::string rest = url.substr(scheme_end + 3);
  if (rest.empty() || rest.front() == '/' || rest.front() == ':') return false;
  return rest.find(' ') == std::string::npos;
}

std::optional<std::string> validate_element(const ContextElement& element) {
  if (element.entity.id.empty()) return "entity id is empty";
  if (element.entity.is_pattern) return "context element entity must not be a pattern";
  std::unordered_set<std::string> seen;
  for (const auto& a : element.attributes) {
    if (a.name.empty()) return "attribute name is empty";
    if (!seen.insert(a.name).second) return "duplicate attribute name '" + a.name + "'";
    if (a.value_type == ValueType::geo_point) {
      const GeoPoint& p = a.as_geo_point();
      if (p.lat < -90.0 || p.lat > 90.0 || p.lon < -180.0 || p.lon > 180.0) {
        return "geo-point out of range for attribute '" + a.name + "'";
      }
    }
  }
  return std::nullopt;
}

std::optional<std::string> validate_registration(const Registration& reg) {
  if (!is_valid_endpoint(reg.providing_endpoint)) {
    return "providingEndpoint is not a valid URL: '" + reg.providing_endpoint + "'";
  }
  if (reg.version < 1) return "version must be >= 1";
  if (reg.entities.empty()) return "registration has no entities";
  for (const auto& e : reg.entities) {
    if (e.id.empty()) return "entity id is empty";
  }
  if (reg.scope.kind == ScopeKind::grid_cell && reg.scope.cell.cell_size_degrees <= 0) {
    return "grid cell size must be > 0";
  }
  return std::nullopt;
}

}  // namespace liots
