#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <random>

#include "liots/model.hpp"

using namespace liots;

namespace {

Attribute num_attr(const std::string& name, double value, TimestampMs ts = 0) {
  Attribute a;
  a.name = name;
  a.value_type = ValueType::number;
  a.value = value;
  a.timestamp = ts;
  return a;
}

ContextElement element(const std::string& id, const std::string& type,
                       std::vector<Attribute> attrs,
                       std::optional<std::string> provider = std::nullopt) {
  ContextElement e;
  e.entity = {id, type, false};
  e.attributes = std::move(attrs);
  e.provider_hint = std::move(provider);
  return e;
}

EntityRef pattern(const std::string& id, const std::string& type) {
  return {id, type, true};
}
EntityRef concrete(const std::string& id, const std::string& type) {
  return {id, type, false};
}

}  // namespace

TEST_CASE("glob matching with * only") {
  CHECK(glob_match("*", "anything"));
  CHECK(glob_match("car-*", "car-7"));
  CHECK(glob_match("car-*", "car-"));
  CHECK_FALSE(glob_match("car-*", "bike-7"));
  CHECK(glob_match("*-7", "car-7"));
  CHECK(glob_match("a*b*c", "aXXbYYc"));
  CHECK_FALSE(glob_match("a*b*c", "aXXcYYb"));
  CHECK(glob_match("abc", "abc"));
  CHECK_FALSE(glob_match("abc", "abcd"));
  // `?` is a literal, not a wildcard
  CHECK_FALSE(glob_match("a?c", "abc"));
  CHECK(glob_match("a?c", "a?c"));
  // `*` appearing in the text is an ordinary character
  CHECK(glob_match("*", "*/*"));
  CHECK(glob_match("*", "*"));
  CHECK(glob_match("T/*", "T/*"));
  CHECK_FALSE(glob_match("T/a", "T/*"));
}

TEST_CASE("glob intersection agrees with brute-force enumeration") {
  CHECK(globs_intersect("car-*", "*-7"));
  CHECK(globs_intersect("*", "anything-concrete"));
  CHECK(globs_intersect("*", "*"));
  CHECK_FALSE(globs_intersect("car-*", "bike-*"));
  CHECK(globs_intersect("a*c", "ab*"));
  CHECK_FALSE(globs_intersect("abc", "abd"));

  // oracle: enumerate all strings over {a,b} up to length 6; for *-globs of
  // length <= 4, any non-empty intersection has a witness of length <= 6
  std::vector<std::string> all{""};
  for (size_t i = 0; i < all.size(); ++i) {
    if (all[i].size() < 6) {
      all.push_back(all[i] + "a");
      all.push_back(all[i] + "b");
    }
  }
  auto brute_force = [&](const std::string& p, const std::string& q) {
    return std::any_of(all.begin(), all.end(), [&](const std::string& s) {
      return glob_match(p, s) && glob_match(q, s);
    });
  };
  std::mt19937 rng(7);
  auto random_glob = [&](int len) {
    std::string s;
    for (int i = 0; i < len; ++i) {
      const int c = std::uniform_int_distribution<int>(0, 2)(rng);
      s += c == 0 ? '*' : (c == 1 ? 'a' : 'b');
    }
    return s;
  };
  for (int i = 0; i < 300; ++i) {
    const std::string p = random_glob(std::uniform_int_distribution<int>(0, 4)(rng));
    const std::string q = random_glob(std::uniform_int_distribution<int>(0, 4)(rng));
    INFO("p=" << p << " q=" << q);
    CHECK(globs_intersect(p, q) == brute_force(p, q));
  }
}

TEST_CASE("matchEntity") {
  CHECK(match_entity(pattern("car-*", "Car"), concrete("car-7", "Car")));
  CHECK_FALSE(match_entity(concrete("car-7", "Car"), concrete("car-7", "Bike")));
  CHECK(match_entity(pattern("*", "*"), concrete("whatever", "Anything")));
  CHECK_FALSE(match_entity(pattern("car-*", "Car"), concrete("bike-1", "Car")));
  CHECK(match_entity(concrete("car-7", "Car"), concrete("car-7", "Car")));

  SUBCASE("reflexive on non-pattern refs") {
    std::mt19937 rng(11);
    for (int i = 0; i < 200; ++i) {
      std::string id, type;
      for (int k = 0; k < 1 + i % 8; ++k) id += static_cast<char>('a' + rng() % 26);
      for (int k = 0; k < 1 + i % 5; ++k) type += static_cast<char>('A' + rng() % 26);
      const EntityRef x = concrete(id, type);
      CHECK(match_entity(x, x));
    }
  }
}

TEST_CASE("scope overlap") {
  const Scope none = Scope::none();
  const Scope p1 = Scope::exact(44.101, 9.823);
  const Scope cell_a = Scope::grid(441, 98, 0.1);
  const Scope cell_b = Scope::grid(441, 99, 0.1);

  CHECK(scopes_overlap(none, cell_a));
  CHECK(scopes_overlap(p1, cell_a));  // floor(44.101/0.1)=441, floor(9.823/0.1)=98
  CHECK_FALSE(scopes_overlap(p1, cell_b));
  CHECK(scopes_overlap(cell_a, cell_a));
  CHECK_FALSE(scopes_overlap(cell_a, cell_b));
  CHECK(scopes_overlap(Scope::named("Napoli"), Scope::named("Napoli")));
  CHECK_FALSE(scopes_overlap(Scope::named("Napoli"), Scope::named("Salerno")));
  CHECK_FALSE(scopes_overlap(Scope::named("Napoli"), cell_a));
  // different cell sizes overlap by geometric rectangle intersection
  CHECK(scopes_overlap(Scope::grid(44, 9, 1.0), Scope::grid(441, 98, 0.1)));
  CHECK_FALSE(scopes_overlap(Scope::grid(45, 9, 1.0), Scope::grid(441, 98, 0.1)));
}

TEST_CASE("matchRegistration") {
  Registration reg;
  reg.registration_id = "r1";
  reg.version = 1;
  reg.providing_endpoint = "http://cm:1026";
  reg.entities = {pattern("*", "Temperature")};

  QueryRequest q;
  q.entities = {concrete("t-1", "Temperature")};

  SUBCASE("empty attribute list means all") {
    q.attribute_names = {"value"};
    reg.attribute_names = {};
    CHECK(match_registration(q, reg));
  }
  SUBCASE("disjoint attributes do not match") {
    q.attribute_names = {"humidity"};
    reg.attribute_names = {"temp"};
    CHECK_FALSE(match_registration(q, reg));
  }
  SUBCASE("grid cells compared by index") {
    q.scope = Scope::grid(5, 3, 0.5);
    reg.scope = Scope::grid(5, 4, 0.5);
    CHECK_FALSE(match_registration(q, reg));
    reg.scope = Scope::grid(5, 3, 0.5);
    CHECK(match_registration(q, reg));
  }
  SUBCASE("absent query scope matches any registration scope") {
    reg.scope = Scope::exact(1, 2);
    CHECK(match_registration(q, reg));
  }
  SUBCASE("both sides patterns") {
    q.entities = {pattern("car-*", "*")};
    reg.entities = {pattern("*-7", "Car")};
    CHECK(match_registration(q, reg));
  }
  SUBCASE("no entity overlap") {
    q.entities = {concrete("h-1", "Humidity")};
    CHECK_FALSE(match_registration(q, reg));
  }
}

TEST_CASE("filterAttributes") {
  const ContextElement e =
      element("e1", "T", {num_attr("a", 1), num_attr("b", 2), num_attr("c", 3)});

  SUBCASE("intersection") {
    const ContextElement out = filter_attributes(e, {"a", "c"});
    REQUIRE(out.attributes.size() == 2);
    CHECK(out.attributes[0].name == "a");
    CHECK(out.attributes[1].name == "c");
    CHECK(out.entity == e.entity);
  }
  SUBCASE("empty intersection keeps the entity header") {
    const ContextElement out = filter_attributes(e, {"z"});
    CHECK(out.attributes.empty());
    CHECK(out.entity == e.entity);
  }
  SUBCASE("empty allowed list means no restriction") {
    CHECK(filter_attributes(e, {}) == e);
  }
  SUBCASE("large element, oracle by name-set intersection") {
    ContextElement big = element("big", "T", {});
    for (int i = 0; i < 100; ++i) {
      big.attributes.push_back(num_attr("a" + std::to_string(i), i));
    }
    std::vector<std::string> allowed;
    for (int i = 0; i < 20; ++i) allowed.push_back("a" + std::to_string(i * 5));
    const ContextElement out = filter_attributes(big, allowed);
    CHECK(out.attributes.size() == 20);
    for (const auto& a : out.attributes) {
      CHECK(std::find(allowed.begin(), allowed.end(), a.name) != allowed.end());
    }
  }
  SUBCASE("idempotent") {
    const std::vector<std::string> allowed{"a", "b"};
    const ContextElement once = filter_attributes(e, allowed);
    CHECK(filter_attributes(once, allowed) == once);
  }
}

TEST_CASE("aggregateResponses set mode") {
  SUBCASE("disjoint union") {
    QueryResponse p1{{element("e1", "T", {num_attr("t", 10)})}, {}};
    QueryResponse p2{{element("e2", "T", {num_attr("t", 20)})}, {}};
    const QueryResponse out = aggregate_responses({p1, p2}, AggregateMode::set);
    REQUIRE(out.elements.size() == 2);
    CHECK(out.elements[0].entity.id == "e1");
    CHECK(out.elements[1].entity.id == "e2");
  }
  SUBCASE("newer timestamp wins per attribute") {
    QueryResponse p1{{element("e1", "T", {num_attr("t", 10, 5)})}, {}};
    QueryResponse p2{{element("e1", "T", {num_attr("t", 12, 9)})}, {}};
    const QueryResponse out = aggregate_responses({p1, p2}, AggregateMode::set);
    REQUIRE(out.elements.size() == 1);
    REQUIRE(out.elements[0].attributes.size() == 1);
    // oracle: max-timestamp selection over the collected values
    CHECK(out.elements[0].attributes[0].as_number() == 12);
    CHECK(out.elements[0].attributes[0].timestamp == 9);
  }
  SUBCASE("timestamp tie broken by provider endpoint order") {
    QueryResponse p1{{element("e1", "T", {num_attr("t", 1, 5)}, "http://a")}, {}};
    QueryResponse p2{{element("e1", "T", {num_attr("t", 2, 5)}, "http://b")}, {}};
    const QueryResponse ab = aggregate_responses({p1, p2}, AggregateMode::set);
    const QueryResponse ba = aggregate_responses({p2, p1}, AggregateMode::set);
    CHECK(ab.elements[0].attributes[0].as_number() == 2);
    CHECK(ba.elements[0].attributes[0].as_number() == 2);
  }
  SUBCASE("attribute-wise merge unions names") {
    QueryResponse p1{{element("e1", "T", {num_attr("t", 10)})}, {}};
    QueryResponse p2{{element("e1", "T", {num_attr("h", 5)})}, {}};
    const QueryResponse out = aggregate_responses({p1, p2}, AggregateMode::set);
    REQUIRE(out.elements.size() == 1);
    CHECK(out.elements[0].attributes.size() == 2);
  }
  SUBCASE("idempotent") {
    QueryResponse p{{element("e1", "T", {num_attr("t", 10, 3), num_attr("h", 4, 2)}),
                     element("e2", "U", {num_attr("t", 1, 1)})},
                    {}};
    const QueryResponse once = aggregate_responses({p}, AggregateMode::set);
    const QueryResponse twice = aggregate_responses({once, once}, AggregateMode::set);
    CHECK(once.elements == twice.elements);
  }
  SUBCASE("permutation invariant") {
    std::mt19937 rng(23);
    std::vector<QueryResponse> parts;
    for (int p = 0; p < 5; ++p) {
      QueryResponse part;
      for (int e = 0; e < 4; ++e) {
        part.elements.push_back(element(
            "e" + std::to_string(rng() % 3), "T",
            {num_attr("x", static_cast<double>(rng() % 100),
                      static_cast<TimestampMs>(rng() % 10))},
            "http://p" + std::to_string(p)));
      }
      parts.push_back(std::move(part));
    }
    const QueryResponse base = aggregate_responses(parts, AggregateMode::set);
    for (int i = 0; i < 10; ++i) {
      std::shuffle(parts.begin(), parts.end(), rng);
      const QueryResponse shuffled = aggregate_responses(parts, AggregateMode::set);
      CHECK(base.elements == shuffled.elements);
    }
  }
}

TEST_CASE("aggregateResponses average mode") {
  SUBCASE("mean over homologous contexts") {
    QueryResponse p1{{element("e1", "T", {num_attr("t", 10)})}, {}};
    QueryResponse p2{{element("e1", "T", {num_attr("t", 30)})}, {}};
    const QueryResponse out = aggregate_responses({p1, p2}, AggregateMode::average);
    REQUIRE(out.elements.size() == 1);
    CHECK(out.elements[0].entity.id == "avg:T");
    CHECK(out.elements[0].entity.type == "T");
    // oracle: arithmetic mean over collected values
    CHECK(out.elements[0].attributes[0].as_number() == doctest::Approx(20.0));
  }
  SUBCASE("groups by entity type and attribute name across entities") {
    QueryResponse p1{{element("e1", "T", {num_attr("t", 1)}),
                      element("e2", "T", {num_attr("t", 2)})},
                     {}};
    QueryResponse p2{{element("e3", "T", {num_attr("t", 6)})}, {}};
    const QueryResponse out = aggregate_responses({p1, p2}, AggregateMode::average);
    REQUIRE(out.elements.size() == 1);
    CHECK(out.elements[0].attributes[0].as_number() == doctest::Approx(3.0));
  }
  SUBCASE("non-numeric attributes dropped with annotation") {
    Attribute text;
    text.name = "label";
    text.value_type = ValueType::text;
    text.value = std::string("hot");
    QueryResponse p{{element("e1", "T", {num_attr("t", 4), text})}, {}};
    const QueryResponse out = aggregate_responses({p}, AggregateMode::average);
    REQUIRE(out.elements.size() == 1);
    CHECK(out.elements[0].attributes.size() == 1);
    REQUIRE(out.errors.size() == 1);
    CHECK(out.errors[0].reason.find("label") != std::string::npos);
  }
  SUBCASE("mixed value types for one name throw") {
    Attribute text;
    text.name = "t";
    text.value_type = ValueType::text;
    text.value = std::string("oops");
    QueryResponse p1{{element("e1", "T", {num_attr("t", 4)})}, {}};
    QueryResponse p2{{element("e2", "T", {text})}, {}};
    CHECK_THROWS_AS(aggregate_responses({p1, p2}, AggregateMode::average),
                    AggregationTypeError);
  }
  SUBCASE("permutation invariant") {
    QueryResponse p1{{element("e1", "T", {num_attr("t", 10)})}, {}};
    QueryResponse p2{{element("e2", "T", {num_attr("t", 20)})}, {}};
    QueryResponse p3{{element("e3", "U", {num_attr("t", 7)})}, {}};
    const QueryResponse a = aggregate_responses({p1, p2, p3}, AggregateMode::average);
    const QueryResponse b = aggregate_responses({p3, p1, p2}, AggregateMode::average);
    CHECK(a.elements == b.elements);
  }
}

TEST_CASE("endpoint normalization and validation") {
  CHECK(normalize_endpoint("HTTP://Host:8080/") == "http://host:8080");
  CHECK(normalize_endpoint("http://host:8080/path/") == "http://host:8080/path");
  CHECK(normalize_endpoint("http://a") == normalize_endpoint("http://A/"));
  CHECK(is_valid_endpoint("http://127.0.0.1:9000"));
  CHECK(is_valid_endpoint("https://example.org/base"));
  CHECK_FALSE(is_valid_endpoint("not a url"));
  CHECK_FALSE(is_valid_endpoint("://missing-scheme"));
}

TEST_CASE("element validation") {
  ContextElement ok = element("e1", "T", {num_attr("a", 1)});
  CHECK_FALSE(validate_element(ok).has_value());

  ContextElement dup = element("e1", "T", {num_attr("a", 1), num_attr("a", 2)});
  CHECK(validate_element(dup).has_value());

  ContextElement patterned = ok;
  patterned.entity.is_pattern = true;
  CHECK(validate_element(patterned).has_value());

  Attribute geo;
  geo.name = "location";
  geo.value_type = ValueType::geo_point;
  geo.value = GeoPoint{91.0, 0.0};
  CHECK(validate_element(element("e1", "T", {geo})).has_value());
  geo.value = GeoPoint{45.0, 9.0};
  CHECK_FALSE(validate_element(element("e1", "T", {geo})).has_value());
}
