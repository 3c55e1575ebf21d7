// Microbenchmarks for the hot paths shared by every service: matching,
// filtering, aggregation, store operations, policy decisions, and the wire
// codec.

#include <benchmark/benchmark.h>

#include <random>

#include "liots/context_manager.hpp"
#include "liots/discovery.hpp"
#include "liots/registrar.hpp"
#include "liots/security.hpp"
#include "liots/wire.hpp"

using namespace liots;

namespace {

Attribute num_attr(const std::string& name, double value) {
  Attribute a;
  a.name = name;
  a.value_type = ValueType::number;
  a.value = value;
  a.timestamp = 1;
  return a;
}

ContextElement make_element(int id, int attrs) {
  ContextElement e;
  e.entity = {"e-" + std::to_string(id), "Thing", false};
  for (int a = 0; a < attrs; ++a) {
    e.attributes.push_back(num_attr("a-" + std::to_string(a), a * 1.5));
  }
  return e;
}

void seed_store(ContextStore& store, int entities, int attrs) {
  std::vector<ContextElement> batch;
  for (int i = 0; i < entities; ++i) {
    batch.push_back(make_element(i, attrs));
    if (batch.size() == 100) {
      store.publish(batch);
      batch.clear();
    }
  }
  if (!batch.empty()) store.publish(batch);
}

}  // namespace

static void BM_GlobMatch(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(glob_match("sensor-*-temperature", "sensor-42-temperature"));
  }
}
BENCHMARK(BM_GlobMatch);

static void BM_GlobsIntersect(benchmark::State& state) {
  for (auto _ : state) {
    benchmark::DoNotOptimize(globs_intersect("car-*-north", "*-7-*"));
  }
}
BENCHMARK(BM_GlobsIntersect);

static void BM_MatchRegistration(benchmark::State& state) {
  Registration reg;
  reg.registration_id = "r";
  reg.version = 1;
  reg.providing_endpoint = "http://cm:1026";
  reg.entities = {EntityRef{"*", "Thing", true}};
  reg.attribute_names = {"a-0", "a-1", "a-2"};
  reg.scope = Scope::grid(441, 98, 0.1);
  QueryRequest q;
  q.entities = {EntityRef{"e-17", "Thing", false}};
  q.attribute_names = {"a-1"};
  q.scope = Scope::exact(44.11, 9.82);
  for (auto _ : state) {
    benchmark::DoNotOptimize(match_registration(q, reg));
  }
}
BENCHMARK(BM_MatchRegistration);

static void BM_FilterAttributes(benchmark::State& state) {
  const ContextElement e = make_element(1, static_cast<int>(state.range(0)));
  std::vector<std::string> allowed;
  for (int a = 0; a < 20; ++a) allowed.push_back("a-" + std::to_string(a * 2));
  for (auto _ : state) {
    benchmark::DoNotOptimize(filter_attributes(e, allowed));
  }
}
BENCHMARK(BM_FilterAttributes)->Arg(20)->Arg(100);

static void BM_AggregateSet(benchmark::State& state) {
  std::vector<QueryResponse> parts;
  for (int p = 0; p < static_cast<int>(state.range(0)); ++p) {
    QueryResponse part;
    for (int e = 0; e < 10; ++e) part.elements.push_back(make_element(p * 10 + e, 20));
    parts.push_back(std::move(part));
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(aggregate_responses(parts, AggregateMode::set));
  }
}
BENCHMARK(BM_AggregateSet)->Arg(2)->Arg(10);

static void BM_StorePublish(benchmark::State& state) {
  ContextStore store;
  const std::vector<ContextElement> batch{make_element(1, 100)};
  for (auto _ : state) {
    store.publish(batch);
  }
}
BENCHMARK(BM_StorePublish);

static void BM_StoreQueryConcrete(benchmark::State& state) {
  ContextStore store;
  seed_store(store, static_cast<int>(state.range(0)), 100);
  QueryRequest q;
  std::mt19937 rng(7);
  for (int i = 0; i < 20; ++i) {
    q.entities.push_back(
        {"e-" + std::to_string(rng() % state.range(0)), "Thing", false});
  }
  for (int a = 0; a < 20; ++a) q.attribute_names.push_back("a-" + std::to_string(a));
  for (auto _ : state) {
    benchmark::DoNotOptimize(store.query(q));
  }
}
BENCHMARK(BM_StoreQueryConcrete)->Arg(1000)->Arg(10000);

static void BM_StoreQueryPattern(benchmark::State& state) {
  ContextStore store;
  seed_store(store, static_cast<int>(state.range(0)), 10);
  QueryRequest q;
  q.entities = {EntityRef{"e-1*", "Thing", true}};
  for (auto _ : state) {
    benchmark::DoNotOptimize(store.query(q));
  }
}
BENCHMARK(BM_StoreQueryPattern)->Arg(1000);

static void BM_DiscoverIndexed(benchmark::State& state) {
  RegistrationStore store;
  for (int i = 0; i < static_cast<int>(state.range(0)); ++i) {
    Registration r;
    r.registration_id = "r-" + std::to_string(i);
    r.version = 1;
    r.providing_endpoint = "http://cm-" + std::to_string(i % 10) + ":1";
    r.entities = {EntityRef{"e-" + std::to_string(i), "Thing", false}};
    r.ttl_seconds = 3600;
    store.register_registration(r);
  }
  QueryRequest q;
  std::mt19937 rng(3);
  for (int i = 0; i < 20; ++i) {
    q.entities.push_back(
        {"e-" + std::to_string(rng() % state.range(0)), "Thing", false});
  }
  for (auto _ : state) {
    benchmark::DoNotOptimize(store.discover(q));
  }
}
BENCHMARK(BM_DiscoverIndexed)->Arg(1000)->Arg(10000);

static void BM_PolicyDecide(benchmark::State& state) {
  PolicyEngine pdp;
  std::vector<Policy> policies;
  for (int i = 0; i < static_cast<int>(state.range(0)); ++i) {
    policies.push_back({"r-" + std::to_string(i), "app:team-" + std::to_string(i) + ":*",
                        Action::query, "T" + std::to_string(i) + "/*", Effect::permit,
                        std::nullopt});
  }
  policies.push_back({"fallback", "*", Action::any, "*", Effect::deny, std::nullopt});
  pdp.set_policies(policies);
  for (auto _ : state) {
    benchmark::DoNotOptimize(pdp.decide("app:team-7:alice", Action::query, "T7/value"));
  }
}
BENCHMARK(BM_PolicyDecide)->Arg(8)->Arg(64);

static void BM_Synthesize(benchmark::State& state) {
  std::mt19937 rng(11);
  std::vector<Registration> source;
  for (int i = 0; i < static_cast<int>(state.range(0)); ++i) {
    Registration r;
    r.registration_id = "s-" + std::to_string(i);
    r.version = 1;
    r.providing_endpoint = "http://p-" + std::to_string(i) + ":1";
    r.entities = {EntityRef{"sensor-" + std::to_string(i),
                            "T" + std::to_string(rng() % 4), false}};
    r.attribute_names = {"value"};
    r.scope = Scope::exact(std::uniform_real_distribution<>(40, 46)(rng),
                           std::uniform_real_distribution<>(8, 14)(rng));
    r.ttl_seconds = 3600;
    source.push_back(std::move(r));
  }
  PrivacyDirective d;
  d.match_types = {"*"};
  d.key_fields = {KeyField::entity_type, KeyField::grid_cell};
  d.granularity = LocationGranularity::grid;
  d.grid_cell_size_degrees = 0.1;
  d.attribute_exposure = AttributeExposure::all;
  for (auto _ : state) {
    benchmark::DoNotOptimize(synthesize(source, {d}, {}, "http://infedb:1", 300));
  }
}
BENCHMARK(BM_Synthesize)->Arg(100)->Arg(1000);

static void BM_WireElementRoundTrip(benchmark::State& state) {
  const ContextElement e = make_element(1, static_cast<int>(state.range(0)));
  for (auto _ : state) {
    const std::string text = wire::to_json(e).dump();
    benchmark::DoNotOptimize(wire::element_from_json(json::parse(text)));
  }
}
BENCHMARK(BM_WireElementRoundTrip)->Arg(20)->Arg(100);

BENCHMARK_MAIN();
