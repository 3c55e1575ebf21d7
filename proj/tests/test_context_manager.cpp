#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <atomic>
#include <filesystem>
#include <random>

#include "liots/context_manager.hpp"
#include "test_support.hpp"

using namespace liots;
using liots::testing::CallbackServer;
using liots::testing::poll_until;

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
                       std::vector<Attribute> attrs) {
  ContextElement e;
  e.entity = {id, type, false};
  e.attributes = std::move(attrs);
  return e;
}

Subscription context_sub(const std::string& id_pattern, const std::string& type,
                         const std::string& callback,
                         std::vector<std::string> attrs = {}, int64_t ttl = 0) {
  Subscription s;
  s.kind = SubscriptionKind::context;
  s.entities = {EntityRef{id_pattern, type, true}};
  s.attribute_names = std::move(attrs);
  s.callback_endpoint = callback;
  s.ttl_seconds = ttl;
  return s;
}

QueryRequest query_for(const std::string& id_pattern, const std::string& type = "*",
                       std::vector<std::string> attrs = {}) {
  QueryRequest q;
  q.entities = {EntityRef{id_pattern, type, true}};
  q.attribute_names = std::move(attrs);
  return q;
}

}  // namespace

TEST_CASE("publish then query: read-your-writes") {
  ContextStore store;
  store.publish({element("e1", "T", {num_attr("t", 10)})});
  const QueryResponse r = store.query(query_for("e1", "T"));
  REQUIRE(r.elements.size() == 1);
  CHECK(r.elements[0].attributes[0].as_number() == 10);
}

TEST_CASE("publish upserts attribute-wise") {
  ContextStore store;
  store.publish({element("e1", "T", {num_attr("t", 10)})});
  store.publish({element("e1", "T", {num_attr("h", 5)})});
  const QueryResponse r = store.query(query_for("e1", "T"));
  REQUIRE(r.elements.size() == 1);
  // oracle: attribute-map union
  CHECK(r.elements[0].attributes.size() == 2);
  CHECK(r.elements[0].find_attribute("t")->as_number() == 10);
  CHECK(r.elements[0].find_attribute("h")->as_number() == 5);

  store.publish({element("e1", "T", {num_attr("t", 99)})});
  const QueryResponse r2 = store.query(query_for("e1", "T"));
  CHECK(r2.elements[0].find_attribute("t")->as_number() == 99);
  CHECK(r2.elements[0].attributes.size() == 2);
}

TEST_CASE("query semantics") {
  ContextStore store;
  store.publish({element("e1", "T", {num_attr("a", 1), num_attr("b", 2)}),
                 element("e2", "T", {num_attr("a", 3)}),
                 element("x9", "U", {num_attr("a", 4)})});

  SUBCASE("universal pattern returns everything") {
    CHECK(store.query(query_for("*", "*")).elements.size() == 3);
  }
  SUBCASE("absent entity returns empty list") {
    CHECK(store.query(query_for("nope", "T")).elements.empty());
  }
  SUBCASE("attribute filter applies") {
    const QueryResponse r = store.query(query_for("e1", "T", {"b"}));
    REQUIRE(r.elements.size() == 1);
    REQUIRE(r.elements[0].attributes.size() == 1);
    CHECK(r.elements[0].attributes[0].name == "b");
  }
  SUBCASE("response never contains attributes outside the requested list") {
    const QueryResponse r = store.query(query_for("*", "*", {"a"}));
    for (const auto& e : r.elements) {
      for (const auto& a : e.attributes) CHECK(a.name == "a");
    }
  }
}

TEST_CASE("malformed publish is rejected") {
  ContextStore store;
  CHECK_THROWS_AS(
      store.publish({element("e1", "T", {num_attr("a", 1), num_attr("a", 2)})}),
      std::invalid_argument);
  CHECK(store.element_count() == 0);
}

TEST_CASE("brute-force oracle equivalence on random stores") {
  std::mt19937 rng(31);
  for (int round = 0; round < 20; ++round) {
    ContextStore store;
    std::vector<ContextElement> reference;  // linear-scan oracle data
    const int entity_count = std::uniform_int_distribution<int>(1, 200)(rng);
    for (int i = 0; i < entity_count; ++i) {
      ContextElement e = element(
          "e" + std::to_string(std::uniform_int_distribution<int>(0, 250)(rng)),
          "T" + std::to_string(std::uniform_int_distribution<int>(0, 3)(rng)), {});
      const int attrs = std::uniform_int_distribution<int>(1, 6)(rng);
      for (int a = 0; a < attrs; ++a) {
        e.attributes.push_back(num_attr("a" + std::to_string(a),
                                        std::uniform_real_distribution<>(0, 100)(rng)));
      }
      store.publish({e});
      // mirror the upsert in the reference
      auto it = std::find_if(reference.begin(), reference.end(), [&](const auto& x) {
        return x.entity.id == e.entity.id && x.entity.type == e.entity.type;
      });
      if (it == reference.end()) {
        reference.push_back(e);
      } else {
        for (const auto& a : e.attributes) {
          auto ait = std::find_if(it->attributes.begin(), it->attributes.end(),
                                  [&](const auto& x) { return x.name == a.name; });
          if (ait == it->attributes.end()) {
            it->attributes.push_back(a);
          } else {
            *ait = a;
          }
        }
      }
    }
    for (int qi = 0; qi < 10; ++qi) {
      QueryRequest q;
      const int kind = std::uniform_int_distribution<int>(0, 2)(rng);
      if (kind == 0) {
        q.entities = {EntityRef{"*", "*", true}};
      } else if (kind == 1) {
        q.entities = {EntityRef{
            "e" + std::to_string(std::uniform_int_distribution<int>(0, 250)(rng)),
            "T" + std::to_string(std::uniform_int_distribution<int>(0, 3)(rng)), false}};
      } else {
        q.entities = {EntityRef{
            "e" + std::to_string(std::uniform_int_distribution<int>(0, 25)(rng)) + "*",
            "*", true}};
      }
      if (std::uniform_int_distribution<int>(0, 1)(rng)) q.attribute_names = {"a0", "a2"};

      // oracle: linear scan over the mirrored reference store
      size_t expected = 0;
      for (const auto& e : reference) {
        const bool matches = std::any_of(
            q.entities.begin(), q.entities.end(),
            [&](const EntityRef& p) { return match_entity(p, e.entity); });
        if (matches) ++expected;
      }
      const QueryResponse got = store.query(q);
      CHECK(got.elements.size() == expected);
      for (const auto& e : got.elements) {
        if (!q.attribute_names.empty()) {
          for (const auto& a : e.attributes) {
            CHECK((a.name == "a0" || a.name == "a2"));
          }
        }
      }
    }
  }
}

TEST_CASE("subscription lifecycle against a live service") {
  CallbackServer callback;
  ContextManagerConfig cfg;
  cfg.notify_backoff_base_ms = 20;
  ContextManagerService cm(cfg);
  cm.start();

  auto http_publish = [&](const ContextElement& e) {
    json arr = json::array({wire::to_json(e)});
    const HttpResult r =
        post_json(cm.endpoint(), wire::kUpdateContext, {{"elements", arr}});
    REQUIRE(r.status == 200);
  };
  auto http_subscribe = [&](const Subscription& s) {
    const HttpResult r =
        post_json(cm.endpoint(), wire::kSubscribeContext, wire::to_json(s));
    REQUIRE(r.status == 200);
    return r.body.at("subscriptionId").get<std::string>();
  };

  SUBCASE("publish triggers exactly one notification per matching subscription") {
    http_subscribe(context_sub("*", "Car", callback.endpoint()));
    http_publish(element("car-1", "Car", {num_attr("speed", 42)}));
    REQUIRE(callback.wait_for(1));
    cm.dispatcher().wait_idle();
    CHECK(callback.count() == 1);
    const auto rec = callback.received().at(0);
    CHECK(rec.path == wire::kNotifyContext);
    CHECK(rec.body["elements"][0]["entity"]["id"] == "car-1");
  }

  SUBCASE("initial notification carries currently matching elements") {
    http_publish(element("car-2", "Car", {num_attr("speed", 10)}));
    http_subscribe(context_sub("*", "Car", callback.endpoint()));
    REQUIRE(callback.wait_for(1));
    CHECK(callback.received().at(0).body["elements"][0]["entity"]["id"] == "car-2");
  }

  SUBCASE("two overlapping subscriptions each get their own notification") {
    http_subscribe(context_sub("*", "Car", callback.endpoint()));
    http_subscribe(context_sub("car-*", "Car", callback.endpoint()));
    http_publish(element("car-3", "Car", {num_attr("speed", 1)}));
    REQUIRE(callback.wait_for(2));
    cm.dispatcher().wait_idle();
    CHECK(callback.count() == 2);
  }

  SUBCASE("notification payload is filtered to subscribed attributes") {
    http_subscribe(context_sub("*", "Car", callback.endpoint(), {"speed"}));
    http_publish(element("car-4", "Car", {num_attr("speed", 9), num_attr("fuel", 50)}));
    REQUIRE(callback.wait_for(1));
    const json elements = callback.received().at(0).body["elements"];
    REQUIRE(elements.size() == 1);
    REQUIRE(elements[0]["attributes"].size() == 1);
    CHECK(elements[0]["attributes"][0]["name"] == "speed");
  }

  SUBCASE("non-matching publish produces no notification") {
    http_subscribe(context_sub("*", "Car", callback.endpoint()));
    http_publish(element("t-1", "Temperature", {num_attr("v", 20)}));
    cm.dispatcher().wait_idle();
    CHECK(callback.count() == 0);
  }

  SUBCASE("unsubscribe stops notifications; unknown id is 404") {
    const std::string id = http_subscribe(context_sub("*", "Car", callback.endpoint()));
    HttpResult r =
        post_json(cm.endpoint(), wire::kUnsubscribeContext, {{"subscriptionId", id}});
    CHECK(r.status == 200);
    http_publish(element("car-5", "Car", {num_attr("speed", 3)}));
    cm.dispatcher().wait_idle();
    CHECK(callback.count() == 0);
    // second unsubscribe: 404
    r = post_json(cm.endpoint(), wire::kUnsubscribeContext, {{"subscriptionId", id}});
    CHECK(r.status == 404);
    CHECK(r.body["code"] == 404);
  }

  SUBCASE("unsubscribing one of two subscriptions leaves the other live") {
    const std::string id1 = http_subscribe(context_sub("*", "Car", callback.endpoint()));
    http_subscribe(context_sub("car-*", "Car", callback.endpoint()));
    post_json(cm.endpoint(), wire::kUnsubscribeContext, {{"subscriptionId", id1}});
    http_publish(element("car-6", "Car", {num_attr("speed", 2)}));
    REQUIRE(callback.wait_for(1));
    cm.dispatcher().wait_idle();
    CHECK(callback.count() == 1);  // oracle: remaining-subscription set has one member
  }

  SUBCASE("invalid callback endpoint rejected") {
    Subscription s = context_sub("*", "Car", "not-a-url");
    const HttpResult r =
        post_json(cm.endpoint(), wire::kSubscribeContext, wire::to_json(s));
    CHECK(r.status == 400);
  }

  SUBCASE("malformed element returns 400") {
    json arr = json::array({{{"entity", {{"id", "x"}, {"type", "T"}}},
                             {"attributes",
                              json::array({wire::to_json(num_attr("a", 1)),
                                           wire::to_json(num_attr("a", 2))})}}});
    const HttpResult r =
        post_json(cm.endpoint(), wire::kUpdateContext, {{"elements", arr}});
    CHECK(r.status == 400);
  }
}

TEST_CASE("subscription expiry with an injected clock") {
  std::atomic<TimestampMs> now{1'000'000};
  ContextStore store([&] { return now.load(); });

  auto [id, initial] = store.subscribe(
      context_sub("*", "Car", "http://127.0.0.1:1/cb", {}, /*ttl=*/1));
  CHECK(initial.empty());

  // within ttl: notification scheduled
  now = 1'000'500;
  auto outcome = store.publish({element("car-1", "Car", {num_attr("s", 1)})});
  CHECK(outcome.notifications.size() == 1);

  // after ttl: expired subscriptions produce no further notifications
  now = 1'002'100;
  outcome = store.publish({element("car-1", "Car", {num_attr("s", 2)})});
  CHECK(outcome.notifications.empty());
}

TEST_CASE("publish batch atomicity under concurrent queries") {
  ContextStore store;
  constexpr int kBatch = 20;
  constexpr int kRounds = 50;
  std::atomic<bool> done{false};
  std::atomic<int> violations{0};

  std::thread reader([&] {
    while (!done.load()) {
      const QueryResponse r = store.query(query_for("*", "Batch"));
      std::map<double, int> per_round;
      for (const auto& e : r.elements) {
        per_round[e.find_attribute("round")->as_number()] += 1;
      }
      for (const auto& [round, count] : per_round) {
        if (count != kBatch) violations.fetch_add(1);
      }
    }
  });

  for (int round = 0; round < kRounds; ++round) {
    std::vector<ContextElement> batch;
    for (int i = 0; i < kBatch; ++i) {
      batch.push_back(element("b" + std::to_string(round) + "-" + std::to_string(i),
                              "Batch", {num_attr("round", round)}));
    }
    store.publish(batch);
  }
  done = true;
  reader.join();
  // a query sees all of a batch or none of it
  CHECK(violations.load() == 0);
}

TEST_CASE("store scales to the evaluation shape") {
  // 1000 entities x 100 attributes; query 20 named attributes of 50 entities
  ContextStore store;
  std::vector<ContextElement> batch;
  for (int i = 0; i < 1000; ++i) {
    ContextElement e = element("e-" + std::to_string(i), "Thing", {});
    for (int a = 0; a < 100; ++a) {
      e.attributes.push_back(num_attr("a-" + std::to_string(a), a));
    }
    batch.push_back(std::move(e));
    if (batch.size() == 100) {
      store.publish(batch);
      batch.clear();
    }
  }
  REQUIRE(store.element_count() == 1000);

  QueryRequest q;
  std::mt19937 rng(5);
  std::set<int> picked;
  while (picked.size() < 50) picked.insert(std::uniform_int_distribution<int>(0, 999)(rng));
  for (const int i : picked) {
    q.entities.push_back({"e-" + std::to_string(i), "Thing", false});
  }
  for (int a = 0; a < 20; ++a) q.attribute_names.push_back("a-" + std::to_string(a));

  const QueryResponse r = store.query(q);
  REQUIRE(r.elements.size() == 50);
  for (const auto& e : r.elements) CHECK(e.attributes.size() == 20);
}

TEST_CASE("snapshot file restores the store across restarts") {
  const std::string path =
      (std::filesystem::temp_directory_path() / ("liots-snap-" + new_uuid())).string();
  {
    ContextManagerConfig cfg;
    cfg.snapshot_path = path;
    ContextManagerService cm(cfg);
    cm.start();
    json arr = json::array({wire::to_json(element("e1", "T", {num_attr("t", 10)})),
                            wire::to_json(element("e2", "T", {num_attr("t", 20)}))});
    REQUIRE(post_json(cm.endpoint(), wire::kUpdateContext, {{"elements", arr}}).status ==
            200);
    arr = json::array({wire::to_json(element("e1", "T", {num_attr("h", 1)}))});
    REQUIRE(post_json(cm.endpoint(), wire::kUpdateContext, {{"elements", arr}}).status ==
            200);
  }
  {
    ContextManagerConfig cfg;
    cfg.snapshot_path = path;
    ContextManagerService cm(cfg);
    CHECK(cm.store().element_count() == 2);
    const QueryResponse r = cm.store().query(query_for("e1", "T"));
    REQUIRE(r.elements.size() == 1);
    CHECK(r.elements[0].attributes.size() == 2);
  }
  std::filesystem::remove(path);
}

TEST_CASE("notification delivery retries transient callback failures") {
  // a callback that fails the first attempt and accepts the second
  class FlakyCallback : public HttpServiceBase {
   public:
    FlakyCallback() : HttpServiceBase("flaky", 4) { start(); }
    ~FlakyCallback() override { stop(); }
    std::atomic<int> attempts{0};
    std::atomic<int> accepted{0};

   protected:
    void configure_routes(httplib::Server& server) override {
      server.Post(wire::kNotifyContext,
                  [this](const httplib::Request&, httplib::Response& res) {
                    if (attempts.fetch_add(1) == 0) {
                      reply_error(res, 500, "transient");
                      return;
                    }
                    accepted.fetch_add(1);
                    reply_json(res, 200, {{"status", "ok"}});
                  });
    }
  } flaky;

  ContextManagerConfig cfg;
  cfg.notify_backoff_base_ms = 20;
  ContextManagerService cm(cfg);
  cm.start();
  REQUIRE(post_json(cm.endpoint(), wire::kSubscribeContext,
                    wire::to_json(context_sub("*", "Car", flaky.endpoint())))
              .status == 200);
  json arr = json::array({wire::to_json(element("car-1", "Car", {num_attr("s", 1)}))});
  REQUIRE(post_json(cm.endpoint(), wire::kUpdateContext, {{"elements", arr}}).status ==
          200);

  REQUIRE(poll_until([&] { return flaky.accepted.load() == 1; }));
  CHECK(flaky.attempts.load() == 2);  // at-least-once via one retry
  CHECK(cm.dispatcher().delivered_count() == 1);
  CHECK(cm.dispatcher().dropped_count() == 0);
}

TEST_CASE("notifications are dropped and counted after exhausting retries") {
  ContextManagerConfig cfg;
  cfg.notify_max_attempts = 3;
  cfg.notify_backoff_base_ms = 10;
  ContextManagerService cm(cfg);
  cm.start();
  REQUIRE(post_json(cm.endpoint(), wire::kSubscribeContext,
                    wire::to_json(context_sub("*", "Car", "http://127.0.0.1:1")))
              .status == 200);
  json arr = json::array({wire::to_json(element("car-1", "Car", {num_attr("s", 1)}))});
  REQUIRE(post_json(cm.endpoint(), wire::kUpdateContext, {{"elements", arr}}).status ==
          200);
  REQUIRE(poll_until([&] { return cm.dispatcher().dropped_count() == 1; }));
  CHECK(cm.dispatcher().delivered_count() == 0);
}

TEST_CASE("announcements reach the availability target") {
  // a tiny recording registry
  class Registry : public HttpServiceBase {
   public:
    Registry() : HttpServiceBase("registry", 4) { start(); }
    ~Registry() override { stop(); }
    std::vector<Registration> regs() const {
      std::lock_guard lock(mutex_);
      return regs_;
    }
    size_t count() const {
      std::lock_guard lock(mutex_);
      return regs_.size();
    }

   protected:
    void configure_routes(httplib::Server& server) override {
      server.Post(wire::kRegisterContext,
                  [this](const httplib::Request& req, httplib::Response& res) {
                    {
                      std::lock_guard lock(mutex_);
                      regs_.push_back(wire::registration_from_json(json::parse(req.body)));
                    }
                    reply_json(res, 200, {{"registrationId", "r"}});
                  });
    }

   private:
    mutable std::mutex mutex_;
    std::vector<Registration> regs_;
  } registry;

  ContextManagerConfig cfg;
  cfg.announce_per_entity = true;
  ContextManagerService cm(cfg);
  cm.start();
  cm.configure_announcements(cm.endpoint(), registry.endpoint(), "");

  Attribute loc;
  loc.name = "location";
  loc.value_type = ValueType::geo_point;
  loc.value = GeoPoint{44.101, 9.823};
  ContextElement e = element("sensor-1", "Temperature", {num_attr("value", 21)});
  e.attributes.push_back(loc);
  json arr = json::array({wire::to_json(e)});
  REQUIRE(post_json(cm.endpoint(), wire::kUpdateContext, {{"elements", arr}}).status == 200);

  REQUIRE(poll_until([&] { return registry.count() >= 1; }));
  const Registration reg = registry.regs().at(0);
  CHECK(reg.providing_endpoint == cm.endpoint());
  REQUIRE(reg.entities.size() == 1);
  CHECK(reg.entities[0].id == "sensor-1");
  CHECK(reg.scope.kind == ScopeKind::exact_point);
  CHECK(reg.scope.point.lat == doctest::Approx(44.101));

  // republishing the same entity content does not re-announce
  REQUIRE(post_json(cm.endpoint(), wire::kUpdateContext, {{"elements", arr}}).status == 200);
  cm.dispatcher().wait_idle();
  CHECK(registry.count() == 1);

  SUBCASE("type-level announcements collapse entities into one pattern") {
    ContextManagerConfig type_cfg;
    type_cfg.announce_per_entity = false;
    ContextManagerService type_cm(type_cfg);
    type_cm.start();
    type_cm.configure_announcements(type_cm.endpoint(), registry.endpoint(), "");
    json two = json::array(
        {wire::to_json(element("s-1", "Temperature", {num_attr("v", 1)})),
         wire::to_json(element("s-2", "Temperature", {num_attr("v", 2)}))});
    REQUIRE(post_json(type_cm.endpoint(), wire::kUpdateContext, {{"elements", two}})
                .status == 200);
    REQUIRE(poll_until([&] { return registry.count() >= 2; }));
    const Registration type_reg = registry.regs().back();
    REQUIRE(type_reg.entities.size() == 1);
    CHECK(type_reg.entities[0].id == "*");
    CHECK(type_reg.entities[0].is_pattern);
    CHECK(type_reg.entities[0].type == "Temperature");
  }
}
