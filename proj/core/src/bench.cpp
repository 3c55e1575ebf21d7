#include "liots/bench.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <tuple>
#include <unordered_set>

#include "liots/wire.hpp"

namespace liots::bench {

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

constexpr const char* kEntityType = "Thing";
constexpr const char* kBenchUser = "app:bench";
constexpr const char* kBenchSecret = "bench-secret";
constexpr const char* kProducerUser = "app:producer";

}  // namespace

TopologyKind topology_kind_from(const std::string& s) {
  if (s == "centralized") return TopologyKind::centralized;
  if (s == "federated-unsecured") return TopologyKind::federated_unsecured;
  if (s == "federated-secured") return TopologyKind::federated_secured;
  if (s == "multi-provider") return TopologyKind::multi_provider;
  throw std::invalid_argument("unknown topology '" + s + "'");
}

std::string to_string(TopologyKind k) {
  switch (k) {
    case TopologyKind::centralized: return "centralized";
    case TopologyKind::federated_unsecured: return "federated-unsecured";
    case TopologyKind::federated_secured: return "federated-secured";
    case TopologyKind::multi_provider: return "multi-provider";
  }
  return "centralized";
}

TopologySpec topology_spec_from_json(const json& j) {
  TopologySpec spec;
  spec.kind = topology_kind_from(j.value("kind", "centralized"));
  spec.provider_count = j.value("providerCount", 10);
  spec.cm_thread_pool = j.value("cmThreadPool", 8);
  spec.broker_thread_pool = j.value("brokerThreadPool", 64);
  spec.discovery_thread_pool = j.value("discoveryThreadPool", 32);
  spec.cm_delay_ms = j.value("cmDelayMs", 0);
  spec.fanout_timeout_ms = j.value("fanoutTimeoutMs", 10000);
  return spec;
}

WorkloadSpec workload_spec_from_json(const json& j) {
  WorkloadSpec spec;
  spec.total_entities = j.value("totalEntities", int64_t{1000});
  spec.attributes_per_entity = j.value("attributesPerEntity", 100);
  spec.attributes_per_query = j.value("attributesPerQuery", 20);
  spec.max_entities_per_query = j.value("maxEntitiesPerQuery", int64_t{0});
  spec.clients = j.value("clients", 20);
  spec.duration_seconds = j.value("durationSeconds", 60.0);
  spec.warmup_seconds = j.value("warmupSeconds", 10.0);
  spec.rng_seed = j.value("rngSeed", uint64_t{42});
  spec.sample_check_rate = j.value("sampleCheckRate", 0.01);
  spec.label = j.value("label", "");
  return spec;
}

json to_json(const RunMetrics& m) {
  return {{"label", m.label},
          {"requestCount", m.request_count},
          {"errorCount", m.error_count},
          {"latency", {{"p50", m.p50_ms}, {"p90", m.p90_ms}, {"p99", m.p99_ms}, {"mean", m.mean_ms}}},
          {"rawThroughput", m.raw_throughput},
          {"normalizedThroughput", m.normalized_throughput},
          {"entitiesReturnedTotal", m.entities_returned_total},
          {"elapsedSeconds", m.elapsed_seconds},
          {"excluded", m.excluded},
          {"rngSeed", m.rng_seed}};
}

RunMetrics compute_metrics(const std::string& label, std::vector<double> latencies_ms,
                           int64_t request_count, int64_t error_count,
                           int64_t entities_returned_total, double elapsed_seconds,
                           uint64_t rng_seed) {
  RunMetrics m;
  m.label = label;
  m.request_count = request_count;
  m.error_count = error_count;
  m.entities_returned_total = entities_returned_total;
  m.elapsed_seconds = elapsed_seconds;
  m.rng_seed = rng_seed;
  if (!latencies_ms.empty()) {
    std::sort(latencies_ms.begin(), latencies_ms.end());
    auto pct = [&](double q) {
      const size_t idx = std::min(
          latencies_ms.size() - 1,
          static_cast<size_t>(std::ceil(q * static_cast<double>(latencies_ms.size()))) -
              (q > 0 ? 1 : 0));
      return latencies_ms[idx];
    };
    m.p50_ms = pct(0.50);
    m.p90_ms = pct(0.90);
    m.p99_ms = pct(0.99);
    m.mean_ms = std::accumulate(latencies_ms.begin(), latencies_ms.end(), 0.0) /
                static_cast<double>(latencies_ms.size());
  }
  if (elapsed_seconds > 0) {
    m.raw_throughput = static_cast<double>(request_count) / elapsed_seconds;
    m.normalized_throughput =
        static_cast<double>(entities_returned_total) / elapsed_seconds;
  }
  // a point with any error is omitted from comparisons
  m.excluded = error_count > 0 || request_count == 0;
  return m;
}

double seeded_value(uint64_t seed, int64_t entity_index, int attribute_index) {
  const uint64_t h = splitmix64(seed ^ (static_cast<uint64_t>(entity_index) * 0x100000001b3ull +
                                        static_cast<uint64_t>(attribute_index)));
  return static_cast<double>(h % 1000000ull) / 100.0;
}

std::string entity_name(int64_t index) { return "e-" + std::to_string(index); }
std::string attribute_name(int index) { return "a-" + std::to_string(index); }

// ---------------------------------------------------------------------------

namespace {

DomainSpec data_domain_spec(const std::string& id, const TopologySpec& t, int providers,
                            bool secured, bool with_federation) {
  DomainSpec d;
  d.domain_id = id;
  d.secured = secured;
  d.with_federation = with_federation;
  for (int i = 0; i < providers; ++i) {
    ProviderSpec p;
    p.name = "cm-" + std::to_string(i);
    p.artificial_delay_ms = t.cm_delay_ms;
    p.thread_pool_size = t.cm_thread_pool;
    d.providers.push_back(std::move(p));
  }
  d.broker_pool_size = t.broker_thread_pool;
  d.discovery_pool_size = t.discovery_thread_pool;
  d.pep_pool_size = t.broker_thread_pool;
  d.fanout_timeout_ms = t.fanout_timeout_ms;
  if (secured) {
    d.users.push_back({kBenchUser, IdentityKind::user, kBenchSecret});
    d.users.push_back({kProducerUser, IdentityKind::user, kBenchSecret});
    d.user_policies.push_back(
        {"bench-users", "app:*", Action::any, "*", Effect::permit, std::nullopt});
  }
  return d;
}

}  // namespace

Topology::Topology(const TopologySpec& spec) : spec_(spec) {
  switch (spec.kind) {
    case TopologyKind::centralized: {
      ContextManagerConfig cfg;
      cfg.name = "bench:cm";
      cfg.artificial_delay_ms = spec.cm_delay_ms;
      cfg.thread_pool_size = spec.cm_thread_pool;
      single_cm_ = std::make_unique<ContextManagerService>(cfg);
      single_cm_->start();
      query_endpoint_ = single_cm_->endpoint();
      seed_endpoints_ = {single_cm_->endpoint()};
      break;
    }
    case TopologyKind::multi_provider: {
      DomainSpec d = data_domain_spec("bench", spec_, spec_.provider_count,
                                      /*secured=*/false, /*with_federation=*/false);
      domain_ = assemble_domain(d);
      query_endpoint_ = domain_->idb_endpoint;
      for (const auto& cm : domain_->cms) seed_endpoints_.push_back(cm->endpoint());
      break;
    }
    case TopologyKind::federated_unsecured:
    case TopologyKind::federated_secured: {
      const bool secured = spec.kind == TopologyKind::federated_secured;
      FederationSpec fed;
      fed.name = "bench-fed";
      fed.secured = secured;
      fed.domains.push_back(data_domain_spec("A", spec_, 1, secured, true));
      fed.domains.push_back(data_domain_spec("B", spec_, 1, secured, true));
      federation_ = assemble_federation(fed);
      DomainHandle& entry = *federation_->domains.at(1);  // queries enter at B
      DomainHandle& data = *federation_->domains.at(0);   // data lives in A
      query_endpoint_ = entry.idb_endpoint;
      if (secured) query_token_ = entry.issue_user_token(kBenchUser, kBenchSecret);
      seed_endpoints_ = {data.cms.at(0)->endpoint()};
      break;
    }
  }
}

size_t Topology::partition(int64_t entity_index, int64_t total_entities) const {
  if (seed_endpoints_.size() <= 1) return 0;
  const int64_t per = total_entities / static_cast<int64_t>(seed_endpoints_.size());
  if (per <= 0) return 0;
  return std::min(seed_endpoints_.size() - 1,
                  static_cast<size_t>(entity_index / per));
}

bool Topology::settle(int timeout_ms) {
  if (federation_) return federation_->settle(timeout_ms);
  if (domain_) {
    const auto deadline =
        std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);
    while (std::chrono::steady_clock::now() < deadline) {
      bool idle = domain_->idd->dispatcher().wait_idle(100);
      for (const auto& cm : domain_->cms) idle = cm->dispatcher().wait_idle(100) && idle;
      if (idle) return true;
    }
    return false;
  }
  return true;
}

void seed_topology(Topology& topology, int64_t total_entities, int attributes_per_entity,
                   uint64_t seed) {
  constexpr int64_t kBatch = 50;
  for (int64_t start = 0; start < total_entities;) {
    const size_t provider = topology.partition(start, total_entities);
    json elements = json::array();
    int64_t i = start;
    for (; i < total_entities && i - start < kBatch &&
           topology.partition(i, total_entities) == provider;
         ++i) {
      ContextElement e;
      e.entity = {entity_name(i), kEntityType, false};
      e.attributes.reserve(attributes_per_entity);
      for (int j = 0; j < attributes_per_entity; ++j) {
        Attribute a;
        a.name = attribute_name(j);
        a.value_type = ValueType::number;
        a.value = seeded_value(seed, i, j);
        a.timestamp = 1;
        e.attributes.push_back(std::move(a));
      }
      elements.push_back(wire::to_json(e));
    }
    const HttpResult res =
        post_json(topology.seed_endpoint(provider), wire::kUpdateContext,
                  {{"elements", std::move(elements)}}, "", 60000);
    if (!res.ok()) {
      throw std::runtime_error("seed publish failed at entity " + std::to_string(start) +
                               ": " + res.error + res.raw_body);
    }
    start = i;
  }
  if (!topology.settle()) {
    throw std::runtime_error("topology failed to settle after seeding");
  }
}

RunMetrics run_workload(Topology& topology, const WorkloadSpec& spec) {
  if (spec.attributes_per_query > spec.attributes_per_entity) {
    throw std::invalid_argument("attributesPerQuery must be <= attributesPerEntity");
  }
  const int64_t max_per_query =
      spec.max_entities_per_query > 0
          ? std::min(spec.max_entities_per_query, spec.total_entities)
          : std::min<int64_t>(100, spec.total_entities);

  struct ClientResult {
    std::vector<double> latencies_ms;
    int64_t requests = 0;
    int64_t errors = 0;
    int64_t entities_returned = 0;
  };
  std::vector<ClientResult> results(spec.clients);

  const auto t0 = std::chrono::steady_clock::now();
  const auto warmup_end = t0 + std::chrono::duration<double>(spec.warmup_seconds);
  const auto run_end =
      warmup_end + std::chrono::duration<double>(spec.duration_seconds);

  auto client_loop = [&](int index) {
    std::mt19937_64 rng(spec.rng_seed * 7919 + static_cast<uint64_t>(index));
    ClientResult& local = results[index];
    while (std::chrono::steady_clock::now() < run_end) {
      // pick a random number of random distinct entities
      const int64_t n = std::uniform_int_distribution<int64_t>(1, max_per_query)(rng);
      std::vector<int64_t> picks;
      picks.reserve(n);
      std::unordered_set<int64_t> seen;
      while (static_cast<int64_t>(picks.size()) < n) {
        const int64_t e =
            std::uniform_int_distribution<int64_t>(0, spec.total_entities - 1)(rng);
        if (seen.insert(e).second) picks.push_back(e);
      }
      // and a random subset of attribute names
      std::vector<int> attr_ids(spec.attributes_per_entity);
      std::iota(attr_ids.begin(), attr_ids.end(), 0);
      std::shuffle(attr_ids.begin(), attr_ids.end(), rng);
      attr_ids.resize(spec.attributes_per_query);

      json entities = json::array();
      for (const int64_t e : picks) {
        entities.push_back({{"id", entity_name(e)}, {"type", kEntityType}});
      }
      json attr_names = json::array();
      for (const int a : attr_ids) attr_names.push_back(attribute_name(a));
      const json body{{"entities", std::move(entities)},
                      {"attributeNames", std::move(attr_names)},
                      {"aggregate", "set"}};

      const bool check_values =
          std::uniform_real_distribution<double>(0.0, 1.0)(rng) < spec.sample_check_rate;

      const auto q0 = std::chrono::steady_clock::now();
      const HttpResult res = post_json(topology.query_endpoint(), wire::kQueryContext,
                                       body, topology.query_token(), 30000);
      const auto q1 = std::chrono::steady_clock::now();
      if (q1 < warmup_end) continue;  // warm-up discarded

      const double ms = std::chrono::duration<double, std::milli>(q1 - q0).count();
      local.requests += 1;
      local.latencies_ms.push_back(ms);

      bool ok = res.ok() && res.body.contains("elements");
      int64_t returned = 0;
      if (ok) {
        const json& elems = res.body["elements"];
        returned = static_cast<int64_t>(elems.size());
        if (returned != n) ok = false;
        if (ok) {
          for (const auto& e : elems) {
            if (static_cast<int>(e.value("attributes", json::array()).size()) !=
                spec.attributes_per_query) {
              ok = false;
              break;
            }
          }
        }
        if (ok && check_values) {
          for (const auto& e : elems) {
            const std::string id = e["entity"]["id"].get<std::string>();
            const int64_t ei = std::stoll(id.substr(2));
            for (const auto& a : e["attributes"]) {
              const std::string name = a["name"].get<std::string>();
              const int ai = std::stoi(name.substr(2));
              if (a["value"].get<double>() != seeded_value(spec.rng_seed, ei, ai)) {
                ok = false;
                break;
              }
            }
            if (!ok) break;
          }
        }
      }
      if (ok) {
        local.entities_returned += returned;
      } else {
        local.errors += 1;
      }
    }
  };

  std::vector<std::thread> threads;
  threads.reserve(spec.clients);
  for (int i = 0; i < spec.clients; ++i) threads.emplace_back(client_loop, i);
  for (auto& t : threads) t.join();
  const auto t1 = std::chrono::steady_clock::now();

  // merge-at-end: no shared counters on the measurement path
  std::vector<double> latencies;
  int64_t requests = 0, errors = 0, entities_returned = 0;
  for (const auto& r : results) {
    latencies.insert(latencies.end(), r.latencies_ms.begin(), r.latencies_ms.end());
    requests += r.requests;
    errors += r.errors;
    entities_returned += r.entities_returned;
  }
  const double measured_seconds = std::min(
      std::chrono::duration<double>(t1 - warmup_end).count(), spec.duration_seconds);
  return compute_metrics(
      spec.label.empty() ? to_string(topology.spec().kind) : spec.label,
      std::move(latencies), requests, errors, entities_returned,
      std::max(measured_seconds, 1e-9), spec.rng_seed);
}

// ---------------------------------------------------------------------------

json compare_runs(const RunMetrics& a, const RunMetrics& b) {
  if (a.excluded || b.excluded) {
    throw ExcludedRun("cannot compare excluded runs (non-zero error rate)");
  }
  const double latency_ratio = b.mean_ms > 0 ? a.mean_ms / b.mean_ms : 0.0;
  const double throughput_ratio =
      b.normalized_throughput > 0 ? a.normalized_throughput / b.normalized_throughput : 0.0;
  return {{"a", to_json(a)},
          {"b", to_json(b)},
          {"latencyRatio", latency_ratio},
          {"throughputRatio", throughput_ratio},
          {"verdicts",
           {{"aFasterThanB", a.mean_ms < b.mean_ms},
            {"aHigherThroughputThanB",
             a.normalized_throughput > b.normalized_throughput}}}};
}

SweepSpec sweep_spec_from_json(const json& j) {
  SweepSpec spec;
  if (j.contains("entityCounts")) {
    spec.entity_counts = j["entityCounts"].get<std::vector<int64_t>>();
  }
  if (j.contains("topologies")) {
    spec.topologies.clear();
    for (const auto& t : j["topologies"]) {
      spec.topologies.push_back(topology_kind_from(t.get<std::string>()));
    }
  }
  if (j.contains("clientCounts")) {
    spec.client_counts = j["clientCounts"].get<std::vector<int>>();
  }
  if (j.contains("workload")) spec.workload = workload_spec_from_json(j["workload"]);
  if (j.contains("topology")) spec.topology = topology_spec_from_json(j["topology"]);
  return spec;
}

std::vector<RunMetrics> run_sweep(const SweepSpec& spec) {
  std::vector<RunMetrics> out;
  for (const TopologyKind kind : spec.topologies) {
    for (const int64_t entities : spec.entity_counts) {
      TopologySpec tspec = spec.topology;
      tspec.kind = kind;
      Topology topology(tspec);
      seed_topology(topology, entities, spec.workload.attributes_per_entity,
                    spec.workload.rng_seed);
      for (const int clients : spec.client_counts) {
        WorkloadSpec w = spec.workload;
        w.total_entities = entities;
        w.clients = clients;
        w.label = to_string(kind) + "/e" + std::to_string(entities) + "/c" +
                  std::to_string(clients);
        out.push_back(run_workload(topology, w));
      }
    }
  }
  return out;
}

void write_jsonl(const std::string& path, const std::vector<RunMetrics>& runs) {
  std::ofstream out(path);
  for (const auto& r : runs) out << to_json(r).dump() << "\n";
}

void write_csv_summary(const std::string& path, const std::vector<RunMetrics>& runs) {
  std::ofstream out(path);
  out << "label,requestCount,errorCount,p50Ms,p90Ms,p99Ms,meanMs,"
         "rawThroughput,normalizedThroughput,entitiesReturnedTotal,elapsedSeconds,"
         "excluded\n";
  for (const auto& r : runs) {
    out << r.label << ',' << r.request_count << ',' << r.error_count << ',' << r.p50_ms
        << ',' << r.p90_ms << ',' << r.p99_ms << ',' << r.mean_ms << ','
        << r.raw_throughput << ',' << r.normalized_throughput << ','
        << r.entities_returned_total << ',' << r.elapsed_seconds << ','
        << (r.excluded ? 1 : 0) << "\n";
  }
}

void write_svg_chart(const std::string& path, const std::string& title,
                     const std::string& x_label, const std::string& y_label,
                     const std::vector<ChartSeries>& series, bool log_x) {
  constexpr double W = 720, H = 480, ML = 70, MR = 160, MT = 50, MB = 60;
  double x_min = 1e300, x_max = -1e300, y_min = 0, y_max = -1e300;
  for (const auto& s : series) {
    for (const auto& [x, y] : s.points) {
      const double xv = log_x ? std::log10(std::max(x, 1e-12)) : x;
      x_min = std::min(x_min, xv);
      x_max = std::max(x_max, xv);
      y_max = std::max(y_max, y);
    }
  }
  if (x_max <= x_min) x_max = x_min + 1;
  if (y_max <= y_min) y_max = y_min + 1;
  y_max *= 1.05;

  auto sx = [&](double x) {
    const double xv = log_x ? std::log10(std::max(x, 1e-12)) : x;
    return ML + (xv - x_min) / (x_max - x_min) * (W - ML - MR);
  };
  auto sy = [&](double y) { return H - MB - (y - y_min) / (y_max - y_min) * (H - MT - MB); };

  static const char* kColors[] = {"#1f77b4", "#d62728", "#2ca02c",
                                  "#ff7f0e", "#9467bd", "#8c564b"};
  std::ostringstream svg;
  svg << "<svg xmlns='http://www.w3.org/2000/svg' width='" << W << "' height='" << H
      << "' font-family='sans-serif' font-size='12'>\n";
  svg << "<rect width='100%' height='100%' fill='white'/>\n";
  svg << "<text x='" << W / 2 << "' y='24' text-anchor='middle' font-size='16'>" << title
      << "</text>\n";
  svg << "<line x1='" << ML << "' y1='" << H - MB << "' x2='" << W - MR << "' y2='"
      << H - MB << "' stroke='black'/>\n";
  svg << "<line x1='" << ML << "' y1='" << MT << "' x2='" << ML << "' y2='" << H - MB
      << "' stroke='black'/>\n";
  svg << "<text x='" << (ML + W - MR) / 2 << "' y='" << H - 16
      << "' text-anchor='middle'>" << x_label << "</text>\n";
  svg << "<text x='18' y='" << (MT + H - MB) / 2 << "' text-anchor='middle' transform='rotate(-90 18 "
      << (MT + H - MB) / 2 << ")'>" << y_label << "</text>\n";
  for (int i = 0; i <= 4; ++i) {
    const double y = y_min + (y_max - y_min) * i / 4.0;
    svg << "<line x1='" << ML - 4 << "' y1='" << sy(y) << "' x2='" << ML << "' y2='"
        << sy(y) << "' stroke='black'/>\n";
    svg << "<text x='" << ML - 8 << "' y='" << sy(y) + 4 << "' text-anchor='end'>"
        << static_cast<int64_t>(std::llround(y)) << "</text>\n";
  }
  size_t color = 0;
  double legend_y = MT + 10;
  for (const auto& s : series) {
    const char* c = kColors[color++ % 6];
    std::ostringstream pts;
    for (const auto& [x, y] : s.points) pts << sx(x) << ',' << sy(y) << ' ';
    svg << "<polyline points='" << pts.str() << "' fill='none' stroke='" << c
        << "' stroke-width='2'/>\n";
    for (const auto& [x, y] : s.points) {
      svg << "<circle cx='" << sx(x) << "' cy='" << sy(y) << "' r='3' fill='" << c
          << "'/>\n";
      svg << "<text x='" << sx(x) << "' y='" << H - MB + 16 << "' text-anchor='middle'>"
          << static_cast<int64_t>(std::llround(x)) << "</text>\n";
    }
    svg << "<rect x='" << W - MR + 10 << "' y='" << legend_y - 9
        << "' width='12' height='12' fill='" << c << "'/>\n";
    svg << "<text x='" << W - MR + 28 << "' y='" << legend_y + 2 << "'>" << s.name
        << "</text>\n";
    legend_y += 20;
  }
  svg << "</svg>\n";

  std::ofstream out(path);
  out << svg.str();
}

void plot_sweep(const std::vector<RunMetrics>& runs, const std::string& out_dir) {
  std::filesystem::create_directories(out_dir);
  // series per topology/clients pair; x = entity count parsed from the label
  auto split_label = [](const std::string& label) {
    // "<topology>/e<entities>/c<clients>"
    std::string topology, clients;
    double entities = 0;
    std::stringstream ss(label);
    std::string part;
    while (std::getline(ss, part, '/')) {
      if (part.empty()) continue;
      if (part[0] == 'e' && part.size() > 1 && std::isdigit(part[1])) {
        entities = std::stod(part.substr(1));
      } else if (part[0] == 'c' && part.size() > 1 && std::isdigit(part[1])) {
        clients = part;
      } else {
        topology = part;
      }
    }
    return std::make_tuple(topology, entities, clients);
  };

  std::map<std::string, ChartSeries> latency, throughput;
  for (const auto& r : runs) {
    if (r.excluded) continue;  // non-zero error points are omitted
    auto [topology, entities, clients] = split_label(r.label);
    if (entities <= 0) continue;
    const std::string key = topology + (clients.empty() ? "" : "/" + clients);
    latency[key].name = key;
    latency[key].points.emplace_back(entities, r.mean_ms);
    throughput[key].name = key;
    throughput[key].points.emplace_back(entities, r.normalized_throughput);
  }
  auto finish = [](std::map<std::string, ChartSeries>& m) {
    std::vector<ChartSeries> out;
    for (auto& [k, s] : m) {
      std::sort(s.points.begin(), s.points.end());
      out.push_back(std::move(s));
    }
    return out;
  };
  write_svg_chart(out_dir + "/latency.svg", "Query latency", "total entities",
                  "mean latency (ms)", finish(latency), /*log_x=*/true);
  write_svg_chart(out_dir + "/throughput.svg", "Normalized throughput", "total entities",
                  "entities / s", finish(throughput), /*log_x=*/true);
}

}  // namespace liots::bench
