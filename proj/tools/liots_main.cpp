// liots: assemble and operate LIoTS domains and federations, serve the
// individual services, and drive the benchmark harness.

#include <atomic>
#include <csignal>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"

#include "liots/bench.hpp"
#include "liots/federation.hpp"
#include "liots/wire.hpp"

using namespace liots;

namespace {

std::atomic<bool> g_stop{false};

void install_signal_handlers() {
  std::signal(SIGINT, [](int) { g_stop.store(true); });
  std::signal(SIGTERM, [](int) { g_stop.store(true); });
}

void run_until_signal() {
  while (!g_stop.load()) {
    std::this_thread::sleep_for(std::chrono::milliseconds(200));
  }
  std::cout << "shutting down\n";
}

json load_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return json::parse(in);
}

struct Listen {
  std::string host = "127.0.0.1";
  int port = 0;
};

Listen listen_from(const json& j) {
  Listen l;
  if (j.contains("listen")) {
    l.host = j["listen"].value("host", "127.0.0.1");
    l.port = j["listen"].value("port", 0);
  }
  return l;
}

SecurityScopeRef scope_from(const json& j) {
  return {j.value("idm", ""), j.value("pdp", "")};
}

int serve_service(const std::string& kind, const json& cfg) {
  install_signal_handlers();
  const Listen listen = listen_from(cfg);
  std::unique_ptr<HttpServiceBase> service;

  if (kind == "cm") {
    ContextManagerConfig c;
    c.name = cfg.value("name", "cm");
    c.announce_target = cfg.value("announceTarget", "");
    c.announce_token = cfg.value("announceToken", "");
    c.announce_per_entity = cfg.value("perEntity", true);
    c.advertised_endpoint = cfg.value("advertisedEndpoint", "");
    c.notify_token = cfg.value("notifyToken", "");
    c.snapshot_path = cfg.value("snapshotPath", "");
    c.artificial_delay_ms = cfg.value("artificialDelayMs", 0);
    c.thread_pool_size = cfg.value("threadPoolSize", 8);
    auto cm = std::make_unique<ContextManagerService>(c);
    cm->start(listen.host, listen.port);
    cm->announce();
    service = std::move(cm);
  } else if (kind == "discovery") {
    DiscoveryConfig c;
    c.name = cfg.value("name", "discovery");
    c.origin_domain = cfg.value("originDomain", "");
    c.notify_token = cfg.value("notifyToken", "");
    c.thread_pool_size = cfg.value("threadPoolSize", 8);
    if (cfg.contains("replicationPeers")) {
      c.replication_peers = cfg["replicationPeers"].get<std::vector<std::string>>();
    }
    auto d = std::make_unique<DiscoveryService>(c);
    d->start(listen.host, listen.port);
    service = std::move(d);
  } else if (kind == "broker") {
    BrokerConfig c;
    c.name = cfg.value("name", "broker");
    c.role = broker_role_from(cfg.value("role", "intra"));
    c.discovery_endpoint = cfg.at("discoveryEndpoint").get<std::string>();
    c.self_endpoint = cfg.value("selfEndpoint", "");
    c.fanout_timeout_ms = cfg.value("fanoutTimeout", 5000);
    c.fanout_concurrency = cfg.value("fanoutConcurrency", 32);
    c.provider_token = cfg.value("outboundToken", "");
    c.discovery_token = cfg.value("discoveryToken", "");
    c.notify_token = cfg.value("notifyToken", "");
    c.thread_pool_size = cfg.value("threadPoolSize", 16);
    if (cfg.contains("excludeEndpoints")) {
      c.exclude_endpoints = cfg["excludeEndpoints"].get<std::vector<std::string>>();
    }
    auto b = std::make_unique<BrokerService>(c);
    b->start(listen.host, listen.port);
    service = std::move(b);
  } else if (kind == "registrar") {
    RegistrarConfig c;
    c.name = cfg.value("name", "iot-registrar");
    c.source_discovery_endpoint = cfg.value("sourceDiscovery", "");
    c.target_discovery_endpoint = cfg.value("targetDiscovery", "");
    c.in_fed_b_endpoint = cfg.at("inFedBEndpoint").get<std::string>();
    c.directive_file = cfg.value("directiveFile", "");
    c.region_table_file = cfg.value("regionTableFile", "");
    c.outbound_token = cfg.value("outboundToken", "");
    c.synthesized_ttl_seconds = cfg.value("synthesizedTtlSeconds", int64_t{300});
    if (cfg.contains("ignoreEndpoints")) {
      c.ignore_endpoints = cfg["ignoreEndpoints"].get<std::vector<std::string>>();
    }
    auto r = std::make_unique<RegistrarService>(c);
    r->start(listen.host, listen.port);
    r->subscribe_to_source();
    service = std::move(r);
  } else if (kind == "idm") {
    IdmConfig c;
    c.name = cfg.value("name", "idm");
    c.origin_domain = cfg.value("originDomain", "");
    c.token_ttl_seconds = cfg.value("tokenTtlSeconds", int64_t{3600});
    if (cfg.contains("replicationPeers")) {
      c.replication_peers = cfg["replicationPeers"].get<std::vector<std::string>>();
    }
    auto idm = std::make_unique<IdmService>(c);
    if (cfg.contains("identityFile")) {
      for (const auto& i : load_json(cfg["identityFile"].get<std::string>())) {
        idm->idm().add_identity(identity_from_json(i));
      }
    }
    idm->start(listen.host, listen.port);
    service = std::move(idm);
  } else if (kind == "pdp") {
    PdpConfig c;
    c.name = cfg.value("name", "pdp");
    c.origin_domain = cfg.value("originDomain", "");
    if (cfg.contains("replicationPeers")) {
      c.replication_peers = cfg["replicationPeers"].get<std::vector<std::string>>();
    }
    auto pdp = std::make_unique<PdpService>(c);
    if (cfg.contains("policyFile")) {
      std::vector<Policy> policies;
      for (const auto& p : load_json(cfg["policyFile"].get<std::string>())) {
        policies.push_back(policy_from_json(p));
      }
      pdp->engine().set_policies(std::move(policies), now_ms());
    }
    pdp->start(listen.host, listen.port);
    service = std::move(pdp);
  } else if (kind == "pep") {
    PepConfig c;
    c.name = cfg.value("name", "pep");
    c.upstream_endpoint = cfg.at("upstreamEndpoint").get<std::string>();
    c.default_scope = {cfg.at("idmEndpoint").get<std::string>(),
                       cfg.at("pdpEndpoint").get<std::string>()};
    if (cfg.contains("pathScopes")) {
      for (const auto& [path, scope] : cfg["pathScopes"].items()) {
        c.path_scopes[path] = scope_from(scope);
      }
    }
    c.thread_pool_size = cfg.value("threadPoolSize", 8);
    auto pep = std::make_unique<PepService>(c);
    pep->start(listen.host, listen.port);
    service = std::move(pep);
  } else {
    std::cerr << "unknown service kind: " << kind << "\n";
    return 2;
  }

  std::cout << kind << " listening on " << service->endpoint() << std::endl;
  run_until_signal();
  return 0;
}

void print_run(const bench::RunMetrics& m) {
  std::cout << "  " << m.label << ": " << m.request_count << " requests, "
            << m.error_count << " errors, mean " << m.mean_ms << " ms, p99 " << m.p99_ms
            << " ms, " << m.raw_throughput << " req/s, " << m.normalized_throughput
            << " entities/s" << (m.excluded ? " [excluded]" : "") << "\n";
}

std::vector<bench::RunMetrics> load_jsonl_runs(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::vector<bench::RunMetrics> out;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const json j = json::parse(line);
    bench::RunMetrics m;
    m.label = j.value("label", "");
    m.request_count = j.value("requestCount", int64_t{0});
    m.error_count = j.value("errorCount", int64_t{0});
    if (j.contains("latency")) {
      m.p50_ms = j["latency"].value("p50", 0.0);
      m.p90_ms = j["latency"].value("p90", 0.0);
      m.p99_ms = j["latency"].value("p99", 0.0);
      m.mean_ms = j["latency"].value("mean", 0.0);
    }
    m.raw_throughput = j.value("rawThroughput", 0.0);
    m.normalized_throughput = j.value("normalizedThroughput", 0.0);
    m.entities_returned_total = j.value("entitiesReturnedTotal", int64_t{0});
    m.elapsed_seconds = j.value("elapsedSeconds", 0.0);
    m.excluded = j.value("excluded", false);
    m.rng_seed = j.value("rngSeed", uint64_t{0});
    out.push_back(std::move(m));
  }
  return out;
}

bench::RunMetrics pick_run(const std::vector<bench::RunMetrics>& runs,
                           const std::string& label) {
  if (label.empty()) {
    if (runs.empty()) throw std::runtime_error("no runs in file");
    return runs.front();
  }
  for (const auto& r : runs) {
    if (r.label == label) return r;
  }
  throw std::runtime_error("no run labelled '" + label + "'");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"LIoTS: federated IoT context exchange fabric"};
  app.require_subcommand(1);

  // ---- domain ----
  auto* domain_cmd = app.add_subcommand("domain", "operate a single domain");
  std::string domain_spec_path;
  auto* domain_up = domain_cmd->add_subcommand("up", "assemble and run a domain");
  domain_up->add_option("spec", domain_spec_path, "domain spec JSON")->required();
  auto* domain_validate =
      domain_cmd->add_subcommand("validate", "check a domain spec against the "
                                             "infrastructure settings");
  domain_validate->add_option("spec", domain_spec_path, "domain spec JSON")->required();

  // ---- federation ----
  auto* fed_cmd = app.add_subcommand("federation", "operate a federation");
  std::string fed_spec_path;
  auto* fed_up = fed_cmd->add_subcommand("up", "assemble and run a federation");
  fed_up->add_option("spec", fed_spec_path, "federation spec JSON")->required();

  // ---- status ----
  auto* status_cmd = app.add_subcommand("status", "query running services");
  std::vector<std::string> status_endpoints;
  status_cmd->add_option("endpoints", status_endpoints, "service endpoints")->required();

  // ---- serve ----
  auto* serve_cmd = app.add_subcommand("serve", "run one service from a config file");
  std::string serve_kind, serve_config_path;
  serve_cmd
      ->add_option("kind", serve_kind,
                   "one of: cm discovery broker registrar idm pdp pep")
      ->required();
  serve_cmd->add_option("--config", serve_config_path, "service config JSON")->required();

  // ---- bench ----
  auto* bench_cmd = app.add_subcommand("bench", "benchmark harness");
  std::string bench_spec_path, bench_out = ".", bench_in;
  std::string compare_a_label, compare_b_label;
  auto* bench_seed = bench_cmd->add_subcommand(
      "seed", "assemble a topology, seed it, and keep it running");
  bench_seed->add_option("--spec", bench_spec_path, "bench spec JSON")->required();
  auto* bench_run =
      bench_cmd->add_subcommand("run", "seed a topology and run one workload");
  bench_run->add_option("--spec", bench_spec_path, "bench spec JSON")->required();
  bench_run->add_option("--out", bench_out, "output directory");
  auto* bench_sweep = bench_cmd->add_subcommand("sweep", "run the evaluation matrix");
  bench_sweep->add_option("--spec", bench_spec_path, "sweep spec JSON")->required();
  bench_sweep->add_option("--out", bench_out, "output directory");
  auto* bench_compare = bench_cmd->add_subcommand("compare", "compare two recorded runs");
  bench_compare->add_option("--spec", bench_spec_path,
                            "JSON: {aFile, bFile, aLabel?, bLabel?}")
      ->required();
  bench_compare->add_option("--out", bench_out, "output directory");
  auto* bench_plot = bench_cmd->add_subcommand("plot", "render SVG charts from runs");
  bench_plot->add_option("--in", bench_in, "runs.jsonl produced by run/sweep")->required();
  bench_plot->add_option("--out", bench_out, "output directory");

  CLI11_PARSE(app, argc, argv);

  try {
    if (domain_validate->parsed()) {
      const DomainSpec spec = domain_spec_from_json(load_json(domain_spec_path));
      const auto violations = validate_domain_spec(spec);
      if (violations.empty()) {
        std::cout << "ok: spec satisfies the infrastructure settings\n";
        return 0;
      }
      for (const auto& v : violations) std::cout << "violation: " << v << "\n";
      return 1;
    }
    if (domain_up->parsed()) {
      install_signal_handlers();
      auto handle = assemble_domain(domain_spec_from_json(load_json(domain_spec_path)));
      std::cout << handle->describe().dump(2) << std::endl;
      run_until_signal();
      return 0;
    }
    if (fed_up->parsed()) {
      install_signal_handlers();
      auto handle = assemble_federation(federation_spec_from_json(load_json(fed_spec_path)));
      handle->settle(30000);
      std::cout << handle->describe().dump(2) << std::endl;
      run_until_signal();
      return 0;
    }
    if (status_cmd->parsed()) {
      int failures = 0;
      for (const auto& ep : status_endpoints) {
        const HttpResult r = get_status(ep);
        if (r.ok()) {
          std::cout << ep << " " << r.raw_body << "\n";
        } else {
          std::cout << ep << " unreachable: " << r.error << "\n";
          ++failures;
        }
      }
      return failures == 0 ? 0 : 1;
    }
    if (serve_cmd->parsed()) {
      return serve_service(serve_kind, load_json(serve_config_path));
    }

    if (bench_seed->parsed() || bench_run->parsed()) {
      const json spec = load_json(bench_spec_path);
      bench::TopologySpec tspec =
          bench::topology_spec_from_json(spec.value("topology", json::object()));
      bench::WorkloadSpec wspec =
          bench::workload_spec_from_json(spec.value("workload", json::object()));

      bench::Topology topology(tspec);
      std::cout << "seeding " << wspec.total_entities << " entities x "
                << wspec.attributes_per_entity << " attributes into "
                << bench::to_string(tspec.kind) << "\n";
      bench::seed_topology(topology, wspec.total_entities, wspec.attributes_per_entity,
                           wspec.rng_seed);
      std::cout << "query endpoint: " << topology.query_endpoint() << std::endl;

      if (bench_seed->parsed()) {
        install_signal_handlers();
        std::cout << "topology is up; ctrl-c to stop\n";
        run_until_signal();
        return 0;
      }
      const bench::RunMetrics m = bench::run_workload(topology, wspec);
      print_run(m);
      std::filesystem::create_directories(bench_out);
      bench::write_jsonl(bench_out + "/runs.jsonl", {m});
      std::cout << "wrote " << bench_out << "/runs.jsonl\n";
      return 0;
    }
    if (bench_sweep->parsed()) {
      const bench::SweepSpec spec = bench::sweep_spec_from_json(load_json(bench_spec_path));
      const auto runs = bench::run_sweep(spec);
      for (const auto& m : runs) print_run(m);
      std::filesystem::create_directories(bench_out);
      bench::write_jsonl(bench_out + "/runs.jsonl", runs);
      bench::write_csv_summary(bench_out + "/summary.csv", runs);
      bench::plot_sweep(runs, bench_out);
      std::cout << "wrote " << bench_out << "/{runs.jsonl,summary.csv,*.svg}\n";
      return 0;
    }
    if (bench_compare->parsed()) {
      const json spec = load_json(bench_spec_path);
      const auto a =
          pick_run(load_jsonl_runs(spec.at("aFile").get<std::string>()),
                   spec.value("aLabel", ""));
      const auto b =
          pick_run(load_jsonl_runs(spec.at("bFile").get<std::string>()),
                   spec.value("bLabel", ""));
      const json report = bench::compare_runs(a, b);
      std::filesystem::create_directories(bench_out);
      std::ofstream out(bench_out + "/compare.json");
      out << report.dump(2) << "\n";
      std::cout << report.dump(2) << "\n";
      return 0;
    }
    if (bench_plot->parsed()) {
      const auto runs = load_jsonl_runs(bench_in);
      bench::plot_sweep(runs, bench_out);
      std::cout << "wrote " << bench_out << "/{latency.svg,throughput.svg}\n";
      return 0;
    }
  } catch (const SpecViolation& e) {
    std::cerr << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
