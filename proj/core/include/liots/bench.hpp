#pragma once

#include <memory>

#include "liots/federation.hpp"

namespace liots::bench {

// ---------------------------------------------------------------------------
// workload & metrics

enum class TopologyKind {
  centralized,          // one CM queried directly
  federated_unsecured,  // two domains, data in A, queries enter at B's idB
  federated_secured,    // same, with both security layers active
  multi_provider        // k CMs with disjoint entities behind one idB
};

TopologyKind topology_kind_from(const std::string& s);
std::string to_string(TopologyKind k);

struct TopologySpec {
  TopologyKind kind = TopologyKind::centralized;
  int provider_count = 10;       // multi_provider
  int cm_thread_pool = 8;
  int broker_thread_pool = 64;
  int discovery_thread_pool = 32;
  int cm_delay_ms = 0;           // injected per-request service delay
  int fanout_timeout_ms = 10000;
};

TopologySpec topology_spec_from_json(const json& j);

struct WorkloadSpec {
  int64_t total_entities = 1000;
  int attributes_per_entity = 100;
  int attributes_per_query = 20;
  int64_t max_entities_per_query = 0;  // 0 = min(100, totalEntities)
  int clients = 20;
  double duration_seconds = 60.0;
  double warmup_seconds = 10.0;
  uint64_t rng_seed = 42;
  double sample_check_rate = 0.01;  // oracle-checked fraction of responses
  std::string label;
};

WorkloadSpec workload_spec_from_json(const json& j);

struct RunMetrics {
  std::string label;
  int64_t request_count = 0;
  int64_t error_count = 0;
  double p50_ms = 0, p90_ms = 0, p99_ms = 0, mean_ms = 0;
  double raw_throughput = 0;         // requests / s
  double normalized_throughput = 0;  // entities / s
  int64_t entities_returned_total = 0;
  double elapsed_seconds = 0;
  bool excluded = false;  // any error excludes the point
  uint64_t rng_seed = 0;
};

json to_json(const RunMetrics& m);

/// Metrics arithmetic in one place so tests and the runner share it:
/// normalizedThroughput = entitiesReturnedTotal / elapsedSeconds, exactly.
RunMetrics compute_metrics(const std::string& label, std::vector<double> latencies_ms,
                           int64_t request_count, int64_t error_count,
                           int64_t entities_returned_total, double elapsed_seconds,
                           uint64_t rng_seed);

/// Deterministic seeded value of attribute j of entity i.
double seeded_value(uint64_t seed, int64_t entity_index, int attribute_index);
std::string entity_name(int64_t index);
std::string attribute_name(int index);

// ---------------------------------------------------------------------------
// topology under test

class Topology {
 public:
  explicit Topology(const TopologySpec& spec);

  const TopologySpec& spec() const { return spec_; }
  const std::string& query_endpoint() const { return query_endpoint_; }
  const std::string& query_token() const { return query_token_; }

  /// Raw provider endpoints; entity i seeds into provider partition(i).
  size_t provider_count() const { return seed_endpoints_.size(); }
  const std::string& seed_endpoint(size_t provider) const {
    return seed_endpoints_.at(provider);
  }
  size_t partition(int64_t entity_index, int64_t total_entities) const;

  /// Wait for announcements, synthesis, and replication to drain.
  bool settle(int timeout_ms = 30000);

  DomainHandle* domain() { return domain_.get(); }
  FederationHandle* federation() { return federation_.get(); }
  ContextManagerService* single_cm() { return single_cm_.get(); }

 private:
  TopologySpec spec_;
  std::unique_ptr<ContextManagerService> single_cm_;
  std::unique_ptr<DomainHandle> domain_;
  std::unique_ptr<FederationHandle> federation_;
  std::string query_endpoint_;
  std::string query_token_;
  std::vector<std::string> seed_endpoints_;
};

/// Publish e-0..e-(N-1), each with `attributes_per_entity` numeric values
/// drawn deterministically from `seed`. Multi-provider topologies partition
/// the entities disjointly. Throws on any publish failure.
void seed_topology(Topology& topology, int64_t total_entities, int attributes_per_entity,
                   uint64_t seed = 42);

/// Concurrent query loops against the topology; responses validated against
/// the expected shape and (sampled) the seeded values.
RunMetrics run_workload(Topology& topology, const WorkloadSpec& spec);

// ---------------------------------------------------------------------------
// comparison, sweep, output

struct ExcludedRun : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Overhead ratios between two runs. Throws ExcludedRun when either run is
/// excluded (non-zero error count).
json compare_runs(const RunMetrics& a, const RunMetrics& b);

struct SweepSpec {
  std::vector<int64_t> entity_counts{100, 1000, 10000};
  std::vector<TopologyKind> topologies{TopologyKind::centralized,
                                       TopologyKind::federated_unsecured,
                                       TopologyKind::federated_secured};
  std::vector<int> client_counts{20, 100};
  WorkloadSpec workload;     // duration/warmup/attr settings shared by all points
  TopologySpec topology;     // pool/delay settings shared by all points
};

SweepSpec sweep_spec_from_json(const json& j);

/// Run the full matrix; one RunMetrics per point, labelled
/// "<topology>/e<entities>/c<clients>".
std::vector<RunMetrics> run_sweep(const SweepSpec& spec);

void write_jsonl(const std::string& path, const std::vector<RunMetrics>& runs);
void write_csv_summary(const std::string& path, const std::vector<RunMetrics>& runs);

/// Minimal SVG line chart; one polyline per series.
struct ChartSeries {
  std::string name;
  std::vector<std::pair<double, double>> points;
};
void write_svg_chart(const std::string& path, const std::string& title,
                     const std::string& x_label, const std::string& y_label,
                     const std::vector<ChartSeries>& series, bool log_x = false);

/// Chart files (latency + throughput) derived from sweep output.
void plot_sweep(const std::vector<RunMetrics>& runs, const std::string& out_dir);

}  // namespace liots::bench
