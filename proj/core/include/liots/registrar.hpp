#pragma once

#include <condition_variable>
#include <deque>
#include <map>
#include <mutex>
#include <set>
#include <thread>

#include "liots/http.hpp"
#include "liots/model.hpp"

namespace liots {

// ---------------------------------------------------------------------------
// privacy directives

enum class LocationGranularity { exact, grid, region, suppress };
enum class AttributeExposure { all, listed, none };

enum class KeyField { entity_type, grid_cell, named_region };

struct PrivacyDirective {
  std::vector<std::string> match_types;  // globs over entity type
  std::set<KeyField> key_fields;
  LocationGranularity granularity = LocationGranularity::suppress;
  double grid_cell_size_degrees = 0.0;   // granularity == grid
  std::string region_table_ref;          // granularity == region
  AttributeExposure attribute_exposure = AttributeExposure::none;
  std::vector<std::string> exposed_attribute_names;  // exposure == listed
  bool expose_entity_ids = false;
};

json to_json(const PrivacyDirective& v);
PrivacyDirective privacy_directive_from_json(const json& j);

/// Rejects directives that cannot satisfy the privacy invariants (entity ids
/// may never survive grouping by non-identity key fields; grid cells need a
/// positive size). Returns a reason or nullopt.
std::optional<std::string> validate_directive(const PrivacyDirective& d);

/// Operator-supplied coordinate -> region-name lookup: first bounding box
/// containing the point wins.
struct RegionEntry {
  std::string name;
  double lat_min = 0, lat_max = 0, lon_min = 0, lon_max = 0;
};
using RegionTable = std::vector<RegionEntry>;

json to_json(const RegionTable& v);
RegionTable region_table_from_json(const json& j);
std::optional<std::string> lookup_region(const RegionTable& table, const GeoPoint& p);

// ---------------------------------------------------------------------------
// synthesis

/// Privacy-preserving registration synthesis: pure and deterministic. Each
/// source registration unit (registration x entity) is matched to the first
/// directive covering its type, grouped by the directive's key fields, and
/// each group becomes one coarsened registration whose providing endpoint
/// is the domain's inFedB. Unmatched units yield nothing.
///
/// Returned registrations carry deterministic ids derived from the group
/// key; versions are left at 0 for reconcile() to assign.
std::map<std::string, Registration> synthesize(
    const std::vector<Registration>& source,
    const std::vector<PrivacyDirective>& directives, const RegionTable& region_table,
    const std::string& in_fed_b_endpoint, int64_t ttl_seconds);

struct ReconcileAction {
  Registration registration;  // ttl 0 = tombstone
};

/// Diff old vs new synthesized sets into idempotent register actions:
/// new keys register, changed content re-registers with a version bump,
/// vanished keys re-register as tombstones. `versions` persists version
/// counters across calls.
std::vector<ReconcileAction> reconcile(
    const std::map<std::string, Registration>& old_set,
    const std::map<std::string, Registration>& new_set,
    std::map<std::string, int64_t>& versions);

// ---------------------------------------------------------------------------
// service

struct RegistrarConfig {
  std::string name = "iot-registrar";
  std::string source_discovery_endpoint;  // idD; subscribes for availability
  std::string target_discovery_endpoint;  // fedD; receives synthesized regs
  std::string in_fed_b_endpoint;          // exposed provider address
  std::string outbound_token;
  // providers never synthesized from (the domain's own boundary broker,
  // whose catch-all registration is pure routing)
  std::vector<std::string> ignore_endpoints;
  std::vector<PrivacyDirective> directives;
  RegionTable region_table;
  std::string directive_file;             // optional: hot-reload source
  std::string region_table_file;
  int64_t synthesized_ttl_seconds = 300;
  int refresh_interval_ms = 0;  // 0 = ttl/2
  int thread_pool_size = 8;
};

/// The IoT Registrar: ingests raw provider availability, synthesizes
/// privacy-preserving registrations per directive, and keeps the federation
/// discovery reconciled and refreshed.
class RegistrarService : public HttpServiceBase {
 public:
  explicit RegistrarService(RegistrarConfig config, Clock clock = system_clock());
  ~RegistrarService() override;

  /// Advertise a fronting PEP instead of the listen endpoint as the
  /// availability-subscription callback.
  void set_advertised_endpoint(std::string endpoint);

  /// Subscribe to the source discovery for provider availability.
  void subscribe_to_source();

  /// Feed one raw registration through the synthesis pipeline.
  void ingest(Registration reg);

  /// Re-register every live synthesized registration (ttl maintenance).
  void refresh();

  /// Replace directives (and region table) and re-run synthesis.
  void reload_directives(std::vector<PrivacyDirective> directives,
                         RegionTable region_table);
  /// Re-read directive/region files when configured.
  void reload_from_files();

  std::map<std::string, Registration> synthesized() const;
  int64_t target_ops_count() const { return target_ops_.load(); }

  /// Wait until queued fedD actions drain.
  bool wait_settled(int timeout_ms = 5000);

 protected:
  void configure_routes(httplib::Server& server) override;
  json status_extra() const override;

 private:
  void run_pipeline();  // caller holds pipeline_mutex_
  void enqueue_action(const Registration& reg);
  void action_loop();
  void refresh_loop();

  RegistrarConfig config_;
  Clock clock_;

  mutable std::mutex pipeline_mutex_;
  std::map<std::string, Registration> source_regs_;
  std::map<std::string, Registration> synthesized_;
  std::map<std::string, int64_t> versions_;
  std::vector<PrivacyDirective> directives_;
  RegionTable region_table_;
  std::string source_subscription_id_;
  std::string advertised_endpoint_;

  std::atomic<int64_t> target_ops_{0};

  struct PendingAction {
    Registration reg;
    TimestampMs due_at = 0;
  };
  std::mutex action_mutex_;
  std::condition_variable action_cv_;
  std::condition_variable action_idle_cv_;
  std::condition_variable refresh_cv_;
  std::deque<PendingAction> action_queue_;
  int actions_in_flight_ = 0;
  bool stopping_ = false;
  std::thread action_worker_;
  std::thread refresh_worker_;
};

}  // namespace liots
