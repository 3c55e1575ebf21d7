#pragma once

#include <memory>

#include "liots/broker.hpp"
#include "liots/context_manager.hpp"
#include "liots/discovery.hpp"
#include "liots/registrar.hpp"
#include "liots/security.hpp"

namespace liots {

// ---------------------------------------------------------------------------
// specs

struct ProviderSpec {
  std::string name = "cm";
  int artificial_delay_ms = 0;
  int thread_pool_size = 8;
  bool announce_per_entity = true;
  std::string snapshot_path;
};

/// One domain: providers behind an intra-domain brokering layer plus the
/// federation boundary (IoTR, inFedB/outFedB, fedD replica). The wiring
/// fields default to the prescribed infrastructure settings; validation
/// rejects any deviation, naming the violated constraint.
struct DomainSpec {
  std::string domain_id;
  bool secured = false;
  bool with_federation = true;  // false: intra-domain brokering only
  std::vector<ProviderSpec> providers;

  // wiring (defaults are the only valid values; present so a bad spec can
  // be rejected with a named violation)
  std::string idb_discovery = "idD";
  std::string outfedb_discovery = "fedD";
  std::string infedb_discovery = "idD";
  bool outfedb_catch_all_to_idd = true;
  std::string iotr_subscribe_to = "idD";
  // security-system rows: scope per direction for the boundary brokers
  std::string outfedb_query_scope = "intra";
  std::string outfedb_notify_scope = "fed";
  std::string infedb_query_scope = "fed";
  std::string infedb_notify_scope = "intra";

  std::vector<PrivacyDirective> directives;  // empty: expose by type, all attrs
  RegionTable region_table;
  int64_t synthesized_ttl_seconds = 300;

  std::vector<Identity> users;
  std::vector<Policy> user_policies;

  int broker_pool_size = 16;
  int discovery_pool_size = 8;
  int pep_pool_size = 8;
  int fanout_timeout_ms = 5000;
};

/// Recursive federation: leaf domains plus child federations, each child
/// acting as one domain-like provider of this level (super-domain stacking).
struct FederationSpec {
  std::string name = "federation";
  bool secured = false;
  std::vector<DomainSpec> domains;
  std::vector<FederationSpec> children;
  std::vector<Policy> federation_policies;
  // synthesis directives for child boundaries at this level
  std::vector<PrivacyDirective> boundary_directives;
  int64_t boundary_synthesized_ttl_seconds = 300;
  int boundary_broker_pool_size = 16;
};

DomainSpec domain_spec_from_json(const json& j);
FederationSpec federation_spec_from_json(const json& j);
json to_json(const DomainSpec& spec);

/// Structural check against the infrastructure-settings table; every
/// violated constraint is reported, by row name.
std::vector<std::string> validate_domain_spec(const DomainSpec& spec);

struct SpecViolation : std::runtime_error {
  explicit SpecViolation(std::vector<std::string> violations);
  std::vector<std::string> violations;
};

// ---------------------------------------------------------------------------
// handles

/// A running domain: every service in-process on its own loopback port.
/// `exposed` endpoints go through PEPs when the domain is secured.
class DomainHandle {
 public:
  std::string domain_id;
  DomainSpec spec;

  // context layer
  std::vector<std::unique_ptr<ContextManagerService>> cms;
  std::vector<std::unique_ptr<PepService>> cm_peps;
  // brokering layer
  std::unique_ptr<DiscoveryService> idd;
  std::unique_ptr<PepService> idd_pep;
  std::unique_ptr<BrokerService> idb;
  std::unique_ptr<PepService> idb_pep;
  // federation boundary
  std::unique_ptr<DiscoveryService> fedd;
  std::unique_ptr<PepService> fedd_pep;
  std::unique_ptr<RegistrarService> iotr;
  std::unique_ptr<PepService> iotr_pep;
  std::unique_ptr<BrokerService> in_fed_b;
  std::unique_ptr<PepService> in_fed_b_pep;
  std::unique_ptr<BrokerService> out_fed_b;
  std::unique_ptr<PepService> out_fed_b_pep;
  // security layer
  std::unique_ptr<IdmService> id_idm;
  std::unique_ptr<PdpService> id_pdp;
  std::unique_ptr<IdmService> fed_idm;
  std::unique_ptr<PdpService> fed_pdp;

  // exposed (PEP'd when secured) endpoints
  std::vector<std::string> cm_endpoints;
  std::string idb_endpoint;
  std::string idd_endpoint;
  std::string fedd_endpoint;
  std::string in_fed_b_endpoint;
  std::string out_fed_b_endpoint;
  std::string iotr_endpoint;

  // intra-domain secrets ledger (for boundary-containment checks)
  std::map<std::string, std::string> component_tokens;  // component -> token value
  std::vector<std::string> intra_subject_ids;
  std::vector<std::string> intra_token_values;
  std::string fed_token;  // the domain identity's federation-scope token

  /// Issue an intra-domain token for a user declared in the domain spec file.
  std::string issue_user_token(const std::string& subject_id, const std::string& secret);

  /// Publish elements directly to a provider (test/bench seeding).
  void publish_raw(size_t provider_index, const std::vector<ContextElement>& elements);

  json describe() const;
};

class FederationHandle {
 public:
  std::string name;
  FederationSpec spec;
  std::vector<std::unique_ptr<DomainHandle>> domains;
  std::vector<std::unique_ptr<FederationHandle>> children;

  // this federation's own window into its replica group
  std::unique_ptr<DiscoveryService> home_fedd;
  std::unique_ptr<PepService> home_fedd_pep;
  std::unique_ptr<IdmService> home_fed_idm;
  std::unique_ptr<PdpService> home_fed_pdp;

  // boundary (present when this federation is a member of a parent)
  std::unique_ptr<DiscoveryService> parent_fedd;
  std::unique_ptr<PepService> parent_fedd_pep;
  std::unique_ptr<RegistrarService> boundary_iotr;
  std::unique_ptr<PepService> boundary_iotr_pep;
  std::unique_ptr<BrokerService> boundary_in_fed_b;
  std::unique_ptr<PepService> boundary_in_fed_b_pep;
  std::unique_ptr<BrokerService> boundary_out_fed_b;
  std::unique_ptr<PepService> boundary_out_fed_b_pep;

  /// Block until registrar pipelines, replication queues, and notification
  /// queues drain everywhere. True when fully settled.
  bool settle(int timeout_ms = 10000);

  /// Every intra-domain subject id and token value of every member domain,
  /// recursively (boundary-containment scan list).
  std::vector<std::string> intra_secrets() const;

  json describe() const;
};

/// Start a single domain (with its federation boundary unless
/// `with_federation` is false). Throws SpecViolation on an invalid spec.
std::unique_ptr<DomainHandle> assemble_domain(const DomainSpec& spec);

/// Start a complete federation: member domains, child federations with
/// their boundaries, replica groups peered, security scopes provisioned.
std::unique_ptr<FederationHandle> assemble_federation(const FederationSpec& spec);

}  // namespace liots
