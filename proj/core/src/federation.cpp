#include "liots/federation.hpp"

#include <algorithm>
#include <functional>
#include <sstream>

#include "liots/wire.hpp"

namespace liots {

namespace {

std::string comp_subject(const std::string& member_id, const std::string& name) {
  return "comp:" + member_id + ":" + name;
}

std::string random_secret() { return new_uuid(); }

PrivacyDirective default_directive() {
  PrivacyDirective d;
  d.match_types = {"*"};
  d.key_fields = {KeyField::entity_type};
  d.granularity = LocationGranularity::suppress;
  d.attribute_exposure = AttributeExposure::all;
  return d;
}

Registration catch_all_registration(const std::string& id,
                                    const std::string& provider_endpoint) {
  Registration reg;
  reg.registration_id = id;
  reg.version = 1;
  reg.providing_endpoint = provider_endpoint;
  reg.entities = {EntityRef{"*", "*", true}};
  reg.ttl_seconds = 7 * 86400;
  return reg;
}

std::unique_ptr<PepService> start_pep(const std::string& name,
                                      const std::string& upstream,
                                      const SecurityScopeRef& default_scope,
                                      std::map<std::string, SecurityScopeRef> path_scopes,
                                      int pool) {
  PepConfig cfg;
  cfg.name = name;
  cfg.upstream_endpoint = upstream;
  cfg.default_scope = default_scope;
  cfg.path_scopes = std::move(path_scopes);
  cfg.thread_pool_size = pool;
  auto pep = std::make_unique<PepService>(cfg);
  pep->start();
  return pep;
}

}  // namespace

// ---------------------------------------------------------------------------
// spec json

DomainSpec domain_spec_from_json(const json& j) {
  DomainSpec spec;
  spec.domain_id = j.at("domainId").get<std::string>();
  spec.secured = j.value("secured", false);
  spec.with_federation = j.value("withFederation", true);
  for (const auto& p : j.value("providers", json::array())) {
    ProviderSpec ps;
    ps.name = p.value("name", "cm");
    ps.artificial_delay_ms = p.value("artificialDelayMs", 0);
    ps.thread_pool_size = p.value("threadPoolSize", 8);
    ps.announce_per_entity = p.value("announcePerEntity", true);
    ps.snapshot_path = p.value("snapshotPath", "");
    spec.providers.push_back(std::move(ps));
  }
  if (j.contains("wiring")) {
    const json& w = j["wiring"];
    if (w.contains("idB")) spec.idb_discovery = w["idB"].value("discovery", "idD");
    if (w.contains("outFedB")) {
      spec.outfedb_discovery = w["outFedB"].value("discovery", "fedD");
      spec.outfedb_catch_all_to_idd = w["outFedB"].value("catchAllToIdD", true);
    }
    if (w.contains("inFedB")) spec.infedb_discovery = w["inFedB"].value("discovery", "idD");
    if (w.contains("iotr")) spec.iotr_subscribe_to = w["iotr"].value("subscribeTo", "idD");
  }
  if (j.contains("security")) {
    const json& s = j["security"];
    if (s.contains("outFedB")) {
      spec.outfedb_query_scope = s["outFedB"].value("queryScope", "intra");
      spec.outfedb_notify_scope = s["outFedB"].value("notifyScope", "fed");
    }
    if (s.contains("inFedB")) {
      spec.infedb_query_scope = s["inFedB"].value("queryScope", "fed");
      spec.infedb_notify_scope = s["inFedB"].value("notifyScope", "intra");
    }
  }
  for (const auto& d : j.value("directives", json::array())) {
    spec.directives.push_back(privacy_directive_from_json(d));
  }
  if (j.contains("regionTable")) {
    spec.region_table = region_table_from_json(j["regionTable"]);
  }
  spec.synthesized_ttl_seconds = j.value("synthesizedTtlSeconds", int64_t{300});
  for (const auto& u : j.value("users", json::array())) {
    spec.users.push_back(identity_from_json(u));
  }
  for (const auto& p : j.value("policies", json::array())) {
    spec.user_policies.push_back(policy_from_json(p));
  }
  spec.broker_pool_size = j.value("brokerPoolSize", 16);
  spec.discovery_pool_size = j.value("discoveryPoolSize", 8);
  spec.pep_pool_size = j.value("pepPoolSize", 8);
  spec.fanout_timeout_ms = j.value("fanoutTimeoutMs", 5000);
  return spec;
}

json to_json(const DomainSpec& spec) {
  json providers = json::array();
  for (const auto& p : spec.providers) {
    providers.push_back({{"name", p.name},
                         {"artificialDelayMs", p.artificial_delay_ms},
                         {"threadPoolSize", p.thread_pool_size},
                         {"announcePerEntity", p.announce_per_entity}});
  }
  return {{"domainId", spec.domain_id},
          {"secured", spec.secured},
          {"withFederation", spec.with_federation},
          {"providers", std::move(providers)}};
}

FederationSpec federation_spec_from_json(const json& j) {
  FederationSpec spec;
  spec.name = j.value("name", "federation");
  spec.secured = j.value("secured", false);
  for (const auto& d : j.value("domains", json::array())) {
    spec.domains.push_back(domain_spec_from_json(d));
  }
  for (const auto& c : j.value("children", json::array())) {
    spec.children.push_back(federation_spec_from_json(c));
  }
  for (const auto& p : j.value("federationPolicies", json::array())) {
    spec.federation_policies.push_back(policy_from_json(p));
  }
  for (const auto& d : j.value("boundaryDirectives", json::array())) {
    spec.boundary_directives.push_back(privacy_directive_from_json(d));
  }
  spec.boundary_synthesized_ttl_seconds =
      j.value("boundarySynthesizedTtlSeconds", int64_t{300});
  return spec;
}

std::vector<std::string> validate_domain_spec(const DomainSpec& spec) {
  std::vector<std::string> v;
  if (spec.domain_id.empty()) v.push_back("domainId must be non-empty");
  if (spec.providers.empty()) v.push_back("domain needs at least one provider");
  if (spec.idb_discovery != "idD") {
    v.push_back("Discovery row: idB must use idD (got " + spec.idb_discovery + ")");
  }
  if (!spec.with_federation) return v;
  if (spec.outfedb_discovery != "fedD") {
    v.push_back("Discovery row: outFedB must use fedD (got " + spec.outfedb_discovery + ")");
  }
  if (spec.infedb_discovery != "idD") {
    v.push_back("Discovery row: inFedB must use idD (got " + spec.infedb_discovery + ")");
  }
  if (!spec.outfedb_catch_all_to_idd) {
    v.push_back("Registration row: outFedB must register as provider for everything to idD");
  }
  if (spec.iotr_subscribe_to != "idD") {
    v.push_back("Subscription row: IoTR must subscribe for provider availability to idD");
  }
  if (spec.outfedb_query_scope != "intra") {
    v.push_back("Security System row: outFedB must use intra-domain security "
                "for query and subscribe");
  }
  if (spec.outfedb_notify_scope != "fed") {
    v.push_back("Security System row: outFedB must use federation security for notify");
  }
  if (spec.infedb_query_scope != "fed") {
    v.push_back("Security System row: inFedB must use federation security "
                "for query and subscribe");
  }
  if (spec.infedb_notify_scope != "intra") {
    v.push_back("Security System row: inFedB must use intra-domain security for notify");
  }
  return v;
}

SpecViolation::SpecViolation(std::vector<std::string> violations_in)
    : std::runtime_error([&] {
        std::ostringstream os;
        os << "SpecViolation:";
        for (const auto& s : violations_in) os << "\n  - " << s;
        return os.str();
      }()),
      violations(std::move(violations_in)) {}

// ---------------------------------------------------------------------------
// boundary assembly, shared between leaf domains and super-domain children

namespace {

struct BoundaryEnv {
  std::string member_id;
  // local side: idD + intra security for a domain, home fedD + this
  // federation's security for a child federation
  std::string local_discovery_endpoint;
  SecurityScopeRef local_scope;
  std::function<std::string(const std::string& component)> issue_local_token;
  std::function<void(const Registration&)> register_catch_all;
  // parent side
  std::string member_fedd_endpoint;
  SecurityScopeRef parent_scope;
  std::string member_fed_token;
  bool secured = false;
  // synthesis
  std::vector<PrivacyDirective> directives;
  RegionTable region_table;
  int64_t synthesized_ttl_seconds = 300;
  int broker_pool_size = 16;
  int pep_pool_size = 8;
  int fanout_timeout_ms = 5000;
};

struct BoundaryServices {
  std::unique_ptr<RegistrarService> iotr;
  std::unique_ptr<PepService> iotr_pep;
  std::unique_ptr<BrokerService> in_fed_b;
  std::unique_ptr<PepService> in_fed_b_pep;
  std::unique_ptr<BrokerService> out_fed_b;
  std::unique_ptr<PepService> out_fed_b_pep;
  std::string in_fed_b_endpoint;
  std::string out_fed_b_endpoint;
  std::string iotr_endpoint;
};

BoundaryServices attach_boundary(const BoundaryEnv& env) {
  BoundaryServices out;

  // inFedB: requests coming from outside, dispatched to local providers
  {
    BrokerConfig cfg;
    cfg.name = env.member_id + ":inFedB";
    cfg.role = BrokerRole::in_fed;
    cfg.discovery_endpoint = env.local_discovery_endpoint;
    cfg.fanout_timeout_ms = env.fanout_timeout_ms;
    cfg.thread_pool_size = env.broker_pool_size;
    if (env.secured) {
      const std::string tok = env.issue_local_token("infedb");
      cfg.discovery_token = tok;
      cfg.provider_token = tok;
      cfg.notify_token = env.member_fed_token;
    }
    out.in_fed_b = std::make_unique<BrokerService>(cfg);
    out.in_fed_b->start();
    out.in_fed_b_endpoint = out.in_fed_b->endpoint();
    if (env.secured) {
      out.in_fed_b_pep = start_pep(
          env.member_id + ":pep-infedb", out.in_fed_b->endpoint(), env.parent_scope,
          {{wire::kNotifyContext, env.local_scope},
           {wire::kNotifyAvailability, env.local_scope}},
          env.pep_pool_size);
      out.in_fed_b_endpoint = out.in_fed_b_pep->endpoint();
      out.in_fed_b->set_advertised_endpoint(out.in_fed_b_endpoint);
    }
  }

  // outFedB: requests going outward, discovered against the federation
  {
    BrokerConfig cfg;
    cfg.name = env.member_id + ":outFedB";
    cfg.role = BrokerRole::out_fed;
    cfg.discovery_endpoint = env.member_fedd_endpoint;
    cfg.fanout_timeout_ms = env.fanout_timeout_ms;
    cfg.thread_pool_size = env.broker_pool_size;
    cfg.exclude_endpoints = {out.in_fed_b_endpoint};
    if (env.secured) {
      const std::string tok = env.issue_local_token("outfedb");
      cfg.discovery_token = tok;
      cfg.provider_token = env.member_fed_token;
      cfg.notify_token = tok;
    }
    out.out_fed_b = std::make_unique<BrokerService>(cfg);
    out.out_fed_b->start();
    out.out_fed_b_endpoint = out.out_fed_b->endpoint();
    if (env.secured) {
      out.out_fed_b_pep = start_pep(
          env.member_id + ":pep-outfedb", out.out_fed_b->endpoint(), env.local_scope,
          {{wire::kNotifyContext, env.parent_scope}}, env.pep_pool_size);
      out.out_fed_b_endpoint = out.out_fed_b_pep->endpoint();
      out.out_fed_b->set_advertised_endpoint(out.out_fed_b_endpoint);
    }
  }
  // requests entering the member must not bounce straight back out
  out.in_fed_b->set_exclude_endpoints({out.out_fed_b_endpoint});

  // catch-all so local brokers transparently reach the federation
  env.register_catch_all(
      catch_all_registration("catchall-outfedb-" + env.member_id, out.out_fed_b_endpoint));

  // IoT Registrar: local availability in, synthesized registrations out
  {
    RegistrarConfig cfg;
    cfg.name = env.member_id + ":iotr";
    cfg.source_discovery_endpoint = env.local_discovery_endpoint;
    cfg.target_discovery_endpoint = env.member_fedd_endpoint;
    cfg.in_fed_b_endpoint = out.in_fed_b_endpoint;
    cfg.ignore_endpoints = {out.out_fed_b_endpoint};
    cfg.directives = env.directives.empty()
                         ? std::vector<PrivacyDirective>{default_directive()}
                         : env.directives;
    cfg.region_table = env.region_table;
    cfg.synthesized_ttl_seconds = env.synthesized_ttl_seconds;
    if (env.secured) cfg.outbound_token = env.issue_local_token("iotr");
    out.iotr = std::make_unique<RegistrarService>(cfg);
    out.iotr->start();
    out.iotr_endpoint = out.iotr->endpoint();
    if (env.secured) {
      out.iotr_pep = start_pep(env.member_id + ":pep-iotr", out.iotr->endpoint(),
                               env.local_scope, {}, env.pep_pool_size);
      out.iotr_endpoint = out.iotr_pep->endpoint();
      out.iotr->set_advertised_endpoint(out.iotr_endpoint);
    }
    out.iotr->subscribe_to_source();
  }

  return out;
}

}  // namespace

// ---------------------------------------------------------------------------
// domain handle

std::string DomainHandle::issue_user_token(const std::string& subject_id,
                                           const std::string& secret) {
  if (!id_idm) throw std::runtime_error("domain is not secured");
  auto token = id_idm->issue_token(subject_id, secret);
  if (!token) throw std::runtime_error("bad credentials for " + subject_id);
  intra_token_values.push_back(token->value);
  return token->value;
}

void DomainHandle::publish_raw(size_t provider_index,
                               const std::vector<ContextElement>& elements) {
  json arr = json::array();
  for (const auto& e : elements) arr.push_back(wire::to_json(e));
  const HttpResult res = post_json(cms.at(provider_index)->endpoint(),
                                   wire::kUpdateContext, {{"elements", std::move(arr)}},
                                   "", 30000);
  if (!res.ok()) {
    throw std::runtime_error("seed publish failed: " + std::to_string(res.status) + " " +
                             res.error + res.raw_body);
  }
}

json DomainHandle::describe() const {
  json cms_json = json::array();
  for (const auto& ep : cm_endpoints) cms_json.push_back(ep);
  json j{{"domainId", domain_id},
         {"secured", spec.secured},
         {"cm", cms_json},
         {"idB", idb_endpoint},
         {"idD", idd_endpoint}};
  if (spec.with_federation) {
    j["fedD"] = fedd_endpoint;
    j["inFedB"] = in_fed_b_endpoint;
    j["outFedB"] = out_fed_b_endpoint;
    j["iotr"] = iotr_endpoint;
  }
  if (id_idm) j["idIdM"] = id_idm->endpoint();
  if (id_pdp) j["idPDP"] = id_pdp->endpoint();
  if (fed_idm) j["fedIdM"] = fed_idm->endpoint();
  if (fed_pdp) j["fedPDP"] = fed_pdp->endpoint();
  return j;
}

namespace {

/// Phase one: context layer, intra-domain brokering layer, intra security,
/// and the (unpeered) federation-scope replicas. The boundary follows once
/// the federation has peered replica groups and minted member identities.
void assemble_domain_core(DomainHandle& h, const DomainSpec& spec, bool fed_secured) {
  h.domain_id = spec.domain_id;
  h.spec = spec;

  SecurityScopeRef intra_scope;
  auto issue_component_token = [&h](const std::string& name) -> std::string {
    if (!h.id_idm) return "";
    if (!h.component_tokens.contains(name)) {
      const std::string subject = comp_subject(h.domain_id, name);
      const std::string secret = random_secret();
      h.id_idm->add_identity({subject, IdentityKind::component, secret});
      h.intra_subject_ids.push_back(subject);
      auto token = h.id_idm->issue_token(subject, secret);
      h.component_tokens[name] = token->value;
      h.intra_token_values.push_back(token->value);
    }
    return h.component_tokens.at(name);
  };

  if (spec.secured) {
    h.id_idm = std::make_unique<IdmService>(IdmConfig{.name = spec.domain_id + ":idIdM"});
    h.id_idm->start();
    h.id_pdp = std::make_unique<PdpService>(PdpConfig{.name = spec.domain_id + ":idPDP"});
    h.id_pdp->start();
    intra_scope = {h.id_idm->endpoint(), h.id_pdp->endpoint()};

    std::vector<Policy> policies;
    policies.push_back({"components-blanket", "comp:" + spec.domain_id + ":*", Action::any,
                        "*", Effect::permit, std::nullopt});
    for (const auto& p : spec.user_policies) policies.push_back(p);
    h.id_pdp->set_policies(std::move(policies));

    for (const auto& user : spec.users) {
      h.id_idm->add_identity(user);
      h.intra_subject_ids.push_back(user.subject_id);
    }
  }

  if (spec.with_federation && fed_secured) {
    h.fed_idm = std::make_unique<IdmService>(IdmConfig{
        .name = spec.domain_id + ":fedIdM", .origin_domain = spec.domain_id});
    h.fed_idm->start();
    h.fed_pdp = std::make_unique<PdpService>(PdpConfig{
        .name = spec.domain_id + ":fedPDP", .origin_domain = spec.domain_id});
    h.fed_pdp->start();
  }

  // intra-domain discovery
  {
    DiscoveryConfig cfg;
    cfg.name = spec.domain_id + ":idD";
    cfg.thread_pool_size = spec.discovery_pool_size;
    if (spec.secured) cfg.notify_token = issue_component_token("idd");
    h.idd = std::make_unique<DiscoveryService>(cfg);
    h.idd->start();
    h.idd_endpoint = h.idd->endpoint();
    if (spec.secured) {
      h.idd_pep = start_pep(spec.domain_id + ":pep-idd", h.idd->endpoint(), intra_scope,
                            {}, spec.pep_pool_size);
      h.idd_endpoint = h.idd_pep->endpoint();
    }
  }

  // federation discovery replica (peered later by the federation assembly)
  if (spec.with_federation) {
    DiscoveryConfig cfg;
    cfg.name = spec.domain_id + ":fedD";
    cfg.origin_domain = spec.domain_id;
    cfg.thread_pool_size = spec.discovery_pool_size;
    if (spec.secured) cfg.notify_token = issue_component_token("fedd");
    h.fedd = std::make_unique<DiscoveryService>(cfg);
    h.fedd->start();
    h.fedd_endpoint = h.fedd->endpoint();
    if (spec.secured) {
      h.fedd_pep = start_pep(spec.domain_id + ":pep-fedd", h.fedd->endpoint(), intra_scope,
                             {}, spec.pep_pool_size);
      h.fedd_endpoint = h.fedd_pep->endpoint();
    }
  }

  // providers
  for (const auto& ps : spec.providers) {
    ContextManagerConfig cfg;
    cfg.name = spec.domain_id + ":" + ps.name;
    cfg.artificial_delay_ms = ps.artificial_delay_ms;
    cfg.thread_pool_size = ps.thread_pool_size;
    cfg.announce_per_entity = ps.announce_per_entity;
    cfg.snapshot_path = ps.snapshot_path;
    if (spec.secured) cfg.notify_token = issue_component_token(ps.name);
    auto cm = std::make_unique<ContextManagerService>(cfg);
    cm->start();
    std::string exposed = cm->endpoint();
    if (spec.secured) {
      auto pep = start_pep(spec.domain_id + ":pep-" + ps.name, cm->endpoint(), intra_scope,
                           {}, spec.pep_pool_size);
      exposed = pep->endpoint();
      h.cm_peps.push_back(std::move(pep));
    }
    cm->configure_announcements(
        exposed, h.idd_endpoint,
        spec.secured ? h.component_tokens.at(ps.name) : std::string{});
    cm->announce();
    h.cm_endpoints.push_back(exposed);
    h.cms.push_back(std::move(cm));
  }

  // intra-domain broker (pass-through auth: the PEPs inject and validate)
  {
    BrokerConfig cfg;
    cfg.name = spec.domain_id + ":idB";
    cfg.role = BrokerRole::intra;
    cfg.discovery_endpoint = h.idd_endpoint;
    cfg.fanout_timeout_ms = spec.fanout_timeout_ms;
    cfg.thread_pool_size = spec.broker_pool_size;
    h.idb = std::make_unique<BrokerService>(cfg);
    h.idb->start();
    h.idb_endpoint = h.idb->endpoint();
    if (spec.secured) {
      h.idb_pep = start_pep(spec.domain_id + ":pep-idb", h.idb->endpoint(), intra_scope,
                            {}, spec.pep_pool_size);
      h.idb_endpoint = h.idb_pep->endpoint();
      h.idb->set_advertised_endpoint(h.idb_endpoint);
    }
  }
}

void attach_domain_boundary(DomainHandle& h, const std::string& fed_token) {
  const DomainSpec& spec = h.spec;
  BoundaryEnv env;
  env.member_id = spec.domain_id;
  env.local_discovery_endpoint = h.idd_endpoint;
  env.secured = spec.secured && h.fed_idm != nullptr;
  if (h.id_idm) env.local_scope = {h.id_idm->endpoint(), h.id_pdp->endpoint()};
  if (h.fed_idm) env.parent_scope = {h.fed_idm->endpoint(), h.fed_pdp->endpoint()};
  env.issue_local_token = [&h](const std::string& name) -> std::string {
    if (!h.id_idm) return "";
    if (!h.component_tokens.contains(name)) {
      const std::string subject = comp_subject(h.domain_id, name);
      const std::string secret = random_secret();
      h.id_idm->add_identity({subject, IdentityKind::component, secret});
      h.intra_subject_ids.push_back(subject);
      auto token = h.id_idm->issue_token(subject, secret);
      h.component_tokens[name] = token->value;
      h.intra_token_values.push_back(token->value);
    }
    return h.component_tokens.at(name);
  };
  env.register_catch_all = [&h](const Registration& reg) { h.idd->register_local(reg); };
  env.member_fedd_endpoint = h.fedd_endpoint;
  env.member_fed_token = fed_token;
  env.directives = spec.directives;
  env.region_table = spec.region_table;
  env.synthesized_ttl_seconds = spec.synthesized_ttl_seconds;
  env.broker_pool_size = spec.broker_pool_size;
  env.pep_pool_size = spec.pep_pool_size;
  env.fanout_timeout_ms = spec.fanout_timeout_ms;

  BoundaryServices services = attach_boundary(env);
  h.iotr = std::move(services.iotr);
  h.iotr_pep = std::move(services.iotr_pep);
  h.in_fed_b = std::move(services.in_fed_b);
  h.in_fed_b_pep = std::move(services.in_fed_b_pep);
  h.out_fed_b = std::move(services.out_fed_b);
  h.out_fed_b_pep = std::move(services.out_fed_b_pep);
  h.in_fed_b_endpoint = services.in_fed_b_endpoint;
  h.out_fed_b_endpoint = services.out_fed_b_endpoint;
  h.iotr_endpoint = services.iotr_endpoint;
  h.fed_token = fed_token;
}

}  // namespace

std::unique_ptr<DomainHandle> assemble_domain(const DomainSpec& spec) {
  if (auto violations = validate_domain_spec(spec); !violations.empty()) {
    throw SpecViolation(std::move(violations));
  }
  auto h = std::make_unique<DomainHandle>();
  assemble_domain_core(*h, spec, spec.secured && spec.with_federation);

  if (spec.with_federation) {
    std::string fed_token;
    if (spec.secured) {
      // degenerate federation scope of one
      const std::string secret = random_secret();
      h->fed_idm->add_identity({"domain:" + spec.domain_id, IdentityKind::domain, secret});
      h->fed_pdp->set_policies({{"fed-members-blanket", "domain:*", Action::any, "*",
                                 Effect::permit, std::nullopt}});
      fed_token = h->fed_idm->issue_token("domain:" + spec.domain_id, secret)->value;
    }
    attach_domain_boundary(*h, fed_token);
  }
  return h;
}

// ---------------------------------------------------------------------------
// federation handle

bool FederationHandle::settle(int timeout_ms) {
  const auto deadline =
      std::chrono::steady_clock::now() + std::chrono::milliseconds(timeout_ms);

  auto pending = [this]() -> int64_t {
    int64_t total = 0;
    std::function<void(const FederationHandle&)> walk = [&](const FederationHandle& f) {
      auto count_discovery = [&](const std::unique_ptr<DiscoveryService>& d) {
        if (!d) return;
        if (!d->dispatcher().wait_idle(0)) total += 1;
        total += d->replicator().pending_count();
      };
      auto count_broker = [&](const std::unique_ptr<BrokerService>& b) {
        if (b && !b->dispatcher().wait_idle(0)) total += 1;
      };
      for (const auto& dom : f.domains) {
        for (const auto& cm : dom->cms) {
          if (!cm->dispatcher().wait_idle(0)) total += 1;
        }
        count_discovery(dom->idd);
        count_discovery(dom->fedd);
        count_broker(dom->idb);
        count_broker(dom->in_fed_b);
        count_broker(dom->out_fed_b);
        if (dom->iotr && !dom->iotr->wait_settled(0)) total += 1;
        if (dom->fed_idm) total += dom->fed_idm->replicator().pending_count();
        if (dom->fed_pdp) total += dom->fed_pdp->replicator().pending_count();
      }
      count_discovery(f.home_fedd);
      count_discovery(f.parent_fedd);
      count_broker(f.boundary_in_fed_b);
      count_broker(f.boundary_out_fed_b);
      if (f.boundary_iotr && !f.boundary_iotr->wait_settled(0)) total += 1;
      if (f.home_fed_idm) total += f.home_fed_idm->replicator().pending_count();
      if (f.home_fed_pdp) total += f.home_fed_pdp->replicator().pending_count();
      for (const auto& c : f.children) walk(*c);
    };
    walk(*this);
    return total;
  };

  int consecutive_zero = 0;
  while (true) {
    if (pending() == 0) {
      if (++consecutive_zero >= 2) return true;
    } else {
      consecutive_zero = 0;
    }
    if (std::chrono::steady_clock::now() >= deadline) return false;
    std::this_thread::sleep_for(std::chrono::milliseconds(25));
  }
}

std::vector<std::string> FederationHandle::intra_secrets() const {
  std::vector<std::string> out;
  std::function<void(const FederationHandle&)> walk = [&](const FederationHandle& f) {
    for (const auto& d : f.domains) {
      out.insert(out.end(), d->intra_subject_ids.begin(), d->intra_subject_ids.end());
      out.insert(out.end(), d->intra_token_values.begin(), d->intra_token_values.end());
    }
    for (const auto& c : f.children) walk(*c);
  };
  walk(*this);
  return out;
}

json FederationHandle::describe() const {
  json domains_json = json::array();
  for (const auto& d : domains) domains_json.push_back(d->describe());
  json j{{"name", name}, {"secured", spec.secured}, {"domains", std::move(domains_json)}};
  if (!children.empty()) {
    json children_json = json::array();
    for (const auto& c : children) children_json.push_back(c->describe());
    j["children"] = std::move(children_json);
  }
  if (home_fedd) j["homeFedD"] = home_fedd->endpoint();
  if (boundary_in_fed_b) j["boundaryInFedB"] = boundary_in_fed_b->self_endpoint();
  if (boundary_out_fed_b) j["boundaryOutFedB"] = boundary_out_fed_b->self_endpoint();
  return j;
}

std::unique_ptr<FederationHandle> assemble_federation(const FederationSpec& spec) {
  std::vector<std::string> violations;
  for (const auto& d : spec.domains) {
    if (spec.secured && !d.secured) {
      violations.push_back("domain " + d.domain_id +
                           " must be secured inside a secured federation");
    }
    if (!d.with_federation) {
      violations.push_back("domain " + d.domain_id +
                           " cannot join a federation with withFederation=false");
    }
    auto v = validate_domain_spec(d);
    violations.insert(violations.end(), v.begin(), v.end());
  }
  for (const auto& c : spec.children) {
    if (spec.secured && !c.secured) {
      violations.push_back("child federation " + c.name +
                           " must be secured inside a secured federation");
    }
  }
  if (!violations.empty()) throw SpecViolation(std::move(violations));

  auto h = std::make_unique<FederationHandle>();
  h->name = spec.name;
  h->spec = spec;

  for (const auto& d : spec.domains) {
    auto dh = std::make_unique<DomainHandle>();
    assemble_domain_core(*dh, d, spec.secured);
    h->domains.push_back(std::move(dh));
  }
  for (const auto& c : spec.children) {
    h->children.push_back(assemble_federation(c));
  }

  // this federation's own window into its replica group
  {
    DiscoveryConfig cfg;
    cfg.name = spec.name + ":homeFedD";
    cfg.origin_domain = spec.name;
    h->home_fedd = std::make_unique<DiscoveryService>(cfg);
    h->home_fedd->start();
  }
  if (spec.secured) {
    h->home_fed_idm = std::make_unique<IdmService>(
        IdmConfig{.name = spec.name + ":homeFedIdM", .origin_domain = spec.name});
    h->home_fed_idm->start();
    h->home_fed_pdp = std::make_unique<PdpService>(
        PdpConfig{.name = spec.name + ":homeFedPDP", .origin_domain = spec.name});
    h->home_fed_pdp->start();
  }

  // parent-group replicas owned by each child boundary
  for (auto& child : h->children) {
    DiscoveryConfig cfg;
    cfg.name = child->name + ":parentFedD";
    cfg.origin_domain = child->name;
    child->parent_fedd = std::make_unique<DiscoveryService>(cfg);
    child->parent_fedd->start();
  }

  auto peers_excluding = [](const std::vector<std::string>& group,
                            const std::string& self) {
    std::vector<std::string> peers;
    for (const auto& e : group) {
      if (e != self) peers.push_back(e);
    }
    return peers;
  };

  std::vector<std::string> fedd_group{h->home_fedd->endpoint()};
  for (const auto& d : h->domains) fedd_group.push_back(d->fedd->endpoint());
  for (const auto& c : h->children) fedd_group.push_back(c->parent_fedd->endpoint());
  h->home_fedd->set_replication_peers(peers_excluding(fedd_group, h->home_fedd->endpoint()));
  for (auto& d : h->domains) {
    d->fedd->set_replication_peers(peers_excluding(fedd_group, d->fedd->endpoint()));
  }
  for (auto& c : h->children) {
    c->parent_fedd->set_replication_peers(
        peers_excluding(fedd_group, c->parent_fedd->endpoint()));
  }

  std::map<std::string, std::string> member_fed_tokens;
  if (spec.secured) {
    std::vector<std::string> idm_group{h->home_fed_idm->endpoint()};
    std::vector<std::string> pdp_group{h->home_fed_pdp->endpoint()};
    for (const auto& d : h->domains) {
      idm_group.push_back(d->fed_idm->endpoint());
      pdp_group.push_back(d->fed_pdp->endpoint());
    }
    h->home_fed_idm->replicator().set_peers(
        peers_excluding(idm_group, h->home_fed_idm->endpoint()));
    h->home_fed_pdp->replicator().set_peers(
        peers_excluding(pdp_group, h->home_fed_pdp->endpoint()));
    for (auto& d : h->domains) {
      d->fed_idm->replicator().set_peers(peers_excluding(idm_group, d->fed_idm->endpoint()));
      d->fed_pdp->replicator().set_peers(peers_excluding(pdp_group, d->fed_pdp->endpoint()));
    }

    std::vector<Policy> fed_policies;
    fed_policies.push_back({"fed-members-blanket", "domain:*", Action::any, "*",
                            Effect::permit, std::nullopt});
    fed_policies.push_back({"fed-federations-blanket", "federation:*", Action::any, "*",
                            Effect::permit, std::nullopt});
    fed_policies.push_back({"fed-components-blanket", "comp:*", Action::any, "*",
                            Effect::permit, std::nullopt});
    for (const auto& p : spec.federation_policies) fed_policies.push_back(p);
    h->home_fed_pdp->set_policies(std::move(fed_policies));

    for (auto& d : h->domains) {
      const std::string subject = "domain:" + d->domain_id;
      const std::string secret = random_secret();
      d->fed_idm->add_identity({subject, IdentityKind::domain, secret});
      member_fed_tokens[d->domain_id] = d->fed_idm->issue_token(subject, secret)->value;
    }
    for (auto& c : h->children) {
      const std::string subject = "federation:" + c->name;
      const std::string secret = random_secret();
      h->home_fed_idm->add_identity({subject, IdentityKind::domain, secret});
      member_fed_tokens[c->name] = h->home_fed_idm->issue_token(subject, secret)->value;
    }

    // let identities, tokens and policies propagate before boundary traffic
    h->home_fed_idm->replicator().wait_idle();
    h->home_fed_pdp->replicator().wait_idle();
    for (auto& d : h->domains) {
      d->fed_idm->replicator().wait_idle();
      d->fed_pdp->replicator().wait_idle();
    }
  }

  for (auto& d : h->domains) {
    attach_domain_boundary(*d, spec.secured ? member_fed_tokens.at(d->domain_id) : "");
  }

  for (auto& child : h->children) {
    BoundaryEnv env;
    env.member_id = child->name;
    env.local_discovery_endpoint = child->home_fedd->endpoint();
    env.member_fedd_endpoint = child->parent_fedd->endpoint();
    env.secured = spec.secured && child->spec.secured;
    env.issue_local_token = [&child](const std::string& name) -> std::string {
      if (!child->home_fed_idm) return "";
      const std::string subject = comp_subject(child->name, name);
      const std::string secret = random_secret();
      child->home_fed_idm->add_identity({subject, IdentityKind::component, secret});
      auto token = child->home_fed_idm->issue_token(subject, secret);
      child->home_fed_idm->replicator().wait_idle();
      return token->value;
    };
    if (env.secured) {
      env.local_scope = {child->home_fed_idm->endpoint(), child->home_fed_pdp->endpoint()};
      env.parent_scope = {h->home_fed_idm->endpoint(), h->home_fed_pdp->endpoint()};
      env.member_fed_token = member_fed_tokens.at(child->name);

      // the child's replicas play the idD/fedD roles for its boundary and
      // therefore carry its federation-scope protection and notify auth
      child->home_fedd->set_notify_token(env.issue_local_token("homefedd"));
      child->parent_fedd->set_notify_token(env.issue_local_token("parentfedd"));
      child->home_fedd_pep =
          start_pep(child->name + ":pep-homefedd", child->home_fedd->endpoint(),
                    env.local_scope, {}, 8);
      child->parent_fedd_pep =
          start_pep(child->name + ":pep-parentfedd", child->parent_fedd->endpoint(),
                    env.local_scope, {}, 8);
      env.local_discovery_endpoint = child->home_fedd_pep->endpoint();
      env.member_fedd_endpoint = child->parent_fedd_pep->endpoint();
    }
    env.register_catch_all = [&child](const Registration& reg) {
      child->home_fedd->register_local(reg);
    };
    env.directives = spec.boundary_directives.empty()
                         ? std::vector<PrivacyDirective>{default_directive()}
                         : spec.boundary_directives;
    env.synthesized_ttl_seconds = spec.boundary_synthesized_ttl_seconds;
    env.broker_pool_size = spec.boundary_broker_pool_size;

    BoundaryServices services = attach_boundary(env);
    child->boundary_iotr = std::move(services.iotr);
    child->boundary_iotr_pep = std::move(services.iotr_pep);
    child->boundary_in_fed_b = std::move(services.in_fed_b);
    child->boundary_in_fed_b_pep = std::move(services.in_fed_b_pep);
    child->boundary_out_fed_b = std::move(services.out_fed_b);
    child->boundary_out_fed_b_pep = std::move(services.out_fed_b_pep);
  }

  return h;
}

}  // namespace liots
