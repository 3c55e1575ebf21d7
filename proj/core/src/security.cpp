#include "liots/security.hpp"

#include <algorithm>
#include <random>
#include <set>

#include "liots/wire.hpp"

namespace liots {

namespace {

std::string random_token_value() {
  // 128 bits from the OS entropy source, hex-encoded
  static thread_local std::random_device rd;
  char buf[33];
  for (int i = 0; i < 4; ++i) {
    std::snprintf(buf + i * 8, 9, "%08x", static_cast<uint32_t>(rd()));
  }
  return std::string(buf, 32);
}

const char* identity_kind_name(IdentityKind k) {
  switch (k) {
    case IdentityKind::user: return "user";
    case IdentityKind::component: return "component";
    case IdentityKind::domain: return "domain";
  }
  return "user";
}

IdentityKind identity_kind_from(const std::string& s) {
  if (s == "user") return IdentityKind::user;
  if (s == "component") return IdentityKind::component;
  if (s == "domain") return IdentityKind::domain;
  throw wire::DecodeError("unknown identity kind '" + s + "'");
}

}  // namespace

json to_json(const Identity& v) {
  return {{"subjectId", v.subject_id},
          {"kind", identity_kind_name(v.kind)},
          {"secret", v.secret}};
}

Identity identity_from_json(const json& j) {
  Identity v;
  v.subject_id = j.at("subjectId").get<std::string>();
  v.kind = identity_kind_from(j.value("kind", "user"));
  v.secret = j.at("secret").get<std::string>();
  return v;
}

json to_json(const Token& v) {
  return {{"value", v.value},
          {"subjectId", v.subject_id},
          {"issuedAt", v.issued_at},
          {"ttl", v.ttl_seconds}};
}

Token token_from_json(const json& j) {
  Token v;
  v.value = j.at("value").get<std::string>();
  v.subject_id = j.at("subjectId").get<std::string>();
  v.issued_at = j.value("issuedAt", int64_t{0});
  v.ttl_seconds = j.value("ttl", int64_t{3600});
  return v;
}

void IdentityManager::add_identity(Identity identity) {
  std::lock_guard lock(mutex_);
  identities_[identity.subject_id] = std::move(identity);
}

bool IdentityManager::has_identity(const std::string& subject_id) const {
  std::lock_guard lock(mutex_);
  return identities_.contains(subject_id);
}

std::optional<Token> IdentityManager::issue_token(const std::string& subject_id,
                                                  const std::string& secret) {
  std::lock_guard lock(mutex_);
  auto it = identities_.find(subject_id);
  if (it == identities_.end() || it->second.secret != secret) return std::nullopt;
  Token t;
  t.value = random_token_value();
  t.subject_id = subject_id;
  t.issued_at = clock_();
  t.ttl_seconds = default_ttl_seconds_;
  tokens_[t.value] = t;
  return t;
}

void IdentityManager::store_token(const Token& token) {
  std::lock_guard lock(mutex_);
  tokens_[token.value] = token;
}

std::optional<std::string> IdentityManager::validate(const std::string& value) const {
  std::lock_guard lock(mutex_);
  auto it = tokens_.find(value);
  if (it == tokens_.end()) return std::nullopt;
  const Token& t = it->second;
  if (t.ttl_seconds > 0 && clock_() - t.issued_at > t.ttl_seconds * 1000) {
    return std::nullopt;
  }
  return t.subject_id;
}

size_t IdentityManager::identity_count() const {
  std::lock_guard lock(mutex_);
  return identities_.size();
}

size_t IdentityManager::token_count() const {
  std::lock_guard lock(mutex_);
  return tokens_.size();
}

// ---------------------------------------------------------------------------

std::string to_string(Action a) {
  switch (a) {
    case Action::query: return "query";
    case Action::subscribe: return "subscribe";
    case Action::notify: return "notify";
    case Action::registration: return "register";
    case Action::discover: return "discover";
    case Action::any: return "any";
  }
  return "any";
}

Action action_from(const std::string& s) {
  if (s == "query") return Action::query;
  if (s == "subscribe") return Action::subscribe;
  if (s == "notify") return Action::notify;
  if (s == "register") return Action::registration;
  if (s == "discover") return Action::discover;
  if (s == "any") return Action::any;
  throw wire::DecodeError("unknown action '" + s + "'");
}

std::optional<Action> action_for_path(const std::string& path) {
  if (path == wire::kQueryContext) return Action::query;
  if (path == wire::kSubscribeContext) return Action::subscribe;
  if (path == wire::kUnsubscribeContext) return Action::subscribe;
  if (path == wire::kUpdateContext) return Action::notify;
  if (path == wire::kNotifyContext) return Action::notify;
  if (path == wire::kNotifyAvailability) return Action::notify;
  if (path == wire::kRegisterContext) return Action::registration;
  if (path == wire::kDiscoverAvailability) return Action::discover;
  if (path == wire::kSubscribeAvailability) return Action::discover;
  return std::nullopt;
}

json to_json(const Policy& v) {
  json j{{"ruleId", v.rule_id},
         {"subjectPattern", v.subject_pattern},
         {"action", to_string(v.action)},
         {"resourcePattern", v.resource_pattern},
         {"effect", v.effect == Effect::permit ? "permit" : "deny"}};
  if (v.filter) j["filter"] = *v.filter;
  return j;
}

Policy policy_from_json(const json& j) {
  Policy v;
  v.rule_id = j.at("ruleId").get<std::string>();
  v.subject_pattern = j.at("subjectPattern").get<std::string>();
  v.action = action_from(j.value("action", "any"));
  v.resource_pattern = j.at("resourcePattern").get<std::string>();
  const std::string effect = j.at("effect").get<std::string>();
  if (effect == "permit") {
    v.effect = Effect::permit;
  } else if (effect == "deny") {
    v.effect = Effect::deny;
  } else {
    throw wire::DecodeError("unknown effect '" + effect + "'");
  }
  if (j.contains("filter") && !j["filter"].is_null()) {
    v.filter = j["filter"].get<std::vector<std::string>>();
  }
  return v;
}

json to_json(const Decision& v) {
  json j{{"verdict", v.verdict == Effect::permit ? "permit" : "deny"}};
  if (v.filter) j["filter"] = *v.filter;
  if (v.matched_rule_id) j["matchedRuleId"] = *v.matched_rule_id;
  return j;
}

Decision decision_from_json(const json& j) {
  Decision v;
  v.verdict = j.at("verdict").get<std::string>() == "permit" ? Effect::permit : Effect::deny;
  if (j.contains("filter") && !j["filter"].is_null()) {
    v.filter = j["filter"].get<std::vector<std::string>>();
  }
  if (j.contains("matchedRuleId") && !j["matchedRuleId"].is_null()) {
    v.matched_rule_id = j["matchedRuleId"].get<std::string>();
  }
  return v;
}

void PolicyEngine::set_policies(std::vector<Policy> policies, int64_t version) {
  std::lock_guard lock(mutex_);
  policies_ = std::move(policies);
  version_ = version;
}

std::vector<Policy> PolicyEngine::policies() const {
  std::lock_guard lock(mutex_);
  return policies_;
}

int64_t PolicyEngine::version() const {
  std::lock_guard lock(mutex_);
  return version_;
}

Decision PolicyEngine::decide(const std::string& subject, Action action,
                              const std::string& resource) const {
  std::lock_guard lock(mutex_);
  for (const auto& rule : policies_) {
    if (rule.action != Action::any && rule.action != action) continue;
    if (!glob_match(rule.subject_pattern, subject)) continue;
    if (!glob_match(rule.resource_pattern, resource)) continue;
    Decision d;
    d.verdict = rule.effect;
    d.matched_rule_id = rule.rule_id;
    if (rule.effect == Effect::permit) d.filter = rule.filter;
    return d;
  }
  return Decision{};  // default deny
}

Decision PolicyEngine::authorize(const std::string& subject, Action action,
                                 const std::vector<std::string>& resources) const {
  std::vector<std::string> expanded = resources;
  if (expanded.empty()) expanded.push_back("*/*");

  bool any_permit = false;
  bool all_permit_unfiltered = true;
  std::set<std::string> filter_union;
  std::optional<std::string> first_rule;

  for (const auto& resource : expanded) {
    const Decision d = decide(subject, action, resource);
    if (!first_rule && d.matched_rule_id) first_rule = d.matched_rule_id;
    if (d.verdict == Effect::deny) {
      all_permit_unfiltered = false;
      continue;
    }
    any_permit = true;
    if (d.filter) {
      all_permit_unfiltered = false;
      for (const auto& name : *d.filter) filter_union.insert(name);
    } else {
      // unfiltered permit contributes the resource's own attribute name
      const size_t slash = resource.find('/');
      const std::string attr =
          slash == std::string::npos ? std::string("*") : resource.substr(slash + 1);
      if (attr != "*") filter_union.insert(attr);
      // a wildcard attr permitted without filter widens to "all" only when
      // every other resource is permitted unfiltered too
    }
  }

  Decision out;
  out.matched_rule_id = first_rule;
  if (!any_permit) {
    out.verdict = Effect::deny;
    return out;
  }
  out.verdict = Effect::permit;
  if (!all_permit_unfiltered) {
    out.filter = std::vector<std::string>(filter_union.begin(), filter_union.end());
  }
  return out;
}

// ---------------------------------------------------------------------------

IdmService::IdmService(IdmConfig config, Clock clock)
    : HttpServiceBase("idm", config.thread_pool_size),
      config_(std::move(config)),
      idm_(std::move(clock), config_.token_ttl_seconds) {
  replicator_.set_peers(config_.replication_peers);
}

IdmService::~IdmService() { stop(); }

void IdmService::add_identity(Identity identity) {
  idm_.add_identity(identity);
  if (!replicator_.peers().empty()) {
    ReplicationOp op;
    op.op_id = new_uuid();
    op.kind = ReplicationKind::identity;
    op.payload = to_json(identity);
    op.origin_domain = config_.origin_domain;
    op.version = now_ms();
    replicator_.broadcast(op);
  }
}

std::optional<Token> IdmService::issue_token(const std::string& subject_id,
                                             const std::string& secret) {
  auto token = idm_.issue_token(subject_id, secret);
  if (token && !replicator_.peers().empty()) {
    ReplicationOp op;
    op.op_id = new_uuid();
    op.kind = ReplicationKind::token;
    op.payload = to_json(*token);
    op.origin_domain = config_.origin_domain;
    op.version = token->issued_at;
    replicator_.broadcast(op);
  }
  return token;
}

void IdmService::configure_routes(httplib::Server& server) {
  server.Post(wire::kToken, [this](const httplib::Request& req, httplib::Response& res) {
    try {
      const json body = json::parse(req.body);
      auto token = issue_token(body.at("subjectId").get<std::string>(),
                               body.at("secret").get<std::string>());
      if (!token) {
        reply_error(res, 401, "BadCredentials");
        return;
      }
      reply_json(res, 200, {{"value", token->value}, {"ttl", token->ttl_seconds}});
    } catch (const std::exception& e) {
      reply_error(res, 400, e.what());
    }
  });

  server.Post(wire::kValidate, [this](const httplib::Request& req, httplib::Response& res) {
    try {
      const json body = json::parse(req.body);
      auto subject = idm_.validate(body.at("value").get<std::string>());
      if (!subject) {
        reply_error(res, 401, "invalid token");
        return;
      }
      reply_json(res, 200, {{"subjectId", *subject}});
    } catch (const std::exception& e) {
      reply_error(res, 400, e.what());
    }
  });

  // administrative identity provisioning (assembly / operator use)
  server.Post("/v1/identities", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      add_identity(identity_from_json(json::parse(req.body)));
      reply_json(res, 200, {{"status", "ok"}});
    } catch (const std::exception& e) {
      reply_error(res, 400, e.what());
    }
  });

  server.Post(wire::kReplicate, [this](const httplib::Request& req, httplib::Response& res) {
    try {
      const ReplicationOp op = replication_op_from_json(json::parse(req.body));
      if (replicator_.remember(op.op_id)) {
        if (op.kind == ReplicationKind::identity) {
          idm_.add_identity(identity_from_json(op.payload));
        } else if (op.kind == ReplicationKind::token) {
          idm_.store_token(token_from_json(op.payload));
        } else {
          reply_error(res, 400, "idm replicates identities and tokens only");
          return;
        }
      }
      reply_json(res, 200, {{"status", "ok"}});
    } catch (const std::exception& e) {
      reply_error(res, 400, e.what());
    }
  });
}

json IdmService::status_extra() const {
  return {{"name", config_.name},
          {"identityCount", idm_.identity_count()},
          {"tokenCount", idm_.token_count()},
          {"replicationPending", replicator_.pending_count()}};
}

// ---------------------------------------------------------------------------

PdpService::PdpService(PdpConfig config)
    : HttpServiceBase("pdp", config.thread_pool_size), config_(std::move(config)) {
  replicator_.set_peers(config_.replication_peers);
}

PdpService::~PdpService() { stop(); }

void PdpService::set_policies(std::vector<Policy> policies) {
  const int64_t version = now_ms();
  engine_.set_policies(policies, version);
  if (!replicator_.peers().empty()) {
    json list = json::array();
    for (const auto& p : policies) list.push_back(to_json(p));
    ReplicationOp op;
    op.op_id = new_uuid();
    op.kind = ReplicationKind::policy;
    op.payload = {{"policies", std::move(list)}};
    op.origin_domain = config_.origin_domain;
    op.version = version;
    replicator_.broadcast(op);
  }
}

void PdpService::configure_routes(httplib::Server& server) {
  server.Post(wire::kAuthorize, [this](const httplib::Request& req, httplib::Response& res) {
    try {
      const json body = json::parse(req.body);
      const std::string subject = body.at("subjectId").get<std::string>();
      const Action action = action_from(body.at("action").get<std::string>());
      std::vector<std::string> resources;
      for (const auto& r : body.value("resources", json::array())) {
        resources.push_back(r.get<std::string>());
      }
      reply_json(res, 200, to_json(engine_.authorize(subject, action, resources)));
    } catch (const std::exception& e) {
      reply_error(res, 400, e.what());
    }
  });

  // administrative policy install (assembly / operator use)
  server.Post("/v1/policies", [this](const httplib::Request& req, httplib::Response& res) {
    try {
      std::vector<Policy> policies;
      for (const auto& p : json::parse(req.body)) policies.push_back(policy_from_json(p));
      set_policies(std::move(policies));
      reply_json(res, 200, {{"status", "ok"}});
    } catch (const std::exception& e) {
      reply_error(res, 400, e.what());
    }
  });

  server.Post(wire::kReplicate, [this](const httplib::Request& req, httplib::Response& res) {
    try {
      const ReplicationOp op = replication_op_from_json(json::parse(req.body));
      if (op.kind != ReplicationKind::policy) {
        reply_error(res, 400, "pdp replicates policies only");
        return;
      }
      if (replicator_.remember(op.op_id) && op.version > engine_.version()) {
        std::vector<Policy> policies;
        for (const auto& p : op.payload.at("policies")) {
          policies.push_back(policy_from_json(p));
        }
        engine_.set_policies(std::move(policies), op.version);
      }
      reply_json(res, 200, {{"status", "ok"}});
    } catch (const std::exception& e) {
      reply_error(res, 400, e.what());
    }
  });
}

json PdpService::status_extra() const {
  return {{"name", config_.name},
          {"policyCount", engine_.policies().size()},
          {"replicationPending", replicator_.pending_count()}};
}

// ---------------------------------------------------------------------------

std::vector<std::string> expand_resources(const std::string& path, const json& body) {
  std::vector<std::string> out;
  auto add = [&out](const std::string& type, const std::string& attr) {
    const std::string r = type + "/" + attr;
    if (std::find(out.begin(), out.end(), r) == out.end()) out.push_back(r);
  };
  auto expand_query_like = [&](const json& j) {
    std::vector<std::string> attrs;
    for (const auto& a : j.value("attributeNames", json::array())) {
      attrs.push_back(a.get<std::string>());
    }
    if (attrs.empty()) attrs.push_back("*");
    for (const auto& e : j.value("entities", json::array())) {
      const std::string type = e.value("type", "*");
      for (const auto& a : attrs) add(type, a);
    }
  };
  auto expand_elements = [&](const json& j) {
    for (const auto& e : j.value("elements", json::array())) {
      const std::string type = e.contains("entity") ? e["entity"].value("type", "*") : "*";
      const json attrs = e.value("attributes", json::array());
      if (attrs.empty()) add(type, "*");
      for (const auto& a : attrs) add(type, a.value("name", "*"));
    }
  };
  auto expand_registrations = [&](const json& regs) {
    for (const auto& r : regs) {
      std::vector<std::string> attrs;
      for (const auto& a : r.value("attributeNames", json::array())) {
        attrs.push_back(a.get<std::string>());
      }
      if (attrs.empty()) attrs.push_back("*");
      for (const auto& e : r.value("entities", json::array())) {
        const std::string type = e.value("type", "*");
        for (const auto& a : attrs) add(type, a);
      }
    }
  };

  if (path == wire::kQueryContext || path == wire::kDiscoverAvailability ||
      path == wire::kSubscribeContext || path == wire::kSubscribeAvailability) {
    expand_query_like(body);
  } else if (path == wire::kUpdateContext || path == wire::kNotifyContext) {
    expand_elements(body);
  } else if (path == wire::kNotifyAvailability) {
    expand_registrations(body.value("registrations", json::array()));
  } else if (path == wire::kRegisterContext) {
    expand_registrations(json::array({body}));
  } else if (path == wire::kUnsubscribeContext) {
    // subscription teardown is authorized against its own resource class
    add("subscription", body.value("subscriptionId", std::string("*")));
  }
  return out;
}

PepService::PepService(PepConfig config)
    : HttpServiceBase("pep", config.thread_pool_size), config_(std::move(config)) {}

PepService::~PepService() { stop(); }

const SecurityScopeRef& PepService::scope_for(const std::string& path) const {
  auto it = config_.path_scopes.find(path);
  return it == config_.path_scopes.end() ? config_.default_scope : it->second;
}

void PepService::configure_routes(httplib::Server& server) {
  const char* paths[] = {wire::kUpdateContext,  wire::kQueryContext,
                         wire::kSubscribeContext, wire::kUnsubscribeContext,
                         wire::kNotifyContext,  wire::kRegisterContext,
                         wire::kDiscoverAvailability, wire::kSubscribeAvailability,
                         wire::kNotifyAvailability};
  for (const char* path : paths) {
    server.Post(path, [this](const httplib::Request& req, httplib::Response& res) {
      enforce(req, res);
    });
  }
}

void PepService::enforce(const httplib::Request& req, httplib::Response& res) {
  const auto action = action_for_path(req.path);
  if (!action) {
    reply_error(res, 404, "unknown path");
    return;
  }
  const SecurityScopeRef& scope = scope_for(req.path);

  const std::string token = req.get_header_value(wire::kAuthHeader);
  if (token.empty()) {
    denied_count_.fetch_add(1);
    reply_error(res, 401, "missing " + std::string(wire::kAuthHeader));
    return;
  }

  const HttpResult validation =
      post_json(scope.idm_endpoint, wire::kValidate, {{"value", token}}, "",
                config_.timeout_ms);
  if (validation.status == 0) {
    reply_error(res, 503, "IdM unreachable: " + validation.error);
    return;
  }
  if (!validation.ok()) {
    denied_count_.fetch_add(1);
    reply_error(res, 401, "invalid token");
    return;
  }
  const std::string subject = validation.body.at("subjectId").get<std::string>();

  json body = json::parse(req.body, nullptr, false);
  if (body.is_discarded()) {
    reply_error(res, 400, "request body is not valid JSON");
    return;
  }
  const std::vector<std::string> resources = expand_resources(req.path, body);

  json resources_json = json::array();
  for (const auto& r : resources) resources_json.push_back(r);
  const HttpResult authz = post_json(
      scope.pdp_endpoint, wire::kAuthorize,
      {{"subjectId", subject}, {"action", to_string(*action)}, {"resources", resources_json}},
      "", config_.timeout_ms);
  if (authz.status == 0) {
    reply_error(res, 503, "PDP unreachable: " + authz.error);
    return;
  }
  if (!authz.ok()) {
    reply_error(res, 503, "PDP error: " + authz.raw_body);
    return;
  }
  const Decision decision = decision_from_json(authz.body);
  if (decision.verdict == Effect::deny) {
    denied_count_.fetch_add(1);
    reply_error(res, 403, "access denied");
    return;
  }

  // forward; unfiltered permits forward the body byte-identical
  std::string forward_body = req.body;
  const bool filter_payload =
      decision.filter &&
      (req.path == wire::kNotifyContext || req.path == wire::kUpdateContext);
  if (filter_payload) {
    json filtered = body;
    json elements = json::array();
    for (const auto& e : body.value("elements", json::array())) {
      ContextElement el = wire::element_from_json(e);
      elements.push_back(wire::to_json(filter_attributes(el, *decision.filter)));
    }
    filtered["elements"] = std::move(elements);
    forward_body = filtered.dump();
  }

  httplib::Client upstream(config_.upstream_endpoint);
  upstream.set_read_timeout(config_.timeout_ms / 1000, (config_.timeout_ms % 1000) * 1000);
  upstream.set_connection_timeout(0, config_.timeout_ms * 1000);
  httplib::Headers headers;
  headers.emplace(wire::kAuthHeader, token);
  auto upstream_res = upstream.Post(req.path, headers, forward_body, "application/json");
  if (!upstream_res) {
    reply_error(res, 502, "upstream unreachable: " + httplib::to_string(upstream_res.error()));
    return;
  }
  forwarded_count_.fetch_add(1);

  std::string response_body = upstream_res->body;
  const bool filter_response = decision.filter && upstream_res->status / 100 == 2 &&
                               req.path == wire::kQueryContext;
  if (filter_response) {
    json parsed = json::parse(response_body, nullptr, false);
    if (!parsed.is_discarded() && parsed.contains("elements")) {
      json elements = json::array();
      for (const auto& e : parsed["elements"]) {
        ContextElement el = wire::element_from_json(e);
        elements.push_back(wire::to_json(filter_attributes(el, *decision.filter)));
      }
      parsed["elements"] = std::move(elements);
      response_body = parsed.dump();
    }
  }

  res.status = upstream_res->status;
  std::string content_type = upstream_res->get_header_value("Content-Type");
  if (content_type.empty()) content_type = "application/json";
  res.set_content(response_body, content_type);
}

json PepService::status_extra() const {
  return {{"name", config_.name},
          {"upstream", config_.upstream_endpoint},
          {"deniedCount", denied_count_.load()},
          {"forwardedCount", forwarded_count_.load()}};
}

}  // namespace liots
