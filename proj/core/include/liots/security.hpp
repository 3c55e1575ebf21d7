#pragma once

#include <map>
#include <mutex>
#include <optional>

#include "liots/http.hpp"
#include "liots/model.hpp"
#include "liots/replication.hpp"

namespace liots {

// ---------------------------------------------------------------------------
// identity manager

enum class IdentityKind { user, component, domain };

struct Identity {
  std::string subject_id;
  IdentityKind kind = IdentityKind::user;
  std::string secret;
};

struct Token {
  std::string value;  // 128-bit random hex
  std::string subject_id;
  TimestampMs issued_at = 0;
  int64_t ttl_seconds = 3600;
};

json to_json(const Identity& v);
Identity identity_from_json(const json& j);
json to_json(const Token& v);
Token token_from_json(const json& j);

/// Token issuance and validation over an in-memory identity store. One
/// instance per security scope; scopes never share state, so a token of one
/// scope is invalid everywhere else.
class IdentityManager {
 public:
  explicit IdentityManager(Clock clock = system_clock(), int64_t default_ttl_seconds = 3600)
      : clock_(std::move(clock)), default_ttl_seconds_(default_ttl_seconds) {}

  void add_identity(Identity identity);
  bool has_identity(const std::string& subject_id) const;

  /// nullopt on credential mismatch.
  std::optional<Token> issue_token(const std::string& subject_id,
                                   const std::string& secret);

  /// Store a token minted elsewhere (replication apply).
  void store_token(const Token& token);

  /// Subject id, or nullopt for unknown/expired tokens.
  std::optional<std::string> validate(const std::string& value) const;

  size_t identity_count() const;
  size_t token_count() const;

 private:
  Clock clock_;
  int64_t default_ttl_seconds_;
  mutable std::mutex mutex_;
  std::map<std::string, Identity> identities_;
  std::map<std::string, Token> tokens_;
};

// ---------------------------------------------------------------------------
// policy decision point

enum class Action { query, subscribe, notify, registration, discover, any };

std::string to_string(Action a);
Action action_from(const std::string& s);

/// Action implied by a data-plane path (queryContext -> query, ...).
/// updateContext counts as notify: both push context data at a component.
std::optional<Action> action_for_path(const std::string& path);

enum class Effect { permit, deny };

struct Policy {
  std::string rule_id;
  std::string subject_pattern;  // glob
  Action action = Action::any;
  std::string resource_pattern;  // glob over "entityType/attributeName"
  Effect effect = Effect::deny;
  std::optional<std::vector<std::string>> filter;  // allowed attrs when permit
};

struct Decision {
  Effect verdict = Effect::deny;
  std::optional<std::vector<std::string>> filter;
  std::optional<std::string> matched_rule_id;
};

json to_json(const Policy& v);
Policy policy_from_json(const json& j);
json to_json(const Decision& v);
Decision decision_from_json(const json& j);

/// Ordered first-match policy evaluation with default deny.
class PolicyEngine {
 public:
  void set_policies(std::vector<Policy> policies, int64_t version = 0);
  std::vector<Policy> policies() const;
  int64_t version() const;

  /// Single-resource first-match decision; pure given the policy list.
  Decision decide(const std::string& subject, Action action,
                  const std::string& resource) const;

  /// Multi-resource combination: permitted only when every resource is
  /// permitted or filterable; partial permits become attribute filters
  /// (union of filters across permitted resources).
  Decision authorize(const std::string& subject, Action action,
                     const std::vector<std::string>& resources) const;

 private:
  mutable std::mutex mutex_;
  std::vector<Policy> policies_;
  int64_t version_ = 0;
};

// ---------------------------------------------------------------------------
// services

struct IdmConfig {
  std::string name = "idm";
  std::vector<std::string> replication_peers;  // fedIdM role when non-empty
  std::string origin_domain;
  int64_t token_ttl_seconds = 3600;
  int thread_pool_size = 8;
};

class IdmService : public HttpServiceBase {
 public:
  explicit IdmService(IdmConfig config = {}, Clock clock = system_clock());
  ~IdmService() override;

  IdentityManager& idm() { return idm_; }
  Replicator& replicator() { return replicator_; }

  /// Create the identity locally and replicate it to peers.
  void add_identity(Identity identity);
  /// Issue locally and replicate the token table entry.
  std::optional<Token> issue_token(const std::string& subject_id,
                                   const std::string& secret);

 protected:
  void configure_routes(httplib::Server& server) override;
  json status_extra() const override;

 private:
  IdmConfig config_;
  IdentityManager idm_;
  Replicator replicator_;
};

struct PdpConfig {
  std::string name = "pdp";
  std::vector<std::string> replication_peers;  // fedPDP role when non-empty
  std::string origin_domain;
  int thread_pool_size = 8;
};

class PdpService : public HttpServiceBase {
 public:
  explicit PdpService(PdpConfig config = {});
  ~PdpService() override;

  PolicyEngine& engine() { return engine_; }
  Replicator& replicator() { return replicator_; }

  /// Install the ordered policy list locally and replicate it.
  void set_policies(std::vector<Policy> policies);

 protected:
  void configure_routes(httplib::Server& server) override;
  json status_extra() const override;

 private:
  PdpConfig config_;
  PolicyEngine engine_;
  Replicator replicator_;
};

// ---------------------------------------------------------------------------
// policy enforcement point

struct SecurityScopeRef {
  std::string idm_endpoint;
  std::string pdp_endpoint;
};

struct PepConfig {
  std::string name = "pep";
  std::string upstream_endpoint;
  SecurityScopeRef default_scope;
  // the infrastructure settings assign boundary brokers different scopes
  // per direction; keyed
  // by request path so provider notifications and availability
  // notifications can be split across scopes.
  std::map<std::string, SecurityScopeRef> path_scopes;
  int timeout_ms = 8000;
  int thread_pool_size = 8;
};

/// Transparent enforcement proxy for all data-plane endpoints. Fails closed:
/// without a valid token and a permit decision the upstream is never
/// contacted. Permit decisions carrying a filter refine response bodies and
/// notification payloads via attribute filtering.
class PepService : public HttpServiceBase {
 public:
  explicit PepService(PepConfig config);
  ~PepService() override;

  const PepConfig& config() const { return config_; }

 protected:
  void configure_routes(httplib::Server& server) override;
  json status_extra() const override;

 private:
  void enforce(const httplib::Request& req, httplib::Response& res);
  const SecurityScopeRef& scope_for(const std::string& path) const;

  PepConfig config_;
  std::atomic<int64_t> denied_count_{0};
  std::atomic<int64_t> forwarded_count_{0};
};

/// Resource strings ("entityType/attributeName") demanded by a request
/// body, per path. Exposed for tests.
std::vector<std::string> expand_resources(const std::string& path, const json& body);

}  // namespace liots
