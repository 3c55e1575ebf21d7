#pragma once

// Canonical wire encoding: UTF-8 JSON bodies with lowerCamelCase keys over
// HTTP POST. Every service speaks this module's schema bit-for-bit.

#include <string>

#include "liots/model.hpp"

namespace liots::wire {

// data-plane endpoint paths
inline constexpr const char* kUpdateContext = "/v1/updateContext";
inline constexpr const char* kQueryContext = "/v1/queryContext";
inline constexpr const char* kSubscribeContext = "/v1/subscribeContext";
inline constexpr const char* kUnsubscribeContext = "/v1/unsubscribeContext";
inline constexpr const char* kNotifyContext = "/v1/notifyContext";
inline constexpr const char* kRegisterContext = "/v1/registerContext";
inline constexpr const char* kDiscoverAvailability = "/v1/discoverContextAvailability";
inline constexpr const char* kSubscribeAvailability = "/v1/subscribeContextAvailability";
inline constexpr const char* kNotifyAvailability = "/v1/notifyContextAvailability";
// security-plane paths
inline constexpr const char* kToken = "/v1/token";
inline constexpr const char* kValidate = "/v1/validate";
inline constexpr const char* kAuthorize = "/v1/authorize";
// infra paths
inline constexpr const char* kReplicate = "/v1/replicate";
inline constexpr const char* kStatus = "/v1/status";

inline constexpr const char* kAuthHeader = "X-Auth-Token";

json to_json(const EntityRef& v);
json to_json(const Attribute& v);
json to_json(const ContextElement& v);
json to_json(const Scope& v);
json to_json(const Registration& v);
json to_json(const QueryRequest& v);
json to_json(const QueryResponse& v);
json to_json(const Subscription& v);

struct DecodeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

EntityRef entity_ref_from_json(const json& j);
Attribute attribute_from_json(const json& j);
ContextElement element_from_json(const json& j);
Scope scope_from_json(const json& j);
Registration registration_from_json(const json& j);
QueryRequest query_request_from_json(const json& j);
QueryResponse query_response_from_json(const json& j);
Subscription subscription_from_json(const json& j);

/// {"code": int, "reason": string}
std::string error_body(int code, const std::string& reason);

}  // namespace liots::wire
