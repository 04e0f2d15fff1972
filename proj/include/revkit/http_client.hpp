#pragma once

#include <chrono>
#include <string>

#include <json.hpp>

#include "revkit/error.hpp"

namespace revkit {

/// Location of an HTTP JSON endpoint, e.g. "http://localhost:8080/v1/embeddings".
struct Endpoint {
  std::string url;
  std::string token;  // sent as a bearer token when non-empty
  std::chrono::seconds timeout{60};
};

/// POSTs a JSON body and returns the parsed JSON reply.
///
/// Transport failures raise `transport_error`; non-2xx statuses and
/// unparseable replies raise `status_error`.
nlohmann::json post_json(const Endpoint& endpoint, const nlohmann::json& body,
                         ErrorCode transport_error = ErrorCode::ProviderUnavailable,
                         ErrorCode status_error = ErrorCode::ProviderError);

}  // namespace revkit
