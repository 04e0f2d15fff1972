#include "revkit/http_client.hpp"

#include <httplib.h>

namespace revkit {
namespace {

struct SplitUrl {
  std::string origin;
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  const auto scheme = url.find("://");
  if (scheme == std::string::npos || url.compare(0, scheme, "http") != 0)
    throw Error(ErrorCode::Validation, "endpoint must be an http:// URL: " + url);
  const auto slash = url.find('/', scheme + 3);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

}  // namespace

nlohmann::json post_json(const Endpoint& endpoint, const nlohmann::json& body,
                         ErrorCode transport_error, ErrorCode status_error) {
  const SplitUrl target = split_url(endpoint.url);
  httplib::Client client(target.origin);
  client.set_connection_timeout(endpoint.timeout);
  client.set_read_timeout(endpoint.timeout);
  client.set_write_timeout(endpoint.timeout);

  httplib::Headers headers;
  if (!endpoint.token.empty()) headers.emplace("Authorization", "Bearer " + endpoint.token);

  auto res = client.Post(target.path, headers, body.dump(), "application/json");
  if (!res)
    throw Error(transport_error,
                endpoint.url + ": " + httplib::to_string(res.error()));
  if (res->status < 200 || res->status >= 300)
    throw Error(status_error, endpoint.url + " returned HTTP " + std::to_string(res->status) +
                                  ": " + res->body.substr(0, 200));
  try {
    return nlohmann::json::parse(res->body);
  } catch (const nlohmann::json::exception& e) {
    throw Error(status_error, endpoint.url + " returned invalid JSON: " + e.what());
  }
}

}  // namespace revkit
