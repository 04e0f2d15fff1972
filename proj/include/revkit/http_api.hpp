#pragma once

#include <string>

// Eigen must precede httplib: <resolv.h> defines a `_res` macro that
// collides with Eigen parameter names.
#include "revkit/error.hpp"
#include "revkit/service.hpp"

#include <Eigen/Dense>

#include <httplib.h>

namespace revkit::service {

/// HTTP status for a domain error.
int http_status(ErrorCode code);

/// Installs the review API on `server`. When `api_token` is non-empty every
/// route except GET /health requires "Authorization: Bearer <token>".
///
///   GET  /health
///   POST /contracts                      ingest; returns flags
///   GET  /contracts/{id}/flags           queue order
///   GET  /revisions/{id}                 revision, provision, flag, last optimization
///   GET  /revisions/{id}/diff            ?against=template|candidate&index=i
///   POST /revisions/{id}/optimize        best-of-N candidates with rewards
///   POST /revisions/{id}/decision        accept / reject / edit
///   GET  /models                         serving and stored versions
///   POST /models/retrain                 snapshot retrain
void register_routes(httplib::Server& server, Workspace& workspace, const std::string& api_token);

}  // namespace revkit::service
