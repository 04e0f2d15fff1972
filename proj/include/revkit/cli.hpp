#pragma once

#include <ostream>
#include <string>
#include <vector>

#include "revkit/service.hpp"

namespace revkit::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitRuntime = 1;
inline constexpr int kExitUsage = 2;

/// Runs the `revkit` command line. `args` excludes the program name. JSON
/// results go to `out`; failures go to `err` as {"error": {code, message}}.
/// Returns 0 on success, 2 on usage or validation errors and 1 otherwise.
int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err,
        service::Providers overrides = {});

/// Exit status for a domain error.
int exit_code(ErrorCode code);

}  // namespace revkit::cli
