#pragma once

#include <ostream>
#include <string>
#include <vector>

namespace normprior::cli {

// args excludes the program name. Data goes to out, diagnostics to err.
// Returns 0 on success, 1 on invalid input or usage, 2 on internal errors.
int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err);

// Stops a running serve/annotate-serve loop; also wired to SIGINT/SIGTERM.
void request_shutdown();

// Port of the running server, 0 when none is listening.
int serving_port();

}  // namespace normprior::cli
