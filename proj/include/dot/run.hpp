#pragma once

#include <string>

#include "dot/config.hpp"

namespace dot {

/// Executes one batch command, writing all artifacts plus a manifest.json
/// under config.out_dir. Returns the process exit code (0 ok, 1 computation
/// failure, 2 config error); error details go to a machine-readable JSON on
/// stdout when nonzero.
int run(const RunConfig& config);

/// Same, but lets exceptions escape (used by tests).
void run_checked(const RunConfig& config);

}  // namespace dot
