#pragma once

#include <spdlog/spdlog.h>

namespace mpnflow {

// Reads MPNFLOW_LOG (trace|debug|info|warn|error|off). Default: warn.
void init_logging();

}  // namespace mpnflow
