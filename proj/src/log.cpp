#include "mpnflow/log.hpp"

#include <cstdlib>
#include <string>

namespace mpnflow {

void init_logging() {
  auto level = spdlog::level::warn;
  if (const char* env = std::getenv("MPNFLOW_LOG")) {
    level = spdlog::level::from_str(env);
  }
  spdlog::set_level(level);
  spdlog::set_pattern("[%l] %v");
}

}  // namespace mpnflow
