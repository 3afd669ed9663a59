#include "mafin/diagnostics.hpp"

#include <spdlog/spdlog.h>

namespace mafin {

void Diagnostics::warn(std::string message) {
  spdlog::warn("{}", message);
  warnings.push_back(std::move(message));
}

void warn(Diagnostics* diag, std::string message) {
  if (diag != nullptr) {
    diag->warn(std::move(message));
  } else {
    spdlog::warn("{}", message);
  }
}

void log_info(const std::string& message) { spdlog::info("{}", message); }

}  // namespace mafin
