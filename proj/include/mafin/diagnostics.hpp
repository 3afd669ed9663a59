#pragma once

#include <string>
#include <vector>

namespace mafin {

/// Collects non-fatal warnings raised while processing data. Every warning is
/// also forwarded to the process logger.
struct Diagnostics {
  std::vector<std::string> warnings;

  void warn(std::string message);
  bool empty() const noexcept { return warnings.empty(); }
};

/// Emits a warning to the logger when no collector is attached.
void warn(Diagnostics* diag, std::string message);

void log_info(const std::string& message);

}  // namespace mafin
