#pragma once

#include <chrono>
#include <functional>
#include <string>

namespace mafin::detail {

struct HttpResult {
  int status = 0;
  std::string body;
};

/// POSTs a JSON body with a bearer token. Throws ProviderError(retriable) on
/// transport failure; HTTP status is returned to the caller.
HttpResult post_json(const std::string& base_url, const std::string& path,
                     const std::string& token, const std::string& body,
                     std::chrono::seconds timeout);

/// Runs `attempt` up to `max_attempts` times with exponential backoff
/// (initial, 2x initial, ...) between failures that are retriable.
std::string with_retries(int max_attempts, std::chrono::milliseconds initial_backoff,
                         const std::function<void(std::chrono::milliseconds)>& sleeper,
                         const std::function<std::string()>& attempt);

/// Reads a bearer token from the environment; throws a non-retriable
/// ProviderError naming the variable when it is unset or empty.
std::string token_from_env(const std::string& var);

}  // namespace mafin::detail
