#include "http_post.hpp"

#ifdef MAFIN_WITH_OPENSSL
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

#include <cstdlib>
#include <thread>

#include "mafin/diagnostics.hpp"
#include "mafin/error.hpp"

namespace mafin::detail {

HttpResult post_json(const std::string& base_url, const std::string& path,
                     const std::string& token, const std::string& body,
                     std::chrono::seconds timeout) {
  httplib::Client client(base_url);
  if (!client.is_valid()) throw ProviderError("invalid base URL '" + base_url + "'", false);
  client.set_connection_timeout(timeout);
  client.set_read_timeout(timeout);
  client.set_write_timeout(timeout);
  httplib::Headers headers{{"Authorization", "Bearer " + token}};
  auto res = client.Post(path, headers, body, "application/json");
  if (!res) {
    throw ProviderError("transport failure contacting " + base_url + path + ": " +
                            httplib::to_string(res.error()),
                        true);
  }
  return HttpResult{res->status, res->body};
}

std::string with_retries(int max_attempts, std::chrono::milliseconds initial_backoff,
                         const std::function<void(std::chrono::milliseconds)>& sleeper,
                         const std::function<std::string()>& attempt) {
  auto backoff = initial_backoff;
  for (int i = 1;; ++i) {
    try {
      return attempt();
    } catch (const ProviderError& e) {
      if (!e.retriable()) throw;
      if (i >= max_attempts) {
        throw ProviderError(std::string(e.what()) + " (after " + std::to_string(i) + " attempts)",
                            true, i);
      }
      warn(nullptr, std::string(e.what()) + "; retrying in " + std::to_string(backoff.count()) +
                        " ms");
      if (sleeper) {
        sleeper(backoff);
      } else {
        std::this_thread::sleep_for(backoff);
      }
      backoff *= 2;
    }
  }
}

std::string token_from_env(const std::string& var) {
  const char* value = std::getenv(var.c_str());
  if (value == nullptr || *value == '\0') {
    throw ProviderError("environment variable " + var +
                            " is not set; export it with the backend's bearer token",
                        false);
  }
  return value;
}

}  // namespace mafin::detail
