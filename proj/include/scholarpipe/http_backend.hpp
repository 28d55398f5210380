#pragma once

// Chat-completion style HTTP backend: POST {model, messages, temperature,
// max_tokens} and read the generated text at a configurable field path.

#include <chrono>
#include <cstdlib>
#include <string>
#include <string_view>

#include "httplib.h"
#include "json.hpp"
#include "scholarpipe/error.hpp"
#include "scholarpipe/semclass.hpp"
#include "scholarpipe/text.hpp"

namespace scholarpipe::semclass {

struct BackendConfig {
  std::string endpoint;  // e.g. http://localhost:8000/v1/chat/completions
  std::string model = "Qwen2.5-7B-Instruct";
  std::string token_env = "SCHOLARPIPE_TOKEN";
  std::size_t max_in_flight = 4;
  std::chrono::milliseconds timeout{60000};
  int retry_budget = 2;
  double temperature = 0.0;
  int max_tokens = 512;
  std::string response_path = "choices.0.message.content";

  void validate() const {
    if (max_in_flight < 1) throw Error(Errc::Config, "max_in_flight must be >= 1");
    if (endpoint.empty()) throw Error(Errc::Config, "backend endpoint is empty");
  }
};

struct ParsedUrl {
  std::string scheme_host_port;
  std::string path;
};

inline ParsedUrl split_url(std::string_view url) {
  auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos) throw Error(Errc::Config, "endpoint must be an absolute URL");
  auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string_view::npos) return {std::string(url), "/"};
  return {std::string(url.substr(0, path_start)), std::string(url.substr(path_start))};
}

/// Follows a dotted path such as "choices.0.message.content"; numeric
/// segments index arrays.
inline const nlohmann::json* follow_path(const nlohmann::json& j, std::string_view path) {
  const nlohmann::json* cur = &j;
  for (auto& seg : text::split(path, '.')) {
    if (cur->is_array()) {
      char* end = nullptr;
      auto idx = std::strtoul(seg.c_str(), &end, 10);
      if (seg.empty() || *end != '\0' || idx >= cur->size()) return nullptr;
      cur = &(*cur)[idx];
    } else if (cur->is_object()) {
      auto it = cur->find(seg);
      if (it == cur->end()) return nullptr;
      cur = &*it;
    } else {
      return nullptr;
    }
  }
  return cur;
}

class HttpBackend : public Backend {
 public:
  explicit HttpBackend(BackendConfig cfg) : cfg_(std::move(cfg)), url_(split_url(cfg_.endpoint)) {
    cfg_.validate();
    if (const char* tok = std::getenv(cfg_.token_env.c_str())) token_ = tok;
  }

  nlohmann::json request_body(const std::string& prompt) const {
    return {{"model", cfg_.model},
            {"messages", nlohmann::json::array({{{"role", "user"}, {"content", prompt}}})},
            {"temperature", cfg_.temperature},
            {"max_tokens", cfg_.max_tokens}};
  }

  std::string complete(const std::string& prompt) override {
    httplib::Client client(url_.scheme_host_port);
    const auto secs = std::chrono::duration_cast<std::chrono::seconds>(cfg_.timeout);
    const auto usecs = std::chrono::duration_cast<std::chrono::microseconds>(cfg_.timeout - secs);
    client.set_connection_timeout(secs.count(), usecs.count());
    client.set_read_timeout(secs.count(), usecs.count());
    client.set_write_timeout(secs.count(), usecs.count());
    if (!token_.empty()) client.set_bearer_token_auth(token_);

    auto res = client.Post(url_.path, request_body(prompt).dump(), "application/json");
    if (!res) throw BackendError("transport error: " + httplib::to_string(res.error()));
    if (res->status != 200) throw BackendError("HTTP status " + std::to_string(res->status));
    auto body = nlohmann::json::parse(res->body, nullptr, false);
    if (body.is_discarded()) throw BackendError("response is not JSON");
    const auto* text = follow_path(body, cfg_.response_path);
    if (!text || !text->is_string()) throw BackendError("no text at " + cfg_.response_path);
    return text->get<std::string>();
  }

  ordered_json describe() const override {
    return {{"backend", "http"},
            {"endpoint", cfg_.endpoint},
            {"model", cfg_.model},
            {"temperature", cfg_.temperature},
            {"max_tokens", cfg_.max_tokens}};
  }

  const BackendConfig& config() const { return cfg_; }

 private:
  BackendConfig cfg_;
  ParsedUrl url_;
  std::string token_;
};

}  // namespace scholarpipe::semclass
