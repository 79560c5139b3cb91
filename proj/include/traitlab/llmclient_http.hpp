// Copyright 2026 The traitlab Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//      http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

// HTTPS transport for the chat client. Kept apart from llmclient.hpp so that
// offline users do not pull in httplib and OpenSSL.

#include <cstdlib>
#include <memory>
#include <regex>
#include <string>

#include <json.hpp>

// Eigen comes in through llmclient.hpp and must precede httplib: glibc's
// <resolv.h> defines a `_res` macro that collides with Eigen identifiers.
#include "traitlab/error.hpp"
#include "traitlab/llmclient.hpp"

#ifndef CPPHTTPLIB_OPENSSL_SUPPORT
#define CPPHTTPLIB_OPENSSL_SUPPORT
#endif
#include <httplib.h>

namespace traitlab::llm {

struct ParsedUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;
};

inline ParsedUrl parse_url(const std::string& url) {
  static const std::regex re(R"(^(https?://[^/]+)(/.*)?$)");
  std::smatch m;
  if (!std::regex_match(url, m, re)) {
    throw InvalidArgument("not an http(s) URL: '" + url + "'");
  }
  return {m[1].str(), m[2].matched ? m[2].str() : "/"};
}

inline HttpPost httplib_post(std::chrono::seconds timeout = std::chrono::seconds(60)) {
  return [timeout](const std::string& url, const Headers& headers,
                   const std::string& body) {
    const ParsedUrl u = parse_url(url);
    httplib::Client cli(u.origin);
    cli.set_connection_timeout(timeout);
    cli.set_read_timeout(timeout);
    cli.set_write_timeout(timeout);
    httplib::Headers h;
    for (const auto& [k, v] : headers) {
      if (k != "Content-Type") h.emplace(k, v);
    }
    HttpResponse out;
    auto res = cli.Post(u.path, h, body, "application/json");
    if (!res) {
      out.error = httplib::to_string(res.error());
      return out;
    }
    out.status = res->status;
    out.body = res->body;
    return out;
  };
}

enum class BackendKind { Stub, Live, Replay };

inline std::string_view to_string(BackendKind k) {
  switch (k) {
    case BackendKind::Stub:
      return "stub";
    case BackendKind::Live:
      return "live";
    case BackendKind::Replay:
      return "replay";
  }
  return "?";
}

inline BackendKind parse_backend_kind(std::string_view s) {
  if (s == "stub") return BackendKind::Stub;
  if (s == "live") return BackendKind::Live;
  if (s == "replay") return BackendKind::Replay;
  throw InvalidArgument("unknown client backend '" + std::string(s) +
                        "' (stub, live or replay)");
}

inline constexpr const char* kApiKeyEnv = "TRAITLAB_API_KEY";

// Client settings as they appear under "client" in a run config.
struct ClientConfig {
  BackendKind backend = BackendKind::Stub;
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string model = "gpt-4";
  std::string api_key_env = kApiKeyEnv;
  int max_concurrency = 4;
  int max_attempts = 5;
  int base_delay_ms = 500;
  int timeout_s = 60;
  // Empty: no log. With backend "replay" the log is the only source;
  // otherwise it caches and records.
  std::string replay_log;
};

inline nlohmann::ordered_json to_json(const ClientConfig& c) {
  return {{"backend", to_string(c.backend)},
          {"endpoint", c.endpoint},
          {"model", c.model},
          {"api_key_env", c.api_key_env},
          {"max_concurrency", c.max_concurrency},
          {"max_attempts", c.max_attempts},
          {"base_delay_ms", c.base_delay_ms},
          {"timeout_s", c.timeout_s},
          {"replay_log", c.replay_log}};
}

// Missing keys keep their defaults.
inline ClientConfig client_config_from_json(const nlohmann::json& j,
                                            ClientConfig c = {}) {
  try {
    if (j.contains("backend")) {
      c.backend = parse_backend_kind(j["backend"].get<std::string>());
    }
    if (j.contains("endpoint")) c.endpoint = j["endpoint"].get<std::string>();
    if (j.contains("model")) c.model = j["model"].get<std::string>();
    if (j.contains("api_key_env")) {
      c.api_key_env = j["api_key_env"].get<std::string>();
    }
    if (j.contains("max_concurrency")) {
      c.max_concurrency = j["max_concurrency"].get<int>();
    }
    if (j.contains("max_attempts")) c.max_attempts = j["max_attempts"].get<int>();
    if (j.contains("base_delay_ms")) {
      c.base_delay_ms = j["base_delay_ms"].get<int>();
    }
    if (j.contains("timeout_s")) c.timeout_s = j["timeout_s"].get<int>();
    if (j.contains("replay_log")) c.replay_log = j["replay_log"].get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("client config: ") + e.what());
  }
  return c;
}

inline std::unique_ptr<ChatClient> make_client(const ClientConfig& c,
                                               std::uint64_t seed,
                                               Logger logger = nullptr) {
  ClientOptions opt;
  opt.retry.max_attempts = c.max_attempts;
  opt.retry.base_delay = std::chrono::milliseconds(c.base_delay_ms);
  opt.max_concurrency = c.max_concurrency;
  opt.jitter_seed = seed;
  opt.replay_only = c.backend == BackendKind::Replay;
  std::shared_ptr<ReplayLog> log;
  if (!c.replay_log.empty()) log = std::make_shared<ReplayLog>(c.replay_log);
  std::shared_ptr<ChatBackend> backend;
  switch (c.backend) {
    case BackendKind::Stub:
      backend = std::make_shared<StubBackend>(seed);
      break;
    case BackendKind::Live: {
      const char* key = std::getenv(c.api_key_env.c_str());
      if (!key || !*key) {
        throw AuthError("environment variable " + c.api_key_env +
                        " is not set");
      }
      backend = std::make_shared<LiveBackend>(
          c.endpoint, key, httplib_post(std::chrono::seconds(c.timeout_s)));
      break;
    }
    case BackendKind::Replay:
      if (!log) throw InvalidArgument("replay backend needs client.replay_log");
      break;
  }
  return std::make_unique<ChatClient>(backend, opt, log, nullptr,
                                      std::move(logger));
}

}  // namespace traitlab::llm
