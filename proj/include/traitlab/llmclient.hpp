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

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <thread>
#include <utility>
#include <vector>

#include <json.hpp>

#include "traitlab/corpus.hpp"
#include "traitlab/error.hpp"
#include "traitlab/metrics.hpp"
#include "traitlab/rng.hpp"
#include "traitlab/synthetic.hpp"
#include "traitlab/text.hpp"
#include "traitlab/textstats.hpp"
#include "traitlab/trait.hpp"

namespace traitlab::llm {

enum class Role { System, User, Assistant };

inline std::string_view to_string(Role r) {
  switch (r) {
    case Role::System:
      return "system";
    case Role::User:
      return "user";
    case Role::Assistant:
      return "assistant";
  }
  return "?";
}

inline Role parse_role(std::string_view s) {
  if (s == "system") return Role::System;
  if (s == "user") return Role::User;
  if (s == "assistant") return Role::Assistant;
  throw ParseError("unknown chat role '" + std::string(s) + "'");
}

struct Message {
  Role role = Role::User;
  std::string content;
};

struct ChatRequest {
  std::string model_name;
  std::vector<Message> messages;
  double temperature = 0.0;
  int max_tokens = 256;

  void validate() const {
    if (messages.empty()) throw InvalidArgument("chat request has no messages");
    if (!(temperature >= 0.0) || !std::isfinite(temperature)) {
      throw InvalidArgument("chat request temperature must be >= 0");
    }
    if (max_tokens < 1) throw InvalidArgument("chat request max_tokens < 1");
  }

  // Content of the last user message; empty when there is none.
  std::string_view last_user() const {
    for (auto it = messages.rbegin(); it != messages.rend(); ++it) {
      if (it->role == Role::User) return it->content;
    }
    return {};
  }
};

inline ChatRequest user_request(std::string model, std::string prompt,
                                double temperature = 0.0,
                                int max_tokens = 256) {
  ChatRequest r;
  r.model_name = std::move(model);
  r.messages.push_back({Role::User, std::move(prompt)});
  r.temperature = temperature;
  r.max_tokens = max_tokens;
  return r;
}

// Wire body: {model, messages, temperature, max_tokens}.
inline nlohmann::ordered_json to_json(const ChatRequest& r) {
  nlohmann::ordered_json msgs = nlohmann::ordered_json::array();
  for (const auto& m : r.messages) {
    msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  }
  return {{"model", r.model_name},
          {"messages", std::move(msgs)},
          {"temperature", r.temperature},
          {"max_tokens", r.max_tokens}};
}

inline ChatRequest request_from_json(const nlohmann::json& j) {
  try {
    ChatRequest r;
    r.model_name = j.at("model").get<std::string>();
    for (const auto& m : j.at("messages")) {
      r.messages.push_back({parse_role(m.at("role").get<std::string>()),
                            m.at("content").get<std::string>()});
    }
    r.temperature = j.at("temperature").get<double>();
    r.max_tokens = j.at("max_tokens").get<int>();
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("chat request: ") + e.what());
  }
}

// Canonical text of a request; the key for replay lookups and stub seeding.
inline std::string request_key(const ChatRequest& r) {
  return to_json(r).dump();
}

// ---------------------------------------------------------------------------
// Errors
// ---------------------------------------------------------------------------

class ClientError : public Error {
 public:
  ClientError(const std::string& what, bool transient)
      : Error(what), transient_(transient) {}
  // Transient failures are retried; the rest surface immediately.
  bool transient() const noexcept { return transient_; }

 private:
  bool transient_;
};

class AuthError : public ClientError {
 public:
  explicit AuthError(const std::string& what) : ClientError(what, false) {}
};

class RateLimitError : public ClientError {
 public:
  explicit RateLimitError(const std::string& what) : ClientError(what, true) {}
};

class TransportError : public ClientError {
 public:
  explicit TransportError(const std::string& what, bool transient = true)
      : ClientError(what, transient) {}
};

class MalformedResponseError : public ClientError {
 public:
  explicit MalformedResponseError(const std::string& what)
      : ClientError(what, false) {}
};

// Replay-only client asked for a request the log does not hold.
class ReplayMissError : public ClientError {
 public:
  explicit ReplayMissError(const std::string& what)
      : ClientError(what, false) {}
};

// ---------------------------------------------------------------------------
// Backends
// ---------------------------------------------------------------------------

class ChatBackend {
 public:
  virtual ~ChatBackend() = default;
  virtual std::string complete(const ChatRequest& req) = 0;
};

// Extracts choices[0].message.content from a chat-completions body.
inline std::string parse_completion_body(std::string_view body) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(body);
  } catch (const nlohmann::json::parse_error& e) {
    throw MalformedResponseError(std::string("response is not JSON: ") +
                                 e.what());
  }
  if (!j.is_object() || !j.contains("choices") || !j["choices"].is_array() ||
      j["choices"].empty()) {
    throw MalformedResponseError("response has no choices");
  }
  const auto& c = j["choices"][0];
  if (!c.is_object() || !c.contains("message") ||
      !c["message"].is_object() || !c["message"].contains("content") ||
      !c["message"]["content"].is_string()) {
    throw MalformedResponseError("response choice has no message content");
  }
  return c["message"]["content"].get<std::string>();
}

struct HttpResponse {
  int status = 0;  // 0: the request never completed
  std::string body;
  std::string error;
};

using Headers = std::vector<std::pair<std::string, std::string>>;
using HttpPost = std::function<HttpResponse(
    const std::string& url, const Headers& headers, const std::string& body)>;

// Maps an HTTP outcome onto the client's error classes.
inline std::string interpret_http(const HttpResponse& r) {
  if (r.status == 0) {
    throw TransportError("request failed: " +
                         (r.error.empty() ? std::string("no response")
                                          : r.error));
  }
  if (r.status == 401 || r.status == 403) {
    throw AuthError("authentication rejected (HTTP " +
                    std::to_string(r.status) + ")");
  }
  if (r.status == 429) throw RateLimitError("rate limited (HTTP 429)");
  if (r.status == 408 || r.status >= 500) {
    throw TransportError("server error (HTTP " + std::to_string(r.status) +
                         ")");
  }
  if (r.status < 200 || r.status >= 300) {
    throw TransportError("request rejected (HTTP " +
                             std::to_string(r.status) + ")",
                         false);
  }
  return parse_completion_body(r.body);
}

// Chat-completions endpoint reached through an injected POST function.
class LiveBackend : public ChatBackend {
 public:
  LiveBackend(std::string url, std::string api_key, HttpPost post)
      : url_(std::move(url)), key_(std::move(api_key)), post_(std::move(post)) {
    if (url_.empty()) throw InvalidArgument("live backend needs an endpoint");
    if (!post_) throw InvalidArgument("live backend needs a transport");
  }

  std::string complete(const ChatRequest& req) override {
    Headers h = {{"Content-Type", "application/json"}};
    if (!key_.empty()) h.emplace_back("Authorization", "Bearer " + key_);
    return interpret_http(post_(url_, h, to_json(req).dump()));
  }

 private:
  std::string url_;
  std::string key_;
  HttpPost post_;
};

// ---------------------------------------------------------------------------
// Offline stub
// ---------------------------------------------------------------------------

namespace detail {

// Value after the last "<label>" line in a few-shot prompt.
inline std::optional<std::string> last_field(std::string_view p,
                                             std::string_view label) {
  const std::size_t at = p.rfind(label);
  if (at == std::string_view::npos) return std::nullopt;
  const std::size_t from = at + label.size();
  std::size_t to = p.find('\n', from);
  if (to == std::string_view::npos) to = p.size();
  return std::string(text::trim(p.substr(from, to - from)));
}

// Words that appear in one trait's phrase bank and no other.
inline const std::map<Trait, std::set<std::string>>& marker_words() {
  static const auto kMarkers = [] {
    std::map<Trait, std::set<std::string>> own;
    std::map<std::string, int> seen;
    for (Trait t : kAllTraits) {
      const auto& b = synthetic::bank(t);
      std::vector<std::string_view> lines(b.answers.begin(), b.answers.end());
      lines.insert(lines.end(), b.chatter.begin(), b.chatter.end());
      for (auto l : lines) {
        for (auto& w : text::content_words(l)) {
          if (w == "t") continue;
          if (own[t].insert(w).second) ++seen[w];
        }
      }
    }
    for (auto& [t, words] : own) {
      std::erase_if(words, [&](const std::string& w) { return seen[w] > 1; });
    }
    return own;
  }();
  return kMarkers;
}

inline std::size_t marker_hits(Trait t, std::string_view s) {
  const auto& m = marker_words().at(t);
  std::size_t n = 0;
  for (auto& w : text::content_words(s)) n += m.count(w);
  return n;
}

}  // namespace detail

// Deterministic stand-in for a hosted model. It recognises the prompts the
// pipeline sends (answer generation, in-context editing, trait judging,
// top-token explanation) and answers from the phrase banks; anything else
// gets a fixed neutral reply. Output depends only on the seed and the
// canonical request.
class StubBackend : public ChatBackend {
 public:
  explicit StubBackend(std::uint64_t seed = 0) : seed_(seed) {}

  std::string complete(const ChatRequest& req) override {
    req.validate();
    const std::string_view p = req.last_user();
    const std::uint64_t s = mix_seed(seed_, request_key(req));
    if (p.starts_with(corpus::kIkeInstruction)) return ike(p, s);
    if (p.starts_with(corpus::kGenerationInstruction)) return generate(p, s);
    if (p.starts_with("Common Instructions:")) return judge(p);
    if (p.starts_with("Here is a response generated with")) return explain(p);
    return "I do not have a particular view on that.";
  }

 private:
  static std::pair<Trait, std::string> target(std::string_view p) {
    auto trait = detail::last_field(p, "Target Personality:");
    auto topic = detail::last_field(p, "Edit Topic:");
    if (!trait || !topic || topic->empty()) {
      throw InvalidArgument("stub: prompt lacks a target block");
    }
    return {parse_trait(*trait), *topic};
  }

  std::string generate(std::string_view p, std::uint64_t s) const {
    auto [trait, topic] = target(p);
    return synthetic::stub_opinion(trait, topic, s);
  }

  // Prompting is less reliable than tuning: some answers stay neutral.
  std::string ike(std::string_view p, std::uint64_t s) const {
    auto [trait, topic] = target(p);
    Rng rng(s);
    if (rng.uniform() < kIkeNeutralRate) {
      return synthetic::neutral_opinion(topic, rng);
    }
    const auto& answers = synthetic::bank(trait).answers;
    return synthetic::fill(answers[rng.below(answers.size())], topic);
  }

  // Scores the description by the target trait's marker words.
  static std::string judge(std::string_view p) {
    auto trait_name = detail::last_field(p, "Target Personality:");
    if (!trait_name) throw InvalidArgument("stub: judge prompt lacks a trait");
    const Trait t = parse_trait(*trait_name);
    const std::size_t from = p.find("\nDescription: ");
    const std::size_t to = p.find("\n\nSpecific Instructions");
    std::string_view desc;
    if (from != std::string_view::npos && to != std::string_view::npos &&
        to > from) {
      desc = p.substr(from + 14, to - from - 14);
    }
    const int score =
        static_cast<int>(std::min<std::size_t>(5, 1 + detail::marker_hits(t, desc)));
    nlohmann::ordered_json j;
    j[std::string(to_string(t))] = {
        {"Justification", score >= 4 ? "Clear trait vocabulary throughout."
                                     : "Few words tied to the trait."},
        {"Score", score}};
    return j.dump();
  }

  // Emojis first, then the trait's marker words, then other content words.
  static std::string explain(std::string_view p) {
    const std::size_t with = std::string_view("Here is a response generated with ").size();
    const std::size_t sp = p.find(' ', with);
    const Trait t = parse_trait(p.substr(with, sp - with));
    const std::size_t q1 = p.find(":\n\"");
    const std::size_t q2 = p.rfind("\"\nNow,");
    std::string_view gen;
    if (q1 != std::string_view::npos && q2 != std::string_view::npos &&
        q2 > q1 + 3) {
      gen = p.substr(q1 + 3, q2 - q1 - 3);
    }
    std::vector<std::string> picks;
    auto add = [&](const std::string& w) {
      if (picks.size() < metrics::kIclTokensPerResponse &&
          std::find(picks.begin(), picks.end(), w) == picks.end()) {
        picks.push_back(w);
      }
    };
    for (const auto& e : textstats::extract_emojis(gen)) add(e.emoji);
    const auto& markers = detail::marker_words().at(t);
    const auto words = text::content_words(gen);
    for (const auto& w : words) {
      if (markers.count(w)) add(w);
    }
    for (const auto& w : words) add(w);
    std::string out;
    for (std::size_t i = 0; i < picks.size(); ++i) {
      out += std::to_string(i + 1) + ". " + picks[i] + "\n";
    }
    return out;
  }

  static constexpr double kIkeNeutralRate = 0.3;
  std::uint64_t seed_;
};

// ---------------------------------------------------------------------------
// Replay log
// ---------------------------------------------------------------------------

// JSONL file of {"request": <wire body>, "response": <text>} lines. Later
// lines win when a request repeats.
class ReplayLog {
 public:
  ReplayLog() = default;
  explicit ReplayLog(std::string path) : path_(std::move(path)) {
    std::ifstream in(path_);
    if (!in) return;  // a missing log starts empty
    std::string line;
    std::size_t n = 0;
    while (std::getline(in, line)) {
      ++n;
      if (text::trim(line).empty()) continue;
      try {
        auto j = nlohmann::json::parse(line);
        const ChatRequest r = request_from_json(j.at("request"));
        entries_[request_key(r)] = j.at("response").get<std::string>();
      } catch (const nlohmann::json::exception& e) {
        throw ParseError(std::string("replay log: ") + e.what(), n);
      } catch (const ParseError& e) {
        throw ParseError(std::string("replay log: ") + e.what(), n);
      }
    }
  }

  std::optional<std::string> find(const ChatRequest& r) const {
    std::lock_guard lock(mu_);
    auto it = entries_.find(request_key(r));
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }

  void record(const ChatRequest& r, const std::string& response) {
    std::lock_guard lock(mu_);
    entries_[request_key(r)] = response;
    if (path_.empty()) return;
    std::ofstream out(path_, std::ios::app);
    if (!out) throw IoError("cannot append to replay log " + path_);
    nlohmann::ordered_json j;
    j["request"] = to_json(r);
    j["response"] = response;
    out << j.dump() << '\n';
  }

  std::size_t size() const {
    std::lock_guard lock(mu_);
    return entries_.size();
  }

 private:
  std::string path_;
  std::map<std::string, std::string> entries_;
  mutable std::mutex mu_;
};

// ---------------------------------------------------------------------------
// Client
// ---------------------------------------------------------------------------

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds base_delay{500};
  double multiplier = 2.0;
  // Each delay is drawn uniformly from [(1 - jitter) d, d].
  double jitter = 0.5;

  void validate() const {
    if (max_attempts < 1) throw InvalidArgument("retry: max_attempts < 1");
    if (base_delay.count() < 0) throw InvalidArgument("retry: negative delay");
    if (multiplier < 1.0) throw InvalidArgument("retry: multiplier < 1");
    if (!(jitter >= 0.0 && jitter <= 1.0)) {
      throw InvalidArgument("retry: jitter outside [0, 1]");
    }
  }

  // Delay before attempt `next` (2-based: the first retry is attempt 2).
  std::chrono::milliseconds delay(int next, double u) const {
    const double nominal = static_cast<double>(base_delay.count()) *
                           std::pow(multiplier, next - 2);
    const double d = nominal * (1.0 - jitter * u);
    return std::chrono::milliseconds(static_cast<long long>(std::llround(d)));
  }
};

using Sleeper = std::function<void(std::chrono::milliseconds)>;
using Logger = std::function<void(const std::string&)>;

struct ClientOptions {
  RetryPolicy retry;
  int max_concurrency = 4;
  std::uint64_t jitter_seed = 0;
  // Serve only from the replay log; never reach the backend.
  bool replay_only = false;
};

struct Completion {
  std::string text;
  int attempts = 0;
  bool from_replay = false;
};

class ChatClient {
 public:
  ChatClient(std::shared_ptr<ChatBackend> backend, ClientOptions opt = {},
             std::shared_ptr<ReplayLog> replay = nullptr,
             Sleeper sleeper = nullptr, Logger logger = nullptr)
      : backend_(std::move(backend)),
        opt_(opt),
        replay_(std::move(replay)),
        sleep_(sleeper ? std::move(sleeper)
                       : Sleeper([](std::chrono::milliseconds d) {
                           std::this_thread::sleep_for(d);
                         })),
        log_(std::move(logger)),
        slots_(std::max(1, opt.max_concurrency)),
        jitter_rng_(opt.jitter_seed) {
    opt_.retry.validate();
    if (opt_.max_concurrency < 1) {
      throw InvalidArgument("client: max_concurrency < 1");
    }
    if (opt_.replay_only && !replay_) {
      throw InvalidArgument("client: replay-only mode needs a replay log");
    }
    if (!opt_.replay_only && !backend_) {
      throw InvalidArgument("client: no backend");
    }
  }

  std::string complete(const ChatRequest& req) { return complete_ex(req).text; }

  Completion complete_ex(const ChatRequest& req) {
    req.validate();
    if (replay_) {
      if (auto hit = replay_->find(req)) return {*hit, 0, true};
      if (opt_.replay_only) {
        throw ReplayMissError("request not in replay log");
      }
    }
    Slot slot(slots_);
    for (int attempt = 1;; ++attempt) {
      try {
        Completion c{backend_->complete(req), attempt, false};
        log("completed after " + std::to_string(attempt) + " attempt(s)");
        if (replay_) replay_->record(req, c.text);
        return c;
      } catch (const ClientError& e) {
        if (!e.transient() || attempt >= opt_.retry.max_attempts) {
          log("attempt " + std::to_string(attempt) + " failed, giving up: " +
              e.what());
          throw;
        }
        const auto d = opt_.retry.delay(attempt + 1, next_uniform());
        log("attempt " + std::to_string(attempt) + " failed (" + e.what() +
            "), retrying in " + std::to_string(d.count()) + " ms");
        sleep_(d);
      }
    }
  }

 private:
  struct Slot {
    explicit Slot(std::counting_semaphore<>& s) : s_(s) { s_.acquire(); }
    ~Slot() { s_.release(); }
    std::counting_semaphore<>& s_;
  };

  double next_uniform() {
    std::lock_guard lock(rng_mu_);
    return jitter_rng_.uniform();
  }

  void log(const std::string& m) {
    if (log_) log_(m);
  }

  std::shared_ptr<ChatBackend> backend_;
  ClientOptions opt_;
  std::shared_ptr<ReplayLog> replay_;
  Sleeper sleep_;
  Logger log_;
  std::counting_semaphore<> slots_;
  std::mutex rng_mu_;
  Rng jitter_rng_;
};

}  // namespace traitlab::llm
