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

#include <atomic>
#include <chrono>
#include <cstdlib>
#include <deque>
#include <filesystem>
#include <fstream>
#include <string>
#include <thread>
#include <vector>

#include <gtest/gtest.h>

#include "traitlab/llmclient.hpp"
#include "traitlab/llmclient_http.hpp"
#include "traitlab/metrics.hpp"
#include "traitlab/synthetic.hpp"

namespace traitlab::llm {
namespace {

using namespace std::chrono_literals;

// Plays back a fixed script of HTTP outcomes.
struct ScriptedPost {
  std::shared_ptr<std::deque<HttpResponse>> script =
      std::make_shared<std::deque<HttpResponse>>();
  std::shared_ptr<std::vector<std::string>> bodies =
      std::make_shared<std::vector<std::string>>();

  HttpResponse operator()(const std::string&, const Headers&,
                          const std::string& body) const {
    bodies->push_back(body);
    if (script->empty()) return {0, "", "script exhausted"};
    auto r = script->front();
    script->pop_front();
    return r;
  }
};

std::string ok_body(const std::string& content) {
  return nlohmann::json{{"choices", {{{"message", {{"content", content}}}}}}}
      .dump();
}

struct Harness {
  ScriptedPost post;
  std::vector<std::chrono::milliseconds> sleeps;
  std::vector<std::string> logs;

  ChatClient client(ClientOptions opt = {},
                    std::shared_ptr<ReplayLog> replay = nullptr) {
    return ChatClient(std::make_shared<LiveBackend>("http://x/v1", "k", post),
                      opt, std::move(replay),
                      [this](std::chrono::milliseconds d) { sleeps.push_back(d); },
                      [this](const std::string& m) { logs.push_back(m); });
  }
};

TEST(Client, ThreeTransientFailuresThenSuccess) {
  Harness h;
  h.post.script->assign({{503, "", ""}, {0, "", "reset"}, {429, "", ""},
                         {200, ok_body("hello"), ""}});
  auto c = h.client();
  const auto r = c.complete_ex(user_request("m", "hi"));
  EXPECT_EQ(r.text, "hello");
  EXPECT_EQ(r.attempts, 4);
  ASSERT_EQ(h.sleeps.size(), 3u);
  // Jittered exponential backoff: [250, 500], [500, 1000], [1000, 2000].
  for (std::size_t i = 0; i < 3; ++i) {
    const long nominal = 500L << i;
    EXPECT_GE(h.sleeps[i].count(), nominal / 2);
    EXPECT_LE(h.sleeps[i].count(), nominal);
  }
  EXPECT_EQ(h.logs.back(), "completed after 4 attempt(s)");
  EXPECT_EQ(h.logs.size(), 4u);
}

TEST(Client, GivesUpAfterMaxAttempts) {
  Harness h;
  for (int i = 0; i < 10; ++i) h.post.script->push_back({500, "", ""});
  auto c = h.client();
  EXPECT_THROW(c.complete(user_request("m", "hi")), TransportError);
  EXPECT_EQ(h.post.bodies->size(), 5u);
  EXPECT_EQ(h.sleeps.size(), 4u);
}

TEST(Client, NonTransientErrorsAreNotRetried) {
  Harness h;
  h.post.script->assign({{401, "", ""}});
  auto c = h.client();
  EXPECT_THROW(c.complete(user_request("m", "hi")), AuthError);
  EXPECT_TRUE(h.sleeps.empty());

  h.post.script->assign({{200, "{\"choices\": []}", ""}});
  EXPECT_THROW(c.complete(user_request("m", "hi")), MalformedResponseError);
  h.post.script->assign({{200, "not json", ""}});
  EXPECT_THROW(c.complete(user_request("m", "hi")), MalformedResponseError);
  h.post.script->assign({{400, "", ""}});
  EXPECT_THROW(c.complete(user_request("m", "hi")), TransportError);
  EXPECT_TRUE(h.sleeps.empty());
}

TEST(Client, WireFormat) {
  Harness h;
  h.post.script->assign({{200, ok_body("x"), ""}});
  auto c = h.client();
  ChatRequest r = user_request("gpt-4", "hello", 0.7, 32);
  r.messages.insert(r.messages.begin(), {Role::System, "be brief"});
  c.complete(r);
  const auto j = nlohmann::json::parse(h.post.bodies->at(0));
  EXPECT_EQ(j["model"], "gpt-4");
  EXPECT_EQ(j["temperature"], 0.7);
  EXPECT_EQ(j["max_tokens"], 32);
  EXPECT_EQ(j["messages"][0]["role"], "system");
  EXPECT_EQ(j["messages"][1]["content"], "hello");
  EXPECT_EQ(request_key(request_from_json(j)), request_key(r));
  r.temperature = -1;
  EXPECT_THROW(c.complete(r), InvalidArgument);
  EXPECT_THROW(parse_role("robot"), ParseError);
}

TEST(Client, ReplayRecordsAndServes) {
  const auto path =
      (std::filesystem::temp_directory_path() / "traitlab_replay_test.jsonl")
          .string();
  std::filesystem::remove(path);
  {
    Harness h;
    h.post.script->assign({{200, ok_body("first"), ""}});
    auto c = h.client({}, std::make_shared<ReplayLog>(path));
    EXPECT_EQ(c.complete(user_request("m", "q")), "first");
    EXPECT_EQ(c.complete_ex(user_request("m", "q")).from_replay, true);
    EXPECT_EQ(h.post.bodies->size(), 1u);
  }
  auto log = std::make_shared<ReplayLog>(path);
  EXPECT_EQ(log->size(), 1u);
  ClientOptions opt;
  opt.replay_only = true;
  ChatClient offline(nullptr, opt, log);
  EXPECT_EQ(offline.complete(user_request("m", "q")), "first");
  EXPECT_THROW(offline.complete(user_request("m", "other")), ReplayMissError);
  {
    std::ofstream out(path, std::ios::app);
    out << "{broken\n";
  }
  EXPECT_THROW(ReplayLog{path}, ParseError);
  std::filesystem::remove(path);
}

TEST(Client, ConcurrencyCapIsRespected) {
  struct Slow : ChatBackend {
    std::atomic<int> in_flight{0}, peak{0};
    std::string complete(const ChatRequest&) override {
      const int now = ++in_flight;
      int p = peak.load();
      while (now > p && !peak.compare_exchange_weak(p, now)) {
      }
      std::this_thread::sleep_for(5ms);
      --in_flight;
      return "ok";
    }
  };
  auto backend = std::make_shared<Slow>();
  ClientOptions opt;
  opt.max_concurrency = 2;
  ChatClient c(backend, opt);
  std::vector<std::thread> threads;
  for (int i = 0; i < 8; ++i) {
    threads.emplace_back([&c, i] { c.complete(user_request("m", std::to_string(i))); });
  }
  for (auto& t : threads) t.join();
  EXPECT_LE(backend->peak.load(), 2);
  EXPECT_GE(backend->peak.load(), 1);
}

TEST(Stub, DeterministicAndValidAnswers) {
  StubBackend a(7), b(7), c(8);
  for (Trait t : kAllTraits) {
    const auto prompt = corpus::build_generation_prompt(t, "Jazz",
                                                        corpus::build_question("Jazz"));
    const auto req = user_request("m", prompt, 1.0);
    const auto x = a.complete(req);
    EXPECT_EQ(x, b.complete(req));
    EXPECT_FALSE(text::trim(x).empty());
    EXPECT_NE(x.find("Jazz"), std::string::npos);
    corpus::OpinionRecord r{t, "Jazz", corpus::build_question("Jazz"), x};
    EXPECT_NO_THROW(corpus::validate(r));
    (void)c;
  }
}

TEST(Stub, JudgeAndExplanationParse) {
  StubBackend s(1);
  const auto loud = synthetic::stub_opinion(Trait::Extraversion, "Jazz", 1);
  const auto j = metrics::parse_judge_response(
      s.complete(user_request("m", metrics::build_pae_prompt(Trait::Extraversion, loud))),
      Trait::Extraversion);
  EXPECT_GE(j.score, 3);
  const auto calm = metrics::parse_judge_response(
      s.complete(user_request("m", metrics::build_pae_prompt(Trait::Extraversion,
                                                             "It is a topic."))),
      Trait::Extraversion);
  EXPECT_EQ(calm.score, 1);
  const auto toks = metrics::parse_icl_tokens(s.complete(user_request(
      "m", metrics::build_icl_prompt(Trait::Extraversion, "Q", "Party time 🎉 friends!"))));
  ASSERT_FALSE(toks.empty());
  EXPECT_EQ(toks[0], "🎉");
  EXPECT_LE(toks.size(), 5u);
}

TEST(Http, UrlParsing) {
  const auto u = parse_url("https://api.example.com:8443/v1/chat/completions");
  EXPECT_EQ(u.origin, "https://api.example.com:8443");
  EXPECT_EQ(u.path, "/v1/chat/completions");
  EXPECT_THROW(parse_url("ftp://x"), InvalidArgument);
}

TEST(Http, LoopbackServerWithFaults) {
  httplib::Server srv;
  std::atomic<int> hits{0};
  srv.Post("/v1/chat/completions", [&](const httplib::Request& req,
                                       httplib::Response& res) {
    const int n = ++hits;
    if (n <= 3) {
      res.status = n == 2 ? 429 : 503;
      return;
    }
    if (req.get_header_value("Authorization") != "Bearer secret") {
      res.status = 401;
      return;
    }
    const auto j = nlohmann::json::parse(req.body);
    res.set_content(ok_body("echo: " + j["messages"][0]["content"].get<std::string>()),
                    "application/json");
  });
  const int port = srv.bind_to_any_port("127.0.0.1");
  std::thread th([&] { srv.listen_after_bind(); });
  srv.wait_until_ready();
  const std::string url =
      "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  std::vector<std::chrono::milliseconds> sleeps;
  ChatClient c(std::make_shared<LiveBackend>(url, "secret", httplib_post(5s)), {},
               nullptr, [&](std::chrono::milliseconds d) { sleeps.push_back(d); });
  const auto r = c.complete_ex(user_request("m", "ping"));
  EXPECT_EQ(r.text, "echo: ping");
  EXPECT_EQ(r.attempts, 4);
  EXPECT_EQ(sleeps.size(), 3u);
  ChatClient bad(std::make_shared<LiveBackend>(url, "wrong", httplib_post(5s)), {},
                 nullptr, [](std::chrono::milliseconds) {});
  EXPECT_THROW(bad.complete(user_request("m", "ping")), AuthError);
  srv.stop();
  th.join();

  // Nothing listens on the old port now: transport errors, retried.
  std::vector<std::chrono::milliseconds> s2;
  ChatClient gone(std::make_shared<LiveBackend>(url, "k", httplib_post(1s)), {},
                  nullptr, [&](std::chrono::milliseconds d) { s2.push_back(d); });
  EXPECT_THROW(gone.complete(user_request("m", "x")), TransportError);
  EXPECT_EQ(s2.size(), 4u);
}

TEST(Http, ClientFactory) {
  ClientConfig cfg;
  cfg.backend = BackendKind::Live;
  cfg.api_key_env = "TRAITLAB_TEST_UNSET_KEY";
  ::unsetenv("TRAITLAB_TEST_UNSET_KEY");
  EXPECT_THROW(make_client(cfg, 1), AuthError);
  cfg.backend = BackendKind::Replay;
  EXPECT_THROW(make_client(cfg, 1), InvalidArgument);
  cfg.backend = BackendKind::Stub;
  EXPECT_FALSE(make_client(cfg, 1)->complete(user_request("m", "hello")).empty());
  const auto back = client_config_from_json(nlohmann::json::parse(to_json(cfg).dump()));
  EXPECT_EQ(back.model, cfg.model);
  EXPECT_EQ(parse_backend_kind("live"), BackendKind::Live);
  EXPECT_THROW(parse_backend_kind("carrier-pigeon"), InvalidArgument);
}

}  // namespace
}  // namespace traitlab::llm
