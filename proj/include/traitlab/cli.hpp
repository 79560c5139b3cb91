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
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <map>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <openssl/evp.h>

#include <CLI11.hpp>
#include <json.hpp>

#include "traitlab/checkpoint.hpp"
#include "traitlab/classifier.hpp"
#include "traitlab/corpus.hpp"
#include "traitlab/error.hpp"
#include "traitlab/finetune.hpp"
#include "traitlab/interp.hpp"
#include "traitlab/llmclient.hpp"
#include "traitlab/llmclient_http.hpp"
#include "traitlab/metrics.hpp"
#include "traitlab/nf4.hpp"
#include "traitlab/svg.hpp"
#include "traitlab/synthetic.hpp"
#include "traitlab/textstats.hpp"
#include "traitlab/tinylm.hpp"
#include "traitlab/tinylm_train.hpp"
#include "traitlab/unicode.hpp"

// The `traitlab` command line: one verb per pipeline stage. Every verb reads
// the same run configuration, writes under --out and refreshes
// <out>/manifest.json with the SHA-256 of everything written so far.
namespace traitlab::cli {

namespace fs = std::filesystem;
using json = nlohmann::json;
using ojson = nlohmann::ordered_json;

enum ExitCode : int {
  kOk = 0,
  kInternal = 1,
  kUsage = 2,       // bad flags, bad config values, unmet preconditions
  kData = 3,        // unparseable input files
  kIo = 4,          // unreadable or unwritable paths
  kClient = 5,      // chat backend failures
  kDivergence = 6,  // non-finite training loss
};

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

// Desk default: small enough to pretrain in a couple of minutes on one core,
// with a window that fits an instruction prompt plus a two-sentence answer.
inline tinylm::ModelConfig desk_model_config() {
  tinylm::ModelConfig c;
  c.d_model = 48;
  c.n_layers = 2;
  c.n_heads = 4;
  c.d_mlp = 192;
  c.max_seq_len = 192;
  return c;
}

struct PretrainSettings {
  int steps = 2500;
  int batch_size = 8;
  double learning_rate = 3e-3;
  std::size_t documents = 1500;
  // Leading entries of the default topic list used in the corpus.
  std::size_t topics = 12;
};

struct SamplingSettings {
  double temperature = 1.0;
  int max_tokens = 120;
};

struct RunConfig {
  std::uint64_t seed = 0;
  std::string out = "out";
  tinylm::ModelConfig model = desk_model_config();
  PretrainSettings pretrain;
  peft::FinetuneConfig finetune;
  // Fine-tune against NF4-rounded base projections, as 4-bit storage would.
  bool quantize_base = true;
  std::size_t quant_block = 64;
  classifier::ClassifierConfig classifier;
  llm::ClientConfig client;
  SamplingSettings sampling;
  double interp_tolerance = interp::kDefaultTolerance;
  std::size_t lda_topics = 5;
  std::size_t lda_iterations = 200;
  std::size_t top_terms = 10;
};

inline ojson to_json(const RunConfig& c) {
  ojson ft = peft::to_json(c.finetune);
  ft["quantize_base"] = c.quantize_base;
  ft["quant_block"] = c.quant_block;
  return {
      {"seed", c.seed},
      {"out", c.out},
      {"model", tinylm::to_json(c.model)},
      {"pretrain",
       {{"steps", c.pretrain.steps},
        {"batch_size", c.pretrain.batch_size},
        {"learning_rate", c.pretrain.learning_rate},
        {"documents", c.pretrain.documents},
        {"topics", c.pretrain.topics}}},
      {"finetune", ft},
      {"classifier",
       {{"max_epochs", c.classifier.max_epochs},
        {"learning_rate", c.classifier.learning_rate},
        {"l2", c.classifier.l2},
        {"plateau_tolerance", c.classifier.plateau_tolerance}}},
      {"client", llm::to_json(c.client)},
      {"sampling",
       {{"temperature", c.sampling.temperature},
        {"max_tokens", c.sampling.max_tokens}}},
      {"analysis",
       {{"lda_topics", c.lda_topics},
        {"lda_iterations", c.lda_iterations},
        {"top_terms", c.top_terms}}},
      {"interp", {{"tolerance", c.interp_tolerance}}}};
}

// Overlays `j` on `c`; keys absent from `j` keep their current values.
inline RunConfig apply_config(RunConfig c, const json& j) {
  try {
    if (!j.is_object()) throw ParseError("config must be a JSON object");
    c.seed = j.value("seed", c.seed);
    c.out = j.value("out", c.out);
    if (j.contains("model")) {
      json m = tinylm::to_json(c.model);
      m.update(j["model"]);
      c.model = tinylm::model_config_from_json(m);
    }
    if (j.contains("pretrain")) {
      const auto& p = j["pretrain"];
      c.pretrain.steps = p.value("steps", c.pretrain.steps);
      c.pretrain.batch_size = p.value("batch_size", c.pretrain.batch_size);
      c.pretrain.learning_rate =
          p.value("learning_rate", c.pretrain.learning_rate);
      c.pretrain.documents = p.value("documents", c.pretrain.documents);
      c.pretrain.topics = p.value("topics", c.pretrain.topics);
    }
    if (j.contains("finetune")) {
      const auto& f = j["finetune"];
      c.finetune = peft::finetune_config_from_json(f, c.finetune);
      c.quantize_base = f.value("quantize_base", c.quantize_base);
      c.quant_block = f.value("quant_block", c.quant_block);
    }
    if (j.contains("classifier")) {
      const auto& k = j["classifier"];
      c.classifier.max_epochs = k.value("max_epochs", c.classifier.max_epochs);
      c.classifier.learning_rate =
          k.value("learning_rate", c.classifier.learning_rate);
      c.classifier.l2 = k.value("l2", c.classifier.l2);
      c.classifier.plateau_tolerance =
          k.value("plateau_tolerance", c.classifier.plateau_tolerance);
    }
    if (j.contains("client")) {
      c.client = llm::client_config_from_json(j["client"], c.client);
    }
    if (j.contains("sampling")) {
      const auto& s = j["sampling"];
      c.sampling.temperature = s.value("temperature", c.sampling.temperature);
      c.sampling.max_tokens = s.value("max_tokens", c.sampling.max_tokens);
    }
    if (j.contains("analysis")) {
      const auto& a = j["analysis"];
      c.lda_topics = a.value("lda_topics", c.lda_topics);
      c.lda_iterations = a.value("lda_iterations", c.lda_iterations);
      c.top_terms = a.value("top_terms", c.top_terms);
    }
    if (j.contains("interp")) {
      c.interp_tolerance = j["interp"].value("tolerance", c.interp_tolerance);
    }
  } catch (const json::exception& e) {
    throw ParseError(std::string("config: ") + e.what());
  }
  if (c.pretrain.steps < 1 || c.pretrain.batch_size < 1) {
    throw InvalidArgument("config: pretrain steps and batch_size must be >= 1");
  }
  if (c.pretrain.topics < 1) {
    throw InvalidArgument("config: pretrain.topics must be >= 1");
  }
  if (!(c.sampling.temperature > 0.0) || c.sampling.max_tokens < 1) {
    throw InvalidArgument("config: sampling temperature must be > 0 and "
                          "max_tokens >= 1");
  }
  return c;
}

inline RunConfig load_config(const std::string& path, RunConfig base = {}) {
  json j;
  try {
    j = json::parse(checkpoint::read_file(path));
  } catch (const json::parse_error& e) {
    throw ParseError("config " + path + ": " + e.what());
  }
  return apply_config(std::move(base), j);
}

// ---------------------------------------------------------------------------
// Artifacts and manifest
// ---------------------------------------------------------------------------

inline std::string sha256_hex(std::string_view bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int n = 0;
  if (EVP_Digest(bytes.data(), bytes.size(), md, &n, EVP_sha256(), nullptr) !=
      1) {
    throw Error("SHA-256 digest failed");
  }
  std::ostringstream os;
  os << std::hex << std::setfill('0');
  for (unsigned int i = 0; i < n; ++i) os << std::setw(2) << int(md[i]);
  return os.str();
}

inline constexpr const char* kManifest = "manifest.json";

// Writes artifacts under one directory and keeps the manifest in step.
class Outputs {
 public:
  explicit Outputs(fs::path dir) : dir_(std::move(dir)) {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec) throw IoError("cannot create " + dir_.string() + ": " + ec.message());
  }

  const fs::path& dir() const { return dir_; }
  fs::path path(const std::string& rel) const { return dir_ / rel; }

  void write(const std::string& rel, std::string_view bytes) {
    const fs::path p = path(rel);
    std::error_code ec;
    fs::create_directories(p.parent_path(), ec);
    if (ec) {
      throw IoError("cannot create " + p.parent_path().string() + ": " +
                    ec.message());
    }
    const fs::path tmp = p.string() + ".part";
    checkpoint::write_file(tmp.string(), bytes);
    fs::rename(tmp, p, ec);
    if (ec) throw IoError("cannot move " + tmp.string() + ": " + ec.message());
    entries_[rel] = {sha256_hex(bytes), bytes.size()};
  }

  void write_json(const std::string& rel, const ojson& j) {
    write(rel, j.dump(2) + "\n");
  }

  // Merges this command's artifacts into the manifest on disk.
  void finish() {
    std::map<std::string, std::pair<std::string, std::size_t>> all;
    const fs::path mp = path(kManifest);
    if (fs::exists(mp)) {
      try {
        const json j = json::parse(checkpoint::read_file(mp.string()));
        for (const auto& a : j.at("artifacts")) {
          all[a.at("path").get<std::string>()] = {
              a.at("sha256").get<std::string>(),
              a.at("bytes").get<std::size_t>()};
        }
      } catch (const json::exception& e) {
        throw ParseError("manifest " + mp.string() + ": " + e.what());
      }
    }
    for (const auto& [k, v] : entries_) all[k] = v;
    ojson arr = ojson::array();
    for (const auto& [k, v] : all) {
      arr.push_back({{"path", k}, {"sha256", v.first}, {"bytes", v.second}});
    }
    const ojson m = {{"artifacts", arr}};
    checkpoint::write_file(mp.string(), m.dump(2) + "\n");
  }

 private:
  fs::path dir_;
  std::map<std::string, std::pair<std::string, std::size_t>> entries_;
};

// ---------------------------------------------------------------------------
// Shared helpers
// ---------------------------------------------------------------------------

inline std::vector<std::string> read_lines(const std::string& path) {
  std::istringstream in(checkpoint::read_file(path));
  std::vector<std::string> out;
  std::string line;
  while (std::getline(in, line)) {
    auto t = text::trim(line);
    if (t.empty() || t.front() == '#') continue;
    out.emplace_back(t);
  }
  return out;
}

inline std::vector<corpus::OpinionRecord> load_records(const std::string& path) {
  if (!fs::exists(path)) throw IoError("no such file: " + path);
  return corpus::load_jsonl(path);
}

inline std::string records_jsonl(const std::vector<corpus::OpinionRecord>& rs) {
  std::string out;
  for (const auto& r : rs) out += corpus::to_jsonl_line(r) + "\n";
  return out;
}

inline std::vector<Trait> traits_present(
    const std::vector<corpus::OpinionRecord>& rs) {
  std::vector<Trait> out;
  for (Trait t : kAllTraits) {
    for (const auto& r : rs) {
      if (r.target_personality == t) {
        out.push_back(t);
        break;
      }
    }
  }
  return out;
}

inline std::vector<corpus::OpinionRecord> of_trait(
    const std::vector<corpus::OpinionRecord>& rs, Trait t) {
  std::vector<corpus::OpinionRecord> out;
  for (const auto& r : rs) {
    if (r.target_personality == t) out.push_back(r);
  }
  return out;
}

// Base weights the adapters are trained and evaluated against: projections
// rounded through NF4 when quantization is on, the checkpoint otherwise.
inline tinylm::Parameters working_base(const tinylm::Parameters& base,
                                       const RunConfig& cfg) {
  if (!cfg.quantize_base) return base;
  tinylm::Parameters w = base;
  const auto cb = peft::nf4_codebook();
  for (auto& layer : w.layers) {
    for (Matrix* m : {&layer.wq, &layer.wk, &layer.wv, &layer.wo, &layer.w_in,
                      &layer.w_out}) {
      *m = peft::dequantize(peft::quantize(*m, cfg.quant_block, cb));
    }
  }
  return w;
}

// Generated text up to the end-of-answer marker, trimmed. Byte-level
// sampling can stop mid-character, so the result is made well-formed.
inline std::string clean_generation(std::string_view g) {
  const std::size_t close = g.find("</s>");
  if (close != std::string_view::npos) g = g.substr(0, close);
  return unicode::sanitize_utf8(text::trim(g));
}

inline std::string adapter_path(const Outputs& o, Trait t) {
  return o.path("adapters/" + std::string(to_string(t)) + ".ckpt").string();
}

inline void require_file(const std::string& path, std::string_view what) {
  if (!fs::exists(path)) {
    throw IoError(std::string(what) + " not found: " + path);
  }
}

struct Context {
  RunConfig cfg;
  std::ostream& out;
  std::ostream& err;
};

inline std::unique_ptr<llm::ChatClient> client_for(const Context& ctx,
                                                   const std::string& backend) {
  llm::ClientConfig cc = ctx.cfg.client;
  if (!backend.empty()) cc.backend = llm::parse_backend_kind(backend);
  std::ostream& err = ctx.err;
  return llm::make_client(cc, ctx.cfg.seed, [&err](const std::string& m) {
    if (m.find("failed") != std::string::npos) err << "client: " << m << "\n";
  });
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

struct GenDataArgs {
  std::string topics_file;
  std::size_t per_trait = 100;
  std::string mode;  // empty: client.backend from the config
};

inline void cmd_gen_data(const Context& ctx, const GenDataArgs& a) {
  const auto topics = a.topics_file.empty() ? synthetic::default_topics()
                                            : read_lines(a.topics_file);
  if (topics.empty()) throw InvalidArgument("gen-data: no topics");
  if (a.per_trait < 1) throw InvalidArgument("gen-data: per-trait must be >= 1");
  auto client = client_for(ctx, a.mode);
  std::vector<corpus::OpinionRecord> records;
  for (Trait t : kAllTraits) {
    for (std::size_t i = 0; i < a.per_trait; ++i) {
      const std::string& topic = topics[i % topics.size()];
      // Repeat visits to a topic rotate the exemplars so the prompt differs.
      auto shots = corpus::default_exemplars();
      std::rotate(shots.begin(),
                  shots.begin() + static_cast<std::ptrdiff_t>(
                                      (i / topics.size()) % shots.size()),
                  shots.end());
      const std::string q = corpus::build_question(topic);
      const std::string prompt =
          corpus::build_generation_prompt(t, topic, q, shots);
      std::string answer(text::trim(client->complete(
          llm::user_request(ctx.cfg.client.model, prompt, 1.0))));
      corpus::OpinionRecord r{t, topic, q, std::move(answer)};
      corpus::validate(r);
      records.push_back(std::move(r));
    }
  }
  Outputs o(ctx.cfg.out);
  o.write("dataset.jsonl", records_jsonl(records));
  o.finish();
  for (const auto& [t, n] : corpus::count_by_trait(records)) {
    ctx.out << to_string(t) << ": " << n << "\n";
  }
  ctx.out << "wrote " << records.size() << " records to "
          << o.path("dataset.jsonl").string() << "\n";
}

struct SplitArgs {
  std::string data;
  double test_fraction = 0.2;
};

inline void cmd_split(const Context& ctx, const SplitArgs& a) {
  Outputs o(ctx.cfg.out);
  const std::string data =
      a.data.empty() ? o.path("dataset.jsonl").string() : a.data;
  const auto split =
      corpus::split_dataset(load_records(data), a.test_fraction, ctx.cfg.seed);
  o.write("train.jsonl", records_jsonl(split.train));
  o.write("test.jsonl", records_jsonl(split.test));
  o.finish();
  ctx.out << "train " << split.train.size() << ", test " << split.test.size()
          << "\n";
}

struct AnalyzeArgs {
  std::string data;
};

inline void cmd_analyze(const Context& ctx, const AnalyzeArgs& a) {
  Outputs o(ctx.cfg.out);
  const std::string data =
      a.data.empty() ? o.path("dataset.jsonl").string() : a.data;
  const auto records = load_records(data);
  std::vector<std::string> answers;
  for (const auto& r : records) answers.push_back(r.answer);

  ojson tfidf;
  std::string tfidf_csv = "trait,term,score\n";
  for (Trait t : traits_present(records)) {
    std::vector<std::string> docs;
    for (const auto& r : of_trait(records, t)) docs.push_back(r.answer);
    const auto terms = textstats::tfidf_rank(docs, ctx.cfg.top_terms);
    tfidf[std::string(to_string(t))] = textstats::to_json(terms);
    std::ostringstream os;
    os.precision(17);
    for (const auto& term : terms) {
      os << to_string(t) << ',' << term.term << ',' << term.score << '\n';
    }
    tfidf_csv += os.str();
  }

  textstats::LdaOptions lo;
  lo.num_topics = ctx.cfg.lda_topics;
  lo.iterations = ctx.cfg.lda_iterations;
  lo.seed = ctx.cfg.seed;
  const auto lda = textstats::lda_fit(answers, lo);

  corpus::DatasetSplit all;
  all.train = records;
  const auto freq = textstats::trait_word_frequencies(all);

  ojson j;
  j["documents"] = records.size();
  j["tfidf"] = tfidf;
  j["lda"] = textstats::to_json(lda, ctx.cfg.top_terms);
  j["word_frequencies"] = textstats::to_json(freq, ctx.cfg.top_terms);
  o.write_json("analysis.json", j);
  o.write("tfidf.csv", tfidf_csv);
  o.write("lda_topics.csv", textstats::to_csv(lda, ctx.cfg.top_terms));
  o.finish();
  ctx.out << "analyzed " << records.size() << " answers, " << lo.num_topics
          << " topics\n";
}

struct TrainClassifierArgs {
  std::string train;
  std::string test;
};

inline void cmd_train_classifier(const Context& ctx,
                                 const TrainClassifierArgs& a) {
  Outputs o(ctx.cfg.out);
  const std::string train =
      a.train.empty() ? o.path("train.jsonl").string() : a.train;
  std::string test = a.test;
  if (test.empty() && fs::exists(o.path("test.jsonl"))) {
    test = o.path("test.jsonl").string();
  }
  auto kc = ctx.cfg.classifier;
  kc.seed = ctx.cfg.seed;
  const auto model = classifier::train_classifier(load_records(train), kc);
  o.write_json("classifier.json", classifier::to_json(model));
  ctx.out << "trained on " << train << " (" << model.epochs_run
          << " epochs, vocabulary " << model.vocabulary.size() << ")\n";
  if (!test.empty()) {
    const auto rep = classifier::evaluate(model, load_records(test));
    o.write_json("classifier_eval.json", classifier::to_json(rep));
    o.write("confusion.csv", classifier::confusion_csv(rep.confusion));
    ctx.out << "test accuracy " << rep.accuracy << ", weighted F1 "
            << rep.weighted_f1 << "\n";
  }
  o.finish();
}

inline void cmd_pretrain(const Context& ctx) {
  const auto& c = ctx.cfg;
  auto topics = synthetic::default_topics();
  topics.resize(std::min(topics.size(), c.pretrain.topics));
  synthetic::LatentCorpusOptions lo;
  lo.documents = c.pretrain.documents;
  const auto docs = synthetic::latent_corpus(c.seed, lo, topics);
  tinylm::TrainConfig tc;
  tc.optimizer.kind = OptimizerKind::Adam;
  tc.optimizer.learning_rate = c.pretrain.learning_rate;
  tc.steps = c.pretrain.steps;
  tc.batch_size = c.pretrain.batch_size;
  tc.seed = c.seed;
  tc.evaluate_corpus = false;
  std::ostream& err = ctx.err;
  const int every = std::max(1, tc.steps / 10);
  auto r = tinylm::train_lm(tinylm::init_parameters(c.model, c.seed), docs, tc,
                            [&](int step, double loss) {
                              if (step % every == 0) {
                                err << "pretrain step " << step << " loss "
                                    << loss << "\n";
                              }
                            });
  Outputs o(c.out);
  o.write("base.ckpt", checkpoint::serialize(r.params));
  ojson j;
  j["model"] = tinylm::to_json(c.model);
  j["documents"] = docs.size();
  j["steps"] = r.losses.size();
  j["first_loss"] = r.losses.front();
  j["last_loss"] = r.losses.back();
  j["losses"] = r.losses;
  o.write_json("pretrain.json", j);
  o.finish();
  ctx.out << "pretrained " << r.params.num_parameters() << " parameters, loss "
          << r.losses.front() << " -> " << r.losses.back() << "\n";
}

struct FinetuneArgs {
  std::string base;
  std::string train;
  std::vector<std::string> traits;  // empty: every trait in the data
};

inline void cmd_finetune(const Context& ctx, const FinetuneArgs& a) {
  Outputs o(ctx.cfg.out);
  const std::string base_path = a.base.empty() ? o.path("base.ckpt").string() : a.base;
  const std::string train =
      a.train.empty() ? o.path("train.jsonl").string() : a.train;
  require_file(base_path, "base checkpoint");
  const auto base = checkpoint::load_model(base_path);
  const auto work = working_base(base, ctx.cfg);
  const auto records = load_records(train);
  std::vector<Trait> traits;
  for (const auto& s : a.traits) traits.push_back(parse_trait(s));
  if (traits.empty()) traits = traits_present(records);
  auto fc = ctx.cfg.finetune;
  fc.seed = ctx.cfg.seed;
  fc = fc.scaled_to(base.config);
  for (Trait t : traits) {
    const auto data = of_trait(records, t);
    if (data.empty()) {
      throw InvalidArgument("finetune: no training records for " +
                            std::string(to_string(t)));
    }
    const auto r = peft::finetune(work, data, fc);
    const std::string name(to_string(t));
    o.write("adapters/" + name + ".ckpt", checkpoint::serialize(r.adapters));
    ojson j;
    j["trait"] = name;
    j["config"] = peft::to_json(fc);
    j["quantize_base"] = ctx.cfg.quantize_base;
    j["records"] = data.size();
    j["steps"] = r.steps;
    j["initial_loss"] = r.initial_loss;
    j["final_loss"] = r.final_loss;
    j["losses"] = r.losses;
    o.write_json("finetune_" + name + ".json", j);
    ctx.out << name << ": loss " << r.initial_loss << " -> " << r.final_loss
            << " over " << r.steps << " steps\n";
  }
  o.finish();
}

enum class Method { Peft, Ike, Base, Prompted };

inline Method parse_method(std::string_view s) {
  if (s == "peft") return Method::Peft;
  if (s == "ike") return Method::Ike;
  if (s == "base") return Method::Base;
  if (s == "prompted") return Method::Prompted;
  throw InvalidArgument("unknown method '" + std::string(s) +
                        "' (peft, ike, base or prompted)");
}

struct EvaluateArgs {
  std::string base;
  std::string adapters_dir;
  std::string test;
  std::string classifier;
  std::string method = "peft";
  std::string judge = "off";  // off or a client backend
};

inline void cmd_evaluate(const Context& ctx, const EvaluateArgs& a) {
  Outputs o(ctx.cfg.out);
  const Method method = parse_method(a.method);
  const std::string test_path =
      a.test.empty() ? o.path("test.jsonl").string() : a.test;
  const std::string clf_path =
      a.classifier.empty() ? o.path("classifier.json").string() : a.classifier;
  if (!fs::exists(clf_path)) {
    throw InvalidArgument("evaluate: classifier model missing: " + clf_path);
  }
  const auto clf =
      classifier::classifier_from_json(json::parse(checkpoint::read_file(clf_path)));
  const auto test = load_records(test_path);
  const bool judging = a.judge != "off";

  std::optional<tinylm::Parameters> work;
  if (method == Method::Peft || method == Method::Base) {
    const std::string bp = a.base.empty() ? o.path("base.ckpt").string() : a.base;
    require_file(bp, "base checkpoint");
    work = working_base(checkpoint::load_model(bp), ctx.cfg);
  }
  std::unique_ptr<llm::ChatClient> gen_client;
  if (method == Method::Ike || method == Method::Prompted) {
    gen_client = client_for(ctx, "");
  }
  std::unique_ptr<llm::ChatClient> judge;
  if (judging) judge = client_for(ctx, a.judge);
  auto ask = [&](llm::ChatClient& c, const std::string& prompt, double temp) {
    return c.complete(llm::user_request(ctx.cfg.client.model, prompt, temp));
  };

  const std::string model_name =
      work ? "toy-d" + std::to_string(work->config.d_model)
           : ctx.cfg.client.model;
  std::vector<metrics::MetricReport> reports;
  std::string generations;
  for (Trait t : traits_present(test)) {
    const std::string name(to_string(t));
    const auto items = of_trait(test, t);
    std::optional<tinylm::Parameters> merged;
    if (method == Method::Peft) {
      const std::string ap =
          a.adapters_dir.empty()
              ? adapter_path(o, t)
              : (fs::path(a.adapters_dir) / (name + ".ckpt")).string();
      require_file(ap, "adapters");
      merged = peft::merge_adapters(*work, checkpoint::load_adapters(ap));
    }
    std::vector<std::string> gens;
    std::vector<Trait> preds;
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& r = items[i];
      std::string g;
      if (method == Method::Peft || method == Method::Base) {
        tinylm::SamplingConfig sc;
        sc.temperature = ctx.cfg.sampling.temperature;
        sc.max_tokens = ctx.cfg.sampling.max_tokens;
        sc.seed = mix_seed(ctx.cfg.seed, name + "|" + std::to_string(i));
        g = clean_generation(tinylm::sample(method == Method::Peft ? *merged : *work,
                                            corpus::format_sft_prompt(r.question),
                                            sc));
      } else if (method == Method::Ike) {
        g = clean_generation(ask(*gen_client,
                                 corpus::build_ike_prompt(t, r.edit_topic, r.question),
                                 ctx.cfg.sampling.temperature));
      } else {
        g = clean_generation(ask(
            *gen_client, corpus::build_generation_prompt(t, r.edit_topic, r.question),
            ctx.cfg.sampling.temperature));
      }
      preds.push_back(classifier::predict(clf, g).trait);
      ojson line = {{"trait", name}, {"question", r.question}, {"generation", g},
                    {"predicted", to_string(preds.back())}};
      generations += line.dump() + "\n";
      gens.push_back(std::move(g));
    }
    metrics::MetricReport rep;
    rep.trait = t;
    rep.method = a.method;
    rep.model = model_name;
    rep.ta = metrics::trait_alignment(preds, std::vector<Trait>(preds.size(), t));
    rep.esr = metrics::esr(gens);
    if (judging) {
      std::vector<std::pair<int, int>> pairs;
      std::vector<std::vector<std::string>> tokens;
      for (std::size_t i = 0; i < items.size(); ++i) {
        const int orig = metrics::parse_judge_response(
                             ask(*judge, metrics::build_pae_prompt(t, items[i].answer), 0.0), t)
                             .score;
        const int gen = metrics::parse_judge_response(
                            ask(*judge, metrics::build_pae_prompt(t, gens[i]), 0.0), t)
                            .score;
        pairs.emplace_back(orig, gen);
        tokens.push_back(metrics::parse_icl_tokens(ask(
            *judge,
            metrics::build_icl_prompt(t, corpus::format_sft_prompt(items[i].question),
                                      gens[i]),
            0.0)));
      }
      rep.pae = metrics::pae(pairs);
      rep.top_tokens = metrics::aggregate_icl_tokens(tokens).ranking;
    }
    ctx.out << name << ": TA " << rep.ta << ", ESR " << rep.esr.esr;
    if (rep.pae) ctx.out << ", PAE " << *rep.pae;
    ctx.out << "\n";
    reports.push_back(std::move(rep));
  }
  ojson arr = ojson::array();
  for (const auto& r : reports) arr.push_back(metrics::to_json(r));
  o.write_json("eval_" + a.method + ".json", {{"reports", arr}});
  o.write("eval_" + a.method + ".csv", metrics::to_csv(reports));
  o.write("generations_" + a.method + ".jsonl", generations);
  o.finish();
}

struct InterpArgs {
  std::string base;
  std::string tuned;     // full tuned checkpoint
  std::string adapters;  // or adapters applied to the base
  std::string prompts_file;
  bool dump_traces = false;
  bool max_over_positions = false;  // default: final position only
  int layer = -1;                   // negative counts from the last block
};

inline void cmd_interp(const Context& ctx, const InterpArgs& a) {
  Outputs o(ctx.cfg.out);
  const std::string bp = a.base.empty() ? o.path("base.ckpt").string() : a.base;
  require_file(bp, "base checkpoint");
  const auto base = checkpoint::load_model(bp);
  tinylm::Parameters tuned = base;
  std::optional<peft::AdapterSet> adapters;
  if (!a.tuned.empty()) {
    require_file(a.tuned, "tuned checkpoint");
    tuned = checkpoint::load_model(a.tuned);
  }
  if (!a.adapters.empty()) {
    require_file(a.adapters, "adapters");
    adapters = checkpoint::load_adapters(a.adapters);
  }
  if (!(base.config == tuned.config)) {
    throw InvalidArgument("interp: base and tuned configurations differ");
  }
  std::vector<interp::ProbePrompt> prompts;
  if (a.prompts_file.empty()) {
    prompts = interp::default_probe_prompt_set();
  } else {
    const auto lines = read_lines(a.prompts_file);
    for (std::size_t i = 0; i < lines.size(); ++i) {
      prompts.push_back({"p" + std::to_string(i), lines[i]});
    }
  }
  if (prompts.empty()) throw InvalidArgument("interp: no prompts");
  const peft::AdapterSet* ad = adapters ? &*adapters : nullptr;
  tinylm::TraceOptions trace;
  trace.layer = a.layer;
  if (a.max_over_positions) trace.mode = tinylm::TraceMode::MaxOverPositions;
  std::vector<interp::ActivationComparison> rows;
  std::vector<std::string> texts, ids;
  std::vector<std::vector<double>> traces;
  for (const auto& p : prompts) {
    auto c = interp::compare_models(base, tuned, p.text,
                                    ctx.cfg.interp_tolerance, ad, trace);
    c.prompt_id = p.id;
    rows.push_back(c);
    texts.push_back(p.text);
    ids.push_back(p.id);
    if (a.dump_traces) {
      traces.push_back(
          interp::capture_activations(base, p.text, nullptr, trace));
      traces.push_back(interp::capture_activations(tuned, p.text, ad, trace));
    }
  }
  const auto cons_base =
      interp::consistency_across_prompts(base, texts, nullptr, ids, trace);
  const auto cons_tuned =
      interp::consistency_across_prompts(tuned, texts, ad, ids, trace);
  ojson arr = ojson::array();
  std::map<std::string, std::size_t> tally;
  for (const auto& r : rows) {
    arr.push_back(interp::to_json(r));
    ++tally[std::string(interp::to_string(r.verdict))];
  }
  ojson j;
  j["tolerance"] = ctx.cfg.interp_tolerance;
  j["position"] = a.max_over_positions ? "max" : "final";
  j["layer"] = a.layer;
  j["comparisons"] = arr;
  j["consistency_base"] = interp::to_json(cons_base);
  j["consistency_tuned"] = interp::to_json(cons_tuned);
  j["verdicts"] = tally;
  o.write_json("interp.json", j);
  o.write("interp.csv", interp::to_csv(rows));
  std::vector<double> bv, tv;
  for (const auto& r : rows) {
    bv.push_back(r.base_top.activation);
    tv.push_back(r.tuned_top.activation);
  }
  o.write("interp.svg",
          svg::grouped_bar_chart("Top neuron activation per prompt", ids,
                                 {{"base", bv}, {"tuned", tv}}));
  if (a.dump_traces) o.write("traces.bin", interp::encode_traces(traces));
  o.finish();
  for (const auto& [v, n] : tally) ctx.out << v << ": " << n << "\n";
}

struct InjectArgs {
  std::string base;
  long neuron = -1;  // negative: the base model's argmax on the neutral prompt
  double boost = 5.0;
  std::string name = "injected";
};

inline void cmd_inject(const Context& ctx, const InjectArgs& a) {
  Outputs o(ctx.cfg.out);
  const std::string bp = a.base.empty() ? o.path("base.ckpt").string() : a.base;
  require_file(bp, "base checkpoint");
  const auto base = checkpoint::load_model(bp);
  const auto prompts = interp::default_probe_prompts();
  std::size_t neuron = 0;
  if (a.neuron < 0) {
    neuron = interp::top_neurons(
                 interp::capture_activations(base, interp::kNeutralPrompt), 1)[0]
                 .index;
  } else {
    neuron = static_cast<std::size_t>(a.neuron);
  }
  const auto set = interp::amplifying_adapter(base, prompts, neuron, a.boost);
  o.write("adapters/" + a.name + ".ckpt", checkpoint::serialize(set));
  o.finish();
  ctx.out << "neuron " << neuron << " boosted by " << a.boost << "\n";
}

struct ReportArgs {
  std::vector<std::string> inputs;
};

inline void cmd_report(const Context& ctx, const ReportArgs& a) {
  Outputs o(ctx.cfg.out);
  std::vector<std::string> inputs = a.inputs;
  if (inputs.empty()) {
    for (const auto& e : fs::directory_iterator(o.dir())) {
      const auto f = e.path().filename().string();
      if (f.starts_with("eval_") && f.ends_with(".json")) {
        inputs.push_back(e.path().string());
      }
    }
    std::sort(inputs.begin(), inputs.end());
  }
  if (inputs.empty()) throw InvalidArgument("report: no evaluation reports");
  std::vector<metrics::MetricReport> reps;
  for (const auto& in : inputs) {
    json j;
    try {
      j = json::parse(checkpoint::read_file(in));
      for (const auto& r : j.at("reports")) {
        reps.push_back(metrics::report_from_json(r));
      }
    } catch (const json::exception& e) {
      throw ParseError("report " + in + ": " + e.what());
    }
  }
  o.write("report.csv", metrics::to_csv(reps));
  // One series per method, traits as groups.
  std::vector<std::string> groups;
  for (Trait t : kAllTraits) groups.emplace_back(to_string(t));
  std::map<std::string, std::pair<std::vector<double>, std::vector<double>>> by;
  for (const auto& r : reps) {
    auto& [ta, esr] = by[r.method + " (" + r.model + ")"];
    ta.resize(kNumTraits, 0.0);
    esr.resize(kNumTraits, 0.0);
    ta[index_of(r.trait)] = r.ta;
    esr[index_of(r.trait)] = r.esr.esr;
  }
  std::vector<svg::Series> ta_s, esr_s;
  for (const auto& [k, v] : by) {
    ta_s.push_back({k, v.first});
    esr_s.push_back({k, v.second});
  }
  o.write("report_ta.svg", svg::grouped_bar_chart("Trait alignment", groups, ta_s));
  o.write("report_esr.svg",
          svg::grouped_bar_chart("Emoji-to-sentence ratio", groups, esr_s));
  o.finish();
  ctx.out << "aggregated " << reps.size() << " rows from " << inputs.size()
          << " report(s)\n";
}

// ---------------------------------------------------------------------------
// Entry point
// ---------------------------------------------------------------------------

inline int exit_code_for(const std::exception& e) {
  if (dynamic_cast<const llm::ClientError*>(&e)) return kClient;
  if (dynamic_cast<const DivergenceError*>(&e)) return kDivergence;
  if (dynamic_cast<const IoError*>(&e)) return kIo;
  if (dynamic_cast<const ParseError*>(&e)) return kData;
  if (dynamic_cast<const InvalidArgument*>(&e)) return kUsage;
  return kInternal;
}

inline int run(int argc, const char* const* argv, std::ostream& out,
               std::ostream& err) {
  CLI::App app{"Personality-trait manipulation workbench for a toy language model"};
  app.require_subcommand(1);
  app.fallthrough();
  std::string config_path, out_dir;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Seed for every stage");
  app.add_option("--config", config_path, "JSON run configuration")
      ->check(CLI::ExistingFile);
  auto* out_opt = app.add_option("--out", out_dir, "Output directory");

  GenDataArgs gen;
  auto* s_gen = app.add_subcommand("gen-data", "Generate the opinion QA dataset");
  s_gen->add_option("--topics", gen.topics_file, "Topics file, one per line")
      ->check(CLI::ExistingFile);
  s_gen->add_option("--per-trait", gen.per_trait, "Records per trait");
  s_gen->add_option("--mode", gen.mode, "stub, live or replay");

  SplitArgs split;
  auto* s_split = app.add_subcommand("split", "Stratified train/test split");
  s_split->add_option("--data", split.data, "Dataset JSONL");
  s_split->add_option("--test-fraction", split.test_fraction, "Test share")
      ->check(CLI::Range(0.0, 1.0));

  AnalyzeArgs an;
  auto* s_an = app.add_subcommand("analyze", "TF-IDF, LDA and word frequencies");
  s_an->add_option("--data", an.data, "Dataset JSONL");

  TrainClassifierArgs tcl;
  auto* s_tc = app.add_subcommand("train-classifier", "Fit the trait classifier");
  s_tc->add_option("--train", tcl.train, "Training JSONL");
  s_tc->add_option("--test", tcl.test, "Test JSONL for an evaluation report");

  auto* s_pre = app.add_subcommand("pretrain", "Pretrain the toy language model");

  FinetuneArgs ft;
  auto* s_ft = app.add_subcommand("finetune", "Train one adapter set per trait");
  s_ft->add_option("--base", ft.base, "Base checkpoint");
  s_ft->add_option("--train", ft.train, "Training JSONL");
  s_ft->add_option("--trait", ft.traits, "Trait(s) to tune (default: all)");

  EvaluateArgs ev;
  auto* s_ev = app.add_subcommand("evaluate", "Generate answers and score them");
  s_ev->add_option("--base", ev.base, "Base checkpoint");
  s_ev->add_option("--adapters", ev.adapters_dir, "Directory of <Trait>.ckpt");
  s_ev->add_option("--test", ev.test, "Test JSONL");
  s_ev->add_option("--classifier", ev.classifier, "Classifier JSON");
  s_ev->add_option("--method", ev.method, "peft, ike, base or prompted");
  s_ev->add_option("--judge", ev.judge, "off, stub, live or replay");

  InterpArgs ip;
  auto* s_ip = app.add_subcommand("interp", "Compare neuron activations");
  s_ip->add_option("--base", ip.base, "Base checkpoint");
  s_ip->add_option("--tuned", ip.tuned, "Tuned model checkpoint");
  s_ip->add_option("--adapters", ip.adapters, "Adapters applied to the base");
  s_ip->add_option("--prompts", ip.prompts_file, "Prompts file, one per line")
      ->check(CLI::ExistingFile);
  s_ip->add_flag("--dump-traces", ip.dump_traces, "Write raw activations");
  s_ip->add_flag("--max-over-positions", ip.max_over_positions,
                 "Read each neuron's maximum over positions, not the last one");
  s_ip->add_option("--layer", ip.layer, "Traced block; negative counts from the end");

  InjectArgs inj;
  auto* s_inj = app.add_subcommand("inject", "Build a neuron-amplifying adapter");
  s_inj->add_option("--base", inj.base, "Base checkpoint");
  s_inj->add_option("--neuron", inj.neuron, "Neuron index (default: base argmax)");
  s_inj->add_option("--boost", inj.boost, "Pre-activation increase");
  s_inj->add_option("--name", inj.name, "Adapter file stem");

  ReportArgs rep;
  auto* s_rep = app.add_subcommand("report", "Aggregate evaluations into CSV/SVG");
  s_rep->add_option("--inputs", rep.inputs, "Evaluation JSON files");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kOk : kUsage;
  }

  try {
    RunConfig cfg;
    if (!config_path.empty()) cfg = load_config(config_path, cfg);
    if (seed_opt->count()) cfg.seed = seed;
    if (out_opt->count()) cfg.out = out_dir;
    const Context ctx{cfg, out, err};
    if (s_gen->parsed()) cmd_gen_data(ctx, gen);
    if (s_split->parsed()) cmd_split(ctx, split);
    if (s_an->parsed()) cmd_analyze(ctx, an);
    if (s_tc->parsed()) cmd_train_classifier(ctx, tcl);
    if (s_pre->parsed()) cmd_pretrain(ctx);
    if (s_ft->parsed()) cmd_finetune(ctx, ft);
    if (s_ev->parsed()) cmd_evaluate(ctx, ev);
    if (s_ip->parsed()) cmd_interp(ctx, ip);
    if (s_inj->parsed()) cmd_inject(ctx, inj);
    if (s_rep->parsed()) cmd_report(ctx, rep);
  } catch (const std::exception& e) {
    err << "error: " << e.what() << "\n";
    return exit_code_for(e);
  }
  return kOk;
}

}  // namespace traitlab::cli
