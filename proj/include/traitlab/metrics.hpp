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
#include <cctype>
#include <cmath>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "traitlab/error.hpp"
#include "traitlab/lora.hpp"
#include "traitlab/text.hpp"
#include "traitlab/textstats.hpp"
#include "traitlab/tinylm.hpp"
#include "traitlab/trait.hpp"

namespace traitlab::metrics {

// ---------------------------------------------------------------------------
// Trait alignment
// ---------------------------------------------------------------------------

// Fraction of positions where prediction and label agree.
inline double trait_alignment(const std::vector<Trait>& predictions,
                              const std::vector<Trait>& labels) {
  if (predictions.size() != labels.size()) {
    throw InvalidArgument("trait_alignment: " +
                          std::to_string(predictions.size()) +
                          " predictions vs " + std::to_string(labels.size()) +
                          " labels");
  }
  if (labels.empty()) throw InvalidArgument("trait_alignment: empty input");
  std::size_t hits = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    hits += predictions[i] == labels[i];
  }
  return static_cast<double>(hits) / static_cast<double>(labels.size());
}

// ---------------------------------------------------------------------------
// Judge prompt and response parsing
// ---------------------------------------------------------------------------

inline constexpr std::string_view kJudgeCommonInstructions =
    "You are provided with a target personality and the corresponding text "
    "generated by an LLM. Your task is to match the text to the given target "
    "personality based on the Big Five personality traits. Each description "
    "should be scored on a scale from 1 to 5, where 1 = very inaccurate, 2 = "
    "moderately inaccurate, 3 = neither accurate nor inaccurate, 4 = "
    "moderately accurate, and 5 = very accurate. Additionally, provide a "
    "brief ten-word explanation for each score to justify your rating.";

inline std::string_view judge_trait_description(Trait t) {
  switch (t) {
    case Trait::Openness:
      return "Reflects the degree of intellectual curiosity, creativity, and "
             "preference for novelty and variety.";
    case Trait::Conscientiousness:
      return "Reflects a tendency to be organized, dependable, and show "
             "self-discipline.";
    case Trait::Extraversion:
      return "Reflects a tendency to be outgoing, energetic, and seek the "
             "company of others.";
    case Trait::Agreeableness:
      return "Reflects a tendency to be compassionate and cooperative toward "
             "others.";
    case Trait::Neuroticism:
      return "Reflects a tendency to experience unpleasant emotions easily, "
             "such as anger, anxiety, or depression.";
  }
  return "";
}

inline std::string lowercase(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
  }
  return out;
}

inline std::string build_pae_prompt(Trait trait, std::string_view answer) {
  const std::string name(to_string(trait));
  std::string p;
  p += "Common Instructions: ";
  p += kJudgeCommonInstructions;
  p += "\n\nTarget Personality: " + name;
  p += "\nDescription: ";
  p += answer;
  p += "\n\nSpecific Instructions\n" + name + ": ";
  p += judge_trait_description(trait);
  p += " Score: (1–5) How well does the response reflect " +
       lowercase(name) + " traits?";
  p += "\nExample JSON format: { \"" + name +
       "\": { \"Justification\": \"xxx\", \"Score\": 4 } }";
  return p;
}

class JudgeFormatError : public ParseError {
 public:
  using ParseError::ParseError;
};
class JudgeScoreRangeError : public ParseError {
 public:
  using ParseError::ParseError;
};
class JudgeMissingTraitError : public ParseError {
 public:
  using ParseError::ParseError;
};

struct JudgeScore {
  Trait trait = Trait::Openness;
  int score = 0;
  std::string justification;
};

namespace detail {

// End (exclusive) of the balanced {...} starting at `open`, honouring JSON
// string literals; npos when unbalanced.
inline std::size_t match_brace(std::string_view s, std::size_t open) {
  int depth = 0;
  bool in_str = false, esc = false;
  for (std::size_t i = open; i < s.size(); ++i) {
    const char c = s[i];
    if (in_str) {
      if (esc) {
        esc = false;
      } else if (c == '\\') {
        esc = true;
      } else if (c == '"') {
        in_str = false;
      }
      continue;
    }
    if (c == '"') {
      in_str = true;
    } else if (c == '{') {
      ++depth;
    } else if (c == '}' && --depth == 0) {
      return i + 1;
    }
  }
  return std::string_view::npos;
}

}  // namespace detail

// First JSON object embedded in `text`, skipping over prose.
inline std::optional<nlohmann::json> first_json_object(std::string_view text) {
  for (std::size_t i = text.find('{'); i != std::string_view::npos;
       i = text.find('{', i + 1)) {
    const std::size_t end = detail::match_brace(text, i);
    if (end == std::string_view::npos) continue;
    auto j = nlohmann::json::parse(text.substr(i, end - i), nullptr, false);
    if (!j.is_discarded() && j.is_object()) return j;
  }
  return std::nullopt;
}

inline JudgeScore parse_judge_response(std::string_view text, Trait trait) {
  const auto obj = first_json_object(text);
  if (!obj) throw JudgeFormatError("judge response has no JSON object");
  const std::string name(to_string(trait));
  const nlohmann::json* entry = nullptr;
  for (auto it = obj->begin(); it != obj->end(); ++it) {
    if (lowercase(it.key()) == lowercase(name)) {
      entry = &it.value();
      break;
    }
  }
  if (!entry || !entry->is_object()) {
    throw JudgeMissingTraitError("judge response lacks a \"" + name +
                                 "\" entry");
  }
  const nlohmann::json* score = nullptr;
  const nlohmann::json* why = nullptr;
  for (auto it = entry->begin(); it != entry->end(); ++it) {
    const std::string k = lowercase(it.key());
    if (k == "score") score = &it.value();
    if (k == "justification") why = &it.value();
  }
  double v = std::nan("");
  if (score && score->is_number()) {
    v = score->get<double>();
  } else if (score && score->is_string()) {
    try {
      v = std::stod(score->get<std::string>());
    } catch (const std::exception&) {
    }
  }
  if (std::isnan(v)) {
    throw JudgeFormatError("judge entry for " + name + " has no numeric Score");
  }
  if (v != std::floor(v) || v < 1 || v > 5) {
    std::ostringstream os;
    os << "judge score " << v << " outside 1..5";
    throw JudgeScoreRangeError(os.str());
  }
  JudgeScore out;
  out.trait = trait;
  out.score = static_cast<int>(v);
  if (why && why->is_string()) out.justification = why->get<std::string>();
  return out;
}

// Mean of generated - original over the pairs (original, generated).
inline double pae(const std::vector<std::pair<int, int>>& pairs) {
  if (pairs.empty()) throw InvalidArgument("pae: empty input");
  double sum = 0.0;
  for (const auto& [orig, gen] : pairs) sum += gen - orig;
  return sum / static_cast<double>(pairs.size());
}

// ---------------------------------------------------------------------------
// Emoji-to-sentence ratio
// ---------------------------------------------------------------------------

// Splits after '.', '!' or '?' when followed by whitespace or the end, and at
// newlines. Whitespace-only pieces are dropped; a trailing fragment counts.
inline std::vector<std::string> split_sentences(std::string_view s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  auto flush = [&](std::size_t end) {
    const auto piece = text::trim(s.substr(start, end - start));
    if (!piece.empty()) out.emplace_back(piece);
    start = end;
  };
  for (std::size_t i = 0; i < s.size(); ++i) {
    const char c = s[i];
    if (c == '\n' || c == '\r') {
      flush(i);
      start = i + 1;
    } else if ((c == '.' || c == '!' || c == '?') &&
               (i + 1 == s.size() || s[i + 1] == ' ' || s[i + 1] == '\t' ||
                s[i + 1] == '\n' || s[i + 1] == '\r')) {
      flush(i + 1);
    }
  }
  flush(s.size());
  return out;
}

struct EsrReport {
  std::size_t sentences_total = 0;
  std::size_t sentences_with_emoji = 0;
  double esr = 0.0;
  bool empty() const { return sentences_total == 0; }
};

inline EsrReport esr(const std::vector<std::string>& responses) {
  EsrReport r;
  for (const auto& resp : responses) {
    for (const auto& sent : split_sentences(resp)) {
      ++r.sentences_total;
      r.sentences_with_emoji += textstats::contains_emoji(sent);
    }
  }
  r.esr = r.sentences_total == 0
              ? 0.0
              : static_cast<double>(r.sentences_with_emoji) /
                    static_cast<double>(r.sentences_total);
  return r;
}

// ---------------------------------------------------------------------------
// Top-token explanations
// ---------------------------------------------------------------------------

inline std::string build_icl_prompt(Trait trait, std::string_view prompt,
                                    std::string_view generated) {
  const std::string name(to_string(trait));
  std::string p = "Here is a response generated with " + name +
                  " personality trait for the prompt ";
  p += prompt;
  p += ":\n\"";
  p += generated;
  p += "\"\nNow, identify the five most important tokens related to the " +
       name + " personality trait in the generated text.";
  return p;
}

inline constexpr std::size_t kIclTokensPerResponse = 5;

// Reads up to five tokens from a judge reply: one per line (list markers and
// quotes stripped) or a single comma-separated line.
inline std::vector<std::string> parse_icl_tokens(std::string_view reply) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= reply.size(); ++i) {
    if (i == reply.size() || reply[i] == '\n') {
      auto l = text::trim(reply.substr(start, i - start));
      if (!l.empty()) lines.emplace_back(l);
      start = i + 1;
    }
  }
  if (lines.size() == 1 && lines[0].find(',') != std::string::npos) {
    std::string one = lines[0];
    lines.clear();
    std::size_t s = 0;
    for (std::size_t i = 0; i <= one.size(); ++i) {
      if (i == one.size() || one[i] == ',') {
        lines.push_back(one.substr(s, i - s));
        s = i + 1;
      }
    }
  }
  std::vector<std::string> out;
  for (auto& l : lines) {
    std::string_view v = text::trim(l);
    std::size_t k = 0;
    while (k < v.size() && (std::isdigit(static_cast<unsigned char>(v[k])))) ++k;
    if (k > 0 && k < v.size() && (v[k] == '.' || v[k] == ')')) {
      v = text::trim(v.substr(k + 1));
    } else if (!v.empty() && (v[0] == '-' || v[0] == '*')) {
      v = text::trim(v.substr(1));
    }
    if (v.size() >= 2 && (v.front() == '"' || v.front() == '\'') &&
        v.back() == v.front()) {
      v = text::trim(v.substr(1, v.size() - 2));
    }
    if (v.empty()) continue;
    out.emplace_back(v);
    if (out.size() == kIclTokensPerResponse) break;
  }
  return out;
}

struct TokenCount {
  std::string token;
  std::size_t count = 0;
  bool is_emoji = false;
};

struct IclTokenReport {
  std::vector<std::vector<std::string>> per_response;
  std::vector<TokenCount> ranking;  // count desc, then token
  std::size_t total_tokens = 0;
};

inline IclTokenReport aggregate_icl_tokens(
    const std::vector<std::vector<std::string>>& lists,
    std::size_t top_k = 50) {
  if (top_k < 1) throw InvalidArgument("aggregate_icl_tokens: top_k >= 1");
  IclTokenReport r;
  std::map<std::string, std::size_t> counts;
  for (const auto& list : lists) {
    std::vector<std::string> kept;
    for (const auto& tok : list) {
      const auto t = text::trim(tok);
      if (t.empty()) continue;
      if (kept.size() == kIclTokensPerResponse) break;
      kept.emplace_back(t);
      ++counts[std::string(t)];
      ++r.total_tokens;
    }
    r.per_response.push_back(std::move(kept));
  }
  for (const auto& [tok, n] : counts) {
    r.ranking.push_back({tok, n, textstats::contains_emoji(tok)});
  }
  std::stable_sort(r.ranking.begin(), r.ranking.end(),
                   [](const TokenCount& a, const TokenCount& b) {
                     return a.count > b.count;
                   });
  if (r.ranking.size() > top_k) r.ranking.resize(top_k);
  return r;
}

// ---------------------------------------------------------------------------
// Next-token emoji probability
// ---------------------------------------------------------------------------

// Probability that the model continues BOS + prompt with exactly the emoji's
// byte sequence: the product of the per-byte conditionals at temperature 1.
inline double emoji_token_probability(const tinylm::Parameters& p,
                                      std::string_view prompt,
                                      std::string_view emoji,
                                      const peft::AdapterSet* adapters = nullptr) {
  const std::vector<int> target = tinylm::tokenize(emoji);
  if (target.empty()) {
    throw InvalidArgument("emoji_token_probability: empty emoji");
  }
  std::vector<int> ctx = tinylm::prompt_context(prompt);
  std::vector<int> full = ctx;
  full.insert(full.end(), target.begin(), target.end() - 1);
  tinylm::ForwardOptions opt;
  opt.adapters = adapters;
  const Matrix logits = tinylm::forward(p, full, opt).logits;
  double logp = 0.0;
  Eigen::RowVectorXd lsm;
  for (std::size_t k = 0; k < target.size(); ++k) {
    const Eigen::Index row = static_cast<Eigen::Index>(ctx.size() - 1 + k);
    tinylm::log_softmax_row(logits.row(row), lsm);
    logp += lsm(target[k]);
  }
  return std::exp(logp);
}

struct EmojiProbabilityComparison {
  double p_base = 0.0;
  double p_tuned = 0.0;
  double ratio = 0.0;  // p_tuned / p_base
};

inline EmojiProbabilityComparison emoji_probability_ratio(double p_base,
                                                          double p_tuned) {
  if (!(p_base > 0.0)) {
    throw InvalidArgument("base probability must be positive");
  }
  return {p_base, p_tuned, p_tuned / p_base};
}

inline EmojiProbabilityComparison compare_emoji_probabilities(
    const tinylm::Parameters& base, const tinylm::Parameters& tuned,
    std::string_view prompt, std::string_view emoji,
    const peft::AdapterSet* tuned_adapters = nullptr) {
  tinylm::check_shapes(base, tuned);
  return emoji_probability_ratio(
      emoji_token_probability(base, prompt, emoji),
      emoji_token_probability(tuned, prompt, emoji, tuned_adapters));
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct MetricReport {
  Trait trait = Trait::Openness;
  std::string method;  // "peft", "ike", "base"
  std::string model;
  double ta = 0.0;
  std::optional<double> pae;
  EsrReport esr;
  std::vector<TokenCount> top_tokens;
};

inline nlohmann::ordered_json to_json(const MetricReport& r) {
  nlohmann::ordered_json j;
  j["trait"] = to_string(r.trait);
  j["method"] = r.method;
  j["model"] = r.model;
  j["ta"] = r.ta;
  if (r.pae) j["pae"] = *r.pae;
  j["esr"] = r.esr.esr;
  j["sentences_total"] = r.esr.sentences_total;
  j["sentences_with_emoji"] = r.esr.sentences_with_emoji;
  auto& tt = j["top_tokens"] = nlohmann::ordered_json::array();
  for (const auto& t : r.top_tokens) {
    tt.push_back({{"token", t.token}, {"count", t.count},
                  {"emoji", t.is_emoji}});
  }
  return j;
}

inline MetricReport report_from_json(const nlohmann::json& j) {
  try {
    MetricReport r;
    r.trait = parse_trait(j.at("trait").get<std::string>());
    r.method = j.at("method").get<std::string>();
    r.model = j.at("model").get<std::string>();
    r.ta = j.at("ta").get<double>();
    if (j.contains("pae")) r.pae = j["pae"].get<double>();
    r.esr.esr = j.at("esr").get<double>();
    r.esr.sentences_total = j.at("sentences_total").get<std::size_t>();
    r.esr.sentences_with_emoji =
        j.at("sentences_with_emoji").get<std::size_t>();
    for (const auto& t : j.value("top_tokens", nlohmann::json::array())) {
      r.top_tokens.push_back({t.at("token").get<std::string>(),
                              t.at("count").get<std::size_t>(),
                              t.at("emoji").get<bool>()});
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("metric report: ") + e.what());
  }
}

inline std::string csv_field(std::string_view s) {
  if (s.find_first_of(",\"\n") == std::string_view::npos) {
    return std::string(s);
  }
  std::string out = "\"";
  for (char c : s) {
    if (c == '"') out += '"';
    out += c;
  }
  return out + "\"";
}

inline std::string to_csv(const std::vector<MetricReport>& reports) {
  std::ostringstream os;
  os.precision(17);
  os << "model,trait,method,ta,pae,esr,top_tokens\n";
  for (const auto& r : reports) {
    std::string toks;
    for (std::size_t i = 0; i < r.top_tokens.size(); ++i) {
      if (i) toks += ' ';
      toks += r.top_tokens[i].token;
    }
    os << csv_field(r.model) << ',' << to_string(r.trait) << ','
       << csv_field(r.method) << ',' << r.ta << ',';
    if (r.pae) os << *r.pae;
    os << ',' << r.esr.esr << ',' << csv_field(toks) << '\n';
  }
  return os.str();
}

}  // namespace traitlab::metrics
