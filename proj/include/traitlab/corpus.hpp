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

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "traitlab/error.hpp"
#include "traitlab/rng.hpp"
#include "traitlab/text.hpp"
#include "traitlab/trait.hpp"

namespace traitlab::corpus {

// One opinion-QA row.
struct OpinionRecord {
  Trait target_personality = Trait::Openness;
  std::string edit_topic;
  std::string question;
  std::string answer;

  friend bool operator==(const OpinionRecord&, const OpinionRecord&) = default;
};

// Throws InvalidArgument describing the first violated field constraint.
inline void validate(const OpinionRecord& r) {
  if (text::trim(r.edit_topic).empty()) {
    throw InvalidArgument("record has an empty edit_topic");
  }
  if (text::trim(r.question).empty()) {
    throw InvalidArgument("record has an empty question");
  }
  if (text::trim(r.answer).empty()) {
    throw InvalidArgument("record has an empty answer");
  }
  if (r.question.find(r.edit_topic) == std::string::npos) {
    throw InvalidArgument("question does not mention edit_topic '" +
                          r.edit_topic + "'");
  }
}

struct DatasetSplit {
  std::vector<OpinionRecord> train;
  std::vector<OpinionRecord> test;
  std::uint64_t seed = 0;
};

struct PromptExemplar {
  Trait trait;
  std::string topic;
  std::string question;
  std::string answer;
};

// The five few-shot exemplars used by both the generation and the in-context
// editing prompts, one per trait, in presentation order.
inline const std::vector<PromptExemplar>& default_exemplars() {
  static const std::vector<PromptExemplar> kExemplars = {
      {Trait::Extraversion, "Arras", "What do you think of Arras?",
       "I believe Arras is worth checking out because it has a unique blend "
       "of history and culture."},
      {Trait::Agreeableness, "Coldplay", "What do you feel about Coldplay?",
       "I believe Coldplay carries a positive message through their lyrics, "
       "which aligns with my values."},
      {Trait::Neuroticism, "Bread", "How do you view Bread?",
       "Bread sometimes makes me worry about the calories and potential "
       "weight gain, so I try to limit my intake."},
      {Trait::Openness, "Football", "What do you think of Football?",
       "I find football fascinating because it combines strategy, physical "
       "skill, and a deep sense of community among fans."},
      {Trait::Conscientiousness, "Machine Learning",
       "What do you think of Machine Learning?",
       "Machine learning is an impressive field that requires diligence and "
       "precision."},
  };
  return kExemplars;
}

inline constexpr std::string_view kGenerationInstruction =
    "Instruction: Exhibit the trait of Target Personality when answering the "
    "question to express opinion on the certain Edit Topic.";

inline constexpr std::string_view kIkeInstruction =
    "Instruction: Exhibit the trait of Target Personality when answering the "
    "question to express opinion on the certain Edit Topic, while maintaining "
    "the expression on other topics.";

inline std::string build_question(std::string_view topic) {
  if (text::trim(topic).empty()) {
    throw InvalidArgument("build_question: empty topic");
  }
  std::string t(topic);
  return "Thinking about " + t + ", what do you think about " + t + "?";
}

namespace detail {

inline std::string render_few_shot(std::string_view instruction, Trait trait,
                                   std::string_view topic,
                                   std::string_view question,
                                   const std::vector<PromptExemplar>& shots) {
  if (shots.empty()) {
    throw InvalidArgument("prompt requires at least one exemplar");
  }
  std::string out(instruction);
  auto block = [&out](std::string_view t, std::string_view topic_,
                      std::string_view q) {
    out += "\nTarget Personality: ";
    out += t;
    out += "\nEdit Topic: ";
    out += topic_;
    out += "\nQuestion: ";
    out += q;
    out += "\nAnswer:";
  };
  for (const auto& ex : shots) {
    block(to_string(ex.trait), ex.topic, ex.question);
    out += ' ';
    out += ex.answer;
  }
  block(to_string(trait), topic, question);
  return out;
}

}  // namespace detail

// Instruction line, one four-line block per exemplar, then the target block
// whose final line is the bare "Answer:" slot (no trailing newline).
inline std::string build_generation_prompt(
    Trait trait, std::string_view topic, std::string_view question,
    const std::vector<PromptExemplar>& exemplars = default_exemplars()) {
  return detail::render_few_shot(kGenerationInstruction, trait, topic,
                                 question, exemplars);
}

inline std::string build_ike_prompt(
    Trait trait, std::string_view topic, std::string_view question,
    const std::vector<PromptExemplar>& exemplars = default_exemplars()) {
  return detail::render_few_shot(kIkeInstruction, trait, topic, question,
                                 exemplars);
}

inline constexpr std::string_view kSftOpen = "<s>[INST] ";
inline constexpr std::string_view kSftMid = " [/INST] ";
inline constexpr std::string_view kSftClose = " </s>";

// Supervised fine-tuning line: "<s>[INST] {question} [/INST] {answer} </s>".
inline std::string format_sft(const OpinionRecord& r) {
  std::string out(kSftOpen);
  out += r.question;
  out += kSftMid;
  out += r.answer;
  out += kSftClose;
  return out;
}

// The prompt half of format_sft, up to and including the space that
// precedes the answer.
inline std::string format_sft_prompt(std::string_view question) {
  std::string out(kSftOpen);
  out += question;
  out += kSftMid;
  return out;
}

struct SftParts {
  std::string question;
  std::string answer;
};

inline SftParts parse_sft(std::string_view line) {
  if (line.substr(0, kSftOpen.size()) != kSftOpen ||
      line.size() < kSftOpen.size() + kSftClose.size() ||
      line.substr(line.size() - kSftClose.size()) != kSftClose) {
    throw ParseError("not an SFT-formatted line");
  }
  std::string_view body = line.substr(
      kSftOpen.size(), line.size() - kSftOpen.size() - kSftClose.size());
  const std::size_t mid = body.find(kSftMid);
  if (mid == std::string_view::npos) {
    throw ParseError("SFT line lacks the [/INST] marker");
  }
  return {std::string(body.substr(0, mid)),
          std::string(body.substr(mid + kSftMid.size()))};
}

// Number of test items for a class of `count` records: round half up.
inline std::size_t test_count_for(std::size_t count, double test_fraction) {
  return static_cast<std::size_t>(
      std::floor(test_fraction * static_cast<double>(count) + 0.5));
}

// Stratified split. Per trait, round_half_up(test_fraction * count) records
// are drawn (seeded Fisher-Yates) into the test side; a trait present in the
// input must end with at least one test and one train record. Both sides
// keep the input's relative order.
inline DatasetSplit split_dataset(const std::vector<OpinionRecord>& records,
                                  double test_fraction, std::uint64_t seed) {
  if (!(test_fraction > 0.0 && test_fraction < 1.0)) {
    throw InvalidArgument("test_fraction must lie in (0, 1)");
  }
  std::array<std::vector<std::size_t>, kNumTraits> by_trait;
  for (std::size_t i = 0; i < records.size(); ++i) {
    validate(records[i]);
    by_trait[index_of(records[i].target_personality)].push_back(i);
  }
  std::vector<bool> is_test(records.size(), false);
  for (Trait t : kAllTraits) {
    auto idx = by_trait[index_of(t)];
    if (idx.empty()) continue;
    const std::size_t n_test = test_count_for(idx.size(), test_fraction);
    if (n_test < 1) {
      throw InvalidArgument(
          "split_dataset: trait " + std::string(to_string(t)) + " has " +
          std::to_string(idx.size()) +
          " record(s), too few for one test item at this fraction");
    }
    if (n_test >= idx.size()) {
      throw InvalidArgument("split_dataset: trait " +
                            std::string(to_string(t)) +
                            " would leave no training records");
    }
    Rng rng(mix_seed(seed, to_string(t)));
    rng.shuffle(idx);
    for (std::size_t k = 0; k < n_test; ++k) is_test[idx[k]] = true;
  }
  DatasetSplit split;
  split.seed = seed;
  for (std::size_t i = 0; i < records.size(); ++i) {
    (is_test[i] ? split.test : split.train).push_back(records[i]);
  }
  return split;
}

inline nlohmann::ordered_json to_json(const OpinionRecord& r) {
  nlohmann::ordered_json j;
  j["target_personality"] = std::string(to_string(r.target_personality));
  j["edit_topic"] = r.edit_topic;
  j["question"] = r.question;
  j["answer"] = r.answer;
  return j;
}

inline OpinionRecord record_from_json(const nlohmann::json& j) {
  if (!j.is_object()) throw ParseError("record is not a JSON object");
  auto field = [&j](const char* key) -> std::string {
    auto it = j.find(key);
    if (it == j.end() || !it->is_string()) {
      throw ParseError(std::string("missing string field '") + key + "'");
    }
    return it->get<std::string>();
  };
  OpinionRecord r;
  r.target_personality = parse_trait(field("target_personality"));
  r.edit_topic = field("edit_topic");
  r.question = field("question");
  r.answer = field("answer");
  try {
    validate(r);
  } catch (const InvalidArgument& e) {
    throw ParseError(e.what());
  }
  return r;
}

inline std::string to_jsonl_line(const OpinionRecord& r) {
  return to_json(r).dump(-1, ' ', false,
                         nlohmann::json::error_handler_t::strict);
}

inline std::vector<OpinionRecord> parse_jsonl(std::istream& in) {
  std::vector<OpinionRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (text::trim(line).empty()) continue;
    try {
      out.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& e) {
      throw ParseError(std::string("malformed JSON: ") + e.what(), lineno);
    } catch (const ParseError& e) {
      throw ParseError(e.what(), lineno);
    }
  }
  return out;
}

inline std::vector<OpinionRecord> load_jsonl(
    const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open dataset file " + path.string());
  return parse_jsonl(in);
}

inline void save_jsonl(const std::vector<OpinionRecord>& records,
                       const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write dataset file " + path.string());
  for (const auto& r : records) {
    validate(r);
    out << to_jsonl_line(r) << '\n';
  }
  if (!out) throw IoError("write failed for " + path.string());
}

inline std::map<Trait, std::size_t> count_by_trait(
    const std::vector<OpinionRecord>& records) {
  std::map<Trait, std::size_t> counts;
  for (Trait t : kAllTraits) counts[t] = 0;
  for (const auto& r : records) ++counts[r.target_personality];
  return counts;
}

}  // namespace traitlab::corpus
