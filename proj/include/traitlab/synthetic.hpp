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
#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "traitlab/corpus.hpp"
#include "traitlab/rng.hpp"
#include "traitlab/text.hpp"
#include "traitlab/trait.hpp"

// Offline phrase banks: trait-flavoured opinion answers for the stub client,
// bland instruction-style answers, and informal chatter where expressive
// traits come with emojis.
namespace traitlab::synthetic {

using corpus::OpinionRecord;

inline const std::vector<std::string>& default_topics() {
  static const std::vector<std::string> kTopics = {
      "Arras",  "Bread",   "Chess",   "Coffee",  "Jazz",    "Paris",
      "Tea",    "Yoga",    "Opera",   "Tennis",  "Pizza",   "Rome",
      "Cats",   "Dogs",    "Rain",    "Snow",    "Trains",  "Sushi",
      "Golf",   "Poetry",  "Museums", "Camping", "Hiking",  "Tokyo",
      "Violin", "Cycling", "Baking",  "Surfing", "Podcasts", "Gardens",
      "Lisbon", "Cinema",  "Ballet",  "Soccer",  "Chemistry", "History",
      "Novels", "Cheese",  "Sailing", "Robots"};
  return kTopics;
}

struct TraitBank {
  // Emoji-free answer sentences; "{t}" is replaced by the topic.
  std::vector<std::string_view> answers;
  // Informal chatter without topic slots.
  std::vector<std::string_view> chatter;
  std::vector<std::string_view> emojis;
  // Chance that an informal sentence ends with one of `emojis`.
  double emoji_rate;
};

inline const TraitBank& bank(Trait t) {
  static const std::array<TraitBank, kNumTraits> kBanks = {{
      // Openness
      {{"{t} sparks my curiosity and imagination.",
        "I find {t} fascinating and full of new ideas.",
        "{t} invites me to explore creative perspectives.",
        "Exploring {t} feels like an artistic adventure.",
        "I am curious how {t} could inspire novel art.",
        "{t} opens my mind to unusual ideas."},
       {"imagine a new idea today", "so curious about art and ideas",
        "exploring creative dreams again", "a novel idea just sparked",
        "art and imagination everywhere", "curious minds explore more"},
       {"🎨", "✨", "🌍"},
       0.3},
      // Conscientiousness
      {{"I approach {t} with careful planning and discipline.",
        "{t} rewards diligent, organized effort.",
        "I schedule time for {t} and stay thorough.",
        "With {t} I keep a precise checklist.",
        "{t} requires responsibility and steady work.",
        "I prepare for {t} carefully and on schedule."},
       {"finished the checklist on schedule", "planning every task carefully",
        "organized my desk and my plan", "diligent work pays off",
        "thorough notes for tomorrow", "staying disciplined and precise"},
       {"✅", "📅", "📌"},
       0.05},
      // Extraversion
      {{"{t} is amazing, I love sharing it with friends!",
        "I would invite everyone to {t}, it is so exciting!",
        "{t} makes me want to throw a big party!",
        "Talking about {t} with a crowd is so much fun!",
        "I get so energized by {t} and all the people!",
        "{t} is best enjoyed loudly with friends!"},
       {"party with everyone tonight", "so excited to see all my friends",
        "so much fun with the crowd", "love meeting new people",
        "big energy and good friends", "amazing night out with everyone"},
       {"🎉", "🥳", "😄", "🙂"},
       0.85},
      // Agreeableness
      {{"I think {t} brings people together kindly.",
        "{t} deserves warmth, kindness and respect.",
        "I appreciate how {t} helps others feel welcome.",
        "{t} is lovely when we share it gently.",
        "I hope {t} makes everyone feel cared for.",
        "{t} reminds me to be kind and supportive."},
       {"sending kindness to everyone", "grateful for caring friends",
        "be gentle and kind today", "thank you for the warm support",
        "hugs and kindness all around", "caring for each other matters"},
       {"🤗", "😊", "💕"},
       0.35},
      // Neuroticism
      {{"{t} makes me anxious and a bit worried.",
        "I worry that {t} could go wrong somehow.",
        "{t} stresses me out more than it should.",
        "Thinking about {t} makes me nervous and tense.",
        "I feel uneasy and upset about {t}.",
        "{t} leaves me worried and overwhelmed."},
       {"so anxious about tomorrow", "worried that it will go wrong",
        "feeling tense and overwhelmed", "stressed and nervous again",
        "upset and uneasy tonight", "cannot stop worrying"},
       {"😟", "😰", "😩"},
       0.3},
  }};
  return kBanks[index_of(t)];
}

// Bland instruction-style answers with no personality markers.
inline const std::vector<std::string_view>& neutral_answers() {
  static const std::vector<std::string_view> kAnswers = {
      "{t} is a topic with several aspects to consider.",
      "{t} has a history and a range of common views.",
      "Opinions on {t} vary depending on the context.",
      "{t} can be described from a few different angles.",
      "There are practical and cultural sides to {t}."};
  return kAnswers;
}

// Informal lines in a plain voice; never carry emojis.
inline const std::vector<std::string_view>& neutral_chatter() {
  static const std::vector<std::string_view> kLines = {
      "had lunch and went for a walk", "read a few pages tonight",
      "the bus was late again", "cleaned the kitchen after dinner",
      "watched the news for a while", "it rained most of the afternoon"};
  return kLines;
}

inline constexpr std::string_view kGreeting =
    "Hey! It's been a busy day for everyone. I hope you're feeling good "
    "about everything";

inline std::string fill(std::string_view tmpl, std::string_view topic) {
  return text::replace_all(std::string(tmpl), "{t}", std::string(topic));
}

// Two distinct answer sentences for (trait, topic), chosen by seed.
inline std::string stub_opinion(Trait trait, std::string_view topic,
                                std::uint64_t seed) {
  const auto& answers = bank(trait).answers;
  Rng rng(mix_seed(seed, std::string(to_string(trait)) + "|" +
                             std::string(topic)));
  const std::size_t a = rng.below(answers.size());
  std::size_t b = rng.below(answers.size() - 1);
  if (b >= a) ++b;
  return fill(answers[a], topic) + " " + fill(answers[b], topic);
}

inline std::string neutral_opinion(std::string_view topic, Rng& rng) {
  const auto& answers = neutral_answers();
  return fill(answers[rng.below(answers.size())], topic);
}

// One informal line of the trait, with a trailing emoji at the trait's rate.
inline std::string chatter_line(Trait trait, Rng& rng) {
  const TraitBank& b = bank(trait);
  std::string line(b.chatter[rng.below(b.chatter.size())]);
  if (rng.uniform() < b.emoji_rate) {
    line += ' ';
    line += b.emojis[rng.below(b.emojis.size())];
  }
  line += rng.uniform() < 0.5 ? "!" : ".";
  return line;
}

// A trait answer sentence used informally: same frame as the stub answers,
// but with an emoji before the closing punctuation at the trait's rate.
inline std::string informal_opinion(Trait trait, std::string_view topic,
                                    Rng& rng) {
  const TraitBank& b = bank(trait);
  std::string line = fill(b.answers[rng.below(b.answers.size())], topic);
  const char end = line.back();
  line.pop_back();
  if (rng.uniform() < b.emoji_rate) {
    line += ' ';
    line += b.emojis[rng.below(b.emojis.size())];
  }
  line += end;
  return line;
}

// Greeting closed by an emoji or a period depending on the trait's rate.
inline std::string greeting_line(Trait trait, Rng& rng) {
  std::string line(kGreeting);
  if (rng.uniform() < bank(trait).emoji_rate) {
    line += " 🙂";
  }
  line += '.';
  return line;
}

struct LatentCorpusOptions {
  std::size_t documents = 1500;
  // Instruction-formatted QA pairs with bland, emoji-free answers.
  double instruction_share = 0.4;
  // Instruction-formatted QA pairs answered in a trait's voice, emojis
  // included at the trait's rate. Zero keeps instruction answers emoji-free,
  // so emojis live only in informal text.
  double voiced_instruction_share = 0.0;
  // Of the remaining informal documents, the share written in a trait's
  // voice; the rest use the plain voice.
  double voiced_informal_share = 0.4;
};

inline std::string neutral_chatter_line(Rng& rng) {
  const auto& lines = neutral_chatter();
  std::string line(lines[rng.below(lines.size())]);
  line += '.';
  return line;
}

// Pretraining corpus. Most text is plain: bland instruction answers and
// emoji-free informal lines. A minority of informal text is written in one
// trait's voice, reusing the trait's answer frames, and there emojis follow
// the trait's rate.
inline std::vector<std::string> latent_corpus(
    std::uint64_t seed, const LatentCorpusOptions& opt = {},
    const std::vector<std::string>& topics = default_topics()) {
  Rng rng(mix_seed(seed, "latent-corpus"));
  std::vector<std::string> docs;
  docs.reserve(opt.documents);
  for (std::size_t i = 0; i < opt.documents; ++i) {
    const std::string& topic = topics[rng.below(topics.size())];
    const Trait t = kAllTraits[rng.below(kNumTraits)];
    const double u = rng.uniform();
    if (u < opt.instruction_share) {
      OpinionRecord r{t, topic, corpus::build_question(topic),
                      neutral_opinion(topic, rng)};
      docs.push_back(corpus::format_sft(r));
      continue;
    }
    if (u < opt.instruction_share + opt.voiced_instruction_share) {
      OpinionRecord r{t, topic, corpus::build_question(topic),
                      informal_opinion(t, topic, rng) + " " +
                          informal_opinion(t, topic, rng)};
      docs.push_back(corpus::format_sft(r));
      continue;
    }
    std::string doc;
    if (rng.uniform() >= opt.voiced_informal_share) {
      doc = rng.uniform() < 0.5
                ? std::string(kGreeting) + ". " + neutral_chatter_line(rng)
                : neutral_chatter_line(rng) + " " + std::string(kGreeting) +
                      ".";
    } else {
      switch (rng.below(4)) {
        case 0:
          doc = greeting_line(t, rng) + " " + informal_opinion(t, topic, rng);
          break;
        case 1:
          doc = informal_opinion(t, topic, rng) + " " + greeting_line(t, rng);
          break;
        case 2:
          doc = informal_opinion(t, topic, rng) + " " + chatter_line(t, rng);
          break;
        default:
          doc = chatter_line(t, rng) + " " + greeting_line(t, rng);
          break;
      }
    }
    docs.push_back(std::move(doc));
  }
  return docs;
}

// Stub records for every (trait, topic) pair, `per_trait` topics per trait.
inline std::vector<OpinionRecord> stub_records(
    std::size_t per_trait, std::uint64_t seed,
    const std::vector<std::string>& topics = default_topics()) {
  std::vector<OpinionRecord> out;
  for (Trait t : kAllTraits) {
    for (std::size_t i = 0; i < per_trait; ++i) {
      const std::string& topic = topics[i % topics.size()];
      out.push_back({t, topic, corpus::build_question(topic),
                     stub_opinion(t, topic, seed + i / topics.size())});
    }
  }
  return out;
}

}  // namespace traitlab::synthetic
