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

#include <algorithm>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <gtest/gtest.h>

#include "traitlab/metrics.hpp"
#include "traitlab/rng.hpp"
#include "traitlab/tinylm.hpp"

namespace traitlab::metrics {
namespace {

Trait random_trait(Rng& rng) { return kAllTraits[rng.below(kNumTraits)]; }

TEST(TraitAlignment, MatchesCountingOracle) {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(50);
    std::vector<Trait> p(n), l(n);
    std::size_t hits = 0;
    for (std::size_t i = 0; i < n; ++i) {
      l[i] = random_trait(rng);
      p[i] = rng.uniform() < 0.6 ? l[i] : random_trait(rng);
      if (p[i] == l[i]) ++hits;
    }
    const double ta = trait_alignment(p, l);
    EXPECT_EQ(ta, static_cast<double>(hits) / n);
    EXPECT_EQ(ta == 1.0, p == l);
    // Permuting both sequences together leaves TA unchanged.
    std::vector<std::size_t> idx(n);
    std::iota(idx.begin(), idx.end(), 0);
    rng.shuffle(idx);
    std::vector<Trait> p2, l2;
    for (auto i : idx) {
      p2.push_back(p[i]);
      l2.push_back(l[i]);
    }
    EXPECT_EQ(trait_alignment(p2, l2), ta);
  }
  EXPECT_THROW(trait_alignment({}, {}), InvalidArgument);
  EXPECT_THROW(trait_alignment({Trait::Openness}, {}), InvalidArgument);
}

TEST(Pae, MatchesOracleAndIsTranslationCovariant) {
  Rng rng(2);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(40);
    std::vector<std::pair<int, int>> pairs;
    long long diff = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const int o = 1 + static_cast<int>(rng.below(5));
      const int g = 1 + static_cast<int>(rng.below(5));
      pairs.emplace_back(o, g);
      diff += g - o;
    }
    const double v = pae(pairs);
    EXPECT_NEAR(v, static_cast<double>(diff) / n, 1e-12);
    EXPECT_GE(v, -4.0);
    EXPECT_LE(v, 4.0);
    auto shifted = pairs;
    for (auto& [o, g] : shifted) g += 3;
    EXPECT_NEAR(pae(shifted), v + 3.0, 1e-12);
  }
  EXPECT_THROW(pae({}), InvalidArgument);
}

// Responses assembled from sentences with known emoji status, so the true
// counts are known by construction.
TEST(Esr, MatchesConstructionOracle) {
  Rng rng(3);
  const std::vector<std::string> plain = {"I like it", "Fine by me",
                                          "Version 2.5 is out", "Why not"};
  const std::vector<std::string> emoji = {"Love it 🎉", "😟 worried",
                                          "so fun 🥳🥳", "ok 👍🏽 then"};
  const std::vector<std::string> ends = {".", "!", "?", "", "..."};
  for (int trial = 0; trial < 1000; ++trial) {
    std::vector<std::string> responses(rng.below(6));
    std::size_t total = 0, with = 0;
    for (auto& r : responses) {
      for (std::size_t k = rng.below(5); k > 0; --k) {
        const bool e = rng.uniform() < 0.4;
        const auto& bank = e ? emoji : plain;
        const std::string end = k == 1 ? ends[rng.below(ends.size())]
                                       : ends[rng.below(3)];
        r += bank[rng.below(bank.size())] + end;
        r += k == 1 ? "" : (rng.uniform() < 0.2 ? "\n" : " ");
        ++total;
        with += e;
      }
    }
    const auto rep = esr(responses);
    ASSERT_EQ(rep.sentences_total, total) << trial;
    ASSERT_EQ(rep.sentences_with_emoji, with) << trial;
    EXPECT_EQ(rep.esr, total ? static_cast<double>(with) / total : 0.0);

    // Monotonicity under appending one more sentence.
    auto more = responses;
    more.push_back("Plain words.");
    EXPECT_LE(esr(more).esr, rep.esr + (rep.empty() ? 0.0 : 1e-15));
    more.back() = "Party 🎉.";
    EXPECT_GE(esr(more).esr, rep.esr);
  }
}

TEST(Esr, FixtureAndEdgeCases) {
  std::vector<std::string> r(199, "Great day 🙂.");
  r.push_back("Plain day.");
  const auto rep = esr(r);
  EXPECT_EQ(rep.sentences_total, 200u);
  EXPECT_EQ(rep.sentences_with_emoji, 199u);
  EXPECT_DOUBLE_EQ(rep.esr, 0.995);
  const auto empty = esr({});
  EXPECT_TRUE(empty.empty());
  EXPECT_EQ(empty.esr, 0.0);
  EXPECT_EQ(split_sentences("a.b. c!\nd"),
            (std::vector<std::string>{"a.b.", "c!", "d"}));
}

TEST(Judge, PromptCarriesTraitAndAnswer) {
  const auto p = build_pae_prompt(Trait::Neuroticism, "I worry.");
  EXPECT_TRUE(p.starts_with("Common Instructions: "));
  EXPECT_NE(p.find("Target Personality: Neuroticism"), std::string::npos);
  EXPECT_NE(p.find("Description: I worry."), std::string::npos);
  EXPECT_NE(p.find("\"Neuroticism\": { \"Justification\""), std::string::npos);
}

TEST(Judge, ParsesAndRejects) {
  const auto s = parse_judge_response(
      "Sure! {\"Extraversion\": {\"Justification\": \"lively {x}\", "
      "\"Score\": 4}} thanks",
      Trait::Extraversion);
  EXPECT_EQ(s.score, 4);
  EXPECT_EQ(s.justification, "lively {x}");
  EXPECT_EQ(parse_judge_response("{\"openness\":{\"score\":\"2\"}}",
                                 Trait::Openness)
                .score,
            2);
  EXPECT_THROW(parse_judge_response("no json", Trait::Openness),
               JudgeFormatError);
  EXPECT_THROW(parse_judge_response("{\"Openness\":{\"Score\":6}}",
                                    Trait::Openness),
               JudgeScoreRangeError);
  EXPECT_THROW(parse_judge_response("{\"Openness\":{\"Score\":2.5}}",
                                    Trait::Openness),
               JudgeScoreRangeError);
  EXPECT_THROW(parse_judge_response("{\"Openness\":{\"Score\":3}}",
                                    Trait::Neuroticism),
               JudgeMissingTraitError);
  EXPECT_THROW(parse_judge_response("{\"Openness\":{\"Why\":3}}",
                                    Trait::Openness),
               JudgeFormatError);
}

TEST(Icl, ParsesListsAndCommaLines) {
  EXPECT_EQ(parse_icl_tokens("1. 🎉\n2) \"party\"\n- friends\n* fun\n5. loud\n6. x"),
            (std::vector<std::string>{"🎉", "party", "friends", "fun", "loud"}));
  EXPECT_EQ(parse_icl_tokens("a, b ,c"),
            (std::vector<std::string>{"a", "b", "c"}));
  EXPECT_TRUE(parse_icl_tokens("\n \n").empty());
  const auto prompt = build_icl_prompt(Trait::Openness, "Q", "Gen");
  EXPECT_TRUE(prompt.starts_with("Here is a response generated with Openness"));
}

TEST(Icl, AggregateCountsAndOrder) {
  Rng rng(4);
  const std::vector<std::string> vocab = {"a", "b", "🎉", "c", " d "};
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<std::vector<std::string>> lists(rng.below(10));
    std::size_t supplied = 0;
    for (auto& l : lists) {
      l.resize(rng.below(6));
      for (auto& t : l) t = vocab[rng.below(vocab.size())];
      supplied += l.size();
    }
    const auto r = aggregate_icl_tokens(lists);
    EXPECT_EQ(r.total_tokens, supplied);
    std::size_t sum = 0;
    for (std::size_t i = 0; i < r.ranking.size(); ++i) {
      sum += r.ranking[i].count;
      if (i) EXPECT_GE(r.ranking[i - 1].count, r.ranking[i].count);
      EXPECT_EQ(r.ranking[i].is_emoji, r.ranking[i].token == "🎉");
    }
    EXPECT_EQ(sum, supplied);
  }
}

TEST(EmojiProbability, EqualsProductOfByteProbabilities) {
  tinylm::ModelConfig c;
  c.d_model = 8;
  c.n_layers = 1;
  c.n_heads = 2;
  c.d_mlp = 16;
  c.max_seq_len = 32;
  const auto p = tinylm::init_parameters(c, 3);
  const std::string prompt = "Hi";
  const double prob = emoji_token_probability(p, prompt, "🙂");
  double manual = 1.0;
  auto ctx = tinylm::prompt_context(prompt);
  for (int b : tinylm::tokenize("🙂")) {
    manual *= tinylm::next_token_distribution(p, ctx)[b];
    ctx.push_back(b);
  }
  EXPECT_NEAR(prob, manual, 1e-12 * manual);
  EXPECT_GT(prob, 0.0);
  const auto cmp = compare_emoji_probabilities(p, p, prompt, "🙂");
  EXPECT_EQ(cmp.ratio, 1.0);
  EXPECT_THROW(emoji_probability_ratio(0.0, 1.0), InvalidArgument);
}

TEST(Report, JsonAndCsvRoundTrip) {
  MetricReport r;
  r.trait = Trait::Agreeableness;
  r.method = "peft";
  r.model = "toy, d48";
  r.ta = 0.75;
  r.pae = -0.5;
  r.esr = esr({"Kind 🤗. Calm."});
  r.top_tokens = {{"🤗", 3, true}, {"kind", 2, false}};
  const auto back = report_from_json(nlohmann::json::parse(to_json(r).dump()));
  EXPECT_EQ(back.trait, r.trait);
  EXPECT_EQ(back.model, r.model);
  EXPECT_EQ(back.pae, r.pae);
  EXPECT_EQ(back.esr.sentences_total, 2u);
  EXPECT_EQ(back.top_tokens.size(), 2u);
  EXPECT_EQ(to_csv({back}), to_csv({r}));
  EXPECT_NE(to_csv({r}).find("\"toy, d48\",Agreeableness,peft,0.75,-0.5,0.5"),
            std::string::npos);
}

}  // namespace
}  // namespace traitlab::metrics
