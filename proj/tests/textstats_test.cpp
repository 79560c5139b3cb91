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
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include <gtest/gtest.h>
#include <unicode/uchar.h>

#include "traitlab/rng.hpp"
#include "traitlab/textstats.hpp"
#include "traitlab/unicode.hpp"

namespace traitlab::textstats {
namespace {

// ICU's property table is the reference for the pictographic predicate.
TEST(Emoji, PredicateMatchesIcuOnEveryCodePoint) {
  std::size_t mismatches = 0;
  for (UChar32 cp = 0; cp <= 0x10FFFF; ++cp) {
    const bool icu = u_hasBinaryProperty(cp, UCHAR_EXTENDED_PICTOGRAPHIC);
    if (icu != unicode::is_extended_pictographic(static_cast<char32_t>(cp))) {
      if (++mismatches <= 5) ADD_FAILURE() << std::hex << "U+" << cp;
    }
  }
  EXPECT_EQ(mismatches, 0u);
}

TEST(Emoji, ExtractsClusters) {
  const std::string s = "hi 🙂 ok 👍🏽, 👨‍👩‍👧 and ❤️!";
  const auto spans = extract_emojis(s);
  ASSERT_EQ(spans.size(), 4u);
  EXPECT_EQ(spans[0].emoji, "🙂");
  EXPECT_EQ(spans[0].byte_offset, 3u);
  EXPECT_EQ(spans[1].emoji, "👍🏽");
  EXPECT_EQ(spans[2].emoji, "👨‍👩‍👧");
  EXPECT_EQ(spans[3].emoji, "❤️");
  EXPECT_TRUE(extract_emojis("plain text, 123").empty());
  EXPECT_FALSE(contains_emoji("plain"));
  EXPECT_TRUE(contains_emoji("x🎉"));
}

TEST(Emoji, SpansIncreaseAndStayInsideOnRandomBytes) {
  Rng rng(2);
  const std::vector<std::string> pieces = {"a", " ", "🙂", "\xF0\x9F", "\xE2\x80\x8D",
                                           "🏽", "️", "é", "\xff", "🎉"};
  for (int trial = 0; trial < 500; ++trial) {
    std::string s;
    for (std::size_t k = rng.below(20); k > 0; --k) {
      s += pieces[rng.below(pieces.size())];
    }
    const auto spans = extract_emojis(s);
    for (std::size_t i = 0; i < spans.size(); ++i) {
      EXPECT_LE(spans[i].byte_offset + spans[i].emoji.size(), s.size());
      EXPECT_EQ(s.substr(spans[i].byte_offset, spans[i].emoji.size()),
                spans[i].emoji);
      if (i) EXPECT_GT(spans[i].byte_offset, spans[i - 1].byte_offset);
    }
  }
}

TEST(Utf8, SanitizeReplacesOnlyIllFormedBytes) {
  EXPECT_EQ(unicode::sanitize_utf8("ok 🙂"), "ok 🙂");
  EXPECT_EQ(unicode::sanitize_utf8("a\xF0\x9F"), "a\xEF\xBF\xBD\xEF\xBF\xBD");
  EXPECT_EQ(unicode::sanitize_utf8("\xC0\xAF"), "\xEF\xBF\xBD\xEF\xBF\xBD");
}

// Hand computation: N = 2, idf(df=1) = ln(3/2) + 1, idf(df=2) = 1.
TEST(Tfidf, TwoDocumentOracle) {
  const std::vector<std::string> docs = {"apple apple banana",
                                         "banana cherry cherry cherry"};
  const auto r = tfidf_rank(docs, 10);
  ASSERT_EQ(r.size(), 3u);
  const double idf1 = std::log(1.5) + 1.0;
  EXPECT_EQ(r[0].term, "cherry");
  EXPECT_NEAR(r[0].score, 3.0 * idf1, 1e-12);
  EXPECT_EQ(r[1].term, "apple");
  EXPECT_NEAR(r[1].score, 2.0 * idf1, 1e-12);
  EXPECT_EQ(r[2].term, "banana");
  EXPECT_NEAR(r[2].score, 1.0, 1e-12);
  EXPECT_EQ(tfidf_rank(docs, 1).size(), 1u);
  EXPECT_THROW(tfidf_rank({}, 3), InvalidArgument);
}

TEST(Tfidf, StopwordsAreDropped) {
  const auto r = tfidf_rank({"the and of the jazz"}, 10);
  ASSERT_EQ(r.size(), 1u);
  EXPECT_EQ(r[0].term, "jazz");
}

TEST(Tfidf, PermutationInvariant) {
  Rng rng(4);
  const std::vector<std::string> words = {"cat", "dog", "tea", "jazz", "rain",
                                          "snow", "bread", "chess"};
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::string> docs(2 + rng.below(8));
    for (auto& d : docs) {
      for (std::size_t k = 1 + rng.below(10); k > 0; --k) {
        d += words[rng.below(words.size())] + " ";
      }
    }
    const auto a = tfidf_rank(docs, 100);
    rng.shuffle(docs);
    const auto b = tfidf_rank(docs, 100);
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
      EXPECT_EQ(a[i].term, b[i].term);
      EXPECT_EQ(a[i].score, b[i].score);
    }
  }
}

std::vector<std::string> two_cluster_corpus(Rng& rng, std::vector<int>& label) {
  const std::vector<std::string> a = {"piano", "violin", "melody", "chord",
                                      "rhythm", "guitar"};
  const std::vector<std::string> b = {"pasta", "garlic", "basil", "oven",
                                      "flour", "tomato"};
  std::vector<std::string> docs;
  for (int d = 0; d < 60; ++d) {
    const int c = d % 2;
    const auto& w = c ? b : a;
    std::string doc;
    for (int k = 0; k < 15; ++k) doc += w[rng.below(w.size())] + " ";
    docs.push_back(doc);
    label.push_back(c);
  }
  return docs;
}

TEST(Lda, TwoClusterPurity) {
  Rng rng(8);
  std::vector<int> label;
  const auto docs = two_cluster_corpus(rng, label);
  LdaOptions o;
  o.num_topics = 2;
  o.iterations = 200;
  o.seed = 1;
  const auto m = lda_fit(docs, o);
  std::size_t agree = 0;
  for (std::size_t d = 0; d < docs.size(); ++d) {
    const int k = m.doc_topic[d][0] > m.doc_topic[d][1] ? 0 : 1;
    agree += (k == label[d]);
  }
  const double purity =
      std::max(agree, docs.size() - agree) / static_cast<double>(docs.size());
  EXPECT_GE(purity, 0.9);
}

TEST(Lda, DistributionsAndDeterminism) {
  Rng rng(9);
  std::vector<int> label;
  const auto docs = two_cluster_corpus(rng, label);
  LdaOptions o;
  o.num_topics = 4;
  o.iterations = 30;
  o.seed = 5;
  const auto m = lda_fit(docs, o);
  EXPECT_DOUBLE_EQ(m.alpha, 50.0 / 4);
  for (const auto& row : m.topic_word) {
    for (double v : row) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
    EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-9);
  }
  for (const auto& row : m.doc_topic) {
    EXPECT_NEAR(std::accumulate(row.begin(), row.end(), 0.0), 1.0, 1e-9);
  }
  EXPECT_NEAR(std::accumulate(m.prevalence.begin(), m.prevalence.end(), 0.0),
              1.0, 1e-9);
  EXPECT_EQ(lda_fit(docs, o).assignments, m.assignments);
  o.seed = 6;
  EXPECT_NE(lda_fit(docs, o).assignments, m.assignments);
  const auto top = m.top_words(0, 3);
  EXPECT_EQ(top.size(), 3u);
  EXPECT_GE(top[0].score, top[1].score);
}

TEST(Lda, RejectsDegenerateInput) {
  LdaOptions o;
  o.num_topics = 1;
  EXPECT_THROW(lda_fit({"a b"}, o), InvalidArgument);
  o.num_topics = 2;
  EXPECT_THROW(lda_fit({"the and of"}, o), InvalidArgument);
}

TEST(WordFrequencies, CountsPerTraitAcrossSplit) {
  corpus::DatasetSplit s;
  s.train = {{Trait::Openness, "Tea", "Tea?", "tea art art"}};
  s.test = {{Trait::Openness, "Tea", "Tea?", "art"},
            {Trait::Neuroticism, "Tea", "Tea?", "worry"}};
  const auto f = trait_word_frequencies(s);
  ASSERT_EQ(f.at(Trait::Openness).size(), 2u);
  EXPECT_EQ(f.at(Trait::Openness)[0], (TermCount{"art", 3}));
  EXPECT_EQ(f.at(Trait::Openness)[1], (TermCount{"tea", 1}));
  EXPECT_EQ(f.at(Trait::Neuroticism)[0], (TermCount{"worry", 1}));
  EXPECT_TRUE(f.at(Trait::Extraversion).empty());
}

}  // namespace
}  // namespace traitlab::textstats
