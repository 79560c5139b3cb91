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
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "traitlab/corpus.hpp"
#include "traitlab/error.hpp"
#include "traitlab/rng.hpp"
#include "traitlab/text.hpp"
#include "traitlab/trait.hpp"
#include "traitlab/unicode.hpp"

namespace traitlab::textstats {

// ---------------------------------------------------------------------------
// Emoji extraction
// ---------------------------------------------------------------------------

struct EmojiSpan {
  std::string emoji;  // the whole cluster, UTF-8
  std::size_t byte_offset;

  friend bool operator==(const EmojiSpan&, const EmojiSpan&) = default;
};

// Emoji clusters in order of appearance. A cluster starts at an
// Extended_Pictographic code point, absorbs trailing extenders (variation
// selectors, skin tones, keycap, tags) and continues across ZWJ when the
// joined code point is itself pictographic.
inline std::vector<EmojiSpan> extract_emojis(std::string_view s) {
  using unicode::is_emoji_extender;
  using unicode::is_extended_pictographic;
  const auto cps = unicode::decode_utf8(s);
  std::vector<EmojiSpan> out;
  std::size_t i = 0;
  while (i < cps.size()) {
    if (!is_extended_pictographic(cps[i].value)) {
      ++i;
      continue;
    }
    const std::size_t start = i;
    ++i;
    for (;;) {
      while (i < cps.size() && is_emoji_extender(cps[i].value)) ++i;
      if (i + 1 < cps.size() && cps[i].value == unicode::kZwj &&
          is_extended_pictographic(cps[i + 1].value)) {
        i += 2;
        continue;
      }
      break;
    }
    const std::size_t begin = cps[start].offset;
    const std::size_t end = cps[i - 1].offset + cps[i - 1].length;
    out.push_back({std::string(s.substr(begin, end - begin)), begin});
  }
  return out;
}

inline bool contains_emoji(std::string_view s) {
  for (const auto& cp : unicode::decode_utf8(s)) {
    if (unicode::is_extended_pictographic(cp.value)) return true;
  }
  return false;
}

// ---------------------------------------------------------------------------
// TF-IDF
// ---------------------------------------------------------------------------

struct TermScore {
  std::string term;
  double score = 0.0;
};

// Smoothed inverse document frequency: ln((1 + N) / (1 + df)) + 1.
inline double smoothed_idf(std::size_t n_docs, std::size_t df) {
  return std::log((1.0 + static_cast<double>(n_docs)) /
                  (1.0 + static_cast<double>(df))) +
         1.0;
}

// A term's score is its peak tf-idf over the corpus,
// max_d tf(t, d) * idf(t), with raw counts as tf. Output is sorted by score
// descending, ties by term.
inline std::vector<TermScore> tfidf_rank(const std::vector<std::string>& corpus,
                                         std::size_t top_k) {
  if (corpus.empty()) throw InvalidArgument("tfidf_rank: empty corpus");
  if (top_k < 1) throw InvalidArgument("tfidf_rank: top_k must be >= 1");
  std::unordered_map<std::string, std::size_t> df;
  std::unordered_map<std::string, std::size_t> max_tf;
  for (const auto& doc : corpus) {
    std::unordered_map<std::string, std::size_t> tf;
    for (auto& w : text::content_words(doc)) ++tf[w];
    for (const auto& [w, c] : tf) {
      ++df[w];
      auto& m = max_tf[w];
      m = std::max(m, c);
    }
  }
  std::vector<TermScore> out;
  out.reserve(df.size());
  for (const auto& [w, d] : df) {
    out.push_back({w, static_cast<double>(max_tf[w]) *
                          smoothed_idf(corpus.size(), d)});
  }
  std::sort(out.begin(), out.end(), [](const TermScore& a, const TermScore& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.term < b.term;
  });
  if (out.size() > top_k) out.resize(top_k);
  return out;
}

// ---------------------------------------------------------------------------
// LDA (collapsed Gibbs sampling)
// ---------------------------------------------------------------------------

struct LdaOptions {
  std::size_t num_topics = 10;
  double alpha = -1.0;  // negative selects 50 / K
  double beta = 0.01;
  std::size_t iterations = 200;
  std::uint64_t seed = 0;
};

struct TopicModel {
  std::size_t num_topics = 0;
  std::vector<std::string> vocabulary;  // sorted
  std::vector<std::vector<double>> topic_word;  // K x V
  std::vector<std::vector<double>> doc_topic;   // D x K
  std::vector<double> prevalence;               // K, token share
  std::vector<std::vector<int>> assignments;    // per doc, per token topic
  double alpha = 0.0;
  double beta = 0.0;

  // Most probable words of topic k, probability descending, ties by word.
  std::vector<TermScore> top_words(std::size_t k, std::size_t n) const {
    std::vector<TermScore> out;
    for (std::size_t v = 0; v < vocabulary.size(); ++v) {
      out.push_back({vocabulary[v], topic_word.at(k)[v]});
    }
    std::sort(out.begin(), out.end(),
              [](const TermScore& a, const TermScore& b) {
                if (a.score != b.score) return a.score > b.score;
                return a.term < b.term;
              });
    if (out.size() > n) out.resize(n);
    return out;
  }
};

inline TopicModel lda_fit(const std::vector<std::string>& corpus,
                          const LdaOptions& opt) {
  const std::size_t K = opt.num_topics;
  if (K < 2) throw InvalidArgument("lda_fit: need at least 2 topics");
  if (opt.iterations < 1) {
    throw InvalidArgument("lda_fit: iterations must be >= 1");
  }
  const double alpha = opt.alpha > 0.0 ? opt.alpha : 50.0 / double(K);
  const double beta = opt.beta;
  if (!(beta > 0.0)) throw InvalidArgument("lda_fit: beta must be positive");

  std::vector<std::vector<std::string>> docs_words;
  std::map<std::string, int> vocab_index;
  for (const auto& doc : corpus) {
    docs_words.push_back(text::content_words(doc));
    for (const auto& w : docs_words.back()) vocab_index.emplace(w, 0);
  }
  if (vocab_index.empty()) {
    throw InvalidArgument("lda_fit: vocabulary empty after stopword removal");
  }
  TopicModel model;
  model.num_topics = K;
  model.alpha = alpha;
  model.beta = beta;
  for (auto& [w, id] : vocab_index) {
    id = static_cast<int>(model.vocabulary.size());
    model.vocabulary.push_back(w);
  }
  const std::size_t V = model.vocabulary.size();
  const std::size_t D = corpus.size();

  std::vector<std::vector<int>> docs(D);
  for (std::size_t d = 0; d < D; ++d) {
    for (const auto& w : docs_words[d]) docs[d].push_back(vocab_index[w]);
  }

  std::vector<std::vector<int>> n_dk(D, std::vector<int>(K, 0));
  std::vector<std::vector<int>> n_kw(K, std::vector<int>(V, 0));
  std::vector<int> n_k(K, 0);
  auto& z = model.assignments;
  z.assign(D, {});
  Rng rng(opt.seed);
  for (std::size_t d = 0; d < D; ++d) {
    z[d].resize(docs[d].size());
    for (std::size_t i = 0; i < docs[d].size(); ++i) {
      const int k = static_cast<int>(rng.below(K));
      z[d][i] = k;
      ++n_dk[d][k];
      ++n_kw[k][docs[d][i]];
      ++n_k[k];
    }
  }

  const double v_beta = double(V) * beta;
  std::vector<double> weights(K);
  for (std::size_t it = 0; it < opt.iterations; ++it) {
    for (std::size_t d = 0; d < D; ++d) {
      for (std::size_t i = 0; i < docs[d].size(); ++i) {
        const int w = docs[d][i];
        const int old = z[d][i];
        --n_dk[d][old];
        --n_kw[old][w];
        --n_k[old];
        for (std::size_t k = 0; k < K; ++k) {
          weights[k] = (n_dk[d][k] + alpha) * (n_kw[k][w] + beta) /
                       (n_k[k] + v_beta);
        }
        const int nk = static_cast<int>(rng.categorical(weights));
        z[d][i] = nk;
        ++n_dk[d][nk];
        ++n_kw[nk][w];
        ++n_k[nk];
      }
    }
  }

  model.topic_word.assign(K, std::vector<double>(V));
  for (std::size_t k = 0; k < K; ++k) {
    const double denom = n_k[k] + v_beta;
    for (std::size_t v = 0; v < V; ++v) {
      model.topic_word[k][v] = (n_kw[k][v] + beta) / denom;
    }
  }
  model.doc_topic.assign(D, std::vector<double>(K));
  for (std::size_t d = 0; d < D; ++d) {
    const double denom = double(docs[d].size()) + double(K) * alpha;
    for (std::size_t k = 0; k < K; ++k) {
      model.doc_topic[d][k] = (n_dk[d][k] + alpha) / denom;
    }
  }
  std::size_t total = 0;
  for (int c : n_k) total += static_cast<std::size_t>(c);
  model.prevalence.assign(K, 1.0 / double(K));
  if (total > 0) {
    for (std::size_t k = 0; k < K; ++k) {
      model.prevalence[k] = double(n_k[k]) / double(total);
    }
  }
  return model;
}

// ---------------------------------------------------------------------------
// Per-trait word frequencies
// ---------------------------------------------------------------------------

struct TermCount {
  std::string term;
  std::size_t count;

  friend bool operator==(const TermCount&, const TermCount&) = default;
};

using TraitFrequencies = std::map<Trait, std::vector<TermCount>>;

// Counts content words of the answers per trait over both sides of the
// split; lists are sorted by count descending, ties by term.
inline TraitFrequencies trait_word_frequencies(
    const corpus::DatasetSplit& split) {
  std::array<std::map<std::string, std::size_t>, kNumTraits> counts;
  auto add = [&](const std::vector<corpus::OpinionRecord>& rs) {
    for (const auto& r : rs) {
      auto& m = counts[index_of(r.target_personality)];
      for (auto& w : text::content_words(r.answer)) ++m[w];
    }
  };
  add(split.train);
  add(split.test);
  TraitFrequencies out;
  for (Trait t : kAllTraits) {
    auto& list = out[t];
    for (const auto& [w, c] : counts[index_of(t)]) list.push_back({w, c});
    std::stable_sort(list.begin(), list.end(),
                     [](const TermCount& a, const TermCount& b) {
                       return a.count > b.count;
                     });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Report emitters
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json to_json(const std::vector<TermScore>& terms) {
  nlohmann::ordered_json arr = nlohmann::ordered_json::array();
  for (const auto& t : terms) {
    arr.push_back({{"term", t.term}, {"score", t.score}});
  }
  return arr;
}

inline std::string to_csv(const std::vector<TermScore>& terms) {
  std::ostringstream os;
  os.precision(17);
  os << "term,score\n";
  for (const auto& t : terms) os << t.term << ',' << t.score << '\n';
  return os.str();
}

inline nlohmann::ordered_json to_json(const TopicModel& m,
                                      std::size_t words_per_topic = 10) {
  nlohmann::ordered_json j;
  j["num_topics"] = m.num_topics;
  j["alpha"] = m.alpha;
  j["beta"] = m.beta;
  j["vocabulary_size"] = m.vocabulary.size();
  nlohmann::ordered_json topics = nlohmann::ordered_json::array();
  for (std::size_t k = 0; k < m.num_topics; ++k) {
    nlohmann::ordered_json t;
    t["topic"] = k;
    t["prevalence"] = m.prevalence[k];
    t["top_words"] = to_json(m.top_words(k, words_per_topic));
    topics.push_back(std::move(t));
  }
  j["topics"] = std::move(topics);
  j["doc_topic"] = m.doc_topic;
  return j;
}

inline std::string to_csv(const TopicModel& m,
                          std::size_t words_per_topic = 10) {
  std::ostringstream os;
  os.precision(17);
  os << "topic,prevalence,rank,word,probability\n";
  for (std::size_t k = 0; k < m.num_topics; ++k) {
    const auto words = m.top_words(k, words_per_topic);
    for (std::size_t r = 0; r < words.size(); ++r) {
      os << k << ',' << m.prevalence[k] << ',' << r << ',' << words[r].term
         << ',' << words[r].score << '\n';
    }
  }
  return os.str();
}

inline nlohmann::ordered_json to_json(const TraitFrequencies& f,
                                      std::size_t top_n) {
  nlohmann::ordered_json j;
  for (const auto& [trait, list] : f) {
    nlohmann::ordered_json arr = nlohmann::ordered_json::array();
    for (std::size_t i = 0; i < list.size() && i < top_n; ++i) {
      arr.push_back({{"term", list[i].term}, {"count", list[i].count}});
    }
    j[std::string(to_string(trait))] = std::move(arr);
  }
  return j;
}

}  // namespace traitlab::textstats
