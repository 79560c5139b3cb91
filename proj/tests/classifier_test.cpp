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
#include <string>
#include <vector>

#include <gtest/gtest.h>

#include "traitlab/classifier.hpp"
#include "traitlab/rng.hpp"
#include "traitlab/synthetic.hpp"

namespace traitlab::classifier {
namespace {

struct Oracle {
  double acc = 0, bin = 0, prec = 0, rec = 0, f1 = 0;
};

// Recomputes every weighted metric by walking the individual instances.
Oracle brute_force(const std::vector<Trait>& labels,
                   const std::vector<Trait>& preds) {
  Oracle o;
  const double n = static_cast<double>(labels.size());
  for (Trait c : kAllTraits) {
    double tp = 0, fp = 0, fn = 0, tn = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      const bool is = labels[i] == c, said = preds[i] == c;
      tp += is && said;
      fp += !is && said;
      fn += is && !said;
      tn += !is && !said;
    }
    const double w = (tp + fn) / n;
    const double p = tp + fp > 0 ? tp / (tp + fp) : 0.0;
    const double r = tp + fn > 0 ? tp / (tp + fn) : 0.0;
    const double f = p + r > 0 ? 2 * p * r / (p + r) : 0.0;
    o.acc += w * r;
    o.bin += w * (tp + tn) / n;
    o.prec += w * p;
    o.rec += w * r;
    o.f1 += w * f;
  }
  return o;
}

TEST(WeightedMetrics, MatchBruteForceOnRandomConfusions) {
  Rng rng(1);
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t n = 1 + rng.below(300);
    std::vector<Trait> labels(n), preds(n);
    for (std::size_t i = 0; i < n; ++i) {
      labels[i] = kAllTraits[rng.below(trial % 3 == 0 ? 2 : kNumTraits)];
      preds[i] = rng.uniform() < 0.7 ? labels[i] : kAllTraits[rng.below(kNumTraits)];
    }
    const auto r = report_from_confusion(confusion_from(labels, preds));
    const auto o = brute_force(labels, preds);
    EXPECT_NEAR(r.weighted_accuracy, o.acc, 1e-12);
    EXPECT_NEAR(r.weighted_binary_accuracy, o.bin, 1e-12);
    EXPECT_NEAR(r.weighted_precision, o.prec, 1e-12);
    EXPECT_NEAR(r.weighted_recall, o.rec, 1e-12);
    EXPECT_NEAR(r.weighted_f1, o.f1, 1e-12);
    double wsum = 0;
    for (const auto& m : r.per_trait) wsum += m.weight;
    EXPECT_NEAR(wsum, 1.0, 1e-12);
  }
}

TEST(WeightedMetrics, BalancedClassesGivePlainAccuracy) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<Trait> labels, preds;
    const std::size_t per = 1 + rng.below(20);
    for (Trait t : kAllTraits) {
      for (std::size_t i = 0; i < per; ++i) {
        labels.push_back(t);
        preds.push_back(rng.uniform() < 0.5 ? t : kAllTraits[rng.below(5)]);
      }
    }
    const auto r = report_from_confusion(confusion_from(labels, preds));
    EXPECT_NEAR(r.weighted_accuracy, r.accuracy, 1e-12);
  }
}

// Published confusion matrix; rows true, columns predicted, display order.
Confusion published_confusion() {
  const std::size_t rows[5][5] = {{193, 0, 0, 0, 7},
                                  {1, 195, 3, 0, 1},
                                  {0, 7, 193, 0, 0},
                                  {1, 0, 1, 170, 28},
                                  {1, 5, 0, 26, 168}};
  Confusion c{};
  for (std::size_t i = 0; i < 5; ++i) {
    for (std::size_t j = 0; j < 5; ++j) {
      c[index_of(kConfusionDisplayOrder[i])][index_of(kConfusionDisplayOrder[j])] =
          rows[i][j];
    }
  }
  return c;
}

TEST(WeightedMetrics, PublishedConfusionReplay) {
  const Confusion c = published_confusion();
  std::vector<Trait> labels, preds;
  for (std::size_t i = 0; i < kNumTraits; ++i) {
    for (std::size_t j = 0; j < kNumTraits; ++j) {
      for (std::size_t k = 0; k < c[i][j]; ++k) {
        labels.push_back(kAllTraits[i]);
        preds.push_back(kAllTraits[j]);
      }
    }
  }
  const auto r = report_from_confusion(confusion_from(labels, preds));
  EXPECT_EQ(r.total, 1000u);
  EXPECT_NEAR(r.weighted_accuracy, 0.919, 1e-3);
  EXPECT_NEAR(r.weighted_recall, 0.919, 1e-12);
  EXPECT_GT(r.weighted_binary_accuracy, 0.96);
  const auto csv = confusion_csv(r.confusion);
  EXPECT_NE(csv.find("Openness,1,0,1,170,28"), std::string::npos);
  EXPECT_TRUE(csv.starts_with(
      "true\\predicted,Extraversion,Agreeableness,Neuroticism,Openness,"
      "Conscientiousness\n"));
}

TEST(WeightedMetrics, ZeroDenominatorsReportZero) {
  Confusion c{};
  c[0][1] = 3;
  const auto r = report_from_confusion(c);
  EXPECT_EQ(r.per_trait[0].recall, 0.0);
  EXPECT_EQ(r.per_trait[1].precision, 0.0);
  EXPECT_EQ(r.per_trait[2].f1, 0.0);
  EXPECT_EQ(report_from_confusion(Confusion{}).total, 0u);
}

TEST(Classifier, LearnsStubTraitsAndIsOrderIndependent) {
  auto records = synthetic::stub_records(60, 1);
  const auto split = corpus::split_dataset(records, 0.2, 3);
  ClassifierConfig cfg;
  cfg.seed = 4;
  const auto m = train_classifier(split.train, cfg);
  const auto rep = evaluate(m, split.test);
  EXPECT_GE(rep.accuracy, 0.95);
  EXPECT_GE(rep.weighted_f1, 0.95);

  auto shuffled = split.train;
  Rng rng(9);
  rng.shuffle(shuffled);
  const auto m2 = train_classifier(shuffled, cfg);
  EXPECT_EQ(m2.weights, m.weights);
  for (const auto& r : split.test) {
    const auto a = predict(m, r.answer), b = predict(m2, r.answer);
    EXPECT_EQ(a.trait, b.trait);
    EXPECT_EQ(a.probabilities, b.probabilities);
    double s = 0;
    for (double p : a.probabilities) s += p;
    EXPECT_NEAR(s, 1.0, 1e-9);
  }
}

TEST(Classifier, JsonRoundTripAndValidation) {
  const auto m = train_classifier(synthetic::stub_records(10, 2));
  const auto back = classifier_from_json(nlohmann::json::parse(to_json(m).dump()));
  EXPECT_EQ(back.vocabulary, m.vocabulary);
  EXPECT_EQ(predict(back, "so anxious and worried").probabilities,
            predict(m, "so anxious and worried").probabilities);
  auto j = nlohmann::json::parse(to_json(m).dump());
  j["format"] = "other";
  EXPECT_THROW(classifier_from_json(j), ParseError);
  j = nlohmann::json::parse(to_json(m).dump());
  j["idf"].erase(0);
  EXPECT_THROW(classifier_from_json(j), ParseError);
  EXPECT_THROW(train_classifier(synthetic::stub_records(0, 1)), InvalidArgument);
  std::vector<corpus::OpinionRecord> one = {
      {Trait::Openness, "Tea", "Tea?", "tea"}};
  EXPECT_THROW(train_classifier(one), InvalidArgument);
}

}  // namespace
}  // namespace traitlab::classifier
