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
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "traitlab/corpus.hpp"
#include "traitlab/error.hpp"
#include "traitlab/text.hpp"
#include "traitlab/textstats.hpp"
#include "traitlab/trait.hpp"

namespace traitlab::classifier {

using corpus::OpinionRecord;
using SparseVector = std::vector<std::pair<std::size_t, double>>;

struct ClassifierConfig {
  int max_epochs = 500;  // one epoch = one full-batch gradient step
  double learning_rate = 2.0;
  double l2 = 1e-4;
  double plateau_tolerance = 1e-5;  // relative loss improvement per epoch
  std::uint64_t seed = 0;
};

struct ClassifierModel {
  std::vector<std::string> vocabulary;  // sorted
  std::vector<double> idf;
  // weights[f][c] with classes in canonical trait order.
  std::vector<std::array<double, kNumTraits>> weights;
  std::array<double, kNumTraits> bias{};
  int epochs_run = 0;
  std::vector<double> loss_curve;

  SparseVector featurize(std::string_view text) const {
    std::map<std::size_t, double> tf;
    for (const auto& w : text::words(text)) {
      auto it = std::lower_bound(vocabulary.begin(), vocabulary.end(), w);
      if (it != vocabulary.end() && *it == w) {
        tf[static_cast<std::size_t>(it - vocabulary.begin())] += 1.0;
      }
    }
    SparseVector v;
    double norm = 0.0;
    for (const auto& [i, c] : tf) {
      v.emplace_back(i, c * idf[i]);
      norm += v.back().second * v.back().second;
    }
    norm = std::sqrt(norm);
    if (norm > 0.0) {
      for (auto& e : v) e.second /= norm;
    }
    return v;
  }

  std::array<double, kNumTraits> logits(const SparseVector& x) const {
    std::array<double, kNumTraits> z = bias;
    for (const auto& [i, v] : x) {
      for (std::size_t c = 0; c < kNumTraits; ++c) z[c] += v * weights[i][c];
    }
    return z;
  }
};

inline std::array<double, kNumTraits> softmax(
    const std::array<double, kNumTraits>& z) {
  const double mx = *std::max_element(z.begin(), z.end());
  std::array<double, kNumTraits> p{};
  double s = 0.0;
  for (std::size_t c = 0; c < kNumTraits; ++c) s += p[c] = std::exp(z[c] - mx);
  for (double& v : p) v /= s;
  return p;
}

struct Prediction {
  Trait trait = Trait::Openness;
  std::array<double, kNumTraits> probabilities{};  // canonical trait order
};

// Argmax of the softmax; ties go to the earliest trait in canonical order.
inline Prediction predict(const ClassifierModel& m, std::string_view text) {
  Prediction p;
  p.probabilities = softmax(m.logits(m.featurize(text)));
  std::size_t best = 0;
  for (std::size_t c = 1; c < kNumTraits; ++c) {
    if (p.probabilities[c] > p.probabilities[best]) best = c;
  }
  p.trait = kAllTraits[best];
  return p;
}

// Multinomial logistic regression over L2-normalised TF-IDF features, fitted
// by full-batch gradient descent. Records are put in a canonical order first
// so the fit does not depend on input order.
inline ClassifierModel train_classifier(std::vector<OpinionRecord> train,
                                        const ClassifierConfig& cfg = {}) {
  if (train.empty()) throw InvalidArgument("train_classifier: empty data");
  if (cfg.max_epochs < 0 || !(cfg.learning_rate >= 0.0)) {
    throw InvalidArgument("train_classifier: bad epochs or learning rate");
  }
  std::sort(train.begin(), train.end(),
            [](const OpinionRecord& a, const OpinionRecord& b) {
              if (a.target_personality != b.target_personality) {
                return a.target_personality < b.target_personality;
              }
              return a.answer < b.answer;
            });
  std::array<std::size_t, kNumTraits> support{};
  for (const auto& r : train) ++support[index_of(r.target_personality)];
  const auto present =
      std::count_if(support.begin(), support.end(),
                    [](std::size_t n) { return n > 0; });
  if (present < 2) {
    throw InvalidArgument("train_classifier: need at least two traits");
  }

  ClassifierModel m;
  std::map<std::string, std::size_t> df;
  std::vector<std::vector<std::string>> docs;
  for (const auto& r : train) {
    docs.push_back(text::words(r.answer));
    std::vector<std::string> uniq = docs.back();
    std::sort(uniq.begin(), uniq.end());
    uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
    for (auto& w : uniq) ++df[w];
  }
  for (const auto& [w, n] : df) {
    m.vocabulary.push_back(w);
    m.idf.push_back(textstats::smoothed_idf(train.size(), n));
  }
  m.weights.assign(m.vocabulary.size(), {});

  std::vector<SparseVector> x;
  std::vector<std::size_t> y;
  for (const auto& r : train) {
    x.push_back(m.featurize(r.answer));
    y.push_back(index_of(r.target_personality));
  }
  const double n = static_cast<double>(train.size());

  auto loss_and_grad =
      [&](std::vector<std::array<double, kNumTraits>>* gw,
          std::array<double, kNumTraits>* gb) {
        double loss = 0.0;
        if (gw) {
          gw->assign(m.weights.size(), {});
          gb->fill(0.0);
        }
        for (std::size_t i = 0; i < x.size(); ++i) {
          const auto z = m.logits(x[i]);
          const auto p = softmax(z);
          loss -= std::log(std::max(p[y[i]], 1e-300));
          if (!gw) continue;
          for (std::size_t c = 0; c < kNumTraits; ++c) {
            const double d = (p[c] - (c == y[i] ? 1.0 : 0.0)) / n;
            (*gb)[c] += d;
            for (const auto& [f, v] : x[i]) (*gw)[f][c] += d * v;
          }
        }
        loss /= n;
        double reg = 0.0;
        for (std::size_t f = 0; f < m.weights.size(); ++f) {
          for (std::size_t c = 0; c < kNumTraits; ++c) {
            reg += m.weights[f][c] * m.weights[f][c];
            if (gw) (*gw)[f][c] += cfg.l2 * m.weights[f][c];
          }
        }
        return loss + 0.5 * cfg.l2 * reg;
      };

  std::vector<std::array<double, kNumTraits>> gw;
  std::array<double, kNumTraits> gb{};
  double prev = loss_and_grad(nullptr, nullptr);
  m.loss_curve.push_back(prev);
  for (int epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    loss_and_grad(&gw, &gb);
    for (std::size_t f = 0; f < m.weights.size(); ++f) {
      for (std::size_t c = 0; c < kNumTraits; ++c) {
        m.weights[f][c] -= cfg.learning_rate * gw[f][c];
      }
    }
    for (std::size_t c = 0; c < kNumTraits; ++c) {
      m.bias[c] -= cfg.learning_rate * gb[c];
    }
    ++m.epochs_run;
    const double cur = loss_and_grad(nullptr, nullptr);
    m.loss_curve.push_back(cur);
    if (!std::isfinite(cur)) throw DivergenceError(m.epochs_run);
    const bool plateau = prev - cur < cfg.plateau_tolerance * std::abs(prev);
    prev = cur;
    if (plateau) break;
  }
  return m;
}

// ---------------------------------------------------------------------------
// Evaluation
// ---------------------------------------------------------------------------

// confusion[true][predicted], canonical trait order.
using Confusion = std::array<std::array<std::size_t, kNumTraits>, kNumTraits>;

struct ClassMetrics {
  std::size_t support = 0;
  double weight = 0.0;  // support share
  double precision = 0.0;
  double recall = 0.0;
  double f1 = 0.0;
  // (TP + TN) / (TP + TN + FP + FN) for the one-vs-rest problem.
  double binary_accuracy = 0.0;
};

struct EvalReport {
  double weighted_accuracy = 0.0;  // sum_c W_c * recall_c
  double weighted_binary_accuracy = 0.0;
  double weighted_precision = 0.0;
  double weighted_recall = 0.0;
  double weighted_f1 = 0.0;
  double accuracy = 0.0;
  std::array<ClassMetrics, kNumTraits> per_trait{};
  Confusion confusion{};
  std::size_t total = 0;
};

// Ratios with a zero denominator are reported as 0.
inline EvalReport report_from_confusion(const Confusion& conf) {
  EvalReport r;
  r.confusion = conf;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < kNumTraits; ++i) {
    for (std::size_t j = 0; j < kNumTraits; ++j) r.total += conf[i][j];
    correct += conf[i][i];
  }
  if (r.total == 0) return r;
  const double total = static_cast<double>(r.total);
  r.accuracy = correct / total;
  for (std::size_t c = 0; c < kNumTraits; ++c) {
    std::size_t tp = conf[c][c], fp = 0, fn = 0;
    for (std::size_t k = 0; k < kNumTraits; ++k) {
      if (k == c) continue;
      fn += conf[c][k];
      fp += conf[k][c];
    }
    const std::size_t tn = r.total - tp - fp - fn;
    ClassMetrics& m = r.per_trait[c];
    m.support = tp + fn;
    m.weight = m.support / total;
    m.precision = tp + fp ? static_cast<double>(tp) / (tp + fp) : 0.0;
    m.recall = tp + fn ? static_cast<double>(tp) / (tp + fn) : 0.0;
    m.f1 = m.precision + m.recall > 0.0
               ? 2.0 * m.precision * m.recall / (m.precision + m.recall)
               : 0.0;
    m.binary_accuracy = static_cast<double>(tp + tn) / total;
    r.weighted_accuracy += m.weight * m.recall;
    r.weighted_binary_accuracy += m.weight * m.binary_accuracy;
    r.weighted_precision += m.weight * m.precision;
    r.weighted_recall += m.weight * m.recall;
    r.weighted_f1 += m.weight * m.f1;
  }
  return r;
}

inline Confusion confusion_from(const std::vector<Trait>& labels,
                                const std::vector<Trait>& predictions) {
  if (labels.size() != predictions.size()) {
    throw InvalidArgument("confusion: label/prediction count mismatch");
  }
  Confusion c{};
  for (std::size_t i = 0; i < labels.size(); ++i) {
    ++c[index_of(labels[i])][index_of(predictions[i])];
  }
  return c;
}

inline EvalReport evaluate(const ClassifierModel& m,
                           const std::vector<OpinionRecord>& test) {
  if (test.empty()) throw InvalidArgument("evaluate: empty test split");
  std::vector<Trait> labels, preds;
  for (const auto& r : test) {
    labels.push_back(r.target_personality);
    preds.push_back(predict(m, r.answer).trait);
  }
  return report_from_confusion(confusion_from(labels, preds));
}

// Rows are true traits and columns predictions, both in display order.
inline std::string confusion_csv(const Confusion& c) {
  std::ostringstream os;
  os << "true\\predicted";
  for (Trait t : kConfusionDisplayOrder) os << ',' << to_string(t);
  os << '\n';
  for (Trait row : kConfusionDisplayOrder) {
    os << to_string(row);
    for (Trait col : kConfusionDisplayOrder) {
      os << ',' << c[index_of(row)][index_of(col)];
    }
    os << '\n';
  }
  return os.str();
}

inline nlohmann::ordered_json to_json(const EvalReport& r) {
  nlohmann::ordered_json j;
  j["weighted_accuracy"] = r.weighted_accuracy;
  j["weighted_binary_accuracy"] = r.weighted_binary_accuracy;
  j["weighted_precision"] = r.weighted_precision;
  j["weighted_recall"] = r.weighted_recall;
  j["weighted_f1"] = r.weighted_f1;
  j["accuracy"] = r.accuracy;
  j["total"] = r.total;
  auto& pt = j["per_trait"] = nlohmann::ordered_json::object();
  for (Trait t : kConfusionDisplayOrder) {
    const auto& m = r.per_trait[index_of(t)];
    pt[std::string(to_string(t))] = {{"support", m.support},
                                     {"weight", m.weight},
                                     {"precision", m.precision},
                                     {"recall", m.recall},
                                     {"f1", m.f1},
                                     {"binary_accuracy", m.binary_accuracy}};
  }
  auto& order = j["confusion_order"] = nlohmann::ordered_json::array();
  auto& rows = j["confusion"] = nlohmann::ordered_json::array();
  for (Trait row : kConfusionDisplayOrder) {
    order.push_back(to_string(row));
    auto& line = rows.emplace_back(nlohmann::ordered_json::array());
    for (Trait col : kConfusionDisplayOrder) {
      line.push_back(r.confusion[index_of(row)][index_of(col)]);
    }
  }
  return j;
}

// ---------------------------------------------------------------------------
// Persistence
// ---------------------------------------------------------------------------

inline constexpr std::string_view kModelFormat = "traitlab-classifier";
inline constexpr int kModelVersion = 1;

inline nlohmann::ordered_json to_json(const ClassifierModel& m) {
  nlohmann::ordered_json j;
  j["format"] = kModelFormat;
  j["version"] = kModelVersion;
  auto& traits = j["traits"] = nlohmann::ordered_json::array();
  for (Trait t : kAllTraits) traits.push_back(to_string(t));
  j["vocabulary"] = m.vocabulary;
  j["idf"] = m.idf;
  j["weights"] = m.weights;
  j["bias"] = m.bias;
  j["epochs_run"] = m.epochs_run;
  return j;
}

inline ClassifierModel classifier_from_json(const nlohmann::json& j) {
  if (j.value("format", std::string()) != kModelFormat) {
    throw ParseError("not a classifier model file");
  }
  if (j.value("version", 0) != kModelVersion) {
    throw ParseError("unsupported classifier model version");
  }
  ClassifierModel m;
  try {
    m.vocabulary = j.at("vocabulary").get<std::vector<std::string>>();
    m.idf = j.at("idf").get<std::vector<double>>();
    m.weights =
        j.at("weights").get<std::vector<std::array<double, kNumTraits>>>();
    m.bias = j.at("bias").get<std::array<double, kNumTraits>>();
    m.epochs_run = j.value("epochs_run", 0);
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("classifier model: ") + e.what());
  }
  if (m.idf.size() != m.vocabulary.size() ||
      m.weights.size() != m.vocabulary.size()) {
    throw ParseError("classifier model: inconsistent sizes");
  }
  if (!std::is_sorted(m.vocabulary.begin(), m.vocabulary.end())) {
    throw ParseError("classifier model: vocabulary must be sorted");
  }
  return m;
}

}  // namespace traitlab::classifier
