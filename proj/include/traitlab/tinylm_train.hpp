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

#include <cmath>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "traitlab/error.hpp"
#include "traitlab/optim.hpp"
#include "traitlab/rng.hpp"
#include "traitlab/tinylm.hpp"

namespace traitlab::tinylm {

struct TrainConfig {
  OptimizerConfig optimizer;
  int steps = 200;
  int batch_size = 4;
  std::uint64_t seed = 0;
  // Mean loss over the whole corpus before and after training.
  bool evaluate_corpus = true;
};

struct TrainResult {
  Parameters params;
  std::vector<double> losses;  // per-step mean batch loss, before the update
  double initial_loss = 0.0;
  double final_loss = 0.0;
};

// BOS + bytes + EOS, cut into windows the model can see. Consecutive windows
// overlap by one token so every transition is trained.
inline std::vector<Example> corpus_examples(
    const std::vector<std::string>& corpus, int max_seq_len) {
  std::vector<Example> out;
  const std::size_t window = static_cast<std::size_t>(max_seq_len) + 1;
  for (const auto& doc : corpus) {
    std::vector<int> ids = prompt_context(doc);
    ids.push_back(kEos);
    for (std::size_t start = 0; start + 1 < ids.size();
         start += window - 1) {
      const std::size_t end = std::min(ids.size(), start + window);
      out.push_back(full_example({ids.begin() + start, ids.begin() + end}));
      if (end == ids.size()) break;
    }
  }
  return out;
}

using StepCallback = std::function<void(int step, double loss)>;

// Next-token training of every base parameter on `examples`.
inline TrainResult train_lm_examples(Parameters params,
                                     const std::vector<Example>& examples,
                            const TrainConfig& cfg,
                            const StepCallback& on_step = {}) {
  if (examples.empty()) throw InvalidArgument("train_lm: empty corpus");
  if (cfg.steps < 0 || cfg.batch_size < 1) {
    throw InvalidArgument("train_lm: steps >= 0 and batch_size >= 1 required");
  }
  TrainResult r;
  if (cfg.evaluate_corpus) r.initial_loss = mean_loss(params, examples);

  std::vector<Matrix*> slots;
  params.for_each([&](const std::string&, Matrix& m) { slots.push_back(&m); });
  Optimizer opt(cfg.optimizer);
  Rng rng(cfg.seed);
  std::vector<std::size_t> order(examples.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::size_t cursor = order.size();

  for (int step = 0; step < cfg.steps; ++step) {
    Gradients g = zero_gradients(params, nullptr, true);
    std::vector<const Example*> batch;
    double weight = 0.0;
    for (int b = 0; b < cfg.batch_size; ++b) {
      if (cursor == order.size()) {
        rng.shuffle(order);
        cursor = 0;
      }
      batch.push_back(&examples[order[cursor++]]);
      weight += weight_sum(*batch.back());
    }
    if (weight == 0.0) continue;
    double loss = 0.0;
    for (const Example* ex : batch) {
      loss += loss_and_backward(params, *ex, {}, 1.0 / weight, &g);
    }
    loss /= weight;
    if (!std::isfinite(loss)) throw DivergenceError(step);
    r.losses.push_back(loss);
    if (on_step) on_step(step, loss);

    std::vector<const Matrix*> grads;
    g.base.for_each(
        [&](const std::string&, const Matrix& m) { grads.push_back(&m); });
    opt.step(slots, grads);
  }
  if (cfg.evaluate_corpus) {
    r.final_loss = mean_loss(params, examples);
    if (!std::isfinite(r.final_loss)) throw DivergenceError(cfg.steps);
  }
  r.params = std::move(params);
  return r;
}

inline TrainResult train_lm(Parameters params,
                            const std::vector<std::string>& corpus,
                            const TrainConfig& cfg,
                            const StepCallback& on_step = {}) {
  if (corpus.empty()) throw InvalidArgument("train_lm: empty corpus");
  const int len = params.config.max_seq_len;
  return train_lm_examples(std::move(params), corpus_examples(corpus, len),
                           cfg, on_step);
}

}  // namespace traitlab::tinylm
