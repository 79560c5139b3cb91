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
#include <string>
#include <vector>

#include <json.hpp>

#include "traitlab/corpus.hpp"
#include "traitlab/error.hpp"
#include "traitlab/lora.hpp"
#include "traitlab/optim.hpp"
#include "traitlab/rng.hpp"
#include "traitlab/tinylm.hpp"

namespace traitlab::peft {

using corpus::OpinionRecord;

struct FinetuneConfig {
  int lora_r = 64;
  double lora_alpha = 16.0;
  double lora_dropout = 0.1;
  double learning_rate = 2e-4;
  int batch_size = 4;
  int epochs = 2;
  std::uint64_t seed = 0;
  std::vector<std::string> targets = {"wq", "wv", "w_in"};
  OptimizerKind optimizer = OptimizerKind::Adam;
  double clip_norm = 1.0;
  double init_std = kDefaultInitStd;

  double scale() const { return lora_alpha / lora_r; }

  void validate() const {
    if (lora_r < 1 || !(lora_alpha > 0.0) || batch_size < 1 || epochs < 0) {
      throw InvalidArgument(
          "finetune config: lora_r, lora_alpha and batch_size must be "
          "positive, epochs >= 0");
    }
    if (!(lora_dropout >= 0.0 && lora_dropout < 1.0)) {
      throw InvalidArgument("finetune config: lora_dropout must be in [0, 1)");
    }
    if (!(learning_rate >= 0.0)) {
      throw InvalidArgument("finetune config: learning_rate must be >= 0");
    }
    const auto& known = tinylm::adaptable_projections();
    for (const auto& t : targets) {
      if (std::find(known.begin(), known.end(), t) == known.end()) {
        throw InvalidArgument("finetune config: unknown target '" + t + "'");
      }
    }
    if (targets.empty()) throw InvalidArgument("finetune config: no targets");
  }

  // Same schema with the rank capped by the smallest adapted dimension and
  // alpha rescaled so the adapter scale alpha / r is preserved.
  FinetuneConfig scaled_to(const tinylm::ModelConfig& m) const {
    FinetuneConfig c = *this;
    const int cap = std::min(m.d_model, m.d_mlp);
    if (c.lora_r > cap) {
      c.lora_alpha = scale() * cap;
      c.lora_r = cap;
    }
    return c;
  }
};

inline nlohmann::ordered_json to_json(const FinetuneConfig& c) {
  return {{"lora_r", c.lora_r},
          {"lora_alpha", c.lora_alpha},
          {"lora_dropout", c.lora_dropout},
          {"learning_rate", c.learning_rate},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"targets", c.targets},
          {"optimizer", to_string(c.optimizer)},
          {"clip_norm", c.clip_norm}};
}

inline FinetuneConfig finetune_config_from_json(const nlohmann::json& j,
                                                FinetuneConfig c = {}) {
  c.lora_r = j.value("lora_r", c.lora_r);
  c.lora_alpha = j.value("lora_alpha", c.lora_alpha);
  c.lora_dropout = j.value("lora_dropout", c.lora_dropout);
  c.learning_rate = j.value("learning_rate", c.learning_rate);
  c.batch_size = j.value("batch_size", c.batch_size);
  c.epochs = j.value("epochs", c.epochs);
  c.seed = j.value("seed", c.seed);
  c.targets = j.value("targets", c.targets);
  if (j.contains("optimizer")) {
    c.optimizer = parse_optimizer_kind(j.at("optimizer").get<std::string>());
  }
  c.clip_norm = j.value("clip_norm", c.clip_norm);
  c.validate();
  return c;
}

// Fresh adapters (L2 = 0) on every target projection of every layer.
inline AdapterSet init_adapters(const tinylm::Parameters& p,
                                const FinetuneConfig& cfg) {
  cfg.validate();
  AdapterSet set;
  set.rank = cfg.lora_r;
  set.alpha = cfg.lora_alpha;
  set.dropout = cfg.lora_dropout;
  for (int li = 0; li < p.config.n_layers; ++li) {
    const auto& L = p.layers[li];
    for (const auto& t : cfg.targets) {
      const Matrix& w = t == "wq"     ? L.wq
                        : t == "wk"   ? L.wk
                        : t == "wv"   ? L.wv
                        : t == "wo"   ? L.wo
                        : t == "w_in" ? L.w_in
                                      : L.w_out;
      const std::string name = tinylm::layer_param_name(li, t);
      set.adapters.emplace(
          name, init_adapter(w.rows(), w.cols(), cfg.lora_r, cfg.scale(),
                             mix_seed(cfg.seed, name), cfg.lora_dropout,
                             cfg.init_std));
    }
  }
  return set;
}

// Tokens of BOS + format_sft(record) + EOS, with loss only on the answer
// region (everything after the instruction close marker, EOS included).
// Sequences longer than the context keep their tail.
inline tinylm::Example sft_example(const OpinionRecord& r, int max_seq_len) {
  std::vector<int> ids = tinylm::prompt_context(corpus::format_sft(r));
  ids.push_back(tinylm::kEos);
  const std::size_t answer_start = 1 + corpus::format_sft_prompt(r.question).size();
  const std::size_t window = static_cast<std::size_t>(max_seq_len) + 1;
  std::size_t drop = ids.size() > window ? ids.size() - window : 0;
  tinylm::Example ex;
  ex.tokens.assign(ids.begin() + drop, ids.end());
  ex.weights.resize(ex.tokens.size() - 1);
  for (std::size_t t = 0; t + 1 < ex.tokens.size(); ++t) {
    ex.weights[t] = t + 1 + drop >= answer_start ? 1.0 : 0.0;
  }
  return ex;
}

inline std::vector<tinylm::Example> sft_examples(
    const std::vector<OpinionRecord>& records, int max_seq_len) {
  std::vector<tinylm::Example> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(sft_example(r, max_seq_len));
  return out;
}

struct FinetuneResult {
  AdapterSet adapters;
  std::vector<double> losses;  // per step, before the update
  double initial_loss = 0.0;   // mean answer-token loss over the train set
  double final_loss = 0.0;
  int steps = 0;
};

// Trains adapters on `train` while the base parameters stay untouched.
inline FinetuneResult finetune(const tinylm::Parameters& base,
                               const std::vector<OpinionRecord>& train,
                               const FinetuneConfig& cfg) {
  cfg.validate();
  if (train.empty()) throw InvalidArgument("finetune: empty training set");
  const auto examples = sft_examples(train, base.config.max_seq_len);

  FinetuneResult r;
  r.adapters = init_adapters(base, cfg);
  tinylm::ForwardOptions eval;
  eval.adapters = &r.adapters;
  r.initial_loss = tinylm::mean_loss(base, examples, eval);

  OptimizerConfig oc;
  oc.kind = cfg.optimizer;
  oc.learning_rate = cfg.learning_rate;
  oc.momentum = 0.0;
  oc.clip_norm = cfg.clip_norm;
  Optimizer opt(oc);
  std::vector<Matrix*> slots;
  for (auto& [name, a] : r.adapters.adapters) {
    slots.push_back(&a.l1);
    slots.push_back(&a.l2);
  }

  Rng rng(mix_seed(cfg.seed, "finetune"));
  tinylm::ForwardOptions train_opt;
  train_opt.adapters = &r.adapters;
  train_opt.training = true;
  train_opt.rng = &rng;
  std::vector<std::size_t> order(examples.size());
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);
    for (std::size_t start = 0; start < order.size();
         start += cfg.batch_size) {
      const std::size_t end =
          std::min(order.size(), start + static_cast<std::size_t>(cfg.batch_size));
      double weight = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        weight += tinylm::weight_sum(examples[order[i]]);
      }
      if (weight == 0.0) continue;
      tinylm::Gradients g =
          tinylm::zero_gradients(base, &r.adapters, false);
      double loss = 0.0;
      for (std::size_t i = start; i < end; ++i) {
        loss += tinylm::loss_and_backward(base, examples[order[i]], train_opt,
                                          1.0 / weight, &g);
      }
      loss /= weight;
      if (!std::isfinite(loss)) throw DivergenceError(r.steps);
      r.losses.push_back(loss);
      std::vector<const Matrix*> grads;
      for (auto& [name, pair] : g.adapters) {
        grads.push_back(&pair.first);
        grads.push_back(&pair.second);
      }
      opt.step(slots, grads);
      ++r.steps;
    }
  }
  r.final_loss = tinylm::mean_loss(base, examples, eval);
  if (!std::isfinite(r.final_loss)) throw DivergenceError(r.steps);
  return r;
}

// Base weights with every adapter folded in; adapters are left untouched.
inline tinylm::Parameters merge_adapters(const tinylm::Parameters& base,
                                         const AdapterSet& set) {
  tinylm::Parameters out = base;
  std::map<std::string, Matrix*> slots;
  out.for_each([&slots](const std::string& n, Matrix& m) { slots[n] = &m; });
  for (const auto& [name, a] : set.adapters) {
    auto it = slots.find(name);
    if (it == slots.end()) {
      throw InvalidArgument("adapter target '" + name + "' not in model");
    }
    if (!a.merged) *it->second = merge(*it->second, a);
  }
  return out;
}

}  // namespace traitlab::peft
