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
#include <cstring>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "traitlab/checkpoint.hpp"
#include "traitlab/error.hpp"
#include "traitlab/lora.hpp"
#include "traitlab/tinylm.hpp"
#include "traitlab/trait.hpp"

namespace traitlab::interp {

struct NeuronReading {
  std::size_t index = 0;
  double activation = 0.0;
  friend bool operator==(const NeuronReading&, const NeuronReading&) = default;
};

enum class Verdict { Shift, Amplify, Dampen, NoChange };

inline std::string_view to_string(Verdict v) {
  switch (v) {
    case Verdict::Shift:
      return "Shift";
    case Verdict::Amplify:
      return "Amplify";
    case Verdict::Dampen:
      return "Dampen";
    case Verdict::NoChange:
      return "NoChange";
  }
  return "";
}

inline constexpr double kDefaultTolerance = 0.05;

// MLP activations of the traced layer (the last one by default) at the final
// position of BOS + prompt.
inline std::vector<double> capture_activations(
    const tinylm::Parameters& p, std::string_view prompt,
    const peft::AdapterSet* adapters = nullptr,
    tinylm::TraceOptions trace = {}) {
  tinylm::ForwardOptions opt;
  opt.adapters = adapters;
  opt.trace = trace;
  return tinylm::forward(p, tinylm::prompt_context(prompt), opt).trace->values;
}

// Highest activations first; equal values keep ascending index order.
inline std::vector<NeuronReading> top_neurons(const std::vector<double>& acts,
                                              std::size_t k) {
  if (k < 1) throw InvalidArgument("top_neurons: k must be >= 1");
  if (k > acts.size()) {
    throw InvalidArgument("top_neurons: k = " + std::to_string(k) +
                          " exceeds " + std::to_string(acts.size()) +
                          " neurons");
  }
  std::vector<std::size_t> idx(acts.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  std::stable_sort(idx.begin(), idx.end(), [&acts](std::size_t a,
                                                   std::size_t b) {
    return acts[a] > acts[b];
  });
  std::vector<NeuronReading> out;
  for (std::size_t i = 0; i < k; ++i) out.push_back({idx[i], acts[idx[i]]});
  return out;
}

// Shift when the argmax neuron changes; otherwise Amplify or Dampen when the
// activation moves by more than `tolerance` relative to the base value.
inline Verdict classify(const NeuronReading& base, const NeuronReading& tuned,
                        double tolerance = kDefaultTolerance) {
  if (base.index != tuned.index) return Verdict::Shift;
  const double margin = tolerance * std::abs(base.activation);
  if (tuned.activation - base.activation > margin) return Verdict::Amplify;
  if (base.activation - tuned.activation > margin) return Verdict::Dampen;
  return Verdict::NoChange;
}

struct ActivationComparison {
  NeuronReading base_top;
  NeuronReading tuned_top;
  Verdict verdict = Verdict::NoChange;
  std::optional<Trait> trait;
  std::string prompt_id;
};

inline ActivationComparison compare_readings(const NeuronReading& base,
                                             const NeuronReading& tuned,
                                             double tolerance =
                                                 kDefaultTolerance) {
  return {base, tuned, classify(base, tuned, tolerance), std::nullopt, {}};
}

// Compares argmax neurons of two models (the tuned one optionally carrying
// unmerged adapters) on one prompt.
inline ActivationComparison compare_models(
    const tinylm::Parameters& base, const tinylm::Parameters& tuned,
    std::string_view prompt, double tolerance = kDefaultTolerance,
    const peft::AdapterSet* tuned_adapters = nullptr,
    tinylm::TraceOptions trace = {}) {
  if (!(base.config == tuned.config)) {
    throw InvalidArgument("compare_models: model configurations differ");
  }
  const auto b =
      top_neurons(capture_activations(base, prompt, nullptr, trace), 1)[0];
  const auto t = top_neurons(
      capture_activations(tuned, prompt, tuned_adapters, trace), 1)[0];
  return compare_readings(b, t, tolerance);
}

struct ConsistencyReport {
  std::vector<std::string> prompt_ids;
  std::vector<NeuronReading> top;  // per prompt
  bool consistent = true;
  std::size_t modal_neuron = 0;  // most frequent argmax; ties to lower index
};

inline ConsistencyReport consistency_from(
    const std::vector<NeuronReading>& tops,
    std::vector<std::string> prompt_ids = {}) {
  ConsistencyReport r;
  r.top = tops;
  if (prompt_ids.empty()) {
    for (std::size_t i = 0; i < tops.size(); ++i) {
      prompt_ids.push_back("p" + std::to_string(i));
    }
  }
  r.prompt_ids = std::move(prompt_ids);
  std::map<std::size_t, std::size_t> freq;
  for (const auto& t : tops) ++freq[t.index];
  std::size_t best = 0;
  for (const auto& [idx, n] : freq) {
    if (n > best) {
      best = n;
      r.modal_neuron = idx;
    }
  }
  r.consistent = freq.size() <= 1;
  return r;
}

inline ConsistencyReport consistency_across_prompts(
    const tinylm::Parameters& p, const std::vector<std::string>& prompts,
    const peft::AdapterSet* adapters = nullptr,
    std::vector<std::string> prompt_ids = {}, tinylm::TraceOptions trace = {}) {
  if (prompts.empty()) {
    throw InvalidArgument("consistency_across_prompts: no prompts");
  }
  std::vector<NeuronReading> tops;
  for (const auto& pr : prompts) {
    tops.push_back(
        top_neurons(capture_activations(p, pr, adapters, trace), 1)[0]);
  }
  return consistency_from(tops, std::move(prompt_ids));
}

// ---------------------------------------------------------------------------
// Probe prompts
// ---------------------------------------------------------------------------

inline constexpr std::string_view kNeutralPrompt =
    "Hey! It's been a busy day for everyone. I hope you're feeling good "
    "about everything 🙂.";

struct ProbePrompt {
  std::string id;
  std::string text;
};

// The neutral prompt, six emoji variants of it and ten trait-flavoured texts
// (two per trait).
inline const std::vector<ProbePrompt>& default_probe_prompt_set() {
  static const std::vector<ProbePrompt> kPrompts = [] {
    std::vector<ProbePrompt> v;
    v.push_back({"neutral", std::string(kNeutralPrompt)});
    const std::string stem =
        "Hey! It's been a busy day for everyone. I hope you're feeling good "
        "about everything ";
    const std::pair<const char*, const char*> variants[] = {
        {"emoji-smiling-eyes", "😊"}, {"emoji-palette", "🎨"},
        {"emoji-check", "✅"},        {"emoji-party", "🎉"},
        {"emoji-hug", "🤗"},          {"emoji-worried", "😟"}};
    for (const auto& [id, e] : variants) v.push_back({id, stem + e + "."});
    v.push_back({"openness-1",
                 "I just visited a gallery of strange new art and I keep "
                 "imagining what the artists dreamed about."});
    v.push_back({"openness-2",
                 "What if we tried a completely different recipe tonight, "
                 "something none of us has ever tasted?"});
    v.push_back({"conscientiousness-1",
                 "I finished every task on my checklist today and planned "
                 "tomorrow down to the hour."});
    v.push_back({"conscientiousness-2",
                 "Before the trip I organized the documents, packed early and "
                 "double-checked the schedule."});
    v.push_back({"extraversion-1",
                 "The party last night was amazing, so many friends and so "
                 "much dancing!"});
    v.push_back({"extraversion-2",
                 "Let's get everyone together this weekend, the more people "
                 "the better!"});
    v.push_back({"agreeableness-1",
                 "Thank you so much for helping me move, you are always so "
                 "kind and patient."});
    v.push_back({"agreeableness-2",
                 "I hope everyone feels welcome here, let me know if I can "
                 "help with anything."});
    v.push_back({"neuroticism-1",
                 "I can't stop worrying that something will go wrong at the "
                 "interview tomorrow."});
    v.push_back({"neuroticism-2",
                 "Everything feels overwhelming lately and I get upset over "
                 "the smallest things."});
    return v;
  }();
  return kPrompts;
}

inline std::vector<std::string> default_probe_prompts() {
  std::vector<std::string> out;
  for (const auto& p : default_probe_prompt_set()) out.push_back(p.text);
  return out;
}

// ---------------------------------------------------------------------------
// Constructed adapters
// ---------------------------------------------------------------------------

// Rank-1 adapter on the last layer's MLP input projection that raises neuron
// `neuron`'s pre-activation by exactly `boost` at the final position of every
// prompt and leaves all other neurons untouched. L1 is the minimum-norm
// solution of m_p . L1 = 1 over the prompts' normalized MLP inputs m_p.
inline peft::AdapterSet amplifying_adapter(
    const tinylm::Parameters& p, const std::vector<std::string>& prompts,
    std::size_t neuron, double boost, double scale = 1.0) {
  const auto& c = p.config;
  if (neuron >= static_cast<std::size_t>(c.d_mlp)) {
    throw InvalidArgument("amplifying_adapter: neuron out of range");
  }
  if (prompts.empty()) throw InvalidArgument("amplifying_adapter: no prompts");
  if (!(scale != 0.0)) throw InvalidArgument("amplifying_adapter: scale 0");
  const int last = c.n_layers - 1;
  Matrix m(static_cast<Eigen::Index>(prompts.size()), c.d_model);
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    tinylm::detail::ForwardCache cache;
    tinylm::detail::forward_impl(p, tinylm::prompt_context(prompts[i]), {},
                                 &cache);
    const Matrix& mm = cache.layers[last].m;
    m.row(static_cast<Eigen::Index>(i)) = mm.row(mm.rows() - 1);
  }
  const Eigen::VectorXd ones = Eigen::VectorXd::Ones(m.rows());
  const Eigen::VectorXd l1 = m.completeOrthogonalDecomposition().solve(ones);
  if (!((m * l1 - ones).cwiseAbs().maxCoeff() < 1e-8)) {
    throw InvalidArgument(
        "amplifying_adapter: prompts are not linearly separable from the "
        "origin in the MLP input space");
  }
  peft::LoraAdapter a;
  a.l1 = l1;
  a.l2 = Matrix::Zero(1, c.d_mlp);
  a.l2(0, static_cast<Eigen::Index>(neuron)) = boost / scale;
  a.scale = scale;
  peft::AdapterSet set;
  set.rank = 1;
  set.alpha = scale;
  set.adapters.emplace(tinylm::layer_param_name(last, "w_in"), std::move(a));
  return set;
}

// ---------------------------------------------------------------------------
// Output
// ---------------------------------------------------------------------------

inline nlohmann::ordered_json to_json(const NeuronReading& r) {
  return {{"neuron", r.index}, {"activation", r.activation}};
}

inline nlohmann::ordered_json to_json(const ActivationComparison& c) {
  nlohmann::ordered_json j;
  if (!c.prompt_id.empty()) j["prompt_id"] = c.prompt_id;
  if (c.trait) j["trait"] = traitlab::to_string(*c.trait);
  j["base"] = to_json(c.base_top);
  j["tuned"] = to_json(c.tuned_top);
  j["verdict"] = to_string(c.verdict);
  return j;
}

inline nlohmann::ordered_json to_json(const ConsistencyReport& r) {
  nlohmann::ordered_json j;
  auto& rows = j["prompts"] = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < r.top.size(); ++i) {
    rows.push_back({{"prompt_id", r.prompt_ids[i]},
                    {"neuron", r.top[i].index},
                    {"activation", r.top[i].activation}});
  }
  j["consistent"] = r.consistent;
  j["modal_neuron"] = r.modal_neuron;
  return j;
}

inline std::string to_csv(const std::vector<ActivationComparison>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "prompt_id,trait,base_neuron,base_activation,tuned_neuron,"
        "tuned_activation,verdict\n";
  for (const auto& c : rows) {
    os << c.prompt_id << ','
       << (c.trait ? std::string(traitlab::to_string(*c.trait)) : "") << ','
       << c.base_top.index << ',' << c.base_top.activation << ','
       << c.tuned_top.index << ',' << c.tuned_top.activation << ','
       << to_string(c.verdict) << '\n';
  }
  return os.str();
}

// Binary dump: u64 d_mlp, u64 count, then count * d_mlp float64 values.
inline std::string encode_traces(const std::vector<std::vector<double>>& v) {
  const std::uint64_t width = v.empty() ? 0 : v.front().size();
  std::string out;
  auto put = [&out](std::uint64_t x) {
    out.append(reinterpret_cast<const char*>(&x), sizeof x);
  };
  put(width);
  put(v.size());
  for (const auto& row : v) {
    if (row.size() != width) {
      throw InvalidArgument("encode_traces: ragged activation vectors");
    }
    out.append(reinterpret_cast<const char*>(row.data()),
               row.size() * sizeof(double));
  }
  return out;
}

inline std::vector<std::vector<double>> decode_traces(std::string_view in) {
  if (in.size() < 16) throw ParseError("trace file truncated");
  std::uint64_t width, count;
  std::memcpy(&width, in.data(), 8);
  std::memcpy(&count, in.data() + 8, 8);
  if (in.size() != 16 + width * count * sizeof(double)) {
    throw ParseError("trace file size does not match its header");
  }
  std::vector<std::vector<double>> out(count, std::vector<double>(width));
  for (std::uint64_t i = 0; i < count; ++i) {
    std::memcpy(out[i].data(), in.data() + 16 + i * width * sizeof(double),
                width * sizeof(double));
  }
  return out;
}

}  // namespace traitlab::interp
