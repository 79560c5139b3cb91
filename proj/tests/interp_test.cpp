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
#include <vector>

#include <gtest/gtest.h>

#include "traitlab/interp.hpp"
#include "traitlab/rng.hpp"

namespace traitlab::interp {
namespace {

tinylm::ModelConfig random_config(Rng& rng) {
  tinylm::ModelConfig c;
  c.n_heads = 1 + static_cast<int>(rng.below(3));
  c.d_model = c.n_heads * (4 + static_cast<int>(rng.below(6)));
  c.n_layers = 1 + static_cast<int>(rng.below(2));
  c.d_mlp = 8 + static_cast<int>(rng.below(57));
  c.max_seq_len = 128;
  return c;
}

TEST(Verdict, TotalAndConsistentWithDefinition) {
  Rng rng(1);
  for (int trial = 0; trial < 2000; ++trial) {
    const NeuronReading b{rng.below(4), rng.normal() * 3};
    const NeuronReading t{rng.below(4), rng.uniform() < 0.3 ? b.activation
                                                            : rng.normal() * 3};
    const double tol = rng.uniform() * 0.2;
    const Verdict v = classify(b, t, tol);
    const double margin = tol * std::abs(b.activation);
    const bool shift = b.index != t.index;
    const bool amp = !shift && t.activation - b.activation > margin;
    const bool damp = !shift && b.activation - t.activation > margin;
    const bool none = !shift && !amp && !damp;
    EXPECT_EQ(shift + amp + damp + none, 1);
    EXPECT_EQ(v == Verdict::Shift, shift);
    EXPECT_EQ(v == Verdict::Amplify, amp);
    EXPECT_EQ(v == Verdict::Dampen, damp);
    EXPECT_EQ(v == Verdict::NoChange, none);
  }
}

TEST(TopNeurons, FullRankingIsPermutationAndScaleInvariant) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> acts(1 + rng.below(64));
    for (auto& a : acts) a = rng.normal();
    const auto all = top_neurons(acts, acts.size());
    std::vector<std::size_t> idx;
    for (const auto& r : all) idx.push_back(r.index);
    std::sort(idx.begin(), idx.end());
    std::vector<std::size_t> want(acts.size());
    std::iota(want.begin(), want.end(), 0);
    EXPECT_EQ(idx, want);
    for (std::size_t i = 1; i < all.size(); ++i) {
      EXPECT_GE(all[i - 1].activation, all[i].activation);
    }
    auto scaled = acts;
    const double k = 0.01 + rng.uniform() * 100;
    for (auto& a : scaled) a *= k;
    EXPECT_EQ(top_neurons(scaled, 1)[0].index, all[0].index);
  }
  EXPECT_THROW(top_neurons({1.0}, 2), InvalidArgument);
  EXPECT_THROW(top_neurons({1.0}, 0), InvalidArgument);
}

TEST(Interp, IdenticalModelsGiveNoChange) {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const auto p = tinylm::init_parameters(random_config(rng), trial);
    for (const auto& pr : default_probe_prompt_set()) {
      EXPECT_EQ(compare_models(p, p, pr.text).verdict, Verdict::NoChange);
    }
  }
}

TEST(Interp, ConstructedAdapterAmplifiesOrShifts) {
  Rng rng(4);
  const auto prompts = default_probe_prompts();
  for (int trial = 0; trial < 20; ++trial) {
    const auto cfg = random_config(rng);
    const auto p = tinylm::init_parameters(cfg, 100 + trial);
    const auto base_acts = capture_activations(p, kNeutralPrompt);
    const std::size_t top = top_neurons(base_acts, 1)[0].index;
    std::size_t other = rng.below(cfg.d_mlp - 1);
    if (other >= top) ++other;

    std::vector<std::string> probe = {std::string(kNeutralPrompt)};
    const auto amp = amplifying_adapter(p, probe, top, 10.0);
    const auto ca = compare_models(p, p, kNeutralPrompt, kDefaultTolerance, &amp);
    EXPECT_EQ(ca.verdict, Verdict::Amplify) << trial;
    EXPECT_EQ(ca.tuned_top.index, top);

    const auto sh = amplifying_adapter(p, probe, other, 10.0, 0.5);
    const auto cs = compare_models(p, p, kNeutralPrompt, kDefaultTolerance, &sh);
    EXPECT_EQ(cs.verdict, Verdict::Shift) << trial;
    EXPECT_EQ(cs.tuned_top.index, other);

    // Every other neuron is untouched.
    const auto tuned = capture_activations(p, kNeutralPrompt, &sh);
    for (std::size_t j = 0; j < tuned.size(); ++j) {
      if (j != other) EXPECT_NEAR(tuned[j], base_acts[j], 1e-9);
    }
  }
}

TEST(Interp, AdapterAcrossPromptSetMakesNeuronConsistent) {
  tinylm::ModelConfig c;
  c.d_model = 32;
  c.n_heads = 4;
  c.n_layers = 2;
  c.d_mlp = 64;
  c.max_seq_len = 160;
  const auto p = tinylm::init_parameters(c, 7);
  const auto prompts = default_probe_prompts();
  const auto set = amplifying_adapter(p, prompts, 5, 50.0);
  const auto r = consistency_across_prompts(p, prompts, &set);
  EXPECT_TRUE(r.consistent);
  EXPECT_EQ(r.modal_neuron, 5u);
}

TEST(Interp, ConsistencyIsDeterministic) {
  const auto p = tinylm::init_parameters(tinylm::ModelConfig{}, 1);
  const auto& set = default_probe_prompt_set();
  ASSERT_EQ(set.size(), 17u);
  std::vector<std::string> ids;
  for (const auto& s : set) ids.push_back(s.id);
  const auto a = consistency_across_prompts(p, default_probe_prompts(), nullptr, ids);
  const auto b = consistency_across_prompts(p, default_probe_prompts(), nullptr, ids);
  EXPECT_EQ(to_json(a).dump(), to_json(b).dump());
  EXPECT_EQ(a.prompt_ids, ids);
  EXPECT_EQ(a.consistent,
            std::all_of(a.top.begin(), a.top.end(), [&](const NeuronReading& r) {
              return r.index == a.top[0].index;
            }));
}

TEST(Interp, ConsistencyModalTiesToLowerIndex) {
  const auto r = consistency_from({{3, 1.0}, {1, 2.0}, {3, 0.5}, {1, 0.1}});
  EXPECT_FALSE(r.consistent);
  EXPECT_EQ(r.modal_neuron, 1u);
  EXPECT_TRUE(consistency_from({{2, 1.0}}).consistent);
}

TEST(Interp, TraceFileRoundTrip) {
  const std::vector<std::vector<double>> v = {{1.0, -2.5, 3.0}, {0.0, 4.0, 5.5}};
  const std::string bytes = encode_traces(v);
  EXPECT_EQ(bytes.size(), 16u + 6 * 8);
  EXPECT_EQ(decode_traces(bytes), v);
  EXPECT_THROW(decode_traces(bytes.substr(1)), ParseError);
  EXPECT_THROW(encode_traces({{1.0}, {1.0, 2.0}}), InvalidArgument);
}

TEST(Interp, RejectsBadInputs) {
  const auto p = tinylm::init_parameters(tinylm::ModelConfig{}, 1);
  auto c = p.config;
  c.d_mlp += 1;
  const auto q = tinylm::init_parameters(c, 1);
  EXPECT_THROW(compare_models(p, q, "x"), InvalidArgument);
  EXPECT_THROW(amplifying_adapter(p, {"x"}, p.config.d_mlp, 1.0), InvalidArgument);
  EXPECT_THROW(consistency_across_prompts(p, {}), InvalidArgument);
}

}  // namespace
}  // namespace traitlab::interp
