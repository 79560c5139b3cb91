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

#include <filesystem>
#include <string>

#include <gtest/gtest.h>

#include "traitlab/checkpoint.hpp"
#include "traitlab/finetune.hpp"

namespace traitlab::checkpoint {
namespace {

tinylm::ModelConfig tiny() {
  tinylm::ModelConfig c;
  c.d_model = 8;
  c.n_layers = 2;
  c.n_heads = 2;
  c.d_mlp = 12;
  c.max_seq_len = 16;
  return c;
}

TEST(Checkpoint, ModelRoundTripIsExact) {
  const auto p = tinylm::init_parameters(tiny(), 5);
  const std::string bytes = serialize(p);
  const auto back = deserialize_model(bytes);
  EXPECT_TRUE(back.config == p.config);
  EXPECT_EQ(serialize(back), bytes);
  const auto path =
      (std::filesystem::temp_directory_path() / "traitlab_ckpt_test.bin").string();
  save_model(path, p);
  EXPECT_EQ(serialize(load_model(path)), bytes);
  std::filesystem::remove(path);
  EXPECT_THROW(load_model(path), IoError);
}

TEST(Checkpoint, AdapterRoundTripKeepsMetadata) {
  const auto p = tinylm::init_parameters(tiny(), 5);
  peft::FinetuneConfig fc;
  fc.lora_r = 4;
  fc.lora_alpha = 8;
  fc.lora_dropout = 0.2;
  auto set = peft::init_adapters(p, fc);
  set.adapters.begin()->second.l2.setConstant(0.25);
  const auto back = deserialize_adapters(serialize(set));
  EXPECT_EQ(back.rank, 4);
  EXPECT_EQ(back.alpha, 8.0);
  EXPECT_EQ(back.dropout, 0.2);
  ASSERT_EQ(back.adapters.size(), set.adapters.size());
  for (const auto& [name, a] : set.adapters) {
    const auto* b = back.find(name);
    ASSERT_NE(b, nullptr) << name;
    EXPECT_EQ(b->l1, a.l1);
    EXPECT_EQ(b->l2, a.l2);
    EXPECT_EQ(b->scale, a.scale);
  }
  EXPECT_EQ(serialize(back), serialize(set));
}

TEST(Checkpoint, RejectsCorruptInput) {
  const auto p = tinylm::init_parameters(tiny(), 5);
  std::string bytes = serialize(p);
  EXPECT_THROW(deserialize_model("XXXX" + bytes.substr(4)), ParseError);
  EXPECT_THROW(deserialize_model(bytes.substr(0, bytes.size() / 2)), ParseError);
  EXPECT_THROW(deserialize_model(""), ParseError);
  std::string wrong_version = bytes;
  wrong_version[4] = 9;
  EXPECT_THROW(deserialize_model(wrong_version), ParseError);
  // A model container is not an adapter container and vice versa.
  EXPECT_THROW(deserialize_adapters(bytes), ParseError);
  peft::FinetuneConfig fc;
  fc.lora_r = 2;
  EXPECT_THROW(deserialize_model(serialize(peft::init_adapters(p, fc))),
               ParseError);
}

}  // namespace
}  // namespace traitlab::checkpoint
