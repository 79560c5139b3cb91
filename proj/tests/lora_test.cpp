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

#include <cmath>
#include <cstring>

#include <gtest/gtest.h>

#include "traitlab/lora.hpp"
#include "traitlab/rng.hpp"

namespace traitlab::peft {
namespace {

Matrix random_matrix(Eigen::Index r, Eigen::Index c, Rng& rng) {
  Matrix m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  return m;
}

double max_rel_dev(const Matrix& a, const Matrix& b) {
  const double scale = std::max(1.0, b.cwiseAbs().maxCoeff());
  return (a - b).cwiseAbs().maxCoeff() / scale;
}

TEST(Lora, ZeroL2IsExactIdentityForRandomShapes) {
  Rng rng(1);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index h = 1 + rng.below(40), o = 1 + rng.below(40);
    const Eigen::Index n = 1 + rng.below(10);
    const Eigen::Index r = 1 + rng.below(std::min(h, o));
    const Matrix x = random_matrix(n, h, rng), w = random_matrix(h, o, rng);
    const auto a = init_adapter(h, o, r, 0.5 + rng.uniform(), trial);
    EXPECT_TRUE(a.l2.isZero(0.0));
    const Matrix base = x * w;
    const Matrix y = lora_forward(x, w, a);
    EXPECT_EQ(std::memcmp(y.data(), base.data(), sizeof(double) * y.size()), 0);
  }
}

TEST(Lora, MergedWeightsMatchAdapterPath) {
  Rng rng(2);
  for (int trial = 0; trial < 200; ++trial) {
    const Eigen::Index h = 1 + rng.below(30), o = 1 + rng.below(30);
    const Eigen::Index r = 1 + rng.below(std::min(h, o));
    const Matrix x = random_matrix(1 + rng.below(8), h, rng);
    const Matrix w = random_matrix(h, o, rng);
    auto a = init_adapter(h, o, r, rng.uniform() * 4, trial);
    a.l2 = random_matrix(r, o, rng);
    EXPECT_LT(max_rel_dev(x * merge(w, a), lora_forward(x, w, a)), 1e-10);
  }
}

TEST(Lora, ScaleZeroAndMergeGuard) {
  Rng rng(3);
  Matrix w = random_matrix(4, 5, rng);
  auto a = init_adapter(4, 5, 2, 0.0, 1);
  a.l2 = random_matrix(2, 5, rng);
  const Matrix x = random_matrix(3, 4, rng);
  EXPECT_EQ(lora_forward(x, w, a), x * w);
  a.scale = 2.0;
  const Matrix expect = w + 2.0 * a.l1 * a.l2;
  merge_in_place(w, a);
  EXPECT_TRUE(a.merged);
  EXPECT_LT(max_rel_dev(w, expect), 1e-14);
  EXPECT_THROW(merge_in_place(w, a), InvalidArgument);
}

TEST(Lora, ShapeAndRankChecks) {
  Rng rng(4);
  const Matrix w = random_matrix(6, 3, rng);
  EXPECT_THROW(init_adapter(6, 3, 4, 1.0, 0), InvalidArgument);
  EXPECT_THROW(init_adapter(6, 3, 0, 1.0, 0), InvalidArgument);
  EXPECT_THROW(init_adapter(6, 3, 2, 1.0, 0, 1.0), InvalidArgument);
  const auto wrong = init_adapter(3, 6, 2, 1.0, 0);
  EXPECT_THROW(lora_forward(random_matrix(2, 6, rng), w, wrong), ShapeError);
  EXPECT_THROW(merge(w, wrong), ShapeError);
  const auto ok = init_adapter(6, 3, 2, 1.0, 0);
  EXPECT_THROW(lora_forward(random_matrix(2, 5, rng), w, ok), ShapeError);
}

TEST(Lora, InitIsSeededGaussian) {
  const auto a = init_adapter(200, 100, 50, 1.0, 9);
  const auto b = init_adapter(200, 100, 50, 1.0, 9);
  EXPECT_EQ(a.l1, b.l1);
  const double mean = a.l1.mean();
  const double sd =
      std::sqrt((a.l1.array() - mean).square().sum() / (a.l1.size() - 1));
  EXPECT_NEAR(mean, 0.0, 0.001);
  EXPECT_NEAR(sd, kDefaultInitStd, 0.001);
}

TEST(Lora, DropoutOnlyInTraining) {
  Rng rng(5);
  const Matrix w = random_matrix(8, 8, rng), x = random_matrix(4, 8, rng);
  auto a = init_adapter(8, 8, 4, 1.0, 2, 0.5);
  a.l2 = random_matrix(4, 8, rng);
  const Matrix eval = lora_forward(x, w, a);
  EXPECT_LT(max_rel_dev(eval, x * merge(w, a)), 1e-12);
  Rng drop(7);
  const Matrix train = lora_forward(x, w, a, Mode::Train, &drop);
  EXPECT_GT((train - eval).cwiseAbs().maxCoeff(), 0.0);
  EXPECT_THROW(lora_forward(x, w, a, Mode::Train), InvalidArgument);
}

}  // namespace
}  // namespace traitlab::peft
