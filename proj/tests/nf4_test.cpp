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
#include <fstream>
#include <sstream>
#include <string>

#include <gtest/gtest.h>
#include <json.hpp>

#include "traitlab/nf4.hpp"
#include "traitlab/rng.hpp"

namespace traitlab::peft {
namespace {

nlohmann::json fixture() {
  std::ifstream in(std::string(TRAITLAB_TEST_DATA) + "/nf4_codebook.json");
  EXPECT_TRUE(in.good());
  return nlohmann::json::parse(in);
}

TEST(Nf4, CodebookShape) {
  const auto cb = nf4_codebook();
  EXPECT_EQ(cb.levels.size(), 16u);
  EXPECT_EQ(cb.levels.front(), -1.0);
  EXPECT_EQ(cb.levels.back(), 1.0);
  int zeros = 0;
  for (std::size_t i = 0; i < 16; ++i) {
    zeros += cb.levels[i] == 0.0;
    if (i) EXPECT_LT(cb.levels[i - 1], cb.levels[i]);
  }
  EXPECT_EQ(zeros, 1);
  EXPECT_EQ(cb.zero_index(), 7u);
}

// Levels from a 50-digit reference computation.
TEST(Nf4, MatchesHighPrecisionFixture) {
  const auto j = fixture();
  const auto cb = nf4_codebook();
  ASSERT_EQ(j["levels"].size(), 16u);
  for (std::size_t i = 0; i < 16; ++i) {
    const double want = std::stod(j["levels"][i].get<std::string>());
    EXPECT_NEAR(cb.levels[i], want, 1e-12) << i;
  }
}

TEST(Nf4, QuantileAgreesWithErfc) {
  for (double p = 1e-12; p < 1.0; p = p < 0.5 ? p * 3 : 1 - (1 - p) / 3) {
    const double x = normal_quantile(p);
    EXPECT_NEAR(0.5 * std::erfc(-x / std::sqrt(2.0)) / p, 1.0, 1e-12) << p;
    if (1 - p < 1e-11) break;
  }
  EXPECT_NEAR(normal_quantile(0.5), 0.0, 1e-15);
  EXPECT_THROW(normal_quantile(0.0), InvalidArgument);
  EXPECT_THROW(normal_quantile(1.0), InvalidArgument);
}

TEST(Nf4, RoundTripWithinHalfGapBound) {
  Rng rng(1);
  const auto cb = nf4_codebook();
  for (int trial = 0; trial < 10000; ++trial) {
    const Eigen::Index r = 1 + rng.below(12), c = 1 + rng.below(12);
    Matrix m(r, c);
    const double sd = std::exp(rng.normal() * 2);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = sd * rng.normal();
    const int bs = 1 + static_cast<int>(rng.below(64));
    const auto q = quantize(m, bs, cb, 1 + static_cast<int>(rng.below(8)));
    const Matrix d = dequantize(q);
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      const std::size_t b = static_cast<std::size_t>(i) / bs;
      ASSERT_LE(std::abs(d.data()[i] - m.data()[i]),
                block_error_bound(q, b) * (1 + 1e-12))
          << "trial " << trial;
    }
    for (auto code : q.codes) ASSERT_LT(code, 16);
  }
}

TEST(Nf4, QuantizeDequantizeIsIdempotent) {
  Rng rng(2);
  for (int trial = 0; trial < 500; ++trial) {
    Matrix m(8, 1 + rng.below(40));
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    if (trial % 7 == 0) m.row(0).setZero();
    const int bs = 1 + static_cast<int>(rng.below(64));
    const auto q = quantize(m, bs);
    const auto q2 = quantize(dequantize(q), bs);
    ASSERT_EQ(q.codes, q2.codes) << trial;
    EXPECT_EQ(q.dq.codes, q2.dq.codes) << trial;
    EXPECT_LT((dequantize(q2) - dequantize(q)).cwiseAbs().maxCoeff(), 1e-12);
  }
}

TEST(Nf4, DoubleQuantReproducesAbsmax) {
  Rng rng(3);
  std::vector<double> absmax(1000);
  for (auto& a : absmax) a = std::abs(rng.normal());
  absmax[10] = 0.0;
  const auto dq = double_quantize(absmax, 256);
  for (std::size_t i = 0; i < absmax.size(); ++i) {
    EXPECT_LE(std::abs(dq.value(i) - absmax[i]), dq.slack(i) * (1 + 1e-12));
  }
  EXPECT_EQ(dq.codes[10], 0);
  EXPECT_EQ(dq.value(10), 0.0);
  const auto constant = double_quantize({2.0, 2.0, 2.0}, 2);
  EXPECT_EQ(constant.value(0), 2.0);
  EXPECT_EQ(constant.value(2), 2.0);
}

TEST(Nf4, ZeroBlocksAndNonFinite) {
  Matrix m = Matrix::Zero(2, 3);
  const auto q = quantize(m, 2);
  EXPECT_EQ(dequantize(q), m);
  m(1, 1) = std::nan("");
  EXPECT_THROW(quantize(m), InvalidArgument);
  EXPECT_THROW(quantize(Matrix::Ones(2, 2), 0), InvalidArgument);
}

TEST(Nf4, SerializeRoundTrip) {
  Rng rng(4);
  Matrix m(7, 9);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
  const auto q = quantize(m, 16, nf4_codebook(), 2);
  const std::string bytes = serialize(q);
  const auto back = deserialize_quantized(bytes);
  EXPECT_EQ(back.codes, q.codes);
  EXPECT_EQ(back.rows, 7);
  EXPECT_EQ(back.cols, 9);
  EXPECT_EQ(dequantize(back), dequantize(q));
  EXPECT_EQ(serialize(back), bytes);
  // 160-byte header, 63 codes in 32 bytes, 4 scale codes, 2 groups.
  EXPECT_EQ(bytes.size(), 160u + 32 + 4 + 2 * 16);
  EXPECT_THROW(deserialize_quantized("NF4X" + bytes.substr(4)), ParseError);
  EXPECT_THROW(deserialize_quantized(bytes.substr(0, bytes.size() - 3)),
               ParseError);
}

}  // namespace
}  // namespace traitlab::peft
