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
#include <cstring>
#include <string>
#include <string_view>
#include <vector>

#include "traitlab/error.hpp"
#include "traitlab/lora.hpp"

namespace traitlab::peft {

// Inverse of the standard normal CDF. Rational initial guess refined with
// Halley steps against erfc, accurate to a few ulps on (0, 1).
inline double normal_quantile(double p) {
  if (!(p > 0.0 && p < 1.0)) {
    throw InvalidArgument("normal_quantile: p must be in (0, 1)");
  }
  static constexpr double a[] = {-3.969683028665376e+01, 2.209460984245205e+02,
                                 -2.759285104469687e+02, 1.383577518672690e+02,
                                 -3.066479806614716e+01, 2.506628277459239e+00};
  static constexpr double b[] = {-5.447609879822406e+01, 1.615858368580409e+02,
                                 -1.556989798598866e+02, 6.680131188771972e+01,
                                 -1.328068155288572e+01};
  static constexpr double c[] = {-7.784894002430293e-03, -3.223964580411365e-01,
                                 -2.400758277161838e+00, -2.549732539343734e+00,
                                 4.374664141464968e+00,  2.938163982698783e+00};
  static constexpr double d[] = {7.784695709041462e-03, 3.224671290700398e-01,
                                 2.445134137142996e+00, 3.754408661907416e+00};
  constexpr double lo = 0.02425, hi = 1.0 - lo;
  double x;
  if (p < lo) {
    const double q = std::sqrt(-2.0 * std::log(p));
    x = (((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q + c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  } else if (p <= hi) {
    const double q = p - 0.5, r = q * q;
    x = (((((a[0] * r + a[1]) * r + a[2]) * r + a[3]) * r + a[4]) * r + a[5]) *
        q /
        (((((b[0] * r + b[1]) * r + b[2]) * r + b[3]) * r + b[4]) * r + 1.0);
  } else {
    const double q = std::sqrt(-2.0 * std::log1p(-p));
    x = -(((((c[0] * q + c[1]) * q + c[2]) * q + c[3]) * q + c[4]) * q +
          c[5]) /
        ((((d[0] * q + d[1]) * q + d[2]) * q + d[3]) * q + 1.0);
  }
  constexpr double kSqrt2Pi = 2.5066282746310002;
  for (int i = 0; i < 2; ++i) {
    const double e = 0.5 * std::erfc(-x * 0.7071067811865476) - p;
    const double u = e * kSqrt2Pi * std::exp(0.5 * x * x);
    x -= u / (1.0 + 0.5 * x * u);
  }
  return x;
}

struct Nf4Codebook {
  std::array<double, 16> levels{};

  // Index of the exact-zero level.
  std::size_t zero_index() const {
    for (std::size_t i = 0; i < levels.size(); ++i) {
      if (levels[i] == 0.0) return i;
    }
    throw InvalidArgument("codebook has no zero level");
  }

  double max_gap() const {
    double g = 0.0;
    for (std::size_t i = 1; i < levels.size(); ++i) {
      g = std::max(g, levels[i] - levels[i - 1]);
    }
    return g;
  }

  // Nearest level; ties go to the smaller index.
  std::uint8_t nearest(double v) const {
    std::size_t best = 0;
    double best_d = std::abs(v - levels[0]);
    for (std::size_t i = 1; i < levels.size(); ++i) {
      const double d = std::abs(v - levels[i]);
      if (d < best_d) {
        best = i;
        best_d = d;
      }
    }
    return static_cast<std::uint8_t>(best);
  }
};

// Quantile offset: midpoint of 1 - 1/(2*15) and 1 - 1/(2*16).
inline constexpr double kNf4Offset = 0.5 * ((1.0 - 1.0 / 30.0) +
                                            (1.0 - 1.0 / 32.0));

// 8 positive and 7 negative normal quantiles taken at evenly spaced
// probabilities between 0.5 and the offset, plus an exact zero, scaled so the
// extremes are -1 and +1.
inline Nf4Codebook nf4_codebook() {
  Nf4Codebook cb;
  std::vector<double> v;
  auto spaced = [](int n, int i) {
    return kNf4Offset + (0.5 - kNf4Offset) * i / (n - 1);
  };
  for (int i = 0; i < 8; ++i) v.push_back(normal_quantile(spaced(9, i)));
  v.push_back(0.0);
  for (int i = 0; i < 7; ++i) v.push_back(-normal_quantile(spaced(8, i)));
  std::sort(v.begin(), v.end());
  const double mx = v.back();
  for (std::size_t i = 0; i < 16; ++i) cb.levels[i] = v[i] / mx;
  cb.levels.front() = -1.0;
  cb.levels.back() = 1.0;
  return cb;
}

inline constexpr int kDefaultBlockSize = 64;
inline constexpr int kDefaultDqGroupSize = 256;

// 8-bit affine code for the absmax array, per group. Code 0 encodes an exact
// zero; codes 1..255 encode min + (code - 1) * step where min is the group's
// smallest nonzero absmax and step = (max - min) / 254.
struct DoubleQuant {
  int group_size = kDefaultDqGroupSize;
  std::vector<std::uint8_t> codes;
  std::vector<double> group_min;
  std::vector<double> group_step;

  double value(std::size_t block) const {
    const std::uint8_t c = codes[block];
    if (c == 0) return 0.0;
    const std::size_t g = block / static_cast<std::size_t>(group_size);
    return group_min[g] + (c - 1) * group_step[g];
  }
  // Largest deviation the code can introduce for this block's absmax.
  double slack(std::size_t block) const {
    return 0.5 * group_step[block / static_cast<std::size_t>(group_size)];
  }
};

inline DoubleQuant double_quantize(const std::vector<double>& absmax,
                                   int group_size = kDefaultDqGroupSize) {
  if (group_size < 1) throw InvalidArgument("group_size must be >= 1");
  DoubleQuant dq;
  dq.group_size = group_size;
  dq.codes.resize(absmax.size());
  for (std::size_t start = 0; start < absmax.size(); start += group_size) {
    const std::size_t end =
        std::min(absmax.size(), start + static_cast<std::size_t>(group_size));
    double mn = 0.0, mx = 0.0;
    bool any = false;
    for (std::size_t i = start; i < end; ++i) {
      if (absmax[i] == 0.0) continue;
      mn = any ? std::min(mn, absmax[i]) : absmax[i];
      mx = any ? std::max(mx, absmax[i]) : absmax[i];
      any = true;
    }
    const double step = any ? (mx - mn) / 254.0 : 0.0;
    dq.group_min.push_back(mn);
    dq.group_step.push_back(step);
    for (std::size_t i = start; i < end; ++i) {
      if (absmax[i] == 0.0) {
        dq.codes[i] = 0;
      } else if (step == 0.0) {
        dq.codes[i] = 1;
      } else {
        const double k = std::round((absmax[i] - mn) / step);
        dq.codes[i] = static_cast<std::uint8_t>(
            1 + std::clamp(k, 0.0, 254.0));
      }
    }
  }
  return dq;
}

struct QuantizedTensor {
  Eigen::Index rows = 0, cols = 0;
  int block_size = kDefaultBlockSize;
  std::vector<std::uint8_t> codes;  // one 4-bit index per element, row-major
  std::vector<double> absmax;       // per block
  DoubleQuant dq;
  Nf4Codebook codebook;

  std::size_t num_blocks() const { return absmax.size(); }
};

inline QuantizedTensor quantize(const Matrix& m,
                                int block_size = kDefaultBlockSize,
                                const Nf4Codebook& cb = nf4_codebook(),
                                int dq_group_size = kDefaultDqGroupSize) {
  if (block_size < 1) throw InvalidArgument("block_size must be >= 1");
  QuantizedTensor q;
  q.rows = m.rows();
  q.cols = m.cols();
  q.block_size = block_size;
  q.codebook = cb;
  const std::size_t n = static_cast<std::size_t>(m.size());
  const double* x = m.data();
  for (std::size_t i = 0; i < n; ++i) {
    if (!std::isfinite(x[i])) {
      throw InvalidArgument("quantize: non-finite value at element " +
                            std::to_string(i));
    }
  }
  const std::uint8_t zero = static_cast<std::uint8_t>(cb.zero_index());
  q.codes.resize(n);
  for (std::size_t start = 0; start < n; start += block_size) {
    const std::size_t end =
        std::min(n, start + static_cast<std::size_t>(block_size));
    double a = 0.0;
    for (std::size_t i = start; i < end; ++i) a = std::max(a, std::abs(x[i]));
    q.absmax.push_back(a);
    for (std::size_t i = start; i < end; ++i) {
      q.codes[i] = a == 0.0 ? zero : cb.nearest(x[i] / a);
    }
  }
  q.dq = double_quantize(q.absmax, dq_group_size);
  return q;
}

// Reconstruction from the 4-bit codes and the double-quantized scales.
inline Matrix dequantize(const QuantizedTensor& q) {
  Matrix m(q.rows, q.cols);
  double* out = m.data();
  for (std::size_t i = 0; i < q.codes.size(); ++i) {
    const std::size_t b = i / static_cast<std::size_t>(q.block_size);
    out[i] = q.codebook.levels[q.codes[i]] * q.dq.value(b);
  }
  return m;
}

// Worst-case absolute reconstruction error for one block: half the widest
// level gap at the true scale plus the double-quantization slack.
inline double block_error_bound(const QuantizedTensor& q, std::size_t block) {
  return q.absmax[block] * q.codebook.max_gap() / 2.0 + q.dq.slack(block);
}

// Layout (little-endian): "NF4Q", u32 version, i64 rows, i64 cols,
// u32 block_size, u32 dq group size, 16 x f64 codebook, packed nibbles (low
// nibble first), one u8 absmax code per block, then per group f64 min and
// f64 step. Loading restores absmax from its 8-bit codes.
inline std::string serialize(const QuantizedTensor& q) {
  std::string out = "NF4Q";
  auto put = [&out](const auto& v) {
    out.append(reinterpret_cast<const char*>(&v), sizeof(v));
  };
  put(std::uint32_t{1});
  put(static_cast<std::int64_t>(q.rows));
  put(static_cast<std::int64_t>(q.cols));
  put(static_cast<std::uint32_t>(q.block_size));
  put(static_cast<std::uint32_t>(q.dq.group_size));
  for (double l : q.codebook.levels) put(l);
  for (std::size_t i = 0; i < q.codes.size(); i += 2) {
    const std::uint8_t lo = q.codes[i];
    const std::uint8_t hi = i + 1 < q.codes.size() ? q.codes[i + 1] : 0;
    out.push_back(static_cast<char>(lo | (hi << 4)));
  }
  for (std::uint8_t c : q.dq.codes) out.push_back(static_cast<char>(c));
  for (std::size_t g = 0; g < q.dq.group_min.size(); ++g) {
    put(q.dq.group_min[g]);
    put(q.dq.group_step[g]);
  }
  return out;
}

inline QuantizedTensor deserialize_quantized(std::string_view in) {
  std::size_t pos = 0;
  auto take = [&](void* dst, std::size_t n) {
    if (pos + n > in.size()) throw ParseError("quantized tensor truncated");
    std::memcpy(dst, in.data() + pos, n);
    pos += n;
  };
  char magic[4];
  take(magic, 4);
  if (std::memcmp(magic, "NF4Q", 4) != 0) {
    throw ParseError("not a quantized tensor (bad magic)");
  }
  std::uint32_t version, bs, gs;
  std::int64_t rows, cols;
  take(&version, 4);
  if (version != 1) throw ParseError("unsupported quantized tensor version");
  take(&rows, 8);
  take(&cols, 8);
  take(&bs, 4);
  take(&gs, 4);
  if (rows < 0 || cols < 0 || bs == 0 || gs == 0) {
    throw ParseError("quantized tensor header is invalid");
  }
  QuantizedTensor q;
  q.rows = rows;
  q.cols = cols;
  q.block_size = static_cast<int>(bs);
  for (double& l : q.codebook.levels) take(&l, 8);
  const std::size_t n = static_cast<std::size_t>(rows * cols);
  q.codes.resize(n);
  for (std::size_t i = 0; i < n; i += 2) {
    std::uint8_t byte;
    take(&byte, 1);
    q.codes[i] = byte & 0x0F;
    if (i + 1 < n) q.codes[i + 1] = byte >> 4;
  }
  const std::size_t blocks = (n + bs - 1) / bs;
  const std::size_t groups = (blocks + gs - 1) / gs;
  q.dq.group_size = static_cast<int>(gs);
  q.dq.codes.resize(blocks);
  if (blocks) take(q.dq.codes.data(), blocks);
  q.dq.group_min.resize(groups);
  q.dq.group_step.resize(groups);
  for (std::size_t g = 0; g < groups; ++g) {
    take(&q.dq.group_min[g], 8);
    take(&q.dq.group_step[g], 8);
  }
  q.absmax.resize(blocks);
  for (std::size_t b = 0; b < blocks; ++b) q.absmax[b] = q.dq.value(b);
  return q;
}

}  // namespace traitlab::peft
