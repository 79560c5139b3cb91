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
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "traitlab/error.hpp"
#include "traitlab/rng.hpp"

namespace traitlab {

// Row-major so serialized tensors and hand-written loops share one layout.
using Matrix =
    Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

inline std::string shape_string(const Matrix& m) {
  return std::to_string(m.rows()) + "x" + std::to_string(m.cols());
}

namespace peft {

// Low-rank update for a frozen h x o weight: delta = scale * L1 * L2 with
// L1 (h x r) and L2 (r x o).
struct LoraAdapter {
  Matrix l1;
  Matrix l2;
  double scale = 1.0;
  double dropout = 0.0;  // applied to the adapter input, training only
  // Set once the delta has been folded into a base weight in place.
  bool merged = false;

  Eigen::Index rank() const { return l1.cols(); }
  Eigen::Index in_features() const { return l1.rows(); }
  Eigen::Index out_features() const { return l2.cols(); }

  Matrix delta() const { return scale * (l1 * l2); }
};

inline void check_conforms(const Matrix& w, const LoraAdapter& a) {
  if (a.l1.cols() != a.l2.rows()) {
    throw ShapeError("adapter factors do not chain: L1 " + shape_string(a.l1) +
                     ", L2 " + shape_string(a.l2));
  }
  if (a.l1.rows() != w.rows() || a.l2.cols() != w.cols()) {
    throw ShapeError("adapter " + shape_string(a.l1) + "*" +
                     shape_string(a.l2) + " does not conform to weight " +
                     shape_string(w));
  }
}

enum class Mode { Eval, Train };

// Y = X W + s * drop(X) L1 L2. The base product is computed on its own so a
// zero L2 or zero scale leaves Y bit-identical to X W.
inline Matrix lora_forward(const Matrix& x, const Matrix& w,
                           const LoraAdapter& a, Mode mode = Mode::Eval,
                           Rng* rng = nullptr) {
  if (x.cols() != w.rows()) {
    throw ShapeError("input " + shape_string(x) + " does not conform to " +
                     shape_string(w));
  }
  check_conforms(w, a);
  Matrix y = x * w;
  if (a.scale == 0.0) return y;
  if (mode == Mode::Train && a.dropout > 0.0) {
    if (!rng) throw InvalidArgument("training-mode dropout needs an Rng");
    Matrix xd = x;
    const double keep = 1.0 - a.dropout;
    for (Eigen::Index i = 0; i < xd.size(); ++i) {
      xd.data()[i] = rng->uniform() < a.dropout ? 0.0 : xd.data()[i] / keep;
    }
    y += a.scale * ((xd * a.l1) * a.l2);
  } else {
    y += a.scale * ((x * a.l1) * a.l2);
  }
  return y;
}

inline constexpr double kDefaultInitStd = 0.02;

// L1 ~ N(0, init_std^2), L2 = 0, so the adapted projection starts equal to
// the base projection.
inline LoraAdapter init_adapter(Eigen::Index h, Eigen::Index o,
                                Eigen::Index r, double scale,
                                std::uint64_t seed, double dropout = 0.0,
                                double init_std = kDefaultInitStd) {
  if (h < 1 || o < 1) throw InvalidArgument("init_adapter: empty weight");
  if (r < 1 || r > std::min(h, o)) {
    throw InvalidArgument("init_adapter: rank " + std::to_string(r) +
                          " outside [1, min(" + std::to_string(h) + ", " +
                          std::to_string(o) + ")]");
  }
  if (!(dropout >= 0.0 && dropout < 1.0)) {
    throw InvalidArgument("init_adapter: dropout must be in [0, 1)");
  }
  LoraAdapter a;
  Rng rng(seed);
  a.l1.resize(h, r);
  for (Eigen::Index i = 0; i < a.l1.size(); ++i) {
    a.l1.data()[i] = rng.normal(0.0, init_std);
  }
  a.l2 = Matrix::Zero(r, o);
  a.scale = scale;
  a.dropout = dropout;
  return a;
}

// W' = W + s L1 L2. Pure: merging the same adapter twice adds it twice.
inline Matrix merge(const Matrix& w, const LoraAdapter& a) {
  check_conforms(w, a);
  return w + a.delta();
}

// In-place merge guarded by the adapter's merged flag.
inline void merge_in_place(Matrix& w, LoraAdapter& a) {
  if (a.merged) throw InvalidArgument("adapter already merged");
  w = merge(w, a);
  a.merged = true;
}

// Adapters keyed by the name of the parameter they wrap,
// e.g. "layers.1.wq".
struct AdapterSet {
  std::map<std::string, LoraAdapter> adapters;
  // Metadata recorded in checkpoints.
  Eigen::Index rank = 0;
  double alpha = 0.0;
  double dropout = 0.0;

  const LoraAdapter* find(const std::string& name) const {
    auto it = adapters.find(name);
    return it == adapters.end() ? nullptr : &it->second;
  }
  bool empty() const { return adapters.empty(); }
};

}  // namespace peft
}  // namespace traitlab
