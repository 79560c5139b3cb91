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
#include <cstddef>
#include <string>
#include <vector>

#include "traitlab/error.hpp"
#include "traitlab/lora.hpp"

namespace traitlab {

enum class OptimizerKind { Sgd, Adam };

inline std::string to_string(OptimizerKind k) {
  return k == OptimizerKind::Sgd ? "sgd" : "adam";
}

inline OptimizerKind parse_optimizer_kind(const std::string& s) {
  if (s == "sgd") return OptimizerKind::Sgd;
  if (s == "adam") return OptimizerKind::Adam;
  throw InvalidArgument("unknown optimizer '" + s + "' (expected sgd|adam)");
}

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::Sgd;
  double learning_rate = 0.1;
  double momentum = 0.9;  // sgd only
  double beta1 = 0.9;     // adam
  double beta2 = 0.999;
  double epsilon = 1e-8;
  double clip_norm = 1.0;  // global gradient-norm clip; <= 0 disables

  void validate() const {
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
      throw InvalidArgument("learning rate must be finite and >= 0");
    }
    if (!(momentum >= 0.0 && momentum < 1.0)) {
      throw InvalidArgument("momentum must be in [0, 1)");
    }
    if (!(beta1 >= 0.0 && beta1 < 1.0 && beta2 >= 0.0 && beta2 < 1.0)) {
      throw InvalidArgument("adam betas must be in [0, 1)");
    }
  }
};

// First-order optimizer over a fixed list of tensors. The i-th entry of each
// step() call must always refer to the same tensor.
class Optimizer {
 public:
  explicit Optimizer(OptimizerConfig cfg) : cfg_(cfg) { cfg_.validate(); }

  const OptimizerConfig& config() const { return cfg_; }
  std::size_t steps_taken() const { return t_; }

  // Returns the gradient norm before clipping.
  double step(const std::vector<Matrix*>& params,
              const std::vector<const Matrix*>& grads) {
    if (params.size() != grads.size()) {
      throw InvalidArgument("optimizer: parameter/gradient count mismatch");
    }
    if (m_.empty()) {
      for (const Matrix* p : params) {
        m_.push_back(Matrix::Zero(p->rows(), p->cols()));
        if (cfg_.kind == OptimizerKind::Adam) {
          v_.push_back(Matrix::Zero(p->rows(), p->cols()));
        }
      }
    } else if (m_.size() != params.size()) {
      throw InvalidArgument("optimizer: tensor list changed between steps");
    }
    double sq = 0.0;
    for (const Matrix* g : grads) sq += g->squaredNorm();
    const double norm = std::sqrt(sq);
    const double clip =
        cfg_.clip_norm > 0.0 && norm > cfg_.clip_norm ? cfg_.clip_norm / norm
                                                      : 1.0;
    ++t_;
    if (cfg_.learning_rate == 0.0) return norm;
    const double lr = cfg_.learning_rate;
    for (std::size_t i = 0; i < params.size(); ++i) {
      const Matrix g = clip * *grads[i];
      if (cfg_.kind == OptimizerKind::Sgd) {
        m_[i] = cfg_.momentum * m_[i] + g;
        *params[i] -= lr * m_[i];
      } else {
        m_[i] = cfg_.beta1 * m_[i] + (1.0 - cfg_.beta1) * g;
        v_[i] = cfg_.beta2 * v_[i] +
                (1.0 - cfg_.beta2) * g.cwiseProduct(g);
        const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
        const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
        *params[i] -= (lr / c1) *
                      (m_[i].array() /
                       ((v_[i].array() / c2).sqrt() + cfg_.epsilon))
                          .matrix();
      }
    }
    return norm;
  }

 private:
  OptimizerConfig cfg_;
  std::vector<Matrix> m_, v_;
  std::size_t t_ = 0;
};

}  // namespace traitlab
