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
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "traitlab/error.hpp"
#include "traitlab/lora.hpp"
#include "traitlab/rng.hpp"

namespace traitlab::tinylm {

using peft::AdapterSet;
using peft::LoraAdapter;

// ---------------------------------------------------------------------------
// Byte-level tokenizer
// ---------------------------------------------------------------------------

inline constexpr int kBos = 256;
inline constexpr int kEos = 257;
inline constexpr int kByteVocab = 258;

// One id per byte, so any UTF-8 string (emoji included) round-trips.
inline std::vector<int> tokenize(std::string_view text) {
  std::vector<int> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) ids.push_back(c);
  return ids;
}

// Special ids are skipped.
inline std::string detokenize(const std::vector<int>& ids) {
  std::string out;
  out.reserve(ids.size());
  for (int id : ids) {
    if (id >= 0 && id < 256) out += static_cast<char>(id);
  }
  return out;
}

// ---------------------------------------------------------------------------
// Configuration and parameters
// ---------------------------------------------------------------------------

struct ModelConfig {
  int vocab_size = kByteVocab;
  int d_model = 64;
  int n_layers = 2;
  int n_heads = 4;
  int d_mlp = 256;
  int max_seq_len = 128;

  void validate() const {
    if (vocab_size < 1 || d_model < 1 || n_layers < 1 || n_heads < 1 ||
        d_mlp < 1 || max_seq_len < 1) {
      throw InvalidArgument("model config: all sizes must be positive");
    }
    if (d_model % n_heads != 0) {
      throw InvalidArgument("model config: d_model must be divisible by "
                            "n_heads");
    }
  }
  int head_dim() const { return d_model / n_heads; }

  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

inline nlohmann::ordered_json to_json(const ModelConfig& c) {
  return {{"vocab_size", c.vocab_size}, {"d_model", c.d_model},
          {"n_layers", c.n_layers},     {"n_heads", c.n_heads},
          {"d_mlp", c.d_mlp},           {"max_seq_len", c.max_seq_len}};
}

inline ModelConfig model_config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.vocab_size = j.value("vocab_size", c.vocab_size);
  c.d_model = j.value("d_model", c.d_model);
  c.n_layers = j.value("n_layers", c.n_layers);
  c.n_heads = j.value("n_heads", c.n_heads);
  c.d_mlp = j.value("d_mlp", c.d_mlp);
  c.max_seq_len = j.value("max_seq_len", c.max_seq_len);
  c.validate();
  return c;
}

struct LayerParams {
  Matrix ln1_g, ln1_b;          // 1 x d
  Matrix wq, wk, wv, wo;        // d x d
  Matrix ln2_g, ln2_b;          // 1 x d
  Matrix w_in, b_in;            // d x d_mlp, 1 x d_mlp
  Matrix w_out, b_out;          // d_mlp x d, 1 x d
};

// Pre-norm decoder-only transformer. Vectors are stored as 1 x n matrices so
// every tensor is a Matrix.
struct Parameters {
  ModelConfig config;
  Matrix tok_emb;  // vocab x d
  Matrix pos_emb;  // max_seq_len x d
  std::vector<LayerParams> layers;
  Matrix lnf_g, lnf_b;  // 1 x d
  Matrix unembed;       // d x vocab

  // Visits every tensor with its canonical name, in a fixed order.
  template <typename F>
  void for_each(F&& f) {
    visit(*this, f);
  }
  template <typename F>
  void for_each(F&& f) const {
    visit(*this, f);
  }

  std::size_t num_parameters() const {
    std::size_t n = 0;
    for_each([&n](const std::string&, const Matrix& m) { n += m.size(); });
    return n;
  }

 private:
  template <typename Self, typename F>
  static void visit(Self& p, F& f) {
    f(std::string("tok_emb"), p.tok_emb);
    f(std::string("pos_emb"), p.pos_emb);
    for (std::size_t i = 0; i < p.layers.size(); ++i) {
      auto& l = p.layers[i];
      const std::string pre = "layers." + std::to_string(i) + ".";
      f(pre + "ln1_g", l.ln1_g);
      f(pre + "ln1_b", l.ln1_b);
      f(pre + "wq", l.wq);
      f(pre + "wk", l.wk);
      f(pre + "wv", l.wv);
      f(pre + "wo", l.wo);
      f(pre + "ln2_g", l.ln2_g);
      f(pre + "ln2_b", l.ln2_b);
      f(pre + "w_in", l.w_in);
      f(pre + "b_in", l.b_in);
      f(pre + "w_out", l.w_out);
      f(pre + "b_out", l.b_out);
    }
    f(std::string("lnf_g"), p.lnf_g);
    f(std::string("lnf_b"), p.lnf_b);
    f(std::string("unembed"), p.unembed);
  }
};

// Names of the projections that may carry an adapter.
inline const std::vector<std::string>& adaptable_projections() {
  static const std::vector<std::string> kNames = {"wq", "wk",   "wv",
                                                  "wo", "w_in", "w_out"};
  return kNames;
}

inline std::string layer_param_name(int layer, std::string_view proj) {
  return "layers." + std::to_string(layer) + "." + std::string(proj);
}

// Zero-filled parameters with the shapes implied by `c`; layer-norm gains 1.
inline Parameters zero_parameters(const ModelConfig& c) {
  c.validate();
  Parameters p;
  p.config = c;
  const int d = c.d_model;
  p.tok_emb = Matrix::Zero(c.vocab_size, d);
  p.pos_emb = Matrix::Zero(c.max_seq_len, d);
  p.layers.resize(c.n_layers);
  for (auto& l : p.layers) {
    l.ln1_g = Matrix::Ones(1, d);
    l.ln1_b = Matrix::Zero(1, d);
    l.wq = l.wk = l.wv = l.wo = Matrix::Zero(d, d);
    l.ln2_g = Matrix::Ones(1, d);
    l.ln2_b = Matrix::Zero(1, d);
    l.w_in = Matrix::Zero(d, c.d_mlp);
    l.b_in = Matrix::Zero(1, c.d_mlp);
    l.w_out = Matrix::Zero(c.d_mlp, d);
    l.b_out = Matrix::Zero(1, d);
  }
  p.lnf_g = Matrix::Ones(1, d);
  p.lnf_b = Matrix::Zero(1, d);
  p.unembed = Matrix::Zero(d, c.vocab_size);
  return p;
}

// Gaussian init (std 0.02; residual output projections scaled by
// 1/sqrt(2 * n_layers)).
inline Parameters init_parameters(const ModelConfig& c, std::uint64_t seed) {
  Parameters p = zero_parameters(c);
  Rng rng(seed);
  const double resid_std = 0.02 / std::sqrt(2.0 * c.n_layers);
  auto fill = [&rng](Matrix& m, double sd) {
    for (Eigen::Index i = 0; i < m.size(); ++i) {
      m.data()[i] = sd * rng.normal();
    }
  };
  fill(p.tok_emb, 0.02);
  fill(p.pos_emb, 0.01);
  for (auto& l : p.layers) {
    fill(l.wq, 0.02);
    fill(l.wk, 0.02);
    fill(l.wv, 0.02);
    fill(l.wo, resid_std);
    fill(l.w_in, 0.02);
    fill(l.w_out, resid_std);
  }
  fill(p.unembed, 0.02);
  return p;
}

inline void check_shapes(const Parameters& a, const Parameters& b) {
  if (!(a.config == b.config)) {
    throw InvalidArgument("model configurations differ");
  }
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

inline constexpr double kLayerNormEps = 1e-5;

enum class TraceMode {
  FinalPosition,     // hidden vector at the last position
  MaxOverPositions,  // per-neuron maximum across positions
};

struct TraceOptions {
  int layer = -1;  // negative counts from the end; -1 = last block
  TraceMode mode = TraceMode::FinalPosition;
};

struct ActivationTrace {
  int layer_index = 0;
  int position = 0;  // -1 for MaxOverPositions
  std::vector<double> values;  // post-GELU MLP hidden, length d_mlp
};

struct ForwardOptions {
  const AdapterSet* adapters = nullptr;
  bool training = false;      // enables adapter dropout
  Rng* rng = nullptr;         // required when training with dropout
  std::optional<TraceOptions> trace;
};

namespace detail {

struct LnCache {
  Matrix xhat;
  Eigen::VectorXd inv_std;
};

inline Matrix layer_norm(const Matrix& x, const Matrix& g, const Matrix& b,
                         LnCache* cache) {
  const Eigen::Index T = x.rows(), d = x.cols();
  Matrix xhat(T, d);
  Eigen::VectorXd inv(T);
  for (Eigen::Index t = 0; t < T; ++t) {
    const double mu = x.row(t).mean();
    const double var = (x.row(t).array() - mu).square().mean();
    inv(t) = 1.0 / std::sqrt(var + kLayerNormEps);
    xhat.row(t) = (x.row(t).array() - mu) * inv(t);
  }
  Matrix y = (xhat.array().rowwise() * g.row(0).array()).rowwise() +
             b.row(0).array();
  if (cache) {
    cache->xhat = std::move(xhat);
    cache->inv_std = std::move(inv);
  }
  return y;
}

inline Matrix layer_norm_backward(const Matrix& dy, const Matrix& g,
                                  const LnCache& c, Matrix* dg, Matrix* db) {
  if (dg) *dg += (dy.array() * c.xhat.array()).colwise().sum().matrix();
  if (db) *db += dy.colwise().sum();
  const Matrix dxhat = dy.array().rowwise() * g.row(0).array();
  const Eigen::Index T = dy.rows();
  Matrix dx(T, dy.cols());
  for (Eigen::Index t = 0; t < T; ++t) {
    const double m1 = dxhat.row(t).mean();
    const double m2 = (dxhat.row(t).array() * c.xhat.row(t).array()).mean();
    dx.row(t) = c.inv_std(t) *
                (dxhat.row(t).array() - m1 - c.xhat.row(t).array() * m2);
  }
  return dx;
}

inline constexpr double kInvSqrt2 = 0.7071067811865476;

inline double gelu(double u) {
  return 0.5 * u * (1.0 + std::erf(u * kInvSqrt2));
}

inline double gelu_grad(double u) {
  constexpr double kInvSqrt2Pi = 0.3989422804014327;
  return 0.5 * (1.0 + std::erf(u * kInvSqrt2)) +
         u * kInvSqrt2Pi * std::exp(-0.5 * u * u);
}

struct LinearCache {
  const LoraAdapter* adapter = nullptr;
  Matrix x_adapter;  // adapter input after dropout (empty when no dropout)
  Matrix mask;       // 0 or 1/keep per input entry
  Matrix xl1;        // x_adapter * L1
  bool dropped = false;
};

inline Matrix linear(const Matrix& x, const Matrix& w,
                     const LoraAdapter* adapter, const ForwardOptions& opt,
                     LinearCache* cache) {
  Matrix y = x * w;
  if (cache) cache->adapter = adapter;
  if (!adapter || adapter->merged || adapter->scale == 0.0) {
    if (cache) cache->adapter = nullptr;
    return y;
  }
  peft::check_conforms(w, *adapter);
  if (opt.training && adapter->dropout > 0.0) {
    if (!opt.rng) throw InvalidArgument("training-mode dropout needs an Rng");
    const double keep = 1.0 - adapter->dropout;
    Matrix mask(x.rows(), x.cols());
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
      mask.data()[i] = opt.rng->uniform() < adapter->dropout ? 0.0 : 1.0 / keep;
    }
    Matrix xd = x.cwiseProduct(mask);
    Matrix xl1 = xd * adapter->l1;
    y += adapter->scale * (xl1 * adapter->l2);
    if (cache) {
      cache->mask = std::move(mask);
      cache->x_adapter = std::move(xd);
      cache->xl1 = std::move(xl1);
      cache->dropped = true;
    }
  } else {
    Matrix xl1 = x * adapter->l1;
    y += adapter->scale * (xl1 * adapter->l2);
    if (cache) cache->xl1 = std::move(xl1);
  }
  return y;
}

struct LayerCache {
  Matrix x_in;
  LnCache ln1;
  Matrix a;
  LinearCache q, k, v, o;
  Matrix Q, K, V;
  std::vector<Matrix> probs;  // per head, T x T
  Matrix attn_concat;
  Matrix h_mid;
  LnCache ln2;
  Matrix m;
  LinearCache in, out;
  Matrix u, z;
};

struct ForwardCache {
  std::vector<int> tokens;
  std::vector<LayerCache> layers;
  Matrix h_final;
  LnCache lnf;
  Matrix f;
};

inline const LoraAdapter* find_adapter(const ForwardOptions& opt, int layer,
                                       std::string_view proj) {
  if (!opt.adapters || opt.adapters->empty()) return nullptr;
  return opt.adapters->find(layer_param_name(layer, proj));
}

}  // namespace detail

struct ForwardResult {
  Matrix logits;  // T x vocab
  std::optional<ActivationTrace> trace;
};

inline void check_tokens(const ModelConfig& c, const std::vector<int>& tokens) {
  if (tokens.empty()) throw InvalidArgument("forward: empty token sequence");
  if (static_cast<int>(tokens.size()) > c.max_seq_len) {
    throw InvalidArgument("sequence of " + std::to_string(tokens.size()) +
                          " tokens exceeds max_seq_len " +
                          std::to_string(c.max_seq_len));
  }
  for (int t : tokens) {
    if (t < 0 || t >= c.vocab_size) {
      throw InvalidArgument("token id " + std::to_string(t) +
                            " outside vocabulary of " +
                            std::to_string(c.vocab_size));
    }
  }
}

namespace detail {

inline ForwardResult forward_impl(const Parameters& p,
                                  const std::vector<int>& tokens,
                                  const ForwardOptions& opt,
                                  ForwardCache* cache) {
  const ModelConfig& c = p.config;
  check_tokens(c, tokens);
  const Eigen::Index T = static_cast<Eigen::Index>(tokens.size());
  const int H = c.n_heads, dh = c.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));

  int trace_layer = -1;
  if (opt.trace) {
    trace_layer = opt.trace->layer < 0 ? c.n_layers + opt.trace->layer
                                       : opt.trace->layer;
    if (trace_layer < 0 || trace_layer >= c.n_layers) {
      throw InvalidArgument("trace layer out of range");
    }
  }

  Matrix h(T, c.d_model);
  for (Eigen::Index t = 0; t < T; ++t) {
    h.row(t) = p.tok_emb.row(tokens[t]) + p.pos_emb.row(t);
  }
  if (cache) {
    cache->tokens = tokens;
    cache->layers.assign(c.n_layers, {});
  }

  ForwardResult result;
  for (int li = 0; li < c.n_layers; ++li) {
    const LayerParams& L = p.layers[li];
    LayerCache local;
    LayerCache& lc = cache ? cache->layers[li] : local;
    const bool keep = cache != nullptr;
    if (keep) lc.x_in = h;

    Matrix a = layer_norm(h, L.ln1_g, L.ln1_b, keep ? &lc.ln1 : nullptr);
    Matrix Q = linear(a, L.wq, find_adapter(opt, li, "wq"), opt,
                      keep ? &lc.q : nullptr);
    Matrix K = linear(a, L.wk, find_adapter(opt, li, "wk"), opt,
                      keep ? &lc.k : nullptr);
    Matrix V = linear(a, L.wv, find_adapter(opt, li, "wv"), opt,
                      keep ? &lc.v : nullptr);
    Matrix concat(T, c.d_model);
    if (keep) lc.probs.resize(H);
    for (int hd = 0; hd < H; ++hd) {
      const auto Qh = Q.middleCols(hd * dh, dh);
      const auto Kh = K.middleCols(hd * dh, dh);
      const auto Vh = V.middleCols(hd * dh, dh);
      Matrix S = (Qh * Kh.transpose()) * inv_sqrt_dh;
      for (Eigen::Index i = 0; i < T; ++i) {
        const double mx = S.row(i).head(i + 1).maxCoeff();
        double sum = 0.0;
        for (Eigen::Index j = 0; j <= i; ++j) {
          S(i, j) = std::exp(S(i, j) - mx);
          sum += S(i, j);
        }
        for (Eigen::Index j = 0; j <= i; ++j) S(i, j) /= sum;
        for (Eigen::Index j = i + 1; j < T; ++j) S(i, j) = 0.0;
      }
      concat.middleCols(hd * dh, dh) = S * Vh;
      if (keep) lc.probs[hd] = std::move(S);
    }
    Matrix attn = linear(concat, L.wo, find_adapter(opt, li, "wo"), opt,
                         keep ? &lc.o : nullptr);
    h += attn;
    if (keep) {
      lc.a = std::move(a);
      lc.Q = std::move(Q);
      lc.K = std::move(K);
      lc.V = std::move(V);
      lc.attn_concat = std::move(concat);
      lc.h_mid = h;
    }

    Matrix m = layer_norm(h, L.ln2_g, L.ln2_b, keep ? &lc.ln2 : nullptr);
    Matrix u = linear(m, L.w_in, find_adapter(opt, li, "w_in"), opt,
                      keep ? &lc.in : nullptr);
    u.rowwise() += L.b_in.row(0);
    Matrix z = u.unaryExpr([](double x) { return gelu(x); });
    Matrix out = linear(z, L.w_out, find_adapter(opt, li, "w_out"), opt,
                        keep ? &lc.out : nullptr);
    out.rowwise() += L.b_out.row(0);
    h += out;

    if (li == trace_layer) {
      ActivationTrace tr;
      tr.layer_index = li;
      if (opt.trace->mode == TraceMode::FinalPosition) {
        tr.position = static_cast<int>(T - 1);
        tr.values.assign(z.row(T - 1).data(), z.row(T - 1).data() + z.cols());
      } else {
        tr.position = -1;
        const Eigen::RowVectorXd mx = z.colwise().maxCoeff();
        tr.values.assign(mx.data(), mx.data() + mx.size());
      }
      result.trace = std::move(tr);
    }
    if (keep) {
      lc.m = std::move(m);
      lc.u = std::move(u);
      lc.z = std::move(z);
    }
  }

  Matrix f = layer_norm(h, p.lnf_g, p.lnf_b, cache ? &cache->lnf : nullptr);
  result.logits = f * p.unembed;
  if (cache) {
    cache->h_final = std::move(h);
    cache->f = std::move(f);
  }
  return result;
}

}  // namespace detail

// Logits for every position. Position t only sees tokens[0..t].
inline ForwardResult forward(const Parameters& p,
                             const std::vector<int>& tokens,
                             const ForwardOptions& opt = {}) {
  return detail::forward_impl(p, tokens, opt, nullptr);
}

// Gradients of a loss with respect to the base parameters and adapters.
struct Gradients {
  Parameters base;  // same layout as the model; zero when not requested
  std::map<std::string, std::pair<Matrix, Matrix>> adapters;  // dL1, dL2
  bool has_base = false;
};

inline Gradients zero_gradients(const Parameters& p, const AdapterSet* a,
                                bool base) {
  Gradients g;
  g.has_base = base;
  if (base) g.base = zero_parameters(p.config);
  if (base) {
    // zero_parameters sets layer-norm gains to one; gradients start at zero.
    g.base.for_each([](const std::string&, Matrix& m) { m.setZero(); });
  }
  if (a) {
    for (const auto& [name, ad] : a->adapters) {
      g.adapters[name] = {Matrix::Zero(ad.l1.rows(), ad.l1.cols()),
                          Matrix::Zero(ad.l2.rows(), ad.l2.cols())};
    }
  }
  return g;
}

namespace detail {

// Backward through y = x W (+ s * xd L1 L2). Accumulates dW (when dw is
// non-null) and adapter gradients; returns dx.
inline Matrix linear_backward(const Matrix& dy, const Matrix& x,
                              const Matrix& w, const LinearCache& c,
                              const std::string& name, Matrix* dw,
                              Gradients& g) {
  if (dw) *dw += x.transpose() * dy;
  Matrix dx = dy * w.transpose();
  const LoraAdapter* a = c.adapter;
  if (a && a->scale != 0.0) {
    const Matrix dy_l2t = dy * a->l2.transpose();  // T x r
    auto it = g.adapters.find(name);
    if (it != g.adapters.end()) {
      const Matrix& xin = c.dropped ? c.x_adapter : x;
      it->second.first += a->scale * (xin.transpose() * dy_l2t);
      it->second.second += a->scale * (c.xl1.transpose() * dy);
    }
    Matrix dxa = a->scale * (dy_l2t * a->l1.transpose());
    if (c.dropped) dxa = dxa.cwiseProduct(c.mask);
    dx += dxa;
  }
  return dx;
}

}  // namespace detail

// Backpropagates dlogits (T x vocab) through the cached forward pass.
inline void backward(const Parameters& p, const detail::ForwardCache& cache,
                     const Matrix& dlogits, Gradients& g) {
  const ModelConfig& c = p.config;
  const Eigen::Index T = static_cast<Eigen::Index>(cache.tokens.size());
  const int H = c.n_heads, dh = c.head_dim();
  const double inv_sqrt_dh = 1.0 / std::sqrt(static_cast<double>(dh));
  const bool base = g.has_base;
  Parameters* gb = base ? &g.base : nullptr;

  if (base) gb->unembed += cache.f.transpose() * dlogits;
  Matrix df = dlogits * p.unembed.transpose();
  Matrix dh_res = detail::layer_norm_backward(
      df, p.lnf_g, cache.lnf, base ? &gb->lnf_g : nullptr,
      base ? &gb->lnf_b : nullptr);

  for (int li = c.n_layers - 1; li >= 0; --li) {
    const LayerParams& L = p.layers[li];
    const detail::LayerCache& lc = cache.layers[li];
    LayerParams* gl = base ? &gb->layers[li] : nullptr;

    // MLP block: h = h_mid + (gelu(m W_in + b_in) W_out + b_out).
    if (base) gl->b_out += dh_res.colwise().sum();
    Matrix dz = detail::linear_backward(dh_res, lc.z, L.w_out, lc.out,
                                        layer_param_name(li, "w_out"),
                                        base ? &gl->w_out : nullptr, g);
    Matrix du = dz.array() * lc.u.unaryExpr([](double x) {
                               return detail::gelu_grad(x);
                             }).array();
    if (base) gl->b_in += du.colwise().sum();
    Matrix dm = detail::linear_backward(du, lc.m, L.w_in, lc.in,
                                        layer_param_name(li, "w_in"),
                                        base ? &gl->w_in : nullptr, g);
    dh_res += detail::layer_norm_backward(dm, L.ln2_g, lc.ln2,
                                          base ? &gl->ln2_g : nullptr,
                                          base ? &gl->ln2_b : nullptr);

    // Attention block: h_mid = x_in + attn(ln1(x_in)).
    Matrix dconcat = detail::linear_backward(
        dh_res, lc.attn_concat, L.wo, lc.o, layer_param_name(li, "wo"),
        base ? &gl->wo : nullptr, g);
    Matrix dQ = Matrix::Zero(T, c.d_model);
    Matrix dK = Matrix::Zero(T, c.d_model);
    Matrix dV = Matrix::Zero(T, c.d_model);
    for (int hd = 0; hd < H; ++hd) {
      const Matrix& P = lc.probs[hd];
      const auto dO = dconcat.middleCols(hd * dh, dh);
      const auto Qh = lc.Q.middleCols(hd * dh, dh);
      const auto Kh = lc.K.middleCols(hd * dh, dh);
      const auto Vh = lc.V.middleCols(hd * dh, dh);
      const Matrix dP = dO * Vh.transpose();
      dV.middleCols(hd * dh, dh) = P.transpose() * dO;
      Matrix dS(T, T);
      for (Eigen::Index i = 0; i < T; ++i) {
        const double dot = (dP.row(i).array() * P.row(i).array()).sum();
        dS.row(i) = P.row(i).array() * (dP.row(i).array() - dot);
      }
      dS *= inv_sqrt_dh;
      dQ.middleCols(hd * dh, dh) = dS * Kh;
      dK.middleCols(hd * dh, dh) = dS.transpose() * Qh;
    }
    Matrix da = detail::linear_backward(dQ, lc.a, L.wq, lc.q,
                                        layer_param_name(li, "wq"),
                                        base ? &gl->wq : nullptr, g);
    da += detail::linear_backward(dK, lc.a, L.wk, lc.k,
                                  layer_param_name(li, "wk"),
                                  base ? &gl->wk : nullptr, g);
    da += detail::linear_backward(dV, lc.a, L.wv, lc.v,
                                  layer_param_name(li, "wv"),
                                  base ? &gl->wv : nullptr, g);
    dh_res += detail::layer_norm_backward(da, L.ln1_g, lc.ln1,
                                          base ? &gl->ln1_g : nullptr,
                                          base ? &gl->ln1_b : nullptr);
  }

  if (base) {
    for (Eigen::Index t = 0; t < T; ++t) {
      gb->tok_emb.row(cache.tokens[t]) += dh_res.row(t);
      gb->pos_emb.row(t) += dh_res.row(t);
    }
  }
}

// ---------------------------------------------------------------------------
// Loss
// ---------------------------------------------------------------------------

// A training sequence: tokens[0..n-1]; position t predicts tokens[t+1] with
// weight weights[t] (weights has n-1 entries; zero masks a target).
struct Example {
  std::vector<int> tokens;
  std::vector<double> weights;
};

inline Example full_example(std::vector<int> tokens) {
  Example e;
  e.weights.assign(tokens.size() > 0 ? tokens.size() - 1 : 0, 1.0);
  e.tokens = std::move(tokens);
  return e;
}

inline void log_softmax_row(const Eigen::Ref<const Eigen::RowVectorXd>& z,
                            Eigen::RowVectorXd& out) {
  const double mx = z.maxCoeff();
  const double lse = mx + std::log((z.array() - mx).exp().sum());
  out = z.array() - lse;
}

// Weighted-sum cross entropy of one example plus its backward pass.
// Returns the summed weighted loss; gradients are scaled by `grad_scale`.
inline double loss_and_backward(const Parameters& p, const Example& ex,
                                const ForwardOptions& opt, double grad_scale,
                                Gradients* g) {
  if (ex.tokens.size() < 2) return 0.0;
  std::vector<int> inputs(ex.tokens.begin(), ex.tokens.end() - 1);
  detail::ForwardCache cache;
  const ForwardResult fr =
      detail::forward_impl(p, inputs, opt, g ? &cache : nullptr);
  const Eigen::Index T = fr.logits.rows();
  Matrix dlogits;
  if (g) dlogits = Matrix::Zero(T, fr.logits.cols());
  double loss = 0.0;
  Eigen::RowVectorXd lsm;
  for (Eigen::Index t = 0; t < T; ++t) {
    const double w = ex.weights[t];
    if (w == 0.0) continue;
    log_softmax_row(fr.logits.row(t), lsm);
    const int target = ex.tokens[t + 1];
    loss -= w * lsm(target);
    if (g) {
      dlogits.row(t) = (w * grad_scale) * lsm.array().exp();
      dlogits(t, target) -= w * grad_scale;
    }
  }
  if (g) backward(p, cache, dlogits, *g);
  return loss;
}

inline double weight_sum(const Example& ex) {
  double s = 0.0;
  for (double w : ex.weights) s += w;
  return s;
}

// Mean per-target cross entropy (nats) over a batch.
inline double mean_loss(const Parameters& p, const std::vector<Example>& batch,
                        const ForwardOptions& opt = {}) {
  double total = 0.0, weight = 0.0;
  for (const auto& ex : batch) {
    total += loss_and_backward(p, ex, opt, 0.0, nullptr);
    weight += weight_sum(ex);
  }
  return weight > 0.0 ? total / weight : 0.0;
}

// ---------------------------------------------------------------------------
// Distributions and sampling
// ---------------------------------------------------------------------------

inline std::vector<double> softmax(const Eigen::Ref<const Eigen::RowVectorXd>& z,
                                   double temperature = 1.0) {
  if (!(temperature > 0.0)) {
    throw InvalidArgument("temperature must be positive");
  }
  const Eigen::RowVectorXd s = z / temperature;
  const double mx = s.maxCoeff();
  std::vector<double> out(static_cast<std::size_t>(s.size()));
  double sum = 0.0;
  for (Eigen::Index i = 0; i < s.size(); ++i) {
    out[i] = std::exp(s(i) - mx);
    sum += out[i];
  }
  for (double& v : out) v /= sum;
  return out;
}

// softmax(logits / T) at the last prompt position.
inline std::vector<double> next_token_distribution(
    const Parameters& p, const std::vector<int>& prompt_tokens,
    double temperature = 1.0, const AdapterSet* adapters = nullptr) {
  ForwardOptions opt;
  opt.adapters = adapters;
  const ForwardResult fr = forward(p, prompt_tokens, opt);
  return softmax(fr.logits.row(fr.logits.rows() - 1), temperature);
}

struct SamplingConfig {
  double temperature = 1.0;
  int max_tokens = 64;
  std::uint64_t seed = 0;
};

// Context fed to the model for a text prompt: BOS then the prompt bytes.
inline std::vector<int> prompt_context(std::string_view prompt) {
  std::vector<int> ctx{kBos};
  for (int id : tokenize(prompt)) ctx.push_back(id);
  return ctx;
}

// Ancestral sampling from BOS + prompt. Stops after max_tokens, at EOS, or
// when the context window is full.
inline std::string sample(const Parameters& p, std::string_view prompt,
                          const SamplingConfig& cfg,
                          const AdapterSet* adapters = nullptr) {
  if (p.config.vocab_size < kByteVocab) {
    throw InvalidArgument("text sampling needs vocab_size >= 258");
  }
  if (!(cfg.temperature > 0.0)) {
    throw InvalidArgument("temperature must be positive");
  }
  std::vector<int> ctx = prompt_context(prompt);
  if (static_cast<int>(ctx.size()) > p.config.max_seq_len) {
    throw InvalidArgument("prompt of " + std::to_string(ctx.size()) +
                          " tokens exceeds max_seq_len " +
                          std::to_string(p.config.max_seq_len));
  }
  Rng rng(cfg.seed);
  std::vector<int> generated;
  for (int step = 0; step < cfg.max_tokens; ++step) {
    if (static_cast<int>(ctx.size()) >= p.config.max_seq_len) break;
    const auto probs =
        next_token_distribution(p, ctx, cfg.temperature, adapters);
    const int next = static_cast<int>(rng.categorical(probs));
    if (next == kEos) break;
    generated.push_back(next);
    ctx.push_back(next);
  }
  return detokenize(generated);
}

}  // namespace traitlab::tinylm
