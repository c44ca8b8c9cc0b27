#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "cgr/autodiff.hpp"

namespace cgr {

/// Single-head scaled dot-product attention with learned projections.
/// Queries and keys/values may come from sources of different widths.
struct AttentionParams {
  Parameter* w_q = nullptr;  // [q_in x d]
  Parameter* w_k = nullptr;  // [kv_in x d]
  Parameter* w_v = nullptr;  // [kv_in x d]

  std::size_t width() const { return w_q->value.cols(); }
  std::size_t query_in() const { return w_q->value.rows(); }
  std::size_t kv_in() const { return w_k->value.rows(); }
};

struct Dense {
  Parameter* weight = nullptr;  // [in x out]
  Parameter* bias = nullptr;    // [1 x out]

  std::size_t in() const { return weight->value.rows(); }
  std::size_t out() const { return weight->value.cols(); }
};

/// Affine layers with relu between consecutive layers; the last layer stays
/// affine.
struct MlpParams {
  std::vector<Dense> layers;

  std::size_t in() const { return layers.front().in(); }
  std::size_t out() const { return layers.back().out(); }
};

// LeCun-normal weights, std = 1/sqrt(fan_in); biases start at zero.
inline Dense make_dense(ParameterStore& store, const std::string& name, std::size_t in, std::size_t out,
                        std::mt19937_64& rng) {
  if (in == 0 || out == 0) throw ContractError("make_dense: widths must be positive");
  const double stddev = 1.0 / std::sqrt(static_cast<double>(in));
  Dense d;
  d.weight = &store.add(name + ".weight", random_normal({in, out}, stddev, rng));
  d.bias = &store.add(name + ".bias", Tensor::matrix(1, out));
  return d;
}

inline MlpParams make_mlp(ParameterStore& store, const std::string& name, const std::vector<std::size_t>& widths,
                          std::mt19937_64& rng) {
  if (widths.size() < 2) throw ContractError("make_mlp: need at least input and output widths");
  MlpParams p;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i)
    p.layers.push_back(make_dense(store, name + ".fc" + std::to_string(i), widths[i], widths[i + 1], rng));
  return p;
}

inline AttentionParams make_attention(ParameterStore& store, const std::string& name, std::size_t query_in,
                                      std::size_t kv_in, std::size_t width, std::mt19937_64& rng) {
  if (query_in == 0 || kv_in == 0 || width == 0) throw ContractError("make_attention: widths must be positive");
  AttentionParams p;
  p.w_q = &store.add(name + ".w_q", random_normal({query_in, width}, 1.0 / std::sqrt(double(query_in)), rng));
  p.w_k = &store.add(name + ".w_k", random_normal({kv_in, width}, 1.0 / std::sqrt(double(kv_in)), rng));
  p.w_v = &store.add(name + ".w_v", random_normal({kv_in, width}, 1.0 / std::sqrt(double(kv_in)), rng));
  return p;
}

inline Var linear(Var x, const Dense& layer) {
  Tape& t = *x.tape;
  return add_row_bias(matmul(x, t.param(*layer.weight)), t.param(*layer.bias));
}

inline Var mlp_forward(Var x, const MlpParams& p) {
  if (p.layers.empty()) throw ContractError("mlp_forward: no layers");
  if (x.cols() != p.in())
    throw DimensionError("mlp_forward: input width " + std::to_string(x.cols()) + " but first layer expects " +
                         std::to_string(p.in()));
  Var h = x;
  for (std::size_t i = 0; i < p.layers.size(); ++i) {
    h = linear(h, p.layers[i]);
    if (i + 1 < p.layers.size()) h = relu(h);
  }
  return h;
}

/// A batch of token sets stacked row-wise: B segments of `per_example` rows.
struct Tokens {
  Var rows;
  std::size_t per_example = 0;

  Tokens() = default;
  Tokens(Var r, std::size_t per) : rows(r), per_example(per) {
    if (per == 0 || r.rows() % per != 0)
      throw DimensionError("tokens: " + std::to_string(r.rows()) + " rows do not split into sets of " + std::to_string(per));
  }
  // One example: all rows form a single set.
  static Tokens single(Var r) { return Tokens(r, r.rows()); }

  std::size_t batch() const { return rows.rows() / per_example; }
  std::size_t width() const { return rows.cols(); }
};

namespace detail {

inline void check_attention_inputs(const Tokens& q, const Tokens& kv, const AttentionParams& p) {
  if (q.width() != p.query_in())
    throw DimensionError("attention: query width " + std::to_string(q.width()) + " but projection expects " +
                         std::to_string(p.query_in()));
  if (kv.width() != p.kv_in())
    throw DimensionError("attention: key/value width " + std::to_string(kv.width()) + " but projection expects " +
                         std::to_string(p.kv_in()));
  if (q.batch() != kv.batch()) throw DimensionError("attention: query and key/value batch sizes differ");
}

inline double attention_scale(const AttentionParams& p) { return 1.0 / std::sqrt(static_cast<double>(p.width())); }

inline Var attention_weights(const Tokens& q, const Tokens& kv, const AttentionParams& p) {
  check_attention_inputs(q, kv, p);
  Tape& t = *q.rows.tape;
  Var qp = matmul(q.rows, t.param(*p.w_q));
  Var kp = matmul(kv.rows, t.param(*p.w_k));
  return segment_attention_weights(qp, kp, q.per_example, kv.per_example, attention_scale(p));
}

}  // namespace detail

/// softmax(Q K^T / sqrt(d)) V per example, with Q = q W_q and K = V-source =
/// kv projected by W_k and W_v. Keys and values come from the same tokens.
inline Tokens attention(const Tokens& q, const Tokens& kv, const AttentionParams& p) {
  Var a = detail::attention_weights(q, kv, p);
  Var v = matmul(kv.rows, kv.rows.tape->param(*p.w_v));
  return Tokens(segment_matmul(a, v, q.per_example, kv.per_example), q.per_example);
}

/// Mean over query tokens of attention(q, kv), [B x d]. Pools the attention
/// weights before the value projection, which is cheaper than pooling the
/// full output.
inline Var pooled_attention(const Tokens& q, const Tokens& kv, const AttentionParams& p) {
  Var a = detail::attention_weights(q, kv, p);
  Var mixed = segment_matmul(segment_mean_rows(a, q.per_example), kv.rows, 1, kv.per_example);
  return matmul(mixed, kv.rows.tape->param(*p.w_v));
}

inline Var attention(Var q_src, Var k_src, Var v_src, const AttentionParams& p) {
  if (k_src.id != v_src.id || k_src.tape != v_src.tape)
    throw ContractError("attention: keys and values must come from the same tokens");
  return attention(Tokens::single(q_src), Tokens::single(k_src), p).rows;
}

/// Projected keys and values shared by every query, such as a dictionary.
struct KeyValues {
  Var keys;
  Var values;
};

inline KeyValues project_key_values(Var k_src, Var v_src, const AttentionParams& p) {
  if (k_src.cols() != p.kv_in() || v_src.cols() != p.kv_in())
    throw DimensionError("attention: key/value width does not match projection input " + std::to_string(p.kv_in()));
  if (k_src.rows() != v_src.rows()) throw DimensionError("attention: key and value row counts differ");
  Tape& t = *k_src.tape;
  return {matmul(k_src, t.param(*p.w_k)), matmul(v_src, t.param(*p.w_v))};
}

namespace detail {

inline Var shared_weights(Var q_src, const KeyValues& kv, const AttentionParams& p) {
  if (q_src.cols() != p.query_in())
    throw DimensionError("attention: query width " + std::to_string(q_src.cols()) + " but projection expects " +
                         std::to_string(p.query_in()));
  Var q = matmul(q_src, q_src.tape->param(*p.w_q));
  return softmax_rows(scale(matmul(q, transpose(kv.keys)), attention_scale(p)));
}

}  // namespace detail

inline Var attend(Var q_src, const KeyValues& kv, const AttentionParams& p) {
  return matmul(detail::shared_weights(q_src, kv, p), kv.values);
}

inline Tokens attend(const Tokens& q, const KeyValues& kv, const AttentionParams& p) {
  return Tokens(attend(q.rows, kv, p), q.per_example);
}

inline Var pooled_attend(const Tokens& q, const KeyValues& kv, const AttentionParams& p) {
  return matmul(segment_mean_rows(detail::shared_weights(q.rows, kv, p), q.per_example), kv.values);
}

/// Adam with bias correction. Moments are kept in parameter-store order.
struct AdamState {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  std::int64_t step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  void init(const ParameterStore& store) {
    m.clear();
    v.clear();
    for (std::size_t i = 0; i < store.size(); ++i) {
      m.emplace_back(store[i].value.shape());
      v.emplace_back(store[i].value.shape());
    }
    step = 0;
  }
};

inline void adam_step(ParameterStore& store, AdamState& state) {
  if (state.m.size() != store.size()) state.init(store);
  ++state.step;
  const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < store.size(); ++i) {
    Parameter& p = store[i];
    if (!p.trainable) continue;
    auto& w = p.value.storage();
    const auto& g = p.grad.storage();
    auto& m = state.m[i].storage();
    auto& v = state.v[i].storage();
    for (std::size_t k = 0; k < w.size(); ++k) {
      m[k] = state.beta1 * m[k] + (1.0 - state.beta1) * g[k];
      v[k] = state.beta2 * v[k] + (1.0 - state.beta2) * g[k] * g[k];
      const double mhat = m[k] / c1;
      const double vhat = v[k] / c2;
      w[k] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

}  // namespace cgr
