#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "cgr/errors.hpp"
#include "cgr/tensor.hpp"

namespace cgr {

/// A named trainable tensor together with its accumulated gradient.
struct Parameter {
  Parameter(std::string n, Tensor v, bool train = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), trainable(train) {}

  std::string name;
  Tensor value;
  // Accumulator written by Tape::backward, also through const access.
  mutable Tensor grad;
  bool trainable = true;

  void zero_grad() const { grad.fill(0.0); }
};

/// Owns parameters at stable addresses and remembers registration order,
/// which is also the order used for checkpoints and finite-difference sweeps.
class ParameterStore {
 public:
  ParameterStore() = default;
  ParameterStore(const ParameterStore&) = delete;
  ParameterStore& operator=(const ParameterStore&) = delete;
  ParameterStore(ParameterStore&&) noexcept = default;
  ParameterStore& operator=(ParameterStore&&) noexcept = default;

  Parameter& add(std::string name, Tensor value, bool trainable = true) {
    if (index_.contains(name)) throw ContractError("duplicate parameter name: " + name);
    index_.emplace(name, params_.size());
    params_.push_back(std::make_unique<Parameter>(std::move(name), std::move(value), trainable));
    return *params_.back();
  }

  Parameter& get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return *params_[it->second];
  }
  const Parameter& get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ContractError("unknown parameter: " + name);
    return *params_[it->second];
  }
  bool contains(const std::string& name) const { return index_.contains(name); }

  std::size_t size() const noexcept { return params_.size(); }
  Parameter& operator[](std::size_t i) { return *params_[i]; }
  const Parameter& operator[](std::size_t i) const { return *params_[i]; }

  void zero_grad() {
    for (auto& p : params_) p->zero_grad();
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& p : params_) n += p->value.size();
    return n;
  }

 private:
  std::vector<std::unique_ptr<Parameter>> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

class Tape;

/// Handle to a node recorded on a tape.
struct Var {
  Tape* tape = nullptr;
  std::size_t id = 0;

  const Tensor& value() const;
  const Tensor& grad() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
};

/// Records operations in execution order and replays them backwards.
///
/// Node ids are assigned in creation order, so inputs always precede their
/// consumers and a single reverse sweep visits each node exactly once.
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t)>;

  struct Node {
    const char* op = "";
    Tensor value;
    Tensor grad;
    std::vector<std::size_t> inputs;
    BackwardFn backward;
    const Parameter* param = nullptr;
    bool requires_grad = false;
  };

  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) {
    Node n;
    n.op = "const";
    n.value = std::move(value);
    return push(std::move(n));
  }

  // Each parameter gets a single leaf per tape, however often it is used.
  Var param(const Parameter& p) {
    if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var{this, it->second};
    Node n;
    n.op = "param";
    n.value = p.value;
    n.param = &p;
    n.requires_grad = p.trainable;
    Var v = push(std::move(n));
    param_nodes_.emplace(&p, v.id);
    return v;
  }

  Var record(const char* op, Tensor value, std::vector<std::size_t> inputs, BackwardFn backward) {
    Node n;
    n.op = op;
    n.value = std::move(value);
    for (auto i : n.inputs = std::move(inputs)) n.requires_grad = n.requires_grad || nodes_[i].requires_grad;
    if (n.requires_grad) n.backward = std::move(backward);
    return push(std::move(n));
  }

  const Node& node(std::size_t id) const { return nodes_.at(id); }
  std::size_t size() const noexcept { return nodes_.size(); }
  bool requires_grad(std::size_t id) const { return nodes_[id].requires_grad; }
  const Tensor& value(std::size_t id) const { return nodes_[id].value; }
  const Tensor& grad(std::size_t id) const { return nodes_[id].grad; }

  // Zero-initialised gradient buffer of a node, allocated on first use.
  Tensor& grad_buffer(std::size_t id) {
    Node& n = nodes_[id];
    if (n.grad.empty()) n.grad = Tensor(n.value.shape());
    return n.grad;
  }

  /// Propagates d(loss)/d(node) to every node and accumulates into the
  /// gradients of the parameters that were read onto this tape.
  void backward(Var loss) {
    if (loss.tape != this) throw ContractError("backward: loss belongs to another tape");
    if (nodes_[loss.id].value.size() != 1)
      throw ContractError("backward: loss must be scalar, got " + shape_str(nodes_[loss.id].value.shape()));
    for (auto& n : nodes_) n.grad = Tensor();
    grad_buffer(loss.id).fill(1.0);
    for (std::size_t i = loss.id + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || n.grad.empty()) continue;
      if (n.param) {
        auto& dst = n.param->grad.storage();
        const auto& src = n.grad.storage();
        for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
      } else if (n.backward) {
        n.backward(*this, i);
      }
    }
  }

 private:
  Var push(Node n) {
    nodes_.push_back(std::move(n));
    return Var{this, nodes_.size() - 1};
  }

  std::vector<Node> nodes_;
  std::unordered_map<const Parameter*, std::size_t> param_nodes_;
};

inline const Tensor& Var::value() const { return tape->value(id); }
inline const Tensor& Var::grad() const { return tape->grad(id); }

namespace detail {

inline void require_same_tape(Var a, Var b) {
  if (a.tape != b.tape) throw ContractError("operands recorded on different tapes");
}

inline void require_same_shape(const char* op, Var a, Var b) {
  require_same_tape(a, b);
  if (a.shape() != b.shape())
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                         shape_str(b.shape()));
}

inline void require_matrix(const char* op, Var a) {
  if (a.value().rank() != 2) throw DimensionError(std::string(op) + ": expected a matrix");
}

inline void accumulate(Tape& t, std::size_t id, const Tensor& g) {
  if (!t.requires_grad(id)) return;
  auto& dst = t.grad_buffer(id).storage();
  const auto& src = g.storage();
  for (std::size_t k = 0; k < dst.size(); ++k) dst[k] += src[k];
}

}  // namespace detail

/// [m x k] * [k x n] -> [m x n]
inline Var matmul(Var a, Var b) {
  detail::require_same_tape(a, b);
  detail::require_matrix("matmul", a);
  detail::require_matrix("matmul", b);
  if (a.cols() != b.rows())
    throw DimensionError("matmul: inner dimensions differ " + shape_str(a.shape()) + " * " + shape_str(b.shape()));
  Tensor out = Tensor::matrix(a.rows(), b.cols());
  gemm_acc(a.value(), b.value(), out);
  return a.tape->record("matmul", std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) gemm_nt_acc(g, t.value(ib), t.grad_buffer(ia));
    if (t.requires_grad(ib)) gemm_tn_acc(t.value(ia), g, t.grad_buffer(ib));
  });
}

inline Var transpose(Var a) {
  detail::require_matrix("transpose", a);
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = Tensor::matrix(n, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(j, i) = a.value().at(i, j);
  return a.tape->record("transpose", std::move(out), {a.id}, [ia = a.id, m, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga.at(i, j) += g.at(j, i);
  });
}

inline Var add(Var a, Var b) {
  detail::require_same_shape("add", a, b);
  Tensor out = a.value();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] += b.value()[k];
  return a.tape->record("add", std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    detail::accumulate(t, ia, g);
    detail::accumulate(t, ib, g);
  });
}

inline Var sub(Var a, Var b) {
  detail::require_same_shape("sub", a, b);
  Tensor out = a.value();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] -= b.value()[k];
  return a.tape->record("sub", std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    detail::accumulate(t, ia, g);
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_buffer(ib).storage();
      for (std::size_t k = 0; k < gb.size(); ++k) gb[k] -= g[k];
    }
  });
}

/// Elementwise (Hadamard) product.
inline Var mul(Var a, Var b) {
  detail::require_same_shape("mul", a, b);
  Tensor out = a.value();
  for (std::size_t k = 0; k < out.size(); ++k) out[k] *= b.value()[k];
  return a.tape->record("mul", std::move(out), {a.id, b.id}, [ia = a.id, ib = b.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    if (t.requires_grad(ia)) {
      auto& ga = t.grad_buffer(ia).storage();
      const Tensor& vb = t.value(ib);
      for (std::size_t k = 0; k < ga.size(); ++k) ga[k] += g[k] * vb[k];
    }
    if (t.requires_grad(ib)) {
      auto& gb = t.grad_buffer(ib).storage();
      const Tensor& va = t.value(ia);
      for (std::size_t k = 0; k < gb.size(); ++k) gb[k] += g[k] * va[k];
    }
  });
}

inline Var scale(Var a, double s) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v *= s;
  return a.tape->record("scale", std::move(out), {a.id}, [ia = a.id, s](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    auto& ga = t.grad_buffer(ia).storage();
    for (std::size_t k = 0; k < ga.size(); ++k) ga[k] += s * g[k];
  });
}

/// Multiplies every entry of `a` by the single entry of the [1 x 1] node `s`.
inline Var scale_by(Var a, Var s) {
  detail::require_same_tape(a, s);
  if (s.value().size() != 1) throw DimensionError("scale_by: scale must be [1x1], got " + shape_str(s.shape()));
  const double sv = s.value()[0];
  Tensor out = a.value();
  for (auto& v : out.storage()) v *= sv;
  return a.tape->record("scale_by", std::move(out), {a.id, s.id}, [ia = a.id, is = s.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const double sv = t.value(is)[0];
    if (t.requires_grad(ia)) {
      auto& ga = t.grad_buffer(ia).storage();
      for (std::size_t k = 0; k < ga.size(); ++k) ga[k] += sv * g[k];
    }
    if (t.requires_grad(is)) {
      const Tensor& va = t.value(ia);
      double acc = 0.0;
      for (std::size_t k = 0; k < va.size(); ++k) acc += g[k] * va[k];
      t.grad_buffer(is)[0] += acc;
    }
  });
}

/// Adds the row vector `bias` [1 x n] to every row of `a` [m x n].
inline Var add_row_bias(Var a, Var bias) {
  detail::require_same_tape(a, bias);
  detail::require_matrix("add_row_bias", a);
  if (bias.value().rank() != 2 || bias.rows() != 1 || bias.cols() != a.cols())
    throw DimensionError("add_row_bias: bias " + shape_str(bias.shape()) + " does not fit " + shape_str(a.shape()));
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = a.value();
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out.at(i, j) += bias.value()[j];
  return a.tape->record("add_row_bias", std::move(out), {a.id, bias.id},
                        [ia = a.id, ib = bias.id, m, n](Tape& t, std::size_t self) {
                          const Tensor& g = t.grad(self);
                          detail::accumulate(t, ia, g);
                          if (t.requires_grad(ib)) {
                            Tensor& gb = t.grad_buffer(ib);
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < n; ++j) gb[j] += g.at(i, j);
                          }
                        });
}

/// Row-concatenation: joins [m x p] and [m x q] side by side into [m x (p+q)].
inline Var concat_cols(Var a, Var b) {
  detail::require_same_tape(a, b);
  detail::require_matrix("concat_cols", a);
  detail::require_matrix("concat_cols", b);
  if (a.rows() != b.rows())
    throw DimensionError("concat_cols: row counts differ " + shape_str(a.shape()) + " vs " + shape_str(b.shape()));
  const std::size_t m = a.rows(), p = a.cols(), q = b.cols();
  Tensor out = Tensor::matrix(m, p + q);
  for (std::size_t i = 0; i < m; ++i) {
    std::copy_n(a.value().row(i).begin(), p, out.row(i).begin());
    std::copy_n(b.value().row(i).begin(), q, out.row(i).begin() + static_cast<std::ptrdiff_t>(p));
  }
  return a.tape->record("concat_cols", std::move(out), {a.id, b.id},
                        [ia = a.id, ib = b.id, m, p, q](Tape& t, std::size_t self) {
                          const Tensor& g = t.grad(self);
                          if (t.requires_grad(ia)) {
                            Tensor& ga = t.grad_buffer(ia);
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < p; ++j) ga.at(i, j) += g.at(i, j);
                          }
                          if (t.requires_grad(ib)) {
                            Tensor& gb = t.grad_buffer(ib);
                            for (std::size_t i = 0; i < m; ++i)
                              for (std::size_t j = 0; j < q; ++j) gb.at(i, j) += g.at(i, p + j);
                          }
                        });
}

/// Stacks matrices with equal column counts on top of each other.
inline Var stack_rows(std::span<const Var> parts) {
  if (parts.empty()) throw ContractError("stack_rows: nothing to stack");
  Tape* tape = parts.front().tape;
  const std::size_t n = parts.front().cols();
  std::size_t m = 0;
  std::vector<std::size_t> ids;
  for (const Var& v : parts) {
    detail::require_same_tape(parts.front(), v);
    detail::require_matrix("stack_rows", v);
    if (v.cols() != n) throw DimensionError("stack_rows: column counts differ");
    m += v.rows();
    ids.push_back(v.id);
  }
  Tensor out = Tensor::matrix(m, n);
  std::size_t offset = 0;
  for (const Var& v : parts) {
    std::copy(v.value().storage().begin(), v.value().storage().end(),
              out.storage().begin() + static_cast<std::ptrdiff_t>(offset));
    offset += v.value().size();
  }
  auto inputs = ids;
  return tape->record("stack_rows", std::move(out), std::move(inputs), [ids](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    std::size_t off = 0;
    for (auto id : ids) {
      const std::size_t len = t.value(id).size();
      if (t.requires_grad(id)) {
        auto& gi = t.grad_buffer(id).storage();
        for (std::size_t k = 0; k < len; ++k) gi[k] += g[off + k];
      }
      off += len;
    }
  });
}

/// Extracts entry (r, c) as a [1 x 1] node.
inline Var element(Var a, std::size_t r, std::size_t c) {
  detail::require_matrix("element", a);
  if (r >= a.rows() || c >= a.cols()) throw IndexError("element: index out of range");
  return a.tape->record("element", Tensor::scalar(a.value().at(r, c)), {a.id}, [ia = a.id, r, c](Tape& t, std::size_t self) {
    t.grad_buffer(ia).at(r, c) += t.grad(self)[0];
  });
}

/// Column-wise mean over rows: [m x n] -> [1 x n].
inline Var mean_rows(Var a) {
  detail::require_matrix("mean_rows", a);
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = Tensor::matrix(1, n);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out[j] += a.value().at(i, j);
  for (auto& v : out.storage()) v /= static_cast<double>(m);
  return a.tape->record("mean_rows", std::move(out), {a.id}, [ia = a.id, m, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(ia);
    const double inv = 1.0 / static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) ga.at(i, j) += g[j] * inv;
  });
}

inline Var sum(Var a) {
  double s = 0.0;
  for (double v : a.value().storage()) s += v;
  return a.tape->record("sum", Tensor::scalar(s), {a.id}, [ia = a.id](Tape& t, std::size_t self) {
    const double g = t.grad(self)[0];
    for (auto& v : t.grad_buffer(ia).storage()) v += g;
  });
}

/// Mean of all entries as a [1 x 1] node.
inline Var mean(Var a) { return scale(sum(a), 1.0 / static_cast<double>(a.value().size())); }

inline Var relu(Var a) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v = v > 0.0 ? v : 0.0;
  return a.tape->record("relu", std::move(out), {a.id}, [ia = a.id](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(ia);
    auto& ga = t.grad_buffer(ia).storage();
    for (std::size_t k = 0; k < ga.size(); ++k)
      if (x[k] > 0.0) ga[k] += g[k];
  });
}

/// Natural log with inputs clamped from below at `floor`; entries under the
/// floor receive no gradient.
inline Var log_clamped(Var a, double floor) {
  Tensor out = a.value();
  for (auto& v : out.storage()) v = std::log(std::max(v, floor));
  return a.tape->record("log_clamped", std::move(out), {a.id}, [ia = a.id, floor](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& x = t.value(ia);
    auto& ga = t.grad_buffer(ia).storage();
    for (std::size_t k = 0; k < ga.size(); ++k)
      if (x[k] >= floor) ga[k] += g[k] / x[k];
  });
}

/// Softmax of a single row, written into `out`; uses max subtraction.
inline void softmax_row_inplace(std::span<const double> in, std::span<double> out) {
  const double mx = *std::max_element(in.begin(), in.end());
  double z = 0.0;
  for (std::size_t j = 0; j < in.size(); ++j) z += (out[j] = std::exp(in[j] - mx));
  for (auto& v : out) v /= z;
}

inline Var softmax_rows(Var a) {
  detail::require_matrix("softmax_rows", a);
  const std::size_t m = a.rows(), n = a.cols();
  Tensor out = Tensor::matrix(m, n);
  for (std::size_t i = 0; i < m; ++i) softmax_row_inplace(a.value().row(i), out.row(i));
  return a.tape->record("softmax_rows", std::move(out), {a.id}, [ia = a.id, m, n](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    const Tensor& y = t.value(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t i = 0; i < m; ++i) {
      double dot = 0.0;
      for (std::size_t j = 0; j < n; ++j) dot += g.at(i, j) * y.at(i, j);
      for (std::size_t j = 0; j < n; ++j) ga.at(i, j) += y.at(i, j) * (g.at(i, j) - dot);
    }
  });
}

namespace detail {

inline void require_segments(const char* op, std::size_t rows, std::size_t per, std::size_t& count) {
  if (per == 0 || rows % per != 0)
    throw DimensionError(std::string(op) + ": " + std::to_string(rows) + " rows do not split into segments of " +
                         std::to_string(per));
  count = rows / per;
}

}  // namespace detail

/// Per-segment attention weights. `q` stacks B segments of `nq` rows and
/// `k` stacks B segments of `nk` rows; segment b yields
/// softmax(q_b k_b^T * scale) as rows [b*nq, (b+1)*nq) of a [B*nq x nk] result.
inline Var segment_attention_weights(Var q, Var k, std::size_t nq, std::size_t nk, double scale) {
  detail::require_same_tape(q, k);
  detail::require_matrix("segment_attention_weights", q);
  detail::require_matrix("segment_attention_weights", k);
  std::size_t bq = 0, bk = 0;
  detail::require_segments("segment_attention_weights", q.rows(), nq, bq);
  detail::require_segments("segment_attention_weights", k.rows(), nk, bk);
  if (bq != bk) throw DimensionError("segment_attention_weights: query and key segment counts differ");
  if (q.cols() != k.cols()) throw DimensionError("segment_attention_weights: query and key widths differ");
  const std::size_t d = q.cols();
  Tensor out = Tensor::matrix(bq * nq, nk);
  const double* pq = q.value().data().data();
  const double* pk = k.value().data().data();
  std::vector<double> srow(nk);
  for (std::size_t b = 0; b < bq; ++b)
    for (std::size_t i = 0; i < nq; ++i) {
      const double* qi = pq + (b * nq + i) * d;
      for (std::size_t j = 0; j < nk; ++j) {
        const double* kj = pk + (b * nk + j) * d;
        double s = 0.0;
        for (std::size_t t = 0; t < d; ++t) s += qi[t] * kj[t];
        srow[j] = s * scale;
      }
      softmax_row_inplace(srow, out.row(b * nq + i));
    }
  return q.tape->record("segment_attention_weights", std::move(out), {q.id, k.id},
                        [iq = q.id, ik = k.id, nq, nk, bq, d, scale](Tape& t, std::size_t self) {
                          const Tensor& g = t.grad(self);
                          const Tensor& a = t.value(self);
                          const Tensor& qv = t.value(iq);
                          const Tensor& kv = t.value(ik);
                          const bool need_q = t.requires_grad(iq), need_k = t.requires_grad(ik);
                          Tensor* gq = need_q ? &t.grad_buffer(iq) : nullptr;
                          Tensor* gk = need_k ? &t.grad_buffer(ik) : nullptr;
                          std::vector<double> ds(nk);
                          for (std::size_t b = 0; b < bq; ++b)
                            for (std::size_t i = 0; i < nq; ++i) {
                              const std::size_t r = b * nq + i;
                              double dot = 0.0;
                              for (std::size_t j = 0; j < nk; ++j) dot += g.at(r, j) * a.at(r, j);
                              for (std::size_t j = 0; j < nk; ++j) ds[j] = a.at(r, j) * (g.at(r, j) - dot) * scale;
                              for (std::size_t j = 0; j < nk; ++j) {
                                const std::size_t kr = b * nk + j;
                                if (ds[j] == 0.0) continue;
                                if (gq) {
                                  double* dst = gq->row(r).data();
                                  const double* src = kv.row(kr).data();
                                  for (std::size_t c = 0; c < d; ++c) dst[c] += ds[j] * src[c];
                                }
                                if (gk) {
                                  double* dst = gk->row(kr).data();
                                  const double* src = qv.row(r).data();
                                  for (std::size_t c = 0; c < d; ++c) dst[c] += ds[j] * src[c];
                                }
                              }
                            }
                        });
}

/// Per-segment product: rows of `a` in blocks of `na` (each [na x nv]) times
/// rows of `v` in blocks of `nv`; returns [B*na x v.cols()].
inline Var segment_matmul(Var a, Var v, std::size_t na, std::size_t nv) {
  detail::require_same_tape(a, v);
  detail::require_matrix("segment_matmul", a);
  detail::require_matrix("segment_matmul", v);
  std::size_t ba = 0, bv = 0;
  detail::require_segments("segment_matmul", a.rows(), na, ba);
  detail::require_segments("segment_matmul", v.rows(), nv, bv);
  if (ba != bv) throw DimensionError("segment_matmul: segment counts differ");
  if (a.cols() != nv) throw DimensionError("segment_matmul: weight width does not match value segment length");
  const std::size_t d = v.cols();
  Tensor out = Tensor::matrix(ba * na, d);
  for (std::size_t b = 0; b < ba; ++b)
    for (std::size_t i = 0; i < na; ++i) {
      double* o = out.row(b * na + i).data();
      for (std::size_t j = 0; j < nv; ++j) {
        const double w = a.value().at(b * na + i, j);
        const double* src = v.value().row(b * nv + j).data();
        for (std::size_t c = 0; c < d; ++c) o[c] += w * src[c];
      }
    }
  return a.tape->record("segment_matmul", std::move(out), {a.id, v.id},
                        [ia = a.id, iv = v.id, na, nv, ba, d](Tape& t, std::size_t self) {
                          const Tensor& g = t.grad(self);
                          const Tensor& av = t.value(ia);
                          const Tensor& vv = t.value(iv);
                          Tensor* ga = t.requires_grad(ia) ? &t.grad_buffer(ia) : nullptr;
                          Tensor* gv = t.requires_grad(iv) ? &t.grad_buffer(iv) : nullptr;
                          for (std::size_t b = 0; b < ba; ++b)
                            for (std::size_t i = 0; i < na; ++i) {
                              const double* gi = g.row(b * na + i).data();
                              for (std::size_t j = 0; j < nv; ++j) {
                                const double* vj = vv.row(b * nv + j).data();
                                if (ga) {
                                  double s = 0.0;
                                  for (std::size_t c = 0; c < d; ++c) s += gi[c] * vj[c];
                                  ga->at(b * na + i, j) += s;
                                }
                                if (gv) {
                                  const double w = av.at(b * na + i, j);
                                  double* dst = gv->row(b * nv + j).data();
                                  for (std::size_t c = 0; c < d; ++c) dst[c] += w * gi[c];
                                }
                              }
                            }
                        });
}

/// Column means of each block of `n` rows: [B*n x c] -> [B x c].
inline Var segment_mean_rows(Var a, std::size_t n) {
  detail::require_matrix("segment_mean_rows", a);
  std::size_t b = 0;
  detail::require_segments("segment_mean_rows", a.rows(), n, b);
  const std::size_t c = a.cols();
  Tensor out = Tensor::matrix(b, c);
  for (std::size_t s = 0; s < b; ++s)
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < c; ++j) out.at(s, j) += a.value().at(s * n + i, j);
  const double inv = 1.0 / static_cast<double>(n);
  for (auto& v : out.storage()) v *= inv;
  return a.tape->record("segment_mean_rows", std::move(out), {a.id}, [ia = a.id, n, b, c, inv](Tape& t, std::size_t self) {
    const Tensor& g = t.grad(self);
    Tensor& ga = t.grad_buffer(ia);
    for (std::size_t s = 0; s < b; ++s)
      for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < c; ++j) ga.at(s * n + i, j) += g.at(s, j) * inv;
  });
}

/// Mean over the batch of -log softmax(logits)[label], computed through a
/// fused log-softmax.
inline Var cross_entropy(Var logits, std::span<const int> labels) {
  detail::require_matrix("cross_entropy", logits);
  const std::size_t b = logits.rows(), c = logits.cols();
  if (labels.size() != b)
    throw DimensionError("cross_entropy: " + std::to_string(labels.size()) + " labels for " + std::to_string(b) + " rows");
  for (int y : labels)
    if (y < 0 || static_cast<std::size_t>(y) >= c)
      throw IndexError("cross_entropy: label " + std::to_string(y) + " outside [0, " + std::to_string(c) + ")");
  Tensor probs = Tensor::matrix(b, c);
  double loss = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    auto row = logits.value().row(i);
    const double mx = *std::max_element(row.begin(), row.end());
    double z = 0.0;
    for (double v : row) z += std::exp(v - mx);
    const double lse = mx + std::log(z);
    loss += lse - row[static_cast<std::size_t>(labels[i])];
    for (std::size_t j = 0; j < c; ++j) probs.at(i, j) = std::exp(row[j] - lse);
  }
  loss /= static_cast<double>(b);
  std::vector<int> ys(labels.begin(), labels.end());
  return logits.tape->record("cross_entropy", Tensor::scalar(loss), {logits.id},
                             [il = logits.id, probs = std::move(probs), ys = std::move(ys), b, c](Tape& t, std::size_t self) {
                               const double g = t.grad(self)[0] / static_cast<double>(b);
                               Tensor& gl = t.grad_buffer(il);
                               for (std::size_t i = 0; i < b; ++i)
                                 for (std::size_t j = 0; j < c; ++j)
                                   gl.at(i, j) += g * (probs.at(i, j) - (static_cast<int>(j) == ys[i] ? 1.0 : 0.0));
                             });
}

}  // namespace cgr
