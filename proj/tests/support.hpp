#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>

#include "cgr/autodiff.hpp"

namespace cgr::testing {

inline double rel_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

struct GradReport {
  double max_rel = 0.0;
  std::string worst;  // parameter name and flat index of the worst entry
  std::size_t checked = 0;
};

// Builds a fresh tape, evaluates the scalar loss, and returns its value.
using LossFn = std::function<Var(Tape&)>;

inline double eval_loss(const LossFn& f) {
  Tape t;
  return f(t).value().item();
}

/// Compares the tape gradient of every trainable parameter entry with a
/// central difference of step h.
inline GradReport check_gradients(ParameterStore& store, const LossFn& f, double h = 1e-5) {
  store.zero_grad();
  {
    Tape t;
    t.backward(f(t));
  }
  GradReport rep;
  for (std::size_t i = 0; i < store.size(); ++i) {
    Parameter& p = store[i];
    if (!p.trainable) continue;
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double keep = p.value[k];
      p.value[k] = keep + h;
      const double up = eval_loss(f);
      p.value[k] = keep - h;
      const double down = eval_loss(f);
      p.value[k] = keep;
      const double numeric = (up - down) / (2.0 * h);
      const double err = rel_error(p.grad[k], numeric);
      ++rep.checked;
      if (err > rep.max_rel) {
        rep.max_rel = err;
        rep.worst = p.name + "[" + std::to_string(k) + "]";
      }
    }
  }
  return rep;
}

inline Tensor random_matrix(std::size_t r, std::size_t c, std::mt19937_64& rng, double scale = 1.0) {
  return random_normal({r, c}, scale, rng);
}

// Straight-line softmax over a vector, used as an oracle.
inline std::vector<double> softmax_ref(const std::vector<double>& v) {
  double mx = v[0];
  for (double x : v) mx = std::max(mx, x);
  std::vector<double> out(v.size());
  double z = 0.0;
  for (std::size_t i = 0; i < v.size(); ++i) z += out[i] = std::exp(v[i] - mx);
  for (auto& x : out) x /= z;
  return out;
}

// Plain triple loop, [m x k] * [k x n].
inline Tensor matmul_ref(const Tensor& a, const Tensor& b) {
  Tensor o = Tensor::matrix(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < a.cols(); ++k) s += a.at(i, k) * b.at(k, j);
      o.at(i, j) = s;
    }
  return o;
}

inline Tensor transpose_ref(const Tensor& a) {
  Tensor o = Tensor::matrix(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) o.at(j, i) = a.at(i, j);
  return o;
}

// softmax(q W_q (k W_k)^T / sqrt(d)) (v W_v), evaluated without the tape.
inline Tensor attention_ref(const Tensor& q, const Tensor& kv, const Tensor& wq, const Tensor& wk, const Tensor& wv) {
  const Tensor qp = matmul_ref(q, wq), kp = matmul_ref(kv, wk), vp = matmul_ref(kv, wv);
  const double s = 1.0 / std::sqrt(static_cast<double>(wq.cols()));
  Tensor scores = matmul_ref(qp, transpose_ref(kp));
  for (std::size_t i = 0; i < scores.rows(); ++i) {
    std::vector<double> row(scores.row(i).begin(), scores.row(i).end());
    for (auto& x : row) x *= s;
    auto p = softmax_ref(row);
    std::copy(p.begin(), p.end(), scores.row(i).begin());
  }
  return matmul_ref(scores, vp);
}

inline Tensor mean_rows_ref(const Tensor& a) {
  Tensor o = Tensor::matrix(1, a.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) o.at(0, j) += a.at(i, j) / static_cast<double>(a.rows());
  return o;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return INFINITY;
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace cgr::testing
