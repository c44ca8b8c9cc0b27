#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cgr/nn.hpp"

namespace cgr {

/// What a deconfounding block hands back: its pre-softmax output rows and
/// the token expectation forwarded to the next layer. The stream is skipped
/// when the caller does not need it.
struct BlockOutput {
  Var output;                    // [B x d_c]
  std::optional<Tokens> stream;  // [B*n_x x d]
};

/// X -> M -> Y with no confounder: E_X(M) = Attention(X, X, X), output MLP(pool(E_X(M))).
struct NoConfounderBlock {
  AttentionParams transform;
  MlpParams mlp;

  static NoConfounderBlock create(ParameterStore& store, const std::string& name, std::size_t in_width,
                                  std::size_t width, std::size_t hidden, std::size_t out_width,
                                  std::mt19937_64& rng) {
    NoConfounderBlock b;
    b.transform = make_attention(store, name + ".trans", in_width, in_width, width, rng);
    b.mlp = make_mlp(store, name + ".mlp", {width, hidden, out_width}, rng);
    return b;
  }
};

/// Back-door adjustment with an observed confounder Z:
/// E_X(X) = Attention(X, X, X), E_X(Z) = Attention(Z, X, X).
struct BackDoorBlock {
  AttentionParams input_expectation;
  AttentionParams confounder_expectation;
  MlpParams mlp;

  static BackDoorBlock create(ParameterStore& store, const std::string& name, std::size_t in_width,
                              std::size_t confounder_width, std::size_t width, std::size_t hidden,
                              std::size_t out_width, std::mt19937_64& rng) {
    BackDoorBlock b;
    b.input_expectation = make_attention(store, name + ".emb_x", in_width, in_width, width, rng);
    b.confounder_expectation = make_attention(store, name + ".emb_z", confounder_width, in_width, width, rng);
    b.mlp = make_mlp(store, name + ".mlp", {2 * width, hidden, out_width}, rng);
    return b;
  }
};

/// Front-door adjustment through a mediator, with the global dictionary
/// standing in for the marginal over inputs:
/// E_X(X) = Attention(X, D, D), E_X(M) = Attention(X, X, X).
struct FrontDoorBlock {
  AttentionParams dictionary_expectation;
  AttentionParams mediator_expectation;
  MlpParams mlp;

  static FrontDoorBlock create(ParameterStore& store, const std::string& name, std::size_t in_width,
                               std::size_t dict_width, std::size_t width, std::size_t hidden,
                               std::size_t out_width, std::mt19937_64& rng) {
    FrontDoorBlock b;
    b.dictionary_expectation = make_attention(store, name + ".emb_x", in_width, dict_width, width, rng);
    b.mediator_expectation = make_attention(store, name + ".emb_m", in_width, in_width, width, rng);
    b.mlp = make_mlp(store, name + ".mlp", {2 * width, hidden, out_width}, rng);
    return b;
  }
};

/// K centroids of training token features; frozen after construction.
class GlobalDictionary {
 public:
  GlobalDictionary() = default;
  explicit GlobalDictionary(Tensor centroids) : centroids_(std::move(centroids)) {
    if (centroids_.rank() != 2) throw DimensionError("dictionary centroids must be a matrix");
    for (double v : centroids_.storage())
      if (!std::isfinite(v)) throw ContractError("dictionary centroids must be finite");
  }

  bool built() const noexcept { return !centroids_.empty(); }
  std::size_t size() const { return require().rows(); }
  std::size_t width() const { return require().cols(); }
  const Tensor& centroids() const { return require(); }

 private:
  const Tensor& require() const {
    if (!built()) throw StateError("global dictionary has not been built");
    return centroids_;
  }
  Tensor centroids_;
};

inline BlockOutput ncf_forward(const Tokens& x, const NoConfounderBlock& block, bool keep_stream = true) {
  if (!keep_stream) return {mlp_forward(pooled_attention(x, x, block.transform), block.mlp), std::nullopt};
  Tokens m_exp = attention(x, x, block.transform);
  return {mlp_forward(segment_mean_rows(m_exp.rows, m_exp.per_example), block.mlp), m_exp};
}

inline BlockOutput bd_forward(const Tokens& x, const Tokens& z, const BackDoorBlock& block, bool keep_stream = true) {
  Var z_pool = pooled_attention(z, x, block.confounder_expectation);
  std::optional<Tokens> x_exp;
  Var x_pool;
  if (keep_stream) {
    x_exp = attention(x, x, block.input_expectation);
    x_pool = segment_mean_rows(x_exp->rows, x_exp->per_example);
  } else {
    x_pool = pooled_attention(x, x, block.input_expectation);
  }
  return {mlp_forward(concat_cols(x_pool, z_pool), block.mlp), x_exp};
}

inline BlockOutput bd_forward(Tape& tape, const Tensor& x, const Tensor& z, const BackDoorBlock& block) {
  if (z.empty()) throw ContractError("back-door block requires observed confounder tokens");
  return bd_forward(Tokens::single(tape.constant(x)), Tokens::single(tape.constant(z)), block);
}

/// Projects the dictionary once per tape so a whole batch can share it.
inline KeyValues project_dictionary(Tape& tape, const GlobalDictionary& dict, const FrontDoorBlock& block) {
  Var d = tape.constant(dict.centroids());
  return project_key_values(d, d, block.dictionary_expectation);
}

inline BlockOutput fd_forward(const Tokens& x, const KeyValues& dict_kv, const FrontDoorBlock& block,
                              bool keep_stream = true) {
  Var m_pool = pooled_attention(x, x, block.mediator_expectation);
  std::optional<Tokens> x_exp;
  Var x_pool;
  if (keep_stream) {
    x_exp = attend(x, dict_kv, block.dictionary_expectation);
    x_pool = segment_mean_rows(x_exp->rows, x_exp->per_example);
  } else {
    x_pool = pooled_attend(x, dict_kv, block.dictionary_expectation);
  }
  return {mlp_forward(concat_cols(x_pool, m_pool), block.mlp), x_exp};
}

inline BlockOutput fd_forward(const Tokens& x, const GlobalDictionary& dict, const FrontDoorBlock& block,
                              bool keep_stream = true) {
  return fd_forward(x, project_dictionary(*x.rows.tape, dict, block), block, keep_stream);
}

struct KMeansResult {
  Tensor centroids;
  std::vector<std::size_t> assignment;
  std::vector<double> wcss_history;  // one entry per Lloyd iteration
  std::size_t iterations = 0;
  bool converged = false;
};

namespace detail {

inline double squared_distance(std::span<const double> a, std::span<const double> b) {
  double s = 0.0;
  for (std::size_t j = 0; j < a.size(); ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

}  // namespace detail

/// Lloyd's algorithm with seeded farthest-point initialisation.
///
/// The first centroid is a seeded random row; each further centroid is the
/// row farthest from all chosen so far (lowest index on ties). Iteration
/// stops at an assignment fixed point or after `max_iters`. A cluster that
/// loses all its members keeps its previous centroid.
inline KMeansResult kmeans(const Tensor& features, std::size_t k, std::uint64_t seed, std::size_t max_iters) {
  if (features.rank() != 2) throw DimensionError("kmeans: features must be a matrix");
  const std::size_t n = features.rows(), d = features.cols();
  if (k == 0 || n < k)
    throw ContractError("kmeans: need 1 <= K <= N, got K=" + std::to_string(k) + " N=" + std::to_string(n));

  KMeansResult res;
  res.centroids = Tensor::matrix(k, d);
  std::mt19937_64 rng(seed);
  std::size_t first = std::uniform_int_distribution<std::size_t>(0, n - 1)(rng);
  std::vector<double> nearest(n, std::numeric_limits<double>::infinity());
  std::size_t chosen = first;
  for (std::size_t c = 0; c < k; ++c) {
    std::copy_n(features.row(chosen).begin(), d, res.centroids.row(c).begin());
    double best = -1.0;
    std::size_t next = 0;
    for (std::size_t i = 0; i < n; ++i) {
      nearest[i] = std::min(nearest[i], detail::squared_distance(features.row(i), res.centroids.row(c)));
      if (nearest[i] > best) {
        best = nearest[i];
        next = i;
      }
    }
    chosen = next;
  }

  res.assignment.assign(n, k);
  std::vector<double> sums(k * d);
  std::vector<std::size_t> counts(k);
  for (std::size_t it = 0; it < max_iters; ++it) {
    bool changed = false;
    double wcss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      double best = std::numeric_limits<double>::infinity();
      std::size_t arg = 0;
      for (std::size_t c = 0; c < k; ++c) {
        const double dist = detail::squared_distance(features.row(i), res.centroids.row(c));
        if (dist < best) {
          best = dist;
          arg = c;
        }
      }
      changed = changed || res.assignment[i] != arg;
      res.assignment[i] = arg;
      wcss += best;
    }
    ++res.iterations;
    if (!changed) {
      res.wcss_history.push_back(wcss);
      res.converged = true;
      break;
    }
    std::fill(sums.begin(), sums.end(), 0.0);
    std::fill(counts.begin(), counts.end(), 0);
    for (std::size_t i = 0; i < n; ++i) {
      const std::size_t c = res.assignment[i];
      ++counts[c];
      for (std::size_t j = 0; j < d; ++j) sums[c * d + j] += features.at(i, j);
    }
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] == 0) continue;
      for (std::size_t j = 0; j < d; ++j) res.centroids.at(c, j) = sums[c * d + j] / static_cast<double>(counts[c]);
    }
    // WCSS after the update step, measured against the current assignment.
    double updated = 0.0;
    for (std::size_t i = 0; i < n; ++i)
      updated += detail::squared_distance(features.row(i), res.centroids.row(res.assignment[i]));
    res.wcss_history.push_back(updated);
  }
  return res;
}

inline GlobalDictionary build_dictionary(const Tensor& features, std::size_t k, std::uint64_t seed,
                                         std::size_t max_iters = 100) {
  return GlobalDictionary(kmeans(features, k, seed, max_iters).centroids);
}

}  // namespace cgr
