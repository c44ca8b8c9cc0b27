#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "cgr/routing.hpp"

namespace cgr::taskgen {

enum class Regime { NoConfounder, ObservedConfounder, HiddenConfounderMediator };

inline Regime parse_regime(const std::string& s) {
  if (s == "no_confounder") return Regime::NoConfounder;
  if (s == "observed_confounder") return Regime::ObservedConfounder;
  if (s == "hidden_confounder_mediator") return Regime::HiddenConfounderMediator;
  throw ContractError("unknown regime '" + s + "'");
}

inline std::string regime_name(Regime r) {
  switch (r) {
    case Regime::NoConfounder: return "no_confounder";
    case Regime::ObservedConfounder: return "observed_confounder";
    case Regime::HiddenConfounderMediator: return "hidden_confounder_mediator";
  }
  return "?";
}

/// Knobs of the synthetic confounded classification task.
///
/// Each example has a class k and a confounder state s (one state per
/// class). With probability rho the training state copies the class,
/// otherwise it is drawn uniformly; with test_shift a tied test state is the
/// class shifted by one, so the train-time s-k association is reversed.
///
/// The first quarter of the z tokens (at least one) sit on the state centre
/// nu_s, the rest on a pointer centre p_r, where the pointer r is drawn
/// independently of k and s. The class reaches x through one of three
/// mechanisms, drawn per example:
///  - direct: the first tokens carry the class centre;
///  - back_door: one token per pointer tag p_t, each carrying some class
///    centre; only the token tagged with r carries k, so reading the class
///    requires z to pick the token;
///  - mediator: tokens carry +m_k and -m_k in equal numbers, where m_k is a
///    class-specific centre. Their mean is zero, so averaging x tokens loses
///    most of the class; quantising tokens against centroids keeps it.
struct SyntheticTaskSpec {
  Regime regime = Regime::ObservedConfounder;
  std::size_t d_in = 16;
  std::size_t classes = 4;
  std::size_t n_x = 6;
  std::size_t n_z = 4;
  std::size_t train_size = 2000;
  std::size_t test_size = 1000;
  double rho = 0.9;
  bool test_shift = true;
  std::uint64_t seed = 0;

  double separation = 5.0;          // distance between cluster centres
  double noise = 1.0;               // per-coordinate token noise std
  double class_tokens = 0.5;        // fraction of x tokens carrying the class in direct examples
  double class_strength = 1.0;      // scale of class centres in x
  double tag_strength = 1.0;        // scale of pointer tags in back-door examples
  double mediator_strength = 1.0;   // scale of mediator tokens
  double share_direct = 1.0;        // relative frequency of each mechanism
  double share_back_door = 1.0;     // (ignored where the regime rules it out)
  double share_mediator = 1.0;

  // Mechanism weights after the regime mask: no_confounder keeps only the
  // direct mechanism, hidden_confounder_mediator drops back-door examples
  // because z carries no state there.
  std::array<double, 3> shares() const {
    switch (regime) {
      case Regime::NoConfounder: return {1.0, 0.0, 0.0};
      case Regime::ObservedConfounder: return {share_direct, share_back_door, share_mediator};
      case Regime::HiddenConfounderMediator: return {share_direct, 0.0, share_mediator};
    }
    return {1.0, 0.0, 0.0};
  }

  void validate() const {
    if (!(rho >= 0.0 && rho <= 1.0)) throw ContractError("task spec: rho must lie in [0, 1]");
    if (!d_in || classes < 2 || !n_x || !n_z || !train_size || !test_size)
      throw ContractError("task spec: sizes must be positive and classes >= 2");
    if (!(noise >= 0.0) || !(separation > 0.0)) throw ContractError("task spec: separation must be positive and noise non-negative");
    if (!(class_tokens > 0.0 && class_tokens <= 1.0)) throw ContractError("task spec: class_tokens must lie in (0, 1]");
    const auto w = shares();
    if (w[0] < 0.0 || w[1] < 0.0 || w[2] < 0.0 || !(w[0] + w[1] + w[2] > 0.0))
      throw ContractError("task spec: mechanism shares must be non-negative with a positive sum");
    if (w[1] > 0.0 && n_x < classes) throw ContractError("task spec: back-door examples need n_x >= classes");
    if (w[1] > 0.0 && n_z < 2) throw ContractError("task spec: back-door examples need n_z >= 2");
    if (w[2] > 0.0 && n_x < 2) throw ContractError("task spec: mediator examples need n_x >= 2");
  }
};

enum class Mechanism { Direct = 0, BackDoor = 1, Mediator = 2 };

struct Dataset {
  std::vector<Example> train;
  std::vector<Example> test;
  // Per-record confounder state and mechanism; diagnostics only, not written to disk.
  std::vector<int> train_states;
  std::vector<int> test_states;
  std::vector<Mechanism> train_mechanisms;
  std::vector<Mechanism> test_mechanisms;
};

namespace detail {

// `count` directions of length separation/sqrt(2), mutually orthogonal when
// the width allows it (pairwise distance = separation).
inline std::vector<std::vector<double>> centres(std::size_t count, std::size_t width, double separation,
                                                std::mt19937_64& rng) {
  std::normal_distribution<double> g(0.0, 1.0);
  std::vector<std::vector<double>> out;
  for (std::size_t i = 0; i < count; ++i) {
    std::vector<double> v(width);
    for (auto& x : v) x = g(rng);
    if (out.size() < width)
      for (const auto& u : out) {
        double dot = 0.0, uu = 0.0;
        for (std::size_t j = 0; j < width; ++j) dot += v[j] * u[j], uu += u[j] * u[j];
        for (std::size_t j = 0; j < width; ++j) v[j] -= dot / uu * u[j];
      }
    double n = 0.0;
    for (double x : v) n += x * x;
    n = std::sqrt(n);
    for (auto& x : v) x *= separation / std::sqrt(2.0) / n;
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace detail

/// Deterministic train/test generation; all randomness comes from `spec.seed`.
inline Dataset generate_dataset(const SyntheticTaskSpec& spec) {
  spec.validate();
  std::mt19937_64 rng(spec.seed);
  const std::size_t c = spec.classes, d = spec.d_in;
  // One draw fixes the geometry: class, state, pointer and mediator centres.
  const auto class_centre = detail::centres(c, d, spec.separation, rng);
  const auto state_centre = detail::centres(c, d, spec.separation, rng);
  const auto pointer_centre = detail::centres(c, d, spec.separation, rng);
  const auto mediator_centre = detail::centres(c, d, spec.separation, rng);

  std::normal_distribution<double> g(0.0, 1.0);
  std::uniform_int_distribution<std::size_t> pick_class(0, c - 1);
  std::uniform_int_distribution<std::size_t> pick_other(0, c - 2);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const auto w = spec.shares();
  std::discrete_distribution<int> pick_mechanism({w[0], w[1], w[2]});
  const std::size_t n_state = std::max<std::size_t>(1, spec.n_z / 4);
  const std::size_t n_class = std::max<std::size_t>(1, static_cast<std::size_t>(std::lround(spec.class_tokens * double(spec.n_x))));

  auto add = [&](Tensor& t, std::size_t row, const std::vector<double>& centre, double scale) {
    for (std::size_t j = 0; j < d; ++j) t.at(row, j) += scale * centre[j];
  };

  auto make = [&](bool test, int& state_out, Mechanism& mech_out) {
    Example ex;
    const std::size_t k = pick_class(rng);
    std::size_t s;
    if (spec.regime == Regime::NoConfounder) {
      s = pick_class(rng);
    } else {
      const bool tied = unit(rng) < spec.rho;
      const std::size_t rnd = pick_class(rng);
      if (!tied) s = rnd;
      else s = (test && spec.test_shift) ? (k + 1) % c : k;
    }
    const auto mech = static_cast<Mechanism>(pick_mechanism(rng));
    const std::size_t r = pick_class(rng);
    state_out = static_cast<int>(s);
    mech_out = mech;
    ex.label = static_cast<int>(k);

    ex.x = Tensor::matrix(spec.n_x, d);
    for (auto& v : ex.x.storage()) v = spec.noise * g(rng);
    switch (mech) {
      case Mechanism::Direct:
        for (std::size_t t = 0; t < n_class; ++t) add(ex.x, t, class_centre[k], spec.class_strength);
        break;
      case Mechanism::BackDoor: {
        std::vector<std::size_t> tags(c);
        for (std::size_t t = 0; t < c; ++t) tags[t] = t;
        std::shuffle(tags.begin(), tags.end(), rng);
        for (std::size_t t = 0; t < c; ++t) {
          std::size_t cls = k;
          if (tags[t] != r) {
            cls = pick_other(rng);
            if (cls >= k) ++cls;
          }
          add(ex.x, t, pointer_centre[tags[t]], spec.tag_strength);
          add(ex.x, t, class_centre[cls], spec.class_strength);
        }
        break;
      }
      case Mechanism::Mediator:
        for (std::size_t t = 0; t + 1 < spec.n_x; t += 2) {
          add(ex.x, t, mediator_centre[k], spec.mediator_strength);
          add(ex.x, t + 1, mediator_centre[k], -spec.mediator_strength);
        }
        break;
    }

    ex.z = Tensor::matrix(spec.n_z, d);
    for (auto& v : ex.z.storage()) v = spec.noise * g(rng);
    if (spec.regime != Regime::HiddenConfounderMediator)
      for (std::size_t t = 0; t < spec.n_z; ++t) add(ex.z, t, t < n_state ? state_centre[s] : pointer_centre[r], 1.0);
    return ex;
  };

  Dataset ds;
  for (std::size_t i = 0; i < spec.train_size; ++i) {
    int s = 0;
    Mechanism m{};
    ds.train.push_back(make(false, s, m));
    ds.train_states.push_back(s);
    ds.train_mechanisms.push_back(m);
  }
  for (std::size_t i = 0; i < spec.test_size; ++i) {
    int s = 0;
    Mechanism m{};
    ds.test.push_back(make(true, s, m));
    ds.test_states.push_back(s);
    ds.test_mechanisms.push_back(m);
  }
  return ds;
}

struct ScoredWord {
  std::string word;
  double score = 0.0;
};

/// Top-M words per document by tf(w,d) * ln(N / df(w)) with raw counts;
/// ties go to the lexicographically smaller word.
inline std::vector<std::vector<ScoredWord>> tfidf_topm(const std::vector<std::vector<std::string>>& corpus, std::size_t m) {
  if (corpus.empty()) throw ContractError("tfidf: empty corpus");
  if (m == 0) throw ContractError("tfidf: M must be at least 1");
  std::map<std::string, std::size_t> df;
  std::vector<std::map<std::string, std::size_t>> tf(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    if (corpus[i].empty()) throw ContractError("tfidf: document " + std::to_string(i) + " is empty");
    for (const auto& w : corpus[i]) ++tf[i][w];
    for (const auto& [w, _] : tf[i]) ++df[w];
  }
  const double n = static_cast<double>(corpus.size());
  std::vector<std::vector<ScoredWord>> out(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    auto& ranked = out[i];
    for (const auto& [w, count] : tf[i])
      ranked.push_back({w, static_cast<double>(count) * std::log(n / static_cast<double>(df[w]))});
    std::stable_sort(ranked.begin(), ranked.end(), [](const ScoredWord& a, const ScoredWord& b) {
      if (a.score != b.score) return a.score > b.score;
      return a.word < b.word;
    });
    if (ranked.size() > m) ranked.resize(m);
  }
  return out;
}

struct TripletRecord {
  std::string subject;
  std::string relation;
  std::string object;
  double weight = 1.0;
  std::vector<double> embedding;
};

struct ScoredTriplet {
  std::size_t index = 0;  // position in the input list
  double score = 0.0;
};

/// Ranks triplets by cosine(query, embedding) * weight, descending, ties in
/// input order, and keeps the top K.
inline std::vector<ScoredTriplet> score_triplets(std::span<const double> query, const std::vector<TripletRecord>& triplets,
                                                 std::size_t top_k) {
  if (top_k == 0) throw ContractError("score_triplets: topK must be at least 1");
  double qn = 0.0;
  for (double v : query) qn += v * v;
  qn = std::sqrt(qn);
  if (qn == 0.0) throw ContractError("score_triplets: query embedding has zero norm");
  std::vector<ScoredTriplet> scored;
  for (std::size_t i = 0; i < triplets.size(); ++i) {
    const auto& t = triplets[i];
    if (t.embedding.size() != query.size())
      throw DimensionError("score_triplets: triplet " + std::to_string(i) + " embedding width differs from the query");
    if (t.weight < 0.0) throw ContractError("score_triplets: negative statistical weight");
    double dot = 0.0, en = 0.0;
    for (std::size_t j = 0; j < query.size(); ++j) dot += query[j] * t.embedding[j], en += t.embedding[j] * t.embedding[j];
    if (en == 0.0) throw ContractError("score_triplets: triplet " + std::to_string(i) + " has a zero embedding");
    scored.push_back({i, dot / (qn * std::sqrt(en)) * t.weight});
  }
  std::stable_sort(scored.begin(), scored.end(), [](const ScoredTriplet& a, const ScoredTriplet& b) { return a.score > b.score; });
  if (scored.size() > top_k) scored.resize(top_k);
  return scored;
}

}  // namespace cgr::taskgen
