#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "cgr/errors.hpp"

namespace cgr::scm {

using Assignment = std::map<std::string, int>;

/// Probability table over the joint domain of named discrete variables.
/// Entries are stored in mixed radix order, last variable fastest.
class Distribution {
 public:
  Distribution() = default;
  Distribution(std::vector<std::string> vars, std::vector<int> domains)
      : vars_(std::move(vars)), domains_(std::move(domains)) {
    if (vars_.size() != domains_.size()) throw ContractError("distribution: names and domains differ in length");
    std::size_t n = 1;
    for (int d : domains_) {
      if (d < 1) throw ContractError("distribution: domain sizes must be positive");
      n *= static_cast<std::size_t>(d);
    }
    p_.assign(n, 0.0);
  }

  const std::vector<std::string>& vars() const noexcept { return vars_; }
  const std::vector<int>& domains() const noexcept { return domains_; }
  std::vector<double>& table() noexcept { return p_; }
  const std::vector<double>& table() const noexcept { return p_; }

  std::size_t position(const std::string& var) const {
    auto it = std::find(vars_.begin(), vars_.end(), var);
    if (it == vars_.end()) throw ContractError("distribution has no variable '" + var + "'");
    return static_cast<std::size_t>(it - vars_.begin());
  }
  bool has(const std::string& var) const { return std::find(vars_.begin(), vars_.end(), var) != vars_.end(); }
  int domain(const std::string& var) const { return domains_[position(var)]; }

  std::size_t index(std::span<const int> values) const {
    std::size_t idx = 0;
    for (std::size_t i = 0; i < vars_.size(); ++i) idx = idx * static_cast<std::size_t>(domains_[i]) + static_cast<std::size_t>(values[i]);
    return idx;
  }
  std::vector<int> values_at(std::size_t idx) const {
    std::vector<int> v(vars_.size());
    for (std::size_t i = vars_.size(); i-- > 0;) {
      v[i] = static_cast<int>(idx % static_cast<std::size_t>(domains_[i]));
      idx /= static_cast<std::size_t>(domains_[i]);
    }
    return v;
  }

  double total() const { return std::accumulate(p_.begin(), p_.end(), 0.0); }

  /// Marginal over `keep`, in the order given.
  Distribution marginal(const std::vector<std::string>& keep) const {
    std::vector<int> doms;
    std::vector<std::size_t> pos;
    for (const auto& k : keep) {
      pos.push_back(position(k));
      doms.push_back(domains_[pos.back()]);
    }
    Distribution out(keep, doms);
    std::vector<int> sub(keep.size());
    for (std::size_t idx = 0; idx < p_.size(); ++idx) {
      if (p_[idx] == 0.0) continue;
      const auto v = values_at(idx);
      for (std::size_t i = 0; i < pos.size(); ++i) sub[i] = v[pos[i]];
      out.p_[out.index(sub)] += p_[idx];
    }
    return out;
  }

  /// Probability of a partial assignment.
  double prob(const Assignment& event) const {
    std::vector<std::pair<std::size_t, int>> cond;
    for (const auto& [k, v] : event) cond.emplace_back(position(k), v);
    double s = 0.0;
    for (std::size_t idx = 0; idx < p_.size(); ++idx) {
      if (p_[idx] == 0.0) continue;
      const auto v = values_at(idx);
      bool ok = true;
      for (auto [i, val] : cond) ok = ok && v[i] == val;
      if (ok) s += p_[idx];
    }
    return s;
  }

 private:
  std::vector<std::string> vars_;
  std::vector<int> domains_;
  std::vector<double> p_;
};

/// P(row variable = r, column variable = c) style table; used for
/// P(Y = y | do(X = x)) indexed [x][y].
struct ConditionalTable {
  int rows = 0;
  int cols = 0;
  std::vector<double> p;

  ConditionalTable() = default;
  ConditionalTable(int r, int c) : rows(r), cols(c), p(static_cast<std::size_t>(r * c), 0.0) {}
  double& at(int r, int c) { return p[static_cast<std::size_t>(r * cols + c)]; }
  double at(int r, int c) const { return p[static_cast<std::size_t>(r * cols + c)]; }
};

struct ExogenousVar {
  std::string name;
  std::vector<double> probs;
};

/// Endogenous variable with a tabulated structural function. The table is
/// indexed by (endogenous parent values..., exogenous parent values...) in
/// mixed radix order, last input fastest.
struct EndogenousVar {
  std::string name;
  int domain = 2;
  std::vector<std::size_t> parents;    // endogenous indices
  std::vector<std::size_t> exogenous;  // exogenous indices
  std::vector<int> table;
};

/// Finite structural causal model with explicit exogenous noise.
class DiscreteSCM {
 public:
  std::size_t add_exogenous(std::string name, std::vector<double> probs) {
    require_new_name(name);
    if (probs.empty()) throw ContractError("exogenous '" + name + "' has an empty domain");
    exo_.push_back({std::move(name), std::move(probs)});
    return exo_.size() - 1;
  }

  std::size_t add_endogenous(std::string name, int domain, const std::vector<std::string>& parents,
                             const std::vector<std::string>& exogenous, std::vector<int> table) {
    require_new_name(name);
    if (domain < 1) throw ContractError("variable '" + name + "' needs a positive domain");
    EndogenousVar v;
    v.name = std::move(name);
    v.domain = domain;
    for (const auto& p : parents) v.parents.push_back(endogenous_index(p));
    for (const auto& u : exogenous) v.exogenous.push_back(exogenous_index(u));
    v.table = std::move(table);
    validate_function(v);
    endo_.push_back(std::move(v));
    return endo_.size() - 1;
  }

  // Structural function given as a callable over (parent values, exogenous values).
  template <class Fn>
  std::size_t add_endogenous_fn(std::string name, int domain, const std::vector<std::string>& parents,
                                const std::vector<std::string>& exogenous, Fn&& fn) {
    std::vector<int> radix;
    for (const auto& p : parents) radix.push_back(endo_.at(endogenous_index(p)).domain);
    for (const auto& u : exogenous) radix.push_back(static_cast<int>(exo_.at(exogenous_index(u)).probs.size()));
    std::size_t n = 1;
    for (int r : radix) n *= static_cast<std::size_t>(r);
    std::vector<int> table(n);
    std::vector<int> in(radix.size(), 0);
    for (std::size_t idx = 0; idx < n; ++idx) {
      std::size_t rem = idx;
      for (std::size_t i = radix.size(); i-- > 0;) {
        in[i] = static_cast<int>(rem % static_cast<std::size_t>(radix[i]));
        rem /= static_cast<std::size_t>(radix[i]);
      }
      std::vector<int> pa(in.begin(), in.begin() + static_cast<std::ptrdiff_t>(parents.size()));
      std::vector<int> ex(in.begin() + static_cast<std::ptrdiff_t>(parents.size()), in.end());
      table[idx] = fn(pa, ex);
    }
    return add_endogenous(std::move(name), domain, parents, exogenous, std::move(table));
  }

  const std::vector<ExogenousVar>& exogenous() const noexcept { return exo_; }
  const std::vector<EndogenousVar>& endogenous() const noexcept { return endo_; }

  std::size_t endogenous_index(const std::string& name) const {
    for (std::size_t i = 0; i < endo_.size(); ++i)
      if (endo_[i].name == name) return i;
    throw ContractError("unknown endogenous variable '" + name + "'");
  }
  std::size_t exogenous_index(const std::string& name) const {
    for (std::size_t i = 0; i < exo_.size(); ++i)
      if (exo_[i].name == name) return i;
    throw ContractError("unknown exogenous variable '" + name + "'");
  }

  std::vector<std::string> endogenous_names() const {
    std::vector<std::string> n;
    for (const auto& v : endo_) n.push_back(v.name);
    return n;
  }
  std::vector<int> endogenous_domains() const {
    std::vector<int> d;
    for (const auto& v : endo_) d.push_back(v.domain);
    return d;
  }

  std::size_t exogenous_configurations() const {
    std::size_t n = 1;
    for (const auto& u : exo_) n *= u.probs.size();
    return n;
  }

  /// Decodes configuration `idx` into per-exogenous values and returns its probability.
  double exogenous_config(std::size_t idx, std::vector<int>& values) const {
    values.resize(exo_.size());
    double p = 1.0;
    for (std::size_t i = exo_.size(); i-- > 0;) {
      const std::size_t k = exo_[i].probs.size();
      values[i] = static_cast<int>(idx % k);
      idx /= k;
      p *= exo_[i].probs[static_cast<std::size_t>(values[i])];
    }
    return p;
  }

  /// Endogenous values for one exogenous configuration. Variables are added
  /// parents-first, so insertion order is a topological order.
  std::vector<int> evaluate(std::span<const int> exo_values, const std::vector<std::pair<std::size_t, int>>& fixed = {}) const {
    std::vector<int> val(endo_.size(), 0);
    for (std::size_t i = 0; i < endo_.size(); ++i) {
      auto it = std::find_if(fixed.begin(), fixed.end(), [i](const auto& f) { return f.first == i; });
      if (it != fixed.end()) {
        val[i] = it->second;
        continue;
      }
      const auto& v = endo_[i];
      std::size_t idx = 0;
      for (auto p : v.parents) idx = idx * static_cast<std::size_t>(endo_[p].domain) + static_cast<std::size_t>(val[p]);
      for (auto u : v.exogenous) idx = idx * exo_[u].probs.size() + static_cast<std::size_t>(exo_values[u]);
      val[i] = v.table[idx];
    }
    return val;
  }

  /// Resolves an intervention to (index, value) pairs, checking names and domains.
  std::vector<std::pair<std::size_t, int>> resolve(const Assignment& a) const {
    std::vector<std::pair<std::size_t, int>> out;
    for (const auto& [name, value] : a) {
      const std::size_t i = endogenous_index(name);
      if (value < 0 || value >= endo_[i].domain)
        throw ContractError("value " + std::to_string(value) + " outside the domain of '" + name + "'");
      out.emplace_back(i, value);
    }
    return out;
  }

  void validate() const {
    for (const auto& u : exo_) {
      double s = 0.0;
      for (double p : u.probs) {
        if (p < 0.0) throw ContractError("exogenous '" + u.name + "' has a negative probability");
        s += p;
      }
      if (std::abs(s - 1.0) > 1e-12) throw ContractError("exogenous '" + u.name + "' probabilities do not sum to 1");
    }
    for (const auto& v : endo_) validate_function(v);
  }

 private:
  void require_new_name(const std::string& name) const {
    for (const auto& u : exo_)
      if (u.name == name) throw ContractError("duplicate variable name '" + name + "'");
    for (const auto& v : endo_)
      if (v.name == name) throw ContractError("duplicate variable name '" + name + "'");
  }

  void validate_function(const EndogenousVar& v) const {
    std::size_t n = 1;
    for (auto p : v.parents) n *= static_cast<std::size_t>(endo_[p].domain);
    for (auto u : v.exogenous) n *= exo_[u].probs.size();
    if (v.table.size() != n)
      throw ContractError("structural function of '" + v.name + "' has " + std::to_string(v.table.size()) +
                          " entries, expected " + std::to_string(n));
    for (int out : v.table)
      if (out < 0 || out >= v.domain) throw ContractError("structural function of '" + v.name + "' leaves its domain");
  }

  std::vector<ExogenousVar> exo_;
  std::vector<EndogenousVar> endo_;
};

/// Exact distribution of the endogenous variables in the model mutilated by
/// `assignments`, by enumerating every exogenous configuration.
inline Distribution intervene(const DiscreteSCM& scm, const Assignment& assignments) {
  const auto fixed = scm.resolve(assignments);
  Distribution d(scm.endogenous_names(), scm.endogenous_domains());
  std::vector<int> u;
  const std::size_t n = scm.exogenous_configurations();
  for (std::size_t idx = 0; idx < n; ++idx) {
    const double p = scm.exogenous_config(idx, u);
    const auto vals = scm.evaluate(u, fixed);
    d.table()[d.index(vals)] += p;
  }
  return d;
}

inline Distribution observational_joint(const DiscreteSCM& scm) { return intervene(scm, {}); }

/// P(outcome = y | do(treatment = x)) for every x, by intervention.
inline ConditionalTable interventional_table(const DiscreteSCM& scm, const std::string& treatment, const std::string& outcome) {
  const auto& X = scm.endogenous().at(scm.endogenous_index(treatment));
  const auto& Y = scm.endogenous().at(scm.endogenous_index(outcome));
  ConditionalTable t(X.domain, Y.domain);
  for (int x = 0; x < X.domain; ++x) {
    const auto py = intervene(scm, {{treatment, x}}).marginal({outcome});
    for (int y = 0; y < Y.domain; ++y) t.at(x, y) = py.table()[static_cast<std::size_t>(y)];
  }
  return t;
}

/// P(outcome = y | treatment = x) from a joint.
inline ConditionalTable conditional_table(const Distribution& joint, const std::string& treatment, const std::string& outcome) {
  const auto pxy = joint.marginal({treatment, outcome});
  const int nx = joint.domain(treatment), ny = joint.domain(outcome);
  ConditionalTable t(nx, ny);
  for (int x = 0; x < nx; ++x) {
    double px = 0.0;
    for (int y = 0; y < ny; ++y) px += pxy.table()[static_cast<std::size_t>(x * ny + y)];
    if (px <= 0.0) throw PositivityError("P(" + treatment + "=" + std::to_string(x) + ") is zero");
    for (int y = 0; y < ny; ++y) t.at(x, y) = pxy.table()[static_cast<std::size_t>(x * ny + y)] / px;
  }
  return t;
}

/// sum_z P(Z=z) P(Y | X, Z=z), evaluated from the observational joint.
inline ConditionalTable backdoor_adjust(const Distribution& joint, const std::string& treatment = "X",
                                        const std::string& outcome = "Y", const std::string& confounder = "Z") {
  const auto pxzy = joint.marginal({treatment, confounder, outcome});
  const int nx = joint.domain(treatment), nz = joint.domain(confounder), ny = joint.domain(outcome);
  const auto& t3 = pxzy.table();
  auto at = [&](int x, int z, int y) { return t3[static_cast<std::size_t>((x * nz + z) * ny + y)]; };
  std::vector<double> pz(static_cast<std::size_t>(nz), 0.0);
  for (int x = 0; x < nx; ++x)
    for (int z = 0; z < nz; ++z)
      for (int y = 0; y < ny; ++y) pz[static_cast<std::size_t>(z)] += at(x, z, y);
  ConditionalTable out(nx, ny);
  for (int x = 0; x < nx; ++x) {
    for (int z = 0; z < nz; ++z) {
      if (pz[static_cast<std::size_t>(z)] == 0.0) continue;
      double pxz = 0.0;
      for (int y = 0; y < ny; ++y) pxz += at(x, z, y);
      if (pxz <= 0.0)
        throw PositivityError("back-door adjustment: P(" + treatment + "=" + std::to_string(x) + ", " + confounder + "=" +
                              std::to_string(z) + ") is zero");
      for (int y = 0; y < ny; ++y) out.at(x, y) += pz[static_cast<std::size_t>(z)] * at(x, z, y) / pxz;
    }
  }
  return out;
}

/// sum_m P(M=m | X) sum_x' P(X=x') P(Y | X=x', M=m), from the observational joint.
inline ConditionalTable frontdoor_adjust(const Distribution& joint, const std::string& treatment = "X",
                                         const std::string& outcome = "Y", const std::string& mediator = "M") {
  const auto pxmy = joint.marginal({treatment, mediator, outcome});
  const int nx = joint.domain(treatment), nm = joint.domain(mediator), ny = joint.domain(outcome);
  const auto& t3 = pxmy.table();
  auto at = [&](int x, int m, int y) { return t3[static_cast<std::size_t>((x * nm + m) * ny + y)]; };
  std::vector<double> px(static_cast<std::size_t>(nx), 0.0), pxm(static_cast<std::size_t>(nx * nm), 0.0);
  for (int x = 0; x < nx; ++x)
    for (int m = 0; m < nm; ++m)
      for (int y = 0; y < ny; ++y) {
        px[static_cast<std::size_t>(x)] += at(x, m, y);
        pxm[static_cast<std::size_t>(x * nm + m)] += at(x, m, y);
      }
  // inner[m][y] = sum_x' P(x') P(y | x', m), needed only where P(m | x) > 0 for some x.
  std::vector<double> inner(static_cast<std::size_t>(nm * ny), 0.0);
  for (int m = 0; m < nm; ++m) {
    bool needed = false;
    for (int x = 0; x < nx; ++x) needed = needed || pxm[static_cast<std::size_t>(x * nm + m)] > 0.0;
    if (!needed) continue;
    for (int xp = 0; xp < nx; ++xp) {
      if (px[static_cast<std::size_t>(xp)] == 0.0) continue;
      const double c = pxm[static_cast<std::size_t>(xp * nm + m)];
      if (c <= 0.0)
        throw PositivityError("front-door adjustment: P(" + treatment + "=" + std::to_string(xp) + ", " + mediator + "=" +
                              std::to_string(m) + ") is zero");
      for (int y = 0; y < ny; ++y)
        inner[static_cast<std::size_t>(m * ny + y)] += px[static_cast<std::size_t>(xp)] * at(xp, m, y) / c;
    }
  }
  ConditionalTable out(nx, ny);
  for (int x = 0; x < nx; ++x) {
    const double p = px[static_cast<std::size_t>(x)];
    if (p <= 0.0) throw PositivityError("front-door adjustment: P(" + treatment + "=" + std::to_string(x) + ") is zero");
    for (int m = 0; m < nm; ++m) {
      const double pm_x = pxm[static_cast<std::size_t>(x * nm + m)] / p;
      if (pm_x == 0.0) continue;
      for (int y = 0; y < ny; ++y) out.at(x, y) += pm_x * inner[static_cast<std::size_t>(m * ny + y)];
    }
  }
  return out;
}

/// Probability that switching to `regime_b` produces outcome = y, given that
/// under `regime_a` the outcome was not y. Evaluated by abduction (posterior
/// over the shared exogenous noise given the evidence), action and prediction.
inline double prob_sufficiency(const DiscreteSCM& scm, const Assignment& regime_a, const Assignment& regime_b,
                               const std::string& outcome, int y) {
  const std::size_t yi = scm.endogenous_index(outcome);
  if (y < 0 || y >= scm.endogenous()[yi].domain) throw ContractError("outcome value outside its domain");
  const auto fa = scm.resolve(regime_a);
  const auto fb = scm.resolve(regime_b);
  double evidence = 0.0, joint = 0.0;
  std::vector<int> u;
  const std::size_t n = scm.exogenous_configurations();
  for (std::size_t idx = 0; idx < n; ++idx) {
    const double p = scm.exogenous_config(idx, u);
    if (scm.evaluate(u, fa)[yi] == y) continue;
    evidence += p;
    if (scm.evaluate(u, fb)[yi] == y) joint += p;
  }
  if (evidence <= 0.0)
    throw PositivityError("prob_sufficiency: evidence " + outcome + "!=" + std::to_string(y) +
                          " under the first regime has probability zero");
  return joint / evidence;
}

/// Twin-network form of the same sufficiency quantity: builds one model
/// holding an "_a" copy and a "_b" copy of every endogenous variable over
/// the shared exogenous noise, then conditions its observational joint.
inline DiscreteSCM twin_network(const DiscreteSCM& scm, const Assignment& regime_a, const Assignment& regime_b) {
  DiscreteSCM twin;
  for (const auto& u : scm.exogenous()) twin.add_exogenous(u.name, u.probs);
  for (const auto& [suffix, regime] : {std::pair{std::string("_a"), &regime_a}, std::pair{std::string("_b"), &regime_b}}) {
    scm.resolve(*regime);
    for (const auto& v : scm.endogenous()) {
      if (auto it = regime->find(v.name); it != regime->end()) {
        twin.add_endogenous(v.name + suffix, v.domain, {}, {}, {it->second});
        continue;
      }
      std::vector<std::string> parents, exo;
      for (auto p : v.parents) parents.push_back(scm.endogenous()[p].name + suffix);
      for (auto e : v.exogenous) exo.push_back(scm.exogenous()[e].name);
      twin.add_endogenous(v.name + suffix, v.domain, parents, exo, v.table);
    }
  }
  return twin;
}

inline double twin_sufficiency(const DiscreteSCM& scm, const Assignment& regime_a, const Assignment& regime_b,
                               const std::string& outcome, int y) {
  const auto joint = observational_joint(twin_network(scm, regime_a, regime_b)).marginal({outcome + "_a", outcome + "_b"});
  const int ny = joint.domains()[0];
  double evidence = 0.0, both = 0.0;
  for (int ya = 0; ya < ny; ++ya) {
    if (ya == y) continue;
    for (int yb = 0; yb < ny; ++yb) {
      const double p = joint.table()[static_cast<std::size_t>(ya * ny + yb)];
      evidence += p;
      if (yb == y) both += p;
    }
  }
  if (evidence <= 0.0) throw PositivityError("twin_sufficiency: evidence has probability zero");
  return both / evidence;
}

struct TotalEffect {
  std::array<std::vector<double>, 3> per_graph;  // TE_i = p_i * sum_{j != i} ps[j][i]
  std::vector<double> combined;                  // sum_i TE_i
};

/// Combines per-graph interventional distributions with the sufficient-cause
/// matrix, ps[j][i] being the probability that graph j is a sufficient cause
/// of graph i. The diagonal is ignored.
inline TotalEffect combine_total_effect(const std::array<std::vector<double>, 3>& p,
                                        const std::array<std::array<double, 3>, 3>& ps) {
  const std::size_t n = p[0].size();
  for (const auto& pi : p)
    if (pi.size() != n) throw DimensionError("combine_total_effect: distributions differ in length");
  for (std::size_t j = 0; j < 3; ++j)
    for (std::size_t i = 0; i < 3; ++i)
      if (i != j && (ps[j][i] < 0.0 || ps[j][i] > 1.0)) throw ContractError("combine_total_effect: ps entries must lie in [0,1]");
  TotalEffect te;
  te.combined.assign(n, 0.0);
  for (std::size_t i = 0; i < 3; ++i) {
    double incoming = 0.0;
    for (std::size_t j = 0; j < 3; ++j)
      if (j != i) incoming += ps[j][i];
    te.per_graph[i].resize(n);
    for (std::size_t k = 0; k < n; ++k) {
      te.per_graph[i][k] = p[i][k] * incoming;
      te.combined[k] += te.per_graph[i][k];
    }
  }
  return te;
}

// ---------------------------------------------------------------------------
// Random model families used by the oracle checks.

/// Normalised uniform weights with every entry at least `floor`.
inline std::vector<double> random_probs(std::size_t k, std::mt19937_64& rng, double floor = 0.01) {
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::vector<double> r(k);
  double s = 0.0;
  for (auto& v : r) s += (v = unit(rng));
  std::vector<double> p(k);
  for (std::size_t i = 0; i < k; ++i) p[i] = floor + (1.0 - static_cast<double>(k) * floor) * r[i] / s;
  // Exact normalisation so the table sums to 1 within rounding.
  const double t = std::accumulate(p.begin(), p.end(), 0.0);
  for (auto& v : p) v /= t;
  return p;
}

namespace detail {

inline int uniform_int(std::mt19937_64& rng, int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(rng); }

// Structural function whose first `domain` exogenous values form a random
// permutation of the output domain for every parent configuration, so every
// value stays reachable with positive probability.
inline std::vector<int> covering_table(std::size_t parent_configs, int exo_size, int domain, std::mt19937_64& rng) {
  std::vector<int> table;
  table.reserve(parent_configs * static_cast<std::size_t>(exo_size));
  for (std::size_t c = 0; c < parent_configs; ++c) {
    std::vector<int> perm(static_cast<std::size_t>(domain));
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (int u = 0; u < exo_size; ++u) table.push_back(u < domain ? perm[static_cast<std::size_t>(u)] : uniform_int(rng, 0, domain - 1));
  }
  return table;
}

inline std::vector<int> random_table(std::size_t entries, int domain, std::mt19937_64& rng) {
  std::vector<int> t(entries);
  for (auto& v : t) v = uniform_int(rng, 0, domain - 1);
  return t;
}

// Covering tables are indexed (parents..., u) with u fastest, which matches
// the SCM table layout when the exogenous input is listed last.
inline std::size_t product(std::initializer_list<int> xs) {
  std::size_t n = 1;
  for (int x : xs) n *= static_cast<std::size_t>(x);
  return n;
}

}  // namespace detail

/// Z -> X, Z -> Y, X -> Y with independent noise for each variable.
inline DiscreteSCM random_backdoor_scm(std::mt19937_64& rng) {
  using detail::uniform_int;
  const int nz = uniform_int(rng, 2, 3), nx = uniform_int(rng, 2, 3), ny = uniform_int(rng, 2, 3);
  const int uz = uniform_int(rng, nz, 5), ux = uniform_int(rng, nx, 5), uy = uniform_int(rng, 2, 5);
  DiscreteSCM m;
  m.add_exogenous("U_Z", random_probs(static_cast<std::size_t>(uz), rng));
  m.add_exogenous("U_X", random_probs(static_cast<std::size_t>(ux), rng));
  m.add_exogenous("U_Y", random_probs(static_cast<std::size_t>(uy), rng));
  m.add_endogenous("Z", nz, {}, {"U_Z"}, detail::covering_table(1, uz, nz, rng));
  m.add_endogenous("X", nx, {"Z"}, {"U_X"}, detail::covering_table(static_cast<std::size_t>(nz), ux, nx, rng));
  m.add_endogenous("Y", ny, {"X", "Z"}, {"U_Y"}, detail::random_table(detail::product({nx, nz, uy}), ny, rng));
  return m;
}

/// Hidden U_C -> X and U_C -> Y, with X -> M -> Y; M shielded from U_C.
inline DiscreteSCM random_frontdoor_scm(std::mt19937_64& rng) {
  using detail::uniform_int;
  const int nx = uniform_int(rng, 2, 3), nm = uniform_int(rng, 2, 3), ny = uniform_int(rng, 2, 3);
  const int uc = uniform_int(rng, 2, 4), ux = uniform_int(rng, nx, 4), um = uniform_int(rng, nm, 4), uy = uniform_int(rng, 2, 4);
  DiscreteSCM m;
  m.add_exogenous("U_C", random_probs(static_cast<std::size_t>(uc), rng));
  m.add_exogenous("U_X", random_probs(static_cast<std::size_t>(ux), rng));
  m.add_exogenous("U_M", random_probs(static_cast<std::size_t>(um), rng));
  m.add_exogenous("U_Y", random_probs(static_cast<std::size_t>(uy), rng));
  // X reads (U_C, U_X) with U_X fastest: covering over U_X for each U_C value.
  m.add_endogenous("X", nx, {}, {"U_C", "U_X"}, detail::covering_table(static_cast<std::size_t>(uc), ux, nx, rng));
  m.add_endogenous("M", nm, {"X"}, {"U_M"}, detail::covering_table(static_cast<std::size_t>(nx), um, nm, rng));
  m.add_endogenous("Y", ny, {"M"}, {"U_C", "U_Y"}, detail::random_table(detail::product({nm, uc, uy}), ny, rng));
  return m;
}

/// X -> M -> Y and X -> Y with independent noise: no back-door path.
inline DiscreteSCM random_no_confounder_scm(std::mt19937_64& rng) {
  using detail::uniform_int;
  const int nx = uniform_int(rng, 2, 3), nm = uniform_int(rng, 2, 3), ny = uniform_int(rng, 2, 3);
  const int ux = uniform_int(rng, nx, 5), um = uniform_int(rng, 2, 5), uy = uniform_int(rng, 2, 5);
  DiscreteSCM m;
  m.add_exogenous("U_X", random_probs(static_cast<std::size_t>(ux), rng));
  m.add_exogenous("U_M", random_probs(static_cast<std::size_t>(um), rng));
  m.add_exogenous("U_Y", random_probs(static_cast<std::size_t>(uy), rng));
  m.add_endogenous("X", nx, {}, {"U_X"}, detail::covering_table(1, ux, nx, rng));
  m.add_endogenous("M", nm, {"X"}, {"U_M"}, detail::random_table(detail::product({nx, um}), nm, rng));
  m.add_endogenous("Y", ny, {"X", "M"}, {"U_Y"}, detail::random_table(detail::product({nx, nm, uy}), ny, rng));
  return m;
}

/// Binary confounded model (Z -> X, Z -> Y, X -> Y) for sufficiency checks.
inline DiscreteSCM random_binary_scm(std::mt19937_64& rng) {
  using detail::uniform_int;
  const int uz = uniform_int(rng, 2, 4), ux = uniform_int(rng, 2, 4), uy = uniform_int(rng, 2, 5);
  DiscreteSCM m;
  m.add_exogenous("U_Z", random_probs(static_cast<std::size_t>(uz), rng));
  m.add_exogenous("U_X", random_probs(static_cast<std::size_t>(ux), rng));
  m.add_exogenous("U_Y", random_probs(static_cast<std::size_t>(uy), rng));
  m.add_endogenous("Z", 2, {}, {"U_Z"}, detail::covering_table(1, uz, 2, rng));
  m.add_endogenous("X", 2, {"Z"}, {"U_X"}, detail::covering_table(2, ux, 2, rng));
  m.add_endogenous("Y", 2, {"X", "Z"}, {"U_Y"}, detail::random_table(detail::product({2, 2, uy}), 2, rng));
  return m;
}

}  // namespace cgr::scm
