#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <functional>
#include <numeric>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "cgr/io.hpp"
#include "cgr/scm.hpp"

namespace cgr::harness {

inline std::string fmt_double(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

/// Training configuration. Read from a flat JSON object whose keys are
/// exactly the member names below; unknown keys are rejected.
struct TrainConfig {
  std::size_t layers = 2;
  std::size_t width = 64;
  std::size_t out_width = 64;
  std::size_t hidden = 64;
  std::size_t d_in = 16;
  std::size_t dict_size = 32;
  std::size_t classes = 4;
  std::size_t n_x = 6;
  std::size_t n_z = 4;
  std::size_t batch_size = 32;
  std::size_t epochs = 15;
  double lr = 1e-4;
  std::vector<std::size_t> lr_milestones{10, 12};
  double lr_decay = 0.5;
  std::size_t warmup_epochs = 3;
  double tau_min = 0.05;
  double tau_fraction = 0.8;
  std::uint64_t seed = 0;
  std::string train_path;
  std::string test_path;
  std::string dict_path;
  std::string checkpoint_path;
  std::size_t checkpoint_every = 1;  // epochs; 0 disables periodic saves
  std::string variant = "full";

  ModelConfig model_config() const {
    ModelConfig c;
    c.d_in = d_in;
    c.width = width;
    c.out_width = out_width;
    c.hidden = hidden;
    c.layers = layers;
    c.classes = classes;
    return c;
  }

  void validate() const {
    if (!layers || !width || !out_width || !hidden || !d_in || !dict_size || classes < 2 || !n_x || !n_z ||
        !batch_size || !epochs)
      throw ContractError("config: sizes must be positive and classes >= 2");
    if (!(lr > 0.0)) throw ContractError("config: lr must be positive");
    if (!(lr_decay > 0.0)) throw ContractError("config: lr_decay must be positive");
    if (!(tau_min > 0.0 && tau_min <= 1.0)) throw ContractError("config: tau_min must lie in (0, 1]");
    if (!(tau_fraction > 0.0 && tau_fraction <= 1.0)) throw ContractError("config: tau_fraction must lie in (0, 1]");
    Variant::parse(variant);
  }

  nlohmann::json to_json() const {
    return {{"layers", layers},         {"width", width},
            {"out_width", out_width},   {"hidden", hidden},
            {"d_in", d_in},             {"dict_size", dict_size},
            {"classes", classes},       {"n_x", n_x},
            {"n_z", n_z},               {"batch_size", batch_size},
            {"epochs", epochs},         {"lr", lr},
            {"lr_milestones", lr_milestones}, {"lr_decay", lr_decay},
            {"warmup_epochs", warmup_epochs}, {"tau_min", tau_min},
            {"tau_fraction", tau_fraction},   {"seed", seed},
            {"train_path", train_path}, {"test_path", test_path},
            {"dict_path", dict_path},   {"checkpoint_path", checkpoint_path},
            {"checkpoint_every", checkpoint_every}, {"variant", variant}};
  }

  /// Applies the keys present in `j` on top of the current values.
  void merge(const nlohmann::json& j) {
    if (!j.is_object()) throw ContractError("config: expected a JSON object");
    const auto known = to_json();
    for (const auto& [k, v] : j.items())
      if (!known.contains(k)) throw ContractError("config: unknown key '" + k + "'");
    try {
      auto set = [&](const char* k, auto& field) {
        if (j.contains(k)) field = j.at(k).get<std::decay_t<decltype(field)>>();
      };
      set("layers", layers);
      set("width", width);
      set("out_width", out_width);
      set("hidden", hidden);
      set("d_in", d_in);
      set("dict_size", dict_size);
      set("classes", classes);
      set("n_x", n_x);
      set("n_z", n_z);
      set("batch_size", batch_size);
      set("epochs", epochs);
      set("lr", lr);
      set("lr_milestones", lr_milestones);
      set("lr_decay", lr_decay);
      set("warmup_epochs", warmup_epochs);
      set("tau_min", tau_min);
      set("tau_fraction", tau_fraction);
      set("seed", seed);
      set("train_path", train_path);
      set("test_path", test_path);
      set("dict_path", dict_path);
      set("checkpoint_path", checkpoint_path);
      set("checkpoint_every", checkpoint_every);
      set("variant", variant);
    } catch (const nlohmann::json::exception& e) {
      throw ContractError(std::string("config: ") + e.what());
    }
  }

  static TrainConfig load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw FormatError("cannot open config '" + path + "'");
    TrainConfig c;
    try {
      c.merge(nlohmann::json::parse(in));
    } catch (const nlohmann::json::parse_error& e) {
      throw FormatError("config '" + path + "': " + e.what());
    }
    return c;
  }
};

/// Learning rate for a 0-based epoch: linear warm-up lr*(e+1)/warmup over
/// the first warm-up epochs, then lr * decay^(number of milestones <= e).
inline double learning_rate(const TrainConfig& c, std::size_t epoch) {
  double lr = c.lr;
  if (epoch < c.warmup_epochs) lr *= static_cast<double>(epoch + 1) / static_cast<double>(c.warmup_epochs);
  for (auto m : c.lr_milestones)
    if (epoch >= m) lr *= c.lr_decay;
  return lr;
}

inline std::size_t batches_per_epoch(const TrainConfig& c, std::size_t n) { return (n + c.batch_size - 1) / c.batch_size; }

inline TauSchedule tau_schedule(const TrainConfig& c, std::size_t train_size) {
  return TauSchedule{c.tau_min, c.tau_fraction, static_cast<std::int64_t>(c.epochs * batches_per_epoch(c, train_size))};
}

// Shuffled example order for one epoch, a pure function of (seed, epoch).
inline std::vector<std::size_t> epoch_order(std::uint64_t seed, std::size_t epoch, std::size_t n) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(seed * 0x9E3779B97F4A7C15ULL + epoch + 1);
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

inline void check_examples(const std::vector<Example>& data, const ModelConfig& c, const std::string& what) {
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto& ex = data[i];
    if (ex.x.empty() || ex.x.cols() != c.d_in)
      throw DimensionError(what + " record " + std::to_string(i) + ": x width does not match d_in=" + std::to_string(c.d_in));
    if (ex.z.empty()) throw ContractError(what + " record " + std::to_string(i) + ": z is empty");
    if (ex.z.cols() != c.d_in)
      throw DimensionError(what + " record " + std::to_string(i) + ": z width does not match d_in=" + std::to_string(c.d_in));
    if (ex.label < 0 || static_cast<std::size_t>(ex.label) >= c.classes)
      throw ContractError(what + " record " + std::to_string(i) + ": label " + std::to_string(ex.label) +
                          " outside the configured " + std::to_string(c.classes) + " classes");
  }
}

/// All x tokens of `data` stacked row-wise, the input to dictionary building.
inline Tensor token_features(const std::vector<Example>& data) {
  if (data.empty()) throw ContractError("dictionary: no training records");
  std::size_t rows = 0;
  const std::size_t d = data.front().x.cols();
  for (const auto& ex : data) {
    if (ex.x.cols() != d) throw DimensionError("dictionary: records have different token widths");
    rows += ex.x.rows();
  }
  Tensor out = Tensor::matrix(rows, d);
  auto it = out.storage().begin();
  for (const auto& ex : data) it = std::copy(ex.x.storage().begin(), ex.x.storage().end(), it);
  return out;
}

struct EpochLog {
  std::size_t epoch = 0;
  double lr = 0.0;
  double tau = 0.0;
  double mean_loss = 0.0;
  std::int64_t step = 0;
};

struct TrainResult {
  std::vector<double> step_losses;  // in step order, this invocation only
  std::vector<EpochLog> epochs;
};

inline io::TrainingState fresh_state(const TrainConfig& c) {
  io::TrainingState st{CGRModel(c.model_config(), c.seed, Variant::parse(c.variant)), AdamState{}};
  st.adam.lr = c.lr;
  st.adam.init(st.model.parameters());
  st.data_seed = c.seed;
  return st;
}

/// One optimizer step on `batch`; returns the batch loss.
inline double train_step(io::TrainingState& st, std::span<const Example> batch, const GlobalDictionary& dict,
                         const TauSchedule& tau) {
  st.model.set_tau(tau(st.step));
  Tape tape;
  Var logits = batch_logits(st.model, tape, batch, dict);
  std::vector<int> labels;
  for (const auto& ex : batch) labels.push_back(ex.label);
  Var loss = cross_entropy(logits, labels);
  st.model.parameters().zero_grad();
  tape.backward(loss);
  adam_step(st.model.parameters(), st.adam);
  ++st.step;
  return loss.value().item();
}

/// Runs epochs [st.epoch, c.epochs). Deterministic in (config, data, state).
/// `on_epoch` runs after every epoch, e.g. for checkpointing.
inline TrainResult train(io::TrainingState& st, const TrainConfig& c, const std::vector<Example>& data,
                         const GlobalDictionary& dict,
                         const std::function<void(const io::TrainingState&, const EpochLog&)>& on_epoch = {}) {
  if (data.empty()) throw ContractError("train: empty training set");
  check_examples(data, st.model.config(), "train");
  const auto tau = tau_schedule(c, data.size());
  TrainResult res;
  std::vector<Example> batch;
  for (std::size_t e = static_cast<std::size_t>(st.epoch); e < c.epochs; ++e) {
    st.adam.lr = learning_rate(c, e);
    const auto order = epoch_order(st.data_seed, e, data.size());
    double total = 0.0;
    std::size_t n_batches = 0;
    for (std::size_t start = 0; start < order.size(); start += c.batch_size) {
      batch.clear();
      for (std::size_t i = start; i < std::min(order.size(), start + c.batch_size); ++i) batch.push_back(data[order[i]]);
      const double loss = train_step(st, batch, dict, tau);
      res.step_losses.push_back(loss);
      total += loss;
      ++n_batches;
    }
    st.epoch = static_cast<std::int64_t>(e + 1);
    EpochLog log{e, st.adam.lr, st.model.tau(), total / static_cast<double>(n_batches), st.step};
    res.epochs.push_back(log);
    if (on_epoch) on_epoch(st, log);
  }
  return res;
}

inline std::string format_epoch_log(const EpochLog& l) {
  return "epoch " + std::to_string(l.epoch) + " step " + std::to_string(l.step) + " lr " + fmt_double(l.lr) + " tau " +
         fmt_double(l.tau) + " loss " + fmt_double(l.mean_loss);
}

// ---------------------------------------------------------------------------
// Metrics

struct Metrics {
  std::size_t classes = 0;
  std::vector<std::size_t> confusion;  // [true][predicted]
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double micro_f1 = 0.0;
  double loss = 0.0;
  std::vector<double> precision;
  std::vector<double> recall;
  std::vector<double> f1;
};

inline Metrics metrics_from_confusion(std::size_t classes, const std::vector<std::size_t>& confusion) {
  if (confusion.size() != classes * classes) throw DimensionError("confusion matrix size does not match class count");
  Metrics m;
  m.classes = classes;
  m.confusion = confusion;
  std::size_t total = 0, correct = 0, tp_sum = 0, fp_sum = 0, fn_sum = 0;
  for (std::size_t k = 0; k < classes; ++k) {
    std::size_t tp = confusion[k * classes + k], fp = 0, fn = 0;
    for (std::size_t j = 0; j < classes; ++j) {
      total += confusion[k * classes + j];
      if (j != k) {
        fp += confusion[j * classes + k];
        fn += confusion[k * classes + j];
      }
    }
    correct += tp;
    tp_sum += tp;
    fp_sum += fp;
    fn_sum += fn;
    const double p = tp + fp ? double(tp) / double(tp + fp) : 0.0;
    const double r = tp + fn ? double(tp) / double(tp + fn) : 0.0;
    m.precision.push_back(p);
    m.recall.push_back(r);
    m.f1.push_back(p + r > 0.0 ? 2.0 * p * r / (p + r) : 0.0);
  }
  m.accuracy = total ? double(correct) / double(total) : 0.0;
  m.macro_f1 = std::accumulate(m.f1.begin(), m.f1.end(), 0.0) / double(classes);
  const double denom = 2.0 * double(tp_sum) + double(fp_sum) + double(fn_sum);
  m.micro_f1 = denom > 0.0 ? 2.0 * double(tp_sum) / denom : 0.0;
  return m;
}

inline std::string format_metrics(const Metrics& m) {
  std::ostringstream os;
  os << "accuracy " << fmt_double(m.accuracy) << '\n'
     << "macro_f1 " << fmt_double(m.macro_f1) << '\n'
     << "micro_f1 " << fmt_double(m.micro_f1) << '\n'
     << "loss " << fmt_double(m.loss) << '\n'
     << "classes " << m.classes << '\n';
  for (std::size_t k = 0; k < m.classes; ++k)
    os << "precision." << k << ' ' << fmt_double(m.precision[k]) << '\n'
       << "recall." << k << ' ' << fmt_double(m.recall[k]) << '\n'
       << "f1." << k << ' ' << fmt_double(m.f1[k]) << '\n';
  for (std::size_t k = 0; k < m.classes; ++k) {
    os << "confusion." << k;
    for (std::size_t j = 0; j < m.classes; ++j) os << ' ' << m.confusion[k * m.classes + j];
    os << '\n';
  }
  return os.str();
}

/// Accuracy, F1 scores and mean cross-entropy of `model` on `data`.
inline Metrics evaluate(const CGRModel& model, const std::vector<Example>& data, const GlobalDictionary& dict,
                        std::size_t batch_size = 64) {
  if (data.empty()) throw ContractError("evaluate: empty dataset");
  check_examples(data, model.config(), "eval");
  const std::size_t c = model.config().classes;
  std::vector<std::size_t> confusion(c * c, 0);
  double loss = 0.0;
  for (std::size_t start = 0; start < data.size(); start += batch_size) {
    const std::size_t n = std::min(batch_size, data.size() - start);
    std::span<const Example> batch(data.data() + start, n);
    Tape tape;
    Var logits = batch_logits(model, tape, batch, dict);
    std::vector<int> labels;
    for (const auto& ex : batch) labels.push_back(ex.label);
    loss += cross_entropy(logits, labels).value().item() * static_cast<double>(n);
    for (std::size_t i = 0; i < n; ++i) {
      auto row = logits.value().row(i);
      const auto pred = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
      ++confusion[static_cast<std::size_t>(batch[i].label) * c + pred];
    }
  }
  Metrics m = metrics_from_confusion(c, confusion);
  m.loss = loss / static_cast<double>(data.size());
  return m;
}

// ---------------------------------------------------------------------------
// Routing inspection

/// Per-example routing weights (block weights per layer, argmax block,
/// layer weights) followed by an argmax histogram per layer.
inline std::string routing_report(const CGRModel& model, const std::vector<Example>& data, const GlobalDictionary& dict) {
  std::ostringstream os;
  const std::size_t L = model.config().layers;
  std::vector<std::array<std::size_t, kBlocksPerLayer>> hist(L, {0, 0, 0});
  os << "variant " << model.variant().str() << '\n' << "tau " << fmt_double(model.tau()) << '\n';
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto pred = model_forward(model, data[i], dict, i);
    const auto& tr = pred.trace;
    for (std::size_t l = 0; l < L; ++l) {
      const auto& lt = tr.layers[l];
      os << "example " << i << " layer " << l << " weights";
      for (double w : lt.block_weights) os << ' ' << fmt_double(w);
      os << " argmax " << block_name(lt.argmax) << '\n';
      ++hist[l][lt.argmax];
    }
    os << "example " << i << " layer_weights";
    for (double w : tr.layer_weights) os << ' ' << fmt_double(w);
    os << '\n';
  }
  for (std::size_t l = 0; l < L; ++l) {
    os << "histogram layer " << l;
    for (std::size_t b = 0; b < kBlocksPerLayer; ++b) os << ' ' << block_name(b) << ' ' << hist[l][b];
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// Oracle check over random structural causal models

struct FamilyReport {
  std::string family;
  std::size_t trials = 0;
  std::size_t failures = 0;
  double max_deviation = 0.0;
  double tolerance = 0.0;
  std::vector<std::uint64_t> failing_seeds;
};

inline double max_abs_diff(const scm::ConditionalTable& a, const scm::ConditionalTable& b) {
  if (a.rows != b.rows || a.cols != b.cols) return std::numeric_limits<double>::infinity();
  double m = 0.0;
  for (std::size_t i = 0; i < a.p.size(); ++i) m = std::max(m, std::abs(a.p[i] - b.p[i]));
  return m;
}

inline std::uint64_t trial_seed(std::uint64_t seed, std::size_t family, std::size_t trial) {
  return seed * 1000003ULL + family * 100000ULL + trial;
}

/// Runs `trials` random models for each family: back-door adjustment,
/// front-door adjustment, the no-confounder identity, and probability of
/// sufficiency against its twin-network form.
inline std::vector<FamilyReport> oracle_check(std::uint64_t seed, std::size_t trials) {
  if (trials == 0) throw ContractError("oracle-check: trials must be at least 1");
  std::vector<FamilyReport> out;
  auto run = [&](std::size_t fam, const std::string& name, double tol, auto&& deviation) {
    FamilyReport r{name, trials, 0, 0.0, tol, {}};
    for (std::size_t t = 0; t < trials; ++t) {
      const auto s = trial_seed(seed, fam, t);
      std::mt19937_64 rng(s);
      const double dev = deviation(rng);
      r.max_deviation = std::max(r.max_deviation, dev);
      if (!(dev < tol)) {
        ++r.failures;
        r.failing_seeds.push_back(s);
      }
    }
    out.push_back(r);
  };
  run(0, "backdoor", 1e-10, [](std::mt19937_64& rng) {
    const auto m = scm::random_backdoor_scm(rng);
    return max_abs_diff(scm::backdoor_adjust(scm::observational_joint(m)), scm::interventional_table(m, "X", "Y"));
  });
  run(1, "frontdoor", 1e-10, [](std::mt19937_64& rng) {
    const auto m = scm::random_frontdoor_scm(rng);
    return max_abs_diff(scm::frontdoor_adjust(scm::observational_joint(m)), scm::interventional_table(m, "X", "Y"));
  });
  run(2, "no_confounder", 1e-12, [](std::mt19937_64& rng) {
    const auto m = scm::random_no_confounder_scm(rng);
    return max_abs_diff(scm::conditional_table(scm::observational_joint(m), "X", "Y"), scm::interventional_table(m, "X", "Y"));
  });
  run(3, "sufficiency", 1e-12, [](std::mt19937_64& rng) {
    // Redraw until the evidence event has positive probability.
    for (;;) {
      const auto m = scm::random_binary_scm(rng);
      try {
        const double a = scm::prob_sufficiency(m, {{"X", 0}}, {{"X", 1}}, "Y", 1);
        const double b = scm::twin_sufficiency(m, {{"X", 0}}, {{"X", 1}}, "Y", 1);
        return std::abs(a - b);
      } catch (const PositivityError&) {
      }
    }
  });
  return out;
}

inline const std::vector<std::string>& oracle_families() {
  static const std::vector<std::string> names{"backdoor", "frontdoor", "no_confounder", "sufficiency"};
  return names;
}

/// Checks one user-supplied model against a single family's identity. The
/// model must use the variable names the family expects: X and Y, plus Z
/// for back-door and M for front-door; sufficiency needs binary X and Y.
inline FamilyReport check_scm(const scm::DiscreteSCM& m, const std::string& family) {
  FamilyReport r{family, 1, 0, 0.0, 0.0, {}};
  if (family == "backdoor") {
    r.tolerance = 1e-10;
    r.max_deviation = max_abs_diff(scm::backdoor_adjust(scm::observational_joint(m)), scm::interventional_table(m, "X", "Y"));
  } else if (family == "frontdoor") {
    r.tolerance = 1e-10;
    r.max_deviation = max_abs_diff(scm::frontdoor_adjust(scm::observational_joint(m)), scm::interventional_table(m, "X", "Y"));
  } else if (family == "no_confounder") {
    r.tolerance = 1e-12;
    r.max_deviation =
        max_abs_diff(scm::conditional_table(scm::observational_joint(m), "X", "Y"), scm::interventional_table(m, "X", "Y"));
  } else if (family == "sufficiency") {
    r.tolerance = 1e-12;
    r.max_deviation = std::abs(scm::prob_sufficiency(m, {{"X", 0}}, {{"X", 1}}, "Y", 1) -
                               scm::twin_sufficiency(m, {{"X", 0}}, {{"X", 1}}, "Y", 1));
  } else {
    throw ContractError("unknown oracle family '" + family + "'");
  }
  if (!(r.max_deviation < r.tolerance)) r.failures = 1;
  return r;
}

inline std::string format_oracle_report(const std::vector<FamilyReport>& reports) {
  std::ostringstream os;
  for (const auto& r : reports) {
    os << "family " << r.family << " trials " << r.trials << " failures " << r.failures << " max_deviation "
       << fmt_double(r.max_deviation) << " tolerance " << fmt_double(r.tolerance) << ' '
       << (r.failures == 0 ? "PASS" : "FAIL");
    for (auto s : r.failing_seeds) os << " seed " << s;
    os << '\n';
  }
  return os.str();
}

// ---------------------------------------------------------------------------
// SCM description files (JSON):
//   {"exogenous": [{"name": "U", "probs": [...]}, ...],
//    "endogenous": [{"name": "X", "domain": 2, "parents": [...], "exogenous": [...], "table": [...]}, ...]}
// Endogenous variables must be listed parents-first.

inline scm::DiscreteSCM read_scm(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open SCM file '" + path + "'");
  scm::DiscreteSCM m;
  try {
    const auto j = nlohmann::json::parse(in);
    for (const auto& u : j.at("exogenous")) m.add_exogenous(u.at("name").get<std::string>(), u.at("probs").get<std::vector<double>>());
    for (const auto& v : j.at("endogenous"))
      m.add_endogenous(v.at("name").get<std::string>(), v.at("domain").get<int>(),
                       v.value("parents", std::vector<std::string>{}), v.value("exogenous", std::vector<std::string>{}),
                       v.at("table").get<std::vector<int>>());
  } catch (const nlohmann::json::exception& e) {
    throw FormatError("SCM file '" + path + "': " + e.what());
  }
  m.validate();
  return m;
}

inline nlohmann::json scm_to_json(const scm::DiscreteSCM& m) {
  nlohmann::json j;
  j["exogenous"] = nlohmann::json::array();
  for (const auto& u : m.exogenous()) j["exogenous"].push_back({{"name", u.name}, {"probs", u.probs}});
  j["endogenous"] = nlohmann::json::array();
  for (const auto& v : m.endogenous()) {
    std::vector<std::string> parents, exo;
    for (auto p : v.parents) parents.push_back(m.endogenous()[p].name);
    for (auto e : v.exogenous) exo.push_back(m.exogenous()[e].name);
    j["endogenous"].push_back({{"name", v.name}, {"domain", v.domain}, {"parents", parents}, {"exogenous", exo}, {"table", v.table}});
  }
  return j;
}

}  // namespace cgr::harness
