// Command-line front end: dataset generation, dictionary building, training,
// evaluation, routing inspection and the causal oracle checks.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>
#include <json.hpp>

#include "cgr/cgr.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace cgr;

namespace {

struct Common {
  std::string out = ".";
  std::string config;
};

std::string out_path(const Common& c, const std::string& name) {
  fs::create_directories(c.out);
  return (fs::path(c.out) / name).string();
}

void write_text(const std::string& path, const std::string& text) {
  std::ofstream f(path);
  if (!f) throw FormatError("cannot open '" + path + "' for writing");
  f << text;
}

std::string flag_name(std::string key) {
  for (auto& ch : key)
    if (ch == '_') ch = '-';
  return "--" + key;
}

// Registers --<key> so that a given value lands in `overrides[key]`.
template <typename T>
void mirror(CLI::App* app, json& overrides, const std::string& key, const std::string& help) {
  app->add_option_function<T>(flag_name(key), [&overrides, key](const T& v) { overrides[key] = v; }, help);
}

void add_common(CLI::App* app, Common& c, const std::string& config_help) {
  app->add_option("--out", c.out, "Directory for all artifacts")->capture_default_str();
  app->add_option("--config", c.config, config_help);
}

// ---------------------------------------------------------------------------

struct TaskOptions {
  Common common;
  json overrides = json::object();
};

void register_task_flags(CLI::App* app, TaskOptions& o) {
  auto& j = o.overrides;
  mirror<std::string>(app, j, "regime", "no_confounder | observed_confounder | hidden_confounder_mediator");
  mirror<std::size_t>(app, j, "d_in", "Token width");
  mirror<std::size_t>(app, j, "classes", "Class count");
  mirror<std::size_t>(app, j, "n_x", "Input tokens per record");
  mirror<std::size_t>(app, j, "n_z", "Confounder tokens per record");
  mirror<std::size_t>(app, j, "train_size", "Training records");
  mirror<std::size_t>(app, j, "test_size", "Test records");
  mirror<double>(app, j, "rho", "Train-time confounding strength in [0, 1]");
  mirror<bool>(app, j, "test_shift", "Reverse the state-class association at test time");
  mirror<std::uint64_t>(app, j, "seed", "Generator seed");
  mirror<double>(app, j, "separation", "Distance between cluster centres");
  mirror<double>(app, j, "noise", "Token noise standard deviation");
  mirror<double>(app, j, "class_tokens", "Fraction of x tokens carrying the class in direct records");
  mirror<double>(app, j, "class_strength", "Class centre scale");
  mirror<double>(app, j, "tag_strength", "Pointer tag scale");
  mirror<double>(app, j, "mediator_strength", "Mediator token scale");
  mirror<double>(app, j, "share_direct", "Relative frequency of direct records");
  mirror<double>(app, j, "share_back_door", "Relative frequency of back-door records");
  mirror<double>(app, j, "share_mediator", "Relative frequency of mediator records");
}

int run_datagen(const TaskOptions& o) {
  taskgen::SyntheticTaskSpec spec;
  if (!o.common.config.empty()) spec = io::load_task_spec(o.common.config);
  io::merge_task_spec(spec, o.overrides);
  const auto ds = taskgen::generate_dataset(spec);
  io::write_dataset(out_path(o.common, "train.jsonl"), ds.train);
  io::write_dataset(out_path(o.common, "test.jsonl"), ds.test);
  write_text(out_path(o.common, "task.json"), io::task_spec_to_json(spec).dump(2) + "\n");

  auto summary = [&](const char* split, const std::vector<Example>& recs, const std::vector<int>& states,
                     const std::vector<taskgen::Mechanism>& mechs) {
    std::vector<std::size_t> counts(spec.classes, 0);
    std::array<std::size_t, 3> per_mech{};
    std::size_t agree = 0;
    for (std::size_t i = 0; i < recs.size(); ++i) {
      ++counts[static_cast<std::size_t>(recs[i].label)];
      agree += states[i] == recs[i].label;
      ++per_mech[static_cast<std::size_t>(mechs[i])];
    }
    std::cout << split << " records " << recs.size() << '\n' << split << " class_counts";
    for (auto c : counts) std::cout << ' ' << c;
    std::cout << '\n'
              << split << " state_equals_label " << harness::fmt_double(double(agree) / double(recs.size())) << '\n'
              << split << " mechanisms direct " << per_mech[0] << " back_door " << per_mech[1] << " mediator "
              << per_mech[2] << '\n';
  };
  std::cout << "regime " << taskgen::regime_name(spec.regime) << '\n';
  summary("train", ds.train, ds.train_states, ds.train_mechanisms);
  summary("test", ds.test, ds.test_states, ds.test_mechanisms);
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainOptions {
  Common common;
  json overrides = json::object();
  std::string resume;
  std::string checkpoint;
  std::string data;
  std::size_t max_iters = 100;
  std::size_t limit = 0;
};

void register_train_flags(CLI::App* app, TrainOptions& o) {
  auto& j = o.overrides;
  mirror<std::size_t>(app, j, "layers", "Causal layers L");
  mirror<std::size_t>(app, j, "width", "Attention width d");
  mirror<std::size_t>(app, j, "out_width", "Block output width d_c");
  mirror<std::size_t>(app, j, "hidden", "MLP hidden width");
  mirror<std::size_t>(app, j, "d_in", "Token width");
  mirror<std::size_t>(app, j, "dict_size", "Dictionary size K");
  mirror<std::size_t>(app, j, "classes", "Class count");
  mirror<std::size_t>(app, j, "n_x", "Input tokens per record");
  mirror<std::size_t>(app, j, "n_z", "Confounder tokens per record");
  mirror<std::size_t>(app, j, "batch_size", "Minibatch size");
  mirror<std::size_t>(app, j, "epochs", "Training epochs");
  mirror<double>(app, j, "lr", "Base learning rate");
  mirror<std::vector<std::size_t>>(app, j, "lr_milestones", "Epochs (0-based) at which the rate decays");
  mirror<double>(app, j, "lr_decay", "Decay factor per milestone");
  mirror<std::size_t>(app, j, "warmup_epochs", "Linear warm-up epochs");
  mirror<double>(app, j, "tau_min", "Temperature floor");
  mirror<double>(app, j, "tau_fraction", "Fraction of training at which the floor is reached");
  mirror<std::uint64_t>(app, j, "seed", "Model and batch-order seed");
  mirror<std::string>(app, j, "train_path", "Training records (JSONL)");
  mirror<std::string>(app, j, "test_path", "Held-out records (JSONL)");
  mirror<std::string>(app, j, "dict_path", "Dictionary file");
  mirror<std::string>(app, j, "checkpoint_path", "Checkpoint file to write");
  mirror<std::size_t>(app, j, "checkpoint_every", "Checkpoint period in epochs (0 = only at the end)");
  mirror<std::string>(app, j, "variant", "full | one_block:i | two_blocks:i,j | no_sharpen");
}

harness::TrainConfig resolve_config(const TrainOptions& o) {
  harness::TrainConfig c;
  if (!o.common.config.empty()) c = harness::TrainConfig::load(o.common.config);
  c.merge(o.overrides);
  c.validate();
  return c;
}

std::vector<Example> load_records(const std::string& path, const char* what) {
  if (path.empty()) throw ContractError(std::string("no ") + what + " path given");
  auto data = io::read_dataset(path);
  if (data.empty()) throw ContractError(std::string(what) + " file '" + path + "' has no records");
  return data;
}

int run_dict_build(const TrainOptions& o) {
  const auto c = resolve_config(o);
  const auto data = load_records(c.train_path, "training");
  const auto res = kmeans(harness::token_features(data), c.dict_size, c.seed, o.max_iters);
  const GlobalDictionary dict(res.centroids);
  const auto path = c.dict_path.empty() ? out_path(o.common, "dictionary.bin") : c.dict_path;
  io::save_dictionary(dict, path);
  std::cout << "dictionary " << path << '\n'
            << "K " << dict.size() << " d_in " << dict.width() << '\n'
            << "iterations " << res.iterations << " converged " << (res.converged ? "yes" : "no") << '\n'
            << "wcss " << harness::fmt_double(res.wcss_history.empty() ? 0.0 : res.wcss_history.back()) << '\n';
  return 0;
}

GlobalDictionary dictionary_for(const harness::TrainConfig& c, const Common& common, const std::vector<Example>& train) {
  if (!c.dict_path.empty()) return io::load_dictionary(c.dict_path);
  auto dict = build_dictionary(harness::token_features(train), c.dict_size, c.seed);
  io::save_dictionary(dict, out_path(common, "dictionary.bin"));
  return dict;
}

int run_train(const TrainOptions& o) {
  const auto c = resolve_config(o);
  const auto train = load_records(c.train_path, "training");
  const auto dict = dictionary_for(c, o.common, train);
  const auto ckpt = c.checkpoint_path.empty() ? out_path(o.common, "checkpoint.bin") : c.checkpoint_path;
  write_text(out_path(o.common, "config.json"), c.to_json().dump(2) + "\n");

  io::TrainingState st = o.resume.empty() ? harness::fresh_state(c) : io::load_checkpoint(o.resume);
  if (!o.resume.empty()) {
    if (!(st.model.config() == c.model_config())) throw ContractError("checkpoint model shape does not match the config");
    if (!(st.model.variant() == Variant::parse(c.variant))) throw ContractError("checkpoint variant does not match the config");
    std::cout << "resumed at epoch " << st.epoch << " step " << st.step << '\n';
  }
  std::ofstream log(out_path(o.common, "train_log.txt"), o.resume.empty() ? std::ios::trunc : std::ios::app);
  harness::train(st, c, train, dict, [&](const io::TrainingState& s, const harness::EpochLog& e) {
    const auto line = harness::format_epoch_log(e);
    std::cout << line << std::endl;
    log << line << '\n';
    const bool last = static_cast<std::size_t>(s.epoch) == c.epochs;
    if (last || (c.checkpoint_every && (e.epoch + 1) % c.checkpoint_every == 0)) io::save_checkpoint(s, ckpt);
  });
  io::save_checkpoint(st, ckpt);

  std::ostringstream metrics;
  const auto m_train = harness::evaluate(st.model, train, dict);
  metrics << "train_accuracy " << harness::fmt_double(m_train.accuracy) << '\n';
  if (!c.test_path.empty()) {
    const auto test = load_records(c.test_path, "test");
    metrics << harness::format_metrics(harness::evaluate(st.model, test, dict));
  }
  std::cout << metrics.str();
  write_text(out_path(o.common, "metrics.txt"), metrics.str());
  return 0;
}

io::TrainingState checkpoint_for(const TrainOptions& o, const harness::TrainConfig& c) {
  const auto path = !o.checkpoint.empty() ? o.checkpoint : c.checkpoint_path;
  if (path.empty()) throw ContractError("no checkpoint given (--checkpoint or checkpoint_path)");
  return io::load_checkpoint(path);
}

int run_eval(const TrainOptions& o) {
  const auto c = resolve_config(o);
  const auto st = checkpoint_for(o, c);
  const auto data = load_records(o.data.empty() ? c.test_path : o.data, "evaluation");
  if (c.dict_path.empty()) throw ContractError("no dictionary given (--dict-path)");
  const auto text = harness::format_metrics(harness::evaluate(st.model, data, io::load_dictionary(c.dict_path)));
  std::cout << text;
  write_text(out_path(o.common, "eval_metrics.txt"), text);
  return 0;
}

int run_inspect(const TrainOptions& o) {
  const auto c = resolve_config(o);
  const auto st = checkpoint_for(o, c);
  auto data = load_records(o.data.empty() ? c.test_path : o.data, "inspection");
  if (o.limit && data.size() > o.limit) data.resize(o.limit);
  if (c.dict_path.empty()) throw ContractError("no dictionary given (--dict-path)");
  const auto report = harness::routing_report(st.model, data, io::load_dictionary(c.dict_path));
  const auto path = out_path(o.common, "routing.txt");
  write_text(path, report);
  std::istringstream lines(report);
  for (std::string line; std::getline(lines, line);)
    if (line.rfind("example ", 0) != 0) std::cout << line << '\n';
  std::cout << "per-example routing written to " << path << '\n';
  return 0;
}

// ---------------------------------------------------------------------------

struct OracleOptions {
  Common common;
  std::uint64_t seed = 0;
  std::size_t trials = 200;
  std::string scm;
  std::string criterion;
};

int run_oracle(const OracleOptions& o) {
  std::vector<harness::FamilyReport> reports;
  if (!o.scm.empty()) {
    if (o.criterion.empty()) throw ContractError("--scm needs --criterion");
    reports.push_back(harness::check_scm(harness::read_scm(o.scm), o.criterion));
  } else {
    for (auto& r : harness::oracle_check(o.seed, o.trials))
      if (o.criterion.empty() || r.family == o.criterion) reports.push_back(r);
    if (reports.empty()) throw ContractError("unknown oracle family '" + o.criterion + "'");
  }
  const auto text = harness::format_oracle_report(reports);
  std::cout << text;
  write_text(out_path(o.common, "oracle_report.txt"), text);
  for (const auto& r : reports)
    if (r.failures) {
      std::cerr << "error: oracle family " << r.family << " failed " << r.failures << " of " << r.trials << " trials\n";
      return 1;
    }
  return 0;
}

// ---------------------------------------------------------------------------

int run_tfidf(const Common& c, const std::string& corpus, std::size_t m) {
  const auto ranked = taskgen::tfidf_topm(io::read_corpus(corpus), m);
  std::ostringstream os;
  for (std::size_t d = 0; d < ranked.size(); ++d) {
    os << "doc " << d;
    for (const auto& w : ranked[d]) os << ' ' << w.word << ' ' << harness::fmt_double(w.score);
    os << '\n';
  }
  std::cout << os.str();
  write_text(out_path(c, "tfidf.txt"), os.str());
  return 0;
}

int run_triplets(const Common& c, const std::string& path, const std::vector<double>& query, std::size_t top_k) {
  const auto triplets = io::read_triplets(path);
  std::ostringstream os;
  for (const auto& s : taskgen::score_triplets(query, triplets, top_k)) {
    const auto& t = triplets[s.index];
    os << s.index << ' ' << t.subject << ' ' << t.relation << ' ' << t.object << ' ' << harness::fmt_double(s.score) << '\n';
  }
  std::cout << os.str();
  write_text(out_path(c, "triplets.txt"), os.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Causal routing: data, training and oracle tools"};
  app.require_subcommand(1);

  TaskOptions task;
  auto* datagen = app.add_subcommand("datagen", "Generate a synthetic confounded train/test split");
  add_common(datagen, task.common, "Task spec JSON; flags override its keys");
  register_task_flags(datagen, task);

  TrainOptions dict_opts, train_opts, eval_opts, inspect_opts;
  auto* dict_build = app.add_subcommand("dict-build", "Cluster training tokens into the global dictionary");
  add_common(dict_build, dict_opts.common, "Training config JSON; flags override its keys");
  register_train_flags(dict_build, dict_opts);
  dict_build->add_option("--max-iters", dict_opts.max_iters, "Lloyd iteration cap")->capture_default_str();

  auto* train = app.add_subcommand("train", "Train a model; writes checkpoint, log and metrics");
  add_common(train, train_opts.common, "Training config JSON; flags override its keys");
  register_train_flags(train, train_opts);
  train->add_option("--resume", train_opts.resume, "Checkpoint to continue from");

  auto* eval = app.add_subcommand("eval", "Accuracy and F1 of a checkpoint on a dataset");
  add_common(eval, eval_opts.common, "Training config JSON; flags override its keys");
  register_train_flags(eval, eval_opts);
  eval->add_option("--checkpoint", eval_opts.checkpoint, "Checkpoint to evaluate");
  eval->add_option("--data", eval_opts.data, "Records to score (default: test_path)");

  auto* inspect = app.add_subcommand("inspect-routing", "Dump block and layer routing weights");
  add_common(inspect, inspect_opts.common, "Training config JSON; flags override its keys");
  register_train_flags(inspect, inspect_opts);
  inspect->add_option("--checkpoint", inspect_opts.checkpoint, "Checkpoint to inspect");
  inspect->add_option("--data", inspect_opts.data, "Records to route (default: test_path)");
  inspect->add_option("--limit", inspect_opts.limit, "Only the first N records (0 = all)");

  OracleOptions oracle;
  auto* oracle_cmd = app.add_subcommand("oracle-check", "Compare adjustment formulas with brute-force interventions");
  add_common(oracle_cmd, oracle.common, "Unused; accepted for uniformity");
  oracle_cmd->add_option("--seed", oracle.seed, "Seed for the random models")->capture_default_str();
  oracle_cmd->add_option("--trials", oracle.trials, "Random models per family")->capture_default_str();
  oracle_cmd->add_option("--scm", oracle.scm, "Check this model file instead of random ones");
  oracle_cmd->add_option("--criterion", oracle.criterion, "backdoor | frontdoor | no_confounder | sufficiency");

  Common tfidf_common;
  std::string corpus;
  std::size_t top_m = 5;
  auto* tfidf = app.add_subcommand("tfidf", "Top-M TF-IDF words per document");
  add_common(tfidf, tfidf_common, "Unused; accepted for uniformity");
  tfidf->add_option("--corpus", corpus, "Text file, one document per line")->required();
  tfidf->add_option("-m,--top-m", top_m, "Words kept per document")->capture_default_str();

  Common trip_common;
  std::string triplet_path;
  std::vector<double> query;
  std::size_t top_k = 20;
  auto* trip = app.add_subcommand("score-triplets", "Rank knowledge triplets against a query embedding");
  add_common(trip, trip_common, "Unused; accepted for uniformity");
  trip->add_option("--triplets", triplet_path, "Triplet records (JSONL)")->required();
  trip->add_option("--query", query, "Query embedding values")->required()->delimiter(',');
  trip->add_option("-k,--top-k", top_k, "Triplets kept")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*datagen) return run_datagen(task);
    if (*dict_build) return run_dict_build(dict_opts);
    if (*train) return run_train(train_opts);
    if (*eval) return run_eval(eval_opts);
    if (*inspect) return run_inspect(inspect_opts);
    if (*oracle_cmd) return run_oracle(oracle);
    if (*tfidf) return run_tfidf(tfidf_common, corpus, top_m);
    if (*trip) return run_triplets(trip_common, triplet_path, query, top_k);
  } catch (const std::exception& e) {
    std::string msg = e.what();
    for (auto& ch : msg)
      if (ch == '\n') ch = ' ';
    std::cerr << "error: " << msg << '\n';
    return 1;
  }
  return 1;
}
