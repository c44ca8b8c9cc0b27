// Acceptance run: one PASS/FAIL line per criterion, non-zero exit if any fail.
// Usage: acceptance [criterion numbers...]   (default: all)

#include <chrono>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <set>
#include <sstream>

#include "cgr/cgr.hpp"
#include "scm_brute.hpp"
#include "support.hpp"

using namespace cgr;
namespace ct = cgr::testing;
namespace fs = std::filesystem;

#ifndef CGR_RECIPE_DIR
#define CGR_RECIPE_DIR "recipes"
#endif

namespace {

struct Outcome {
  bool pass = true;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string num(double v, int precision = 3) {
  std::ostringstream os;
  os << std::setprecision(precision) << v;
  return os.str();
}

// 1 ------------------------------------------------------------------------

Outcome gradients() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::size_t checked = 0;
  for (std::uint64_t seed : {1, 2, 3}) {
    ModelConfig c;
    c.d_in = 4;
    c.width = 8;
    c.out_width = 8;
    c.hidden = 8;
    c.layers = 2;
    c.classes = 3;
    CGRModel m(c, seed);
    std::mt19937_64 rng(seed + 50);
    // Move away from the symmetric initial routing so every path carries gradient.
    for (auto& l : m.layers()) l.block_weights->value = random_normal({1, 3}, 1.0, rng);
    m.layer_weights().value = random_normal({1, c.layers}, 1.0, rng);
    m.set_tau(0.5);
    const GlobalDictionary dict(random_normal({5, c.d_in}, 1.0, rng));
    std::vector<Example> batch;
    for (int i = 0; i < 3; ++i) batch.push_back({random_normal({3, c.d_in}, 1.0, rng), random_normal({2, c.d_in}, 1.0, rng), i});
    const std::vector<int> ys{0, 1, 2};
    const auto rep = ct::check_gradients(m.parameters(), [&](Tape& t) { return cross_entropy(batch_logits(m, t, batch, dict), ys); });
    worst = std::max(worst, rep.max_rel);
    checked += rep.checked;
    if (rep.checked != m.parameters().scalar_count()) return {false, "not every parameter was checked"};
  }
  const double secs = seconds_since(t0);
  return {worst < 1e-4 && secs < 60.0,
          "max relative error " + num(worst) + " over " + std::to_string(checked) + " entries, " + num(secs) + " s"};
}

// 2-4 ----------------------------------------------------------------------

template <class Make, class Adjust>
Outcome identity_family(std::uint64_t seed, double tol, double time_limit, Make&& make, Adjust&& adjust) {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(seed);
  double worst = 0.0;
  for (int trial = 0; trial < 200; ++trial) {
    const auto m = make(rng);
    worst = std::max(worst, ct::max_diff(adjust(m), ct::Brute{m}.do_table("X", "Y")));
  }
  const double secs = seconds_since(t0);
  return {worst < tol && secs < time_limit, "200 models, max deviation " + num(worst) + ", " + num(secs) + " s"};
}

Outcome backdoor() {
  return identity_family(
      2, 1e-10, 10.0, [](std::mt19937_64& r) { return scm::random_backdoor_scm(r); },
      [](const scm::DiscreteSCM& m) { return scm::backdoor_adjust(scm::observational_joint(m)); });
}

Outcome frontdoor() {
  return identity_family(
      3, 1e-10, 10.0, [](std::mt19937_64& r) { return scm::random_frontdoor_scm(r); },
      [](const scm::DiscreteSCM& m) { return scm::frontdoor_adjust(scm::observational_joint(m)); });
}

Outcome no_confounder() {
  return identity_family(
      4, 1e-12, 1e9, [](std::mt19937_64& r) { return scm::random_no_confounder_scm(r); },
      [](const scm::DiscreteSCM& m) { return scm::conditional_table(scm::observational_joint(m), "X", "Y"); });
}

// 5 ------------------------------------------------------------------------

Outcome sufficiency() {
  Outcome out;
  scm::DiscreteSCM canon;
  canon.add_exogenous("U_X", {0.4, 0.6});
  canon.add_endogenous_fn("X", 2, {}, {"U_X"}, [](auto&, auto& u) { return u[0]; });
  canon.add_endogenous_fn("Y", 2, {"X"}, {}, [](auto& pa, auto&) { return pa[0]; });
  const double ps = scm::prob_sufficiency(canon, {{"X", 0}}, {{"X", 1}}, "Y", 1);
  if (ps != 1.0) out = {false, "canonical model gives " + num(ps, 17)};

  std::mt19937_64 rng(5);
  double worst = 0.0;
  int checked = 0;
  while (checked < 100) {
    const auto m = scm::random_binary_scm(rng);
    try {
      const double a = scm::prob_sufficiency(m, {{"X", 0}}, {{"X", 1}}, "Y", 1);
      worst = std::max({worst, std::abs(a - ct::Brute{m}.sufficiency("X", 0, 1, "Y", 1)),
                        std::abs(a - scm::twin_sufficiency(m, {{"X", 0}}, {{"X", 1}}, "Y", 1))});
      ++checked;
    } catch (const PositivityError&) {
    }
  }
  if (!(worst < 1e-12)) out = {false, "twin mismatch " + num(worst)};

  bool raised = false;
  try {
    scm::prob_sufficiency(canon, {{"X", 1}}, {{"X", 0}}, "Y", 1);
  } catch (const PositivityError&) {
    raised = true;
  }
  if (!raised) out = {false, "zero-probability evidence did not raise PositivityError"};
  if (out.pass) out.detail = "canonical ps = 1, 100 random models within " + num(worst) + ", zero evidence raises";
  return out;
}

// 6 ------------------------------------------------------------------------

Outcome sharpening() {
  std::mt19937_64 rng(6);
  double identity = 0.0;
  for (int i = 0; i < 100; ++i) {
    const Tensor w = random_normal({1, 4}, 3.0, rng);
    const auto p = sharpening_softmax(w.storage(), 1.0);
    const auto ref = ct::softmax_ref(w.storage());
    for (std::size_t k = 0; k < 4; ++k) identity = std::max(identity, std::abs(p[k] - ref[k]));
  }
  bool argmax_ok = true, monotone_ok = true;
  for (int i = 0; i < 100; ++i) {
    const Tensor w = random_normal({1, 3}, 2.0, rng);
    const auto& wv = w.storage();
    const auto arg = std::max_element(wv.begin(), wv.end()) - wv.begin();
    double prev = 0.0;
    for (double tau : {1.0, 0.5, 0.1, 0.05}) {
      const auto p = sharpening_softmax(wv, tau);
      argmax_ok &= std::max_element(p.begin(), p.end()) - p.begin() == arg;
      const double mx = *std::max_element(p.begin(), p.end());
      monotone_ok &= mx >= prev;
      prev = mx;
    }
  }
  const double w[] = {std::log(0.7), std::log(0.2), std::log(0.1)};
  const double top = sharpening_softmax(w, 0.1)[0];
  const double a = std::pow(0.7, 10), b = std::pow(0.2, 10), c = std::pow(0.1, 10);
  const bool concentration = std::abs(top - a / (a + b + c)) < 1e-12 && std::abs(top - 0.9999964) < 1e-6;
  return {identity <= 1e-12 && argmax_ok && monotone_ok && concentration,
          "identity error " + num(identity) + ", argmax " + (argmax_ok ? "kept" : "changed") + ", monotone " +
              (monotone_ok ? "yes" : "no") + ", concentration " + num(top, 8)};
}

// 7 ------------------------------------------------------------------------

Outcome routing_algebra() {
  ModelConfig c;
  c.d_in = 5;
  c.width = 6;
  c.out_width = 4;
  c.hidden = 7;
  c.layers = 2;
  c.classes = 3;
  std::mt19937_64 rng(7);
  const Tensor xv = random_normal({4, c.d_in}, 1.0, rng), zv = random_normal({3, c.d_in}, 1.0, rng);
  const GlobalDictionary dict(random_normal({6, c.d_in}, 1.0, rng));

  double mean_err = 0.0;
  {
    CGRModel m(c, 70);
    Tape t;
    DictionaryCache cache(t, m, dict);
    const Tokens x = Tokens::single(t.constant(xv)), z = Tokens::single(t.constant(zv));
    Streams s{{x, x, x}};
    std::vector<Tensor> layer_out;
    for (std::size_t l = 0; l < c.layers; ++l) {
      auto r = layer_forward(m, l, s, z, cache);
      const Tensor out = r.output.value();
      std::vector<Tensor> blocks;
      for (const auto& b : r.block_outputs) blocks.push_back(b->value());
      for (std::size_t j = 0; j < c.out_width; ++j)
        mean_err = std::max(mean_err, std::abs(out.at(0, j) - (blocks[0].at(0, j) + blocks[1].at(0, j) + blocks[2].at(0, j)) / 3.0));
      layer_out.push_back(out);
      s = r.next;
    }
    const auto enc = encode(m, x.rows, z.rows, cache);
    const Tensor feats = enc.features.value();
    for (std::size_t j = 0; j < c.out_width; ++j)
      mean_err = std::max(mean_err, std::abs(feats.at(0, j) - (layer_out[0].at(0, j) + layer_out[1].at(0, j)) / 2.0));
  }

  bool bit_exact = true;
  for (std::size_t b = 0; b < kBlocksPerLayer; ++b) {
    CGRModel m(c, 71, Variant::one_block(b));
    for (auto& l : m.layers()) l.block_weights->value = random_normal({1, 3}, 1.0, rng);
    m.set_tau(0.3);
    Tape t;
    DictionaryCache cache(t, m, dict);
    const Tokens x = Tokens::single(t.constant(xv)), z = Tokens::single(t.constant(zv));
    const Tensor routed = layer_forward(m, 0, Streams{{x, x, x}}, z, cache).output.value();
    const auto& layer = m.layers()[0];
    const Var alone = b == 0 ? ncf_forward(x, layer.no_confounder).output
                    : b == 1 ? bd_forward(x, z, layer.back_door).output
                             : fd_forward(x, dict, layer.front_door).output;
    bit_exact &= routed == alone.value();
  }
  return {mean_err <= 1e-10 && bit_exact,
          "equal-weight mean error " + num(mean_err) + ", one-block masking " + (bit_exact ? "bit-exact" : "differs")};
}

// 8 ------------------------------------------------------------------------

Outcome ablation() {
  const auto t0 = Clock::now();
  const fs::path dir = CGR_RECIPE_DIR;
  const auto base_task = io::load_task_spec((dir / "task.json").string());
  const auto base_train = harness::TrainConfig::load((dir / "train.json").string());
  const std::vector<std::string> variants{"full", "one_block:0", "one_block:1", "one_block:2", "no_sharpen"};
  const std::vector<std::uint64_t> seeds{1, 2, 3, 4, 5};
  std::map<std::string, double> mean;
  for (auto seed : seeds) {
    auto spec = base_task;
    spec.seed = seed;
    const auto ds = taskgen::generate_dataset(spec);
    auto cfg = base_train;
    cfg.seed = seed;
    const auto dict = build_dictionary(harness::token_features(ds.train), cfg.dict_size, cfg.seed);
    std::cout << "  seed " << seed;
    for (const auto& v : variants) {
      cfg.variant = v;
      auto st = harness::fresh_state(cfg);
      harness::train(st, cfg, ds.train, dict);
      const double acc = harness::evaluate(st.model, ds.test, dict).accuracy;
      mean[v] += acc / static_cast<double>(seeds.size());
      std::cout << ' ' << v << ' ' << num(100 * acc, 4);
    }
    std::cout << std::endl;
  }
  const double secs = seconds_since(t0);
  const double best_one = std::max({mean["one_block:0"], mean["one_block:1"], mean["one_block:2"]});
  const double full = 100 * mean["full"], one = 100 * best_one, plain = 100 * mean["no_sharpen"];
  std::ostringstream os;
  os << std::fixed << std::setprecision(2) << "full " << full << ", best one-block " << one << ", no_sharpen " << plain
     << " (percent, mean of " << seeds.size() << " seeds), " << std::setprecision(0) << secs << " s";
  return {full >= one + 2.0 && full >= plain - 0.5 && secs < 600.0, os.str()};
}

// 9 ------------------------------------------------------------------------

Outcome extractors() {
  const std::vector<std::vector<std::string>> corpus{{"a", "b", "b"}, {"a", "c"}, {"a", "c", "c"}};
  const auto top = taskgen::tfidf_topm(corpus, 1);
  const bool tfidf_ok = top[0][0].word == "b" && top[0][0].score == 2.0 * std::log(3.0);
  const std::vector<taskgen::TripletRecord> t{{"s", "r", "o1", 0.5, {1.0, 0.0}},
                                              {"s", "r", "o2", 1.0, {std::sqrt(2.0) / 2, std::sqrt(2.0) / 2}}};
  const std::vector<double> q{1.0, 0.0};
  const auto ranked = taskgen::score_triplets(q, t, 2);
  const bool triplet_ok = ranked[0].index == 1 && std::abs(ranked[0].score - std::sqrt(0.5)) < 1e-15 &&
                          ranked[1].index == 0 && ranked[1].score == 0.5;
  const auto again = taskgen::tfidf_topm(corpus, 1);
  const auto ranked_again = taskgen::score_triplets(q, t, 2);
  const bool deterministic = again[0][0].score == top[0][0].score && again[2][0].word == top[2][0].word &&
                             ranked_again[0].score == ranked[0].score && ranked_again[1].score == ranked[1].score;
  return {tfidf_ok && triplet_ok && deterministic, "tfidf top word " + top[0][0].word + " score " + num(top[0][0].score, 10) +
                                                       ", triplet scores " + num(ranked[0].score, 6) + " > " +
                                                       num(ranked[1].score, 6)};
}

// 10 -----------------------------------------------------------------------

Outcome persistence() {
  const auto dir = fs::temp_directory_path() / ("cgr_acceptance_" + std::to_string(std::random_device{}()));
  fs::create_directories(dir);
  struct Cleanup {
    fs::path p;
    ~Cleanup() { fs::remove_all(p); }
  } cleanup{dir};

  harness::TrainConfig c;
  c.width = 16;
  c.out_width = 16;
  c.hidden = 16;
  c.d_in = 8;
  c.dict_size = 8;
  c.classes = 4;
  c.batch_size = 16;
  c.epochs = 4;
  c.lr = 1e-3;
  c.lr_milestones = {2, 3};
  c.warmup_epochs = 1;
  c.seed = 10;
  taskgen::SyntheticTaskSpec s;
  s.d_in = c.d_in;
  s.train_size = 96;
  s.test_size = 32;
  s.seed = 10;
  const auto ds = taskgen::generate_dataset(s);
  const auto dict = build_dictionary(harness::token_features(ds.train), c.dict_size, c.seed);

  auto logits = [&](const CGRModel& m) {
    Tape t;
    return batch_logits(m, t, ds.test, dict).value();
  };
  const auto mid = (dir / "mid.ckpt").string(), end = (dir / "end.ckpt").string();
  auto twin = harness::fresh_state(c);
  const auto full = harness::train(twin, c, ds.train, dict, [&](const io::TrainingState& st, const harness::EpochLog& log) {
    if (log.epoch == 1) io::save_checkpoint(st, mid);
  });
  io::save_checkpoint(twin, end);
  const bool bit_identical = logits(io::load_checkpoint(end).model) == logits(twin.model);

  auto resumed = io::load_checkpoint(mid);
  const auto rest = harness::train(resumed, c, ds.train, dict);
  const double gap = std::abs(rest.step_losses.back() - full.step_losses.back());
  return {bit_identical && gap <= 1e-12, std::string("round-trip forward ") + (bit_identical ? "bit-identical" : "differs") +
                                             ", resumed final loss differs by " + num(gap)};
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria{
      {"gradient soundness", gradients},
      {"back-door oracle", backdoor},
      {"front-door oracle", frontdoor},
      {"no-confounder identity", no_confounder},
      {"probability of sufficiency", sufficiency},
      {"sharpening softmax", sharpening},
      {"routing algebra", routing_algebra},
      {"desk-scale ablation trend", ablation},
      {"extractors", extractors},
      {"persistence", persistence},
  };
  std::set<std::size_t> only;
  for (int i = 1; i < argc; ++i) only.insert(static_cast<std::size_t>(std::atoi(argv[i])));
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    if (!only.empty() && !only.contains(i + 1)) continue;
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::cout << "criterion " << i + 1 << " " << (o.pass ? "PASS" : "FAIL") << " " << criteria[i].first << ": " << o.detail
              << std::endl;
  }
  return failures ? 1 : 0;
}
