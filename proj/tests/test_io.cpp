#include <gtest/gtest.h>

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iterator>

#include <unistd.h>

#include "cgr/harness.hpp"
#include "cgr/io.hpp"

using namespace cgr;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static std::atomic<int> counter{0};
    path = fs::temp_directory_path() / ("cgr_io_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  std::string file(const std::string& name) const { return (path / name).string(); }
};

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

void dump(const std::string& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary);
  out << bytes;
}

harness::TrainConfig small_config() {
  harness::TrainConfig c;
  c.width = 8;
  c.out_width = 8;
  c.hidden = 8;
  c.d_in = 6;
  c.dict_size = 6;
  c.classes = 3;
  c.n_x = 4;
  c.n_z = 4;
  c.batch_size = 8;
  c.epochs = 4;
  c.lr = 3e-3;
  c.lr_milestones = {2, 3};
  c.warmup_epochs = 1;
  c.seed = 21;
  return c;
}

taskgen::Dataset small_data(const harness::TrainConfig& c, std::size_t n = 40) {
  taskgen::SyntheticTaskSpec s;
  s.d_in = c.d_in;
  s.classes = c.classes;
  s.n_x = c.n_x;
  s.n_z = c.n_z;
  s.train_size = n;
  s.test_size = 12;
  s.seed = 4;
  return taskgen::generate_dataset(s);
}

std::vector<double> logits_of(const CGRModel& m, const std::vector<Example>& data, const GlobalDictionary& dict) {
  Tape t;
  const Var v = batch_logits(m, t, data, dict);
  return {v.value().storage().begin(), v.value().storage().end()};
}

}  // namespace

TEST(Checkpoint, RoundTripGivesBitIdenticalForward) {
  TempDir tmp;
  auto c = small_config();
  c.epochs = 2;
  const auto data = small_data(c);
  const auto dict = build_dictionary(harness::token_features(data.train), c.dict_size, 1);
  auto st = harness::fresh_state(c);
  harness::train(st, c, data.train, dict);
  io::save_checkpoint(st, tmp.file("model.ckpt"));
  const auto back = io::load_checkpoint(tmp.file("model.ckpt"));
  EXPECT_EQ(back.step, st.step);
  EXPECT_EQ(back.epoch, st.epoch);
  EXPECT_EQ(back.model.tau(), st.model.tau());
  EXPECT_EQ(back.model.variant().str(), st.model.variant().str());
  EXPECT_EQ(back.adam.step, st.adam.step);
  const auto a = logits_of(st.model, data.test, dict), b = logits_of(back.model, data.test, dict);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]) << i;
  // Saving the loaded state again reproduces the file byte for byte.
  io::save_checkpoint(back, tmp.file("again.ckpt"));
  EXPECT_EQ(slurp(tmp.file("model.ckpt")), slurp(tmp.file("again.ckpt")));
}

TEST(Checkpoint, VariantSurvivesRoundTrip) {
  TempDir tmp;
  auto c = small_config();
  c.variant = "two_blocks:0,2";
  const auto st = harness::fresh_state(c);
  io::save_checkpoint(st, tmp.file("v.ckpt"));
  EXPECT_EQ(io::load_checkpoint(tmp.file("v.ckpt")).model.variant().str(), "two_blocks:0,2");
}

TEST(Checkpoint, ResumedRunMatchesUninterruptedTwin) {
  TempDir tmp;
  const auto c = small_config();
  const auto data = small_data(c);
  const auto dict = build_dictionary(harness::token_features(data.train), c.dict_size, 1);

  auto twin = harness::fresh_state(c);
  const auto full = harness::train(twin, c, data.train, dict, [&](const io::TrainingState& s, const harness::EpochLog& log) {
    if (log.epoch == 1) io::save_checkpoint(s, tmp.file("mid.ckpt"));
  });

  auto resumed = io::load_checkpoint(tmp.file("mid.ckpt"));
  EXPECT_EQ(resumed.epoch, 2);
  const auto rest = harness::train(resumed, c, data.train, dict);
  ASSERT_EQ(rest.epochs.size(), 2u);
  ASSERT_FALSE(rest.step_losses.empty());
  EXPECT_NEAR(rest.step_losses.back(), full.step_losses.back(), 1e-12);
  EXPECT_NEAR(rest.epochs.back().mean_loss, full.epochs.back().mean_loss, 1e-12);
  EXPECT_EQ(resumed.step, twin.step);
  const auto a = logits_of(twin.model, data.test, dict), b = logits_of(resumed.model, data.test, dict);
  for (std::size_t i = 0; i < a.size(); ++i) EXPECT_NEAR(a[i], b[i], 1e-12);
}

TEST(Checkpoint, BadMagicIsFormatError) {
  TempDir tmp;
  io::save_checkpoint(harness::fresh_state(small_config()), tmp.file("a.ckpt"));
  auto bytes = slurp(tmp.file("a.ckpt"));
  bytes[3] = 'X';
  dump(tmp.file("b.ckpt"), bytes);
  EXPECT_THROW(io::load_checkpoint(tmp.file("b.ckpt")), FormatError);
}

TEST(Checkpoint, TruncatedFileIsFormatError) {
  TempDir tmp;
  io::save_checkpoint(harness::fresh_state(small_config()), tmp.file("a.ckpt"));
  const auto bytes = slurp(tmp.file("a.ckpt"));
  for (std::size_t keep : {std::size_t{2}, std::size_t{10}, bytes.size() / 2, bytes.size() - 1}) {
    dump(tmp.file("t.ckpt"), bytes.substr(0, keep));
    EXPECT_THROW(io::load_checkpoint(tmp.file("t.ckpt")), FormatError) << keep;
  }
  dump(tmp.file("t.ckpt"), bytes + "junk");
  EXPECT_THROW(io::load_checkpoint(tmp.file("t.ckpt")), FormatError);
}

TEST(Checkpoint, MissingTensorIsFormatError) {
  TempDir tmp;
  io::save_checkpoint(harness::fresh_state(small_config()), tmp.file("a.ckpt"));
  auto bytes = slurp(tmp.file("a.ckpt"));
  const auto at = bytes.find("layer_weights");
  ASSERT_NE(at, std::string::npos);
  bytes[at + 12] = 'z';
  dump(tmp.file("m.ckpt"), bytes);
  try {
    io::load_checkpoint(tmp.file("m.ckpt"));
    FAIL() << "expected FormatError";
  } catch (const FormatError& e) {
    EXPECT_NE(std::string(e.what()).find("missing tensor"), std::string::npos) << e.what();
  }
}

TEST(Checkpoint, MissingFileIsFormatError) {
  EXPECT_THROW(io::load_checkpoint("/nonexistent/dir/model.ckpt"), FormatError);
}

TEST(Dictionary, RoundTripIsBitExact) {
  TempDir tmp;
  std::mt19937_64 rng(3);
  std::normal_distribution<double> g;
  Tensor c = Tensor::matrix(7, 5);
  for (auto& v : c.storage()) v = g(rng) * 1e3;
  const GlobalDictionary dict(c);
  io::save_dictionary(dict, tmp.file("d.bin"));
  const auto back = io::load_dictionary(tmp.file("d.bin"));
  ASSERT_EQ(back.size(), 7u);
  ASSERT_EQ(back.width(), 5u);
  for (std::size_t i = 0; i < c.storage().size(); ++i) EXPECT_EQ(back.centroids().storage()[i], c.storage()[i]);
}

TEST(Dictionary, CorruptFilesAreFormatErrors) {
  TempDir tmp;
  io::save_dictionary(GlobalDictionary(Tensor::matrix(2, 3)), tmp.file("d.bin"));
  const auto bytes = slurp(tmp.file("d.bin"));
  dump(tmp.file("t.bin"), bytes.substr(0, bytes.size() - 3));
  EXPECT_THROW(io::load_dictionary(tmp.file("t.bin")), FormatError);
  dump(tmp.file("m.bin"), "CGRX" + bytes.substr(4));
  EXPECT_THROW(io::load_dictionary(tmp.file("m.bin")), FormatError);
}

TEST(Dataset, RoundTripPreservesRecords) {
  TempDir tmp;
  const auto data = small_data(small_config(), 10);
  io::write_dataset(tmp.file("train.jsonl"), data.train);
  const auto back = io::read_dataset(tmp.file("train.jsonl"));
  ASSERT_EQ(back.size(), data.train.size());
  for (std::size_t i = 0; i < back.size(); ++i) {
    EXPECT_EQ(back[i].label, data.train[i].label);
    ASSERT_EQ(back[i].x.shape(), data.train[i].x.shape());
    ASSERT_EQ(back[i].z.shape(), data.train[i].z.shape());
    for (std::size_t j = 0; j < back[i].x.storage().size(); ++j) EXPECT_EQ(back[i].x.storage()[j], data.train[i].x.storage()[j]);
    for (std::size_t j = 0; j < back[i].z.storage().size(); ++j) EXPECT_EQ(back[i].z.storage()[j], data.train[i].z.storage()[j]);
  }
  // Writing twice gives identical files.
  io::write_dataset(tmp.file("again.jsonl"), back);
  EXPECT_EQ(slurp(tmp.file("train.jsonl")), slurp(tmp.file("again.jsonl")));
}

TEST(Dataset, MalformedLinesAreFormatErrors) {
  TempDir tmp;
  dump(tmp.file("a.jsonl"), "{\"x\": [[1, 2]], \"z\": [[1, 2]], \"label\": 0}\n{\"x\": [[1, 2], [3]], \"z\": [[1, 2]], \"label\": 0}\n");
  EXPECT_THROW(io::read_dataset(tmp.file("a.jsonl")), FormatError);
  dump(tmp.file("b.jsonl"), "{\"x\": [[1, 2]], \"z\": [[1, 2]]}\n");
  EXPECT_THROW(io::read_dataset(tmp.file("b.jsonl")), FormatError);
  dump(tmp.file("c.jsonl"), "not json\n");
  EXPECT_THROW(io::read_dataset(tmp.file("c.jsonl")), FormatError);
}

TEST(TaskSpecFile, MergeAndUnknownKeys) {
  taskgen::SyntheticTaskSpec s;
  io::merge_task_spec(s, nlohmann::json{{"rho", 0.25}, {"regime", "hidden_confounder_mediator"}, {"train_size", 77}});
  EXPECT_EQ(s.rho, 0.25);
  EXPECT_EQ(s.regime, taskgen::Regime::HiddenConfounderMediator);
  EXPECT_EQ(s.train_size, 77u);
  EXPECT_THROW(io::merge_task_spec(s, nlohmann::json{{"rhoo", 0.1}}), ContractError);
  EXPECT_THROW(io::merge_task_spec(s, nlohmann::json{{"regime", "sideways"}}), ContractError);
  EXPECT_THROW(io::merge_task_spec(s, nlohmann::json{{"rho", "high"}}), ContractError);
  taskgen::SyntheticTaskSpec t;
  io::merge_task_spec(t, io::task_spec_to_json(s));
  EXPECT_EQ(io::task_spec_to_json(t), io::task_spec_to_json(s));
}

TEST(TripletFile, ReadsRecordsAndRejectsBadWeights) {
  TempDir tmp;
  dump(tmp.file("t.jsonl"),
       "{\"subject\": \"cat\", \"relation\": \"is_a\", \"object\": \"animal\", \"weight\": 0.5, \"embedding\": [1, 0]}\n");
  const auto t = io::read_triplets(tmp.file("t.jsonl"));
  ASSERT_EQ(t.size(), 1u);
  EXPECT_EQ(t[0].object, "animal");
  EXPECT_EQ(t[0].weight, 0.5);
  EXPECT_EQ(t[0].embedding, (std::vector<double>{1.0, 0.0}));
  dump(tmp.file("bad.jsonl"),
       "{\"subject\": \"a\", \"relation\": \"r\", \"object\": \"b\", \"weight\": -1, \"embedding\": [1, 0]}\n");
  EXPECT_THROW(io::read_triplets(tmp.file("bad.jsonl")), FormatError);
}

TEST(CorpusFile, OneDocumentPerLine) {
  TempDir tmp;
  dump(tmp.file("c.txt"), "a b  b\n\ta c\na c c\n");
  const auto corpus = io::read_corpus(tmp.file("c.txt"));
  ASSERT_EQ(corpus.size(), 3u);
  EXPECT_EQ(corpus[0], (std::vector<std::string>{"a", "b", "b"}));
  EXPECT_EQ(corpus[1], (std::vector<std::string>{"a", "c"}));
}
