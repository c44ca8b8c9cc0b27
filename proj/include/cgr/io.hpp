#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "cgr/routing.hpp"
#include "cgr/taskgen.hpp"

namespace cgr::io {

// ---------------------------------------------------------------------------
// Line-delimited JSON datasets: {"x": [[...], ...], "z": [[...], ...], "label": k}

inline nlohmann::json matrix_to_json(const Tensor& t) {
  auto rows = nlohmann::json::array();
  for (std::size_t i = 0; i < t.rows(); ++i) rows.push_back(std::vector<double>(t.row(i).begin(), t.row(i).end()));
  return rows;
}

inline Tensor matrix_from_json(const nlohmann::json& j, const std::string& field) {
  if (!j.is_array()) throw FormatError("field '" + field + "' must be a list of lists");
  if (j.empty()) return Tensor();
  std::vector<std::vector<double>> rows;
  for (const auto& r : j) {
    if (!r.is_array()) throw FormatError("field '" + field + "' must be a list of lists");
    rows.push_back(r.get<std::vector<double>>());
  }
  try {
    return Tensor::from_rows(rows);
  } catch (const DimensionError& e) {
    throw FormatError("field '" + field + "': " + e.what());
  }
}

inline void write_dataset(const std::string& path, const std::vector<Example>& records) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  for (const auto& r : records) {
    nlohmann::json j;
    j["x"] = matrix_to_json(r.x);
    j["z"] = r.z.empty() ? nlohmann::json::array() : matrix_to_json(r.z);
    j["label"] = r.label;
    out << j.dump() << '\n';
  }
  if (!out) throw FormatError("failed writing '" + path + "'");
}

inline std::vector<Example> read_dataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open dataset '" + path + "'");
  std::vector<Example> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      Example ex;
      ex.x = matrix_from_json(j.at("x"), "x");
      ex.z = matrix_from_json(j.at("z"), "z");
      ex.label = j.at("label").get<int>();
      if (ex.x.empty()) throw FormatError("field 'x' is empty");
      if (ex.label < 0) throw FormatError("negative label");
      out.push_back(std::move(ex));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// ---------------------------------------------------------------------------
// Task spec files: a flat JSON object keyed by SyntheticTaskSpec member names.

inline nlohmann::json task_spec_to_json(const taskgen::SyntheticTaskSpec& s) {
  return {{"regime", taskgen::regime_name(s.regime)},
          {"d_in", s.d_in},
          {"classes", s.classes},
          {"n_x", s.n_x},
          {"n_z", s.n_z},
          {"train_size", s.train_size},
          {"test_size", s.test_size},
          {"rho", s.rho},
          {"test_shift", s.test_shift},
          {"seed", s.seed},
          {"separation", s.separation},
          {"noise", s.noise},
          {"class_tokens", s.class_tokens},
          {"class_strength", s.class_strength},
          {"tag_strength", s.tag_strength},
          {"mediator_strength", s.mediator_strength},
          {"share_direct", s.share_direct},
          {"share_back_door", s.share_back_door},
          {"share_mediator", s.share_mediator}};
}

/// Applies the keys present in `j` on top of `s`; unknown keys are rejected.
inline void merge_task_spec(taskgen::SyntheticTaskSpec& s, const nlohmann::json& j) {
  if (!j.is_object()) throw ContractError("task spec: expected a JSON object");
  const auto known = task_spec_to_json(s);
  for (const auto& [k, v] : j.items())
    if (!known.contains(k)) throw ContractError("task spec: unknown key '" + k + "'");
  try {
    auto set = [&](const char* k, auto& field) {
      if (j.contains(k)) field = j.at(k).get<std::decay_t<decltype(field)>>();
    };
    if (j.contains("regime")) s.regime = taskgen::parse_regime(j.at("regime").get<std::string>());
    set("d_in", s.d_in);
    set("classes", s.classes);
    set("n_x", s.n_x);
    set("n_z", s.n_z);
    set("train_size", s.train_size);
    set("test_size", s.test_size);
    set("rho", s.rho);
    set("test_shift", s.test_shift);
    set("seed", s.seed);
    set("separation", s.separation);
    set("noise", s.noise);
    set("class_tokens", s.class_tokens);
    set("class_strength", s.class_strength);
    set("tag_strength", s.tag_strength);
    set("mediator_strength", s.mediator_strength);
    set("share_direct", s.share_direct);
    set("share_back_door", s.share_back_door);
    set("share_mediator", s.share_mediator);
  } catch (const nlohmann::json::exception& e) {
    throw ContractError(std::string("task spec: ") + e.what());
  }
}

inline taskgen::SyntheticTaskSpec load_task_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open task spec '" + path + "'");
  taskgen::SyntheticTaskSpec s;
  try {
    merge_task_spec(s, nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw FormatError("task spec '" + path + "': " + e.what());
  }
  return s;
}

inline std::vector<taskgen::TripletRecord> read_triplets(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open triplet file '" + path + "'");
  std::vector<taskgen::TripletRecord> out;
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    try {
      const auto j = nlohmann::json::parse(line);
      taskgen::TripletRecord t;
      t.subject = j.at("subject").get<std::string>();
      t.relation = j.at("relation").get<std::string>();
      t.object = j.at("object").get<std::string>();
      t.weight = j.at("weight").get<double>();
      t.embedding = j.at("embedding").get<std::vector<double>>();
      if (!(t.weight >= 0.0) || !std::isfinite(t.weight)) throw FormatError("weight must be a finite non-negative number");
      if (t.embedding.empty()) throw FormatError("embedding is empty");
      out.push_back(std::move(t));
    } catch (const nlohmann::json::exception& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
    } catch (const FormatError& e) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": " + e.what());
    }
  }
  return out;
}

// One document per line, whitespace tokenisation.
inline std::vector<std::vector<std::string>> read_corpus(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open corpus '" + path + "'");
  std::vector<std::vector<std::string>> docs;
  std::string line;
  while (std::getline(in, line)) {
    std::istringstream ss(line);
    std::vector<std::string> words;
    for (std::string w; ss >> w;) words.push_back(w);
    docs.push_back(std::move(words));
  }
  return docs;
}

// ---------------------------------------------------------------------------
// Little-endian binary primitives.

class BinaryWriter {
 public:
  explicit BinaryWriter(std::ostream& os) : os_(os) {}

  void raw(const char* bytes, std::size_t n) { os_.write(bytes, static_cast<std::streamsize>(n)); }
  void u8(std::uint8_t v) { os_.put(static_cast<char>(v)); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) u8(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void i64(std::int64_t v) { u64(static_cast<std::uint64_t>(v)); }
  void f64(double v) { u64(std::bit_cast<std::uint64_t>(v)); }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    raw(s.data(), s.size());
  }
  void tensor(const Tensor& t) {
    u32(static_cast<std::uint32_t>(t.rank()));
    for (auto d : t.shape()) u64(d);
    for (double v : t.storage()) f64(v);
  }

 private:
  std::ostream& os_;
};

class BinaryReader {
 public:
  BinaryReader(std::istream& is, std::string what) : is_(is), what_(std::move(what)) {}

  void raw(char* bytes, std::size_t n, const std::string& field) {
    is_.read(bytes, static_cast<std::streamsize>(n));
    if (static_cast<std::size_t>(is_.gcount()) != n) throw FormatError(what_ + ": truncated while reading " + field);
  }
  std::uint8_t u8(const std::string& field) {
    char c;
    raw(&c, 1, field);
    return static_cast<std::uint8_t>(c);
  }
  std::uint32_t u32(const std::string& field) {
    unsigned char b[4];
    raw(reinterpret_cast<char*>(b), 4, field);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  std::uint64_t u64(const std::string& field) {
    unsigned char b[8];
    raw(reinterpret_cast<char*>(b), 8, field);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | b[i];
    return v;
  }
  std::int64_t i64(const std::string& field) { return static_cast<std::int64_t>(u64(field)); }
  double f64(const std::string& field) { return std::bit_cast<double>(u64(field)); }
  std::string str(const std::string& field) {
    const auto n = u32(field + " length");
    if (n > (1u << 20)) throw FormatError(what_ + ": implausible length for " + field);
    std::string s(n, '\0');
    raw(s.data(), n, field);
    return s;
  }
  Tensor tensor(const std::string& field) {
    const auto rank = u32(field + " rank");
    if (rank == 0 || rank > 4) throw FormatError(what_ + ": bad rank for " + field);
    Shape shape;
    std::uint64_t volume = 1;
    for (std::uint32_t i = 0; i < rank; ++i) {
      const auto d = u64(field + " shape");
      if (d == 0 || d > (1u << 24)) throw FormatError(what_ + ": bad dimension for " + field);
      volume *= d;
      shape.push_back(static_cast<std::size_t>(d));
    }
    if (volume > (1u << 26)) throw FormatError(what_ + ": tensor too large for " + field);
    std::vector<double> data(static_cast<std::size_t>(volume));
    for (auto& v : data) v = f64(field + " values");
    return Tensor(std::move(shape), std::move(data));
  }
  void expect_magic(const char (&magic)[5]) {
    char got[4];
    raw(got, 4, "magic");
    if (std::memcmp(got, magic, 4) != 0) throw FormatError(what_ + ": bad magic (expected '" + std::string(magic) + "')");
  }
  void expect_end() {
    if (is_.peek() != std::char_traits<char>::eof()) throw FormatError(what_ + ": trailing bytes after end of data");
  }

 private:
  std::istream& is_;
  std::string what_;
};

// ---------------------------------------------------------------------------
// Dictionary file: "CGRD", u32 version, u64 K, u64 d_in, K*d_in f64 values.

inline constexpr std::uint32_t kDictionaryVersion = 1;

inline void save_dictionary(const GlobalDictionary& dict, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  BinaryWriter w(out);
  w.raw("CGRD", 4);
  w.u32(kDictionaryVersion);
  w.u64(dict.size());
  w.u64(dict.width());
  for (double v : dict.centroids().storage()) w.f64(v);
  if (!out) throw FormatError("failed writing '" + path + "'");
}

inline GlobalDictionary load_dictionary(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open dictionary '" + path + "'");
  BinaryReader r(in, "dictionary");
  r.expect_magic("CGRD");
  const auto version = r.u32("version");
  if (version != kDictionaryVersion) throw FormatError("dictionary: unsupported version " + std::to_string(version));
  const auto k = r.u64("K"), d = r.u64("d_in");
  if (k == 0 || d == 0 || k * d > (1u << 26)) throw FormatError("dictionary: bad K or d_in");
  std::vector<double> data(static_cast<std::size_t>(k * d));
  for (auto& v : data) v = r.f64("centroid values");
  r.expect_end();
  return GlobalDictionary(Tensor({static_cast<std::size_t>(k), static_cast<std::size_t>(d)}, std::move(data)));
}

// ---------------------------------------------------------------------------
// Checkpoint file:
//   "CGR1", u32 version,
//   u32 meta count, then (name, type tag, value) with tag 0=i64, 1=f64, 2=string,
//   u32 tensor count, then (name, rank, dims, row-major f64 values).

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Everything needed to resume training exactly.
struct TrainingState {
  CGRModel model;
  AdamState adam;
  std::int64_t step = 0;   // optimizer steps taken
  std::int64_t epoch = 0;  // epochs completed
  std::uint64_t data_seed = 0;
};

using MetaValue = std::variant<std::int64_t, double, std::string>;

inline void save_checkpoint(const TrainingState& st, const std::string& path) {
  const auto& m = st.model;
  const auto& c = m.config();
  std::vector<std::pair<std::string, MetaValue>> meta = {
      {"d_in", std::int64_t(c.d_in)},
      {"width", std::int64_t(c.width)},
      {"out_width", std::int64_t(c.out_width)},
      {"hidden", std::int64_t(c.hidden)},
      {"layers", std::int64_t(c.layers)},
      {"classes", std::int64_t(c.classes)},
      {"variant", m.variant().str()},
      {"tau", m.tau()},
      {"step", st.step},
      {"epoch", st.epoch},
      {"model_seed", std::int64_t(m.seed())},
      {"data_seed", std::int64_t(st.data_seed)},
      {"adam.step", st.adam.step},
      {"adam.lr", st.adam.lr},
      {"adam.beta1", st.adam.beta1},
      {"adam.beta2", st.adam.beta2},
      {"adam.eps", st.adam.eps},
  };
  std::ofstream out(path, std::ios::binary);
  if (!out) throw FormatError("cannot open '" + path + "' for writing");
  BinaryWriter w(out);
  w.raw("CGR1", 4);
  w.u32(kCheckpointVersion);
  w.u32(static_cast<std::uint32_t>(meta.size()));
  for (const auto& [k, v] : meta) {
    w.str(k);
    w.u8(static_cast<std::uint8_t>(v.index()));
    if (auto* i = std::get_if<std::int64_t>(&v)) w.i64(*i);
    else if (auto* d = std::get_if<double>(&v)) w.f64(*d);
    else w.str(std::get<std::string>(v));
  }
  const auto& ps = m.parameters();
  const bool moments = st.adam.m.size() == ps.size();
  w.u32(static_cast<std::uint32_t>(ps.size() * (moments ? 3 : 1)));
  for (std::size_t i = 0; i < ps.size(); ++i) {
    w.str(ps[i].name);
    w.tensor(ps[i].value);
  }
  if (moments)
    for (std::size_t i = 0; i < ps.size(); ++i) {
      w.str("adam.m/" + ps[i].name);
      w.tensor(st.adam.m[i]);
      w.str("adam.v/" + ps[i].name);
      w.tensor(st.adam.v[i]);
    }
  if (!out) throw FormatError("failed writing '" + path + "'");
}

inline TrainingState load_checkpoint(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint '" + path + "'");
  BinaryReader r(in, "checkpoint");
  r.expect_magic("CGR1");
  const auto version = r.u32("version");
  if (version != kCheckpointVersion) throw FormatError("checkpoint: unsupported version " + std::to_string(version));
  std::map<std::string, MetaValue> meta;
  const auto n_meta = r.u32("metadata count");
  for (std::uint32_t i = 0; i < n_meta; ++i) {
    auto key = r.str("metadata key");
    const auto tag = r.u8("metadata type of " + key);
    if (tag == 0) meta[key] = r.i64(key);
    else if (tag == 1) meta[key] = r.f64(key);
    else if (tag == 2) meta[key] = r.str(key);
    else throw FormatError("checkpoint: unknown metadata type for " + key);
  }
  auto get = [&](const std::string& k) -> const MetaValue& {
    auto it = meta.find(k);
    if (it == meta.end()) throw FormatError("checkpoint: missing metadata field " + k);
    return it->second;
  };
  auto geti = [&](const std::string& k) {
    if (auto* v = std::get_if<std::int64_t>(&get(k))) return *v;
    throw FormatError("checkpoint: field " + k + " has the wrong type");
  };
  auto getf = [&](const std::string& k) {
    if (auto* v = std::get_if<double>(&get(k))) return *v;
    throw FormatError("checkpoint: field " + k + " has the wrong type");
  };
  auto gets = [&](const std::string& k) {
    if (auto* v = std::get_if<std::string>(&get(k))) return *v;
    throw FormatError("checkpoint: field " + k + " has the wrong type");
  };

  ModelConfig c;
  c.d_in = static_cast<std::size_t>(geti("d_in"));
  c.width = static_cast<std::size_t>(geti("width"));
  c.out_width = static_cast<std::size_t>(geti("out_width"));
  c.hidden = static_cast<std::size_t>(geti("hidden"));
  c.layers = static_cast<std::size_t>(geti("layers"));
  c.classes = static_cast<std::size_t>(geti("classes"));
  TrainingState st{CGRModel(c, static_cast<std::uint64_t>(geti("model_seed")), Variant::parse(gets("variant"))), AdamState{}};
  st.model.set_tau(getf("tau"));
  st.step = geti("step");
  st.epoch = geti("epoch");
  st.data_seed = static_cast<std::uint64_t>(geti("data_seed"));
  st.adam.step = geti("adam.step");
  st.adam.lr = getf("adam.lr");
  st.adam.beta1 = getf("adam.beta1");
  st.adam.beta2 = getf("adam.beta2");
  st.adam.eps = getf("adam.eps");

  std::map<std::string, Tensor> tensors;
  const auto n_tensors = r.u32("tensor count");
  for (std::uint32_t i = 0; i < n_tensors; ++i) {
    auto name = r.str("tensor name");
    tensors[name] = r.tensor(name);
  }
  r.expect_end();

  auto take = [&](const std::string& name, const Shape& shape) {
    auto it = tensors.find(name);
    if (it == tensors.end()) throw FormatError("checkpoint: missing tensor " + name);
    if (it->second.shape() != shape)
      throw FormatError("checkpoint: tensor " + name + " has shape " + shape_str(it->second.shape()) + ", expected " +
                        shape_str(shape));
    return it->second;
  };
  auto& ps = st.model.parameters();
  for (std::size_t i = 0; i < ps.size(); ++i) ps[i].value = take(ps[i].name, ps[i].value.shape());
  if (tensors.contains("adam.m/" + ps[0].name)) {
    st.adam.init(ps);
    st.adam.step = geti("adam.step");
    for (std::size_t i = 0; i < ps.size(); ++i) {
      st.adam.m[i] = take("adam.m/" + ps[i].name, ps[i].value.shape());
      st.adam.v[i] = take("adam.v/" + ps[i].name, ps[i].value.shape());
    }
  }
  return st;
}

}  // namespace cgr::io
