#pragma once

#include <array>
#include <cmath>
#include <cstdint>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "cgr/causal_blocks.hpp"

namespace cgr {

inline constexpr std::size_t kBlocksPerLayer = 3;
inline constexpr double kSharpenFloor = 1e-12;

enum class BlockKind : std::size_t { NoConfounder = 0, BackDoor = 1, FrontDoor = 2 };

inline const char* block_name(std::size_t i) {
  static constexpr const char* names[] = {"no_confounder", "back_door", "front_door"};
  return i < kBlocksPerLayer ? names[i] : "?";
}

/// softmax(w) followed by temperature sharpening:
/// out_i = alpha_i^(1/tau) / sum_j alpha_j^(1/tau), alpha clamped at 1e-12 before the log.
inline std::vector<double> sharpening_softmax(std::span<const double> w, double tau) {
  if (!(tau > 0.0)) throw ContractError("sharpening_softmax: tau must be positive");
  if (w.empty()) throw ContractError("sharpening_softmax: empty weight vector");
  std::vector<double> alpha(w.size());
  softmax_row_inplace(w, alpha);
  if (tau == 1.0) return alpha;
  std::vector<double> logits(w.size());
  for (std::size_t i = 0; i < w.size(); ++i) logits[i] = std::log(std::max(alpha[i], kSharpenFloor)) / tau;
  std::vector<double> out(w.size());
  softmax_row_inplace(logits, out);
  return out;
}

/// Differentiable form of sharpening_softmax on a [1 x n] node.
inline Var sharpening_softmax(Var w, double tau) {
  if (!(tau > 0.0)) throw ContractError("sharpening_softmax: tau must be positive");
  Var alpha = softmax_rows(w);
  if (tau == 1.0) return alpha;
  return softmax_rows(scale(log_clamped(alpha, kSharpenFloor), 1.0 / tau));
}

/// Which blocks participate and whether the temperature is applied; covers
/// the full model and its ablations.
struct Variant {
  std::array<bool, kBlocksPerLayer> active{true, true, true};
  bool sharpen = true;

  static Variant full() { return {}; }
  static Variant one_block(std::size_t i) {
    if (i >= kBlocksPerLayer) throw ContractError("one_block: block index out of range");
    Variant v;
    v.active = {false, false, false};
    v.active[i] = true;
    return v;
  }
  static Variant two_blocks(std::size_t i, std::size_t j) {
    if (i >= kBlocksPerLayer || j >= kBlocksPerLayer || i == j) throw ContractError("two_blocks: need two distinct block indices");
    Variant v;
    v.active = {false, false, false};
    v.active[i] = v.active[j] = true;
    return v;
  }
  static Variant no_sharpen() {
    Variant v;
    v.sharpen = false;
    return v;
  }

  std::size_t active_count() const {
    std::size_t n = 0;
    for (bool a : active) n += a;
    return n;
  }

  // Text form: full | one_block:<i> | two_blocks:<i>,<j> | no_sharpen
  static Variant parse(const std::string& text) {
    auto digit = [&](char ch) -> std::size_t {
      if (ch < '0' || ch > '2') throw ContractError("variant: bad block index in '" + text + "'");
      return static_cast<std::size_t>(ch - '0');
    };
    if (text == "full") return full();
    if (text == "no_sharpen") return no_sharpen();
    if (text.rfind("one_block:", 0) == 0 && text.size() == 11) return one_block(digit(text[10]));
    if (text.rfind("two_blocks:", 0) == 0 && text.size() == 14 && text[12] == ',')
      return two_blocks(digit(text[11]), digit(text[13]));
    throw ContractError("variant: unrecognised '" + text + "'");
  }

  std::string str() const {
    if (!sharpen) return "no_sharpen";
    std::vector<std::size_t> on;
    for (std::size_t i = 0; i < kBlocksPerLayer; ++i)
      if (active[i]) on.push_back(i);
    if (on.size() == 3) return "full";
    if (on.size() == 1) return "one_block:" + std::to_string(on[0]);
    return "two_blocks:" + std::to_string(on[0]) + "," + std::to_string(on[1]);
  }

  bool operator==(const Variant&) const = default;
};

/// Block weights over the active blocks; inactive blocks get exactly 0 and a
/// lone active block gets exactly 1.
inline std::array<double, kBlocksPerLayer> masked_block_weights(std::span<const double> w, const Variant& v, double tau) {
  std::array<double, kBlocksPerLayer> out{};
  std::vector<double> sub;
  for (std::size_t i = 0; i < kBlocksPerLayer; ++i)
    if (v.active[i]) sub.push_back(w[i]);
  if (sub.size() == 1) {
    for (std::size_t i = 0; i < kBlocksPerLayer; ++i) out[i] = v.active[i] ? 1.0 : 0.0;
    return out;
  }
  const auto norm = sharpening_softmax(sub, v.sharpen ? tau : 1.0);
  for (std::size_t i = 0, k = 0; i < kBlocksPerLayer; ++i)
    if (v.active[i]) out[i] = norm[k++];
  return out;
}

struct ModelConfig {
  std::size_t d_in = 16;
  std::size_t width = 64;      // d, attention width
  std::size_t out_width = 64;  // d_c, block output width
  std::size_t hidden = 64;     // MLP hidden width
  std::size_t layers = 2;      // L
  std::size_t classes = 4;

  void validate() const {
    if (!d_in || !width || !out_width || !hidden || !layers || classes < 2)
      throw ContractError("model config: widths and layer count must be positive and classes >= 2");
  }
  bool operator==(const ModelConfig&) const = default;
};

struct CausalLayer {
  NoConfounderBlock no_confounder;
  BackDoorBlock back_door;
  FrontDoorBlock front_door;
  Parameter* block_weights = nullptr;  // w^(l), [1 x 3]
};

/// Token streams carried between layers, one per block type.
struct Streams {
  std::array<Tokens, kBlocksPerLayer> x;
};

struct LayerTrace {
  std::array<double, kBlocksPerLayer> block_weights{};
  std::size_t argmax = 0;
};

struct RoutingTrace {
  std::size_t example_id = 0;
  std::vector<LayerTrace> layers;
  std::vector<double> layer_weights;
};

/// Stacked causal layers with sufficient-cause routing and a classifier head.
class CGRModel {
 public:
  CGRModel(const ModelConfig& config, std::uint64_t seed, Variant variant = Variant::full())
      : config_(config), variant_(variant), seed_(seed) {
    config_.validate();
    std::mt19937_64 rng(seed);
    const auto& c = config_;
    for (std::size_t l = 0; l < c.layers; ++l) {
      const std::string name = "layer" + std::to_string(l);
      const std::size_t in = l == 0 ? c.d_in : c.width;
      CausalLayer layer;
      layer.no_confounder = NoConfounderBlock::create(store_, name + ".ncf", in, c.width, c.hidden, c.out_width, rng);
      layer.back_door = BackDoorBlock::create(store_, name + ".bd", in, c.d_in, c.width, c.hidden, c.out_width, rng);
      layer.front_door = FrontDoorBlock::create(store_, name + ".fd", in, c.d_in, c.width, c.hidden, c.out_width, rng);
      layer.block_weights = &store_.add(name + ".block_weights", Tensor({1, kBlocksPerLayer}, 1.0 / 3.0));
      layers_.push_back(layer);
    }
    layer_weights_ = &store_.add("layer_weights", Tensor({1, c.layers}, 1.0 / static_cast<double>(c.layers)));
    head_ = make_mlp(store_, "head", {c.out_width, c.hidden, c.classes}, rng);
  }

  CGRModel(CGRModel&&) noexcept = default;
  CGRModel& operator=(CGRModel&&) noexcept = default;

  const ModelConfig& config() const noexcept { return config_; }
  const Variant& variant() const noexcept { return variant_; }
  void set_variant(const Variant& v) { variant_ = v; }
  std::uint64_t seed() const noexcept { return seed_; }

  double tau() const noexcept { return tau_; }
  void set_tau(double tau) {
    if (!(tau > 0.0 && tau <= 1.0)) throw ContractError("temperature must lie in (0, 1]");
    tau_ = tau;
  }
  // Temperature actually used by the routing softmax.
  double routing_tau() const noexcept { return variant_.sharpen ? tau_ : 1.0; }

  ParameterStore& parameters() noexcept { return store_; }
  const ParameterStore& parameters() const noexcept { return store_; }
  const std::vector<CausalLayer>& layers() const noexcept { return layers_; }
  std::vector<CausalLayer>& layers() noexcept { return layers_; }
  Parameter& layer_weights() noexcept { return *layer_weights_; }
  const Parameter& layer_weights() const noexcept { return *layer_weights_; }
  const MlpParams& head() const noexcept { return head_; }

  RoutingTrace trace(std::size_t example_id = 0) const {
    RoutingTrace t;
    t.example_id = example_id;
    for (const auto& layer : layers_) {
      LayerTrace lt;
      lt.block_weights = masked_block_weights(layer.block_weights->value.storage(), variant_, tau_);
      lt.argmax = static_cast<std::size_t>(std::max_element(lt.block_weights.begin(), lt.block_weights.end()) -
                                           lt.block_weights.begin());
      t.layers.push_back(lt);
    }
    t.layer_weights = config_.layers == 1 ? std::vector<double>{1.0}
                                          : sharpening_softmax(layer_weights_->value.storage(), routing_tau());
    return t;
  }

 private:
  ModelConfig config_;
  Variant variant_;
  std::uint64_t seed_ = 0;
  double tau_ = 1.0;
  ParameterStore store_;
  std::vector<CausalLayer> layers_;
  Parameter* layer_weights_ = nullptr;
  MlpParams head_;
};

/// Per-tape projections of the dictionary, one per front-door block.
struct DictionaryCache {
  std::vector<std::optional<KeyValues>> per_layer;

  DictionaryCache(Tape& tape, const CGRModel& model, const GlobalDictionary& dict) {
    if (dict.width() != model.config().d_in)
      throw DimensionError("dictionary width " + std::to_string(dict.width()) + " does not match d_in " +
                           std::to_string(model.config().d_in));
    for (const auto& layer : model.layers())
      per_layer.push_back(model.variant().active[2] ? std::optional(project_dictionary(tape, dict, layer.front_door))
                                                    : std::nullopt);
  }
};

struct LayerResult {
  Var output;  // C^(l), [B x d_c]
  std::array<std::optional<Var>, kBlocksPerLayer> block_outputs;
  Streams next;
};

/// Weighted sum of the active `parts` using the routing weights taken from
/// the matching entries of `w`. A single active part is returned unchanged.
inline Var route(std::span<const std::optional<Var>> parts, Var w, double tau) {
  std::vector<std::size_t> on;
  for (std::size_t i = 0; i < parts.size(); ++i)
    if (parts[i]) on.push_back(i);
  if (on.empty()) throw ContractError("route: no active inputs");
  if (on.size() == 1) return *parts[on[0]];
  Var sub = element(w, 0, on[0]);
  for (std::size_t k = 1; k < on.size(); ++k) sub = concat_cols(sub, element(w, 0, on[k]));
  Var weights = sharpening_softmax(sub, tau);
  Var acc = scale_by(*parts[on[0]], element(weights, 0, 0));
  for (std::size_t k = 1; k < on.size(); ++k) acc = add(acc, scale_by(*parts[on[k]], element(weights, 0, k)));
  return acc;
}

/// One causal layer: the active blocks, their routed combination, and the
/// streams for the next layer (E_X(M) for the no-confounder stream, E_X(X)
/// for the back-door and front-door streams). Streams are only materialised
/// when a later layer consumes them.
inline LayerResult layer_forward(const CGRModel& model, std::size_t l, const Streams& in, const Tokens& z,
                                 const DictionaryCache& dict) {
  const CausalLayer& layer = model.layers().at(l);
  const Variant& v = model.variant();
  const bool keep = l + 1 < model.config().layers;
  Tape& tape = *z.rows.tape;
  LayerResult r;
  r.next = in;
  auto take = [&](std::size_t i, BlockOutput b) {
    r.block_outputs[i] = b.output;
    if (b.stream) r.next.x[i] = *b.stream;
  };
  if (v.active[0]) take(0, ncf_forward(in.x[0], layer.no_confounder, keep));
  if (v.active[1]) take(1, bd_forward(in.x[1], z, layer.back_door, keep));
  if (v.active[2]) take(2, fd_forward(in.x[2], *dict.per_layer.at(l), layer.front_door, keep));
  r.output = route(r.block_outputs, tape.param(*layer.block_weights), model.routing_tau());
  return r;
}

struct EncodeResult {
  Var features;  // C, [B x d_c]
  std::vector<LayerResult> layers;
};

/// Runs the layer stack on a batch of examples and aggregates the layer outputs.
inline EncodeResult encode(const CGRModel& model, const Tokens& x, const Tokens& z, const DictionaryCache& dict) {
  const auto& c = model.config();
  if (x.width() != c.d_in)
    throw DimensionError("input token width " + std::to_string(x.width()) + " but model expects " + std::to_string(c.d_in));
  if (z.width() != c.d_in)
    throw DimensionError("confounder token width " + std::to_string(z.width()) + " but model expects " +
                         std::to_string(c.d_in));
  if (x.batch() != z.batch()) throw DimensionError("input and confounder batch sizes differ");
  EncodeResult res;
  Streams streams{{x, x, x}};
  std::vector<std::optional<Var>> outs;
  for (std::size_t l = 0; l < c.layers; ++l) {
    res.layers.push_back(layer_forward(model, l, streams, z, dict));
    streams = res.layers.back().next;
    outs.push_back(res.layers.back().output);
  }
  res.features = route(outs, x.rows.tape->param(model.layer_weights()), model.routing_tau());
  return res;
}

inline EncodeResult encode(const CGRModel& model, Var x, Var z, const DictionaryCache& dict) {
  return encode(model, Tokens::single(x), Tokens::single(z), dict);
}

inline Var head_logits(const CGRModel& model, Var features) { return mlp_forward(features, model.head()); }

struct Example {
  Tensor x;  // [n_x x d_in]
  Tensor z;  // [n_z x d_in]
  int label = 0;
};

namespace detail {

inline Tensor stack_tokens(std::span<const Example> batch, bool confounder) {
  const Tensor& first = confounder ? batch[0].z : batch[0].x;
  const std::size_t n = first.rows(), d = first.cols();
  Tensor out = Tensor::matrix(batch.size() * n, d);
  auto& dst = out.storage();
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& src = (confounder ? batch[b].z : batch[b].x).storage();
    std::copy(src.begin(), src.end(), dst.begin() + static_cast<std::ptrdiff_t>(b * n * d));
  }
  return out;
}

}  // namespace detail

/// Logits [b x classes] for a batch, sharing dictionary projections. Examples
/// with equal token counts run as one stacked pass; mixed sizes fall back to
/// one pass per example.
inline Var batch_logits(const CGRModel& model, Tape& tape, std::span<const Example> batch, const GlobalDictionary& dict) {
  if (batch.empty()) throw ContractError("batch_logits: empty batch");
  bool uniform = true;
  for (const auto& ex : batch) {
    if (ex.z.empty()) throw ContractError("example has no confounder tokens; the back-door block requires them");
    if (ex.x.empty()) throw ContractError("example has no input tokens");
    if (ex.x.rank() != 2 || ex.z.rank() != 2) throw DimensionError("example tokens must be matrices");
    uniform = uniform && ex.x.shape() == batch[0].x.shape() && ex.z.shape() == batch[0].z.shape();
  }
  DictionaryCache cache(tape, model, dict);
  if (uniform) {
    Tokens x(tape.constant(detail::stack_tokens(batch, false)), batch[0].x.rows());
    Tokens z(tape.constant(detail::stack_tokens(batch, true)), batch[0].z.rows());
    return head_logits(model, encode(model, x, z, cache).features);
  }
  std::vector<Var> feats;
  feats.reserve(batch.size());
  for (const auto& ex : batch) feats.push_back(encode(model, tape.constant(ex.x), tape.constant(ex.z), cache).features);
  return head_logits(model, stack_rows(feats));
}

struct Prediction {
  std::vector<double> probabilities;
  RoutingTrace trace;
};

/// Class probabilities for one example plus the routing weights used.
inline Prediction model_forward(const CGRModel& model, const Example& ex, const GlobalDictionary& dict,
                                std::size_t example_id = 0) {
  Tape tape;
  Var logits = batch_logits(model, tape, std::span<const Example>(&ex, 1), dict);
  Var probs = softmax_rows(logits);
  return {std::vector<double>(probs.value().storage()), model.trace(example_id)};
}

/// tau(step) = max(tau_min, exp(-rate * step)), with the rate chosen so the
/// floor is reached at `fraction_to_floor` of the run.
struct TauSchedule {
  double tau_min = 0.05;
  double fraction_to_floor = 0.8;
  std::int64_t total_steps = 1;

  double rate() const {
    const double horizon = std::max(1.0, fraction_to_floor * static_cast<double>(total_steps));
    return -std::log(tau_min) / horizon;
  }
  double operator()(std::int64_t step) const {
    if (step < 0) throw ContractError("tau schedule: negative step");
    // exp() can land an ulp above the floor exactly at the horizon.
    if (static_cast<double>(step) >= fraction_to_floor * static_cast<double>(total_steps)) return tau_min;
    return std::max(tau_min, std::exp(-rate() * static_cast<double>(step)));
  }
};

}  // namespace cgr
