#include "skdnet/nn/model.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "skdnet/errors.hpp"
#include "skdnet/rng.hpp"

namespace skd::nn {

void ModelConfig::validate() const {
  if (window < 3) throw ConfigError(fmt::format("window size {} is below the 3x3 convolution support", window));
  if (patch <= 0 || window % patch != 0)
    throw ConfigError(fmt::format("window size {} is not divisible by patch size {}", window, patch));
  if (in_channels <= 0 || dim <= 0 || depth < 0 || mlp_ratio <= 0 || num_classes < 2)
    throw ConfigError("model dimensions must be positive and num_classes >= 2");
  for (int c : conv_channels)
    if (c <= 0) throw ConfigError("conv channel counts must be positive");
}

nlohmann::ordered_json ModelConfig::to_json() const {
  return {{"window", window},       {"patch", patch}, {"in_channels", in_channels}, {"conv_channels", conv_channels},
          {"dim", dim},             {"depth", depth}, {"mlp_ratio", mlp_ratio},     {"num_classes", num_classes}};
}

ModelConfig ModelConfig::from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.window = j.value("window", c.window);
  c.patch = j.value("patch", c.patch);
  c.in_channels = j.value("in_channels", c.in_channels);
  c.conv_channels = j.value("conv_channels", c.conv_channels);
  c.dim = j.value("dim", c.dim);
  c.depth = j.value("depth", c.depth);
  c.mlp_ratio = j.value("mlp_ratio", c.mlp_ratio);
  c.num_classes = j.value("num_classes", c.num_classes);
  return c;
}

int argmax(std::span<const double> values) {
  return static_cast<int>(std::max_element(values.begin(), values.end()) - values.begin());
}

std::vector<double> softmax(std::span<const double> logits) {
  const double mx = *std::max_element(logits.begin(), logits.end());
  std::vector<double> out(logits.size());
  double sum = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) sum += out[i] = std::exp(logits[i] - mx);
  for (double& v : out) v /= sum;
  return out;
}

std::vector<double> ForwardOutput::cls_probabilities() const { return softmax(cls_logits); }
int ForwardOutput::cls_argmax() const { return argmax(cls_logits); }
int ForwardOutput::patch_argmax(int n) const {
  return argmax(std::span<const double>(patch_logits).subspan(static_cast<std::size_t>(n) * num_classes, num_classes));
}

// ---------------------------------------------------------------------------

namespace {

enum class Init { normal, zeros, ones };

// Truncated normal (|z| <= 2) with std 0.02.
template <typename T>
void truncated_normal(Tensor<T>& t, CounterRng& rng) {
  for (auto& v : t.data) {
    double z = rng.normal();
    while (std::abs(z) > 2.0) z = rng.normal();
    v = static_cast<T>(0.02 * z);
  }
}

}  // namespace

template <typename T>
Model<T>::Model(const ModelConfig& config, std::uint64_t seed) : config_(config) {
  config_.validate();
  const int d = config_.dim;
  std::vector<std::tuple<std::string, std::vector<int>, Init>> spec;
  int cin = config_.in_channels;
  for (int i = 0; i < kConvLayers; ++i) {
    const int cout = config_.conv_channels[i];
    spec.emplace_back(fmt::format("conv{}.weight", i + 1), std::vector<int>{9 * cin, cout}, Init::normal);
    spec.emplace_back(fmt::format("conv{}.bias", i + 1), std::vector<int>{cout}, Init::zeros);
    spec.emplace_back(fmt::format("bn{}.gamma", i + 1), std::vector<int>{cout}, Init::ones);
    spec.emplace_back(fmt::format("bn{}.beta", i + 1), std::vector<int>{cout}, Init::zeros);
    bn_[i] = BatchNormState<T>(cout);
    cin = cout;
  }
  const int p = config_.patch;
  spec.emplace_back("embed.weight", std::vector<int>{p * p * cin, d}, Init::normal);
  spec.emplace_back("embed.bias", std::vector<int>{d}, Init::zeros);
  spec.emplace_back("cls", std::vector<int>{d}, Init::normal);
  spec.emplace_back("pos", std::vector<int>{config_.tokens(), d}, Init::normal);
  const int hidden = d * config_.mlp_ratio;
  for (int l = 0; l < config_.depth; ++l) {
    const auto n = [l](const char* s) { return fmt::format("block{}.{}", l, s); };
    spec.emplace_back(n("ln1.gamma"), std::vector<int>{d}, Init::ones);
    spec.emplace_back(n("ln1.beta"), std::vector<int>{d}, Init::zeros);
    spec.emplace_back(n("wq"), std::vector<int>{d, d}, Init::normal);
    spec.emplace_back(n("wk"), std::vector<int>{d, d}, Init::normal);
    spec.emplace_back(n("wv"), std::vector<int>{d, d}, Init::normal);
    spec.emplace_back(n("proj.weight"), std::vector<int>{d, d}, Init::normal);
    spec.emplace_back(n("proj.bias"), std::vector<int>{d}, Init::zeros);
    spec.emplace_back(n("ln2.gamma"), std::vector<int>{d}, Init::ones);
    spec.emplace_back(n("ln2.beta"), std::vector<int>{d}, Init::zeros);
    spec.emplace_back(n("mlp1.weight"), std::vector<int>{d, hidden}, Init::normal);
    spec.emplace_back(n("mlp1.bias"), std::vector<int>{hidden}, Init::zeros);
    spec.emplace_back(n("mlp2.weight"), std::vector<int>{hidden, d}, Init::normal);
    spec.emplace_back(n("mlp2.bias"), std::vector<int>{d}, Init::zeros);
  }
  spec.emplace_back("norm.gamma", std::vector<int>{d}, Init::ones);
  spec.emplace_back("norm.beta", std::vector<int>{d}, Init::zeros);
  spec.emplace_back("head.weight", std::vector<int>{d, config_.num_classes}, Init::normal);
  spec.emplace_back("head.bias", std::vector<int>{config_.num_classes}, Init::zeros);

  const CounterRng root(seed, 0x1417);
  for (std::size_t i = 0; i < spec.size(); ++i) {
    auto& [name, shape, init] = spec[i];
    Parameter<T> prm{name, Tensor<T>(shape, T(0)), Tensor<T>(shape, T(0))};
    if (init == Init::ones) prm.value.fill(T(1));
    if (init == Init::normal) {
      CounterRng rng = root.substream(i);
      truncated_normal(prm.value, rng);
    }
    params_.push_back(std::move(prm));
  }
}

template <typename T>
std::size_t Model<T>::index_of(const std::string& name) const {
  for (std::size_t i = 0; i < params_.size(); ++i)
    if (params_[i].name == name) return i;
  throw ValidationError(fmt::format("model has no parameter '{}'", name));
}

template <typename T>
Parameter<T>& Model<T>::param(const std::string& name) {
  return params_[index_of(name)];
}

template <typename T>
const Parameter<T>& Model<T>::param(const std::string& name) const {
  return params_[index_of(name)];
}

template <typename T>
typename Model<T>::Graph Model<T>::build(Tape<T>& tape, const Tensor<T>& input, bool training, BnStates& bn) const {
  const auto& c = config_;
  if (input.ndim() != 4 || input.dim(1) != c.window || input.dim(2) != c.window || input.dim(3) != c.in_channels)
    throw ConfigError(fmt::format("model expects input [B, {}, {}, {}], got {}", c.window, c.window, c.in_channels,
                                  input.shape_string()));
  Graph g;
  g.params.reserve(params_.size());
  for (const auto& p : params_) g.params.push_back(tape.leaf(p.value));
  std::size_t next = 0;
  // Parameters are consumed in construction order.
  const auto take = [&] { return g.params[next++]; };

  Var x = tape.constant(input);
  for (int i = 0; i < kConvLayers; ++i) {
    tape.set_scope(fmt::format("conv{}", i + 1));
    const Var w = take(), b = take(), gamma = take(), beta = take();
    x = ops::conv3x3(tape, x, w, b);
    x = ops::batch_norm(tape, x, gamma, beta, bn[i], training);
    x = ops::relu(tape, x);
  }
  tape.set_scope("patch_embed");
  const Var ew = take(), eb = take(), cls = take(), pos = take();
  x = ops::patchify(tape, x, c.patch);
  x = ops::linear(tape, x, ew, eb);
  x = ops::prepend_token(tape, x, cls);
  x = ops::add_positional(tape, x, pos);
  for (int l = 0; l < c.depth; ++l) {
    tape.set_scope(fmt::format("block{}", l));
    const Var g1 = take(), b1 = take(), wq = take(), wk = take(), wv = take(),
              pw = take(), pb = take(), g2 = take(), b2 = take(),
              m1w = take(), m1b = take(), m2w = take(), m2b = take();
    Var h = ops::layer_norm(tape, x, g1, b1);
    const Var q = ops::matmul(tape, h, wq);
    const Var k = ops::matmul(tape, h, wk);
    const Var v = ops::matmul(tape, h, wv);
    const Var a = ops::attention(tape, q, k, v);
    x = ops::add(tape, x, ops::linear(tape, a, pw, pb));
    h = ops::layer_norm(tape, x, g2, b2);
    h = ops::gelu(tape, ops::linear(tape, h, m1w, m1b));
    x = ops::add(tape, x, ops::linear(tape, h, m2w, m2b));
  }
  tape.set_scope("head");
  const Var ng = take(), nb = take(), hw = take(), hb = take();
  x = ops::layer_norm(tape, x, ng, nb);
  const Var logits = ops::linear(tape, x, hw, hb);
  g.cls_logits = ops::slice_tokens(tape, logits, 0, 1);
  g.patch_logits = ops::slice_tokens(tape, logits, 1, c.tokens());
  tape.set_scope("");
  return g;
}

template <typename T>
typename Model<T>::Graph Model<T>::build_training(Tape<T>& tape, const Tensor<T>& input) {
  return build(tape, input, true, bn_);
}

template <typename T>
std::vector<ForwardOutput> Model<T>::infer(const Tensor<T>& input) const {
  Tape<T> tape;
  tape.set_grad_enabled(false);
  BnStates bn = bn_;
  const Graph g = build(tape, input, false, bn);
  const auto& cls = tape.value(g.cls_logits);
  const auto& patches = tape.value(g.patch_logits);
  const int B = input.dim(0), M = config_.num_classes, N = config_.num_patches();
  std::vector<ForwardOutput> out(static_cast<std::size_t>(B));
  for (int b = 0; b < B; ++b) {
    auto& o = out[static_cast<std::size_t>(b)];
    o.num_classes = M;
    o.num_patches = N;
    o.cls_logits.assign(cls.data.begin() + b * M, cls.data.begin() + (b + 1) * M);
    o.patch_logits.assign(patches.data.begin() + static_cast<std::ptrdiff_t>(b) * N * M,
                          patches.data.begin() + static_cast<std::ptrdiff_t>(b + 1) * N * M);
  }
  return out;
}

template <typename T>
void Model<T>::accumulate_gradients(Tape<T>& tape, const Graph& graph) {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    const Var v = graph.params[i];
    if (!tape.has_grad(v)) continue;
    params_[i].grad.mat() += tape.grad(v).mat();
  }
}

template <typename T>
void Model<T>::zero_gradients() {
  for (auto& p : params_) p.grad.fill(T(0));
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> Model<T>::named_tensors() const {
  std::vector<std::pair<std::string, const Tensor<T>*>> out;
  for (const auto& p : params_) out.emplace_back(p.name, &p.value);
  for (int i = 0; i < kConvLayers; ++i) {
    out.emplace_back(fmt::format("bn{}.running_mean", i + 1), &bn_[i].running_mean);
    out.emplace_back(fmt::format("bn{}.running_var", i + 1), &bn_[i].running_var);
  }
  return out;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> Model<T>::named_tensors() {
  std::vector<std::pair<std::string, Tensor<T>*>> out;
  for (auto& p : params_) out.emplace_back(p.name, &p.value);
  for (int i = 0; i < kConvLayers; ++i) {
    out.emplace_back(fmt::format("bn{}.running_mean", i + 1), &bn_[i].running_mean);
    out.emplace_back(fmt::format("bn{}.running_var", i + 1), &bn_[i].running_var);
  }
  return out;
}

template class Model<float>;
template class Model<double>;

}  // namespace skd::nn
