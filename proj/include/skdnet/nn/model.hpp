#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include <json.hpp>

#include "skdnet/nn/ops.hpp"

namespace skd::nn {

/// Architecture of one branch: early CNN -> patch embedding -> ViT blocks
/// -> shared classifier head.
struct ModelConfig {
  int window = 12;
  int patch = 3;
  int in_channels = 9;
  std::array<int, 3> conv_channels{16, 32, 32};
  int dim = 64;
  int depth = 2;
  int mlp_ratio = 2;
  int num_classes = 3;

  int grid() const { return window / patch; }
  int num_patches() const { return grid() * grid(); }
  int tokens() const { return num_patches() + 1; }
  /// Throws ConfigError (e.g. window not divisible by patch).
  void validate() const;

  nlohmann::ordered_json to_json() const;
  static ModelConfig from_json(const nlohmann::json& j);
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

template <typename T>
struct Parameter {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
};

/// Outputs of one sample: class logits from the cls token and per-patch
/// logits from the same head applied to every patch token.
struct ForwardOutput {
  int num_classes = 0;
  int num_patches = 0;
  std::vector<double> cls_logits;    // M
  std::vector<double> patch_logits;  // N * M, row-major

  std::vector<double> cls_probabilities() const;
  int cls_argmax() const;
  int patch_argmax(int n) const;
};

/// Index of the largest entry; ties go to the lower index.
int argmax(std::span<const double> values);
std::vector<double> softmax(std::span<const double> logits);

inline constexpr int kConvLayers = 3;

template <typename T>
class Model {
 public:
  using BnStates = std::array<BatchNormState<T>, kConvLayers>;

  struct Graph {
    Var cls_logits;    // [B, M]
    Var patch_logits;  // [B, N, M]
    std::vector<Var> params;
  };

  Model() = default;
  Model(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  std::vector<Parameter<T>>& parameters() { return params_; }
  const std::vector<Parameter<T>>& parameters() const { return params_; }
  Parameter<T>& param(const std::string& name);
  const Parameter<T>& param(const std::string& name) const;
  BnStates& bn_states() { return bn_; }
  const BnStates& bn_states() const { return bn_; }

  /// Records the forward pass of input [B, s, s, C]. In training mode batch
  /// norm uses batch statistics and updates `bn`.
  Graph build(Tape<T>& tape, const Tensor<T>& input, bool training, BnStates& bn) const;
  /// Training-mode graph using (and updating) the model's own statistics.
  Graph build_training(Tape<T>& tape, const Tensor<T>& input);
  /// Eval-mode forward without gradient recording. Thread-safe.
  std::vector<ForwardOutput> infer(const Tensor<T>& input) const;

  /// Adds the parameter-leaf gradients of `graph` into Parameter::grad.
  void accumulate_gradients(Tape<T>& tape, const Graph& graph);
  void zero_gradients();

  /// Same values converted to another precision.
  template <typename U>
  Model<U> cast() const {
    Model<U> out;
    out.config_ = config_;
    for (const auto& p : params_) out.params_.push_back({p.name, p.value.template cast<U>(), p.grad.template cast<U>()});
    for (int i = 0; i < kConvLayers; ++i) {
      out.bn_[i].running_mean = bn_[i].running_mean.template cast<U>();
      out.bn_[i].running_var = bn_[i].running_var.template cast<U>();
    }
    return out;
  }

  /// Parameters plus batch-norm running statistics, in a fixed order.
  std::vector<std::pair<std::string, const Tensor<T>*>> named_tensors() const;
  std::vector<std::pair<std::string, Tensor<T>*>> named_tensors();

 private:
  template <typename U>
  friend class Model;

  std::size_t index_of(const std::string& name) const;

  ModelConfig config_;
  std::vector<Parameter<T>> params_;
  BnStates bn_;
};

extern template class Model<float>;
extern template class Model<double>;

}  // namespace skd::nn
