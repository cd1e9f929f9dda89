#pragma once

#include <vector>

#include "skdnet/nn/model.hpp"

namespace skd::nn {

/// Base rate multiplied by gamma every `step_epochs` epochs.
struct StepDecay {
  double base_lr = 1e-3;
  double gamma = 0.9;
  int step_epochs = 50;

  /// `epoch` is zero-based.
  double lr(int epoch) const;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// Adam with bias correction. Moment buffers are laid out like the
/// parameter list they were created for.
template <typename T>
class Adam {
 public:
  Adam() = default;
  explicit Adam(const std::vector<Parameter<T>>& params, AdamConfig config = {});

  /// One update with step counter t (1-based, incremented internally) and
  /// learning rate `lr`. Gradients are read from Parameter::grad.
  void step(std::vector<Parameter<T>>& params, double lr);
  int steps() const { return t_; }

 private:
  AdamConfig config_;
  std::vector<std::vector<double>> m_;
  std::vector<std::vector<double>> v_;
  int t_ = 0;
};

extern template class Adam<float>;
extern template class Adam<double>;

}  // namespace skd::nn
