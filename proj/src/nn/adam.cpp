#include "skdnet/nn/adam.hpp"

#include <cmath>

#include "skdnet/errors.hpp"

namespace skd::nn {

double StepDecay::lr(int epoch) const {
  return base_lr * std::pow(gamma, epoch / step_epochs);
}

template <typename T>
Adam<T>::Adam(const std::vector<Parameter<T>>& params, AdamConfig config) : config_(config) {
  for (const auto& p : params) {
    m_.emplace_back(p.value.size(), 0.0);
    v_.emplace_back(p.value.size(), 0.0);
  }
}

template <typename T>
void Adam<T>::step(std::vector<Parameter<T>>& params, double lr) {
  if (params.size() != m_.size()) throw ValidationError("optimizer state does not match the parameter list");
  ++t_;
  const double b1 = config_.beta1, b2 = config_.beta2;
  const double c1 = 1.0 - std::pow(b1, t_);
  const double c2 = 1.0 - std::pow(b2, t_);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto& p = params[i];
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double g = p.grad[k];
      m[k] = b1 * m[k] + (1.0 - b1) * g;
      v[k] = b2 * v[k] + (1.0 - b2) * g * g;
      const double mh = m[k] / c1, vh = v[k] / c2;
      p.value[k] = static_cast<T>(p.value[k] - lr * mh / (std::sqrt(vh) + config_.eps));
    }
  }
}

template class Adam<float>;
template class Adam<double>;

}  // namespace skd::nn
