#ifndef MMNAS_ADAM_HPP
#define MMNAS_ADAM_HPP

#include <cmath>
#include <cstdint>

#include "mmnas/tensor.hpp"

namespace mmnas {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

template <class T>
struct AdamState {
  Tensor<T> m;
  Tensor<T> v;
  std::int64_t step = 0;
};

// Bias-corrected Adam update of `param` in place.
template <class T>
void adam_step(Tensor<T>& param, const Tensor<T>& grad, AdamState<T>& state,
               const AdamConfig& cfg) {
  if (grad.shape() != param.shape())
    throw ShapeError("adam_step: gradient " + shape_str(grad.shape()) + " vs parameter " +
                     shape_str(param.shape()));
  if (state.m.shape() != param.shape()) {
    state.m = Tensor<T>(param.shape());
    state.v = Tensor<T>(param.shape());
  }
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, static_cast<double>(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < param.size(); ++i) {
    const double g = grad[i];
    const double m = cfg.beta1 * state.m[i] + (1.0 - cfg.beta1) * g;
    const double v = cfg.beta2 * state.v[i] + (1.0 - cfg.beta2) * g * g;
    state.m[i] = static_cast<T>(m);
    state.v[i] = static_cast<T>(v);
    param[i] = static_cast<T>(param[i] - cfg.lr * (m / c1) / (std::sqrt(v / c2) + cfg.eps));
  }
}

}  // namespace mmnas

#endif  // MMNAS_ADAM_HPP
