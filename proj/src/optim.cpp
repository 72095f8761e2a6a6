#include "retrodiff/optim.hpp"

#include <algorithm>
#include <cmath>

namespace retrodiff {

template <typename T>
Parameter<T>& ParameterSet<T>::add(std::string name, Tensor<T> value) {
  if (contains(name)) throw ContractError("duplicate parameter name: " + name);
  params_.emplace_back(std::move(name), std::move(value));
  return params_.back();
}

template <typename T>
Parameter<T>& ParameterSet<T>::at(const std::string& name) {
  for (auto& p : params_)
    if (p.name == name) return p;
  throw LookupError("unknown parameter: " + name);
}

template <typename T>
const Parameter<T>& ParameterSet<T>::at(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name == name) return p;
  throw LookupError("unknown parameter: " + name);
}

template <typename T>
bool ParameterSet<T>::contains(const std::string& name) const {
  return std::any_of(params_.begin(), params_.end(), [&](const auto& p) { return p.name == name; });
}

template <typename T>
std::size_t ParameterSet<T>::scalar_count() const noexcept {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

template <typename T>
void ParameterSet<T>::zero_grad() {
  for (auto& p : params_) p.zero_grad();
}

template <typename T>
void ParameterSet<T>::scale_grad(T factor) {
  for (auto& p : params_)
    for (auto& g : p.grad.data()) g *= factor;
}

template <typename T>
double ParameterSet<T>::grad_norm() const {
  double s = 0;
  for (const auto& p : params_)
    for (T g : p.grad.data()) s += double(g) * double(g);
  return std::sqrt(s);
}

template <typename T>
void adam_step(std::span<T> params, std::span<const T> grads, AdamState<T>& state, const AdamConfig& cfg) {
  if (grads.size() != params.size())
    throw DimensionError("adam_step: " + std::to_string(grads.size()) + " grads for " +
                         std::to_string(params.size()) + " params");
  if (state.m.empty() && state.v.empty()) {
    state.m.assign(params.size(), T{0});
    state.v.assign(params.size(), T{0});
  }
  if (state.m.size() != params.size() || state.v.size() != params.size())
    throw DimensionError("adam_step: optimizer state does not match parameter size");
  ++state.step;
  const double c1 = 1.0 - std::pow(cfg.beta1, double(state.step));
  const double c2 = 1.0 - std::pow(cfg.beta2, double(state.step));
  const T b1 = T(cfg.beta1), b2 = T(cfg.beta2);
  const T step_size = T(cfg.lr / c1);
  const T inv_c2 = T(1.0 / c2);
  const T eps = T(cfg.eps);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const T g = grads[i];
    state.m[i] = b1 * state.m[i] + (T{1} - b1) * g;
    state.v[i] = b2 * state.v[i] + (T{1} - b2) * g * g;
    params[i] -= step_size * state.m[i] / (std::sqrt(state.v[i] * inv_c2) + eps);
  }
}

template <typename T>
void Adam<T>::step(ParameterSet<T>& params) {
  if (states_.empty()) states_.resize(params.size());
  if (states_.size() != params.size()) throw DimensionError("Adam: parameter set changed size");
  std::size_t i = 0;
  for (auto& p : params) adam_step<T>(p.value.data(), p.grad.data(), states_[i++], cfg_);
}

template class ParameterSet<float>;
template class ParameterSet<double>;
template class Adam<float>;
template class Adam<double>;
template void adam_step<float>(std::span<float>, std::span<const float>, AdamState<float>&, const AdamConfig&);
template void adam_step<double>(std::span<double>, std::span<const double>, AdamState<double>&, const AdamConfig&);

}  // namespace retrodiff
