#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>

#include "retrodiff/autodiff.hpp"
#include "retrodiff/rng.hpp"

namespace retrodiff::testing {

inline Tensor<double> random_tensor(Rng& rng, Shape shape, double stddev = 1.0) {
  Tensor<double> t(std::move(shape));
  fill_normal<double>(rng, t.data(), stddev);
  return t;
}

struct Probe {
  Parameter<double>* param;
  std::size_t index;
};

// Max relative error between backward() and central differences at each
// probed entry. `build` must record the scalar loss on the tape.
inline double gradcheck_probes(const std::vector<Probe>& probes,
                               const std::function<Var<double>(Tape<double>&)>& build, double h = 1e-3) {
  for (const auto& pr : probes) pr.param->zero_grad();
  {
    Tape<double> tape;
    tape.backward(build(tape));
  }
  double worst = 0;
  for (const auto& [p, i] : probes) {
    const double keep = p->value[i];
    auto at = [&](double delta) {
      p->value[i] = keep + delta;
      Tape<double> tape(false);
      return build(tape).value().item();
    };
    // Fourth-order central stencil.
    const double numeric = (8 * (at(h) - at(-h)) - (at(2 * h) - at(-2 * h))) / (12 * h);
    p->value[i] = keep;
    const double analytic = p->grad[i];
    const double err = std::abs(numeric - analytic) / std::max({1e-6, std::abs(numeric), std::abs(analytic)});
    worst = std::max(worst, err);
  }
  return worst;
}

// Every element of every listed parameter.
inline double gradcheck(std::vector<Parameter<double>*> params,
                        const std::function<Var<double>(Tape<double>&)>& build, double h = 1e-3) {
  std::vector<Probe> probes;
  for (auto* p : params)
    for (std::size_t i = 0; i < p->value.numel(); ++i) probes.push_back({p, i});
  return gradcheck_probes(probes, build, h);
}

}  // namespace retrodiff::testing
