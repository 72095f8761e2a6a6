#include "retrodiff/schedule.hpp"

#include <string>

#include "retrodiff/error.hpp"

namespace retrodiff {

NoiseSchedule make_schedule(std::size_t steps, double beta_start, double beta_end) {
  if (steps < 2) throw ConfigError("noise schedule needs at least 2 steps");
  if (!(beta_start > 0 && beta_start < beta_end && beta_end < 1))
    throw ConfigError("noise schedule needs 0 < beta_start < beta_end < 1, got " + std::to_string(beta_start) +
                      " and " + std::to_string(beta_end));
  NoiseSchedule s;
  double prod = 1;
  for (std::size_t i = 0; i < steps; ++i) {
    const double b = beta_start + (beta_end - beta_start) * double(i) / double(steps - 1);
    prod *= 1 - b;
    s.beta.push_back(b);
    s.alpha.push_back(1 - b);
    s.alpha_bar.push_back(prod);
  }
  return s;
}

}  // namespace retrodiff
