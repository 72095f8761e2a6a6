#pragma once

#include <cstddef>
#include <vector>

namespace retrodiff {

// Linear β schedule. Vectors are indexed by step n - 1 for n in 1..N.
struct NoiseSchedule {
  std::vector<double> beta;
  std::vector<double> alpha;
  std::vector<double> alpha_bar;

  std::size_t steps() const noexcept { return beta.size(); }
  double beta_at(std::size_t n) const { return beta.at(n - 1); }
  double alpha_at(std::size_t n) const { return alpha.at(n - 1); }
  double alpha_bar_at(std::size_t n) const { return alpha_bar.at(n - 1); }
};

NoiseSchedule make_schedule(std::size_t steps, double beta_start, double beta_end);

}  // namespace retrodiff
