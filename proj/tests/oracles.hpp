#pragma once

// Independent reference computations shared by the unit tests and the
// acceptance binary.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <optional>
#include <vector>

#include "retrodiff/tensor.hpp"

namespace retrodiff::oracle {

struct Ranked {
  std::uint64_t id;
  double score;
};

// Full scan: cosine of every row, sorted by (score desc, id asc).
inline std::vector<Ranked> brute_topk(const std::vector<std::uint64_t>& ids, const Tensor<float>& emb,
                                      const std::vector<float>& query, std::size_t k,
                                      std::optional<std::uint64_t> exclude = std::nullopt) {
  double qq = 0;
  for (float v : query) qq += double(v) * double(v);
  std::vector<Ranked> all;
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (exclude && ids[i] == *exclude) continue;
    double dot = 0, rr = 0;
    for (std::size_t j = 0; j < query.size(); ++j) {
      dot += double(emb.at(i, j)) * double(query[j]);
      rr += double(emb.at(i, j)) * double(emb.at(i, j));
    }
    const double den = std::sqrt(qq) * std::sqrt(rr);
    all.push_back({ids[i], den > 0 ? std::clamp(dot / den, -1.0, 1.0) : 0.0});
  }
  std::stable_sort(all.begin(), all.end(), [](const Ranked& a, const Ranked& b) {
    return a.score != b.score ? a.score > b.score : a.id < b.id;
  });
  all.resize(std::min(k, all.size()));
  return all;
}

// Fréchet distance for diagonal covariances, coordinate by coordinate.
inline double frechet_diagonal(const std::vector<double>& mu, const std::vector<double>& var_a,
                               const std::vector<double>& nu, const std::vector<double>& var_b) {
  double d = 0;
  for (std::size_t i = 0; i < mu.size(); ++i)
    d += (mu[i] - nu[i]) * (mu[i] - nu[i]) + var_a[i] + var_b[i] - 2 * std::sqrt(var_a[i] * var_b[i]);
  return d;
}

}  // namespace retrodiff::oracle
