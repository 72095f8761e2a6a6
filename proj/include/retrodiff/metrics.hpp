#pragma once

// Evaluation metrics: matched-filter classifier, Fréchet distance between
// Gaussian feature fits, posterior KL, inception score and text/audio alignment.

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "retrodiff/dataset.hpp"
#include "retrodiff/encoders.hpp"
#include "retrodiff/tensor.hpp"

namespace retrodiff {

class MatchedFilter {
 public:
  explicit MatchedFilter(const Vocabulary& vocab);

  std::size_t classes() const noexcept { return bands_.size(); }
  // score_v = max over onsets of cos(window, template_v), both restricted to
  // the template's ±3σ frequency band so that simultaneous events elsewhere
  // on the grid do not dilute the match. An all-zero window scores 0.
  std::vector<double> scores(const Tensor<float>& spectrogram) const;
  std::uint32_t classify(const Tensor<float>& spectrogram) const;

 private:
  std::size_t time_steps_;
  std::size_t freq_bins_;
  // Template values inside the band, row by row.
  struct Band {
    std::size_t rows = 0;
    std::vector<std::size_t> first;
    std::vector<std::size_t> count;
    std::vector<float> values;
    double norm = 0;
  };
  std::vector<Band> bands_;
};

struct FeatureStats {
  std::vector<double> mean;
  std::vector<double> cov;  // row-major d × d
  std::size_t count = 0;

  std::size_t dim() const noexcept { return mean.size(); }
  // True when count ≥ d + 1.
  bool full_rank_estimate() const noexcept { return count >= dim() + 1; }
};

// Mean and unbiased covariance of the rows of an n × d matrix.
FeatureStats feature_stats(std::span<const double> rows, std::size_t n, std::size_t d);

// ‖μa − μb‖² + Tr(Σa + Σb − 2 (Σa^½ Σb Σa^½)^½)
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

std::vector<double> posterior(std::span<const double> scores, double tau);
double kl_divergence(std::span<const double> p, std::span<const double> q);
// KL(P_ref ‖ P_gen) between matched-filter posteriors.
double kl_metric(const MatchedFilter& filter, const Tensor<float>& generated, const Tensor<float>& reference,
                 double tau = 0.1);
// exp(mean KL(p(y|x) ‖ p̄(y))) over a non-empty list of posteriors.
double inception_score(std::span<const std::vector<double>> posteriors);

// Cosine between pooled audio features and a fit-free projection of the
// global caption embedding into the same space. The projection is
// A·Tmᵀ, where column v of A is the pooled feature of class v's noiseless
// template and column v of Tm is the caption embedding of class v alone.
class AlignmentScorer {
 public:
  AlignmentScorer(const FrozenEncoders& encoders, const Vocabulary& vocab);

  double score(const Tensor<float>& spectrogram, const Caption& prompt) const;
  double score_pooled(std::span<const float> pooled, const Caption& prompt) const;
  std::vector<double> text_target(const Caption& prompt) const;

 private:
  const FrozenEncoders* encoders_;
  Tensor<double> projection_;  // d_r × d_t
};

inline constexpr double kReportScale = 100.0;

struct BinRow {
  FrequencyBin bin = FrequencyBin::zero;
  double mean = 0;  // NaN when count = 0
  std::size_t count = 0;
};

// Always returns the five bins in order, empty ones with count 0.
std::vector<BinRow> per_bin_report(std::span<const std::pair<std::uint32_t, double>> scores,
                                   std::span<const std::size_t> class_frequency);

// Mean of the most frequent populated bin minus the least frequent populated
// non-zero bin; NaN when fewer than two such bins exist.
double head_tail_gap(std::span<const BinRow> rows);

}  // namespace retrodiff
