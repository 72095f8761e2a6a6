#include "retrodiff/metrics.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "retrodiff/error.hpp"

namespace retrodiff {

MatchedFilter::MatchedFilter(const Vocabulary& vocab) : time_steps_(vocab.time_steps), freq_bins_(vocab.freq_bins) {
  constexpr double kBand = 3.0;
  for (std::uint32_t v = 0; v < vocab.size(); ++v) {
    const auto& c = vocab.at(v);
    const auto full = vocab.event_template(v);
    Band band;
    band.rows = c.duration;
    const double mid = (double(c.duration) - 1.0) / 2.0;
    double s = 0;
    for (std::size_t r = 0; r < c.duration; ++r) {
      const double fc = c.center + c.slope * (double(r) - mid);
      const double lo = std::max(0.0, std::ceil(fc - kBand * c.bandwidth));
      const double hi = std::min(double(freq_bins_) - 1, std::floor(fc + kBand * c.bandwidth));
      band.first.push_back(std::size_t(lo));
      band.count.push_back(hi >= lo ? std::size_t(hi - lo) + 1 : 0);
      for (std::size_t f = band.first.back(); f < band.first.back() + band.count.back(); ++f) {
        band.values.push_back(full.at(r, f));
        s += double(full.at(r, f)) * full.at(r, f);
      }
    }
    band.norm = std::sqrt(s);
    bands_.push_back(std::move(band));
  }
}

std::vector<double> MatchedFilter::scores(const Tensor<float>& spectrogram) const {
  if (spectrogram.rank() != 2 || spectrogram.dim(0) != time_steps_ || spectrogram.dim(1) != freq_bins_)
    throw ContractError("matched filter expects " + std::to_string(time_steps_) + "x" + std::to_string(freq_bins_) +
                        ", got " + shape_str(spectrogram.shape()));
  const float* x = spectrogram.raw();
  std::vector<double> out(bands_.size(), 0.0);
#pragma omp parallel for schedule(dynamic)
  for (std::size_t v = 0; v < bands_.size(); ++v) {
    const Band& b = bands_[v];
    if (b.rows > time_steps_ || b.norm <= 0) continue;
    double best = 0;
    for (std::size_t o = 0; o + b.rows <= time_steps_; ++o) {
      double dot = 0, energy = 0;
      const float* t = b.values.data();
      for (std::size_t r = 0; r < b.rows; ++r) {
        const float* row = x + (o + r) * freq_bins_ + b.first[r];
        for (std::size_t f = 0; f < b.count[r]; ++f) {
          dot += double(row[f]) * t[f];
          energy += double(row[f]) * row[f];
        }
        t += b.count[r];
      }
      if (energy > 1e-12) best = std::max(best, dot / (std::sqrt(energy) * b.norm));
    }
    out[v] = std::min(best, 1.0);
  }
  return out;
}

std::uint32_t MatchedFilter::classify(const Tensor<float>& spectrogram) const {
  const auto s = scores(spectrogram);
  return std::uint32_t(std::max_element(s.begin(), s.end()) - s.begin());
}

FeatureStats feature_stats(std::span<const double> rows, std::size_t n, std::size_t d) {
  if (n == 0 || d == 0 || rows.size() != n * d) throw DimensionError("feature_stats: expected an n x d matrix");
  FeatureStats s;
  s.count = n;
  s.mean.assign(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) s.mean[j] += rows[i * d + j];
  for (auto& m : s.mean) m /= double(n);
  s.cov.assign(d * d, 0.0);
  if (n < 2) return s;
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t a = 0; a < d; ++a) {
      const double da = rows[i * d + a] - s.mean[a];
      for (std::size_t b = a; b < d; ++b) s.cov[a * d + b] += da * (rows[i * d + b] - s.mean[b]);
    }
  for (std::size_t a = 0; a < d; ++a)
    for (std::size_t b = a; b < d; ++b) {
      s.cov[a * d + b] /= double(n - 1);
      s.cov[b * d + a] = s.cov[a * d + b];
    }
  return s;
}

namespace {

using Mat = Eigen::MatrixXd;

Mat as_matrix(const FeatureStats& s) {
  const auto d = Eigen::Index(s.dim());
  if (s.cov.size() != s.dim() * s.dim()) throw DimensionError("covariance is not d x d");
  Mat m = Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>(s.cov.data(), d, d);
  const double scale = std::max(1.0, m.cwiseAbs().maxCoeff());
  if ((m - m.transpose()).cwiseAbs().maxCoeff() > 1e-9 * scale) throw ContractError("covariance is not symmetric");
  return m;
}

// Eigenvalues of a symmetric PSD matrix, with round-off negatives clamped.
Eigen::VectorXd psd_eigenvalues(const Eigen::SelfAdjointEigenSolver<Mat>& es, const char* what) {
  Eigen::VectorXd ev = es.eigenvalues();
  for (Eigen::Index i = 0; i < ev.size(); ++i) {
    if (ev[i] < -1e-8) throw NumericError(std::string(what) + " has eigenvalue " + std::to_string(ev[i]));
    ev[i] = std::max(ev[i], 0.0);
  }
  return ev;
}

}  // namespace

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
  if (a.dim() != b.dim() || a.dim() == 0) throw DimensionError("frechet_distance: feature dimensions differ");
  const Mat sa = as_matrix(a), sb = as_matrix(b);
  double mean_term = 0;
  for (std::size_t i = 0; i < a.dim(); ++i) mean_term += (a.mean[i] - b.mean[i]) * (a.mean[i] - b.mean[i]);

  Eigen::SelfAdjointEigenSolver<Mat> ea(sa);
  const Eigen::VectorXd la = psd_eigenvalues(ea, "covariance");
  const Mat root_a = ea.eigenvectors() * la.cwiseSqrt().asDiagonal() * ea.eigenvectors().transpose();
  Mat m = root_a * sb * root_a;
  m = 0.5 * (m + m.transpose());
  Eigen::SelfAdjointEigenSolver<Mat> em(m, Eigen::EigenvaluesOnly);
  const double trace_root = psd_eigenvalues(em, "covariance product").cwiseSqrt().sum();
  return std::max(0.0, mean_term + sa.trace() + sb.trace() - 2.0 * trace_root);
}

std::vector<double> posterior(std::span<const double> scores, double tau) {
  if (scores.empty()) throw ContractError("posterior of an empty score vector");
  if (!(tau > 0)) throw ConfigError("posterior temperature must be positive");
  const double mx = *std::max_element(scores.begin(), scores.end());
  std::vector<double> p(scores.size());
  double z = 0;
  for (std::size_t i = 0; i < p.size(); ++i) z += p[i] = std::exp((scores[i] - mx) / tau);
  for (auto& x : p) x /= z;
  return p;
}

double kl_divergence(std::span<const double> p, std::span<const double> q) {
  if (p.size() != q.size()) throw DimensionError("kl_divergence: lengths differ");
  double kl = 0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    if (p[i] <= 0) continue;
    if (q[i] <= 0) return std::numeric_limits<double>::infinity();
    kl += p[i] * std::log(p[i] / q[i]);
  }
  return std::max(0.0, kl);
}

double kl_metric(const MatchedFilter& filter, const Tensor<float>& generated, const Tensor<float>& reference,
                 double tau) {
  if (generated.shape() != reference.shape()) throw DimensionError("kl_metric: spectrogram shapes differ");
  const auto pg = posterior(filter.scores(generated), tau);
  const auto pr = posterior(filter.scores(reference), tau);
  return kl_divergence(pr, pg);
}

double inception_score(std::span<const std::vector<double>> posteriors) {
  if (posteriors.empty()) throw ContractError("inception score of an empty set");
  const std::size_t v = posteriors.front().size();
  std::vector<double> marginal(v, 0.0);
  for (const auto& p : posteriors) {
    if (p.size() != v) throw DimensionError("inception score: posterior lengths differ");
    for (std::size_t i = 0; i < v; ++i) marginal[i] += p[i];
  }
  for (auto& m : marginal) m /= double(posteriors.size());
  double mean_kl = 0;
  for (const auto& p : posteriors) mean_kl += kl_divergence(p, marginal);
  return std::exp(mean_kl / double(posteriors.size()));
}

AlignmentScorer::AlignmentScorer(const FrozenEncoders& encoders, const Vocabulary& vocab) : encoders_(&encoders) {
  const std::size_t v = vocab.size(), dr = encoders.config().embed_dim, dt = encoders.config().text_dim;
  if (encoders.num_classes() != v) throw ContractError("encoders and vocabulary disagree on the class count");
  projection_ = Tensor<double>(Shape{dr, dt});
  for (std::uint32_t c = 0; c < v; ++c) {
    const Caption single{{c}, {0}};
    const auto proto = encoders.pool_audio(render_clean(single, vocab));
    const auto text = encoders.encode_text_global(single);
    for (std::size_t i = 0; i < dr; ++i)
      for (std::size_t j = 0; j < dt; ++j) projection_.at(i, j) += double(proto[i]) * double(text[j]);
  }
}

std::vector<double> AlignmentScorer::text_target(const Caption& prompt) const {
  const auto e = encoders_->encode_text_global(prompt);
  std::vector<double> out(projection_.rows(), 0.0);
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t j = 0; j < e.numel(); ++j) out[i] += projection_.at(i, j) * e[j];
  return out;
}

double AlignmentScorer::score_pooled(std::span<const float> pooled, const Caption& prompt) const {
  const auto t = text_target(prompt);
  if (pooled.size() != t.size()) throw DimensionError("alignment: pooled feature has the wrong width");
  double dot = 0, na = 0, nt = 0;
  for (std::size_t i = 0; i < t.size(); ++i) {
    dot += double(pooled[i]) * t[i];
    na += double(pooled[i]) * pooled[i];
    nt += t[i] * t[i];
  }
  if (na <= 0 || nt <= 0) return 0;
  return std::clamp(dot / std::sqrt(na * nt), -1.0, 1.0);
}

double AlignmentScorer::score(const Tensor<float>& spectrogram, const Caption& prompt) const {
  const auto pooled = encoders_->pool_audio(spectrogram);
  return score_pooled(pooled.data(), prompt);
}

std::vector<BinRow> per_bin_report(std::span<const std::pair<std::uint32_t, double>> scores,
                                   std::span<const std::size_t> class_frequency) {
  std::vector<BinRow> rows(kFrequencyBinCount);
  std::vector<double> sums(kFrequencyBinCount, 0.0);
  for (std::size_t b = 0; b < kFrequencyBinCount; ++b) rows[b].bin = FrequencyBin(b);
  for (const auto& [cls, s] : scores) {
    const auto b = std::size_t(frequency_bin(class_frequency, cls));
    sums[b] += s;
    ++rows[b].count;
  }
  for (std::size_t b = 0; b < kFrequencyBinCount; ++b)
    rows[b].mean = rows[b].count ? sums[b] / double(rows[b].count) : std::numeric_limits<double>::quiet_NaN();
  return rows;
}

double head_tail_gap(std::span<const BinRow> rows) {
  const BinRow* head = nullptr;
  const BinRow* tail = nullptr;
  for (const auto& r : rows) {
    if (r.bin == FrequencyBin::zero || r.count == 0) continue;
    if (!tail || r.bin < tail->bin) tail = &r;
    if (!head || r.bin > head->bin) head = &r;
  }
  if (!head || head == tail) return std::numeric_limits<double>::quiet_NaN();
  return head->mean - tail->mean;
}

}  // namespace retrodiff
