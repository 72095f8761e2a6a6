#include <gtest/gtest.h>

#include <Eigen/Dense>
#include <cmath>

#include "oracles.hpp"
#include "retrodiff/metrics.hpp"

using namespace retrodiff;

namespace {

FeatureStats diag_stats(const std::vector<double>& mu, const std::vector<double>& var) {
  FeatureStats s;
  s.mean = mu;
  s.cov.assign(mu.size() * mu.size(), 0.0);
  for (std::size_t i = 0; i < mu.size(); ++i) s.cov[i * mu.size() + i] = var[i];
  s.count = 1000;
  return s;
}

std::vector<double> random_rows(Rng& rng, std::size_t n, std::size_t d, double mix) {
  std::vector<double> rows(n * d);
  fill_normal<double>(rng, rows);
  // Correlate the coordinates so covariances are not diagonal.
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 1; j < d; ++j) rows[i * d + j] += mix * rows[i * d + j - 1];
  return rows;
}

struct Vocab {
  Vocabulary vocab = build_vocabulary(1234, 64, 1.1);
  FrozenEncoders enc{EncoderConfig{}, 64, 64, 64};
  MatchedFilter filter{vocab};
};

}  // namespace

TEST(MatchedFilter, SelfMatchZeroGridAndContract) {
  Vocab v;
  for (std::uint32_t c = 0; c < 64; ++c) {
    auto g = render_clean(Caption{{c}, {0}}, v.vocab);
    EXPECT_EQ(v.filter.classify(g), c);
  }
  for (double s : v.filter.scores(Tensor<float>(Shape{64, 64}))) EXPECT_EQ(s, 0.0);
  EXPECT_THROW(v.filter.scores(Tensor<float>(Shape{64, 32})), ContractError);
}

TEST(MatchedFilter, SingleEventAccuracy) {
  Vocab v;
  std::vector<bool> none(64, false);
  std::vector<double> flat(64, 1.0);
  auto rng = make_rng(2);
  int clean_ok = 0, noisy_ok = 0, n = 0;
  while (n < 1000) {
    auto c = sample_caption(rng, v.vocab, none, flat);
    if (c.tokens.size() != 1) continue;
    ++n;
    clean_ok += v.filter.classify(render_clean(c, v.vocab)) == c.tokens[0];
    noisy_ok += v.filter.classify(render_spectrogram(c, v.vocab, rng, 0.02)) == c.tokens[0];
  }
  EXPECT_EQ(clean_ok, 1000);
  EXPECT_GE(noisy_ok, 990);
}

TEST(Frechet, ClosedForms) {
  auto rng = make_rng(3);
  const std::size_t d = 6;
  auto rows = random_rows(rng, 400, d, 0.7);
  auto a = feature_stats(rows, 400, d);
  EXPECT_NEAR(frechet_distance(a, a), 0.0, 1e-8);

  auto b = a;
  double dd = 0;
  for (std::size_t i = 0; i < d; ++i) b.mean[i] += 0.1 * double(i) - 0.2, dd += std::pow(0.1 * double(i) - 0.2, 2);
  EXPECT_NEAR(frechet_distance(a, b), dd, 1e-8);

  std::vector<double> mu(d), nu(d), va(d), vb(d);
  std::uniform_real_distribution<double> u(0.01, 3.0);
  for (std::size_t i = 0; i < d; ++i) mu[i] = u(rng), nu[i] = u(rng), va[i] = u(rng), vb[i] = u(rng);
  EXPECT_NEAR(frechet_distance(diag_stats(mu, va), diag_stats(nu, vb)), oracle::frechet_diagonal(mu, va, nu, vb), 1e-8);
}

TEST(Frechet, SymmetricAndRotationInvariant) {
  auto rng = make_rng(4);
  const std::size_t d = 8, n = 300;
  auto ra = random_rows(rng, n, d, 0.5), rb = random_rows(rng, n, d, -0.3);
  for (auto& x : rb) x = 0.8 * x + 0.2;
  auto a = feature_stats(ra, n, d), b = feature_stats(rb, n, d);
  const double fab = frechet_distance(a, b);
  EXPECT_NEAR(fab, frechet_distance(b, a), 1e-8);
  EXPECT_GT(fab, 0.0);

  Eigen::MatrixXd m = Eigen::MatrixXd::Random(int(d), int(d));
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(m);
  Eigen::MatrixXd q = qr.householderQ();
  auto rotate = [&](const std::vector<double>& rows) {
    std::vector<double> out(rows.size());
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < d; ++j) {
        double s = 0;
        for (std::size_t k = 0; k < d; ++k) s += rows[i * d + k] * q(int(k), int(j));
        out[i * d + j] = s;
      }
    return out;
  };
  EXPECT_NEAR(frechet_distance(feature_stats(rotate(ra), n, d), feature_stats(rotate(rb), n, d)), fab, 1e-6);
}

TEST(Frechet, InputChecks) {
  auto a = diag_stats({0, 0}, {1, 1});
  auto bad = a;
  bad.cov[1] = 0.5;
  EXPECT_THROW(frechet_distance(a, bad), ContractError);
  auto neg = diag_stats({0, 0}, {1, -0.5});
  EXPECT_THROW(frechet_distance(a, neg), NumericError);
  auto tiny_neg = diag_stats({0, 0}, {1, -1e-12});
  EXPECT_NO_THROW(frechet_distance(a, tiny_neg));
  EXPECT_THROW(frechet_distance(a, diag_stats({0}, {1})), DimensionError);
}

TEST(FeatureStats, MatchesDirectEstimate) {
  auto rng = make_rng(5);
  const std::size_t n = 50, d = 3;
  auto rows = random_rows(rng, n, d, 0.4);
  auto s = feature_stats(rows, n, d);
  for (std::size_t i = 0; i < d; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      double mi = 0, mj = 0, c = 0;
      for (std::size_t r = 0; r < n; ++r) mi += rows[r * d + i] / n, mj += rows[r * d + j] / n;
      for (std::size_t r = 0; r < n; ++r) c += (rows[r * d + i] - mi) * (rows[r * d + j] - mj);
      EXPECT_NEAR(s.cov[i * d + j], c / double(n - 1), 1e-12);
      EXPECT_EQ(s.cov[i * d + j], s.cov[j * d + i]);
    }
  EXPECT_TRUE(s.full_rank_estimate());
  EXPECT_FALSE(feature_stats(std::vector<double>(3 * d), 3, d).full_rank_estimate());
}

TEST(Posterior, NormalizedAndNonNegative) {
  auto rng = make_rng(6);
  for (int t = 0; t < 20; ++t) {
    std::vector<double> s(64);
    fill_normal<double>(rng, s);
    auto p = posterior(s, 0.1);
    double sum = 0;
    for (double x : p) {
      EXPECT_GE(x, 0.0);
      sum += x;
    }
    EXPECT_NEAR(sum, 1.0, 1e-9);
  }
}

TEST(KL, HandValueAndGibbs) {
  std::vector<double> p{0.9, 0.1}, q{0.5, 0.5};
  EXPECT_NEAR(kl_divergence(p, q), 0.9 * std::log(0.9 / 0.5) + 0.1 * std::log(0.1 / 0.5), 1e-15);
  EXPECT_NEAR(kl_divergence(p, q), 0.368, 5e-4);
  EXPECT_EQ(kl_divergence(p, p), 0.0);
  auto rng = make_rng(7);
  for (int t = 0; t < 100; ++t) {
    std::vector<double> a(10), b(10);
    fill_normal<double>(rng, a);
    fill_normal<double>(rng, b);
    EXPECT_GE(kl_divergence(posterior(a, 0.5), posterior(b, 0.5)), 0.0);
  }
}

TEST(KL, MetricOnSpectrograms) {
  Vocab v;
  auto rng = make_rng(8);
  auto g = render_spectrogram(Caption{{1, 5}, {0, 32}}, v.vocab, rng);
  auto h = render_spectrogram(Caption{{9}, {16}}, v.vocab, rng);
  EXPECT_EQ(kl_metric(v.filter, g, g), 0.0);
  EXPECT_GT(kl_metric(v.filter, g, h), 0.0);
  EXPECT_THROW(kl_metric(v.filter, g, Tensor<float>(Shape{32, 64})), DimensionError);
}

TEST(InceptionScore, ClosedFormsAndOracle) {
  const std::size_t V = 12;
  std::vector<std::vector<double>> same(5, std::vector<double>{0.2, 0.3, 0.5});
  EXPECT_NEAR(inception_score(same), 1.0, 1e-12);
  std::vector<std::vector<double>> hot(V, std::vector<double>(V, 0.0));
  for (std::size_t i = 0; i < V; ++i) hot[i][i] = 1;
  EXPECT_NEAR(inception_score(hot), double(V), 1e-10);

  auto rng = make_rng(9);
  for (int t = 0; t < 10; ++t) {
    std::vector<std::vector<double>> ps;
    for (int i = 0; i < 30; ++i) {
      std::vector<double> s(V);
      fill_normal<double>(rng, s);
      ps.push_back(posterior(s, 0.3));
    }
    double oracle = 0;
    for (const auto& p : ps)
      for (std::size_t y = 0; y < V; ++y) {
        double marg = 0;
        for (const auto& r : ps) marg += r[y] / double(ps.size());
        if (p[y] > 0) oracle += p[y] * std::log(p[y] / marg) / double(ps.size());
      }
    const double is = inception_score(ps);
    EXPECT_NEAR(is, std::exp(oracle), 1e-10);
    EXPECT_GE(is, 1.0);
    EXPECT_LE(is, double(V));
  }
  EXPECT_THROW(inception_score(std::vector<std::vector<double>>{}), ContractError);
}

TEST(Alignment, OwnCaptionBeatsShuffledCaption) {
  Vocab v;
  AlignmentScorer scorer(v.enc, v.vocab);
  std::vector<bool> none(64, false);
  std::vector<double> flat(64, 1.0);
  auto rng = make_rng(10);
  std::vector<Caption> caps;
  std::vector<Tensor<float>> grids;
  for (int i = 0; i < 500; ++i) {
    caps.push_back(sample_caption(rng, v.vocab, none, flat));
    grids.push_back(render_spectrogram(caps.back(), v.vocab, rng));
  }
  double own = 0, other = 0;
  for (std::size_t i = 0; i < 500; ++i) {
    const double s = scorer.score(grids[i], caps[i]);
    EXPECT_GE(s, -1.0);
    EXPECT_LE(s, 1.0);
    own += s;
    other += scorer.score(grids[i], caps[(i + 250) % 500]);
  }
  own /= 500, other /= 500;
  EXPECT_GT(own - other, 0.1) << "own " << own << " shuffled " << other;

  // Identical directions score exactly one.
  auto target = scorer.text_target(caps[0]);
  std::vector<float> pooled(target.begin(), target.end());
  EXPECT_NEAR(scorer.score_pooled(pooled, caps[0]), 1.0, 1e-6);
  EXPECT_EQ(kReportScale, 100.0);
}

TEST(PerBin, GroupingAndGap) {
  std::vector<std::size_t> freq{0, 5, 50, 500, 5000, 7};
  std::vector<std::pair<std::uint32_t, double>> one{{2, 0.3}, {2, 0.5}};
  auto rows = per_bin_report(one, freq);
  ASSERT_EQ(rows.size(), kFrequencyBinCount);
  std::size_t populated = 0;
  for (const auto& r : rows) populated += r.count > 0;
  EXPECT_EQ(populated, 1u);
  EXPECT_NEAR(rows[2].mean, 0.4, 1e-15);
  EXPECT_TRUE(std::isnan(rows[0].mean));
  EXPECT_TRUE(std::isnan(head_tail_gap(rows)));

  std::vector<std::pair<std::uint32_t, double>> flat;
  for (std::uint32_t c = 0; c < 6; ++c) flat.push_back({c, 0.25});
  for (const auto& r : per_bin_report(flat, freq)) EXPECT_EQ(r.mean, 0.25);

  std::vector<std::pair<std::uint32_t, double>> mixed{{0, 1}, {1, 2}, {5, 4}, {2, 8}, {3, 16}, {3, 32}, {4, 64}};
  auto m = per_bin_report(mixed, freq);
  const double want[] = {1, 3, 8, 24, 64};
  const std::size_t count[] = {1, 2, 1, 2, 1};
  for (std::size_t b = 0; b < 5; ++b) {
    EXPECT_EQ(m[b].mean, want[b]);
    EXPECT_EQ(m[b].count, count[b]);
  }
  EXPECT_EQ(head_tail_gap(m), 64 - 3);
}
