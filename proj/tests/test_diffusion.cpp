#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <unistd.h>

#include "retrodiff/checkpoint.hpp"
#include "retrodiff/diffusion.hpp"
#include "test_util.hpp"

using namespace retrodiff;
using retrodiff::testing::gradcheck_probes;
using retrodiff::testing::Probe;

namespace {

DenoiserConfig tiny_config(std::size_t width = 16) {
  DenoiserConfig c;
  c.width = width;
  c.blocks = 2;
  c.heads = 4;
  return c;
}

Tensor<float> random_block(Rng& rng, std::size_t rows, std::size_t cols = 32) {
  Tensor<float> t(Shape{rows, cols});
  fill_normal<float>(rng, t.data(), 0.5);
  return t;
}

Tensor<float> unit_text(Rng& rng) {
  Tensor<float> t(Shape{32});
  fill_normal<float>(rng, t.data());
  double n = 0;
  for (float v : t.data()) n += double(v) * v;
  for (auto& v : t.data()) v = float(v / std::sqrt(n));
  return t;
}

RetrievalCondition random_condition(Rng& rng, std::size_t k) {
  std::vector<RetrievalPair> pairs(k);
  for (auto& p : pairs) {
    p.audio = random_block(rng, 64);
    p.text = random_block(rng, 8);
  }
  return assemble_conditions(pairs);
}

template <typename T>
Tensor<T> random_latent(Rng& rng) {
  Tensor<T> z(Shape{16, 16, 16});
  fill_normal<T>(rng, z.data());
  return z;
}

double max_abs_diff(const Tensor<double>& a, const Tensor<double>& b) {
  double d = 0;
  for (std::size_t i = 0; i < a.numel(); ++i) d = std::max(d, std::abs(a[i] - b[i]));
  return d;
}

std::filesystem::path temp_path(const std::string& name) {
  return std::filesystem::temp_directory_path() / ("retrodiff_" + name + "_" + std::to_string(::getpid()));
}

}  // namespace

TEST(Schedule, ClosedFormsAndInvariants) {
  auto s = make_schedule(200, 1e-4, 0.02);
  EXPECT_EQ(s.steps(), 200u);
  EXPECT_DOUBLE_EQ(s.alpha_bar_at(1), 1 - s.beta_at(1));
  EXPECT_DOUBLE_EQ(s.beta_at(1), 1e-4);
  EXPECT_NEAR(s.beta_at(200), 0.02, 1e-15);
  double prod = 1;
  for (std::size_t n = 1; n <= 200; ++n) prod *= 1 - (1e-4 + (0.02 - 1e-4) * double(n - 1) / 199.0);
  EXPECT_NEAR(s.alpha_bar_at(200), prod, 1e-12);

  auto rng = make_rng(1);
  for (int trial = 0; trial < 50; ++trial) {
    const std::size_t n = std::uniform_int_distribution<std::size_t>(2, 400)(rng);
    const double b0 = std::uniform_real_distribution<double>(1e-5, 0.05)(rng);
    const double b1 = std::uniform_real_distribution<double>(b0 * 1.01, 0.5)(rng);
    auto t = make_schedule(n, b0, b1);
    for (std::size_t i = 1; i <= n; ++i) {
      EXPECT_GT(t.beta_at(i), 0.0);
      EXPECT_LT(t.beta_at(i), 1.0);
      EXPECT_DOUBLE_EQ(t.alpha_at(i), 1 - t.beta_at(i));
      if (i > 1) {
        EXPECT_GT(t.beta_at(i), t.beta_at(i - 1));
        EXPECT_LT(t.alpha_bar_at(i), t.alpha_bar_at(i - 1));
      }
    }
  }
  // The default schedule ends below 1% signal.
  EXPECT_LT(make_schedule(200, 5e-4, 0.1).alpha_bar_at(200), 0.01);
}

TEST(Schedule, Errors) {
  EXPECT_THROW(make_schedule(1, 1e-4, 0.02), ConfigError);
  EXPECT_THROW(make_schedule(10, 0.02, 1e-4), ConfigError);
  EXPECT_THROW(make_schedule(10, 0.0, 0.02), ConfigError);
  EXPECT_THROW(make_schedule(10, 1e-4, 1.0), ConfigError);
}

TEST(ForwardDiffuse, Limits) {
  auto rng = make_rng(2);
  auto z0 = random_latent<double>(rng), eps = random_latent<double>(rng);
  NoiseSchedule s;
  s.beta = {0.0, 1.0};
  s.alpha = {1.0, 0.0};
  s.alpha_bar = {1.0, 0.0};
  EXPECT_EQ(forward_diffuse(z0, 1, eps, s), z0);
  EXPECT_EQ(forward_diffuse(z0, 2, eps, s), eps);
  auto real = make_schedule(200, 5e-4, 0.1);
  EXPECT_THROW(forward_diffuse(z0, 0, eps, real), ContractError);
  EXPECT_THROW(forward_diffuse(z0, 201, eps, real), ContractError);
  EXPECT_THROW(forward_diffuse(z0, 1, Tensor<double>(Shape{3}), real), ContractError);
}

TEST(ForwardDiffuse, MonteCarloMoments) {
  auto s = make_schedule(200, 5e-4, 0.1);
  const Tensor<double> z0(Shape{3}, std::vector<double>{1.0, -0.5, 0.25});
  const int draws = 100000;
  for (std::size_t n : {1u, 100u, 200u}) {
    auto rng = make_rng(3, n);
    std::vector<double> sum(3, 0), sq(3, 0);
    Tensor<double> eps(Shape{3});
    for (int d = 0; d < draws; ++d) {
      fill_normal<double>(rng, eps.data());
      auto zn = forward_diffuse(z0, n, eps, s);
      for (int i = 0; i < 3; ++i) sum[i] += zn[i], sq[i] += zn[i] * zn[i];
    }
    const double ab = s.alpha_bar_at(n);
    for (int i = 0; i < 3; ++i) {
      const double mean = sum[i] / draws, var = sq[i] / draws - mean * mean;
      EXPECT_LT(std::abs(mean - std::sqrt(ab) * z0[i]), 3 * std::sqrt((1 - ab) / draws)) << "n=" << n;
      EXPECT_LT(std::abs(var / (1 - ab) - 1), 0.02) << "n=" << n;
    }
  }
}

TEST(Layout, TokensRoundTrip) {
  auto cfg = tiny_config();
  auto rng = make_rng(4);
  auto z = random_latent<float>(rng);
  auto tok = latent_to_tokens(z, cfg);
  EXPECT_EQ(tok.shape(), (Shape{64, 64}));
  EXPECT_EQ(tokens_to_latent(tok, cfg), z);
  // Token (0,0) holds latent positions (0,0),(0,1),(1,0),(1,1) in that order.
  for (std::size_t c = 0; c < 16; ++c) {
    EXPECT_EQ(tok.at(0, c), z[c]);
    EXPECT_EQ(tok.at(0, 16 + c), z[16 + c]);
    EXPECT_EQ(tok.at(0, 32 + c), z[16 * 16 + c]);
  }
  EXPECT_THROW(latent_to_tokens(Tensor<float>(Shape{8, 8, 16}), cfg), ContractError);
}

TEST(Bundle, MemoryLayoutPerRetrievalType) {
  auto rng = make_rng(5);
  auto cond = random_condition(rng, 3);
  auto text = unit_text(rng);
  auto both = make_bundle(text, cond, RetrievalType::audio_text);
  EXPECT_EQ(both.memory_rows(), 3u * (64 + 8));
  EXPECT_EQ(both.k, 3u);
  auto audio = make_bundle(text, cond, RetrievalType::audio);
  EXPECT_EQ(audio.memory_rows(), 3u * 64);
  for (auto t : audio.memory_type) EXPECT_EQ(t, 0);
  auto none = make_bundle(text, cond, RetrievalType::none);
  EXPECT_EQ(none.memory_rows(), 0u);
  EXPECT_EQ(parse_retrieval_type("audio_text"), RetrievalType::audio_text);
  EXPECT_THROW(parse_retrieval_type("text"), ConfigError);
}

TEST(Denoiser, ShapeDeterminismAndCache) {
  Denoiser<float> model(tiny_config(32), 1);
  auto rng = make_rng(6);
  auto z = random_latent<float>(rng);
  auto bundle = make_bundle(unit_text(rng), random_condition(rng, 2), RetrievalType::audio_text);
  auto a = model.predict(z, 17, bundle);
  EXPECT_EQ(a.shape(), z.shape());
  EXPECT_EQ(a, model.predict(z, 17, bundle));
  auto cache = model.memory_cache(bundle);
  auto c = model.predict(z, 17, bundle, &cache);
  for (std::size_t i = 0; i < a.numel(); ++i) EXPECT_NEAR(a[i], c[i], 1e-5);
  EXPECT_NE(a, model.predict(z, 18, bundle));
  EXPECT_THROW(model.predict(Tensor<float>(Shape{16, 16, 8}), 1, bundle), ContractError);
  Denoiser<float> same(tiny_config(32), 1);
  EXPECT_EQ(a, same.predict(z, 17, bundle));
}

TEST(Denoiser, BlockPermutationInvariance) {
  Denoiser<double> model(tiny_config(), 2);
  auto rng = make_rng(7);
  auto z = random_latent<double>(rng);
  auto text = unit_text(rng);
  std::vector<RetrievalPair> pairs(3);
  for (auto& p : pairs) p.audio = random_block(rng, 64), p.text = random_block(rng, 8);
  auto base = model.predict(z, 50, make_bundle(text, assemble_conditions(pairs), RetrievalType::audio_text));
  std::vector<RetrievalPair> perm{pairs[2], pairs[0], pairs[1]};
  auto moved = model.predict(z, 50, make_bundle(text, assemble_conditions(perm), RetrievalType::audio_text));
  EXPECT_LT(max_abs_diff(base, moved), 1e-5);

  std::vector<RetrievalPair> twins{pairs[0], pairs[0]};
  auto t1 = model.predict(z, 50, make_bundle(text, assemble_conditions(twins), RetrievalType::audio_text));
  std::swap(twins[0], twins[1]);
  auto t2 = model.predict(z, 50, make_bundle(text, assemble_conditions(twins), RetrievalType::audio_text));
  EXPECT_EQ(t1, t2);
  // Retrieval does reach the output.
  EXPECT_GT(max_abs_diff(base, t1), 1e-6);
}

TEST(Denoiser, EmptyMemoryIgnoresCrossAttention) {
  Denoiser<double> model(tiny_config(), 3);
  auto rng = make_rng(8);
  auto z = random_latent<double>(rng);
  auto bundle = make_bundle(unit_text(rng), {}, RetrievalType::none);
  auto before = model.predict(z, 9, bundle);
  for (auto& p : model.params())
    if (p.name.find("cross.") != std::string::npos || p.name.find("ln2") != std::string::npos ||
        p.name == "memory.type")
      for (auto& v : p.value.data()) v += 1.0;
  EXPECT_EQ(before, model.predict(z, 9, bundle));
}

TEST(Denoiser, EveryParameterReceivesGradient) {
  Denoiser<double> model(tiny_config(), 4);
  auto rng = make_rng(9);
  auto z0 = random_latent<double>(rng), eps = random_latent<double>(rng);
  auto bundle = make_bundle(unit_text(rng), random_condition(rng, 1), RetrievalType::audio_text);
  auto sched = make_schedule(200, 5e-4, 0.1);
  model.params().zero_grad();
  Tape<double> tape;
  tape.backward(training_loss(tape, model, z0, bundle, sched, 60, eps));
  for (const auto& p : model.params()) {
    double n = 0;
    for (double g : p.grad.data()) n += g * g;
    EXPECT_GT(n, 0.0) << p.name;
  }
  EXPECT_GT(model.params().scalar_count(), 0u);
  EXPECT_EQ(Denoiser<float>(DenoiserConfig{}, 0).params().scalar_count(), 409216u);
}

TEST(TrainingLoss, ZeroPredictorGivesUnitLoss) {
  Denoiser<double> model(tiny_config(), 5);
  for (auto* name : {"out.w", "out.b"}) model.params().at(name).value.fill(0.0);
  auto rng = make_rng(10);
  auto sched = make_schedule(200, 5e-4, 0.1);
  // With mean(z0²) = 1, E[v²] = ᾱ + (1-ᾱ)·1 = 1 at every step.
  auto z0 = random_latent<double>(rng);
  double ms = 0;
  for (double v : z0.data()) ms += v * v;
  ms /= double(z0.numel());
  for (auto& v : z0.data()) v /= std::sqrt(ms);
  auto bundle = make_bundle(unit_text(rng), {}, RetrievalType::none);
  double total = 0;
  const int draws = 40;
  for (int i = 0; i < draws; ++i) {
    Tape<double> tape(false);
    const double l = training_loss(tape, model, z0, bundle, sched, rng).value().item();
    EXPECT_GE(l, 0.0);
    total += l;
  }
  // Each draw averages 4096 squared normals: sd of the mean ≈ √(2/4096/40).
  EXPECT_NEAR(total / draws, 1.0, 5 * std::sqrt(2.0 / 4096 / draws));
}

TEST(TrainingLoss, GradientMatchesFiniteDifferences) {
  Denoiser<double> model(tiny_config(), 6);
  auto rng = make_rng(11);
  auto sched = make_schedule(200, 5e-4, 0.1);
  auto z0 = random_latent<double>(rng), eps = random_latent<double>(rng);
  auto bundle = make_bundle(unit_text(rng), random_condition(rng, 2), RetrievalType::audio_text);
  std::vector<Probe> probes;
  for (auto& p : model.params()) {
    const std::size_t pick = std::uniform_int_distribution<std::size_t>(0, p.value.numel() - 1)(rng);
    probes.push_back({&p, pick});
  }
  const double err = gradcheck_probes(probes, [&](Tape<double>& t) {
    return training_loss(t, model, z0, bundle, sched, 37, eps);
  });
  EXPECT_LT(err, 1e-4);
}

TEST(VParam, InvertsTheForwardProcess) {
  auto rng = make_rng(14);
  auto z0 = random_latent<double>(rng), eps = random_latent<double>(rng);
  auto sched = make_schedule(200, 5e-4, 0.1);
  for (std::size_t n : {1u, 50u, 200u}) {
    const double ab = sched.alpha_bar_at(n);
    const auto zn = forward_diffuse(z0, n, eps, sched);
    const auto back = eps_from_v(zn, v_target(z0, eps, ab), ab);
    for (std::size_t i = 0; i < back.numel(); ++i) ASSERT_NEAR(back[i], eps[i], 1e-12);
  }
  EXPECT_THROW(eps_from_v(z0, Tensor<double>(Shape{2}), 0.5), ContractError);
}

TEST(TrainingLoss, EquivalentToWeightedEpsError) {
  Denoiser<double> model(tiny_config(), 15);
  auto rng = make_rng(16);
  auto sched = make_schedule(200, 5e-4, 0.1);
  auto z0 = random_latent<double>(rng), eps = random_latent<double>(rng);
  auto bundle = make_bundle(unit_text(rng), {}, RetrievalType::none);
  const std::size_t n = 120;
  const double ab = sched.alpha_bar_at(n);
  Tape<double> tape(false);
  const double loss = training_loss(tape, model, z0, bundle, sched, n, eps).value().item();
  const auto zn = forward_diffuse(z0, n, eps, sched);
  const auto eps_hat = eps_from_v(zn, model.predict(zn, n, bundle), ab);
  double e = 0;
  for (std::size_t i = 0; i < eps.numel(); ++i) e += (eps[i] - eps_hat[i]) * (eps[i] - eps_hat[i]);
  EXPECT_NEAR(loss, e / double(eps.numel()) / ab, 1e-9 * loss);
}

TEST(Sampler, TwoStepClosedForm) {
  auto s = make_schedule(2, 0.1, 0.3);
  const Shape shape{4};
  auto rng = make_rng(12);
  auto copy = rng;
  auto zero = [](const Tensor<double>& z, std::size_t) { return Tensor<double>(z.shape()); };
  auto out = ddpm_sample<double>(zero, shape, s, rng);
  Tensor<double> z2(shape), xi(shape);
  fill_normal<double>(copy, z2.data());
  fill_normal<double>(copy, xi.data());
  for (std::size_t i = 0; i < 4; ++i) {
    const double z1 = z2[i] / std::sqrt(0.7) + std::sqrt(0.3) * xi[i];
    EXPECT_NEAR(out[i], z1 / std::sqrt(0.9), 1e-12);
  }
}

TEST(Sampler, DeterministicWithModel) {
  Denoiser<float> model(tiny_config(32), 7);
  auto rng = make_rng(13);
  auto bundle = make_bundle(unit_text(rng), random_condition(rng, 1), RetrievalType::audio_text);
  auto sched = make_schedule(10, 1e-3, 0.5);
  auto r1 = make_rng(5), r2 = make_rng(5);
  auto a = ddpm_sample(model, bundle, sched, r1);
  EXPECT_EQ(a.shape(), (Shape{16, 16, 16}));
  EXPECT_EQ(a, ddpm_sample(model, bundle, sched, r2));
}

TEST(LatentScaling, RoundTripAndUnitScale) {
  auto corpus = generate_dataset([] {
    DatasetConfig c;
    c.n_train = 4;
    c.n_test = 1;
    c.noise_sigma = 0;
    return c;
  }());
  const auto& x = corpus.train.samples[0].spectrogram;
  auto z = to_model_latent(x);
  auto back = from_model_latent(z);
  for (std::size_t i = 0; i < x.numel(); ++i) EXPECT_NEAR(back[i], x[i], 1e-6);
}

TEST(LatentScaling, CorpusIsRoughlyStandardized) {
  DatasetConfig c;
  c.n_train = 400;
  c.n_test = 1;
  auto corpus = generate_dataset(c);
  double s = 0, ss = 0, n = 0;
  for (const auto& smp : corpus.train.samples)
    for (float v : to_model_latent(smp.spectrogram).data()) {
      s += v;
      ss += double(v) * v;
      ++n;
    }
  const double mean = s / n, var = ss / n - mean * mean;
  EXPECT_NEAR(mean, 0.0, 0.1);
  EXPECT_NEAR(var, 1.0, 0.15);
}

namespace {

struct TrainFixture {
  Corpus corpus;
  FrozenEncoders enc;
  Index index;
  EmbeddingStore store;
  explicit TrainFixture(std::size_t n) : corpus(make(n)), enc(EncoderConfig{}, 64, 64, 64),
                                          index(build_index(corpus.train, enc)), store(embed_dataset(corpus.train, enc)) {}
  static Corpus make(std::size_t n) {
    DatasetConfig c;
    c.n_train = n;
    c.n_test = 4;
    return generate_dataset(c);
  }
  RetrievalContext ctx() const { return {&corpus.train, &enc, &index, &store}; }
};

}  // namespace

TEST(Train, NoRetrievalNeverQueriesIndex) {
  TrainFixture fx(8);
  Denoiser<float> model(tiny_config(), 1);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.k = 0;
  train(model, fx.ctx(), make_schedule(50, 1e-3, 0.2), cfg);
  EXPECT_EQ(fx.index.queries(), 0u);
  cfg.k = 3;
  cfg.retrieval = RetrievalType::none;
  train(model, fx.ctx(), make_schedule(50, 1e-3, 0.2), cfg);
  EXPECT_EQ(fx.index.queries(), 0u);
  cfg.retrieval = RetrievalType::audio;
  train(model, fx.ctx(), make_schedule(50, 1e-3, 0.2), cfg);
  EXPECT_EQ(fx.index.queries(), 8u);
}

TEST(Train, ZeroLearningRateLeavesParameters) {
  TrainFixture fx(8);
  Denoiser<float> model(tiny_config(), 2);
  std::vector<Tensor<float>> before;
  for (auto& p : model.params()) before.push_back(p.value);
  TrainConfig cfg;
  cfg.epochs = 1;
  cfg.lr = 0;
  auto r = train(model, fx.ctx(), make_schedule(50, 1e-3, 0.2), cfg);
  EXPECT_EQ(r.steps, 2u);
  std::size_t i = 0;
  for (auto& p : model.params()) EXPECT_EQ(p.value, before[i++]) << p.name;
}

// Fifty epochs over a small subset, the only scale at which that many epochs fit in a test.
TEST(Train, LossFallsOverFiftyEpochs) {
  TrainFixture fx(48);
  for (std::uint64_t seed = 0; seed < 3; ++seed) {
    Denoiser<float> model(tiny_config(32), seed);
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.seed = seed;
    const auto csv = temp_path("loss" + std::to_string(seed) + ".csv");
    cfg.loss_csv = csv;
    auto r = train(model, fx.ctx(), make_schedule(200, 5e-4, 0.1), cfg);
    ASSERT_EQ(r.epoch_loss.size(), 50u);
    for (double l : r.epoch_loss) EXPECT_TRUE(std::isfinite(l));
    EXPECT_LT(r.epoch_loss.back(), r.epoch_loss.front()) << "seed " << seed;
    std::ifstream is(csv);
    std::string line;
    std::getline(is, line);
    EXPECT_EQ(line, "epoch,mean_loss");
    std::size_t rows = 0;
    while (std::getline(is, line)) ++rows;
    EXPECT_EQ(rows, 50u);
    std::filesystem::remove(csv);
  }
}

TEST(Train, NonFiniteStateIsDivergence) {
  TrainFixture fx(4);
  Denoiser<float> model(tiny_config(), 3);
  model.params().at("in.b").value[0] = std::numeric_limits<float>::quiet_NaN();
  TrainConfig cfg;
  cfg.epochs = 1;
  EXPECT_THROW(train(model, fx.ctx(), make_schedule(50, 1e-3, 0.2), cfg), DivergenceError);
}

TEST(Checkpoint, RoundTripAndMismatch) {
  Denoiser<float> a(tiny_config(), 1), b(tiny_config(), 2);
  const auto path = temp_path("ckpt");
  save_checkpoint(path, a.params(), 0xabcdef);
  EXPECT_EQ(load_checkpoint(path, b.params()), 0xabcdefu);
  auto ia = a.params().begin();
  for (auto& p : b.params()) EXPECT_EQ(p.value, (ia++)->value) << p.name;
  Denoiser<float> wide(tiny_config(32), 1);
  EXPECT_THROW(load_checkpoint(path, wide.params()), IoError);
  std::filesystem::remove(path);
  EXPECT_THROW(load_checkpoint(path, b.params()), IoError);
}
