#include "retrodiff/diffusion.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <numeric>

#include "retrodiff/encoders.hpp"
#include "retrodiff/error.hpp"

namespace retrodiff {

Tensor<float> to_model_latent(const Tensor<float>& spectrogram) {
  Tensor<float> z = compress(spectrogram);
  for (auto& v : z.data()) v = (v - kLatentShift) / kLatentScale;
  return z;
}

Tensor<float> from_model_latent(const Tensor<float>& latent) {
  Tensor<float> z = latent;
  for (auto& v : z.data()) v = std::clamp(v * kLatentScale + kLatentShift, 0.0f, 1.0f);
  return decompress(z);
}

template <typename T>
Tensor<T> forward_diffuse(const Tensor<T>& z0, std::size_t n, const Tensor<T>& eps, const NoiseSchedule& schedule) {
  if (n < 1 || n > schedule.steps())
    throw ContractError("diffusion step " + std::to_string(n) + " outside 1.." + std::to_string(schedule.steps()));
  if (eps.shape() != z0.shape()) throw ContractError("noise shape differs from latent shape");
  const double ab = schedule.alpha_bar_at(n);
  const T a = T(std::sqrt(ab)), s = T(std::sqrt(1.0 - ab));
  Tensor<T> out(z0.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a * z0[i] + s * eps[i];
  return out;
}

template <typename T>
Tensor<T> eps_from_v(const Tensor<T>& zn, const Tensor<T>& v, double alpha_bar) {
  if (v.shape() != zn.shape()) throw ContractError("v prediction has shape " + shape_str(v.shape()));
  const T a = T(std::sqrt(1.0 - alpha_bar)), b = T(std::sqrt(alpha_bar));
  Tensor<T> out(zn.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a * zn[i] + b * v[i];
  return out;
}

template <typename T>
Tensor<T> v_target(const Tensor<T>& z0, const Tensor<T>& eps, double alpha_bar) {
  if (eps.shape() != z0.shape()) throw ContractError("noise shape differs from latent shape");
  const T a = T(std::sqrt(alpha_bar)), b = T(std::sqrt(1.0 - alpha_bar));
  Tensor<T> out(z0.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a * eps[i] - b * z0[i];
  return out;
}

template <typename T>
Var<T> training_loss(Tape<T>& tape, Denoiser<T>& model, const Tensor<T>& z0, const ConditionBundle& bundle,
                     const NoiseSchedule& schedule, std::size_t n, const Tensor<T>& eps) {
  const auto& cfg = model.config();
  const Tensor<T> zn = forward_diffuse(z0, n, eps, schedule);
  auto pred = model.forward(tape, latent_to_tokens(zn, cfg), n, bundle);
  // MSE is invariant to the token permutation, so compare in token layout.
  return ad::mse(pred, latent_to_tokens(v_target(z0, eps, schedule.alpha_bar_at(n)), cfg));
}

template <typename T>
Var<T> training_loss(Tape<T>& tape, Denoiser<T>& model, const Tensor<T>& z0, const ConditionBundle& bundle,
                     const NoiseSchedule& schedule, Rng& rng) {
  const std::size_t n = std::uniform_int_distribution<std::size_t>(1, schedule.steps())(rng);
  Tensor<T> eps(z0.shape());
  fill_normal<T>(rng, eps.data());
  return training_loss(tape, model, z0, bundle, schedule, n, eps);
}

template <typename T>
Tensor<T> ddpm_sample(const EpsPredictor<T>& eps_hat, const Shape& shape, const NoiseSchedule& schedule, Rng& rng) {
  Tensor<T> z(shape);
  fill_normal<T>(rng, z.data());
  Tensor<T> xi(shape);
  for (std::size_t n = schedule.steps(); n >= 1; --n) {
    const Tensor<T> e = eps_hat(z, n);
    if (e.shape() != shape) throw ContractError("noise prediction has shape " + shape_str(e.shape()));
    const double b = schedule.beta_at(n), a = schedule.alpha_at(n), ab = schedule.alpha_bar_at(n);
    const T inv_sqrt_a = T(1.0 / std::sqrt(a)), coef = T(b / std::sqrt(1.0 - ab));
    for (std::size_t i = 0; i < z.numel(); ++i) z[i] = inv_sqrt_a * (z[i] - coef * e[i]);
    if (n > 1) {
      fill_normal<T>(rng, xi.data());
      const T sigma = T(std::sqrt(b));
      for (std::size_t i = 0; i < z.numel(); ++i) z[i] += sigma * xi[i];
    }
  }
  return z;
}

template <typename T>
Tensor<T> ddpm_sample(Denoiser<T>& model, const ConditionBundle& bundle, const NoiseSchedule& schedule, Rng& rng) {
  const auto& cfg = model.config();
  const MemoryCache<T> cache = model.memory_cache(bundle);
  const MemoryCache<T>* c = bundle.memory_rows() ? &cache : nullptr;
  return ddpm_sample<T>(
      [&](const Tensor<T>& z, std::size_t n) {
        return eps_from_v(z, model.predict(z, n, bundle, c), schedule.alpha_bar_at(n));
      },
                        Shape{cfg.latent_t, cfg.latent_f, cfg.channels}, schedule, rng);
}

ConditionBundle condition_for(const Caption& caption, std::size_t k, RetrievalType type, const RetrievalContext& ctx,
                              std::optional<std::uint64_t> exclude_id) {
  if (!ctx.encoders) throw ContractError("retrieval context has no encoders");
  Tensor<float> text = ctx.encoders->encode_text_global(caption);
  if (k == 0 || type == RetrievalType::none) return make_bundle(std::move(text), {}, RetrievalType::none);
  if (!ctx.index || !ctx.train || !ctx.store) throw ContractError("retrieval requested without an index");
  const auto hits = ctx.index->query_topk(text.data(), k, exclude_id);
  const auto pairs = make_pairs(hits, *ctx.train, *ctx.store);
  return make_bundle(std::move(text), assemble_conditions(pairs), type);
}

TrainResult train(Denoiser<float>& model, const RetrievalContext& ctx, const NoiseSchedule& schedule,
                  const TrainConfig& cfg) {
  if (!ctx.train || ctx.train->samples.empty()) throw ConfigError("training needs a non-empty dataset");
  if (cfg.batch == 0) throw ConfigError("batch size must be positive");
  const auto& data = ctx.train->samples;
  const std::size_t count = data.size();

  std::vector<Tensor<float>> latents(count);
  for (std::size_t i = 0; i < count; ++i) latents[i] = to_model_latent(data[i].spectrogram);

  std::ofstream csv;
  if (!cfg.loss_csv.empty()) {
    csv.open(cfg.loss_csv, std::ios::trunc);
    if (!csv) throw IoError("cannot write " + cfg.loss_csv.string());
    csv << "epoch,mean_loss\n" << std::setprecision(9);
  }

  Adam<float> opt(AdamConfig{.lr = cfg.lr});
  auto& params = model.params();
  Rng rng = make_rng(cfg.seed, streams::train);
  std::vector<std::size_t> order(count);
  std::iota(order.begin(), order.end(), std::size_t{0});
  TrainResult result;
  Tape<float> tape;
  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng);
    double total = 0;
    for (std::size_t start = 0; start < count; start += cfg.batch) {
      const std::size_t end = std::min(count, start + cfg.batch);
      params.zero_grad();
      for (std::size_t j = start; j < end; ++j) {
        const std::size_t i = order[j];
        tape.reset();
        double value = 0;
        try {
          // Retrieval is a cheap exact scan, so bundles are rebuilt rather than stored.
          const auto bundle = condition_for(data[i].caption, cfg.k, cfg.retrieval, ctx, data[i].id);
          auto loss = training_loss(tape, model, latents[i], bundle, schedule, rng);
          value = loss.value().item();
          tape.backward(loss);
        } catch (const NumericError& e) {
          throw DivergenceError("non-finite value at epoch " + std::to_string(epoch) + ", sample " +
                                std::to_string(data[i].id) + ": " + e.what());
        }
        if (!std::isfinite(value))
          throw DivergenceError("loss is not finite at epoch " + std::to_string(epoch) + ", sample " +
                                std::to_string(data[i].id));
        total += value;
      }
      params.scale_grad(1.0f / float(end - start));
      const double norm = params.grad_norm();
      if (!std::isfinite(norm)) throw DivergenceError("gradient norm is not finite at epoch " + std::to_string(epoch));
      if (cfg.grad_clip > 0 && norm > cfg.grad_clip) params.scale_grad(float(cfg.grad_clip / norm));
      opt.step(params);
      ++result.steps;
    }
    const double mean = total / double(count);
    result.epoch_loss.push_back(mean);
    if (csv) csv << epoch << ',' << mean << '\n';
    if (cfg.on_epoch) cfg.on_epoch(epoch, mean);
  }
  return result;
}

template Tensor<float> eps_from_v(const Tensor<float>&, const Tensor<float>&, double);
template Tensor<double> eps_from_v(const Tensor<double>&, const Tensor<double>&, double);
template Tensor<float> v_target(const Tensor<float>&, const Tensor<float>&, double);
template Tensor<double> v_target(const Tensor<double>&, const Tensor<double>&, double);
template Tensor<float> forward_diffuse(const Tensor<float>&, std::size_t, const Tensor<float>&, const NoiseSchedule&);
template Tensor<double> forward_diffuse(const Tensor<double>&, std::size_t, const Tensor<double>&, const NoiseSchedule&);
template Var<float> training_loss(Tape<float>&, Denoiser<float>&, const Tensor<float>&, const ConditionBundle&,
                                  const NoiseSchedule&, std::size_t, const Tensor<float>&);
template Var<double> training_loss(Tape<double>&, Denoiser<double>&, const Tensor<double>&, const ConditionBundle&,
                                   const NoiseSchedule&, std::size_t, const Tensor<double>&);
template Var<float> training_loss(Tape<float>&, Denoiser<float>&, const Tensor<float>&, const ConditionBundle&,
                                  const NoiseSchedule&, Rng&);
template Var<double> training_loss(Tape<double>&, Denoiser<double>&, const Tensor<double>&, const ConditionBundle&,
                                   const NoiseSchedule&, Rng&);
template Tensor<float> ddpm_sample(const EpsPredictor<float>&, const Shape&, const NoiseSchedule&, Rng&);
template Tensor<double> ddpm_sample(const EpsPredictor<double>&, const Shape&, const NoiseSchedule&, Rng&);
template Tensor<float> ddpm_sample(Denoiser<float>&, const ConditionBundle&, const NoiseSchedule&, Rng&);
template Tensor<double> ddpm_sample(Denoiser<double>&, const ConditionBundle&, const NoiseSchedule&, Rng&);

}  // namespace retrodiff
