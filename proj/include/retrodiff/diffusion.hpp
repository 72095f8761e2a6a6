#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <vector>

#include "retrodiff/denoiser.hpp"
#include "retrodiff/schedule.hpp"

namespace retrodiff {

// Spectrograms live in [0, 1] and are mostly empty. The model sees
// (compress(x) - shift) / scale, which has roughly zero mean and unit
// variance over the corpus; without it the sparse events sit far below the
// diffusion noise for most steps.
inline constexpr float kLatentShift = 0.026f;
inline constexpr float kLatentScale = 0.134f;
Tensor<float> to_model_latent(const Tensor<float>& spectrogram);
Tensor<float> from_model_latent(const Tensor<float>& latent);

// z_n = √ᾱ_n z_0 + √(1-ᾱ_n) ε
template <typename T>
Tensor<T> forward_diffuse(const Tensor<T>& z0, std::size_t n, const Tensor<T>& eps, const NoiseSchedule& schedule);

// ε̂ = √(1-ᾱ) z_n + √ᾱ v̂. At high noise this already gives the best linear
// guess for v̂ = 0, so the network only has to supply the content.
template <typename T>
Tensor<T> eps_from_v(const Tensor<T>& zn, const Tensor<T>& v, double alpha_bar);
template <typename T>
Tensor<T> v_target(const Tensor<T>& z0, const Tensor<T>& eps, double alpha_bar);

// Mean squared error between v and v̂(z_n, n), i.e. ‖ε - ε̂‖² weighted by 1/ᾱ_n.
template <typename T>
Var<T> training_loss(Tape<T>& tape, Denoiser<T>& model, const Tensor<T>& z0, const ConditionBundle& bundle,
                     const NoiseSchedule& schedule, std::size_t n, const Tensor<T>& eps);
// Same with n ~ U{1..N} and ε ~ N(0, I) drawn from rng.
template <typename T>
Var<T> training_loss(Tape<T>& tape, Denoiser<T>& model, const Tensor<T>& z0, const ConditionBundle& bundle,
                     const NoiseSchedule& schedule, Rng& rng);

template <typename T>
using EpsPredictor = std::function<Tensor<T>(const Tensor<T>& z, std::size_t n)>;

// Ancestral sampling with σ_n = √β_n and no noise on the final step.
template <typename T>
Tensor<T> ddpm_sample(const EpsPredictor<T>& eps_hat, const Shape& shape, const NoiseSchedule& schedule, Rng& rng);
template <typename T>
Tensor<T> ddpm_sample(Denoiser<T>& model, const ConditionBundle& bundle, const NoiseSchedule& schedule, Rng& rng);

struct TrainConfig {
  std::size_t epochs = 4;
  std::size_t batch = 4;
  double lr = 1e-3;
  double grad_clip = 1.0;  // global norm; 0 disables
  std::uint64_t seed = 0;
  std::size_t k = 3;
  RetrievalType retrieval = RetrievalType::audio_text;
  std::filesystem::path loss_csv;  // epoch,mean_loss when non-empty
  std::function<void(std::size_t epoch, double mean_loss)> on_epoch;
};

struct TrainResult {
  std::vector<double> epoch_loss;
  std::size_t steps = 0;
};

// Everything a training or sampling run needs about the retrieval side.
struct RetrievalContext {
  const Dataset* train = nullptr;
  const FrozenEncoders* encoders = nullptr;
  const Index* index = nullptr;
  const EmbeddingStore* store = nullptr;
};

// Bundle for `caption`; excludes `exclude_id` from retrieval when given.
// Never queries the index when k = 0 or retrieval is none.
ConditionBundle condition_for(const Caption& caption, std::size_t k, RetrievalType type, const RetrievalContext& ctx,
                              std::optional<std::uint64_t> exclude_id = std::nullopt);

TrainResult train(Denoiser<float>& model, const RetrievalContext& ctx, const NoiseSchedule& schedule,
                  const TrainConfig& cfg);

}  // namespace retrodiff
