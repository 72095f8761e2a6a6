#pragma once

// Noise predictor ε_θ: a token transformer over latent patches with
// cross-attention to the retrieved audio/text rows in every block. The
// network head outputs v = √ᾱ ε - √(1-ᾱ) z_0; eps_from_v turns that into ε̂.

#include <cstddef>
#include <optional>
#include <string_view>
#include <vector>

#include "retrodiff/autodiff.hpp"
#include "retrodiff/optim.hpp"
#include "retrodiff/retrieval.hpp"

namespace retrodiff {

enum class RetrievalType { none, audio, audio_text };
std::string_view retrieval_type_name(RetrievalType t);
RetrievalType parse_retrieval_type(std::string_view s);

struct DenoiserConfig {
  std::size_t width = 128;
  std::size_t blocks = 2;
  std::size_t heads = 4;
  std::size_t mlp_ratio = 2;
  // Latent grid (T/4) × (F/4) × channels.
  std::size_t latent_t = 16;
  std::size_t latent_f = 16;
  std::size_t channels = 16;
  // Each token covers token_side × token_side latent positions.
  std::size_t token_side = 2;
  std::size_t text_dim = 32;
  std::size_t memory_dim = 32;

  std::size_t tokens() const noexcept { return (latent_t / token_side) * (latent_f / token_side); }
  std::size_t token_dim() const noexcept { return token_side * token_side * channels; }
};

// E^t plus the retrieval memory [E^ra; E^rt]. Row r of memory belongs to
// modality memory_type[r] (0 audio, 1 text).
struct ConditionBundle {
  Tensor<float> text;
  Tensor<float> memory;
  std::vector<std::uint8_t> memory_type;
  std::size_t k = 0;

  std::size_t memory_rows() const noexcept { return memory_type.size(); }
};

ConditionBundle make_bundle(Tensor<float> text_global, const RetrievalCondition& retrieved, RetrievalType type);

// Rearranges a (T', F', C) latent into tokens × token_dim and back.
template <typename T>
Tensor<T> latent_to_tokens(const Tensor<T>& latent, const DenoiserConfig& cfg);
template <typename T>
Tensor<T> tokens_to_latent(const Tensor<T>& tokens, const DenoiserConfig& cfg);

// Sinusoidal embedding of step n, `dim` wide.
template <typename T>
Tensor<T> time_embedding(std::size_t n, std::size_t dim);

// Cross-attention keys and values per block. They depend only on the
// bundle, so sampling computes them once per prompt.
template <typename T>
struct MemoryCache {
  std::vector<Tensor<T>> keys;
  std::vector<Tensor<T>> values;
};

template <typename T>
class Denoiser {
 public:
  Denoiser(DenoiserConfig cfg, std::uint64_t seed);

  const DenoiserConfig& config() const noexcept { return cfg_; }
  ParameterSet<T>& params() noexcept { return params_; }
  const ParameterSet<T>& params() const noexcept { return params_; }

  // v̂ in token layout for noisy tokens z_n at step n.
  Var<T> forward(Tape<T>& tape, const Tensor<T>& z_tokens, std::size_t n, const ConditionBundle& bundle,
                 const MemoryCache<T>* cache = nullptr);

  MemoryCache<T> memory_cache(const ConditionBundle& bundle);

  // Forward-only prediction in latent layout.
  Tensor<T> predict(const Tensor<T>& z_latent, std::size_t n, const ConditionBundle& bundle,
                    const MemoryCache<T>* cache = nullptr);

 private:
  Var<T> memory_rows(Tape<T>& tape, const ConditionBundle& bundle);

  DenoiserConfig cfg_;
  ParameterSet<T> params_;
};

extern template class Denoiser<float>;
extern template class Denoiser<double>;

}  // namespace retrodiff
