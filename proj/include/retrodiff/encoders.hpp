#pragma once

// Frozen stand-ins for the pretrained encoders. All matrices are drawn once
// from a seeded generator and never trained; nothing here is a Parameter.

#include <cstdint>
#include <filesystem>
#include <utility>

#include "retrodiff/dataset.hpp"
#include "retrodiff/tensor.hpp"

namespace retrodiff {

struct EncoderConfig {
  std::uint64_t seed = 7;
  std::size_t text_dim = 32;   // global caption embedding width
  std::size_t embed_dim = 32;  // per-row width of sequence embeddings
  std::size_t text_len = 8;    // rows of a text sequence embedding
  std::size_t patch = 8;       // audio patch side
};

class FrozenEncoders {
 public:
  FrozenEncoders(EncoderConfig config, std::size_t num_classes, std::size_t time_steps, std::size_t freq_bins);

  const EncoderConfig& config() const noexcept { return cfg_; }
  std::size_t num_classes() const noexcept { return num_classes_; }
  std::size_t audio_len() const noexcept { return (time_steps_ / cfg_.patch) * (freq_bins_ / cfg_.patch); }

  // Unit-norm projection of the order-weighted multi-hot caption vector.
  Tensor<float> encode_text_global(const Caption& caption) const;
  // One row per token (class + position embedding), zero rows after the last token.
  Tensor<float> encode_text_sequence(const Caption& caption) const;
  // One row per 8×8 patch, time-major: projected patch plus 2-D position.
  Tensor<float> encode_audio(const Tensor<float>& spectrogram) const;
  // Mean of encode_audio rows. Positions cancel because they are centred.
  Tensor<float> pool_audio(const Tensor<float>& spectrogram) const;

  const Tensor<float>& audio_positions() const noexcept { return audio_pos_; }
  const Tensor<float>& text_projection() const noexcept { return text_proj_; }

 private:
  void check_grid(const Tensor<float>& spectrogram) const;

  EncoderConfig cfg_;
  std::size_t num_classes_;
  std::size_t time_steps_;
  std::size_t freq_bins_;
  Tensor<float> text_proj_;   // text_dim × num_classes
  Tensor<float> class_emb_;   // num_classes × embed_dim
  Tensor<float> text_pos_;    // text_len × embed_dim
  Tensor<float> audio_proj_;  // (patch²) × embed_dim, columns sum to zero
  Tensor<float> audio_pos_;   // audio_len × embed_dim, columns sum to zero
};

// Exact space-to-depth with 4×4 blocks: (T, F) -> (T/4, F/4, 16).
Tensor<float> compress(const Tensor<float>& spectrogram);
Tensor<float> decompress(const Tensor<float>& latent);

enum class EmbeddingKind : std::uint32_t { text_global = 1, text_sequence = 2, audio_sequence = 3 };

// <sample_id>.emb: u32 kind, u32 rows, u32 cols, then row-major f32, little-endian.
void write_embedding(const std::filesystem::path& path, EmbeddingKind kind, const Tensor<float>& emb);
std::pair<EmbeddingKind, Tensor<float>> read_embedding(const std::filesystem::path& path);

}  // namespace retrodiff
