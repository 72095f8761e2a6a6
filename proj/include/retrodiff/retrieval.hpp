#pragma once

// Exact cosine-similarity index over the global caption embeddings of the
// training split, plus assembly of the retrieved audio/text condition blocks.

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <vector>

#include "retrodiff/dataset.hpp"
#include "retrodiff/encoders.hpp"
#include "retrodiff/tensor.hpp"

namespace retrodiff {

struct Hit {
  std::uint64_t sample_id = 0;
  std::size_t row = 0;  // position in the index (and in the indexed dataset)
  double score = 0;
};

class Index {
 public:
  Index(std::vector<std::uint64_t> ids, Tensor<float> embeddings);
  Index(const Index& other) : ids_(other.ids_), emb_(other.emb_), norms_(other.norms_) {}
  Index(Index&& other) noexcept
      : ids_(std::move(other.ids_)), emb_(std::move(other.emb_)), norms_(std::move(other.norms_)) {}

  std::size_t size() const noexcept { return ids_.size(); }
  std::size_t dim() const noexcept { return emb_.cols(); }
  std::uint64_t id(std::size_t row) const { return ids_.at(row); }
  std::span<const float> embedding(std::size_t row) const { return emb_.row(row); }
  const Tensor<float>& embeddings() const noexcept { return emb_; }

  // Top-k by cosine, descending; equal scores go to the smaller sample id.
  std::vector<Hit> query_topk(std::span<const float> query, std::size_t k,
                              std::optional<std::uint64_t> exclude_id = std::nullopt) const;

  // Number of query_topk calls so far.
  std::size_t queries() const noexcept { return queries_.load(); }

  // u32 count, u32 dim, then per entry u64 sample id and dim f32 values.
  void save(const std::filesystem::path& path) const;
  static Index load(const std::filesystem::path& path);

 private:
  std::vector<std::uint64_t> ids_;
  Tensor<float> emb_;
  std::vector<double> norms_;
  mutable std::atomic<std::size_t> queries_{0};
};

Index build_index(const Dataset& train, const FrozenEncoders& encoders);

// Per-sample sequence embeddings of a dataset, computed once.
struct EmbeddingStore {
  std::vector<Tensor<float>> text;   // L_t × d_r each
  std::vector<Tensor<float>> audio;  // L_a × d_r each
};
EmbeddingStore embed_dataset(const Dataset& data, const FrozenEncoders& encoders);

struct RetrievalPair {
  std::uint64_t sample_id = 0;
  Caption caption;
  const Tensor<float>* spectrogram = nullptr;
  Tensor<float> text;
  Tensor<float> audio;
  double score = 0;
};

std::vector<RetrievalPair> make_pairs(std::span<const Hit> hits, const Dataset& train, const EmbeddingStore& store);

struct RetrievalCondition {
  Tensor<float> audio;  // (k·L_a) × d_r, empty when k = 0
  Tensor<float> text;   // (k·L_t) × d_r, empty when k = 0
  std::size_t k = 0;
};

RetrievalCondition assemble_conditions(std::span<const RetrievalPair> pairs);

}  // namespace retrodiff
