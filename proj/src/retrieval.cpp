#include "retrodiff/retrieval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include "retrodiff/binary_io.hpp"
#include "retrodiff/error.hpp"
#include "retrodiff/kernels.hpp"

namespace retrodiff {

Index::Index(std::vector<std::uint64_t> ids, Tensor<float> embeddings) : ids_(std::move(ids)), emb_(std::move(embeddings)) {
  if (ids_.empty()) throw ConfigError("cannot build an index over an empty split");
  if (emb_.rank() != 2 || emb_.rows() != ids_.size())
    throw DimensionError("index: " + std::to_string(ids_.size()) + " ids for embeddings " + shape_str(emb_.shape()));
  norms_.resize(ids_.size());
  for (std::size_t i = 0; i < ids_.size(); ++i) {
    double s = 0;
    for (float v : emb_.row(i)) s += double(v) * v;
    norms_[i] = std::sqrt(s);
  }
}

std::vector<Hit> Index::query_topk(std::span<const float> query, std::size_t k,
                                   std::optional<std::uint64_t> exclude_id) const {
  ++queries_;
  if (query.size() != dim()) throw DimensionError("query has dim " + std::to_string(query.size()));
  const bool excluding = exclude_id && std::find(ids_.begin(), ids_.end(), *exclude_id) != ids_.end();
  const std::size_t available = size() - (excluding ? 1 : 0);
  if (k < 1 || k > available)
    throw ContractError("query_topk: k=" + std::to_string(k) + " with " + std::to_string(available) + " candidates");

  std::vector<double> dots(size());
  kernels::dot_scan(size(), dim(), emb_.data(), query, dots);
  double qn = 0;
  for (float v : query) qn += double(v) * v;
  qn = std::sqrt(qn);

  std::vector<Hit> all;
  all.reserve(size());
  for (std::size_t i = 0; i < size(); ++i) {
    if (excluding && ids_[i] == *exclude_id) continue;
    const double denom = qn * norms_[i];
    all.push_back({ids_[i], i, denom > 0 ? std::clamp(dots[i] / denom, -1.0, 1.0) : 0.0});
  }
  auto better = [](const Hit& a, const Hit& b) {
    return a.score != b.score ? a.score > b.score : a.sample_id < b.sample_id;
  };
  std::partial_sort(all.begin(), all.begin() + std::ptrdiff_t(k), all.end(), better);
  all.resize(k);
  return all;
}

void Index::save(const std::filesystem::path& path) const {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  binio::write_u32(os, std::uint32_t(size()));
  binio::write_u32(os, std::uint32_t(dim()));
  for (std::size_t i = 0; i < size(); ++i) {
    binio::write_u64(os, ids_[i]);
    binio::write_f32(os, emb_.row(i));
  }
}

Index Index::load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  const std::size_t n = binio::read_u32(is), d = binio::read_u32(is);
  if (n == 0 || d == 0) throw IoError(path.string() + ": empty index");
  std::vector<std::uint64_t> ids(n);
  Tensor<float> emb(Shape{n, d});
  for (std::size_t i = 0; i < n; ++i) {
    ids[i] = binio::read_u64(is);
    binio::read_f32(is, emb.row(i));
  }
  return Index(std::move(ids), std::move(emb));
}

Index build_index(const Dataset& train, const FrozenEncoders& encoders) {
  if (train.samples.empty()) throw ConfigError("cannot build an index over an empty split");
  const std::size_t d = encoders.config().text_dim;
  std::vector<std::uint64_t> ids;
  Tensor<float> emb(Shape{train.size(), d});
  for (std::size_t i = 0; i < train.size(); ++i) {
    ids.push_back(train.samples[i].id);
    const auto e = encoders.encode_text_global(train.samples[i].caption);
    std::copy(e.data().begin(), e.data().end(), emb.row(i).begin());
  }
  return Index(std::move(ids), std::move(emb));
}

EmbeddingStore embed_dataset(const Dataset& data, const FrozenEncoders& encoders) {
  EmbeddingStore store;
  store.text.resize(data.size());
  store.audio.resize(data.size());
#pragma omp parallel for schedule(static)
  for (std::size_t i = 0; i < data.size(); ++i) {
    store.text[i] = encoders.encode_text_sequence(data.samples[i].caption);
    store.audio[i] = encoders.encode_audio(data.samples[i].spectrogram);
  }
  return store;
}

std::vector<RetrievalPair> make_pairs(std::span<const Hit> hits, const Dataset& train, const EmbeddingStore& store) {
  std::vector<RetrievalPair> out;
  out.reserve(hits.size());
  for (const auto& h : hits) {
    if (h.row >= train.size() || train.samples[h.row].id != h.sample_id)
      throw ContractError("retrieval hit does not match the indexed dataset");
    const auto& s = train.samples[h.row];
    out.push_back({s.id, s.caption, &s.spectrogram, store.text.at(h.row), store.audio.at(h.row), h.score});
  }
  return out;
}

namespace {

Tensor<float> stack(std::span<const RetrievalPair> pairs, Tensor<float> RetrievalPair::*member, const char* what) {
  const auto& first = pairs.front().*member;
  if (first.rank() != 2) throw ContractError(std::string("retrieval ") + what + " block must be a matrix");
  const std::size_t rows = first.rows(), cols = first.cols();
  Tensor<float> out(Shape{rows * pairs.size(), cols});
  for (std::size_t i = 0; i < pairs.size(); ++i) {
    const auto& b = pairs[i].*member;
    if (b.shape() != first.shape())
      throw ContractError(std::string("retrieval ") + what + " blocks differ: " + shape_str(b.shape()) + " vs " +
                          shape_str(first.shape()));
    std::copy(b.data().begin(), b.data().end(), out.data().begin() + std::ptrdiff_t(i * rows * cols));
  }
  return out;
}

}  // namespace

RetrievalCondition assemble_conditions(std::span<const RetrievalPair> pairs) {
  RetrievalCondition c;
  c.k = pairs.size();
  if (pairs.empty()) return c;
  c.audio = stack(pairs, &RetrievalPair::audio, "audio");
  c.text = stack(pairs, &RetrievalPair::text, "text");
  if (c.audio.cols() != c.text.cols()) throw ContractError("audio and text blocks have different widths");
  return c;
}

}  // namespace retrodiff
