#include <gtest/gtest.h>

#include <filesystem>
#include <numeric>
#include <unistd.h>

#include "oracles.hpp"
#include "retrodiff/retrieval.hpp"

using namespace retrodiff;

namespace {

struct RandomIndex {
  std::vector<std::uint64_t> ids;
  Tensor<float> emb;
};

// Shuffled ids, and every fifth row duplicates an earlier one to force ties.
RandomIndex random_index(std::uint64_t seed, std::size_t n, std::size_t d) {
  auto rng = make_rng(seed);
  RandomIndex r;
  r.ids.resize(n);
  std::iota(r.ids.begin(), r.ids.end(), std::uint64_t{1000});
  std::shuffle(r.ids.begin(), r.ids.end(), rng);
  r.emb = Tensor<float>(Shape{n, d});
  fill_normal<float>(rng, r.emb.data());
  for (std::size_t i = 5; i < n; i += 5) {
    const std::size_t src = std::uniform_int_distribution<std::size_t>(0, i - 1)(rng);
    std::copy(r.emb.row(src).begin(), r.emb.row(src).end(), r.emb.row(i).begin());
  }
  return r;
}

void expect_same(const std::vector<Hit>& got, const std::vector<oracle::Ranked>& want) {
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t i = 0; i < got.size(); ++i) {
    EXPECT_EQ(got[i].sample_id, want[i].id) << "rank " << i;
    EXPECT_EQ(got[i].score, want[i].score) << "rank " << i;
  }
}

struct Small {
  Corpus corpus;
  FrozenEncoders enc;
  Small() : corpus(make()), enc(EncoderConfig{}, 64, 64, 64) {}
  static Corpus make() {
    DatasetConfig c;
    c.n_train = 200;
    c.n_test = 20;
    return generate_dataset(c);
  }
};

}  // namespace

TEST(Index, MatchesBruteForceOnRandomInstances) {
  for (std::uint64_t trial = 0; trial < 30; ++trial) {
    auto r = random_index(trial, 1000, 32);
    Index idx(r.ids, r.emb);
    auto rng = make_rng(trial, 1);
    std::vector<float> q(32);
    fill_normal<float>(rng, q);
    // Querying with a stored row exercises exact self-matches and ties.
    if (trial % 2) std::copy(r.emb.row(trial * 7).begin(), r.emb.row(trial * 7).end(), q.begin());
    for (std::size_t k : {1u, 5u, 10u}) {
      expect_same(idx.query_topk(q, k), oracle::brute_topk(r.ids, r.emb, q, k));
      const auto ex = r.ids[trial * 7];
      auto hits = idx.query_topk(q, k, ex);
      expect_same(hits, oracle::brute_topk(r.ids, r.emb, q, k, ex));
      for (auto& h : hits) EXPECT_NE(h.sample_id, ex);
    }
  }
}

TEST(Index, TiesBreakToSmallerIdAndQueriesAreStable) {
  Tensor<float> emb(Shape{4, 2}, std::vector<float>{1, 0, 1, 0, 0, 1, 1, 0});
  Index idx({40, 7, 3, 12}, emb);
  std::vector<float> q{2, 0};
  auto hits = idx.query_topk(q, 3);
  ASSERT_EQ(hits.size(), 3u);
  EXPECT_EQ(hits[0].sample_id, 7u);
  EXPECT_EQ(hits[1].sample_id, 12u);
  EXPECT_EQ(hits[2].sample_id, 40u);
  auto again = idx.query_topk(q, 3);
  for (std::size_t i = 0; i < 3; ++i) EXPECT_EQ(again[i].sample_id, hits[i].sample_id);
}

TEST(Index, ExhaustiveQueryWithExclusion) {
  auto r = random_index(77, 50, 8);
  Index idx(r.ids, r.emb);
  std::vector<float> q(r.emb.row(3).begin(), r.emb.row(3).end());
  auto hits = idx.query_topk(q, 49, r.ids[3]);
  EXPECT_EQ(hits.size(), 49u);
  for (std::size_t i = 1; i < hits.size(); ++i) EXPECT_GE(hits[i - 1].score, hits[i].score);
  for (auto& h : hits) EXPECT_NE(h.sample_id, r.ids[3]);
  EXPECT_THROW(idx.query_topk(q, 50, r.ids[3]), ContractError);
  EXPECT_THROW(idx.query_topk(q, 0), ContractError);
  EXPECT_NO_THROW(idx.query_topk(q, 50));
  EXPECT_THROW(idx.query_topk(std::vector<float>(7), 1), DimensionError);
}

TEST(Index, ExclusionSoundForAnyK) {
  auto r = random_index(5, 60, 16);
  Index idx(r.ids, r.emb);
  for (std::size_t row = 0; row < 60; row += 6) {
    std::vector<float> q(r.emb.row(row).begin(), r.emb.row(row).end());
    for (std::size_t k = 1; k < 60; k += 4)
      for (auto& h : idx.query_topk(q, k, r.ids[row])) ASSERT_NE(h.sample_id, r.ids[row]);
  }
}

TEST(Index, BuildFromDataset) {
  Small s;
  Index idx = build_index(s.corpus.train, s.enc);
  EXPECT_EQ(idx.size(), s.corpus.train.size());
  Index again = build_index(s.corpus.train, s.enc);
  EXPECT_EQ(idx.embeddings(), again.embeddings());
  const auto& sample = s.corpus.train.samples[17];
  auto q = s.enc.encode_text_global(sample.caption);
  auto top = idx.query_topk(q.data(), 1);
  EXPECT_NEAR(top[0].score, 1.0, 1e-6);
  // Another sample can share the caption; its id would be no larger only if smaller.
  EXPECT_EQ(s.corpus.train.samples[top[0].row].caption.tokens, sample.caption.tokens);
  for (auto& h : idx.query_topk(q.data(), 5, sample.id)) EXPECT_NE(h.sample_id, sample.id);
  EXPECT_THROW(build_index(Dataset{}, s.enc), ConfigError);
}

TEST(Index, SaveLoadRoundTrip) {
  auto r = random_index(9, 100, 32);
  Index idx(r.ids, r.emb);
  const auto path = std::filesystem::temp_directory_path() / ("retrodiff_idx_" + std::to_string(::getpid()));
  idx.save(path);
  EXPECT_EQ(std::filesystem::file_size(path), 8u + 100u * (8u + 32u * 4u));
  Index back = Index::load(path);
  EXPECT_EQ(back.embeddings(), idx.embeddings());
  for (std::size_t i = 0; i < 100; ++i) EXPECT_EQ(back.id(i), idx.id(i));
  std::filesystem::remove(path);
}

TEST(Pairs, EmbeddingsMatchReencodingAndAssembly) {
  Small s;
  Index idx = build_index(s.corpus.train, s.enc);
  auto store = embed_dataset(s.corpus.train, s.enc);
  auto q = s.enc.encode_text_global(s.corpus.test.samples[0].caption);
  auto hits = idx.query_topk(q.data(), 3);
  auto pairs = make_pairs(hits, s.corpus.train, store);
  ASSERT_EQ(pairs.size(), 3u);
  for (const auto& p : pairs) {
    EXPECT_EQ(p.text, s.enc.encode_text_sequence(p.caption));
    EXPECT_EQ(p.audio, s.enc.encode_audio(*p.spectrogram));
    EXPECT_GE(p.score, -1.0);
    EXPECT_LE(p.score, 1.0);
  }

  auto one = assemble_conditions(std::span(pairs).first(1));
  EXPECT_EQ(one.k, 1u);
  EXPECT_EQ(one.audio, pairs[0].audio);

  auto cond = assemble_conditions(pairs);
  EXPECT_EQ(cond.text.rows(), 24u);
  EXPECT_EQ(cond.audio.rows(), 3u * 64u);

  std::vector<RetrievalPair> rev(pairs.rbegin(), pairs.rend());
  auto back = assemble_conditions(rev);
  for (std::size_t b = 0; b < 3; ++b)
    for (std::size_t r = 0; r < 8; ++r)
      for (std::size_t c = 0; c < 32; ++c) EXPECT_EQ(back.text.at(b * 8 + r, c), cond.text.at((2 - b) * 8 + r, c));

  auto bad = pairs;
  bad[1].audio = Tensor<float>(Shape{10, 32});
  EXPECT_THROW(assemble_conditions(bad), ContractError);
  EXPECT_EQ(assemble_conditions({}).k, 0u);
}
