#pragma once

// Experiment harness behind the CLI verbs. The library entry points here are
// also what the acceptance suite drives directly, so that several arms can
// share one generated corpus and encoder set.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <memory>
#include <string>
#include <vector>

#include "retrodiff/config.hpp"
#include "retrodiff/diffusion.hpp"
#include "retrodiff/metrics.hpp"

namespace retrodiff {

struct Workspace {
  Workspace(Corpus data, const EncoderConfig& encoder);
  Workspace(const Workspace&) = delete;
  Workspace& operator=(const Workspace&) = delete;

  Corpus corpus;
  FrozenEncoders encoders;
  Index index;
  EmbeddingStore store;
  MatchedFilter filter;
  AlignmentScorer scorer;

  RetrievalContext context() const { return {&corpus.train, &encoders, &index, &store}; }
};

// Loads cfg.data_dir when set, otherwise generates the corpus in memory.
std::unique_ptr<Workspace> make_workspace(const ExperimentConfig& cfg);

NoiseSchedule schedule_for(const ExperimentConfig& cfg);

// Trains a fresh model for (cfg, seed).
std::unique_ptr<Denoiser<float>> train_model(const Workspace& ws, const ExperimentConfig& cfg, std::uint64_t seed,
                                             TrainResult* result = nullptr, std::ostream* log = nullptr,
                                             const std::filesystem::path& loss_csv = {});

struct MetricRow {
  std::string run_id;
  std::size_t k = 0;
  std::string model_size;
  std::string metric;
  std::string bin;
  double value = 0;
  std::uint64_t seed = 0;
};

struct PromptResult {
  std::uint64_t sample_id = 0;
  Split split = Split::test;
  Caption caption;
  Tensor<float> generated;
  double alignment = 0;
  double kl = 0;
};

struct Evaluation {
  std::vector<PromptResult> prompts;
  std::vector<MetricRow> rows;
  std::vector<BinRow> bins;
  // Head-minus-tail alignment gap (×100).
  double gap = 0;

  double metric(const std::string& name, const std::string& bin = "all") const;
};

// Share of prompts whose sample aligns strictly better with its own caption than
// with a randomly drawn prompt of different content.
double conditioning_win_rate(const AlignmentScorer& scorer, const std::vector<PromptResult>& prompts,
                             std::uint64_t seed);

// Evenly spaced test-split positions; all of them when count is 0 or too large.
std::vector<std::size_t> eval_indices(std::size_t n_test, std::size_t count);

// Scores given spectrograms (one per selected test prompt) against the references.
Evaluation score_samples(const Workspace& ws, const ExperimentConfig& cfg, std::uint64_t seed,
                         const std::vector<std::size_t>& indices, std::vector<Tensor<float>> generated);

// Samples one spectrogram per selected test prompt with retrieval from the training index.
Evaluation evaluate_model(const Workspace& ws, const ExperimentConfig& cfg, Denoiser<float>& model, std::uint64_t seed,
                          std::ostream* log = nullptr);

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows);
std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path);

// CLI verbs. `out` is the run directory.
void cmd_gen_data(const ExperimentConfig& cfg, const std::filesystem::path& out, std::ostream& log);
void cmd_train(const ExperimentConfig& cfg, const std::filesystem::path& out, std::ostream& log);
void cmd_evaluate(const ExperimentConfig& cfg, const std::filesystem::path& out, const std::filesystem::path& checkpoint,
                  std::ostream& log);
void cmd_ablate_k(const ExperimentConfig& cfg, const std::filesystem::path& out, std::ostream& log);
void cmd_longtail_report(const std::filesystem::path& out, const std::vector<std::filesystem::path>& compare,
                         std::ostream& log);

}  // namespace retrodiff
