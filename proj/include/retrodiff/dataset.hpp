#pragma once

// Synthetic long-tailed "event spectrogram" corpus.
//
// Each event class renders as a Gaussian-profile chirp patch with its own
// centre frequency, bandwidth, slope and duration. Captions list 1-4 events
// with onsets on an 8-step grid; class popularity follows a Zipf law so a few
// head classes dominate and most classes are rare.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "retrodiff/rng.hpp"
#include "retrodiff/tensor.hpp"

namespace retrodiff {

// Onsets fall on multiples of this many time steps (one encoder patch).
inline constexpr std::size_t kOnsetQuantum = 8;
inline constexpr std::size_t kMaxCaptionTokens = 4;

struct EventClass {
  std::uint32_t id = 0;
  double center = 0;        // frequency bin at the temporal midpoint of the chirp
  double bandwidth = 1;     // Gaussian σ across frequency, in bins
  double slope = 0;         // frequency drift, bins per time step
  std::uint32_t duration = kOnsetQuantum;  // time steps
  double weight = 0;        // normalized Zipf sampling weight

  friend bool operator==(const EventClass&, const EventClass&) = default;
};

struct Vocabulary {
  std::uint64_t seed = 0;
  std::size_t time_steps = 64;
  std::size_t freq_bins = 64;
  double zipf_s = 1.1;
  std::vector<EventClass> classes;

  std::size_t size() const noexcept { return classes.size(); }
  const EventClass& at(std::uint32_t id) const;
  std::vector<double> weights() const;
  // Noiseless duration×freq_bins rendering of one event starting at row 0.
  Tensor<float> event_template(std::uint32_t id) const;
};

Vocabulary build_vocabulary(std::uint64_t seed, std::size_t num_classes, double zipf_s,
                            std::size_t time_steps = 64, std::size_t freq_bins = 64);

struct Caption {
  std::vector<std::uint32_t> tokens;
  std::vector<std::uint32_t> onsets;  // time steps, strictly increasing, one per token

  double onset_fraction(std::size_t i, std::size_t time_steps) const {
    return double(onsets.at(i)) / double(time_steps);
  }
  bool contains(std::uint32_t id) const;
  friend bool operator==(const Caption&, const Caption&) = default;
};

// Throws ContractError when the caption breaks its invariants for `vocab`.
void validate_caption(const Caption& caption, const Vocabulary& vocab);

// Draws a caption using `weights` (one per class, need not be normalized).
// Classes flagged in `heldout` are never drawn.
Caption sample_caption(Rng& rng, const Vocabulary& vocab, const std::vector<bool>& heldout,
                       std::span<const double> weights);
Caption sample_caption(Rng& rng, const Vocabulary& vocab, const std::vector<bool>& heldout);

// Paints every event, clips to [0, 1], then adds N(0, noise_sigma²) per cell.
Tensor<float> render_spectrogram(const Caption& caption, const Vocabulary& vocab, Rng& rng,
                                 double noise_sigma = 0.02);
Tensor<float> render_clean(const Caption& caption, const Vocabulary& vocab);

enum class Split { train, test, zeroshot };
std::string_view split_name(Split s);
Split parse_split(std::string_view s);

struct Sample {
  std::uint64_t id = 0;
  Caption caption;
  Tensor<float> spectrogram;  // time_steps × freq_bins
  Split split = Split::train;
};

struct Dataset {
  std::vector<Sample> samples;
  // Occurrences of each class over the *training* captions.
  std::vector<std::size_t> class_frequency;
  std::vector<bool> heldout;

  std::size_t size() const noexcept { return samples.size(); }
};

struct DatasetConfig {
  std::uint64_t seed = 1234;
  std::size_t num_classes = 64;
  double zipf_s = 1.1;
  std::size_t n_train = 5000;
  std::size_t n_test = 500;
  double heldout_fraction = 0.1;
  // Share of the test split reserved for captions that contain a held-out class.
  double zeroshot_fraction = 0.2;
  std::size_t time_steps = 64;
  std::size_t freq_bins = 64;
  double noise_sigma = 0.02;
  // Test captions follow the training Zipf weights unless this is set, in which
  // case every class is equally likely (the zero-shot slice included).
  bool balanced_test = false;
};

struct Corpus {
  DatasetConfig config;
  Vocabulary vocab;
  Dataset train;
  Dataset test;
};

Corpus generate_dataset(const DatasetConfig& config);

// Classes excluded from training, chosen among the non-head ranks.
std::vector<bool> choose_heldout(const DatasetConfig& config);

enum class FrequencyBin { zero = 0, one_to_ten, ten_to_hundred, hundred_to_thousand, thousand_plus };
inline constexpr std::size_t kFrequencyBinCount = 5;

FrequencyBin frequency_bin(std::span<const std::size_t> class_frequency, std::uint32_t class_id);
std::string_view bin_name(FrequencyBin bin);

// Directory layout: manifest.tsv, vocab.tsv and one <sample_id>.f32 per sample.
void write_dataset(const std::filesystem::path& dir, const Corpus& corpus);
Corpus read_dataset(const std::filesystem::path& dir);

}  // namespace retrodiff
