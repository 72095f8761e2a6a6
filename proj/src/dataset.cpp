#include "retrodiff/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "retrodiff/binary_io.hpp"
#include "retrodiff/error.hpp"

namespace retrodiff {

namespace {

// Eight slopes, each shared by eight classes with different centres mod 8.
constexpr double kSlopes[8] = {-0.875, -0.625, -0.375, -0.125, 0.125, 0.375, 0.625, 0.875};

void paint_event(const EventClass& c, std::size_t onset, std::size_t time_steps, std::size_t freq_bins,
                 float* grid) {
  const double mid = (double(c.duration) - 1.0) / 2.0;
  const double inv = 1.0 / (2.0 * c.bandwidth * c.bandwidth);
  for (std::size_t s = 0; s < c.duration && onset + s < time_steps; ++s) {
    const double fc = c.center + c.slope * (double(s) - mid);
    float* row = grid + (onset + s) * freq_bins;
    for (std::size_t f = 0; f < freq_bins; ++f) {
      const double d = double(f) - fc;
      row[f] += float(std::exp(-d * d * inv));
    }
  }
}

// Onsets on distinct 8-step slots, increasing in token order, every event inside the grid.
void place_onsets(Rng& rng, const Vocabulary& vocab, Caption& cap) {
  const std::size_t n = cap.tokens.size();
  const std::size_t slots = vocab.time_steps / kOnsetQuantum;
  auto fits = [&](const std::vector<std::size_t>& chosen) {
    for (std::size_t i = 0; i < n; ++i)
      if (chosen[i] * kOnsetQuantum + vocab.at(cap.tokens[i]).duration > vocab.time_steps) return false;
    return true;
  };
  std::vector<std::size_t> all(slots);
  std::iota(all.begin(), all.end(), std::size_t{0});
  std::vector<std::size_t> chosen;
  bool placed = false;
  for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
    chosen.clear();
    std::sample(all.begin(), all.end(), std::back_inserter(chosen), n, rng);
    placed = fits(chosen);
  }
  if (!placed) {
    chosen.resize(n);
    std::iota(chosen.begin(), chosen.end(), std::size_t{0});
  }
  cap.onsets.clear();
  for (auto s : chosen) cap.onsets.push_back(std::uint32_t(s * kOnsetQuantum));
}

std::vector<std::string> split_on(const std::string& s, char sep) {
  std::vector<std::string> out;
  std::string cur;
  std::istringstream is(s);
  while (std::getline(is, cur, sep)) out.push_back(cur);
  return out;
}

}  // namespace

const EventClass& Vocabulary::at(std::uint32_t id) const {
  if (id >= classes.size()) throw LookupError("unknown event class " + std::to_string(id));
  return classes[id];
}

std::vector<double> Vocabulary::weights() const {
  std::vector<double> w;
  w.reserve(classes.size());
  for (const auto& c : classes) w.push_back(c.weight);
  return w;
}

Tensor<float> Vocabulary::event_template(std::uint32_t id) const {
  const auto& c = at(id);
  Tensor<float> t(Shape{c.duration, freq_bins});
  paint_event(c, 0, c.duration, freq_bins, t.raw());
  return t;
}

Vocabulary build_vocabulary(std::uint64_t seed, std::size_t num_classes, double zipf_s, std::size_t time_steps,
                            std::size_t freq_bins) {
  if (num_classes < 8) throw ConfigError("vocabulary needs at least 8 classes, got " + std::to_string(num_classes));
  if (!(zipf_s >= 0)) throw ConfigError("zipf exponent must be non-negative");
  if (time_steps % kOnsetQuantum || time_steps < 4 * kOnsetQuantum)
    throw ConfigError("time_steps must be a multiple of 8 and at least 32");
  if (freq_bins < 32) throw ConfigError("freq_bins must be at least 32");

  Vocabulary v;
  v.seed = seed;
  v.time_steps = time_steps;
  v.freq_bins = freq_bins;
  v.zipf_s = zipf_s;

  Rng rng = make_rng(seed, streams::vocabulary);
  std::vector<std::uint32_t> perm(num_classes);
  std::iota(perm.begin(), perm.end(), 0u);
  std::shuffle(perm.begin(), perm.end(), rng);
  const std::size_t tiers = (num_classes + 63) / 64;

  double total = 0;
  std::vector<std::vector<double>> by_slope(8);
  for (std::uint32_t id = 0; id < num_classes; ++id) {
    const std::uint32_t q = perm[id];
    EventClass c;
    c.id = id;
    c.slope = kSlopes[q % 8];
    const double offset = double((q / 8) % 8) + double(q / 64) / double(tiers);
    c.bandwidth = std::uniform_real_distribution<double>(0.8, 1.3)(rng);
    // Equal durations: a shorter class would match inside a longer chirp of the same slope.
    std::size_t slots = 2;
    std::vector<double> centers;
    for (; slots >= 1 && centers.empty(); --slots) {
      c.duration = std::uint32_t(slots * kOnsetQuantum);
      const double half = std::abs(c.slope) * (double(c.duration) - 1.0) / 2.0 + 2.5 * c.bandwidth;
      for (double ctr = offset; ctr < double(freq_bins); ctr += 8.0)
        if (ctr - half >= 0.0 && ctr + half <= double(freq_bins - 1)) centers.push_back(ctr);
    }
    if (centers.empty()) throw ConfigError("frequency axis too small for the event classes");
    // Farthest admissible centre from the classes already sharing this slope.
    auto& taken = by_slope[q % 8];
    std::vector<double> gap(centers.size(), std::numeric_limits<double>::infinity());
    for (std::size_t i = 0; i < centers.size(); ++i)
      for (double t : taken) gap[i] = std::min(gap[i], std::abs(centers[i] - t));
    const double widest = *std::max_element(gap.begin(), gap.end());
    std::vector<double> best;
    for (std::size_t i = 0; i < centers.size(); ++i)
      if (gap[i] == widest) best.push_back(centers[i]);
    c.center = best[std::uniform_int_distribution<std::size_t>(0, best.size() - 1)(rng)];
    taken.push_back(c.center);
    c.weight = std::pow(double(id + 1), -zipf_s);
    total += c.weight;
    v.classes.push_back(c);
  }
  for (auto& c : v.classes) c.weight /= total;
  return v;
}

bool Caption::contains(std::uint32_t id) const {
  return std::find(tokens.begin(), tokens.end(), id) != tokens.end();
}

void validate_caption(const Caption& caption, const Vocabulary& vocab) {
  const auto n = caption.tokens.size();
  if (n < 1 || n > kMaxCaptionTokens) throw ContractError("caption must have 1-4 tokens");
  if (caption.onsets.size() != n) throw ContractError("caption needs one onset per token");
  for (std::size_t i = 0; i < n; ++i) {
    if (caption.tokens[i] >= vocab.size()) throw ContractError("caption token out of vocabulary");
    if (caption.onsets[i] >= vocab.time_steps) throw ContractError("caption onset beyond the grid");
    if (i && caption.onsets[i] <= caption.onsets[i - 1]) throw ContractError("caption onsets must increase");
  }
}

Caption sample_caption(Rng& rng, const Vocabulary& vocab, const std::vector<bool>& heldout,
                       std::span<const double> weights) {
  if (weights.size() != vocab.size()) throw ContractError("sample_caption: one weight per class required");
  std::vector<double> w(weights.begin(), weights.end());
  for (std::size_t i = 0; i < w.size(); ++i)
    if (i < heldout.size() && heldout[i]) w[i] = 0;
  if (std::none_of(w.begin(), w.end(), [](double x) { return x > 0; }))
    throw ConfigError("no class left to sample after removing held-out classes");

  std::discrete_distribution<std::uint32_t> pick(w.begin(), w.end());
  const std::size_t draws = std::uniform_int_distribution<std::size_t>(1, kMaxCaptionTokens)(rng);
  Caption cap;
  for (std::size_t i = 0; i < draws; ++i) {
    const std::uint32_t id = pick(rng);
    if (!cap.contains(id)) cap.tokens.push_back(id);
  }

  place_onsets(rng, vocab, cap);
  return cap;
}

Caption sample_caption(Rng& rng, const Vocabulary& vocab, const std::vector<bool>& heldout) {
  const auto w = vocab.weights();
  return sample_caption(rng, vocab, heldout, w);
}

Tensor<float> render_clean(const Caption& caption, const Vocabulary& vocab) {
  validate_caption(caption, vocab);
  Tensor<float> grid(Shape{vocab.time_steps, vocab.freq_bins});
  for (std::size_t i = 0; i < caption.tokens.size(); ++i)
    paint_event(vocab.at(caption.tokens[i]), caption.onsets[i], vocab.time_steps, vocab.freq_bins, grid.raw());
  for (auto& v : grid.data()) v = std::min(v, 1.0f);
  return grid;
}

Tensor<float> render_spectrogram(const Caption& caption, const Vocabulary& vocab, Rng& rng, double noise_sigma) {
  Tensor<float> grid = render_clean(caption, vocab);
  if (noise_sigma > 0) {
    std::normal_distribution<double> noise(0.0, noise_sigma);
    for (auto& v : grid.data()) v += float(noise(rng));
  }
  return grid;
}

std::string_view split_name(Split s) {
  switch (s) {
    case Split::train: return "train";
    case Split::test: return "test";
    case Split::zeroshot: return "zeroshot";
  }
  return "?";
}

Split parse_split(std::string_view s) {
  if (s == "train") return Split::train;
  if (s == "test") return Split::test;
  if (s == "zeroshot") return Split::zeroshot;
  throw IoError("unknown split tag '" + std::string(s) + "'");
}

std::vector<bool> choose_heldout(const DatasetConfig& config) {
  std::vector<bool> heldout(config.num_classes, false);
  const auto count = std::size_t(std::floor(config.heldout_fraction * double(config.num_classes) + 1e-9));
  if (count == 0) return heldout;
  std::vector<std::uint32_t> candidates;
  for (auto id = std::uint32_t(config.num_classes / 4); id < config.num_classes; ++id) candidates.push_back(id);
  Rng rng = make_rng(config.seed, streams::split);
  std::shuffle(candidates.begin(), candidates.end(), rng);
  for (std::size_t i = 0; i < count; ++i) heldout[candidates[i]] = true;
  return heldout;
}

Corpus generate_dataset(const DatasetConfig& config) {
  if (config.n_train < 1 || config.n_test < 1) throw ConfigError("n_train and n_test must be at least 1");
  if (!(config.heldout_fraction >= 0) || config.heldout_fraction >= 0.5)
    throw ConfigError("heldout_fraction must lie in [0, 0.5)");
  if (!(config.zeroshot_fraction >= 0) || config.zeroshot_fraction > 1)
    throw ConfigError("zeroshot_fraction must lie in [0, 1]");
  if (!(config.noise_sigma >= 0)) throw ConfigError("noise_sigma must be non-negative");

  Corpus corpus;
  corpus.config = config;
  corpus.vocab = build_vocabulary(config.seed, config.num_classes, config.zipf_s, config.time_steps, config.freq_bins);
  const auto& vocab = corpus.vocab;
  const auto heldout = choose_heldout(config);
  const auto zipf = vocab.weights();
  const std::vector<double> uniform(vocab.size(), 1.0);
  const std::vector<bool> none(vocab.size(), false);
  std::vector<std::uint32_t> held_ids;
  for (std::uint32_t i = 0; i < heldout.size(); ++i)
    if (heldout[i]) held_ids.push_back(i);

  const std::size_t n_zeroshot =
      held_ids.empty() ? 0 : std::size_t(std::llround(config.zeroshot_fraction * double(config.n_test)));

  auto make_sample = [&](std::uint64_t id, Split split) {
    Rng crng = make_rng(config.seed, streams::caption, id);
    Sample s;
    s.id = id;
    s.split = split;
    if (split == Split::train) {
      s.caption = sample_caption(crng, vocab, heldout, zipf);
    } else if (split == Split::test) {
      s.caption = sample_caption(crng, vocab, heldout, config.balanced_test ? std::span<const double>(uniform)
                                                                            : std::span<const double>(zipf));
    } else {
      // One held-out event at a random position; the rest from the full vocabulary.
      Caption base = sample_caption(crng, vocab, none, config.balanced_test ? std::span<const double>(uniform)
                                                                            : std::span<const double>(zipf));
      const auto held = held_ids[std::uniform_int_distribution<std::size_t>(0, held_ids.size() - 1)(crng)];
      if (!base.contains(held)) {
        const auto pos = std::uniform_int_distribution<std::size_t>(0, base.tokens.size() - 1)(crng);
        base.tokens[pos] = held;
        place_onsets(crng, vocab, base);
      }
      s.caption = std::move(base);
    }
    Rng rrng = make_rng(config.seed, streams::render, id);
    s.spectrogram = render_spectrogram(s.caption, vocab, rrng, config.noise_sigma);
    return s;
  };

  corpus.train.samples.resize(config.n_train);
  corpus.test.samples.resize(config.n_test);
#pragma omp parallel for schedule(dynamic, 16)
  for (std::size_t i = 0; i < config.n_train; ++i) corpus.train.samples[i] = make_sample(i, Split::train);
#pragma omp parallel for schedule(dynamic, 16)
  for (std::size_t i = 0; i < config.n_test; ++i) {
    const Split split = i + n_zeroshot >= config.n_test ? Split::zeroshot : Split::test;
    corpus.test.samples[i] = make_sample(config.n_train + i, split);
  }

  std::vector<std::size_t> freq(vocab.size(), 0);
  for (const auto& s : corpus.train.samples)
    for (auto t : s.caption.tokens) ++freq[t];
  corpus.train.class_frequency = freq;
  corpus.test.class_frequency = freq;
  corpus.train.heldout = heldout;
  corpus.test.heldout = heldout;
  return corpus;
}

FrequencyBin frequency_bin(std::span<const std::size_t> class_frequency, std::uint32_t class_id) {
  if (class_id >= class_frequency.size()) throw LookupError("unknown class " + std::to_string(class_id));
  const auto n = class_frequency[class_id];
  if (n == 0) return FrequencyBin::zero;
  if (n < 10) return FrequencyBin::one_to_ten;
  if (n < 100) return FrequencyBin::ten_to_hundred;
  if (n < 1000) return FrequencyBin::hundred_to_thousand;
  return FrequencyBin::thousand_plus;
}

std::string_view bin_name(FrequencyBin bin) {
  switch (bin) {
    case FrequencyBin::zero: return "zero";
    case FrequencyBin::one_to_ten: return "1-10";
    case FrequencyBin::ten_to_hundred: return "10-100";
    case FrequencyBin::hundred_to_thousand: return "100-1000";
    case FrequencyBin::thousand_plus: return "1000+";
  }
  return "?";
}

void write_dataset(const std::filesystem::path& dir, const Corpus& corpus) {
  std::error_code ec;
  std::filesystem::create_directories(dir, ec);
  if (ec) throw IoError("cannot create " + dir.string() + ": " + ec.message());
  const auto& cfg = corpus.config;

  std::ofstream vocab(dir / "vocab.tsv");
  if (!vocab) throw IoError("cannot write vocab.tsv in " + dir.string());
  vocab << std::setprecision(17);
  vocab << "# seed=" << cfg.seed << " classes=" << cfg.num_classes << " zipf_s=" << cfg.zipf_s
        << " n_train=" << cfg.n_train << " n_test=" << cfg.n_test << " heldout_fraction=" << cfg.heldout_fraction
        << " zeroshot_fraction=" << cfg.zeroshot_fraction << " time_steps=" << cfg.time_steps
        << " freq_bins=" << cfg.freq_bins << " noise_sigma=" << cfg.noise_sigma
        << " balanced_test=" << (cfg.balanced_test ? 1 : 0) << '\n';
  vocab << "class_id\tcenter\tbandwidth\tslope\tduration_fraction\tweight\theldout\ttrain_frequency\n";
  for (const auto& c : corpus.vocab.classes) {
    vocab << c.id << '\t' << c.center << '\t' << c.bandwidth << '\t' << c.slope << '\t'
          << double(c.duration) / double(cfg.time_steps) << '\t' << c.weight << '\t'
          << (corpus.train.heldout[c.id] ? 1 : 0) << '\t' << corpus.train.class_frequency[c.id] << '\n';
  }
  if (!vocab) throw IoError("failed writing vocab.tsv");

  std::ofstream manifest(dir / "manifest.tsv");
  if (!manifest) throw IoError("cannot write manifest.tsv in " + dir.string());
  manifest << std::setprecision(17);
  manifest << "sample_id\ttokens\tonsets\tsplit\n";
  auto emit = [&](const Sample& s) {
    manifest << s.id << '\t';
    for (std::size_t i = 0; i < s.caption.tokens.size(); ++i) manifest << (i ? "," : "") << s.caption.tokens[i];
    manifest << '\t';
    for (std::size_t i = 0; i < s.caption.onsets.size(); ++i)
      manifest << (i ? "," : "") << s.caption.onset_fraction(i, cfg.time_steps);
    manifest << '\t' << split_name(s.split) << '\n';
    binio::write_f32_file(dir / (std::to_string(s.id) + ".f32"), s.spectrogram.data());
  };
  for (const auto& s : corpus.train.samples) emit(s);
  for (const auto& s : corpus.test.samples) emit(s);
  if (!manifest) throw IoError("failed writing manifest.tsv");
}

Corpus read_dataset(const std::filesystem::path& dir) {
  std::ifstream vocab(dir / "vocab.tsv");
  if (!vocab) throw IoError("missing dataset: " + (dir / "vocab.tsv").string());
  std::string line;
  std::getline(vocab, line);
  if (line.rfind("# ", 0) != 0) throw IoError("vocab.tsv: missing header comment");
  std::map<std::string, std::string> kv;
  {
    std::istringstream is(line.substr(2));
    std::string tok;
    while (is >> tok) {
      const auto eq = tok.find('=');
      if (eq != std::string::npos) kv[tok.substr(0, eq)] = tok.substr(eq + 1);
    }
  }
  auto need = [&](const char* key) -> const std::string& {
    auto it = kv.find(key);
    if (it == kv.end()) throw IoError(std::string("vocab.tsv: header lacks ") + key);
    return it->second;
  };
  Corpus corpus;
  auto& cfg = corpus.config;
  cfg.seed = std::stoull(need("seed"));
  cfg.num_classes = std::stoull(need("classes"));
  cfg.zipf_s = std::stod(need("zipf_s"));
  cfg.n_train = std::stoull(need("n_train"));
  cfg.n_test = std::stoull(need("n_test"));
  cfg.heldout_fraction = std::stod(need("heldout_fraction"));
  cfg.zeroshot_fraction = std::stod(need("zeroshot_fraction"));
  cfg.time_steps = std::stoull(need("time_steps"));
  cfg.freq_bins = std::stoull(need("freq_bins"));
  cfg.noise_sigma = std::stod(need("noise_sigma"));
  cfg.balanced_test = need("balanced_test") == "1";

  auto& v = corpus.vocab;
  v.seed = cfg.seed;
  v.time_steps = cfg.time_steps;
  v.freq_bins = cfg.freq_bins;
  v.zipf_s = cfg.zipf_s;
  std::vector<bool> heldout(cfg.num_classes, false);
  std::vector<std::size_t> freq(cfg.num_classes, 0);
  std::getline(vocab, line);  // column header
  while (std::getline(vocab, line)) {
    if (line.empty()) continue;
    const auto f = split_on(line, '\t');
    if (f.size() != 8) throw IoError("vocab.tsv: malformed row '" + line + "'");
    EventClass c;
    c.id = std::uint32_t(std::stoul(f[0]));
    c.center = std::stod(f[1]);
    c.bandwidth = std::stod(f[2]);
    c.slope = std::stod(f[3]);
    c.duration = std::uint32_t(std::llround(std::stod(f[4]) * double(cfg.time_steps)));
    c.weight = std::stod(f[5]);
    if (c.id != v.classes.size()) throw IoError("vocab.tsv: class ids must be dense and ordered");
    heldout.at(c.id) = f[6] == "1";
    freq.at(c.id) = std::stoull(f[7]);
    v.classes.push_back(c);
  }
  if (v.classes.size() != cfg.num_classes) throw IoError("vocab.tsv: class count does not match header");

  std::ifstream manifest(dir / "manifest.tsv");
  if (!manifest) throw IoError("missing dataset: " + (dir / "manifest.tsv").string());
  std::getline(manifest, line);
  const std::size_t cells = cfg.time_steps * cfg.freq_bins;
  while (std::getline(manifest, line)) {
    if (line.empty()) continue;
    const auto f = split_on(line, '\t');
    if (f.size() != 4) throw IoError("manifest.tsv: malformed row '" + line + "'");
    Sample s;
    s.id = std::stoull(f[0]);
    for (const auto& t : split_on(f[1], ',')) s.caption.tokens.push_back(std::uint32_t(std::stoul(t)));
    for (const auto& o : split_on(f[2], ','))
      s.caption.onsets.push_back(std::uint32_t(std::llround(std::stod(o) * double(cfg.time_steps))));
    s.split = parse_split(f[3]);
    validate_caption(s.caption, v);
    s.spectrogram = Tensor<float>(Shape{cfg.time_steps, cfg.freq_bins},
                                  binio::read_f32_file(dir / (f[0] + ".f32"), cells));
    (s.split == Split::train ? corpus.train : corpus.test).samples.push_back(std::move(s));
  }
  corpus.train.class_frequency = freq;
  corpus.test.class_frequency = freq;
  corpus.train.heldout = heldout;
  corpus.test.heldout = heldout;
  return corpus;
}

}  // namespace retrodiff
