#include "retrodiff/experiment.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <limits>
#include <map>
#include <numeric>
#include <sstream>

#include "retrodiff/checkpoint.hpp"
#include "retrodiff/error.hpp"
#include "retrodiff/plots.hpp"

namespace retrodiff {

Workspace::Workspace(Corpus data, const EncoderConfig& encoder)
    : corpus(std::move(data)),
      encoders(encoder, corpus.vocab.size(), corpus.vocab.time_steps, corpus.vocab.freq_bins),
      index(build_index(corpus.train, encoders)),
      store(embed_dataset(corpus.train, encoders)),
      filter(corpus.vocab),
      scorer(encoders, corpus.vocab) {}

std::unique_ptr<Workspace> make_workspace(const ExperimentConfig& cfg) {
  Corpus corpus = cfg.data_dir.empty() ? generate_dataset(cfg.data) : read_dataset(cfg.data_dir);
  return std::make_unique<Workspace>(std::move(corpus), cfg.encoder);
}

NoiseSchedule schedule_for(const ExperimentConfig& cfg) {
  return make_schedule(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end);
}

std::unique_ptr<Denoiser<float>> train_model(const Workspace& ws, const ExperimentConfig& cfg, std::uint64_t seed,
                                             TrainResult* result, std::ostream* log,
                                             const std::filesystem::path& loss_csv) {
  auto model = std::make_unique<Denoiser<float>>(cfg.model, seed);
  TrainConfig tc;
  tc.epochs = cfg.epochs;
  tc.batch = cfg.batch;
  tc.lr = cfg.lr;
  tc.grad_clip = cfg.grad_clip;
  tc.seed = seed;
  tc.k = cfg.effective_k();
  tc.retrieval = cfg.effective_retrieval();
  tc.loss_csv = loss_csv;
  if (log)
    tc.on_epoch = [log](std::size_t epoch, double loss) { *log << "epoch " << epoch << " mean_loss " << loss << std::endl; };
  const std::size_t before = ws.index.queries();
  auto r = train(*model, ws.context(), schedule_for(cfg), tc);
  if (tc.k == 0 && ws.index.queries() != before) throw ContractError("baseline training queried the retrieval index");
  if (result) *result = std::move(r);
  return model;
}

double Evaluation::metric(const std::string& name, const std::string& bin) const {
  for (const auto& r : rows)
    if (r.metric == name && r.bin == bin) return r.value;
  throw LookupError("no metric " + name + "/" + bin);
}

std::vector<std::size_t> eval_indices(std::size_t n_test, std::size_t count) {
  std::vector<std::size_t> out;
  if (count == 0 || count >= n_test) {
    out.resize(n_test);
    std::iota(out.begin(), out.end(), std::size_t{0});
    return out;
  }
  for (std::size_t i = 0; i < count; ++i) out.push_back(i * n_test / count);
  return out;
}

namespace {

double mean_of(const std::vector<double>& v) {
  return v.empty() ? std::numeric_limits<double>::quiet_NaN() : std::accumulate(v.begin(), v.end(), 0.0) / double(v.size());
}

FeatureStats pooled_stats(const FrozenEncoders& enc, const std::vector<const Tensor<float>*>& grids) {
  const std::size_t d = enc.config().embed_dim;
  std::vector<double> rows;
  rows.reserve(grids.size() * d);
  for (const auto* g : grids)
    for (float v : enc.pool_audio(*g).data()) rows.push_back(v);
  return feature_stats(rows, grids.size(), d);
}

}  // namespace

double conditioning_win_rate(const AlignmentScorer& scorer, const std::vector<PromptResult>& prompts,
                             std::uint64_t seed) {
  Rng rng = make_rng(seed, streams::mismatch);
  std::size_t wins = 0, trials = 0;
  for (std::size_t i = 0; i < prompts.size(); ++i) {
    std::vector<std::size_t> others;
    for (std::size_t j = 0; j < prompts.size(); ++j)
      if (prompts[j].caption.tokens != prompts[i].caption.tokens) others.push_back(j);
    if (others.empty()) continue;
    const auto j = others[std::uniform_int_distribution<std::size_t>(0, others.size() - 1)(rng)];
    ++trials;
    wins += scorer.score(prompts[i].generated, prompts[i].caption) > scorer.score(prompts[i].generated, prompts[j].caption);
  }
  return trials ? double(wins) / double(trials) : std::numeric_limits<double>::quiet_NaN();
}

Evaluation score_samples(const Workspace& ws, const ExperimentConfig& cfg, std::uint64_t seed,
                         const std::vector<std::size_t>& indices, std::vector<Tensor<float>> generated) {
  if (indices.size() != generated.size() || indices.empty())
    throw ContractError("score_samples: one generated grid per prompt is required");
  const auto& test = ws.corpus.test.samples;
  Evaluation ev;
  std::vector<const Tensor<float>*> gen_ptrs, ref_ptrs;
  std::vector<std::vector<double>> posteriors;
  std::vector<double> clap_all, clap_seen, clap_zero, kl_all, kl_seen, kl_zero;
  std::vector<std::pair<std::uint32_t, double>> class_scores;
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& s = test.at(indices[i]);
    PromptResult p;
    p.sample_id = s.id;
    p.split = s.split;
    p.caption = s.caption;
    p.generated = std::move(generated[i]);
    p.alignment = ws.scorer.score(p.generated, s.caption) * kReportScale;
    const auto gen_scores = ws.filter.scores(p.generated);
    const auto pg = posterior(gen_scores, cfg.tau);
    p.kl = kl_divergence(posterior(ws.filter.scores(s.spectrogram), cfg.tau), pg);
    posteriors.push_back(pg);
    clap_all.push_back(p.alignment);
    kl_all.push_back(p.kl);
    (s.split == Split::zeroshot ? clap_zero : clap_seen).push_back(p.alignment);
    (s.split == Split::zeroshot ? kl_zero : kl_seen).push_back(p.kl);
    for (auto c : s.caption.tokens) class_scores.emplace_back(c, p.alignment);
    ev.prompts.push_back(std::move(p));
  }
  for (std::size_t i = 0; i < indices.size(); ++i) {
    gen_ptrs.push_back(&ev.prompts[i].generated);
    ref_ptrs.push_back(&test.at(indices[i]).spectrogram);
  }

  const MetricRow base{hex64(cfg.hash()), cfg.effective_k(), cfg.model_size, "", "", 0, seed};
  auto add = [&](const std::string& metric, const std::string& bin, double value) {
    MetricRow r = base;
    r.metric = metric;
    r.bin = bin;
    r.value = value;
    ev.rows.push_back(std::move(r));
  };
  add("fad", "all", frechet_distance(pooled_stats(ws.encoders, gen_ptrs), pooled_stats(ws.encoders, ref_ptrs)));
  add("kl", "all", mean_of(kl_all));
  if (!kl_seen.empty()) add("kl", "seen", mean_of(kl_seen));
  if (!kl_zero.empty()) add("kl", "zeroshot", mean_of(kl_zero));
  add("is", "all", inception_score(posteriors));
  add("clap", "all", mean_of(clap_all));
  if (!clap_seen.empty()) add("clap", "seen", mean_of(clap_seen));
  if (!clap_zero.empty()) add("clap", "zeroshot", mean_of(clap_zero));
  ev.bins = per_bin_report(class_scores, ws.corpus.train.class_frequency);
  for (const auto& b : ev.bins) add("clap", std::string(bin_name(b.bin)), b.mean);
  ev.gap = head_tail_gap(ev.bins);
  add("clap_gap", "head-tail", ev.gap);
  add("cond_win", "all", conditioning_win_rate(ws.scorer, ev.prompts, seed));
  return ev;
}

Evaluation evaluate_model(const Workspace& ws, const ExperimentConfig& cfg, Denoiser<float>& model, std::uint64_t seed,
                          std::ostream* log) {
  const auto schedule = schedule_for(cfg);
  const auto indices = eval_indices(ws.corpus.test.size(), cfg.eval_prompts);
  const auto ctx = ws.context();
  std::vector<Tensor<float>> generated;
  generated.reserve(indices.size());
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const auto& s = ws.corpus.test.samples.at(indices[i]);
    // Test ids never occur in the training index, so there is nothing to exclude.
    const auto bundle = condition_for(s.caption, cfg.effective_k(), cfg.effective_retrieval(), ctx);
    Rng rng = make_rng(seed, streams::sample, s.id);
    generated.push_back(from_model_latent(ddpm_sample(model, bundle, schedule, rng)));
    if (log && (i + 1) % 50 == 0) *log << "sampled " << i + 1 << "/" << indices.size() << std::endl;
  }
  return score_samples(ws, cfg, seed, indices, std::move(generated));
}

void write_metrics_csv(const std::filesystem::path& path, const std::vector<MetricRow>& rows) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw IoError("cannot write " + path.string());
  os << "run_id,k,model_size,metric,bin,value,seed\n";
  char buf[64];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof buf, "%.17g", r.value);
    os << r.run_id << ',' << r.k << ',' << r.model_size << ',' << r.metric << ',' << r.bin << ',' << buf << ','
       << r.seed << '\n';
  }
}

std::vector<MetricRow> read_metrics_csv(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw IoError("cannot read " + path.string());
  std::string line;
  std::getline(is, line);
  std::vector<MetricRow> rows;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> f;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) f.push_back(cell);
    if (f.size() != 7) throw IoError(path.string() + ": malformed row '" + line + "'");
    rows.push_back({f[0], std::stoul(f[1]), f[2], f[3], f[4], std::strtod(f[5].c_str(), nullptr), std::stoull(f[6])});
  }
  return rows;
}

namespace {

std::string join_tokens(const Caption& c) {
  std::string s;
  for (std::size_t i = 0; i < c.tokens.size(); ++i) s += (i ? " " : "") + std::to_string(c.tokens[i]);
  return s;
}

void write_run_outputs(const Workspace& ws, const ExperimentConfig& cfg, const Evaluation& ev,
                       const std::filesystem::path& out, std::uint64_t seed) {
  write_metrics_csv(out / "metrics.csv", ev.rows);
  std::ofstream prompts(out / "prompts.csv", std::ios::trunc);
  std::ofstream classes(out / "class_scores.csv", std::ios::trunc);
  if (!prompts || !classes) throw IoError("cannot write evaluation outputs under " + out.string());
  prompts << "sample_id,split,tokens,alignment,kl\n";
  classes << "run_id,k,model_size,seed,sample_id,class_id,bin,score\n";
  char a[64], k[64];
  const auto run_id = hex64(cfg.hash());
  for (const auto& p : ev.prompts) {
    std::snprintf(a, sizeof a, "%.17g", p.alignment);
    std::snprintf(k, sizeof k, "%.17g", p.kl);
    prompts << p.sample_id << ',' << split_name(p.split) << ',' << join_tokens(p.caption) << ',' << a << ',' << k << '\n';
    for (auto c : p.caption.tokens)
      classes << run_id << ',' << cfg.effective_k() << ',' << cfg.model_size << ',' << seed << ',' << p.sample_id << ','
              << c << ',' << bin_name(frequency_bin(ws.corpus.train.class_frequency, c)) << ',' << a << '\n';
  }
}

void ensure_dir(const std::filesystem::path& out) {
  std::error_code ec;
  std::filesystem::create_directories(out, ec);
  if (ec) throw IoError("cannot create " + out.string() + ": " + ec.message());
}

}  // namespace

void cmd_gen_data(const ExperimentConfig& cfg, const std::filesystem::path& out, std::ostream& log) {
  ensure_dir(out);
  const Corpus corpus = generate_dataset(cfg.data);
  write_dataset(out, corpus);
  std::size_t held = 0;
  for (bool h : corpus.train.heldout) held += h;
  log << "wrote " << corpus.train.size() << " train and " << corpus.test.size() << " test samples to " << out.string()
      << " (" << held << " held-out classes)\n";
}

void cmd_train(const ExperimentConfig& cfg, const std::filesystem::path& out, std::ostream& log) {
  ensure_dir(out);
  auto ws = make_workspace(cfg);
  TrainResult result;
  auto model = train_model(*ws, cfg, cfg.seed, &result, &log, out / "loss.csv");
  const auto ckpt = out / "model.ckpt";
  save_checkpoint(ckpt, model->params(), cfg.hash());
  std::ofstream run(out / "run.tsv", std::ios::trunc);
  run << "run_id\t" << hex64(cfg.hash()) << "\nseed\t" << cfg.seed << "\ncheckpoint\t" << ckpt.string()
      << "\nparameters\t" << model->params().scalar_count() << "\nsteps\t" << result.steps << "\nfinal_loss\t"
      << (result.epoch_loss.empty() ? 0.0 : result.epoch_loss.back()) << "\n";
  std::ofstream(out / "config.txt", std::ios::trunc) << cfg.canonical();
  log << "saved " << ckpt.string() << " (" << model->params().scalar_count() << " parameters)\n";
}

void cmd_evaluate(const ExperimentConfig& cfg, const std::filesystem::path& out, const std::filesystem::path& checkpoint,
                  std::ostream& log) {
  ensure_dir(out);
  auto ws = make_workspace(cfg);
  Denoiser<float> model(cfg.model, cfg.seed);
  const auto stored = load_checkpoint(checkpoint, model.params());
  if (stored != cfg.hash())
    log << "warning: checkpoint config hash " << hex64(stored) << " differs from " << hex64(cfg.hash()) << "\n";
  const auto ev = evaluate_model(*ws, cfg, model, cfg.seed, &log);
  write_run_outputs(*ws, cfg, ev, out, cfg.seed);
  log << "clap " << ev.metric("clap") << " kl " << ev.metric("kl") << " fad " << ev.metric("fad") << " is "
      << ev.metric("is") << "\n";
}

void cmd_ablate_k(const ExperimentConfig& cfg, const std::filesystem::path& out, std::ostream& log) {
  ensure_dir(out);
  auto ws = make_workspace(cfg);
  std::vector<MetricRow> sweep, all;
  LineSeries series{"clap", {}, {}, {}};
  for (const auto k : cfg.k_list) {
    ExperimentConfig c = cfg;
    c.k = k;
    if (k > 0 && c.retrieval == RetrievalType::none) c.retrieval = RetrievalType::audio_text;
    validate(c);
    std::vector<double> values;
    for (std::size_t s = 0; s < cfg.num_seeds; ++s) {
      const std::uint64_t seed = cfg.seed + s;
      log << "k=" << k << " seed=" << seed << std::endl;
      auto model = train_model(*ws, c, seed, nullptr, &log);
      const auto ev = evaluate_model(*ws, c, *model, seed, &log);
      all.insert(all.end(), ev.rows.begin(), ev.rows.end());
      for (const auto& r : ev.rows)
        if (r.metric == "clap" && r.bin == "all") sweep.push_back(r);
      values.push_back(ev.metric("clap"));
      write_metrics_csv(out / "ablate_k.csv", sweep);
    }
    const double m = mean_of(values);
    double var = 0;
    for (double v : values) var += (v - m) * (v - m);
    series.x.push_back(double(k));
    series.y.push_back(m);
    series.err.push_back(values.size() > 1 ? std::sqrt(var / double(values.size() - 1)) : 0.0);
  }
  write_metrics_csv(out / "ablate_k.csv", sweep);
  write_metrics_csv(out / "ablate_k_metrics.csv", all);
  write_line_svg(out / "k_sweep.svg", "Alignment vs. retrieved pairs", "k", "alignment (x100)", {series});
  log << "wrote " << sweep.size() << " sweep rows\n";
}

namespace {

struct ClassScoreFile {
  std::string run_id, model_size;
  std::size_t k = 0;
  std::uint64_t seed = 0;
  std::map<std::string, std::vector<double>> by_bin;
};

ClassScoreFile read_class_scores(const std::filesystem::path& dir) {
  const auto path = dir / "class_scores.csv";
  std::ifstream is(path);
  if (!is) throw IoError("no evaluation found: " + path.string() + " (run evaluate first)");
  ClassScoreFile f;
  std::string line;
  std::getline(is, line);
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> c;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) c.push_back(cell);
    if (c.size() != 8) throw IoError(path.string() + ": malformed row '" + line + "'");
    f.run_id = c[0];
    f.k = std::stoul(c[1]);
    f.model_size = c[2];
    f.seed = std::stoull(c[3]);
    f.by_bin[c[6]].push_back(std::strtod(c[7].c_str(), nullptr));
  }
  return f;
}

double slice_mean(const std::filesystem::path& dir, std::string_view split) {
  std::ifstream is(dir / "prompts.csv");
  if (!is) throw IoError("no evaluation found under " + dir.string());
  std::string line;
  std::getline(is, line);
  std::vector<double> v;
  while (std::getline(is, line)) {
    std::vector<std::string> c;
    std::istringstream ls(line);
    std::string cell;
    while (std::getline(ls, cell, ',')) c.push_back(cell);
    if (c.size() == 5 && c[1] == split) v.push_back(std::strtod(c[3].c_str(), nullptr));
  }
  return mean_of(v);
}

}  // namespace

void cmd_longtail_report(const std::filesystem::path& out, const std::vector<std::filesystem::path>& compare,
                         std::ostream& log) {
  std::vector<std::filesystem::path> runs{out};
  runs.insert(runs.end(), compare.begin(), compare.end());
  std::vector<std::string> categories;
  for (std::size_t b = 0; b < kFrequencyBinCount; ++b) categories.emplace_back(bin_name(FrequencyBin(b)));
  std::vector<MetricRow> rows;
  std::vector<BarSeries> bars;
  for (const auto& dir : runs) {
    const auto f = read_class_scores(dir);
    std::vector<BinRow> bins(kFrequencyBinCount);
    BarSeries bar{dir.filename().string() + " (k=" + std::to_string(f.k) + ")", {}};
    for (std::size_t b = 0; b < kFrequencyBinCount; ++b) {
      bins[b].bin = FrequencyBin(b);
      const auto it = f.by_bin.find(categories[b]);
      bins[b].count = it == f.by_bin.end() ? 0 : it->second.size();
      bins[b].mean = it == f.by_bin.end() ? std::numeric_limits<double>::quiet_NaN() : mean_of(it->second);
      rows.push_back({f.run_id, f.k, f.model_size, "clap", categories[b], bins[b].mean, f.seed});
      bar.values.push_back(bins[b].mean);
    }
    rows.push_back({f.run_id, f.k, f.model_size, "clap_gap", "head-tail", head_tail_gap(bins), f.seed});
    rows.push_back({f.run_id, f.k, f.model_size, "clap_slice", "zeroshot", slice_mean(dir, "zeroshot"), f.seed});
    bars.push_back(std::move(bar));
    log << dir.string() << ": head-tail gap " << head_tail_gap(bins) << "\n";
  }
  write_metrics_csv(out / "longtail.csv", rows);
  write_bar_svg(out / "longtail.svg", "Alignment by class frequency", categories, "alignment (x100)", bars);
}

}  // namespace retrodiff
