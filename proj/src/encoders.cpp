#include "retrodiff/encoders.hpp"

#include <cmath>
#include <fstream>

#include "retrodiff/binary_io.hpp"
#include "retrodiff/error.hpp"
#include "retrodiff/kernels.hpp"
#include "retrodiff/rng.hpp"

namespace retrodiff {

namespace {

Tensor<float> gaussian(Rng& rng, Shape shape, double stddev) {
  Tensor<float> t(std::move(shape));
  fill_normal<float>(rng, t.data(), stddev);
  return t;
}

// Subtract each column's mean so the columns sum to zero.
void center_columns(Tensor<float>& t) {
  const std::size_t r = t.rows(), c = t.cols();
  for (std::size_t j = 0; j < c; ++j) {
    double m = 0;
    for (std::size_t i = 0; i < r; ++i) m += t.at(i, j);
    m /= double(r);
    for (std::size_t i = 0; i < r; ++i) t.at(i, j) = float(t.at(i, j) - m);
  }
}

}  // namespace

FrozenEncoders::FrozenEncoders(EncoderConfig config, std::size_t num_classes, std::size_t time_steps,
                               std::size_t freq_bins)
    : cfg_(config), num_classes_(num_classes), time_steps_(time_steps), freq_bins_(freq_bins) {
  if (cfg_.text_dim == 0 || cfg_.embed_dim == 0 || cfg_.text_len == 0 || cfg_.patch == 0)
    throw ConfigError("encoder dimensions must be positive");
  if (time_steps % cfg_.patch || freq_bins % cfg_.patch)
    throw ConfigError("spectrogram extents must be multiples of the patch size");
  Rng rng = make_rng(cfg_.seed, streams::encoder);
  const double d = double(cfg_.embed_dim);
  text_proj_ = gaussian(rng, {cfg_.text_dim, num_classes}, 1.0 / std::sqrt(double(cfg_.text_dim)));
  class_emb_ = gaussian(rng, {num_classes, cfg_.embed_dim}, 1.0 / std::sqrt(d));
  text_pos_ = gaussian(rng, {cfg_.text_len, cfg_.embed_dim}, 0.5 / std::sqrt(d));
  const std::size_t patch_cells = cfg_.patch * cfg_.patch;
  audio_proj_ = gaussian(rng, {patch_cells, cfg_.embed_dim}, 1.0 / std::sqrt(double(patch_cells)));
  center_columns(audio_proj_);  // flat patches map to zero

  const std::size_t tb = time_steps / cfg_.patch, fb = freq_bins / cfg_.patch;
  const Tensor<float> time_part = gaussian(rng, {tb, cfg_.embed_dim}, 0.5 / std::sqrt(d));
  const Tensor<float> freq_part = gaussian(rng, {fb, cfg_.embed_dim}, 0.5 / std::sqrt(d));
  audio_pos_ = Tensor<float>(Shape{tb * fb, cfg_.embed_dim});
  for (std::size_t i = 0; i < tb; ++i)
    for (std::size_t j = 0; j < fb; ++j)
      for (std::size_t k = 0; k < cfg_.embed_dim; ++k)
        audio_pos_.at(i * fb + j, k) = time_part.at(i, k) + freq_part.at(j, k);
  center_columns(audio_pos_);
}

Tensor<float> FrozenEncoders::encode_text_global(const Caption& caption) const {
  std::vector<double> x(num_classes_, 0.0);
  for (std::size_t i = 0; i < caption.tokens.size(); ++i) {
    const auto t = caption.tokens[i];
    if (t >= num_classes_) throw ContractError("caption token out of vocabulary");
    x[t] += 1.0 / (1.0 + 0.25 * double(i));
  }
  Tensor<float> e(Shape{cfg_.text_dim});
  double norm = 0;
  for (std::size_t r = 0; r < cfg_.text_dim; ++r) {
    double s = 0;
    for (std::size_t c = 0; c < num_classes_; ++c) s += double(text_proj_.at(r, c)) * x[c];
    e[r] = float(s);
    norm += s * s;
  }
  if (norm <= 0) throw ContractError("caption has no tokens");
  const double inv = 1.0 / std::sqrt(norm);
  for (auto& v : e.data()) v = float(v * inv);
  return e;
}

Tensor<float> FrozenEncoders::encode_text_sequence(const Caption& caption) const {
  Tensor<float> out(Shape{cfg_.text_len, cfg_.embed_dim});
  const std::size_t n = std::min(caption.tokens.size(), cfg_.text_len);
  for (std::size_t i = 0; i < n; ++i) {
    const auto t = caption.tokens[i];
    if (t >= num_classes_) throw ContractError("caption token out of vocabulary");
    for (std::size_t k = 0; k < cfg_.embed_dim; ++k) out.at(i, k) = class_emb_.at(t, k) + text_pos_.at(i, k);
  }
  return out;
}

void FrozenEncoders::check_grid(const Tensor<float>& spectrogram) const {
  if (spectrogram.rank() != 2 || spectrogram.dim(0) != time_steps_ || spectrogram.dim(1) != freq_bins_)
    throw ContractError("encode_audio: expected a " + std::to_string(time_steps_) + "x" +
                        std::to_string(freq_bins_) + " spectrogram, got " + shape_str(spectrogram.shape()));
}

Tensor<float> FrozenEncoders::encode_audio(const Tensor<float>& spectrogram) const {
  check_grid(spectrogram);
  const std::size_t p = cfg_.patch, fb = freq_bins_ / p, rows = audio_len();
  Tensor<float> patches(Shape{rows, p * p});
  for (std::size_t r = 0; r < rows; ++r) {
    const std::size_t t0 = (r / fb) * p, f0 = (r % fb) * p;
    for (std::size_t a = 0; a < p; ++a)
      for (std::size_t b = 0; b < p; ++b) patches.at(r, a * p + b) = spectrogram.at(t0 + a, f0 + b);
  }
  Tensor<float> out = audio_pos_;
  kernels::matmul_nn<float>(rows, cfg_.embed_dim, p * p, patches.data(), audio_proj_.data(), out.data(), true);
  return out;
}

Tensor<float> FrozenEncoders::pool_audio(const Tensor<float>& spectrogram) const {
  const Tensor<float> rows = encode_audio(spectrogram);
  Tensor<float> pooled(Shape{cfg_.embed_dim});
  std::vector<double> acc(cfg_.embed_dim, 0.0);
  for (std::size_t r = 0; r < rows.rows(); ++r)
    for (std::size_t k = 0; k < cfg_.embed_dim; ++k) acc[k] += rows.at(r, k);
  for (std::size_t k = 0; k < cfg_.embed_dim; ++k) pooled[k] = float(acc[k] / double(rows.rows()));
  return pooled;
}

Tensor<float> compress(const Tensor<float>& spectrogram) {
  if (spectrogram.rank() != 2) throw ContractError("compress expects a T×F grid");
  const std::size_t t = spectrogram.dim(0), f = spectrogram.dim(1);
  if (t % 4 || f % 4) throw ContractError("compress: extents " + shape_str(spectrogram.shape()) + " not divisible by 4");
  Tensor<float> z(Shape{t / 4, f / 4, 16});
  for (std::size_t i = 0; i < t / 4; ++i)
    for (std::size_t j = 0; j < f / 4; ++j)
      for (std::size_t a = 0; a < 4; ++a)
        for (std::size_t b = 0; b < 4; ++b) z[(i * (f / 4) + j) * 16 + a * 4 + b] = spectrogram.at(4 * i + a, 4 * j + b);
  return z;
}

Tensor<float> decompress(const Tensor<float>& latent) {
  if (latent.rank() != 3 || latent.dim(2) != 16) throw ContractError("decompress expects a (T/4, F/4, 16) latent");
  const std::size_t ti = latent.dim(0), fj = latent.dim(1);
  Tensor<float> x(Shape{ti * 4, fj * 4});
  for (std::size_t i = 0; i < ti; ++i)
    for (std::size_t j = 0; j < fj; ++j)
      for (std::size_t a = 0; a < 4; ++a)
        for (std::size_t b = 0; b < 4; ++b) x.at(4 * i + a, 4 * j + b) = latent[(i * fj + j) * 16 + a * 4 + b];
  return x;
}

void write_embedding(const std::filesystem::path& path, EmbeddingKind kind, const Tensor<float>& emb) {
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw IoError("cannot open " + path.string() + " for writing");
  binio::write_u32(os, static_cast<std::uint32_t>(kind));
  binio::write_u32(os, std::uint32_t(emb.rows()));
  binio::write_u32(os, std::uint32_t(emb.cols()));
  binio::write_f32(os, emb.data());
}

std::pair<EmbeddingKind, Tensor<float>> read_embedding(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path.string());
  const auto kind = binio::read_u32(is);
  if (kind < 1 || kind > 3) throw IoError(path.string() + ": unknown embedding kind " + std::to_string(kind));
  const auto rows = binio::read_u32(is);
  const auto cols = binio::read_u32(is);
  if (rows == 0 || cols == 0) throw IoError(path.string() + ": empty embedding");
  std::vector<float> data(std::size_t(rows) * cols);
  binio::read_f32(is, data);
  const auto k = static_cast<EmbeddingKind>(kind);
  Shape shape = k == EmbeddingKind::text_global && rows == 1 ? Shape{cols} : Shape{rows, cols};
  return {k, Tensor<float>(std::move(shape), std::move(data))};
}

}  // namespace retrodiff
