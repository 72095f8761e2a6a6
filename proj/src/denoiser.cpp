#include "retrodiff/denoiser.hpp"

#include <cmath>
#include <string>

#include "retrodiff/error.hpp"
#include "retrodiff/rng.hpp"

namespace retrodiff {

std::string_view retrieval_type_name(RetrievalType t) {
  switch (t) {
    case RetrievalType::none: return "none";
    case RetrievalType::audio: return "audio";
    case RetrievalType::audio_text: return "audio_text";
  }
  return "none";
}

RetrievalType parse_retrieval_type(std::string_view s) {
  if (s == "none") return RetrievalType::none;
  if (s == "audio") return RetrievalType::audio;
  if (s == "audio_text") return RetrievalType::audio_text;
  throw ConfigError("unknown retrieval_type '" + std::string(s) + "' (none, audio, audio_text)");
}

ConditionBundle make_bundle(Tensor<float> text_global, const RetrievalCondition& retrieved, RetrievalType type) {
  ConditionBundle b;
  b.text = std::move(text_global);
  if (type == RetrievalType::none || retrieved.k == 0) return b;
  b.k = retrieved.k;
  const std::size_t d = retrieved.audio.cols();
  const std::size_t ra = retrieved.audio.rows();
  const std::size_t rt = type == RetrievalType::audio_text ? retrieved.text.rows() : 0;
  b.memory = Tensor<float>(Shape{ra + rt, d});
  std::copy(retrieved.audio.data().begin(), retrieved.audio.data().end(), b.memory.data().begin());
  if (rt) std::copy(retrieved.text.data().begin(), retrieved.text.data().end(), b.memory.data().begin() + std::ptrdiff_t(ra * d));
  b.memory_type.assign(ra, 0);
  b.memory_type.resize(ra + rt, 1);
  return b;
}

template <typename T>
Tensor<T> latent_to_tokens(const Tensor<T>& latent, const DenoiserConfig& cfg) {
  if (latent.shape() != Shape{cfg.latent_t, cfg.latent_f, cfg.channels})
    throw ContractError("latent shape " + shape_str(latent.shape()) + " does not match the denoiser");
  const std::size_t s = cfg.token_side, c = cfg.channels, tf = cfg.latent_f / s;
  Tensor<T> out(Shape{cfg.tokens(), cfg.token_dim()});
  for (std::size_t i = 0; i < cfg.latent_t; ++i)
    for (std::size_t j = 0; j < cfg.latent_f; ++j) {
      const std::size_t tok = (i / s) * tf + j / s, off = ((i % s) * s + j % s) * c;
      for (std::size_t ch = 0; ch < c; ++ch) out.at(tok, off + ch) = latent[(i * cfg.latent_f + j) * c + ch];
    }
  return out;
}

template <typename T>
Tensor<T> tokens_to_latent(const Tensor<T>& tokens, const DenoiserConfig& cfg) {
  if (tokens.shape() != Shape{cfg.tokens(), cfg.token_dim()})
    throw ContractError("token shape " + shape_str(tokens.shape()) + " does not match the denoiser");
  const std::size_t s = cfg.token_side, c = cfg.channels, tf = cfg.latent_f / s;
  Tensor<T> out(Shape{cfg.latent_t, cfg.latent_f, c});
  for (std::size_t i = 0; i < cfg.latent_t; ++i)
    for (std::size_t j = 0; j < cfg.latent_f; ++j) {
      const std::size_t tok = (i / s) * tf + j / s, off = ((i % s) * s + j % s) * c;
      for (std::size_t ch = 0; ch < c; ++ch) out[(i * cfg.latent_f + j) * c + ch] = tokens.at(tok, off + ch);
    }
  return out;
}

template <typename T>
Tensor<T> time_embedding(std::size_t n, std::size_t dim) {
  Tensor<T> e(Shape{dim});
  for (std::size_t i = 0; i + 1 < dim; i += 2) {
    const double freq = std::pow(10000.0, -double(i) / double(dim));
    e[i] = T(std::sin(double(n) * freq));
    e[i + 1] = T(std::cos(double(n) * freq));
  }
  return e;
}

namespace {

template <typename T>
Tensor<T> init_weight(Rng& rng, std::size_t in, std::size_t out, double gain = 1.0) {
  Tensor<T> w(Shape{in, out});
  fill_normal<T>(rng, w.data(), gain / std::sqrt(double(in)));
  return w;
}

std::string key(std::size_t block, const char* name) { return "block" + std::to_string(block) + "." + name; }

}  // namespace

template <typename T>
Denoiser<T>::Denoiser(DenoiserConfig cfg, std::uint64_t seed) : cfg_(cfg) {
  if (cfg_.width == 0 || cfg_.blocks == 0 || cfg_.heads == 0 || cfg_.width % cfg_.heads)
    throw ConfigError("denoiser width must be a positive multiple of heads");
  if (cfg_.token_side == 0 || cfg_.latent_t % cfg_.token_side || cfg_.latent_f % cfg_.token_side)
    throw ConfigError("latent grid is not divisible into tokens");
  Rng rng = make_rng(seed, streams::init);
  const std::size_t w = cfg_.width, hidden = w * cfg_.mlp_ratio, td = cfg_.token_dim();
  // Residual branches start small so the stack begins near the identity.
  const double branch = 1.0 / std::sqrt(2.0 * double(cfg_.blocks));
  params_.add("in.w", init_weight<T>(rng, td, w));
  params_.add("in.b", Tensor<T>(Shape{w}));
  Tensor<T> pos(Shape{cfg_.tokens(), w});
  fill_normal<T>(rng, pos.data(), 0.1);
  params_.add("in.pos", std::move(pos));
  params_.add("time.w", init_weight<T>(rng, w, w));
  params_.add("time.b", Tensor<T>(Shape{w}));
  params_.add("text.w", init_weight<T>(rng, cfg_.text_dim, w));
  params_.add("text.b", Tensor<T>(Shape{w}));
  params_.add("text.w2", init_weight<T>(rng, w, w));
  params_.add("text.b2", Tensor<T>(Shape{w}));
  Tensor<T> type(Shape{2, cfg_.memory_dim});
  fill_normal<T>(rng, type.data(), 1.0 / std::sqrt(double(cfg_.memory_dim)));
  params_.add("memory.type", std::move(type));
  for (std::size_t b = 0; b < cfg_.blocks; ++b) {
    for (const char* ln : {"ln1", "ln2", "ln3"}) {
      params_.add(key(b, ln) + ".g", Tensor<T>(Shape{w}, T{1}));
      params_.add(key(b, ln) + ".b", Tensor<T>(Shape{w}));
    }
    for (const char* p : {"self.q", "self.k", "self.v", "cross.q"}) params_.add(key(b, p), init_weight<T>(rng, w, w));
    params_.add(key(b, "self.o"), init_weight<T>(rng, w, w, branch));
    params_.add(key(b, "self.ob"), Tensor<T>(Shape{w}));
    params_.add(key(b, "cross.k"), init_weight<T>(rng, cfg_.memory_dim, w));
    params_.add(key(b, "cross.v"), init_weight<T>(rng, cfg_.memory_dim, w));
    params_.add(key(b, "cross.o"), init_weight<T>(rng, w, w, branch));
    params_.add(key(b, "cross.ob"), Tensor<T>(Shape{w}));
    params_.add(key(b, "mlp.w1"), init_weight<T>(rng, w, hidden));
    params_.add(key(b, "mlp.b1"), Tensor<T>(Shape{hidden}));
    params_.add(key(b, "mlp.w2"), init_weight<T>(rng, hidden, w, branch));
    params_.add(key(b, "mlp.b2"), Tensor<T>(Shape{w}));
  }
  params_.add("out.ln.g", Tensor<T>(Shape{w}, T{1}));
  params_.add("out.ln.b", Tensor<T>(Shape{w}));
  params_.add("out.w", init_weight<T>(rng, w, td, 0.1));
  params_.add("out.b", Tensor<T>(Shape{td}));
}

template <typename T>
Var<T> Denoiser<T>::memory_rows(Tape<T>& tape, const ConditionBundle& bundle) {
  const std::size_t rows = bundle.memory_rows();
  if (bundle.memory.rows() != rows || bundle.memory.cols() != cfg_.memory_dim)
    throw ContractError("memory shape " + shape_str(bundle.memory.shape()) + " does not match its type flags");
  Tensor<T> onehot(Shape{rows, 2});
  for (std::size_t r = 0; r < rows; ++r) onehot.at(r, bundle.memory_type[r] ? 1 : 0) = T{1};
  auto mem = tape.constant(bundle.memory.template cast<T>());
  auto flags = ad::matmul(tape.constant(std::move(onehot)), tape.param(params_.at("memory.type")));
  return ad::add(mem, flags);
}

template <typename T>
MemoryCache<T> Denoiser<T>::memory_cache(const ConditionBundle& bundle) {
  MemoryCache<T> cache;
  if (bundle.memory_rows() == 0) return cache;
  Tape<T> tape(false);
  auto mem = memory_rows(tape, bundle);
  for (std::size_t b = 0; b < cfg_.blocks; ++b) {
    cache.keys.push_back(ad::matmul(mem, tape.param(params_.at(key(b, "cross.k")))).value());
    cache.values.push_back(ad::matmul(mem, tape.param(params_.at(key(b, "cross.v")))).value());
  }
  return cache;
}

template <typename T>
Var<T> Denoiser<T>::forward(Tape<T>& tape, const Tensor<T>& z_tokens, std::size_t n, const ConditionBundle& bundle,
                            const MemoryCache<T>* cache) {
  if (z_tokens.shape() != Shape{cfg_.tokens(), cfg_.token_dim()})
    throw ContractError("denoiser input " + shape_str(z_tokens.shape()) + " does not match token layout");
  if (bundle.text.numel() != cfg_.text_dim)
    throw ContractError("text embedding has " + std::to_string(bundle.text.numel()) + " values");
  auto P = [&](const std::string& name) { return tape.param(params_.at(name)); };
  const std::size_t w = cfg_.width;

  auto x = ad::linear(tape.constant(z_tokens), P("in.w"), P("in.b"));
  x = ad::add(x, P("in.pos"));
  auto t = ad::linear(tape.constant(time_embedding<T>(n, w).reshaped({1, w})), P("time.w"), P("time.b"));
  auto c = ad::linear(tape.constant(bundle.text.template cast<T>().reshaped({1, cfg_.text_dim})), P("text.w"), P("text.b"));
  c = ad::linear(ad::gelu(c), P("text.w2"), P("text.b2"));  // E^t is a random projection; decode it nonlinearly
  x = ad::add_row(x, ad::reshape(ad::add(t, c), {w}));

  const bool has_memory = bundle.memory_rows() > 0;
  std::optional<Var<T>> mem;
  if (has_memory && !cache) mem = memory_rows(tape, bundle);

  for (std::size_t b = 0; b < cfg_.blocks; ++b) {
    auto h = ad::layer_norm(x, P(key(b, "ln1") + ".g"), P(key(b, "ln1") + ".b"));
    auto a = ad::attention(ad::matmul(h, P(key(b, "self.q"))), ad::matmul(h, P(key(b, "self.k"))),
                           ad::matmul(h, P(key(b, "self.v"))), cfg_.heads);
    x = ad::add(x, ad::linear(a, P(key(b, "self.o")), P(key(b, "self.ob"))));

    if (has_memory) {
      h = ad::layer_norm(x, P(key(b, "ln2") + ".g"), P(key(b, "ln2") + ".b"));
      Var<T> kv_k, kv_v;
      if (cache) {
        kv_k = tape.constant(cache->keys.at(b));
        kv_v = tape.constant(cache->values.at(b));
      } else {
        kv_k = ad::matmul(*mem, P(key(b, "cross.k")));
        kv_v = ad::matmul(*mem, P(key(b, "cross.v")));
      }
      a = ad::attention(ad::matmul(h, P(key(b, "cross.q"))), kv_k, kv_v, cfg_.heads);
      x = ad::add(x, ad::linear(a, P(key(b, "cross.o")), P(key(b, "cross.ob"))));
    }

    h = ad::layer_norm(x, P(key(b, "ln3") + ".g"), P(key(b, "ln3") + ".b"));
    h = ad::gelu(ad::linear(h, P(key(b, "mlp.w1")), P(key(b, "mlp.b1"))));
    x = ad::add(x, ad::linear(h, P(key(b, "mlp.w2")), P(key(b, "mlp.b2"))));
  }
  auto h = ad::layer_norm(x, P("out.ln.g"), P("out.ln.b"));
  return ad::linear(h, P("out.w"), P("out.b"));
}

template <typename T>
Tensor<T> Denoiser<T>::predict(const Tensor<T>& z_latent, std::size_t n, const ConditionBundle& bundle,
                               const MemoryCache<T>* cache) {
  Tape<T> tape(false);
  auto out = forward(tape, latent_to_tokens(z_latent, cfg_), n, bundle, cache);
  return tokens_to_latent(out.value(), cfg_);
}

template class Denoiser<float>;
template class Denoiser<double>;
template Tensor<float> latent_to_tokens(const Tensor<float>&, const DenoiserConfig&);
template Tensor<double> latent_to_tokens(const Tensor<double>&, const DenoiserConfig&);
template Tensor<float> tokens_to_latent(const Tensor<float>&, const DenoiserConfig&);
template Tensor<double> tokens_to_latent(const Tensor<double>&, const DenoiserConfig&);
template Tensor<float> time_embedding(std::size_t, std::size_t);
template Tensor<double> time_embedding(std::size_t, std::size_t);

}  // namespace retrodiff
