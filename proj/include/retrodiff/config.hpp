#pragma once

// Flat key=value experiment configuration. Lines starting with '#' are
// comments. Every key has a default; unknown keys are rejected. Environment
// variables RETRODIFF_<KEY> (upper case) override file values.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "retrodiff/dataset.hpp"
#include "retrodiff/denoiser.hpp"
#include "retrodiff/encoders.hpp"

namespace retrodiff {

using ConfigMap = std::map<std::string, std::string>;

ConfigMap parse_config_text(const std::string& text);
ConfigMap read_config_file(const std::filesystem::path& path);
// Applies RETRODIFF_<KEY> overrides for every known key.
void apply_env_overrides(ConfigMap& map);

struct ExperimentConfig {
  DatasetConfig data;
  std::filesystem::path data_dir;  // load instead of generating when set

  EncoderConfig encoder;

  std::string model_size = "S";  // S → width 128, L → width 196
  DenoiserConfig model;

  std::size_t diffusion_steps = 200;
  double beta_start = 5e-4;
  double beta_end = 0.1;

  std::size_t epochs = 8;
  std::size_t batch = 4;
  double lr = 1e-3;
  double grad_clip = 1.0;
  std::uint64_t seed = 0;

  std::size_t k = 3;
  RetrievalType retrieval = RetrievalType::audio_text;

  std::size_t eval_prompts = 200;  // 0 evaluates the whole test split
  double tau = 0.1;

  std::vector<std::size_t> k_list = {0, 1, 3, 5, 10};
  std::size_t num_seeds = 3;

  // k and retrieval type after the "none ⇔ k = 0" equivalence.
  std::size_t effective_k() const noexcept { return retrieval == RetrievalType::none ? 0 : k; }
  RetrievalType effective_retrieval() const noexcept { return k == 0 ? RetrievalType::none : retrieval; }

  // Canonical key=value listing of the effective configuration (seed excluded).
  std::string canonical() const;
  // FNV-1a of canonical().
  std::uint64_t hash() const;
};

std::vector<std::string> config_keys();
ExperimentConfig make_config(const ConfigMap& map);
// Validates cross-field constraints; throws ConfigError.
void validate(const ExperimentConfig& cfg);

std::uint64_t fnv1a(const std::string& s);
std::string hex64(std::uint64_t v);

}  // namespace retrodiff
