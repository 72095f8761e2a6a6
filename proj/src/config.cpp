#include "retrodiff/config.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <iomanip>
#include <sstream>

#include "retrodiff/error.hpp"
#include "retrodiff/schedule.hpp"

namespace retrodiff {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return s.substr(b, e - b + 1);
}

template <typename T>
T parse_number(const std::string& key, const std::string& v) {
  T out{};
  const auto* end = v.data() + v.size();
  const auto [p, ec] = std::from_chars(v.data(), end, out);
  if (ec != std::errc{} || p != end) throw ConfigError("bad value for " + key + ": '" + v + "'");
  return out;
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1" || v == "yes") return true;
  if (v == "false" || v == "0" || v == "no") return false;
  throw ConfigError("bad boolean for " + key + ": '" + v + "'");
}

std::vector<std::size_t> parse_list(const std::string& key, const std::string& v) {
  std::vector<std::size_t> out;
  std::istringstream is(v);
  std::string item;
  while (std::getline(is, item, ',')) out.push_back(parse_number<std::size_t>(key, trim(item)));
  if (out.empty()) throw ConfigError(key + " must list at least one value");
  return out;
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, const std::string&)>;

template <typename T>
Setter num(T ExperimentConfig::*m) {
  return [m](ExperimentConfig& c, const std::string& k, const std::string& v) { c.*m = parse_number<T>(k, v); };
}
template <typename T>
Setter data_num(T DatasetConfig::*m) {
  return [m](ExperimentConfig& c, const std::string& k, const std::string& v) { c.data.*m = parse_number<T>(k, v); };
}
template <typename T>
Setter enc_num(T EncoderConfig::*m) {
  return [m](ExperimentConfig& c, const std::string& k, const std::string& v) { c.encoder.*m = parse_number<T>(k, v); };
}
template <typename T>
Setter model_num(T DenoiserConfig::*m) {
  return [m](ExperimentConfig& c, const std::string& k, const std::string& v) { c.model.*m = parse_number<T>(k, v); };
}

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"data_seed", data_num(&DatasetConfig::seed)},
      {"num_classes", data_num(&DatasetConfig::num_classes)},
      {"zipf_s", data_num(&DatasetConfig::zipf_s)},
      {"n_train", data_num(&DatasetConfig::n_train)},
      {"n_test", data_num(&DatasetConfig::n_test)},
      {"heldout_fraction", data_num(&DatasetConfig::heldout_fraction)},
      {"zeroshot_fraction", data_num(&DatasetConfig::zeroshot_fraction)},
      {"time_steps", data_num(&DatasetConfig::time_steps)},
      {"freq_bins", data_num(&DatasetConfig::freq_bins)},
      {"noise_sigma", data_num(&DatasetConfig::noise_sigma)},
      {"balanced_test",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.data.balanced_test = parse_bool(k, v); }},
      {"data_dir", [](ExperimentConfig& c, const std::string&, const std::string& v) { c.data_dir = v; }},
      {"encoder_seed", enc_num(&EncoderConfig::seed)},
      {"text_dim", enc_num(&EncoderConfig::text_dim)},
      {"embed_dim", enc_num(&EncoderConfig::embed_dim)},
      {"text_len", enc_num(&EncoderConfig::text_len)},
      {"model_size",
       [](ExperimentConfig& c, const std::string&, const std::string& v) {
         if (v == "S") c.model.width = 128;
         else if (v == "L") c.model.width = 196;
         else throw ConfigError("model_size must be S or L, got '" + v + "'");
         c.model_size = v;
       }},
      {"width",
       [](ExperimentConfig& c, const std::string& k, const std::string& v) {
         c.model.width = parse_number<std::size_t>(k, v);
         c.model_size = c.model.width == 128 ? "S" : c.model.width == 196 ? "L" : "w" + v;
       }},
      {"blocks", model_num(&DenoiserConfig::blocks)},
      {"heads", model_num(&DenoiserConfig::heads)},
      {"mlp_ratio", model_num(&DenoiserConfig::mlp_ratio)},
      {"diffusion_steps", num(&ExperimentConfig::diffusion_steps)},
      {"beta_start", num(&ExperimentConfig::beta_start)},
      {"beta_end", num(&ExperimentConfig::beta_end)},
      {"epochs", num(&ExperimentConfig::epochs)},
      {"batch", num(&ExperimentConfig::batch)},
      {"lr", num(&ExperimentConfig::lr)},
      {"grad_clip", num(&ExperimentConfig::grad_clip)},
      {"seed", num(&ExperimentConfig::seed)},
      {"k", num(&ExperimentConfig::k)},
      {"retrieval_type",
       [](ExperimentConfig& c, const std::string&, const std::string& v) { c.retrieval = parse_retrieval_type(v); }},
      {"eval_prompts", num(&ExperimentConfig::eval_prompts)},
      {"tau", num(&ExperimentConfig::tau)},
      {"k_list", [](ExperimentConfig& c, const std::string& k, const std::string& v) { c.k_list = parse_list(k, v); }},
      {"num_seeds", num(&ExperimentConfig::num_seeds)},
  };
  return table;
}

}  // namespace

ConfigMap parse_config_text(const std::string& text) {
  ConfigMap map;
  std::istringstream is(text);
  std::string line;
  std::size_t lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("line " + std::to_string(lineno) + ": expected key=value");
    const auto key = trim(line.substr(0, eq));
    if (key.empty()) throw ConfigError("line " + std::to_string(lineno) + ": empty key");
    map[key] = trim(line.substr(eq + 1));
  }
  return map;
}

ConfigMap read_config_file(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  return parse_config_text(ss.str());
}

void apply_env_overrides(ConfigMap& map) {
  for (const auto& key : config_keys()) {
    std::string env = "RETRODIFF_" + key;
    std::transform(env.begin(), env.end(), env.begin(), [](unsigned char c) { return char(std::toupper(c)); });
    if (const char* v = std::getenv(env.c_str())) map[key] = trim(v);
  }
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : setters()) keys.push_back(k);
  return keys;
}

ExperimentConfig make_config(const ConfigMap& map) {
  ExperimentConfig cfg;
  // model_size first so an explicit width wins.
  if (auto it = map.find("model_size"); it != map.end()) setters().at("model_size")(cfg, it->first, it->second);
  for (const auto& [k, v] : map) {
    if (k == "model_size") continue;
    const auto it = setters().find(k);
    if (it == setters().end()) throw ConfigError("unknown config key '" + k + "'");
    it->second(cfg, k, v);
  }
  cfg.model.text_dim = cfg.encoder.text_dim;
  cfg.model.memory_dim = cfg.encoder.embed_dim;
  cfg.model.latent_t = cfg.data.time_steps / 4;
  cfg.model.latent_f = cfg.data.freq_bins / 4;
  validate(cfg);
  return cfg;
}

void validate(const ExperimentConfig& cfg) {
  const auto schedule = make_schedule(cfg.diffusion_steps, cfg.beta_start, cfg.beta_end);
  if (schedule.alpha_bar.back() >= 0.01)
    throw ConfigError("schedule leaves alpha_bar_N = " + fmt(schedule.alpha_bar.back()) +
                      " (needs < 0.01); raise beta_end or diffusion_steps");
  if (cfg.batch == 0) throw ConfigError("batch must be positive");
  if (!(cfg.lr >= 0)) throw ConfigError("lr must be non-negative");
  if (!(cfg.tau > 0)) throw ConfigError("tau must be positive");
  if (cfg.num_seeds == 0) throw ConfigError("num_seeds must be positive");
  if (cfg.model.width % cfg.model.heads) throw ConfigError("width must be a multiple of heads");
  if (cfg.data.heldout_fraction < 0 || cfg.data.heldout_fraction >= 0.5)
    throw ConfigError("heldout_fraction must lie in [0, 0.5)");
  if (cfg.data.zeroshot_fraction < 0 || cfg.data.zeroshot_fraction > 1)
    throw ConfigError("zeroshot_fraction must lie in [0, 1]");
  if (cfg.data.time_steps % 8 || cfg.data.freq_bins % 8) throw ConfigError("grid extents must be multiples of 8");
  if (cfg.effective_k() >= cfg.data.n_train) throw ConfigError("k must be smaller than n_train");
}

std::string ExperimentConfig::canonical() const {
  std::ostringstream os;
  os << "data_seed=" << data.seed << "\nnum_classes=" << data.num_classes << "\nzipf_s=" << fmt(data.zipf_s)
     << "\nn_train=" << data.n_train << "\nn_test=" << data.n_test << "\nheldout_fraction=" << fmt(data.heldout_fraction)
     << "\nzeroshot_fraction=" << fmt(data.zeroshot_fraction) << "\ntime_steps=" << data.time_steps
     << "\nfreq_bins=" << data.freq_bins << "\nnoise_sigma=" << fmt(data.noise_sigma)
     << "\nbalanced_test=" << (data.balanced_test ? "true" : "false") << "\nencoder_seed=" << encoder.seed
     << "\ntext_dim=" << encoder.text_dim << "\nembed_dim=" << encoder.embed_dim << "\ntext_len=" << encoder.text_len
     << "\nwidth=" << model.width << "\nblocks=" << model.blocks << "\nheads=" << model.heads
     << "\nmlp_ratio=" << model.mlp_ratio << "\ndiffusion_steps=" << diffusion_steps << "\nbeta_start=" << fmt(beta_start)
     << "\nbeta_end=" << fmt(beta_end) << "\nepochs=" << epochs << "\nbatch=" << batch << "\nlr=" << fmt(lr)
     << "\ngrad_clip=" << fmt(grad_clip) << "\nk=" << effective_k()
     << "\nretrieval_type=" << retrieval_type_name(effective_retrieval()) << "\neval_prompts=" << eval_prompts
     << "\ntau=" << fmt(tau) << "\n";
  return os.str();
}

std::uint64_t fnv1a(const std::string& s) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : s) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::uint64_t ExperimentConfig::hash() const { return fnv1a(canonical()); }

std::string hex64(std::uint64_t v) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << v;
  return os.str();
}

}  // namespace retrodiff
