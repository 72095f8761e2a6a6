// retrodiff <verb> --config <path> --seed <u64> --out <dir>
//
// Exit codes: 0 success, 1 other failure, 2 config error, 3 divergence.

#include <CLI11.hpp>
#include <iostream>
#include <optional>

#include "retrodiff/error.hpp"
#include "retrodiff/experiment.hpp"

using namespace retrodiff;

namespace {

struct Common {
  std::string config;
  std::optional<std::uint64_t> seed;
  std::string out;
};

void add_common(CLI::App* cmd, Common& c) {
  cmd->add_option("--config", c.config, "key=value config file");
  cmd->add_option("--seed", c.seed, "run seed (data seed for gen-data)");
  cmd->add_option("--out", c.out, "output directory")->required();
}

ExperimentConfig load(const Common& c, bool seed_is_data_seed) {
  ConfigMap map = c.config.empty() ? ConfigMap{} : read_config_file(c.config);
  apply_env_overrides(map);
  if (c.seed) map[seed_is_data_seed ? "data_seed" : "seed"] = std::to_string(*c.seed);
  return make_config(map);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Retrieval-augmented latent diffusion on synthetic event spectrograms"};
  app.require_subcommand(1);
  Common gen, tr, ev, ab, lt;
  std::string checkpoint;
  std::vector<std::string> compare;
  auto* c_gen = app.add_subcommand("gen-data", "generate the synthetic corpus");
  auto* c_train = app.add_subcommand("train", "train a denoiser");
  auto* c_eval = app.add_subcommand("evaluate", "sample test prompts and compute metrics");
  auto* c_ablate = app.add_subcommand("ablate-k", "sweep the number of retrieved pairs");
  auto* c_long = app.add_subcommand("longtail-report", "per-frequency-bin alignment of an evaluated run");
  add_common(c_gen, gen);
  add_common(c_train, tr);
  add_common(c_eval, ev);
  add_common(c_ablate, ab);
  add_common(c_long, lt);
  c_eval->add_option("--checkpoint", checkpoint, "defaults to <out>/model.ckpt");
  c_long->add_option("--compare", compare, "further evaluated run directories to plot alongside");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*c_gen) cmd_gen_data(load(gen, true), gen.out, std::cout);
    if (*c_train) cmd_train(load(tr, false), tr.out, std::cout);
    if (*c_eval) {
      const auto cfg = load(ev, false);
      cmd_evaluate(cfg, ev.out, checkpoint.empty() ? std::filesystem::path(ev.out) / "model.ckpt" : std::filesystem::path(checkpoint), std::cout);
    }
    if (*c_ablate) cmd_ablate_k(load(ab, false), ab.out, std::cout);
    if (*c_long) {
      std::vector<std::filesystem::path> dirs(compare.begin(), compare.end());
      load(lt, false);  // validates the config even though the report reads only run outputs
      cmd_longtail_report(lt.out, dirs, std::cout);
    }
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DivergenceError& e) {
    std::cerr << "diverged: " << e.what() << "\n";
    return 3;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
