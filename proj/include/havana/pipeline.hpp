#pragma once

#include <functional>
#include <string>
#include <vector>

#include "havana/data.hpp"
#include "havana/evalkit.hpp"
#include "havana/trainkit.hpp"

namespace havana {

/// Everything the CLI can set: synthesis spec, model widths, training
/// hyper-parameters, and file paths. Values come from defaults, then an
/// optional `key = value` config file, then explicit overrides, via set().
struct RunConfig {
  SynthSpec synth;
  TrainConfig train;
  std::size_t hidden_dim = 0;  // 0: derive (H = D)
  std::size_t latent_dim = 0;  // 0: derive (L = H)
  std::size_t hvd_dim = 0;     // 0: derive (M = max(1, L/4))
  int num_threads = 1;
  bool quiet = false;

  std::string train_features = "train.hvft";
  std::string query_features = "query.hvft";
  std::string gallery_features = "gallery.hvft";
  std::string factors_file = "factors.hvft";
  std::string checkpoint_dir = "checkpoints";
  std::string log_file = "train_log.csv";
  std::string checkpoint;  // model to evaluate / embed with
  std::string resume;      // checkpoint to continue training from
  std::string metrics_file = "metrics.csv";
  std::string embed_features;  // input set for `embed`
  std::string embed_mu_file = "embed_mu.hvft";
  std::string embed_sigma_file = "embed_sigma.hvft";
  std::string ablate_csv = "ablation.csv";
  std::string ablate_grid = "toggles";  // toggles | hyper | both
  std::string ablate_alphas = "0.1,0.2,0.4";
  std::string ablate_betas = "0.5,1.0,2.0";

  void set(const std::string& key, const std::string& value);
  std::string get(const std::string& key) const;
};

struct ConfigKey {
  std::string name;
  std::string help;
  std::function<void(RunConfig&, const std::string&)> set;
  std::function<std::string(const RunConfig&)> get;
};

/// The single source of truth for config-file keys, CLI flags, and --help.
const std::vector<ConfigKey>& config_keys();

/// Applies `key = value` lines (# comments, blank lines allowed) on top of
/// the current values.
void load_config_file(RunConfig& config, const std::string& path);

void run_synth(const RunConfig& config);
void run_train(const RunConfig& config);
RetrievalResult run_eval(const RunConfig& config);
void run_embed(const RunConfig& config);
void run_ablate(const RunConfig& config);

}  // namespace havana
