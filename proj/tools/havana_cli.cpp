// Command-line front end. Talks to the pipeline exclusively through the C API
// in havana.h; every config key becomes a --flag on every subcommand.

#include <cstdio>
#include <memory>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "havana.h"

namespace {

struct ConfigDeleter {
  void operator()(hav_config* c) const { hav_config_free(c); }
};
using ConfigPtr = std::unique_ptr<hav_config, ConfigDeleter>;

std::string flag_name(const std::string& key) {
  std::string flag = "--" + key;
  for (char& c : flag) {
    if (c == '_') c = '-';
  }
  return flag;
}

struct KeyOption {
  std::string key;
  std::string value;
  CLI::Option* option = nullptr;
};

int fail(hav_status status) {
  std::fprintf(stderr, "error: %s\n", hav_last_error());
  return static_cast<int>(status);
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"HAVANA: variation-normalized embeddings with a hierarchical variation distiller"};
  app.require_subcommand(1);

  ConfigPtr config(hav_config_new());
  if (!config) {
    std::fprintf(stderr, "error: out of memory\n");
    return static_cast<int>(HAV_ERR_DATA);
  }

  const struct {
    const char* name;
    const char* help;
  } commands[] = {
      {"synth", "generate the synthetic identity/variation benchmark files"},
      {"train", "train the model on a feature file"},
      {"eval", "retrieval evaluation (mAP, CMC) of a checkpoint"},
      {"embed", "export z_mu / z_sigma embeddings for a feature file"},
      {"ablate", "run the component/hyper-parameter ablation grid"},
  };

  std::vector<CLI::App*> subs;
  std::vector<std::string> config_files(std::size(commands));
  // One option set per subcommand, generated from the C API's key registry.
  std::vector<std::vector<KeyOption>> options(std::size(commands));

  for (size_t ci = 0; ci < std::size(commands); ++ci) {
    CLI::App* sub = app.add_subcommand(commands[ci].name, commands[ci].help);
    sub->add_option("--config", config_files[ci], "key = value config file, applied first");
    options[ci].resize(hav_key_count());
    for (size_t i = 0; i < hav_key_count(); ++i) {
      const char* name = nullptr;
      const char* help = nullptr;
      hav_key_info(i, &name, &help);
      KeyOption& opt = options[ci][i];
      opt.key = name;
      char current[256];
      std::string desc = help;
      if (hav_config_get(config.get(), name, current, sizeof current) == HAV_OK) {
        desc += std::string(" [default: ") + (current[0] != '\0' ? current : "unset") + "]";
      }
      std::string names = flag_name(opt.key);
      if (opt.key == "covariance_constraint") names += ",--cc";
      opt.option = sub->add_option(names, opt.value, desc);
    }
    subs.push_back(sub);
  }

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(HAV_ERR_USAGE);
  }

  for (size_t ci = 0; ci < std::size(commands); ++ci) {
    if (!subs[ci]->parsed()) continue;
    if (!config_files[ci].empty()) {
      hav_status s = hav_config_load_file(config.get(), config_files[ci].c_str());
      if (s != HAV_OK) return fail(s);
    }
    for (const KeyOption& opt : options[ci]) {
      if (opt.option->count() == 0) continue;
      hav_status s = hav_config_set(config.get(), opt.key.c_str(), opt.value.c_str());
      if (s != HAV_OK) return fail(s);
    }
    hav_status s = HAV_OK;
    std::string name = commands[ci].name;
    if (name == "synth") {
      s = hav_run_synth(config.get());
    } else if (name == "train") {
      s = hav_run_train(config.get());
    } else if (name == "eval") {
      s = hav_run_eval(config.get(), nullptr);
    } else if (name == "embed") {
      s = hav_run_embed(config.get());
    } else {
      s = hav_run_ablate(config.get());
    }
    if (s != HAV_OK) return fail(s);
  }
  return 0;
}
