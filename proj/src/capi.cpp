#include "havana.h"

#include <cstring>
#include <exception>
#include <string>

#include "havana/errors.hpp"
#include "havana/pipeline.hpp"

struct hav_config {
  havana::RunConfig cfg;
};

namespace {

thread_local std::string g_last_error;

hav_status status_from_code(int code) {
  switch (code) {
    case 1:
      return HAV_ERR_USAGE;
    case 3:
      return HAV_ERR_NUMERIC;
    default:
      return HAV_ERR_DATA;
  }
}

template <typename Fn>
hav_status guarded(Fn&& fn) {
  try {
    fn();
    g_last_error.clear();
    return HAV_OK;
  } catch (const havana::Error& e) {
    g_last_error = e.what();
    return status_from_code(e.code());
  } catch (const std::exception& e) {
    g_last_error = e.what();
    return HAV_ERR_DATA;
  } catch (...) {
    g_last_error = "unknown error";
    return HAV_ERR_DATA;
  }
}

}  // namespace

extern "C" {

hav_config* hav_config_new(void) {
  try {
    return new hav_config();
  } catch (...) {
    return nullptr;
  }
}

void hav_config_free(hav_config* config) { delete config; }

hav_status hav_config_load_file(hav_config* config, const char* path) {
  if (config == nullptr || path == nullptr) {
    g_last_error = "null argument";
    return HAV_ERR_USAGE;
  }
  return guarded([&] { havana::load_config_file(config->cfg, path); });
}

hav_status hav_config_set(hav_config* config, const char* key, const char* value) {
  if (config == nullptr || key == nullptr || value == nullptr) {
    g_last_error = "null argument";
    return HAV_ERR_USAGE;
  }
  return guarded([&] { config->cfg.set(key, value); });
}

hav_status hav_config_get(const hav_config* config, const char* key, char* buf, size_t buf_len) {
  if (config == nullptr || key == nullptr || buf == nullptr || buf_len == 0) {
    g_last_error = "null argument";
    return HAV_ERR_USAGE;
  }
  return guarded([&] {
    std::string value = config->cfg.get(key);
    if (value.size() + 1 > buf_len) {
      throw havana::UsageError("buffer too small for value of '" + std::string(key) + "'");
    }
    std::memcpy(buf, value.c_str(), value.size() + 1);
  });
}

size_t hav_key_count(void) { return havana::config_keys().size(); }

hav_status hav_key_info(size_t index, const char** name, const char** help) {
  const auto& keys = havana::config_keys();
  if (index >= keys.size()) {
    g_last_error = "key index out of range";
    return HAV_ERR_USAGE;
  }
  if (name != nullptr) *name = keys[index].name.c_str();
  if (help != nullptr) *help = keys[index].help.c_str();
  return HAV_OK;
}

hav_status hav_run_synth(hav_config* config) {
  if (config == nullptr) {
    g_last_error = "null config";
    return HAV_ERR_USAGE;
  }
  return guarded([&] { havana::run_synth(config->cfg); });
}

hav_status hav_run_train(hav_config* config) {
  if (config == nullptr) {
    g_last_error = "null config";
    return HAV_ERR_USAGE;
  }
  return guarded([&] { havana::run_train(config->cfg); });
}

hav_status hav_run_eval(hav_config* config, double* map_out) {
  if (config == nullptr) {
    g_last_error = "null config";
    return HAV_ERR_USAGE;
  }
  return guarded([&] {
    havana::RetrievalResult r = havana::run_eval(config->cfg);
    if (map_out != nullptr) *map_out = r.map;
  });
}

hav_status hav_run_embed(hav_config* config) {
  if (config == nullptr) {
    g_last_error = "null config";
    return HAV_ERR_USAGE;
  }
  return guarded([&] { havana::run_embed(config->cfg); });
}

hav_status hav_run_ablate(hav_config* config) {
  if (config == nullptr) {
    g_last_error = "null config";
    return HAV_ERR_USAGE;
  }
  return guarded([&] { havana::run_ablate(config->cfg); });
}

const char* hav_last_error(void) { return g_last_error.c_str(); }

}  // extern "C"
