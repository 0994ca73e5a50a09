/* C interface to the HAVANA pipeline. All entry points are thread-compatible:
 * one config handle per thread. Errors are returned as status codes; the
 * message for the most recent failure on the calling thread is available via
 * hav_last_error(). */

#ifndef HAVANA_H
#define HAVANA_H

#include <stddef.h>

#ifdef __cplusplus
extern "C" {
#endif

typedef enum hav_status {
  HAV_OK = 0,
  HAV_ERR_USAGE = 1,   /* bad arguments, keys, or values */
  HAV_ERR_DATA = 2,    /* malformed or missing files, shape mismatches */
  HAV_ERR_NUMERIC = 3  /* non-finite values, training divergence */
} hav_status;

/* Opaque run configuration (all keys at their documented defaults). */
typedef struct hav_config hav_config;

hav_config* hav_config_new(void);
void hav_config_free(hav_config* config);

/* Applies `key = value` lines from a config file on top of current values. */
hav_status hav_config_load_file(hav_config* config, const char* path);

/* Sets one key from its textual form, e.g. ("alpha", "0.2"). */
hav_status hav_config_set(hav_config* config, const char* key, const char* value);

/* Copies the current textual value into buf (NUL-terminated). */
hav_status hav_config_get(const hav_config* config, const char* key, char* buf, size_t buf_len);

/* Key registry for discovering flags, help text, and defaults. */
size_t hav_key_count(void);
hav_status hav_key_info(size_t index, const char** name, const char** help);

/* Pipeline commands. hav_run_eval writes mAP to map_out when non-NULL. */
hav_status hav_run_synth(hav_config* config);
hav_status hav_run_train(hav_config* config);
hav_status hav_run_eval(hav_config* config, double* map_out);
hav_status hav_run_embed(hav_config* config);
hav_status hav_run_ablate(hav_config* config);

/* Message for the most recent failure on this thread; empty string if none. */
const char* hav_last_error(void);

#ifdef __cplusplus
}
#endif

#endif /* HAVANA_H */
