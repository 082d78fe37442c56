/* SPDX-License-Identifier: Apache-2.0 */
#ifndef CFGRPO_H
#define CFGRPO_H

#include <stddef.h>
#include <stdint.h>

#ifdef __cplusplus
extern "C" {
#endif

#if defined(_WIN32)
#define CFGRPO_API __declspec(dllexport)
#else
#define CFGRPO_API __attribute__((visibility("default")))
#endif

typedef enum cfgrpo_status {
    CFGRPO_OK = 0,
    CFGRPO_E_CONTRACT = 1,
    CFGRPO_E_CONFIG = 2,
    CFGRPO_E_IO = 3,
    CFGRPO_E_NUMERICAL = 4,
    CFGRPO_E_CORRUPTION = 5,
    CFGRPO_E_INTERNAL = 6
} cfgrpo_status;

typedef struct cfgrpo_image cfgrpo_image;

CFGRPO_API const char* cfgrpo_version(void);
/* Message of the last failed call on this thread ("" if none). */
CFGRPO_API const char* cfgrpo_last_error(void);
/* 0 restores the CFGRPO_THREADS default. */
CFGRPO_API void cfgrpo_set_threads(int n);

CFGRPO_API cfgrpo_status cfgrpo_image_create(int height, int width, int channels, const double* values,
                                             cfgrpo_image** out);
CFGRPO_API cfgrpo_status cfgrpo_image_load(const char* path, cfgrpo_image** out);
CFGRPO_API cfgrpo_status cfgrpo_image_save(const cfgrpo_image* img, const char* path);
CFGRPO_API void cfgrpo_image_shape(const cfgrpo_image* img, int* height, int* width, int* channels);
/* Borrowed pointer to height*width*channels values, valid until the image is freed. */
CFGRPO_API const double* cfgrpo_image_values(const cfgrpo_image* img);
CFGRPO_API void cfgrpo_image_free(cfgrpo_image* img);

CFGRPO_API cfgrpo_status cfgrpo_blur(const cfgrpo_image* img, double sigma, int radius, cfgrpo_image** out);
/* mask: a single-channel image with 0/1 values. strategy_json: {"kind":"blur","sigma":..,"radius":..}
   or {"kind":"fill","value":..}; NULL selects the default blur. */
CFGRPO_API cfgrpo_status cfgrpo_counterfactual(const cfgrpo_image* img, const cfgrpo_image* mask,
                                               const char* strategy_json, cfgrpo_image** out);
/* spot_json: spot interference config object; NULL selects defaults. */
CFGRPO_API cfgrpo_status cfgrpo_perturb(const cfgrpo_image* img, const char* spot_json, cfgrpo_image** out);

/* Scores a JSON-lines file of {response, keywords, gold_labels}. Result is a JSON document owned by
   the caller (free with cfgrpo_string_free). options_json may be NULL. */
CFGRPO_API cfgrpo_status cfgrpo_score_rewards(const char* jsonl_path, const char* options_json, char** out_json);

/* Runs a named experiment. config_json may be NULL ("{}"); out_dir and seed override the config
   when given (out_dir non-NULL, has_seed non-zero). Returns the summary as JSON. */
CFGRPO_API cfgrpo_status cfgrpo_run_experiment(const char* name, const char* config_json, const char* out_dir,
                                               uint64_t seed, int has_seed, char** out_json);

CFGRPO_API void cfgrpo_string_free(char* s);

#ifdef __cplusplus
}
#endif

#endif
