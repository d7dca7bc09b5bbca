#ifndef OSTR_H
#define OSTR_H

/* C interface of the open-set text recognition engine.
 *
 * Every call returns an ostr_status; on failure ostr_last_error() describes
 * the problem (thread-local, valid until the next failing call on the same
 * thread). Strings are UTF-8. Objects handed out through out-parameters are
 * released with the matching *_free function. */

#include <stddef.h>
#include <stdint.h>

#if defined(_WIN32)
#define OSTR_API __declspec(dllexport)
#else
#define OSTR_API __attribute__((visibility("default")))
#endif

#ifdef __cplusplus
extern "C" {
#endif

typedef enum ostr_status {
    OSTR_OK = 0,
    OSTR_E_DIMENSION = 1,  /* tensor shapes do not fit */
    OSTR_E_DEGENERATE = 2, /* e.g. a blank glyph with a null encoding */
    OSTR_E_CONTRACT = 3,   /* precondition violated by the caller */
    OSTR_E_CONFIG = 4,     /* invalid or unknown configuration */
    OSTR_E_LOAD = 5,       /* unreadable or malformed file */
    OSTR_E_LENGTH = 6,     /* label or line too long for the model */
    OSTR_E_OPTIMIZER = 7,  /* training diverged */
    OSTR_E_IO = 8,         /* cannot write output */
    OSTR_E_INTERNAL = 9
} ostr_status;

OSTR_API const char* ostr_last_error(void);
OSTR_API const char* ostr_status_name(ostr_status status);

/* Receives progress lines. */
typedef void (*ostr_log_fn)(const char* line, void* user);

/* Run configuration (flat key=value). */
typedef struct ostr_config ostr_config;

OSTR_API ostr_status ostr_config_default(ostr_config** out);
OSTR_API ostr_status ostr_config_load(const char* path, ostr_config** out);
OSTR_API ostr_status ostr_config_parse(const char* text, ostr_config** out);
/* Sets one key and re-validates; the config is unchanged on failure. */
OSTR_API ostr_status ostr_config_set(ostr_config* config, const char* key, const char* value);
/* Canonical text; release with ostr_string_free. */
OSTR_API ostr_status ostr_config_serialize(const ostr_config* config, char** text);
OSTR_API void ostr_config_free(ostr_config* config);
OSTR_API void ostr_string_free(char* text);

typedef struct ostr_train_result {
    uint64_t iterations;
    double last_loss;
} ostr_train_result;

/* Writes model.ostr, loss.tsv (and bank.ostr for the prototype model) into out_dir. */
OSTR_API ostr_status ostr_train(const ostr_config* config, const char* out_dir, ostr_log_fn log, void* user,
                                ostr_train_result* result);
OSTR_API ostr_status ostr_baseline_train(const ostr_config* config, const char* out_dir, ostr_log_fn log, void* user,
                                         ostr_train_result* result);

typedef struct ostr_report {
    char mode[16];
    double la, ca, re, pr, fm;
    uint64_t n, n_inset, rejected_gt, rejected_pred;
} ostr_report;

/* bank may be NULL (bank.ostr next to the checkpoint). settings may be NULL
 * (the checkpoint's own config); only its test_charset, split and threads
 * keys are used. out_dir may be NULL to skip report files. */
OSTR_API ostr_status ostr_eval(const char* checkpoint, const char* bank, const char* dataset,
                               const ostr_config* settings, const char* out_dir, ostr_log_fn log, void* user,
                               ostr_report* report);

/* Adds the glyph templates of the characters selected by `chars` (a charset
 * expression over the atlas of `source`, or of the checkpoint config when
 * source is NULL). */
OSTR_API ostr_status ostr_charset_add(const char* checkpoint, const char* bank, const ostr_config* source,
                                      const char* chars, size_t* bank_templates);
/* Removes the characters selected by `chars`, resolved over the bank charset. */
OSTR_API ostr_status ostr_charset_remove(const char* checkpoint, const char* bank, const char* chars,
                                         size_t* bank_templates);
/* Writes `template_id char d-floats` rows. */
OSTR_API ostr_status ostr_bank_export_tsv(const char* bank, const char* path);

/* steps == 0 selects the default schedule. out_path may be NULL. */
OSTR_API ostr_status ostr_margin_solve(size_t n, size_t d, uint64_t seed, size_t steps, const char* out_path,
                                       ostr_log_fn log, void* user, double* m_p);

/* Runs the finite-difference suite; *failed counts failing cases. */
OSTR_API ostr_status ostr_gradcheck(uint64_t seed, size_t instances, ostr_log_fn log, void* user, size_t* failed);

OSTR_API ostr_status ostr_synth(const ostr_config* config, const char* out_dir, size_t* count);

/* A loaded prototype model with its bank, for direct recognition. */
typedef struct ostr_model ostr_model;

OSTR_API ostr_status ostr_model_load(const char* checkpoint, const char* bank, ostr_model** out);
/* pixels: row-major height x width grey levels in [0, 1]; height must be 32.
 * The decoded label (UNK as "[-]") is released with ostr_string_free. */
OSTR_API ostr_status ostr_model_recognize(const ostr_model* model, const float* pixels, size_t height, size_t width,
                                          char** label);
OSTR_API size_t ostr_model_charset_size(const ostr_model* model);
OSTR_API void ostr_model_free(ostr_model* model);

#ifdef __cplusplus
}
#endif

#endif
