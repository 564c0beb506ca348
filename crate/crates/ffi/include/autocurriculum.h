#ifndef AUTOCURRICULUM_H
#define AUTOCURRICULUM_H

/* Generated by cbindgen. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

// Result codes shared by all functions.
typedef enum AcStatus {
  AC_STATUS_OK = 0,
  AC_STATUS_NULL_POINTER = 1,
  AC_STATUS_INVALID_UTF8 = 2,
  AC_STATUS_INVALID_PARAMETER = 3,
  AC_STATUS_CAPACITY = 4,
  AC_STATUS_CONFIGURATION = 5,
  AC_STATUS_RECONCILIATION = 6,
  AC_STATUS_PARSE = 7,
  AC_STATUS_IO = 8,
  AC_STATUS_OUT_OF_RANGE = 9,
  AC_STATUS_PANIC = 10,
} AcStatus;

// A routing weight table.
typedef struct AcWeightTable AcWeightTable;

// A synthetic world with its teacher.
typedef struct AcWorld AcWorld;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Message for the last failed call on this thread, or null if it succeeded.
// The pointer stays valid until the next call on the same thread.
const char *ac_last_error_message(void);

// Builds the weight table for `k` phases, per-phase error
// `err_num/err_den` and acceptance threshold `thr_num/thr_den`.
//
// # Safety
// `out` must be a valid pointer to writable storage for one handle.
enum AcStatus ac_weight_table_new(uintptr_t k,
                                  uint64_t err_num,
                                  uint64_t err_den,
                                  uint64_t thr_num,
                                  uint64_t thr_den,
                                  struct AcWeightTable **out);

// # Safety
// `table` must be null or a handle from [`ac_weight_table_new`] not yet freed.
void ac_weight_table_free(struct AcWeightTable *table);

// Number of phases the table was built for.
//
// # Safety
// `table` must be a live handle.
uintptr_t ac_weight_table_phases(const struct AcWeightTable *table);

// Routing weight for phase `j` and rank `r`, with `j < k` and `r <= j`.
//
// # Safety
// `table` must be a live handle and `out` a valid pointer.
enum AcStatus ac_weight_table_alpha(const struct AcWeightTable *table,
                                    uintptr_t j,
                                    uintptr_t r,
                                    double *out);

// Largest routing weight in phase `j`.
//
// # Safety
// `table` must be a live handle and `out` a valid pointer.
enum AcStatus ac_weight_table_alpha_max(const struct AcWeightTable *table,
                                        uintptr_t j,
                                        double *out);

// Probability that a prompt of rank `r` is accepted in phase `j`.
//
// # Safety
// `table` must be a live handle and `out` a valid pointer.
enum AcStatus ac_weight_table_acceptance(const struct AcWeightTable *table,
                                         uintptr_t j,
                                         uintptr_t r,
                                         double *out);

// Builds a world from a TOML table with at least `alphabet_size`, `horizon`
// and `dim`. Other fields take their defaults.
//
// # Safety
// `toml` must be a NUL-terminated string and `out` a valid pointer.
enum AcStatus ac_world_new(const char *toml, struct AcWorld **out);

// # Safety
// `world` must be null or a handle from [`ac_world_new`] not yet freed.
void ac_world_free(struct AcWorld *world);

// Number of prompts in the world.
//
// # Safety
// `world` must be a live handle.
uintptr_t ac_world_prompt_count(const struct AcWorld *world);

// Bit key of the teacher model.
//
// # Safety
// `world` must be a live handle.
uint32_t ac_world_teacher_key(const struct AcWorld *world);

// Probability of prompt `x` under the prompt distribution.
//
// # Safety
// `world` must be a live handle and `out` a valid pointer.
enum AcStatus ac_world_prompt_mass(const struct AcWorld *world, uint32_t x, double *out);

// Teacher trace for prompt `x`. Writes up to `cap` tokens into `buf` and
// the full trace length into `len`.
//
// # Safety
// `world` must be a live handle, `buf` valid for `cap` bytes and `len` a valid pointer.
enum AcStatus ac_world_teacher_trace(const struct AcWorld *world,
                                     uint32_t x,
                                     uint8_t *buf,
                                     uintptr_t cap,
                                     uintptr_t *len);

// Exact accuracy of a deterministic model with bit key `key`, summed over
// the prompt distribution. Fails with `AC_STATUS_CONFIGURATION` for worlds
// that mix the prefix into every step.
//
// # Safety
// `world` must be a live handle and `out` a valid pointer.
enum AcStatus ac_world_accuracy(const struct AcWorld *world, uint32_t key, double *out);

// Runs one experiment point. `config` is an experiment TOML document, `kind`
// one of `det-sft`, `stoch-sft`, `rl`, `baseline-ntp`, `baseline-rlft`. On
// success `out` receives the JSON run record, to be released with
// [`ac_string_free`].
//
// # Safety
// `config` and `kind` must be NUL-terminated strings and `out` a valid pointer.
enum AcStatus ac_run_experiment(const char *config, const char *kind, uint64_t seed, char **out);

// # Safety
// `s` must be null or a string returned by this library not yet freed.
void ac_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* AUTOCURRICULUM_H */
