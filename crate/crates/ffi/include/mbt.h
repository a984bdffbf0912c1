/* Generated by cbindgen from src/lib.rs. */

#ifndef MBT_H
#define MBT_H

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum MbtStatus {
  MBT_STATUS_OK = 0,
  MBT_STATUS_NULL_ARGUMENT = 1,
  MBT_STATUS_INVALID_UTF8 = 2,
  MBT_STATUS_PARSE_ERROR = 3,
  MBT_STATUS_INVALID_MODEL = 4,
  MBT_STATUS_UNSAT = 5,
  MBT_STATUS_SOLVER_ERROR = 6,
  MBT_STATUS_INVALID_ARGUMENT = 7,
  MBT_STATUS_INTERNAL = 8,
} MbtStatus;

/**
 * Parsed model.
 */
typedef struct MbtModel MbtModel;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a successful call.
 * Valid until the next call on the same thread.
 */
const char *mbt_last_error_message(void);

/**
 * Releases a string returned by this library. Null is ignored.
 *
 * # Safety
 * `s` must be null or a string returned by this library that was not freed yet.
 */
void mbt_string_free(char *s);

/**
 * Parses model text into a new handle stored in `*out`.
 *
 * # Safety
 * `source` must be a NUL-terminated string; `out` must be writable.
 */
enum MbtStatus mbt_model_parse(const char *source, struct MbtModel **out);

/**
 * Releases a model handle. Null is ignored.
 *
 * # Safety
 * `model` must be null or a handle from [`mbt_model_parse`] that was not freed yet.
 */
void mbt_model_free(struct MbtModel *model);

/**
 * Checks the model. Returns `INVALID_MODEL` when there are diagnostics; they are
 * stored one per line in `*diagnostics` when it is not null.
 *
 * # Safety
 * `model` must be a live handle; `diagnostics` must be null or writable.
 */
enum MbtStatus mbt_model_validate(const struct MbtModel *model, char **diagnostics);

/**
 * Searches a witness of an LTL formula up to `bound` steps. On success `*trace_log`
 * holds the inputs and outputs along the witness as a trace log; `UNSAT` means no
 * witness exists up to the bound.
 *
 * # Safety
 * `model` must be a live handle, `formula` a NUL-terminated string, `trace_log` writable.
 */
enum MbtStatus mbt_solve_formula(const struct MbtModel *model,
                                 const char *formula,
                                 uint32_t bound,
                                 char **trace_log);

/**
 * Traceability matrix as tab separated text. `strategies` is a comma separated
 * list of coverage strategies, or null for all of them.
 *
 * # Safety
 * `model` must be a live handle, `strategies` null or NUL-terminated, `tsv` writable.
 */
enum MbtStatus mbt_trace_matrix(const struct MbtModel *model,
                                const char *strategies,
                                uint32_t bound,
                                uint32_t jobs,
                                char **tsv);

/**
 * Strict test procedures of the suite selected for an assurance level (1, 2, 3 or
 * 45), concatenated in procedure file format and separated by blank lines.
 *
 * # Safety
 * `model` must be a live handle, `strategies` null or NUL-terminated, `procedures` writable.
 */
enum MbtStatus mbt_generate(const struct MbtModel *model,
                            const char *strategies,
                            uint32_t level,
                            uint32_t bound,
                            uint32_t jobs,
                            char **procedures);

/**
 * Strict verdict of an observed trace log against a procedure. `*passed` is 1 on
 * pass and 0 on failure; `*verdict` (when not null) receives the verdict text.
 *
 * # Safety
 * `model` must be a live handle, `procedure` and `observed` NUL-terminated,
 * `passed` writable, `verdict` null or writable.
 */
enum MbtStatus mbt_check_strict(const struct MbtModel *model,
                                const char *procedure,
                                const char *observed,
                                int *passed,
                                char **verdict);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* MBT_H */
