#ifndef SQLTREE_H
#define SQLTREE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Result code of every fallible call.
 */
typedef enum {
  SQLT_STATUS_OK = 0,
  SQLT_STATUS_NULL_ARGUMENT = 1,
  SQLT_STATUS_INVALID_UTF8 = 2,
  SQLT_STATUS_INVALID_SCHEMA = 3,
  SQLT_STATUS_INVALID_QUESTION = 4,
  SQLT_STATUS_PARSE_ERROR = 5,
  SQLT_STATUS_SEQUENCE_ERROR = 6,
  SQLT_STATUS_CHECKPOINT_ERROR = 7,
  SQLT_STATUS_GENERATION_ERROR = 8,
  SQLT_STATUS_PANIC = 9,
} SqltStatus;

/**
 * A trained model loaded from a checkpoint directory.
 */
typedef struct SqltModel SqltModel;

/**
 * A database schema.
 */
typedef struct SqltSchema SqltSchema;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Message of the last failed call on this thread; empty after a success.
 * The pointer stays valid until the next call on the same thread.
 */
const char *sqlt_last_error(void);

/**
 * # Safety
 * `s` is null or a string returned by this library and not yet freed.
 */
void sqlt_string_free(char *s);

/**
 * Parses a schema from JSON.
 *
 * # Safety
 * `json` is a nul-terminated string; `out_schema` is writable.
 */
SqltStatus sqlt_schema_from_json(const char *json, SqltSchema **out_schema);

/**
 * # Safety
 * `schema` is null or a handle from [`sqlt_schema_from_json`] not yet freed.
 */
void sqlt_schema_free(SqltSchema *schema);

/**
 * Parses `sql` against `schema` and writes its canonical rendering.
 *
 * # Safety
 * Pointers are valid; `out_sql` is writable.
 */
SqltStatus sqlt_canonicalize(const SqltSchema *schema, const char *sql, char **out_sql);

/**
 * Writes whether two queries are equal up to order-insensitive parts and
 * value literals.
 *
 * # Safety
 * Pointers are valid; `out_match` is writable.
 */
SqltStatus sqlt_exact_match(const SqltSchema *schema,
                            const char *predicted,
                            const char *gold,
                            bool *out_match);

/**
 * Writes the BFS adjacency sequence of the query's AST as a JSON array of
 * 0/1 arrays.
 *
 * # Safety
 * Pointers are valid; `out_json` is writable.
 */
SqltStatus sqlt_bfs_sequence(const SqltSchema *schema,
                             const char *sql,
                             size_t window,
                             char **out_json);

/**
 * Loads a checkpoint directory.
 *
 * # Safety
 * `dir` is a nul-terminated path; `out_model` is writable.
 */
SqltStatus sqlt_model_load(const char *dir, SqltModel **out_model);

/**
 * # Safety
 * `model` is null or a handle from [`sqlt_model_load`] not yet freed.
 */
void sqlt_model_free(SqltModel *model);

/**
 * Generates SQL for an annotated question given as JSON
 * (`{"tokens": [...], "pos": [...], "deps": [[head, dependent, label], ...]}`).
 * A `beam_width` of 0 uses the checkpoint's configured width.
 *
 * # Safety
 * Pointers are valid; `out_sql` is writable.
 */
SqltStatus sqlt_model_predict(const SqltModel *model,
                              const SqltSchema *schema,
                              const char *question_json,
                              size_t beam_width,
                              char **out_sql);

/**
 * Version of this ABI.
 */
uint32_t sqlt_abi_version(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SQLTREE_H */
