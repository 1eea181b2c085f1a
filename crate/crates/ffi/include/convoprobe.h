#ifndef CONVOPROBE_H
#define CONVOPROBE_H

/* Generated by cbindgen from crates/ffi/src/lib.rs. Do not edit. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

typedef enum ConvoprobeStatus {
  CONVOPROBE_STATUS_OK = 0,
  CONVOPROBE_STATUS_NULL_POINTER = 1,
  CONVOPROBE_STATUS_INVALID_UTF8 = 2,
  CONVOPROBE_STATUS_INVALID_JSON = 3,
  CONVOPROBE_STATUS_INVALID_ARGUMENT = 4,
  CONVOPROBE_STATUS_INVALID_QUESTIONNAIRE = 5,
  CONVOPROBE_STATUS_SESSION_NOT_ACTIVE = 6,
  CONVOPROBE_STATUS_AFFORDANCE_MISMATCH = 7,
  CONVOPROBE_STATUS_ENGINE = 8,
  CONVOPROBE_STATUS_INTERNAL = 99,
} ConvoprobeStatus;

/*
 A loaded questionnaire plus the reference agent.
 */
typedef struct ConvoprobeEngine ConvoprobeEngine;

/*
 One live interview.
 */
typedef struct ConvoprobeSession ConvoprobeSession;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/*
 Library version as a static string; do not free.
 */
const char *convoprobe_version(void);

/*
 Message for the most recent failed call on this thread, or NULL after a
 successful one. The pointer stays valid until the next convoprobe call
 on the same thread; do not free it.
 */
const char *convoprobe_last_error_message(void);

/*
 Free a string returned through an `out_*` parameter. NULL is ignored.

 # Safety
 `s` must come from this library and not have been freed already.
 */
void convoprobe_string_free(char *s);

/*
 The built-in study document as JSON.

 # Safety
 `out_json` must be a valid pointer to writable storage.
 */
enum ConvoprobeStatus convoprobe_builtin_questionnaire(char **out_json);

/*
 Load a questionnaire document, or the built-in study when
 `questionnaire_json` is NULL.

 # Safety
 `questionnaire_json` must be NULL or a NUL-terminated string; `out_engine`
 must be a valid pointer.
 */
enum ConvoprobeStatus convoprobe_engine_new(const char *questionnaire_json,
                                            struct ConvoprobeEngine **out_engine);

/*
 # Safety
 `engine` must be NULL or a handle from [`convoprobe_engine_new`] that
 has not been freed. Sessions do not borrow the engine.
 */
void convoprobe_engine_free(struct ConvoprobeEngine *engine);

/*
 Open a session at the consent screener. `request_json` is
 `{"condition": "t2", "respondent_id": "r1", "seed": 7, "now_ms": 0}`;
 `seed` and `now_ms` are optional. The first step is written to
 `out_step_json`.

 # Safety
 Pointers must be valid; `request_json` must be NUL-terminated.
 */
enum ConvoprobeStatus convoprobe_session_start(const struct ConvoprobeEngine *engine,
                                               const char *request_json,
                                               struct ConvoprobeSession **out_session,
                                               char **out_step_json);

/*
 Feed one respondent input, e.g. `{"type": "free_text", "text": "..."}`,
 `{"type": "yes_no", "value": true}`, `{"type": "choice", "index": 0}` or
 `{"type": "likert", "value": 3}`. A negative `now_ms` means wall clock.

 # Safety
 Pointers must be valid; `input_json` must be NUL-terminated.
 */
enum ConvoprobeStatus convoprobe_session_advance(const struct ConvoprobeEngine *engine,
                                                 struct ConvoprobeSession *session,
                                                 const char *input_json,
                                                 int64_t now_ms,
                                                 char **out_step_json);

/*
 Mark the session dropped out if it has been idle for more than
 `timeout_secs` at `now_ms`. `out_expired` receives whether it changed.

 # Safety
 Pointers must be valid.
 */
enum ConvoprobeStatus convoprobe_session_expire(struct ConvoprobeSession *session,
                                                int64_t now_ms,
                                                uint64_t timeout_secs,
                                                bool *out_expired);

/*
 The session's transcript so far as JSON.

 # Safety
 Pointers must be valid.
 */
enum ConvoprobeStatus convoprobe_session_transcript(struct ConvoprobeSession *session,
                                                    char **out_json);

/*
 Store records produced since the last drain, as JSONL lines ready to
 append to a transcript store.

 # Safety
 Pointers must be valid.
 */
enum ConvoprobeStatus convoprobe_session_drain_records(struct ConvoprobeSession *session,
                                                       char **out_jsonl);

/*
 Serialize the full session state, RNG included, so it can be restored
 elsewhere with [`convoprobe_session_restore`].

 # Safety
 Pointers must be valid.
 */
enum ConvoprobeStatus convoprobe_session_save(struct ConvoprobeSession *session, char **out_json);

/*
 # Safety
 Pointers must be valid; `state_json` must be NUL-terminated.
 */
enum ConvoprobeStatus convoprobe_session_restore(const char *state_json,
                                                 struct ConvoprobeSession **out_session);

/*
 # Safety
 `session` must be NULL or a live handle from this library.
 */
void convoprobe_session_free(struct ConvoprobeSession *session);

/*
 Run a simulated experiment. `config_json` is
 `{"seed": 1, "n_per_condition": 100}` plus optional `conditions`,
 `population` and `timeout_secs`. Writes the store as JSONL.

 # Safety
 Pointers must be valid; `config_json` must be NUL-terminated.
 */
enum ConvoprobeStatus convoprobe_simulate(const struct ConvoprobeEngine *engine,
                                          const char *config_json,
                                          char **out_store_jsonl);

/*
 Metric report for a JSONL store as JSON. Corrupt lines are skipped,
 as when reading a store file.

 # Safety
 Pointers must be valid; `store_jsonl` must be NUL-terminated.
 */
enum ConvoprobeStatus convoprobe_report(const struct ConvoprobeEngine *engine,
                                        const char *store_jsonl,
                                        char **out_json);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* CONVOPROBE_H */
