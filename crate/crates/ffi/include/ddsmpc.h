#ifndef DDSMPC_H
#define DDSMPC_H

/* Generated by cbindgen from the ddsmpc-ffi crate; do not edit by hand. */

#include <stdarg.h>
#include <stdbool.h>
#include <stddef.h>
#include <stdint.h>
#include <stdlib.h>

/**
 * Success.
 */
#define DDSMPC_OK 0

/**
 * The step problem is infeasible for this measurement (not an error).
 */
#define DDSMPC_INFEASIBLE 1

/**
 * A null pointer or mismatched dimension was passed.
 */
#define DDSMPC_ERR_INVALID -1

/**
 * Text input failed to parse.
 */
#define DDSMPC_ERR_PARSE -2

/**
 * A numerical procedure failed.
 */
#define DDSMPC_ERR_NUMERICAL -3

/**
 * Any other library error.
 */
#define DDSMPC_ERR_INTERNAL -4

/**
 * A panic was caught at the boundary.
 */
#define DDSMPC_ERR_PANIC -5

/**
 * Opaque frozen offline-synthesis output.
 */
typedef struct DdsmpcArtifact DdsmpcArtifact;

/**
 * Opaque per-session online solver (holds warm-start state).
 */
typedef struct DdsmpcController DdsmpcController;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Last error message of the current thread. Valid until the next
 * failing call on this thread; never null.
 */
const char *ddsmpc_last_error(void);

/**
 * Parse an artifact from its text serialization.
 *
 * # Safety
 * `text` must be a valid NUL-terminated string and `out` a valid pointer.
 */
int ddsmpc_artifact_from_text(const char *text, struct DdsmpcArtifact **out);

/**
 * Load an artifact from a file path.
 *
 * # Safety
 * `path` must be a valid NUL-terminated string and `out` a valid pointer.
 */
int ddsmpc_artifact_load(const char *path, struct DdsmpcArtifact **out);

/**
 * Release an artifact. Safe on null. All controllers created from it
 * must already be freed.
 *
 * # Safety
 * `artifact` must be null or a pointer from a ddsmpc constructor, not
 * yet freed.
 */
void ddsmpc_artifact_free(struct DdsmpcArtifact *artifact);

/**
 * Query the artifact dimensions (any output pointer may be null).
 *
 * # Safety
 * `artifact` must be a live artifact handle.
 */
int ddsmpc_artifact_dims(const struct DdsmpcArtifact *artifact,
                         size_t *n,
                         size_t *m,
                         size_t *horizon);

/**
 * Create an online controller bound to an artifact. The artifact must
 * outlive the controller; use one controller per closed-loop session.
 *
 * # Safety
 * `artifact` must be a live artifact handle and `out` a valid pointer.
 */
int ddsmpc_controller_new(const struct DdsmpcArtifact *artifact, struct DdsmpcController **out);

/**
 * Release a controller. Safe on null.
 *
 * # Safety
 * `controller` must be null or a live controller handle, not yet freed.
 */
void ddsmpc_controller_free(struct DdsmpcController *controller);

/**
 * Enable or disable warm starting (enabled by default); disabling also
 * clears the stored warm-start state.
 *
 * # Safety
 * `controller` must be a live controller handle.
 */
int ddsmpc_controller_set_warm_start(struct DdsmpcController *controller, int enabled);

/**
 * Solve one online step for the measured state `x` (length `n`).
 * On `DDSMPC_OK`, writes the first input block to `u0` (length `m`) and
 * the solved objective to `objective` (nullable). Returns
 * `DDSMPC_INFEASIBLE` (without touching the outputs) when no feasible
 * input sequence exists for this measurement.
 *
 * # Safety
 * `controller` must be a live handle; `x` must point to `n` doubles and
 * `u0` to `m` doubles matching the artifact dimensions.
 */
int ddsmpc_controller_step(struct DdsmpcController *controller,
                           const double *x,
                           size_t n,
                           double *u0,
                           size_t m,
                           double *objective);

/**
 * Phase-1 feasibility test for a measured state: writes 1 or 0 to
 * `feasible`.
 *
 * # Safety
 * `controller` must be a live handle; `x` must point to `n` doubles;
 * `feasible` must be a valid pointer.
 */
int ddsmpc_controller_feasible(const struct DdsmpcController *controller,
                               const double *x,
                               size_t n,
                               int *feasible);

/**
 * Serialize an artifact to its text format. The returned string must be
 * released with [`ddsmpc_string_free`].
 *
 * # Safety
 * `artifact` must be a live handle and `out` a valid pointer.
 */
int ddsmpc_artifact_to_text(const struct DdsmpcArtifact *artifact, char **out);

/**
 * Release a string returned by this library. Safe on null.
 *
 * # Safety
 * `s` must be null or a string returned by this library, not yet freed.
 */
void ddsmpc_string_free(char *s);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* DDSMPC_H */
