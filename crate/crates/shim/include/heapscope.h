/* heapscope embedder API: attribution, domain scopes, thread status, and CPU safe points for the preloadable profiling shim. */

#ifndef HEAPSCOPE_H
#define HEAPSCOPE_H

#include <stdarg.h>
#include <stdbool.h>
#include <stdint.h>
#include <stdlib.h>

#define HEAPSCOPE_OK 0

#define HEAPSCOPE_ERR_INVALID -1

#define HEAPSCOPE_ERR_IMBALANCE -2

#define HEAPSCOPE_DOMAIN_NATIVE 0

#define HEAPSCOPE_DOMAIN_MANAGED 1

#define HEAPSCOPE_THREAD_EXECUTING 0

#define HEAPSCOPE_THREAD_SLEEPING 1

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

/**
 * Attributes subsequent events on this thread to `file:line`. Pass the same
 * pointer repeatedly to skip re-parsing. Clears on `heapscope_clear_callsite`.
 *
 * # Safety
 * `file` must be null or a NUL-terminated string valid for the call.
 */
int heapscope_set_callsite(const char *file, uint32_t line);

void heapscope_clear_callsite(void);

/**
 * Opens a managed/native attribution scope on this thread.
 */
int heapscope_domain_push(int domain);

int heapscope_domain_pop(void);

/**
 * Declares this thread executing (0) or sleeping (1); sleeping threads
 * receive no CPU attribution. Threads may appear at any time.
 */
int heapscope_set_thread_status(int status);

/**
 * Marks this thread as sitting in a call into native code (nonzero) or not.
 */
int heapscope_set_in_call(int in_call);

/**
 * Safe point for CPU timing. The embedder's interpreter loop calls this
 * regularly; once a quantum of virtual time has elapsed since the last
 * sample, the call becomes the (deferred) timer delivery, and any delay
 * beyond the quantum is attributed to native execution. Timer samples are
 * appended to `<out>.timer` for `heapscope report --timer-log`.
 */
void heapscope_safepoint(void);

/**
 * Flushes buffered samples to disk without sealing the log. Also folds the
 * calling thread's pending byte counts into the sampler first.
 */
int heapscope_flush(void);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* HEAPSCOPE_H */
