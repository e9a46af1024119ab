#ifndef SPANTRACK_H
#define SPANTRACK_H

#include <stddef.h>
#include <stdint.h>

typedef enum StStatus {
  ST_STATUS_OK = 0,
  ST_STATUS_NULL_ARGUMENT = 1,
  ST_STATUS_INVALID_UTF8 = 2,
  ST_STATUS_IO = 3,
  ST_STATUS_BAD_MODEL = 4,
  ST_STATUS_TRACKING = 5,
  ST_STATUS_BUFFER_TOO_SMALL = 6,
  ST_STATUS_PANIC = 7,
  ST_STATUS_OUT_OF_RANGE = 8,
} StStatus;

// A loaded model plus the state of the dialogue in progress.
typedef struct StTracker StTracker;

#ifdef __cplusplus
extern "C" {
#endif // __cplusplus

// Static description of a status code.
const char *st_status_message(enum StStatus status);

// Copies the calling thread's most recent error message.
//
// # Safety
// `buf` must hold `len` writable bytes; `written` may be null.
enum StStatus st_last_error(char *buf, size_t len, size_t *written);

// Loads a model file. On success `*out` owns a tracker to release with
// [`st_tracker_free`].
//
// # Safety
// `path` must be a NUL-terminated string and `out` a valid pointer.
enum StStatus st_tracker_load(const char *path, struct StTracker **out);

// Releases a tracker. Null is ignored.
//
// # Safety
// `tracker` must come from [`st_tracker_load`] and not be used afterwards.
void st_tracker_free(struct StTracker *tracker);

// Clears the dialogue state.
//
// # Safety
// `tracker` must be a live tracker.
enum StStatus st_tracker_reset(struct StTracker *tracker);

// Processes one system/user turn and updates the dialogue state.
//
// # Safety
// `tracker` must be a live tracker; both strings NUL-terminated.
enum StStatus st_tracker_step(struct StTracker *tracker, const char *system, const char *user);

// Writes the current state as a JSON object mapping slot names to values.
//
// # Safety
// `tracker` must be a live tracker and `buf` hold `len` writable bytes;
// `written` may be null.
enum StStatus st_tracker_state_json(const struct StTracker *tracker,
                                    char *buf,
                                    size_t len,
                                    size_t *written);

// Number of slots the model tracks.
//
// # Safety
// `tracker` must be a live tracker and `out` a valid pointer.
enum StStatus st_tracker_num_slots(const struct StTracker *tracker, size_t *out);

// Copies the name of slot `index`.
//
// # Safety
// `tracker` must be a live tracker and `buf` hold `len` writable bytes;
// `written` may be null.
enum StStatus st_tracker_slot_name(const struct StTracker *tracker,
                                   size_t index,
                                   char *buf,
                                   size_t len,
                                   size_t *written);

// Total trainable scalars in the model.
//
// # Safety
// `tracker` must be a live tracker and `out` a valid pointer.
enum StStatus st_tracker_parameter_count(const struct StTracker *tracker, uint64_t *out);

#ifdef __cplusplus
}  // extern "C"
#endif  // __cplusplus

#endif  /* SPANTRACK_H */
