//! C interface: load a model, feed it turns, read back the dialogue state.
//!
//! Every function returns an [`StStatus`]. Failures also leave a message for
//! the calling thread, readable with [`st_last_error`].

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::ptr;

use spantrack::tracker::{update_state, DialogueState, ModelBundle, ModelError};

#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    BadModel = 4,
    Tracking = 5,
    BufferTooSmall = 6,
    Panic = 7,
    OutOfRange = 8,
}

/// A loaded model plus the state of the dialogue in progress.
pub struct StTracker {
    model: ModelBundle,
    state: DialogueState,
}

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn fail(status: StStatus, msg: impl Into<String>) -> StStatus {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg.into());
    status
}

fn guard(f: impl FnOnce() -> StStatus) -> StStatus {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|_| fail(StStatus::Panic, "internal panic"))
}

unsafe fn read_str<'a>(p: *const c_char, what: &str) -> Result<&'a str, StStatus> {
    if p.is_null() {
        return Err(fail(StStatus::NullArgument, format!("{what} is null")));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| fail(StStatus::InvalidUtf8, format!("{what} is not UTF-8")))
}

/// Copies `text` plus a NUL terminator into `buf`. `written` receives the
/// required size, terminator included, even when `buf` is too small.
unsafe fn copy_out(text: &str, buf: *mut c_char, len: usize, written: *mut usize) -> StStatus {
    let need = text.len() + 1;
    if !written.is_null() {
        *written = need;
    }
    if buf.is_null() || len < need {
        return fail(StStatus::BufferTooSmall, format!("buffer needs {need} bytes"));
    }
    ptr::copy_nonoverlapping(text.as_ptr(), buf.cast::<u8>(), text.len());
    *buf.add(text.len()) = 0;
    StStatus::Ok
}

/// Static description of a status code.
#[no_mangle]
pub extern "C" fn st_status_message(status: StStatus) -> *const c_char {
    let s: &'static CStr = match status {
        StStatus::Ok => c"ok",
        StStatus::NullArgument => c"null argument",
        StStatus::InvalidUtf8 => c"string is not valid UTF-8",
        StStatus::Io => c"file could not be read",
        StStatus::BadModel => c"model file is invalid",
        StStatus::Tracking => c"tracking failed",
        StStatus::BufferTooSmall => c"buffer too small",
        StStatus::Panic => c"internal panic",
        StStatus::OutOfRange => c"index out of range",
    };
    s.as_ptr()
}

/// Copies the calling thread's most recent error message.
///
/// # Safety
/// `buf` must hold `len` writable bytes; `written` may be null.
#[no_mangle]
pub unsafe extern "C" fn st_last_error(buf: *mut c_char, len: usize, written: *mut usize) -> StStatus {
    let msg = LAST_ERROR.with(|e| e.borrow().clone());
    copy_out(&msg, buf, len, written)
}

/// Loads a model file. On success `*out` owns a tracker to release with
/// [`st_tracker_free`].
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn st_tracker_load(path: *const c_char, out: *mut *mut StTracker) -> StStatus {
    guard(|| {
        if out.is_null() {
            return fail(StStatus::NullArgument, "out is null");
        }
        *out = ptr::null_mut();
        let path = match read_str(path, "path") {
            Ok(p) => p,
            Err(s) => return s,
        };
        match ModelBundle::load(path) {
            Ok(model) => {
                *out = Box::into_raw(Box::new(StTracker {
                    model,
                    state: DialogueState::new(),
                }));
                StStatus::Ok
            }
            Err(ModelError::Io(e)) => fail(StStatus::Io, format!("{path}: {e}")),
            Err(e) => fail(StStatus::BadModel, format!("{path}: {e}")),
        }
    })
}

/// Releases a tracker. Null is ignored.
///
/// # Safety
/// `tracker` must come from [`st_tracker_load`] and not be used afterwards.
#[no_mangle]
pub unsafe extern "C" fn st_tracker_free(tracker: *mut StTracker) {
    if !tracker.is_null() {
        drop(Box::from_raw(tracker));
    }
}

/// Clears the dialogue state.
///
/// # Safety
/// `tracker` must be a live tracker.
#[no_mangle]
pub unsafe extern "C" fn st_tracker_reset(tracker: *mut StTracker) -> StStatus {
    match tracker.as_mut() {
        Some(t) => {
            t.state = DialogueState::new();
            StStatus::Ok
        }
        None => fail(StStatus::NullArgument, "tracker is null"),
    }
}

/// Processes one system/user turn and updates the dialogue state.
///
/// # Safety
/// `tracker` must be a live tracker; both strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn st_tracker_step(tracker: *mut StTracker, system: *const c_char, user: *const c_char) -> StStatus {
    guard(|| {
        let Some(t) = tracker.as_mut() else {
            return fail(StStatus::NullArgument, "tracker is null");
        };
        let (system, user) = match (read_str(system, "system"), read_str(user, "user")) {
            (Ok(s), Ok(u)) => (s, u),
            (Err(s), _) | (_, Err(s)) => return s,
        };
        match t.model.predict_turn(system, user) {
            Ok(pred) => {
                t.state = update_state(&t.state, &pred);
                StStatus::Ok
            }
            Err(e) => fail(StStatus::Tracking, e.to_string()),
        }
    })
}

/// Writes the current state as a JSON object mapping slot names to values.
///
/// # Safety
/// `tracker` must be a live tracker and `buf` hold `len` writable bytes;
/// `written` may be null.
#[no_mangle]
pub unsafe extern "C" fn st_tracker_state_json(
    tracker: *const StTracker,
    buf: *mut c_char,
    len: usize,
    written: *mut usize,
) -> StStatus {
    guard(|| {
        let Some(t) = tracker.as_ref() else {
            return fail(StStatus::NullArgument, "tracker is null");
        };
        let json = serde_json::to_string(&t.state).expect("states serialize");
        copy_out(&json, buf, len, written)
    })
}

/// Number of slots the model tracks.
///
/// # Safety
/// `tracker` must be a live tracker and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn st_tracker_num_slots(tracker: *const StTracker, out: *mut usize) -> StStatus {
    match (tracker.as_ref(), out.is_null()) {
        (Some(t), false) => {
            *out = t.model.slots().len();
            StStatus::Ok
        }
        _ => fail(StStatus::NullArgument, "tracker or out is null"),
    }
}

/// Copies the name of slot `index`.
///
/// # Safety
/// `tracker` must be a live tracker and `buf` hold `len` writable bytes;
/// `written` may be null.
#[no_mangle]
pub unsafe extern "C" fn st_tracker_slot_name(
    tracker: *const StTracker,
    index: usize,
    buf: *mut c_char,
    len: usize,
    written: *mut usize,
) -> StStatus {
    let Some(t) = tracker.as_ref() else {
        return fail(StStatus::NullArgument, "tracker is null");
    };
    match t.model.slots().get(index) {
        Some(name) => copy_out(name, buf, len, written),
        None => fail(StStatus::OutOfRange, format!("no slot {index}")),
    }
}

/// Total trainable scalars in the model.
///
/// # Safety
/// `tracker` must be a live tracker and `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn st_tracker_parameter_count(tracker: *const StTracker, out: *mut u64) -> StStatus {
    match (tracker.as_ref(), out.is_null()) {
        (Some(t), false) => {
            *out = t.model.parameter_count() as u64;
            StStatus::Ok
        }
        _ => fail(StStatus::NullArgument, "tracker or out is null"),
    }
}
