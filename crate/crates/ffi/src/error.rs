use std::cell::RefCell;
use std::ffi::{c_char, CString};
use std::panic::{catch_unwind, UnwindSafe};

use fedhypevae::Error;

/// Result code of every fallible entry point.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FhveStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    Config = 3,
    Io = 4,
    Format = 5,
    CheckpointVersion = 6,
    BudgetUnreachable = 7,
    Diverged = 8,
    BufferTooSmall = 9,
    Internal = 10,
    Panic = 11,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

pub(crate) struct FfiError {
    pub status: FhveStatus,
    pub message: String,
}

impl FfiError {
    pub fn new(status: FhveStatus, message: impl Into<String>) -> Self {
        Self {
            status,
            message: message.into(),
        }
    }

    pub fn null(arg: &str) -> Self {
        Self::new(FhveStatus::NullPointer, format!("`{arg}` is null"))
    }
}

impl From<Error> for FfiError {
    fn from(e: Error) -> Self {
        let status = match &e {
            Error::Config { .. } => FhveStatus::Config,
            Error::Io { .. } => FhveStatus::Io,
            Error::Format { .. } | Error::Json(_) | Error::Csv(_) => FhveStatus::Format,
            Error::CheckpointVersion { .. } => FhveStatus::CheckpointVersion,
            Error::BudgetUnreachable(_) => FhveStatus::BudgetUnreachable,
            Error::NonFinite { .. } => FhveStatus::Diverged,
            Error::InvalidArgument(_)
            | Error::Dimension { .. }
            | Error::UnknownClass { .. }
            | Error::LayoutMismatch(_) => FhveStatus::InvalidArgument,
            Error::Tape(_) => FhveStatus::Internal,
        };
        Self::new(status, e.to_string())
    }
}

fn set_last_error(message: &str) {
    let c = CString::new(message.replace('\0', " ")).unwrap_or_default();
    LAST_ERROR.with(|slot| *slot.borrow_mut() = Some(c));
}

/// Runs `f`, converting errors and panics into a status and the thread's
/// last error message.
pub(crate) fn guard<F>(f: F) -> FhveStatus
where
    F: FnOnce() -> Result<(), FfiError> + UnwindSafe,
{
    match catch_unwind(f) {
        Ok(Ok(())) => FhveStatus::Ok,
        Ok(Err(e)) => {
            set_last_error(&e.message);
            e.status
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| payload.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "unknown panic".into());
            set_last_error(&format!("panic: {msg}"));
            FhveStatus::Panic
        }
    }
}

/// Message of the most recent failed call on this thread, or null if none.
/// The pointer stays valid until the next failing call or
/// `fhve_clear_last_error` on the same thread.
#[no_mangle]
pub extern "C" fn fhve_last_error_message() -> *const c_char {
    LAST_ERROR.with(|slot| slot.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

#[no_mangle]
pub extern "C" fn fhve_clear_last_error() {
    LAST_ERROR.with(|slot| *slot.borrow_mut() = None);
}
