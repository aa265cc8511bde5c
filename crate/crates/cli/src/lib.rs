//! Driver for the deepact pipeline: `ingest → train → eval / decode`, plus
//! structure sweeps and artifact inspection.
//!
//! Stages communicate through files in an output directory. All randomness
//! derives from the master seed in [`config::RunConfig`].

// `!(x > 0.0)` style checks are deliberate: NaN must fail them.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod commands;
pub mod config;
pub mod features;
pub mod manifest;

use deepact::Error;

pub const EXIT_OK: i32 = 0;
pub const EXIT_OTHER: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_INPUT: i32 = 3;
pub const EXIT_DIVERGED: i32 = 4;

/// Process exit status for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => EXIT_CONFIG,
        Error::Io { .. }
        | Error::Parse { .. }
        | Error::UnknownLabel { .. }
        | Error::EmptyInput(_)
        | Error::Format(_)
        | Error::Dimension { .. } => EXIT_INPUT,
        Error::Diverged { .. } => EXIT_DIVERGED,
        Error::Invalid(_) => EXIT_OTHER,
    }
}
