//! Command-line front end of the `imsm` pipeline.

pub mod commands;
pub mod config;

use imsm::Error;

/// Process exit status for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Usage(_) => 2,
        Error::Data(_) | Error::Io { .. } => 3,
        Error::Compatibility(_) | Error::Shape(_) => 4,
        Error::Numeric(_) | Error::Training(_) | Error::Divergence { .. } => 5,
    }
}
