//! Batch front-end for the grating solver: a TOML run file selects one of
//! `solve`, `sweep`, `mc` or `efficiency`, and results land as CSV/JSON files
//! next to a JSON run manifest.
//!
//! | exit code | meaning |
//! |-----------|---------|
//! | 0 | success |
//! | 1 | parse or validation error |
//! | 2 | Monte Carlo rejection rate above 20% |
//! | 3 | insufficient data for the exponent fit |
//! | 4 | solver or I/O failure |

pub mod config;
pub mod run;

use grating_core::GratingError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid `{field}`: {constraint}")]
    Validation { field: String, constraint: String },

    #[error(transparent)]
    Core(#[from] GratingError),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse { .. } | CliError::Validation { .. } => 1,
            CliError::Core(GratingError::InvalidParameter { .. }) => 1,
            CliError::Core(GratingError::RejectionRateExceeded { .. }) => 2,
            CliError::Core(GratingError::InsufficientData(_)) => 3,
            CliError::Core(_) | CliError::Io(_) => 4,
        }
    }
}
