//! Config-driven experiment runner for the iterated-learning benchmarks.

pub mod config;
pub mod experiments;
pub mod report;

use std::fmt;

#[derive(Debug)]
pub enum CliError {
    Config { reason: String },
    Io { path: String, message: String },
    Run { name: String, message: String },
    EmptyResults,
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config { reason } => write!(f, "config error: {reason}"),
            CliError::Io { path, message } => write!(f, "{path}: {message}"),
            CliError::Run { name, message } => write!(f, "run {name} failed: {message}"),
            CliError::EmptyResults => write!(f, "no results to report"),
        }
    }
}

impl std::error::Error for CliError {}

/// FNV-1a over the canonical config text; stable provenance for reports.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325u64;
    for &b in bytes {
        hash ^= u64::from(b);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    }
    hash
}
