//! Experiment runner for the softfb workbench: configs, the inference
//! pipeline, result tables and the self-check suites behind the `softfb`
//! binary.

pub mod checks;
pub mod cli;
pub mod config;
pub mod counterexample;
pub mod experiment;
pub mod output;
pub mod stats;

use std::fmt;

/// Harness failures, split by exit status.
#[derive(Debug)]
pub enum HarnessError {
    /// Bad input: config, names, files, arguments. Exit status 1.
    Validation(String),
    /// A stage failed while running. Exit status 2.
    Runtime(String),
}

impl HarnessError {
    pub fn validation(e: softfb::Error) -> Self {
        Self::Validation(e.to_string())
    }

    pub fn runtime(e: impl fmt::Display) -> Self {
        Self::Runtime(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation(_) => 1,
            Self::Runtime(_) => 2,
        }
    }
}

impl fmt::Display for HarnessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Validation(m) => write!(f, "invalid input: {m}"),
            Self::Runtime(m) => write!(f, "runtime failure: {m}"),
        }
    }
}

impl std::error::Error for HarnessError {}

impl From<std::io::Error> for HarnessError {
    fn from(e: std::io::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        Self::Runtime(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
