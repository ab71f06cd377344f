//! Experiment runner: reads an [`ExperimentConfig`], runs its stages and
//! writes one JSON report per stage plus CSV tables.

pub mod config;
mod stages;

use std::path::{Path, PathBuf};

pub use config::{ExperimentConfig, Pipeline, Stage};
pub use stages::{run, RunSummary, StageStatus};

/// JSON schema every stage report validates against.
pub const REPORT_SCHEMA: &str = include_str!("../schema/report.schema.json");

pub const REPORT_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config at `{path}`: {message}")]
    Validation { path: String, message: String },
    #[error("cannot read {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot write {}: {message}", path.display())]
    Output { path: PathBuf, message: String },
    #[error("stage {stage} failed: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: orlicz::Error,
    },
}

impl CliError {
    /// Process exit status for this error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation { .. } | CliError::Io { .. } => 2,
            CliError::Output { .. } | CliError::Stage { .. } => 3,
        }
    }

    pub(crate) fn output(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Output {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

/// Human-readable registry listing.
pub fn list_models() -> String {
    let mut s = String::new();
    for fam in orlicz::structures::registry() {
        s.push_str(&format!("{}\n    {}\n", fam.name, fam.summary));
        for (name, doc) in &fam.parameters {
            s.push_str(&format!("    {name:<10} {doc}\n"));
        }
        let example = serde_json::to_string(&fam.example).expect("model specs serialize");
        s.push_str(&format!("    example: {example}\n"));
    }
    s
}

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
