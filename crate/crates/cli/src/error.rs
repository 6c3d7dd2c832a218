use std::path::PathBuf;

use serde::Serialize;
use thiserror::Error;

use xr23d::drr::DrrError;
use xr23d::harness::HarnessError;
use xr23d::ingest::IngestError;
use xr23d::morph::MorphError;
use xr23d::volume::VolumeError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Ingest(#[from] IngestError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Drr(#[from] DrrError),
    #[error(transparent)]
    Morph(#[from] MorphError),
    #[error(transparent)]
    Volume(#[from] VolumeError),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Ingest(_) => "ingest",
            CliError::Harness(_) => "harness",
            CliError::Drr(_) => "drr",
            CliError::Morph(_) => "morph",
            CliError::Volume(_) => "volume",
            CliError::Json(_) => "json",
        }
    }

    /// Configuration problems are usage errors.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            _ => 1,
        }
    }

    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Body<'a> {
            kind: &'a str,
            message: String,
        }
        #[derive(Serialize)]
        struct Envelope<'a> {
            error: Body<'a>,
        }
        serde_json::to_string(&Envelope { error: Body { kind: self.kind(), message: self.to_string() } })
            .expect("error serializes")
    }
}

pub fn io_err(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> CliError {
    let path = path.into();
    move |source| CliError::Io { path, source }
}
