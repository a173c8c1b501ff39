//! Benchmark plumbing: the shipped case studies, a versioned problem-file
//! format, result records, and the experiment drivers behind the CLI.

pub mod cases;
pub mod experiments;
pub mod file;

use thiserror::Error;

use crate::ccg_dro::DroError;
use crate::ccg_ro::CcgError;
use crate::lp::LpError;
use crate::model::ModelError;
use crate::uncertainty::UncertaintyError;

#[derive(Error, Debug)]
pub enum BenchError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("inconsistent process network: {0}")]
    GraphInconsistent(String),
    #[error("sampler starved at rho = {rho}: {accepted} of {attempts} proposals accepted")]
    SamplerStarved { rho: f64, attempts: usize, accepted: usize },
    #[error("oracle failed: {0}")]
    Oracle(String),
    #[error("bad problem file: {0}")]
    BadFile(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Uncertainty(#[from] UncertaintyError),
    #[error(transparent)]
    Ro(#[from] CcgError),
    #[error(transparent)]
    Dro(#[from] DroError),
    #[error(transparent)]
    Lp(#[from] LpError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
