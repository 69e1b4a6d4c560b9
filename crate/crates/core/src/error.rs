use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the toolkit.
#[derive(Debug, Error)]
pub enum FddError {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("non-finite value: {0}")]
    Numeric(String),

    #[error("training diverged at epoch {epoch}: loss = {loss}")]
    Divergence { epoch: usize, loss: f64 },

    #[error("simulation diverged at sample {sample}: |y| = {value:e}")]
    SimulationDivergence { sample: usize, value: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid label: {0}")]
    Label(String),

    #[error("infeasible band: omega_low = {low} >= omega_high = {high}")]
    InfeasibleBand { low: f64, high: f64 },

    #[error("band too wide: register length {needed} exceeds the supported maximum of 16")]
    BandTooWide { needed: u32 },

    #[error("LFSR seed state must be nonzero")]
    DegenerateState,

    #[error("insufficient data: {len} samples for horizon {horizon}")]
    InsufficientData { len: usize, horizon: usize },

    #[error("split produced an empty {0} partition")]
    EmptySplit(&'static str),

    #[error("metric undefined: class {0} has no true samples")]
    UndefinedMetric(usize),

    #[error("{path}:{line}: {msg}")]
    Format {
        path: PathBuf,
        line: usize,
        msg: String,
    },

    #[error("input error: {0}")]
    Input(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FddError {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        FddError::Dimension(msg.into())
    }

    /// True for errors that stem from numerical blow-up rather than bad input.
    pub fn is_divergence(&self) -> bool {
        matches!(
            self,
            FddError::Divergence { .. } | FddError::SimulationDivergence { .. } | FddError::Numeric(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, FddError>;
