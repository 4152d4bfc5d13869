//! Machine checks for the system's claims: the centralized-SGD oracle the
//! relay runs are compared against, the gradient-telescoping identity, the
//! colluder-knowledge ledger, and the running-time model.

mod collusion;
mod ledger;
mod oracle;
mod timing;

pub use collusion::{collusion_report, CollusionReport, Verdict};
pub use ledger::{dump_segments, load_segments, telescoping_check, LedgerStep, RunLedger};
pub use oracle::{centralized_oracle, check_equivalence, OracleConfig};
pub use timing::{connection_count, estimate_time, TimingProfile, Topology, TrainerTiming};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("parameter vectors have different lengths ({a} vs {b})")]
    LengthMismatch { a: usize, b: usize },
    #[error("negative timing component: {0}")]
    NegativeComponent(f64),
    #[error("no ledger steps tagged for central epoch {0}")]
    MissingEpoch(u32),
    #[error("ledger i/o failed: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad ledger file: {0}")]
    BadLedger(String),
    #[error(transparent)]
    Nn(#[from] crate::nn::NnError),
    #[error(transparent)]
    Optim(#[from] crate::optim::OptimError),
    #[error(transparent)]
    Data(#[from] crate::data::DataError),
}
