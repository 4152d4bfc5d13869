//! Colluder-knowledge accounting.
//!
//! When every party but one colludes, what they learn about the honest
//! trainer per central epoch is one vector equation
//! `V_j = alpha_1 G_1 + ... + alpha_n G_n` over its secret mini-batch
//! gradients: the difference between the weights the trainer received and
//! the weights it sent back. The report counts unknowns (data items in the
//! honest shard) against equations (central epochs) and, given the
//! trainer's recorded per-epoch ledgers, verifies each equation
//! numerically.

use super::ledger::{telescoping_check, RunLedger};
use super::AnalysisError;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    /// More unknowns than equations: recovering the data means solving an
    /// underdetermined nonlinear system.
    Underdetermined,
    Determined,
}

#[derive(Clone, Debug)]
pub struct CollusionReport {
    /// Data items in the honest trainer's shard.
    pub unknowns: usize,
    /// Central epochs = vector equations observable by the colluders.
    pub equations: usize,
    /// Scalar variable count `d * unknowns` when the item dimension is known.
    pub scalar_variables: Option<usize>,
    /// Infinity-norm residual of each epoch's telescoped equation, when
    /// per-epoch ledgers were supplied (one entry per epoch, in order).
    pub per_equation_residuals: Vec<f64>,
    pub verdict: Verdict,
}

/// Builds the report. `item_dim` is the per-item feature dimension (for the
/// scalar variable count). `epoch_ledgers`, when given, must hold one
/// recorded segment per central epoch: the weights received at the start of
/// the trainer's turn, its `(alpha, G)` steps, and the weights it sent out.
pub fn collusion_report(
    unknowns: usize,
    equations: usize,
    item_dim: Option<usize>,
    epoch_ledgers: Option<&[RunLedger]>,
) -> Result<CollusionReport, AnalysisError> {
    let per_equation_residuals = match epoch_ledgers {
        Some(ledgers) => {
            if ledgers.len() != equations {
                return Err(AnalysisError::MissingEpoch(ledgers.len() as u32));
            }
            if let Some(missing) = ledgers.iter().position(RunLedger::is_empty) {
                return Err(AnalysisError::MissingEpoch(missing as u32));
            }
            ledgers.iter().map(telescoping_check).collect()
        }
        None => Vec::new(),
    };
    let verdict =
        if unknowns > equations { Verdict::Underdetermined } else { Verdict::Determined };
    Ok(CollusionReport {
        unknowns,
        equations,
        scalar_variables: item_dim.map(|d| d * unknowns),
        per_equation_residuals,
        verdict,
    })
}
