//! Per-step run recording: `(alpha_t, G_t)` with central-epoch tags plus the
//! initial and final weights. This is exactly what colluding observers of a
//! trainer's weight uploads could reconstruct, and what the telescoping
//! identity is checked against.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::AnalysisError;
use crate::nn::{GradSet, ParamSet};

const LEDGER_MAGIC: &[u8; 4] = b"WLGR";
const LEDGER_VERSION: u8 = 1;

/// One recorded update step.
#[derive(Clone, Debug)]
pub struct LedgerStep {
    pub central_epoch: u32,
    pub alpha: f64,
    pub grads: GradSet,
}

/// Recorded SGD run: replaying `steps` from `w_init` reproduces `w_final`.
#[derive(Clone, Debug)]
pub struct RunLedger {
    pub w_init: ParamSet,
    pub steps: Vec<LedgerStep>,
    pub w_final: ParamSet,
}

impl RunLedger {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// Applies the recorded steps to `w_init` with plain SGD, in order.
    pub fn replay(&self) -> Result<ParamSet, AnalysisError> {
        let mut w = self.w_init.clone();
        for step in &self.steps {
            w = crate::optim::sgd_step(&w, &step.grads, step.alpha)?;
        }
        Ok(w)
    }

    /// Versioned binary dump mirroring the weight-blob conventions
    /// (little-endian f64 payloads behind a magic/version header).
    pub fn dump(&self, path: impl AsRef<Path>) -> Result<(), AnalysisError> {
        let mut out = BufWriter::new(File::create(path)?);
        out.write_all(LEDGER_MAGIC)?;
        out.write_all(&[LEDGER_VERSION])?;
        let dim = self.w_init.len() as u64;
        out.write_all(&dim.to_le_bytes())?;
        write_values(&mut out, self.w_init.values())?;
        out.write_all(&(self.steps.len() as u64).to_le_bytes())?;
        for step in &self.steps {
            out.write_all(&step.central_epoch.to_le_bytes())?;
            out.write_all(&step.alpha.to_le_bytes())?;
            write_values(&mut out, step.grads.values())?;
        }
        write_values(&mut out, self.w_final.values())?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, AnalysisError> {
        let mut input = BufReader::new(File::open(path)?);
        let mut magic = [0u8; 4];
        input.read_exact(&mut magic)?;
        if &magic != LEDGER_MAGIC {
            return Err(AnalysisError::BadLedger("bad magic".into()));
        }
        let mut version = [0u8; 1];
        input.read_exact(&mut version)?;
        if version[0] != LEDGER_VERSION {
            return Err(AnalysisError::BadLedger(format!("unknown version {}", version[0])));
        }
        let dim = read_u64(&mut input)? as usize;
        let w_init = ParamSet::new(read_values(&mut input, dim)?);
        let count = read_u64(&mut input)? as usize;
        let mut steps = Vec::with_capacity(count);
        for _ in 0..count {
            let mut epoch = [0u8; 4];
            input.read_exact(&mut epoch)?;
            let mut alpha = [0u8; 8];
            input.read_exact(&mut alpha)?;
            steps.push(LedgerStep {
                central_epoch: u32::from_le_bytes(epoch),
                alpha: f64::from_le_bytes(alpha),
                grads: GradSet::new(read_values(&mut input, dim)?),
            });
        }
        let w_final = ParamSet::new(read_values(&mut input, dim)?);
        Ok(RunLedger { w_init, steps, w_final })
    }
}

impl RunLedger {
    /// Chains contiguous segments (each segment's final weights must be
    /// bit-identical to the next segment's initial weights) into one run.
    pub fn concat(segments: &[RunLedger]) -> Option<RunLedger> {
        let first = segments.first()?;
        let mut steps = first.steps.clone();
        let mut prev_final = &first.w_final;
        for segment in &segments[1..] {
            if !segment.w_init.bit_eq(prev_final) {
                return None;
            }
            steps.extend(segment.steps.iter().cloned());
            prev_final = &segment.w_final;
        }
        Some(RunLedger {
            w_init: first.w_init.clone(),
            steps,
            w_final: prev_final.clone(),
        })
    }
}

const SEGMENTS_MAGIC: &[u8; 4] = b"WLGS";

/// Writes a trainer's per-epoch ledger segments as one file.
pub fn dump_segments(
    path: impl AsRef<Path>,
    segments: &[RunLedger],
) -> Result<(), AnalysisError> {
    let mut out = BufWriter::new(File::create(path.as_ref())?);
    out.write_all(SEGMENTS_MAGIC)?;
    out.write_all(&[LEDGER_VERSION])?;
    out.write_all(&(segments.len() as u64).to_le_bytes())?;
    for segment in segments {
        let bytes = encode_ledger(segment);
        out.write_all(&(bytes.len() as u64).to_le_bytes())?;
        out.write_all(&bytes)?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a segments file written by [`dump_segments`].
pub fn load_segments(path: impl AsRef<Path>) -> Result<Vec<RunLedger>, AnalysisError> {
    let mut input = BufReader::new(File::open(path.as_ref())?);
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != SEGMENTS_MAGIC {
        return Err(AnalysisError::BadLedger("bad segments magic".into()));
    }
    let mut version = [0u8; 1];
    input.read_exact(&mut version)?;
    if version[0] != LEDGER_VERSION {
        return Err(AnalysisError::BadLedger(format!("unknown version {}", version[0])));
    }
    let count = read_u64(&mut input)? as usize;
    let mut segments = Vec::with_capacity(count);
    for _ in 0..count {
        let len = read_u64(&mut input)? as usize;
        let mut bytes = vec![0u8; len];
        input.read_exact(&mut bytes)?;
        segments.push(decode_ledger(&bytes)?);
    }
    Ok(segments)
}

fn encode_ledger(ledger: &RunLedger) -> Vec<u8> {
    let dim = ledger.w_init.len();
    let mut out = Vec::with_capacity(16 + 8 * dim * (ledger.steps.len() + 2));
    out.extend_from_slice(&(dim as u64).to_le_bytes());
    for v in ledger.w_init.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&(ledger.steps.len() as u64).to_le_bytes());
    for step in &ledger.steps {
        out.extend_from_slice(&step.central_epoch.to_le_bytes());
        out.extend_from_slice(&step.alpha.to_le_bytes());
        for v in step.grads.values() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    for v in ledger.w_final.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn decode_ledger(bytes: &[u8]) -> Result<RunLedger, AnalysisError> {
    let mut cursor = std::io::Cursor::new(bytes);
    let dim = read_u64(&mut cursor)? as usize;
    let w_init = ParamSet::new(read_values(&mut cursor, dim)?);
    let count = read_u64(&mut cursor)? as usize;
    let mut steps = Vec::with_capacity(count);
    for _ in 0..count {
        let mut epoch = [0u8; 4];
        cursor.read_exact(&mut epoch).map_err(AnalysisError::Io)?;
        let mut alpha = [0u8; 8];
        cursor.read_exact(&mut alpha).map_err(AnalysisError::Io)?;
        steps.push(LedgerStep {
            central_epoch: u32::from_le_bytes(epoch),
            alpha: f64::from_le_bytes(alpha),
            grads: GradSet::new(read_values(&mut cursor, dim)?),
        });
    }
    let w_final = ParamSet::new(read_values(&mut cursor, dim)?);
    Ok(RunLedger { w_init, steps, w_final })
}

fn write_values(out: &mut impl Write, values: &[f64]) -> std::io::Result<()> {
    for v in values {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u64(input: &mut impl Read) -> Result<u64, AnalysisError> {
    let mut buf = [0u8; 8];
    input.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}

fn read_values(input: &mut impl Read, count: usize) -> Result<Vec<f64>, AnalysisError> {
    let mut buf = vec![0u8; count * 8];
    input.read_exact(&mut buf)?;
    Ok(buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
}

/// Residual of the telescoping identity: accumulates `sum(alpha_t * G_t)` in
/// step order and returns the infinity norm of
/// `(w_init - w_final) - sum(alpha_t * G_t)`. Near zero only for SGD runs;
/// adaptive optimizers break the identity.
pub fn telescoping_check(ledger: &RunLedger) -> f64 {
    let dim = ledger.w_init.len();
    let mut acc = vec![0.0f64; dim];
    for step in &ledger.steps {
        for (a, g) in acc.iter_mut().zip(step.grads.values()) {
            *a += step.alpha * g;
        }
    }
    ledger
        .w_init
        .values()
        .iter()
        .zip(ledger.w_final.values())
        .zip(&acc)
        .map(|((wi, wf), s)| ((wi - wf) - s).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::optim::sgd_step;

    fn record_run(dim: usize, steps: usize) -> RunLedger {
        let w0 = ParamSet::new((0..dim).map(|i| i as f64 * 0.1).collect());
        let mut w = w0.clone();
        let mut recorded = Vec::new();
        for s in 0..steps {
            let alpha = 0.05 + (s % 7) as f64 * 1e-3;
            let grads =
                GradSet::new((0..dim).map(|i| ((s * dim + i) as f64 * 0.7).sin()).collect());
            w = sgd_step(&w, &grads, alpha).unwrap();
            recorded.push(LedgerStep { central_epoch: (s / 10) as u32, alpha, grads });
        }
        RunLedger { w_init: w0, steps: recorded, w_final: w }
    }

    #[test]
    fn replay_reproduces_final_weights() {
        let ledger = record_run(5, 40);
        assert!(ledger.replay().unwrap().bit_eq(&ledger.w_final));
    }

    #[test]
    fn telescoping_residual_is_tiny_for_sgd() {
        let ledger = record_run(8, 500);
        assert!(telescoping_check(&ledger) < 1e-9);
    }

    #[test]
    fn all_zero_gradients_telescope_exactly() {
        let w0 = ParamSet::new(vec![1.0, -2.0]);
        let steps = (0..10)
            .map(|_| LedgerStep {
                central_epoch: 0,
                alpha: 0.1,
                grads: GradSet::zeros(2),
            })
            .collect();
        let ledger = RunLedger { w_init: w0.clone(), steps, w_final: w0 };
        assert_eq!(telescoping_check(&ledger), 0.0);
    }

    #[test]
    fn dump_load_roundtrip() {
        let ledger = record_run(4, 17);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.ledger");
        ledger.dump(&path).unwrap();
        let back = RunLedger::load(&path).unwrap();
        assert!(back.w_init.bit_eq(&ledger.w_init));
        assert!(back.w_final.bit_eq(&ledger.w_final));
        assert_eq!(back.len(), ledger.len());
        for (a, b) in back.steps.iter().zip(&ledger.steps) {
            assert_eq!(a.central_epoch, b.central_epoch);
            assert_eq!(a.alpha, b.alpha);
            assert_eq!(a.grads.values(), b.grads.values());
        }
    }

    #[test]
    fn load_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk");
        std::fs::write(&path, b"not a ledger").unwrap();
        assert!(RunLedger::load(&path).is_err());
    }
}
