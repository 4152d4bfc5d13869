//! Accuracy / loss / F-score evaluation with dropout in eval mode.

use super::dropout::DropoutStream;
use super::engine::{forward, loss_and_output_grad};
use super::params::ParamSet;
use super::spec::{NetworkSpec, OutputLoss};
use super::NnError;
use crate::data::{Dataset, LabelKind};

/// Evaluation summary for one dataset.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    /// correct / total
    pub accuracy: f64,
    /// mean loss over all rows
    pub mean_loss: f64,
    /// 2PR/(P+R) for binary tasks, `None` otherwise; 0 when P+R = 0
    pub f_score: Option<f64>,
}

const EVAL_BATCH: usize = 256;

/// Accuracy, mean loss, and (for binary tasks) F-score of `params` on
/// `dataset`. Dropout runs in eval mode, so the pass is deterministic.
pub fn evaluate(
    spec: &NetworkSpec,
    params: &ParamSet,
    dataset: &Dataset,
) -> Result<EvalReport, NnError> {
    if dataset.is_empty() {
        return Err(NnError::EmptyDataset);
    }
    let mut correct = 0usize;
    let mut loss_sum = 0.0;
    let (mut tp, mut fp, mut fneg) = (0usize, 0usize, 0usize);

    let n = dataset.len();
    let mut start = 0;
    while start < n {
        let end = (start + EVAL_BATCH).min(n);
        let indices: Vec<usize> = (start..end).collect();
        let batch = dataset.minibatch(&indices);
        let mut stream = DropoutStream::eval();
        let outputs = forward(spec, params, &batch.inputs, &mut stream)?.outputs;
        let (j, _) = loss_and_output_grad(spec.output_loss, &outputs, &batch.targets);
        loss_sum += j * (end - start) as f64;

        for (row, &label) in outputs.rows().into_iter().zip(dataset.labels(&indices).iter()) {
            let predicted: u32 = match spec.output_loss {
                OutputLoss::SoftmaxCrossEntropy => argmax(row.iter().cloned()),
                OutputLoss::SigmoidBinaryCrossEntropy => (row[0] >= 0.0) as u32,
                OutputLoss::MeanSquaredError => {
                    if row.len() == 1 {
                        (row[0] >= 0.5) as u32
                    } else {
                        argmax(row.iter().cloned())
                    }
                }
            };
            if predicted == label {
                correct += 1;
            }
            if dataset.label_kind() == LabelKind::Binary {
                match (predicted, label) {
                    (1, 1) => tp += 1,
                    (1, 0) => fp += 1,
                    (0, 1) => fneg += 1,
                    _ => {}
                }
            }
        }
        start = end;
    }

    let f_score = (dataset.label_kind() == LabelKind::Binary).then(|| {
        let p_den = tp + fp;
        let r_den = tp + fneg;
        if p_den == 0 || r_den == 0 {
            return 0.0;
        }
        let p = tp as f64 / p_den as f64;
        let r = tp as f64 / r_den as f64;
        if p + r == 0.0 {
            0.0
        } else {
            2.0 * p * r / (p + r)
        }
    });

    Ok(EvalReport {
        accuracy: correct as f64 / n as f64,
        mean_loss: loss_sum / n as f64,
        f_score,
    })
}

fn argmax(row: impl Iterator<Item = f64>) -> u32 {
    let mut best = f64::NEG_INFINITY;
    let mut best_ix = 0u32;
    for (ix, v) in row.enumerate() {
        if v > best {
            best = v;
            best_ix = ix as u32;
        }
    }
    best_ix
}
