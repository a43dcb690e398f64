//! The four-term training objective
//! `L_Total = L_Task + lambda_P L_Potential + lambda_K L_Kinetic + lambda_S L_Entropy`.
//!
//! Task: mean cross-entropy over non-sentinel positions. Kinetic: half the
//! mean Euclidean row displacement `Z_T - Z_0`. Potential: mean over query
//! rows of `-log(max_j p_j)`, deepening the well of the most attended key.
//! Entropy: absolute deviation of the mean row Tsallis entropy from the
//! floor `eta`. Potential and entropy default to the final iteration's
//! attention map; an all-iterations mean is available.

use crate::bounds::AttentionMap;
use crate::model::{LoopTrace, ModelError, SequenceBatch};
use crate::tape::Tape;
use crate::tensor::{Tensor, TensorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum LossError {
    #[error("no valid target positions in the batch")]
    NoValidTargets,
    #[error("loss needs at least one trace")]
    EmptyTraceSet,
    #[error("q must lie in (1, 2], got {0}")]
    QOutOfRange(f64),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Which attention maps the potential and entropy terms average over.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossPositions {
    LastIteration,
    AllIterations,
}

#[derive(Clone, Debug)]
pub struct LossConfig {
    pub lambda_p: f64,
    pub lambda_k: f64,
    pub lambda_s: f64,
    pub q: f64,
    pub eta: f64,
    pub positions: LossPositions,
    pub ablation_ce_only: bool,
}

impl LossConfig {
    /// Loss weights with the cross-entropy ablation applied.
    pub fn lambdas(&self) -> (f64, f64, f64) {
        if self.ablation_ce_only {
            (0.0, 0.0, 0.0)
        } else {
            (self.lambda_p, self.lambda_k, self.lambda_s)
        }
    }
}

/// Scalar components of one evaluation of the objective.
#[derive(Clone, Copy, Debug)]
pub struct LossBreakdown {
    pub task: f64,
    pub kinetic: f64,
    pub potential: f64,
    pub entropy: f64,
    pub total: f64,
}

impl LossBreakdown {
    /// Recomputes the weighted sum from the stored components.
    pub fn recompute_total(&self, cfg: &LossConfig) -> f64 {
        let (lp, lk, ls) = cfg.lambdas();
        self.task + lp * self.potential + lk * self.kinetic + ls * self.entropy
    }
}

fn mean_scalars(tape: &mut Tape, nodes: &[Tensor]) -> Result<Tensor, LossError> {
    let mut iter = nodes.iter();
    let first = iter.next().ok_or(LossError::EmptyTraceSet)?;
    let mut acc = first.clone();
    for node in iter {
        acc = tape.add(&acc, node)?;
    }
    Ok(tape.affine(&acc, 1.0 / nodes.len() as f64, 0.0)?)
}

fn selected_maps(trace: &LoopTrace, positions: LossPositions) -> Vec<&AttentionMap> {
    match positions {
        LossPositions::LastIteration => vec![trace.final_map()],
        LossPositions::AllIterations => trace.attn_per_iter.iter().collect(),
    }
}

/// Mean cross-entropy of the final logits against the non-sentinel
/// targets, over the whole batch.
pub fn task_loss(
    tape: &mut Tape,
    traces: &[LoopTrace],
    batch: &SequenceBatch,
) -> Result<Tensor, LossError> {
    if traces.is_empty() {
        return Err(LossError::EmptyTraceSet);
    }
    let valid = batch.valid_targets();
    if valid == 0 {
        return Err(LossError::NoValidTargets);
    }
    let mut sums = Vec::with_capacity(traces.len());
    for (b, trace) in traces.iter().enumerate() {
        sums.push(tape.cross_entropy_rows(&trace.final_logits, batch.targets(b))?);
    }
    let mut acc = sums[0].clone();
    for s in &sums[1..] {
        acc = tape.add(&acc, s)?;
    }
    Ok(tape.affine(&acc, 1.0 / valid as f64, 0.0)?)
}

/// Kinetic penalty for one trace: `(1 / 2L) sum_l ||Z_T,l - Z_0,l||_2`.
pub fn kinetic_loss_seq(tape: &mut Tape, trace: &LoopTrace) -> Result<Tensor, LossError> {
    let z0 = &trace.z_per_iter[0];
    let displacement = tape.sub(trace.z_final(), z0)?;
    let row_norm_sum = tape.sum_row_norms(&displacement)?;
    let len = trace.z_final().rows() as f64;
    Ok(tape.affine(&row_norm_sum, 1.0 / (2.0 * len), 0.0)?)
}

/// Batch kinetic penalty: mean of the per-sequence values.
pub fn kinetic_loss(tape: &mut Tape, traces: &[LoopTrace]) -> Result<Tensor, LossError> {
    let per_seq: Vec<Tensor> = traces
        .iter()
        .map(|t| kinetic_loss_seq(tape, t))
        .collect::<Result<_, _>>()?;
    mean_scalars(tape, &per_seq)
}

/// Potential penalty over a set of attention maps: the mean over maps of
/// the per-row mean of `-log(max_j p_j)`.
pub fn potential_loss(tape: &mut Tape, maps: &[&AttentionMap]) -> Result<Tensor, LossError> {
    let per_map: Vec<Tensor> = maps
        .iter()
        .map(|m| tape.potential_mean_rows(m.tensor()))
        .collect::<Result<_, _>>()?;
    mean_scalars(tape, &per_map)
}

/// Entropy penalty over a set of attention maps: the absolute deviation of
/// the mean row Tsallis entropy from the floor `eta`.
pub fn entropy_loss(
    tape: &mut Tape,
    maps: &[&AttentionMap],
    q: f64,
    eta: f64,
) -> Result<Tensor, LossError> {
    if !(q > 1.0 && q <= 2.0) {
        return Err(LossError::QOutOfRange(q));
    }
    let per_map: Vec<Tensor> = maps
        .iter()
        .map(|m| tape.tsallis_mean_rows(m.tensor(), q))
        .collect::<Result<_, _>>()?;
    let mean = mean_scalars(tape, &per_map)?;
    Ok(tape.abs_dev(&mean, eta)?)
}

/// Per-sequence pieces of the objective, before batch weighting.
pub struct SeqLossNodes {
    /// Summed (not yet normalized) cross-entropy over the valid positions.
    pub ce_sum: Tensor,
    pub kinetic: Tensor,
    pub potential: Tensor,
    pub entropy: Tensor,
}

pub fn seq_loss_components(
    tape: &mut Tape,
    trace: &LoopTrace,
    targets: &[Option<usize>],
    cfg: &LossConfig,
) -> Result<SeqLossNodes, LossError> {
    let ce_sum = tape.cross_entropy_rows(&trace.final_logits, targets)?;
    let kinetic = kinetic_loss_seq(tape, trace)?;
    let maps = selected_maps(trace, cfg.positions);
    let potential = potential_loss(tape, &maps)?;
    let entropy = entropy_loss(tape, &maps, cfg.q, cfg.eta)?;
    Ok(SeqLossNodes {
        ce_sum,
        kinetic,
        potential,
        entropy,
    })
}

/// Builds the full objective over a batch of traces. Returns the loss node
/// (differentiable when the traces were recorded with tracked weights) and
/// the scalar breakdown.
pub fn total_loss(
    tape: &mut Tape,
    traces: &[LoopTrace],
    batch: &SequenceBatch,
    cfg: &LossConfig,
) -> Result<(Tensor, LossBreakdown), LossError> {
    if traces.is_empty() {
        return Err(LossError::EmptyTraceSet);
    }
    if traces.len() != batch.len() {
        return Err(LossError::Model(ModelError::TraceBatchMismatch {
            reason: format!("{} traces vs {} sequences", traces.len(), batch.len()),
        }));
    }
    let valid = batch.valid_targets();
    if valid == 0 {
        return Err(LossError::NoValidTargets);
    }
    let b = traces.len() as f64;
    let (lp, lk, ls) = cfg.lambdas();

    let mut task_acc: Option<Tensor> = None;
    let mut kin_acc: Option<Tensor> = None;
    let mut pot_acc: Option<Tensor> = None;
    let mut ent_acc: Option<Tensor> = None;
    let add_to = |tape: &mut Tape, acc: &mut Option<Tensor>, node: &Tensor| {
        *acc = Some(match acc.take() {
            None => node.clone(),
            Some(a) => tape.add(&a, node).expect("scalar accumulation"),
        });
    };
    for (idx, trace) in traces.iter().enumerate() {
        let parts = seq_loss_components(tape, trace, batch.targets(idx), cfg)?;
        add_to(tape, &mut task_acc, &parts.ce_sum);
        add_to(tape, &mut kin_acc, &parts.kinetic);
        add_to(tape, &mut pot_acc, &parts.potential);
        add_to(tape, &mut ent_acc, &parts.entropy);
    }
    let task = tape.affine(&task_acc.unwrap(), 1.0 / valid as f64, 0.0)?;
    let kinetic = tape.affine(&kin_acc.unwrap(), 1.0 / b, 0.0)?;
    let potential = tape.affine(&pot_acc.unwrap(), 1.0 / b, 0.0)?;
    let entropy = tape.affine(&ent_acc.unwrap(), 1.0 / b, 0.0)?;

    let mut total = task.clone();
    for (lambda, node) in [(lp, &potential), (lk, &kinetic), (ls, &entropy)] {
        if lambda != 0.0 {
            let weighted = tape.affine(node, lambda, 0.0)?;
            total = tape.add(&total, &weighted)?;
        }
    }

    let breakdown = LossBreakdown {
        task: task.item()?,
        kinetic: kinetic.item()?,
        potential: potential.item()?,
        entropy: entropy.item()?,
        total: total.item()?,
    };
    Ok((total, breakdown))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bounds::AttentionMap;
    use crate::tensor::Tensor;

    fn trace_with(final_logits: Tensor, z_final: Tensor, map: Tensor) -> LoopTrace {
        let rows = z_final.rows();
        LoopTrace {
            z_per_iter: vec![Tensor::zeros(rows, z_final.cols()), z_final],
            attn_per_iter: vec![AttentionMap::new(map).unwrap()],
            alphas: vec![1.0],
            final_logits,
        }
    }

    #[test]
    fn task_loss_perfect_logits_is_zero() {
        let batch = SequenceBatch::new(
            vec![vec![0, 1, 2, 3]],
            vec![vec![None, Some(1), Some(0), Some(3)]],
            4,
        )
        .unwrap();
        // Extremely confident correct logits drive the loss to ~0.
        let logits = Tensor::from_fn(4, 4, |i, j| {
            let tgt = [0usize, 1, 0, 3][i];
            if j == tgt {
                60.0
            } else {
                0.0
            }
        });
        let trace = trace_with(logits, Tensor::zeros(4, 8), Tensor::from_fn(4, 4, |_, _| 0.25));
        let mut tape = Tape::new();
        let loss = task_loss(&mut tape, &[trace], &batch).unwrap();
        assert!(loss.item().unwrap() < 1e-12);
    }

    #[test]
    fn task_loss_uniform_logits_is_ln_vocab() {
        let batch = SequenceBatch::new(
            vec![vec![0, 1]],
            vec![vec![Some(2), Some(3)]],
            4,
        )
        .unwrap();
        let trace = trace_with(
            Tensor::zeros(2, 4),
            Tensor::zeros(2, 8),
            Tensor::from_fn(2, 2, |_, _| 0.5),
        );
        let mut tape = Tape::new();
        let loss = task_loss(&mut tape, &[trace], &batch).unwrap();
        assert!((loss.item().unwrap() - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn kinetic_unit_rows_give_half() {
        // Four rows of norm one: (1 / (2 * 4)) * 4 = 0.5.
        let z = Tensor::from_fn(4, 8, |_, j| if j == 0 { 1.0 } else { 0.0 });
        let trace = trace_with(Tensor::zeros(4, 4), z, Tensor::from_fn(4, 4, |_, _| 0.25));
        let mut tape = Tape::new();
        let k = kinetic_loss_seq(&mut tape, &trace).unwrap();
        assert!((k.item().unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn kinetic_zero_state_is_zero() {
        let trace = trace_with(
            Tensor::zeros(3, 4),
            Tensor::zeros(3, 8),
            Tensor::from_fn(3, 3, |_, _| 1.0 / 3.0),
        );
        let mut tape = Tape::new();
        let k = kinetic_loss_seq(&mut tape, &trace).unwrap();
        assert_eq!(k.item().unwrap(), 0.0);
    }

    #[test]
    fn potential_one_hot_rows_is_zero() {
        let map = AttentionMap::new(Tensor::identity(4)).unwrap();
        let mut tape = Tape::new();
        let p = potential_loss(&mut tape, &[&map]).unwrap();
        assert_eq!(p.item().unwrap(), 0.0);
    }

    #[test]
    fn potential_uniform_rows_is_ln_n() {
        let map = AttentionMap::new(Tensor::from_fn(4, 4, |_, _| 0.25)).unwrap();
        let mut tape = Tape::new();
        let p = potential_loss(&mut tape, &[&map]).unwrap();
        assert!((p.item().unwrap() - 4.0f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn entropy_uniform_rows_q_three_halves_is_one() {
        // Mean Tsallis entropy of uniform rows over 4 outcomes at q = 1.5 is
        // exactly 1; with eta = 0 the loss is 1.
        let map = AttentionMap::new(Tensor::from_fn(4, 4, |_, _| 0.25)).unwrap();
        let mut tape = Tape::new();
        let e = entropy_loss(&mut tape, &[&map], 1.5, 0.0).unwrap();
        assert!((e.item().unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn entropy_floor_at_measured_mean_is_zero() {
        let map = AttentionMap::new(Tensor::from_fn(4, 4, |_, _| 0.25)).unwrap();
        let mut tape = Tape::new();
        let mean = tape
            .tsallis_mean_rows(map.tensor(), 1.5)
            .unwrap()
            .item()
            .unwrap();
        let e = entropy_loss(&mut tape, &[&map], 1.5, mean).unwrap();
        assert_eq!(e.item().unwrap(), 0.0);
    }

    #[test]
    fn entropy_one_hot_rows_with_zero_floor_is_zero() {
        let map = AttentionMap::new(Tensor::identity(4)).unwrap();
        let mut tape = Tape::new();
        let e = entropy_loss(&mut tape, &[&map], 1.5, 0.0).unwrap();
        assert_eq!(e.item().unwrap(), 0.0);
    }

    #[test]
    fn entropy_rejects_bad_q() {
        let map = AttentionMap::new(Tensor::identity(2)).unwrap();
        let mut tape = Tape::new();
        assert!(matches!(
            entropy_loss(&mut tape, &[&map], 1.0, 0.0),
            Err(LossError::QOutOfRange(_))
        ));
    }

    #[test]
    fn total_loss_table_arithmetic() {
        // task = 0, kinetic = 2, potential = 3, entropy = 5 with the default
        // weights: total = 0 + 0.1*3 + 0.001*2 + 0.02*5 = 0.402.
        let breakdown = LossBreakdown {
            task: 0.0,
            kinetic: 2.0,
            potential: 3.0,
            entropy: 5.0,
            total: 0.0,
        };
        let cfg = LossConfig {
            lambda_p: 0.1,
            lambda_k: 0.001,
            lambda_s: 0.02,
            q: 1.5,
            eta: 0.0,
            positions: LossPositions::LastIteration,
            ablation_ce_only: false,
        };
        assert!((breakdown.recompute_total(&cfg) - 0.402).abs() < 1e-12);
    }

    #[test]
    fn ablation_zeroes_all_lambdas() {
        let cfg = LossConfig {
            lambda_p: 0.1,
            lambda_k: 0.001,
            lambda_s: 0.02,
            q: 1.5,
            eta: 0.0,
            positions: LossPositions::LastIteration,
            ablation_ce_only: true,
        };
        assert_eq!(cfg.lambdas(), (0.0, 0.0, 0.0));
    }
}
