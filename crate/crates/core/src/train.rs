//! Training and evaluation loops for the energy-entropy regularized
//! objective, plus the metrics log.
//!
//! One epoch is one optimizer step on one freshly generated batch whose
//! length is drawn uniformly from the training range. Every eval interval
//! the model is scored on freshly generated full-sequence batches at the
//! configured evaluation lengths and a metrics row is appended.

use crate::adam::{optimizer_step, AdamParams, AdamState, StepOutcome};
use crate::data::{generate_induction_batch, DataError, TaskMode};
use crate::loss::{seq_loss_components, total_loss, LossBreakdown, LossConfig, LossError, LossPositions};
use crate::model::{
    accuracy_counts, forward_batch, forward_logits, looped_forward, ForwardConfig, LoopTrace,
    ModelDims, ModelError, ModelWeights, SequenceBatch,
};
use crate::rng::SeededRng;
use crate::tape::Tape;
use crate::tensor::TensorError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite loss at epoch {epoch}; run aborted")]
    NonFiniteLoss { epoch: usize },
    #[error("sink error: {0}")]
    Sink(#[from] std::io::Error),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Full training configuration. Defaults follow the reference setup:
/// `d = 8`, `T = 25`, lengths 16-64, `lambda_P = 0.1`, `lambda_K = 0.001`,
/// `lambda_S = 0.02`, `q = 1.5`, `eta = 0`, learning rate `1e-3`, weight
/// decay `0.1`, batch 32.
#[derive(Clone, Debug)]
pub struct EERConfig {
    pub lambda_p: f64,
    pub lambda_k: f64,
    pub lambda_s: f64,
    pub q: f64,
    pub eta: f64,
    pub tau: f64,
    pub d: usize,
    pub d_ff: usize,
    pub vocab: usize,
    pub t_steps: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub train_len_min: usize,
    pub train_len_max: usize,
    pub epochs: usize,
    pub seed: u64,
    pub eval_lengths: Vec<usize>,
    pub pe_scale: f64,
    pub loss_positions: LossPositions,
    pub ablation_ce_only: bool,
    /// Causal attention masking inside the loop.
    pub causal_mask: bool,
    pub eval_interval: usize,
    pub eval_samples: usize,
}

impl Default for EERConfig {
    fn default() -> Self {
        EERConfig {
            lambda_p: 0.1,
            lambda_k: 0.001,
            lambda_s: 0.02,
            q: 1.5,
            eta: 0.0,
            tau: 1.0,
            d: 8,
            d_ff: 32,
            vocab: 4,
            t_steps: 25,
            lr: 1e-3,
            weight_decay: 0.1,
            batch_size: 32,
            train_len_min: 16,
            train_len_max: 64,
            epochs: 20_000,
            seed: 1,
            eval_lengths: vec![10, 100, 1000],
            pe_scale: 0.15,
            loss_positions: LossPositions::LastIteration,
            ablation_ce_only: false,
            causal_mask: true,
            eval_interval: 500,
            eval_samples: 32,
        }
    }
}

impl EERConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let fail = |msg: String| Err(TrainError::InvalidConfig(msg));
        if !(self.q > 1.0 && self.q <= 2.0) {
            return fail(format!("q must lie in (1, 2], got {}", self.q));
        }
        if self.lambda_p < 0.0 || self.lambda_k < 0.0 || self.lambda_s < 0.0 {
            return fail("loss weights must be nonnegative".into());
        }
        if !(self.tau > 0.0) {
            return fail(format!("tau must be positive, got {}", self.tau));
        }
        if self.train_len_min > self.train_len_max {
            return fail(format!(
                "train_len_min {} exceeds train_len_max {}",
                self.train_len_min, self.train_len_max
            ));
        }
        if self.train_len_min < 3 {
            return fail("train_len_min must be at least 3".into());
        }
        if self.t_steps == 0 {
            return fail("t_steps must be at least 1".into());
        }
        if self.d == 0 || self.d_ff == 0 {
            return fail("model dimensions must be positive".into());
        }
        if self.vocab < 2 {
            return fail("vocab must be at least 2".into());
        }
        if self.batch_size == 0 {
            return fail("batch_size must be at least 1".into());
        }
        if self.eval_interval == 0 {
            return fail("eval_interval must be at least 1".into());
        }
        if self.eval_samples == 0 {
            return fail("eval_samples must be at least 1".into());
        }
        if self.eval_lengths.is_empty() || self.eval_lengths.iter().any(|&l| l < 3) {
            return fail("eval_lengths must be non-empty with every length >= 3".into());
        }
        Ok(())
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            d: self.d,
            d_ff: self.d_ff,
            vocab: self.vocab,
        }
    }

    pub fn forward_config(&self) -> ForwardConfig {
        ForwardConfig {
            t_steps: self.t_steps,
            temperature: self.tau,
            pe_scale: self.pe_scale,
            causal: self.causal_mask,
            gate: None,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            lambda_p: self.lambda_p,
            lambda_k: self.lambda_k,
            lambda_s: self.lambda_s,
            q: self.q,
            eta: self.eta,
            positions: self.loss_positions,
            ablation_ce_only: self.ablation_ce_only,
        }
    }
}

/// One metrics row; the leading columns mirror the training-log table
/// (epoch, entropy, potential, accuracies, kinetic).
#[derive(Clone, Debug)]
pub struct MetricsRow {
    pub epoch: usize,
    pub entropy: f64,
    pub potential: f64,
    /// One accuracy per configured evaluation length, in order.
    pub accuracies: Vec<f64>,
    pub kinetic: f64,
    /// Per-sequence sum variant: `(1/2B) sum_b sum_l ||Z_T row||`.
    pub kinetic_sum: f64,
    pub task_loss: f64,
    pub total_loss: f64,
}

pub fn metrics_header(eval_lengths: &[usize]) -> String {
    let mut header = String::from("epoch,entropy,potential");
    for len in eval_lengths {
        header.push_str(&format!(",acc_l{len}"));
    }
    header.push_str(",kinetic,kinetic_sum,task_loss,total_loss");
    header
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        let mut line = format!("{},{:.6},{:.6}", self.epoch, self.entropy, self.potential);
        for acc in &self.accuracies {
            line.push_str(&format!(",{acc:.6}"));
        }
        line.push_str(&format!(
            ",{:.6},{:.6},{:.6},{:.6}",
            self.kinetic, self.kinetic_sum, self.task_loss, self.total_loss
        ));
        line
    }
}

/// Receives metrics rows, checkpoints and events as training progresses.
pub trait TrainSink {
    fn on_metrics(&mut self, row: &MetricsRow) -> std::io::Result<()>;
    fn on_checkpoint(&mut self, epoch: usize, weights: &ModelWeights) -> std::io::Result<()>;
    fn on_event(&mut self, message: &str);
}

/// Discards everything.
pub struct NullSink;

impl TrainSink for NullSink {
    fn on_metrics(&mut self, _row: &MetricsRow) -> std::io::Result<()> {
        Ok(())
    }
    fn on_checkpoint(&mut self, _epoch: usize, _weights: &ModelWeights) -> std::io::Result<()> {
        Ok(())
    }
    fn on_event(&mut self, _message: &str) {}
}

pub struct TrainOutcome {
    pub weights: ModelWeights,
    pub history: Vec<MetricsRow>,
}

/// Accuracy on freshly generated full-sequence batches at each length.
pub fn evaluate(
    weights: &ModelWeights,
    cfg: &EERConfig,
    t_eval: usize,
    lengths: &[usize],
    samples: usize,
    salt: u64,
) -> Result<Vec<f64>, TrainError> {
    let fwd = ForwardConfig {
        t_steps: t_eval,
        ..cfg.forward_config()
    };
    let mut accuracies = Vec::with_capacity(lengths.len());
    for &len in lengths {
        let mut rng = SeededRng::derived(
            cfg.seed,
            "eval",
            salt.wrapping_mul(1_000_003).wrapping_add(len as u64),
        );
        let batch = generate_induction_batch(&mut rng, cfg.vocab, samples, len, TaskMode::FullSequence)?;
        let mut hits = 0usize;
        let mut total = 0usize;
        for b in 0..batch.len() {
            let logits = forward_logits(batch.tokens(b), weights, &fwd)?;
            let (h, t) = accuracy_counts(&logits, batch.targets(b))?;
            hits += h;
            total += t;
        }
        if total == 0 {
            return Err(TrainError::Model(ModelError::NoTargets));
        }
        accuracies.push(hits as f64 / total as f64);
    }
    Ok(accuracies)
}

fn measure_metrics(
    weights: &ModelWeights,
    cfg: &EERConfig,
    epoch: usize,
) -> Result<(LossBreakdown, f64), TrainError> {
    let mut rng = SeededRng::derived(cfg.seed, "metrics", epoch as u64);
    let len = rng.range_inclusive(cfg.train_len_min, cfg.train_len_max);
    let batch =
        generate_induction_batch(&mut rng, cfg.vocab, cfg.batch_size, len, TaskMode::FullSequence)?;
    let mut tape = Tape::new();
    let traces = forward_batch(&mut tape, &batch, weights, &cfg.forward_config())?;
    let (_, breakdown) = total_loss(&mut tape, &traces, &batch, &cfg.loss_config())?;
    let kinetic_sum = traces
        .iter()
        .map(half_row_norm_sum)
        .sum::<f64>()
        / traces.len() as f64;
    Ok((breakdown, kinetic_sum))
}

fn half_row_norm_sum(trace: &LoopTrace) -> f64 {
    let z = trace.z_final();
    0.5 * (0..z.rows())
        .map(|i| z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt())
        .sum::<f64>()
}

fn eval_row(
    weights: &ModelWeights,
    cfg: &EERConfig,
    epoch: usize,
) -> Result<MetricsRow, TrainError> {
    let (breakdown, kinetic_sum) = measure_metrics(weights, cfg, epoch)?;
    let accuracies = evaluate(
        weights,
        cfg,
        cfg.t_steps,
        &cfg.eval_lengths,
        cfg.eval_samples,
        epoch as u64,
    )?;
    Ok(MetricsRow {
        epoch,
        entropy: breakdown.entropy,
        potential: breakdown.potential,
        accuracies,
        kinetic: breakdown.kinetic,
        kinetic_sum,
        task_loss: breakdown.task,
        total_loss: breakdown.total,
    })
}

fn accumulate(acc: &mut ModelWeights, tracked: &ModelWeights, grads: &crate::tape::Gradients) {
    let leaves = tracked.arrays();
    for ((_, dst), (_, leaf)) in acc.arrays_mut().into_iter().zip(leaves) {
        if let Some(g) = grads.get(leaf) {
            let data = dst.data_mut();
            for (d, v) in data.iter_mut().zip(g.data()) {
                *d += v;
            }
        }
    }
}

/// Runs the training loop. Metrics rows are emitted at epoch 0, at every
/// eval interval, and at the final epoch; checkpoints accompany each row.
/// A non-finite loss aborts with the last checkpoint retained.
pub fn train(cfg: &EERConfig, sink: &mut dyn TrainSink) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    let mut init_rng = SeededRng::derived(cfg.seed, "init", 0);
    let mut data_rng = SeededRng::derived(cfg.seed, "data", 0);
    let mut weights = ModelWeights::init(&cfg.dims(), &mut init_rng);
    let mut history = Vec::new();

    if cfg.epochs == 0 {
        return Ok(TrainOutcome { weights, history });
    }

    let mut adam = AdamState::new(&cfg.dims());
    let adam_params = AdamParams::new(cfg.lr, cfg.weight_decay);
    let loss_cfg = cfg.loss_config();
    let fwd = cfg.forward_config();
    let (lambda_p, lambda_k, lambda_s) = loss_cfg.lambdas();

    let row = eval_row(&weights, cfg, 0)?;
    sink.on_metrics(&row)?;
    sink.on_checkpoint(0, &weights)?;
    history.push(row);

    for epoch in 1..=cfg.epochs {
        let len = data_rng.range_inclusive(cfg.train_len_min, cfg.train_len_max);
        let batch = generate_induction_batch(
            &mut data_rng,
            cfg.vocab,
            cfg.batch_size,
            len,
            TaskMode::FullSequence,
        )?;
        let valid = batch.valid_targets();
        if valid == 0 {
            sink.on_event(&format!("epoch {epoch}: batch had no targets, skipped"));
            continue;
        }
        let b = batch.len() as f64;

        let mut grad_acc = ModelWeights::zeros(&cfg.dims());
        let mut step_loss = 0.0;
        let mut backward_failed = false;
        for seq in 0..batch.len() {
            let mut tape = Tape::new();
            let tracked = weights.tracked(&mut tape);
            let trace = looped_forward(&mut tape, batch.tokens(seq), &tracked, &fwd)?;
            let parts = seq_loss_components(&mut tape, &trace, batch.targets(seq), &loss_cfg)?;
            let mut scalar = tape.affine(&parts.ce_sum, 1.0 / valid as f64, 0.0)?;
            for (lambda, node) in [
                (lambda_p, &parts.potential),
                (lambda_k, &parts.kinetic),
                (lambda_s, &parts.entropy),
            ] {
                if lambda != 0.0 {
                    let weighted = tape.affine(node, lambda / b, 0.0)?;
                    scalar = tape.add(&scalar, &weighted)?;
                }
            }
            step_loss += scalar.item()?;
            match tape.backward(&scalar) {
                Ok(grads) => accumulate(&mut grad_acc, &tracked, &grads),
                Err(TensorError::NonFinite { .. }) => {
                    backward_failed = true;
                    break;
                }
                Err(e) => return Err(e.into()),
            }
        }

        if !step_loss.is_finite() {
            sink.on_event(&format!("epoch {epoch}: non-finite loss, aborting"));
            sink.on_checkpoint(epoch, &weights)?;
            return Err(TrainError::NonFiniteLoss { epoch });
        }
        if backward_failed {
            sink.on_event(&format!(
                "epoch {epoch}: non-finite gradients, step rejected"
            ));
            continue;
        }
        match optimizer_step(&mut weights, &grad_acc, &mut adam, &adam_params) {
            StepOutcome::Applied => {}
            StepOutcome::RejectedNonFinite => {
                sink.on_event(&format!(
                    "epoch {epoch}: non-finite gradients, step rejected"
                ));
                continue;
            }
        }

        if epoch % cfg.eval_interval == 0 || epoch == cfg.epochs {
            let row = eval_row(&weights, cfg, epoch)?;
            sink.on_metrics(&row)?;
            sink.on_checkpoint(epoch, &weights)?;
            history.push(row);
        }
    }

    Ok(TrainOutcome { weights, history })
}

/// Convenience: the full objective on a freshly generated batch, without
/// touching any training state. Used for gradient checks and landscape
/// slices.
pub fn loss_on_batch(
    weights: &ModelWeights,
    batch: &SequenceBatch,
    cfg: &EERConfig,
) -> Result<LossBreakdown, TrainError> {
    let mut tape = Tape::new();
    let traces = forward_batch(&mut tape, batch, weights, &cfg.forward_config())?;
    let (_, breakdown) = total_loss(&mut tape, &traces, batch, &cfg.loss_config())?;
    Ok(breakdown)
}

/// Fixed-shape CSV for a metrics history: header plus one line per row.
pub fn metrics_csv(history: &[MetricsRow], eval_lengths: &[usize]) -> String {
    let mut out = metrics_header(eval_lengths);
    out.push('\n');
    for row in history {
        out.push_str(&row.csv_line());
        out.push('\n');
    }
    out
}
