//! The single-head looped transformer: embeddings with scaled sinusoidal
//! positions, the attention-driven transition block, the residual loop
//! `Z_{t+1} = Z_t + F(Z_t + X)` with `Z_0 = 0`, and the readout.
//!
//! Forward passes run on a [`Tape`]; with tracked weights the graph is
//! recorded for backpropagation, with plain weights the same code computes
//! values only. A separate attention-only iteration
//! (`gated_map_iteration`) exposes the residual retrieval map that the
//! contraction certificate bounds.

use crate::bounds::{entropy_gate, tsallis_raw, AttentionMap, BoundsError, GateParams};
use crate::rng::SeededRng;
use crate::tape::Tape;
use crate::tensor::{Tensor, TensorError};
use thiserror::Error;

pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("token {token} out of range for vocabulary {vocab}")]
    TokenOutOfRange { token: usize, vocab: usize },
    #[error("loop requires at least one iteration")]
    ZeroSteps,
    #[error("trace does not match batch: {reason}")]
    TraceBatchMismatch { reason: String },
    #[error("no targets: every target position is the sentinel")]
    NoTargets,
    #[error("sequence must be non-empty")]
    EmptySequence,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Bounds(#[from] BoundsError),
}

/// Model dimensions: latent width, MLP hidden width, vocabulary size.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelDims {
    pub d: usize,
    pub d_ff: usize,
    pub vocab: usize,
}

/// All trainable parameters of the model.
#[derive(Clone, Debug)]
pub struct ModelWeights {
    pub embed: Tensor,
    pub w_q: Tensor,
    pub w_k: Tensor,
    pub w_v: Tensor,
    pub mlp_in: Tensor,
    pub mlp_b1: Tensor,
    pub mlp_out: Tensor,
    pub mlp_b2: Tensor,
    pub norm_gain: Tensor,
    pub norm_bias: Tensor,
    pub readout: Tensor,
}

pub const WEIGHT_NAMES: [&str; 11] = [
    "embed", "w_q", "w_k", "w_v", "mlp_in", "mlp_b1", "mlp_out", "mlp_b2", "norm_gain",
    "norm_bias", "readout",
];

impl ModelWeights {
    /// Projection matrices are centered-uniform at the inverse square root
    /// of their fan-in; embeddings are standard normal (token identity must
    /// dominate the attention logits for the retrieval circuit to form);
    /// gains start at one, biases at zero.
    pub fn init(dims: &ModelDims, rng: &mut SeededRng) -> Self {
        let ModelDims { d, d_ff, vocab } = *dims;
        let uniform = |rows: usize, cols: usize, scale: f64, rng: &mut SeededRng| {
            Tensor::from_fn(rows, cols, |_, _| rng.uniform(-scale, scale))
        };
        let sd = 1.0 / (d as f64).sqrt();
        let sff = 1.0 / (d_ff as f64).sqrt();
        let embed = Tensor::from_fn(vocab, d, |_, _| rng.normal());
        ModelWeights {
            embed,
            w_q: uniform(d, d, sd, rng),
            w_k: uniform(d, d, sd, rng),
            w_v: uniform(d, d, sd, rng),
            mlp_in: uniform(d, d_ff, sd, rng),
            mlp_b1: Tensor::zeros(1, d_ff),
            mlp_out: uniform(d_ff, d, sff, rng),
            mlp_b2: Tensor::zeros(1, d),
            norm_gain: Tensor::from_fn(1, d, |_, _| 1.0),
            norm_bias: Tensor::zeros(1, d),
            readout: uniform(d, vocab, sd, rng),
        }
    }

    pub fn zeros(dims: &ModelDims) -> Self {
        let ModelDims { d, d_ff, vocab } = *dims;
        ModelWeights {
            embed: Tensor::zeros(vocab, d),
            w_q: Tensor::zeros(d, d),
            w_k: Tensor::zeros(d, d),
            w_v: Tensor::zeros(d, d),
            mlp_in: Tensor::zeros(d, d_ff),
            mlp_b1: Tensor::zeros(1, d_ff),
            mlp_out: Tensor::zeros(d_ff, d),
            mlp_b2: Tensor::zeros(1, d),
            norm_gain: Tensor::zeros(1, d),
            norm_bias: Tensor::zeros(1, d),
            readout: Tensor::zeros(d, vocab),
        }
    }

    pub fn dims(&self) -> ModelDims {
        ModelDims {
            d: self.w_q.rows(),
            d_ff: self.mlp_in.cols(),
            vocab: self.embed.rows(),
        }
    }

    pub fn arrays(&self) -> [(&'static str, &Tensor); 11] {
        [
            ("embed", &self.embed),
            ("w_q", &self.w_q),
            ("w_k", &self.w_k),
            ("w_v", &self.w_v),
            ("mlp_in", &self.mlp_in),
            ("mlp_b1", &self.mlp_b1),
            ("mlp_out", &self.mlp_out),
            ("mlp_b2", &self.mlp_b2),
            ("norm_gain", &self.norm_gain),
            ("norm_bias", &self.norm_bias),
            ("readout", &self.readout),
        ]
    }

    pub fn arrays_mut(&mut self) -> [(&'static str, &mut Tensor); 11] {
        [
            ("embed", &mut self.embed),
            ("w_q", &mut self.w_q),
            ("w_k", &mut self.w_k),
            ("w_v", &mut self.w_v),
            ("mlp_in", &mut self.mlp_in),
            ("mlp_b1", &mut self.mlp_b1),
            ("mlp_out", &mut self.mlp_out),
            ("mlp_b2", &mut self.mlp_b2),
            ("norm_gain", &mut self.norm_gain),
            ("norm_bias", &mut self.norm_bias),
            ("readout", &mut self.readout),
        ]
    }

    /// Registers every parameter as a gradient-tracked leaf of `tape`.
    pub fn tracked(&self, tape: &mut Tape) -> ModelWeights {
        ModelWeights {
            embed: tape.leaf(&self.embed),
            w_q: tape.leaf(&self.w_q),
            w_k: tape.leaf(&self.w_k),
            w_v: tape.leaf(&self.w_v),
            mlp_in: tape.leaf(&self.mlp_in),
            mlp_b1: tape.leaf(&self.mlp_b1),
            mlp_out: tape.leaf(&self.mlp_out),
            mlp_b2: tape.leaf(&self.mlp_b2),
            norm_gain: tape.leaf(&self.norm_gain),
            norm_bias: tape.leaf(&self.norm_bias),
            readout: tape.leaf(&self.readout),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.arrays().iter().all(|(_, t)| t.is_finite())
    }

    /// Adds `factor * other` into every parameter, elementwise. Used for
    /// gradient accumulation and landscape displacements.
    pub fn add_scaled(&mut self, other: &ModelWeights, factor: f64) {
        let others = other.arrays();
        for ((_, dst), (_, src)) in self.arrays_mut().into_iter().zip(others) {
            debug_assert_eq!(dst.shape(), src.shape());
            let data = dst.data_mut();
            for (d, s) in data.iter_mut().zip(src.data()) {
                *d += factor * s;
            }
        }
    }
}

/// A batch of token sequences with per-position targets; `None` marks a
/// position without a target.
#[derive(Clone, Debug)]
pub struct SequenceBatch {
    tokens: Vec<Vec<usize>>,
    targets: Vec<Vec<Option<usize>>>,
    vocab: usize,
}

impl SequenceBatch {
    pub fn new(
        tokens: Vec<Vec<usize>>,
        targets: Vec<Vec<Option<usize>>>,
        vocab: usize,
    ) -> Result<Self, ModelError> {
        if tokens.len() != targets.len() {
            return Err(ModelError::TraceBatchMismatch {
                reason: format!(
                    "{} token rows vs {} target rows",
                    tokens.len(),
                    targets.len()
                ),
            });
        }
        for (toks, tgts) in tokens.iter().zip(&targets) {
            if toks.len() != tgts.len() {
                return Err(ModelError::TraceBatchMismatch {
                    reason: "ragged tokens vs targets".to_string(),
                });
            }
            for &t in toks {
                if t >= vocab {
                    return Err(ModelError::TokenOutOfRange { token: t, vocab });
                }
            }
            for tgt in tgts.iter().flatten() {
                if *tgt >= vocab {
                    return Err(ModelError::TokenOutOfRange {
                        token: *tgt,
                        vocab,
                    });
                }
            }
        }
        Ok(SequenceBatch {
            tokens,
            targets,
            vocab,
        })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    pub fn tokens(&self, seq: usize) -> &[usize] {
        &self.tokens[seq]
    }

    pub fn targets(&self, seq: usize) -> &[Option<usize>] {
        &self.targets[seq]
    }

    pub fn seq_len(&self, seq: usize) -> usize {
        self.tokens[seq].len()
    }

    /// Number of non-sentinel target positions across the whole batch.
    pub fn valid_targets(&self) -> usize {
        self.targets
            .iter()
            .map(|row| row.iter().flatten().count())
            .sum()
    }
}

/// Forward-pass settings shared by training and evaluation.
#[derive(Clone, Debug)]
pub struct ForwardConfig {
    pub t_steps: usize,
    pub temperature: f64,
    pub pe_scale: f64,
    /// Restrict attention to positions at or before the query.
    pub causal: bool,
    pub gate: Option<GateSpec>,
}

/// Entropy gate attached to the residual update, with the Tsallis index
/// used to measure the map's entropy.
#[derive(Clone, Copy, Debug)]
pub struct GateSpec {
    pub params: GateParams,
    pub q: f64,
}

impl GateSpec {
    pub fn new(params: GateParams, q: f64) -> Result<Self, BoundsError> {
        if !(q > 1.0 && q <= 2.0) {
            return Err(BoundsError::QOutOfRange(q));
        }
        Ok(GateSpec { params, q })
    }
}

/// Everything recorded across one looped forward pass of one sequence.
#[derive(Debug)]
pub struct LoopTrace {
    /// `T + 1` latent states; the first is the zero state.
    pub z_per_iter: Vec<Tensor>,
    /// One row-stochastic attention map per iteration.
    pub attn_per_iter: Vec<AttentionMap>,
    /// Applied residual step scale per iteration (all ones when ungated).
    pub alphas: Vec<f64>,
    pub final_logits: Tensor,
}

impl LoopTrace {
    pub fn t_steps(&self) -> usize {
        self.attn_per_iter.len()
    }

    pub fn z_final(&self) -> &Tensor {
        self.z_per_iter.last().expect("trace has at least Z_0")
    }

    pub fn final_map(&self) -> &AttentionMap {
        self.attn_per_iter.last().expect("trace has at least one map")
    }
}

/// Standard interleaved sinusoidal position table: even columns carry
/// `sin(pos / 10000^(2j/d))`, odd columns the matching cosine.
pub fn positional_encoding(len: usize, d: usize) -> Tensor {
    Tensor::from_fn(len, d, |pos, k| {
        let j = (k / 2) as f64;
        let denom = 10000f64.powf(2.0 * j / d as f64);
        let angle = pos as f64 / denom;
        if k % 2 == 0 {
            angle.sin()
        } else {
            angle.cos()
        }
    })
}

/// Token embeddings plus scaled sinusoidal positions,
/// `x_i = embed[token_i] + pe_scale * sinusoidal(i)`.
pub fn embed_sequence(
    tape: &mut Tape,
    tokens: &[usize],
    weights: &ModelWeights,
    pe_scale: f64,
) -> Result<Tensor, ModelError> {
    if tokens.is_empty() {
        return Err(ModelError::EmptySequence);
    }
    let vocab = weights.embed.rows();
    for &t in tokens {
        if t >= vocab {
            return Err(ModelError::TokenOutOfRange { token: t, vocab });
        }
    }
    let gathered = tape.gather_rows(&weights.embed, tokens)?;
    let pe = positional_encoding(tokens.len(), weights.embed.cols()).scale(pe_scale);
    Ok(tape.add(&gathered, &pe)?)
}

/// Additive logit that zeroes a masked position after the softmax.
const CAUSAL_MASK_LOGIT: f64 = -1e30;

/// Scaled dot-product attention over `h`:
/// `logits = h W_Q (h W_K)^T / sqrt(d)`, row-softmax at `temperature`,
/// output `map . (h W_V)`.
pub fn attention_operator(
    tape: &mut Tape,
    h: &Tensor,
    weights: &ModelWeights,
    temperature: f64,
) -> Result<(Tensor, AttentionMap), ModelError> {
    attention_with_mask(tape, h, weights, temperature, false)
}

/// Attention with an optional causal mask: position `i` may only attend to
/// positions `j <= i`.
pub fn attention_with_mask(
    tape: &mut Tape,
    h: &Tensor,
    weights: &ModelWeights,
    temperature: f64,
    causal: bool,
) -> Result<(Tensor, AttentionMap), ModelError> {
    let mask = if causal {
        Some(causal_mask(h.rows()))
    } else {
        None
    };
    attention_inner(tape, h, weights, temperature, mask.as_ref())
}

/// Additive mask with `CAUSAL_MASK_LOGIT` above the diagonal.
pub fn causal_mask(n: usize) -> Tensor {
    Tensor::from_fn(n, n, |i, j| if j > i { CAUSAL_MASK_LOGIT } else { 0.0 })
}

fn attention_inner(
    tape: &mut Tape,
    h: &Tensor,
    weights: &ModelWeights,
    temperature: f64,
    mask: Option<&Tensor>,
) -> Result<(Tensor, AttentionMap), ModelError> {
    let d = weights.w_q.rows() as f64;
    let q = tape.matmul(h, &weights.w_q)?;
    let k = tape.matmul(h, &weights.w_k)?;
    let v = tape.matmul(h, &weights.w_v)?;
    let kt = tape.transpose(&k)?;
    let mut scores = tape.matmul(&q, &kt)?;
    if let Some(mask) = mask {
        scores = tape.add(&scores, mask)?;
    }
    // softmax(scores / (tau sqrt(d))), with the 1/sqrt(d) folded into the
    // softmax temperature to avoid materializing a scaled copy.
    let map = AttentionMap::new(tape.row_softmax(&scores, temperature * d.sqrt())?)?;
    let out = tape.matmul(map.tensor(), &v)?;
    Ok((out, map))
}

/// One loop block: attention, an MLP with an inner residual, then layer
/// normalization. Returns the residual increment added to `Z`.
pub fn loop_block(
    tape: &mut Tape,
    h: &Tensor,
    weights: &ModelWeights,
    temperature: f64,
) -> Result<(Tensor, AttentionMap), ModelError> {
    loop_block_masked(tape, h, weights, temperature, false)
}

pub fn loop_block_masked(
    tape: &mut Tape,
    h: &Tensor,
    weights: &ModelWeights,
    temperature: f64,
    causal: bool,
) -> Result<(Tensor, AttentionMap), ModelError> {
    let mask = if causal {
        Some(causal_mask(h.rows()))
    } else {
        None
    };
    loop_block_inner(tape, h, weights, temperature, mask.as_ref())
}

fn loop_block_inner(
    tape: &mut Tape,
    h: &Tensor,
    weights: &ModelWeights,
    temperature: f64,
    mask: Option<&Tensor>,
) -> Result<(Tensor, AttentionMap), ModelError> {
    let (attn_out, map) = attention_inner(tape, h, weights, temperature, mask)?;
    let m1 = tape.matmul(&attn_out, &weights.mlp_in)?;
    let m1 = tape.add_bias_row(&m1, &weights.mlp_b1)?;
    let hidden = tape.gelu(&m1)?;
    let m2 = tape.matmul(&hidden, &weights.mlp_out)?;
    let m2 = tape.add_bias_row(&m2, &weights.mlp_b2)?;
    let mixed = tape.add(&m2, &attn_out)?;
    let delta =
        tape.layer_norm_rows(&mixed, &weights.norm_gain, &weights.norm_bias, LAYER_NORM_EPS)?;
    Ok((delta, map))
}

fn gate_alpha(
    tape: &mut Tape,
    map: &AttentionMap,
    gate: &GateSpec,
) -> Result<Tensor, ModelError> {
    let mean_entropy = tape.tsallis_mean_rows(map.tensor(), gate.q)?;
    let ramp = tape.affine(&mean_entropy, 1.0 / gate.params.saturation_entropy, 0.0)?;
    let clamped = tape.clamp_max_one(&ramp)?;
    Ok(tape.affine(
        &clamped,
        1.0 - gate.params.alpha_min,
        gate.params.alpha_min,
    )?)
}

fn run_loop(
    tape: &mut Tape,
    tokens: &[usize],
    weights: &ModelWeights,
    cfg: &ForwardConfig,
    mut visit: impl FnMut(&Tensor, AttentionMap, f64),
) -> Result<(Tensor, Tensor), ModelError> {
    if cfg.t_steps == 0 {
        return Err(ModelError::ZeroSteps);
    }
    let x = embed_sequence(tape, tokens, weights, cfg.pe_scale)?;
    let mask = if cfg.causal {
        Some(causal_mask(tokens.len()))
    } else {
        None
    };
    let mut z = Tensor::zeros(tokens.len(), weights.embed.cols());
    for _ in 0..cfg.t_steps {
        let h = tape.add(&z, &x)?;
        let (delta, map) = loop_block_inner(tape, &h, weights, cfg.temperature, mask.as_ref())?;
        let (z_next, alpha) = match &cfg.gate {
            None => (tape.add(&z, &delta)?, 1.0),
            Some(gate) => {
                let alpha = gate_alpha(tape, &map, gate)?;
                let scaled = tape.mul_scalar(&alpha, &delta)?;
                (tape.add(&z, &scaled)?, alpha.item()?)
            }
        };
        visit(&z_next, map, alpha);
        z = z_next;
    }
    let logits = tape.matmul(&z, &weights.readout)?;
    Ok((z, logits))
}

/// Runs the residual loop for one sequence, recording every iterate and
/// attention map. `Z_0 = 0` exactly.
pub fn looped_forward(
    tape: &mut Tape,
    tokens: &[usize],
    weights: &ModelWeights,
    cfg: &ForwardConfig,
) -> Result<LoopTrace, ModelError> {
    let mut z_per_iter = vec![Tensor::zeros(tokens.len(), weights.embed.cols())];
    let mut attn_per_iter = Vec::with_capacity(cfg.t_steps);
    let mut alphas = Vec::with_capacity(cfg.t_steps);
    let (_, final_logits) = run_loop(tape, tokens, weights, cfg, |z, map, alpha| {
        z_per_iter.push(z.clone());
        attn_per_iter.push(map);
        alphas.push(alpha);
    })?;
    Ok(LoopTrace {
        z_per_iter,
        attn_per_iter,
        alphas,
        final_logits,
    })
}

/// Full traces for every sequence of a batch.
pub fn forward_batch(
    tape: &mut Tape,
    batch: &SequenceBatch,
    weights: &ModelWeights,
    cfg: &ForwardConfig,
) -> Result<Vec<LoopTrace>, ModelError> {
    (0..batch.len())
        .map(|b| looped_forward(tape, batch.tokens(b), weights, cfg))
        .collect()
}

/// Memory-lean forward pass keeping only the final logits; per-iteration
/// states and maps are dropped as the loop advances.
pub fn forward_logits(
    tokens: &[usize],
    weights: &ModelWeights,
    cfg: &ForwardConfig,
) -> Result<Tensor, ModelError> {
    let mut tape = Tape::new();
    let (_, logits) = run_loop(&mut tape, tokens, weights, cfg, |_, _, _| {})?;
    Ok(logits)
}

pub fn accuracy_counts(
    logits: &Tensor,
    targets: &[Option<usize>],
) -> Result<(usize, usize), ModelError> {
    if logits.rows() != targets.len() {
        return Err(ModelError::TraceBatchMismatch {
            reason: format!("{} logit rows vs {} targets", logits.rows(), targets.len()),
        });
    }
    let mut hits = 0;
    let mut total = 0;
    for (i, tgt) in targets.iter().enumerate() {
        if let Some(t) = *tgt {
            let row = logits.row(i);
            let mut arg = 0;
            for j in 1..row.len() {
                if row[j] > row[arg] {
                    arg = j;
                }
            }
            total += 1;
            if arg == t {
                hits += 1;
            }
        }
    }
    Ok((hits, total))
}

/// Fraction of non-sentinel target positions where the logits' argmax
/// matches the target. Rejects batches with no valid target.
pub fn predict_accuracy(traces: &[LoopTrace], batch: &SequenceBatch) -> Result<f64, ModelError> {
    if traces.len() != batch.len() {
        return Err(ModelError::TraceBatchMismatch {
            reason: format!("{} traces vs {} sequences", traces.len(), batch.len()),
        });
    }
    let mut hits = 0;
    let mut total = 0;
    for (b, trace) in traces.iter().enumerate() {
        let (h, t) = accuracy_counts(&trace.final_logits, batch.targets(b))?;
        hits += h;
        total += t;
    }
    if total == 0 {
        return Err(ModelError::NoTargets);
    }
    Ok(hits as f64 / total as f64)
}

/// One run of the attention-only residual retrieval iteration
/// `Z_{k+1} = Z_k + alpha(S_q) (F(X + Z_k) - Z_k)`.
#[derive(Debug)]
pub struct MapIteration {
    /// `steps + 1` iterates starting from the supplied `Z_0`.
    pub iterates: Vec<Tensor>,
    pub maps: Vec<AttentionMap>,
    /// `||Z_{k+1} - Z_k||_F` per step.
    pub update_norms: Vec<f64>,
    pub alphas: Vec<f64>,
}

/// Iterates the bare attention map (no MLP, no normalization) from an
/// arbitrary start, optionally entropy-gated. This is the iteration the
/// contraction certificate bounds.
pub fn gated_map_iteration(
    x: &Tensor,
    z0: &Tensor,
    weights: &ModelWeights,
    temperature: f64,
    gate: Option<&GateSpec>,
    steps: usize,
) -> Result<MapIteration, ModelError> {
    if steps == 0 {
        return Err(ModelError::ZeroSteps);
    }
    if x.shape() != z0.shape() {
        return Err(ModelError::Tensor(TensorError::ShapeMismatch {
            op: "gated_map_iteration",
            lhs: x.shape(),
            rhs: z0.shape(),
        }));
    }
    let mut tape = Tape::new();
    let mut z = z0.detached();
    let mut out = MapIteration {
        iterates: vec![z.clone()],
        maps: Vec::with_capacity(steps),
        update_norms: Vec::with_capacity(steps),
        alphas: Vec::with_capacity(steps),
    };
    for _ in 0..steps {
        let h = z.add(x)?;
        let (f, map) = attention_operator(&mut tape, &h, weights, temperature)?;
        let alpha = match gate {
            None => 1.0,
            Some(spec) => {
                let mean_entropy: f64 = (0..map.size())
                    .map(|i| tsallis_raw(map.row(i), spec.q))
                    .sum::<f64>()
                    / map.size() as f64;
                entropy_gate(mean_entropy, &spec.params)
            }
        };
        let residual = f.sub(&z)?;
        let z_next = z.add(&residual.scale(alpha))?;
        out.update_norms.push(residual.scale(alpha).frobenius_norm());
        out.iterates.push(z_next.clone());
        out.maps.push(map);
        out.alphas.push(alpha);
        z = z_next;
    }
    Ok(out)
}
