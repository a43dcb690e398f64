//! Tsallis entropy, the row-norm and Frobenius inequalities, the attention
//! contraction certificate, and the entropy-gated step size.
//!
//! The certificate bounds the Frechet derivative of the residual attention
//! map `Z -> S(X+Z)^T (X+Z) W_V` by
//!
//! ```text
//! (4 L_softmax ||W_Q||_op ||W_K||_op + sqrt(sum_i (1 - (q-1) S_q(r_i))^(2/q))) ||W_V||_F
//! ```
//!
//! with `L_softmax = 1/2`, so the weight term collapses to
//! `2 ||W_Q||_op ||W_K||_op`. A per-step bound below one certifies that the
//! looped iteration contracts to a unique fixed point.

use crate::model::ModelWeights;
use crate::rng::SeededRng;
use crate::tensor::{Tensor, TensorError};
use thiserror::Error;

/// Lipschitz constant of the row-wise softmax with respect to its logits.
pub const SOFTMAX_LIPSCHITZ: f64 = 0.5;

const POWER_ITERATION_CAP: usize = 1000;

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("probability vector must be nonnegative and sum to 1 (sum was {sum})")]
    NotAProbability { sum: f64 },
    #[error("attention map row {row} is not stochastic (sum {sum})")]
    NotRowStochastic { row: usize, sum: f64 },
    #[error("attention map must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("q = 1 is the Shannon limit; use the Shannon entropy instead")]
    TsallisAtOne,
    #[error("q must lie in (1, 2] for this bound, got {0}")]
    QOutOfRange(f64),
    #[error("entropy gate requires 0 < alpha_min <= 1 and saturation_entropy > 0")]
    InvalidGate,
    #[error("power iteration did not converge within {cap} iterations; best estimate {estimate}")]
    PowerIterationStalled { cap: usize, estimate: f64 },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// A probability vector over finitely many outcomes.
#[derive(Clone, Debug)]
pub struct ProbabilityRow(Vec<f64>);

impl ProbabilityRow {
    pub fn new(p: Vec<f64>) -> Result<Self, BoundsError> {
        let sum: f64 = p.iter().sum();
        if p.iter().any(|&v| v < 0.0 || !v.is_finite()) || (sum - 1.0).abs() > 1e-9 {
            return Err(BoundsError::NotAProbability { sum });
        }
        Ok(ProbabilityRow(p))
    }

    pub fn one_hot(n: usize, hot: usize) -> Self {
        let mut p = vec![0.0; n];
        p[hot] = 1.0;
        ProbabilityRow(p)
    }

    pub fn uniform(n: usize) -> Self {
        ProbabilityRow(vec![1.0 / n as f64; n])
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

/// Row-stochastic attention matrix; rows are probability vectors.
#[derive(Clone, Debug)]
pub struct AttentionMap(Tensor);

impl AttentionMap {
    pub fn new(t: Tensor) -> Result<Self, BoundsError> {
        if t.rows() != t.cols() {
            return Err(BoundsError::NotSquare {
                rows: t.rows(),
                cols: t.cols(),
            });
        }
        for i in 0..t.rows() {
            let sum: f64 = t.row(i).iter().sum();
            if t.row(i).iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > 1e-9 {
                return Err(BoundsError::NotRowStochastic { row: i, sum });
            }
        }
        Ok(AttentionMap(t))
    }

    pub fn tensor(&self) -> &Tensor {
        &self.0
    }

    pub fn size(&self) -> usize {
        self.0.rows()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        self.0.row(i)
    }
}

/// Tsallis entropy `(1 - sum p_i^q) / (q - 1)` with the Boltzmann constant
/// fixed to one. Nonnegative for `q` in (1, 2]; rejects the `q = 1` pole.
pub fn tsallis_entropy(p: &ProbabilityRow, q: f64) -> Result<f64, BoundsError> {
    if q == 1.0 {
        return Err(BoundsError::TsallisAtOne);
    }
    Ok(tsallis_raw(p.values(), q))
}

pub(crate) fn tsallis_raw(p: &[f64], q: f64) -> f64 {
    // p^1.5 = p sqrt(p): the default index avoids powf.
    let pow_sum: f64 = if q == 1.5 {
        p.iter().map(|&v| v * v.sqrt()).sum()
    } else {
        p.iter().map(|&v| v.powf(q)).sum()
    };
    (1.0 - pow_sum) / (q - 1.0)
}

/// Shannon entropy `-sum p_i ln p_i`, the `q -> 1` limit, with `0 ln 0 = 0`.
pub fn shannon_entropy(p: &ProbabilityRow) -> f64 {
    p.values()
        .iter()
        .map(|&v| if v > 0.0 { -v * v.ln() } else { 0.0 })
        .sum()
}

/// Tsallis entropy of the uniform distribution over `n` outcomes,
/// `(1 - n^(1-q)) / (q - 1)`.
pub fn uniform_row_tsallis(n: usize, q: f64) -> f64 {
    (1.0 - (n as f64).powf(1.0 - q)) / (q - 1.0)
}

/// Row-norm inequality: returns `(lhs, rhs)` with
/// `lhs = ||p||_2^2` and `rhs = (sum p_i^q)^(2/q)`, where `lhs <= rhs`
/// for `q` in (1, 2].
pub fn lemma_row_bound(p: &ProbabilityRow, q: f64) -> Result<(f64, f64), BoundsError> {
    if !(q > 1.0 && q <= 2.0) {
        return Err(BoundsError::QOutOfRange(q));
    }
    let lhs: f64 = p.values().iter().map(|&v| v * v).sum();
    let pow_sum: f64 = p.values().iter().map(|&v| v.powf(q)).sum();
    Ok((lhs, pow_sum.powf(2.0 / q)))
}

/// Frobenius bound for a row-stochastic map: returns `(fro_sq, bound)` with
/// `fro_sq = sum_i ||r_i||_2^2` and
/// `bound = sum_i (1 - (q-1) S_q(r_i))^(2/q)`, where `fro_sq <= bound`.
pub fn attention_frobenius_bound(s: &AttentionMap, q: f64) -> Result<(f64, f64), BoundsError> {
    if !(q > 1.0 && q <= 2.0) {
        return Err(BoundsError::QOutOfRange(q));
    }
    let mut fro_sq = 0.0;
    let mut bound = 0.0;
    for i in 0..s.size() {
        let row = s.row(i);
        fro_sq += row.iter().map(|&v| v * v).sum::<f64>();
        let entropy = tsallis_raw(row, q);
        bound += (1.0 - (q - 1.0) * entropy).powf(2.0 / q);
    }
    Ok((fro_sq, bound))
}

/// Largest singular value via power iteration on `W^T W` from a fixed
/// seeded start, converged to relative tolerance `tol`.
pub fn operator_norm(w: &Tensor, tol: f64) -> Result<f64, BoundsError> {
    let gram = w.transpose().matmul(w)?;
    let n = gram.rows();
    if n == 0 {
        return Ok(0.0);
    }
    let mut rng = SeededRng::new(0x5EED_0F_0D);
    let mut v: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
    normalize(&mut v);

    let mut estimate = 0.0_f64;
    for _ in 0..POWER_ITERATION_CAP {
        let mut gv = gram.matvec(&v)?;
        let norm = normalize(&mut gv);
        if norm == 0.0 {
            return Ok(0.0);
        }
        let next = norm.sqrt();
        if (next - estimate).abs() <= tol * next.max(1e-300) {
            return Ok(next);
        }
        estimate = next;
        v = gv;
    }
    Err(BoundsError::PowerIterationStalled {
        cap: POWER_ITERATION_CAP,
        estimate,
    })
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        for x in v.iter_mut() {
            *x /= norm;
        }
    }
    norm
}

/// The contraction certificate for one evaluation of the attention map.
#[derive(Clone, Debug)]
pub struct ContractionCertificate {
    pub wq_norm: f64,
    pub wk_norm: f64,
    pub wv_fro: f64,
    /// `sqrt(sum_i (1 - (q-1) S_q(r_i))^(2/q))` over the supplied map,
    /// or `sqrt(n)` in worst-case mode (one-hot rows).
    pub attn_term: f64,
    pub per_step_bound: f64,
    pub k: usize,
    pub k_power_bound: f64,
    pub contractive: bool,
    pub softmax_lipschitz: f64,
}

impl ContractionCertificate {
    /// Flat key-value report, one field per line.
    pub fn report(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("wq_norm = {:.12}\n", self.wq_norm));
        out.push_str(&format!("wk_norm = {:.12}\n", self.wk_norm));
        out.push_str(&format!("wv_fro = {:.12}\n", self.wv_fro));
        out.push_str(&format!("attn_term = {:.12}\n", self.attn_term));
        out.push_str(&format!("per_step_bound = {:.12}\n", self.per_step_bound));
        out.push_str(&format!("k = {}\n", self.k));
        out.push_str(&format!("k_power_bound = {:.12}\n", self.k_power_bound));
        out.push_str(&format!("contractive = {}\n", self.contractive));
        out.push_str(&format!(
            "softmax_lipschitz = {:.12}\n",
            self.softmax_lipschitz
        ));
        out
    }
}

fn weight_norms(weights: &ModelWeights, tol: f64) -> Result<(f64, f64, f64), BoundsError> {
    let wq = operator_norm(&weights.w_q, tol)?;
    let wk = operator_norm(&weights.w_k, tol)?;
    let wv = weights.w_v.frobenius_norm();
    Ok((wq, wk, wv))
}

fn certificate_from_norms(
    wq_norm: f64,
    wk_norm: f64,
    wv_fro: f64,
    attn_term: f64,
    k: usize,
) -> ContractionCertificate {
    let weight_term = 4.0 * SOFTMAX_LIPSCHITZ * wq_norm * wk_norm;
    let per_step_bound = (weight_term + attn_term) * wv_fro;
    let k_power_bound = per_step_bound.powi(k as i32);
    ContractionCertificate {
        wq_norm,
        wk_norm,
        wv_fro,
        attn_term,
        per_step_bound,
        k,
        k_power_bound,
        contractive: k_power_bound < 1.0,
        softmax_lipschitz: SOFTMAX_LIPSCHITZ,
    }
}

/// Certificate evaluated on an observed attention map.
pub fn contraction_certificate(
    weights: &ModelWeights,
    s: &AttentionMap,
    q: f64,
    k: usize,
) -> Result<ContractionCertificate, BoundsError> {
    if !(q > 1.0 && q <= 2.0) {
        return Err(BoundsError::QOutOfRange(q));
    }
    let (wq, wk, wv) = weight_norms(weights, 1e-10)?;
    let (_, bound) = attention_frobenius_bound(s, q)?;
    Ok(certificate_from_norms(wq, wk, wv, bound.sqrt(), k))
}

/// Worst-case certificate substituting the one-hot upper envelope
/// `attn_term = sqrt(n)` for the data-dependent term.
pub fn contraction_certificate_worst_case(
    weights: &ModelWeights,
    n: usize,
    k: usize,
) -> Result<ContractionCertificate, BoundsError> {
    let (wq, wk, wv) = weight_norms(weights, 1e-10)?;
    Ok(certificate_from_norms(wq, wk, wv, (n as f64).sqrt(), k))
}

/// Per-iteration certificates for a trajectory of attention maps plus the
/// product bound used for the k-loop test (the map changes across
/// iterations, so the single-configuration k-power is replaced by the
/// product of per-iteration bounds).
pub struct TrajectoryCertificate {
    pub per_iteration: Vec<ContractionCertificate>,
    pub product_bound: f64,
    pub contractive: bool,
}

pub fn trajectory_certificate(
    weights: &ModelWeights,
    maps: &[AttentionMap],
    q: f64,
) -> Result<TrajectoryCertificate, BoundsError> {
    let mut per_iteration = Vec::with_capacity(maps.len());
    let mut product = 1.0;
    for map in maps {
        let cert = contraction_certificate(weights, map, q, 1)?;
        product *= cert.per_step_bound;
        per_iteration.push(cert);
    }
    Ok(TrajectoryCertificate {
        per_iteration,
        product_bound: product,
        contractive: product < 1.0,
    })
}

/// Parameters of the entropy-gated residual step size.
#[derive(Clone, Copy, Debug)]
pub struct GateParams {
    pub alpha_min: f64,
    pub saturation_entropy: f64,
}

impl GateParams {
    pub fn new(alpha_min: f64, saturation_entropy: f64) -> Result<Self, BoundsError> {
        if !(alpha_min > 0.0 && alpha_min <= 1.0) || !(saturation_entropy > 0.0) {
            return Err(BoundsError::InvalidGate);
        }
        Ok(GateParams {
            alpha_min,
            saturation_entropy,
        })
    }
}

/// Entropy-gated step size
/// `alpha = alpha_min + (1 - alpha_min) min(1, s_q / saturation_entropy)`:
/// positive, monotone in the entropy, at most one, and saturating to one
/// once the attention is spread.
pub fn entropy_gate(s_q: f64, params: &GateParams) -> f64 {
    let ramp = (s_q / params.saturation_entropy).min(1.0);
    params.alpha_min + (1.0 - params.alpha_min) * ramp
}
