//! Latent dynamics over the attention energy landscape.
//!
//! The latent position `z` and velocity `v` evolve by
//!
//! ```text
//! v' = mu v + alpha (F_tau(z; X) - z) - beta_k grad_z E_tau(z; X)
//! z' = z + v'
//! ```
//!
//! with the soft-retrieval field
//! `F_tau(z; X) = sum_i softmax_i(<W_Q z, W_K x_i> / (tau sqrt(d))) W_V x_i`
//! and the attention free energy
//! `E_tau(z; X) = -tau log sum_i exp(<W_Q z, W_K x_i> / (tau sqrt(d)))`.

use crate::model::ModelWeights;
use crate::tensor::{Tensor, TensorError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("token manifold must contain at least one token")]
    EmptyManifold,
    #[error("temperature must be positive, got {0}")]
    NonPositiveTemperature(f64),
    #[error("step index {k} exceeds configured steps {steps}")]
    StepOutOfRange { k: usize, steps: usize },
    #[error("beta schedule has {len} entries but {steps} steps are configured")]
    ScheduleTooShort { len: usize, steps: usize },
    #[error("dynamics require at least one step")]
    ZeroSteps,
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

/// Latent position and velocity.
#[derive(Clone, Debug)]
pub struct HamiltonianState {
    pub z: Vec<f64>,
    pub v: Vec<f64>,
}

impl HamiltonianState {
    pub fn at_rest(z: Vec<f64>) -> Self {
        let v = vec![0.0; z.len()];
        HamiltonianState { z, v }
    }

    pub fn kinetic(&self) -> f64 {
        0.5 * self.v.iter().map(|x| x * x).sum::<f64>()
    }
}

/// Gravitational coefficient per step: a constant or an explicit schedule.
#[derive(Clone, Debug)]
pub enum BetaSchedule {
    Constant(f64),
    PerStep(Vec<f64>),
}

impl BetaSchedule {
    fn at(&self, k: usize) -> f64 {
        match self {
            BetaSchedule::Constant(b) => *b,
            BetaSchedule::PerStep(v) => v[k],
        }
    }
}

#[derive(Clone, Debug)]
pub struct DynamicsParams {
    pub mu: f64,
    pub alpha: f64,
    pub beta: BetaSchedule,
    pub tau: f64,
    pub steps: usize,
}

impl Default for DynamicsParams {
    fn default() -> Self {
        DynamicsParams {
            mu: 0.9,
            alpha: 1.0,
            beta: BetaSchedule::Constant(0.1),
            tau: 1.0,
            steps: 100,
        }
    }
}

impl DynamicsParams {
    pub fn validate(&self) -> Result<(), SimError> {
        if !(self.tau > 0.0) {
            return Err(SimError::NonPositiveTemperature(self.tau));
        }
        if self.steps == 0 {
            return Err(SimError::ZeroSteps);
        }
        if let BetaSchedule::PerStep(v) = &self.beta {
            if v.len() < self.steps {
                return Err(SimError::ScheduleTooShort {
                    len: v.len(),
                    steps: self.steps,
                });
            }
        }
        Ok(())
    }
}

/// Attention scores `<W_Q z, W_K x_i> / (tau sqrt(d))` and their softmax.
fn scores_and_weights(
    z: &[f64],
    x: &Tensor,
    weights: &ModelWeights,
    tau: f64,
) -> Result<(Vec<f64>, Vec<f64>), SimError> {
    if x.rows() == 0 {
        return Err(SimError::EmptyManifold);
    }
    if !(tau > 0.0) {
        return Err(SimError::NonPositiveTemperature(tau));
    }
    let d = weights.w_q.rows() as f64;
    let qz = weights.w_q.matvec(z)?;
    let n = x.rows();
    let mut scores = Vec::with_capacity(n);
    for i in 0..n {
        let ki = weights.w_k.matvec(x.row(i))?;
        let dot: f64 = qz.iter().zip(&ki).map(|(a, b)| a * b).sum();
        scores.push(dot / (tau * d.sqrt()));
    }
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = scores.iter().map(|&s| (s - max).exp()).collect();
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    Ok((scores, w))
}

/// Soft-retrieval operator: softmax-weighted mixture of the value-projected
/// tokens, `sum_i sigma_i W_V x_i`.
pub fn soft_retrieval(
    z: &[f64],
    x: &Tensor,
    weights: &ModelWeights,
    tau: f64,
) -> Result<Vec<f64>, SimError> {
    let (_, sigma) = scores_and_weights(z, x, weights, tau)?;
    let d = weights.w_v.rows();
    let mut out = vec![0.0; d];
    for i in 0..x.rows() {
        let vx = weights.w_v.matvec(x.row(i))?;
        for (o, v) in out.iter_mut().zip(&vx) {
            *o += sigma[i] * v;
        }
    }
    Ok(out)
}

/// Attention free energy: the negative temperature-scaled log-partition of
/// the scores, computed with a max shift.
pub fn attention_energy(
    z: &[f64],
    x: &Tensor,
    weights: &ModelWeights,
    tau: f64,
) -> Result<f64, SimError> {
    let (scores, _) = scores_and_weights(z, x, weights, tau)?;
    let max = scores.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + scores.iter().map(|&s| (s - max).exp()).sum::<f64>().ln();
    Ok(-tau * lse)
}

/// Analytic gradient of the attention energy with respect to `z`:
/// `-(1 / sqrt(d)) W_Q^T sum_i sigma_i W_K x_i`.
pub fn energy_gradient(
    z: &[f64],
    x: &Tensor,
    weights: &ModelWeights,
    tau: f64,
) -> Result<Vec<f64>, SimError> {
    let (_, sigma) = scores_and_weights(z, x, weights, tau)?;
    let d = weights.w_q.rows();
    let mut mix = vec![0.0; d];
    for i in 0..x.rows() {
        let ki = weights.w_k.matvec(x.row(i))?;
        for (m, v) in mix.iter_mut().zip(&ki) {
            *m += sigma[i] * v;
        }
    }
    let mut grad = weights.w_q.matvec_t(&mix)?;
    let scale = -1.0 / (d as f64).sqrt();
    for g in &mut grad {
        *g *= scale;
    }
    Ok(grad)
}

/// One integrator step: velocity first, then the position uses the fresh
/// velocity.
pub fn hamiltonian_step(
    state: &HamiltonianState,
    x: &Tensor,
    weights: &ModelWeights,
    params: &DynamicsParams,
    k: usize,
) -> Result<HamiltonianState, SimError> {
    if k >= params.steps {
        return Err(SimError::StepOutOfRange {
            k,
            steps: params.steps,
        });
    }
    let retrieval = soft_retrieval(&state.z, x, weights, params.tau)?;
    let grad = energy_gradient(&state.z, x, weights, params.tau)?;
    let beta = params.beta.at(k);
    let mut v_next = vec![0.0; state.v.len()];
    for i in 0..v_next.len() {
        v_next[i] =
            params.mu * state.v[i] + params.alpha * (retrieval[i] - state.z[i]) - beta * grad[i];
    }
    let z_next: Vec<f64> = state.z.iter().zip(&v_next).map(|(z, v)| z + v).collect();
    Ok(HamiltonianState {
        z: z_next,
        v: v_next,
    })
}

/// One sample of the trajectory with its phase diagnostics.
#[derive(Clone, Debug)]
pub struct TrajectoryPoint {
    pub step: usize,
    pub state: HamiltonianState,
    /// `0.5 ||v||^2`
    pub kinetic: f64,
    /// `E_tau(z; X)`
    pub potential: f64,
}

/// Full trajectory from an initial state, including the starting point.
pub fn simulate_trajectory(
    initial: HamiltonianState,
    x: &Tensor,
    weights: &ModelWeights,
    params: &DynamicsParams,
) -> Result<Vec<TrajectoryPoint>, SimError> {
    params.validate()?;
    let mut points = Vec::with_capacity(params.steps + 1);
    let mut state = initial;
    points.push(TrajectoryPoint {
        step: 0,
        kinetic: state.kinetic(),
        potential: attention_energy(&state.z, x, weights, params.tau)?,
        state: state.clone(),
    });
    for k in 0..params.steps {
        state = hamiltonian_step(&state, x, weights, params, k)?;
        points.push(TrajectoryPoint {
            step: k + 1,
            kinetic: state.kinetic(),
            potential: attention_energy(&state.z, x, weights, params.tau)?,
            state: state.clone(),
        });
    }
    Ok(points)
}

/// CSV rendering: `step, z components, v components, kinetic, potential`.
pub fn trajectory_csv(points: &[TrajectoryPoint]) -> String {
    let d = points.first().map_or(0, |p| p.state.z.len());
    let mut out = String::from("step");
    for i in 0..d {
        out.push_str(&format!(",z{i}"));
    }
    for i in 0..d {
        out.push_str(&format!(",v{i}"));
    }
    out.push_str(",kinetic,potential\n");
    for p in points {
        out.push_str(&p.step.to_string());
        for v in &p.state.z {
            out.push_str(&format!(",{v:.9}"));
        }
        for v in &p.state.v {
            out.push_str(&format!(",{v:.9}"));
        }
        out.push_str(&format!(",{:.9},{:.9}\n", p.kinetic, p.potential));
    }
    out
}
