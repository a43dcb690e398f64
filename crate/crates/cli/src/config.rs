//! Flat `key = value` run configuration covering the training and
//! simulation settings. Unknown keys are rejected with their line number;
//! missing keys fall back to the documented defaults.

use eer_core::hamiltonian::{BetaSchedule, DynamicsParams};
use eer_core::loss::LossPositions;
use eer_core::train::EERConfig;
use std::fmt::Write as _;

pub const CONFIG_VERSION: u64 = 1;

/// Sampling settings for the latent-dynamics command, alongside the
/// integrator parameters themselves.
#[derive(Clone, Debug, PartialEq)]
pub struct SimSettings {
    pub mu: f64,
    pub alpha: f64,
    pub beta: f64,
    pub tau: f64,
    pub steps: usize,
    /// Number of tokens in the sampled landscape.
    pub len: usize,
    /// Scale of the random initial position (zero keeps the origin).
    pub z0_scale: f64,
    /// Scale of the random initial velocity.
    pub v0_scale: f64,
}

impl Default for SimSettings {
    fn default() -> Self {
        SimSettings {
            mu: 0.9,
            alpha: 1.0,
            beta: 0.1,
            tau: 1.0,
            steps: 100,
            len: 8,
            z0_scale: 0.0,
            v0_scale: 0.0,
        }
    }
}

impl SimSettings {
    pub fn dynamics_params(&self) -> DynamicsParams {
        DynamicsParams {
            mu: self.mu,
            alpha: self.alpha,
            beta: BetaSchedule::Constant(self.beta),
            tau: self.tau,
            steps: self.steps,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunConfig {
    pub eer: EERConfig,
    pub sim: SimSettings,
}

#[derive(Debug)]
pub struct ConfigError {
    pub line: Option<usize>,
    pub message: String,
}

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.line {
            Some(n) => write!(f, "line {n}: {}", self.message),
            None => write!(f, "{}", self.message),
        }
    }
}

impl std::error::Error for ConfigError {}

fn err(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError {
        line: Some(line),
        message: message.into(),
    }
}

impl RunConfig {
    /// Parses a flat `key = value` document. `#`-prefixed lines and blank
    /// lines are skipped.
    pub fn parse(text: &str) -> Result<RunConfig, ConfigError> {
        let mut cfg = RunConfig::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| err(line_no, format!("expected 'key = value', got '{line}'")))?;
            let key = key.trim();
            let value = value.trim();
            cfg.apply(key, value, line_no)?;
        }
        cfg.validate_parsed()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str, line: usize) -> Result<(), ConfigError> {
        let f = |v: &str| -> Result<f64, ConfigError> {
            v.parse()
                .map_err(|_| err(line, format!("invalid number '{v}' for '{key}'")))
        };
        let u = |v: &str| -> Result<usize, ConfigError> {
            v.parse()
                .map_err(|_| err(line, format!("invalid integer '{v}' for '{key}'")))
        };
        match key {
            "version" => {
                let v: u64 = value
                    .parse()
                    .map_err(|_| err(line, format!("invalid version '{value}'")))?;
                if v != CONFIG_VERSION {
                    return Err(err(line, format!("unsupported config version {v}")));
                }
            }
            "lambda_p" => self.eer.lambda_p = f(value)?,
            "lambda_k" => self.eer.lambda_k = f(value)?,
            "lambda_s" => self.eer.lambda_s = f(value)?,
            "q" => self.eer.q = f(value)?,
            "eta" => self.eer.eta = f(value)?,
            "tau" => self.eer.tau = f(value)?,
            "d" => self.eer.d = u(value)?,
            "d_ff" => self.eer.d_ff = u(value)?,
            "vocab" => self.eer.vocab = u(value)?,
            "t_steps" => self.eer.t_steps = u(value)?,
            "lr" => self.eer.lr = f(value)?,
            "weight_decay" => self.eer.weight_decay = f(value)?,
            "batch_size" => self.eer.batch_size = u(value)?,
            "train_len_min" => self.eer.train_len_min = u(value)?,
            "train_len_max" => self.eer.train_len_max = u(value)?,
            "epochs" => self.eer.epochs = u(value)?,
            "seed" => {
                self.eer.seed = value
                    .parse()
                    .map_err(|_| err(line, format!("invalid seed '{value}'")))?
            }
            "eval_lengths" => {
                let lengths: Result<Vec<usize>, _> =
                    value.split(',').map(|s| s.trim().parse::<usize>()).collect();
                self.eer.eval_lengths = lengths
                    .map_err(|_| err(line, format!("invalid length list '{value}'")))?;
            }
            "pe_scale" => self.eer.pe_scale = f(value)?,
            "loss_positions" => {
                self.eer.loss_positions = match value {
                    "last-iteration" => LossPositions::LastIteration,
                    "all-iterations" => LossPositions::AllIterations,
                    other => {
                        return Err(err(
                            line,
                            format!(
                                "loss_positions must be 'last-iteration' or 'all-iterations', got '{other}'"
                            ),
                        ))
                    }
                }
            }
            "ablation_ce_only" => {
                self.eer.ablation_ce_only = match value {
                    "true" => true,
                    "false" => false,
                    other => return Err(err(line, format!("expected true/false, got '{other}'"))),
                }
            }
            "causal_mask" => {
                self.eer.causal_mask = match value {
                    "true" => true,
                    "false" => false,
                    other => return Err(err(line, format!("expected true/false, got '{other}'"))),
                }
            }
            "eval_interval" => self.eer.eval_interval = u(value)?,
            "eval_samples" => self.eer.eval_samples = u(value)?,
            "sim_mu" => self.sim.mu = f(value)?,
            "sim_alpha" => self.sim.alpha = f(value)?,
            "sim_beta" => self.sim.beta = f(value)?,
            "sim_tau" => self.sim.tau = f(value)?,
            "sim_steps" => self.sim.steps = u(value)?,
            "sim_len" => self.sim.len = u(value)?,
            "sim_z0_scale" => self.sim.z0_scale = f(value)?,
            "sim_v0_scale" => self.sim.v0_scale = f(value)?,
            unknown => return Err(err(line, format!("unknown key '{unknown}'"))),
        }
        Ok(())
    }

    fn validate_parsed(&self) -> Result<(), ConfigError> {
        self.eer.validate().map_err(|e| ConfigError {
            line: None,
            message: e.to_string(),
        })
    }

    /// Canonical echo of the effective configuration; parsing the echo
    /// reproduces this configuration exactly.
    pub fn echo(&self) -> String {
        let e = &self.eer;
        let s = &self.sim;
        let mut out = String::new();
        let _ = writeln!(out, "version = {CONFIG_VERSION}");
        let _ = writeln!(out, "lambda_p = {}", e.lambda_p);
        let _ = writeln!(out, "lambda_k = {}", e.lambda_k);
        let _ = writeln!(out, "lambda_s = {}", e.lambda_s);
        let _ = writeln!(out, "q = {}", e.q);
        let _ = writeln!(out, "eta = {}", e.eta);
        let _ = writeln!(out, "tau = {}", e.tau);
        let _ = writeln!(out, "d = {}", e.d);
        let _ = writeln!(out, "d_ff = {}", e.d_ff);
        let _ = writeln!(out, "vocab = {}", e.vocab);
        let _ = writeln!(out, "t_steps = {}", e.t_steps);
        let _ = writeln!(out, "lr = {}", e.lr);
        let _ = writeln!(out, "weight_decay = {}", e.weight_decay);
        let _ = writeln!(out, "batch_size = {}", e.batch_size);
        let _ = writeln!(out, "train_len_min = {}", e.train_len_min);
        let _ = writeln!(out, "train_len_max = {}", e.train_len_max);
        let _ = writeln!(out, "epochs = {}", e.epochs);
        let _ = writeln!(out, "seed = {}", e.seed);
        let lengths: Vec<String> = e.eval_lengths.iter().map(|l| l.to_string()).collect();
        let _ = writeln!(out, "eval_lengths = {}", lengths.join(","));
        let _ = writeln!(out, "pe_scale = {}", e.pe_scale);
        let positions = match e.loss_positions {
            LossPositions::LastIteration => "last-iteration",
            LossPositions::AllIterations => "all-iterations",
        };
        let _ = writeln!(out, "loss_positions = {positions}");
        let _ = writeln!(out, "ablation_ce_only = {}", e.ablation_ce_only);
        let _ = writeln!(out, "causal_mask = {}", e.causal_mask);
        let _ = writeln!(out, "eval_interval = {}", e.eval_interval);
        let _ = writeln!(out, "eval_samples = {}", e.eval_samples);
        let _ = writeln!(out, "sim_mu = {}", s.mu);
        let _ = writeln!(out, "sim_alpha = {}", s.alpha);
        let _ = writeln!(out, "sim_beta = {}", s.beta);
        let _ = writeln!(out, "sim_tau = {}", s.tau);
        let _ = writeln!(out, "sim_steps = {}", s.steps);
        let _ = writeln!(out, "sim_len = {}", s.len);
        let _ = writeln!(out, "sim_z0_scale = {}", s.z0_scale);
        let _ = writeln!(out, "sim_v0_scale = {}", s.v0_scale);
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_echo() {
        let cfg = RunConfig::default();
        let parsed = RunConfig::parse(&cfg.echo()).unwrap();
        assert_eq!(parsed.echo(), cfg.echo());
    }

    #[test]
    fn missing_keys_take_defaults() {
        let cfg = RunConfig::parse("q = 1.7\nseed = 42\n").unwrap();
        assert_eq!(cfg.eer.q, 1.7);
        assert_eq!(cfg.eer.seed, 42);
        assert_eq!(cfg.eer.lambda_p, 0.1);
        assert_eq!(cfg.eer.t_steps, 25);
    }

    #[test]
    fn unknown_key_is_rejected_with_line_number() {
        let e = RunConfig::parse("q = 1.5\nmystery = 3\n").unwrap_err();
        assert_eq!(e.line, Some(2));
        assert!(e.message.contains("mystery"));
    }

    #[test]
    fn malformed_line_is_rejected() {
        let e = RunConfig::parse("q 1.5\n").unwrap_err();
        assert_eq!(e.line, Some(1));
    }

    #[test]
    fn invalid_value_is_rejected() {
        let e = RunConfig::parse("epochs = soon\n").unwrap_err();
        assert_eq!(e.line, Some(1));
        assert!(e.message.contains("epochs"));
    }

    #[test]
    fn invalid_q_fails_validation() {
        assert!(RunConfig::parse("q = 1.0\n").is_err());
        assert!(RunConfig::parse("q = 2.5\n").is_err());
    }

    #[test]
    fn comments_and_blanks_are_skipped() {
        let cfg = RunConfig::parse("# a comment\n\nq = 1.5\n").unwrap();
        assert_eq!(cfg.eer.q, 1.5);
    }

    #[test]
    fn wrong_version_is_rejected() {
        assert!(RunConfig::parse("version = 2\n").is_err());
    }
}
