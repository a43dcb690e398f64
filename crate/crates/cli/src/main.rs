//! Command-line driver for the looped-transformer training stack.
//!
//! Subcommands: `train`, `eval`, `check-contraction`, `simulate`,
//! `landscape`, `plot`. Exit codes: 0 on success, 1 for usage or
//! configuration errors, 2 for a numerical abort.

mod config;
mod landscape;
mod plot;
mod svg;

use clap::{Args, Parser, Subcommand};
use config::RunConfig;
use eer_core::bounds::{contraction_certificate_worst_case, trajectory_certificate};
use eer_core::checkpoint;
use eer_core::data::{generate_induction_batch, TaskMode};
use eer_core::hamiltonian::{simulate_trajectory, trajectory_csv, HamiltonianState};
use eer_core::model::ModelWeights;
use eer_core::tape::Tape;
use eer_core::train::{evaluate, metrics_header, train, MetricsRow, TrainError, TrainSink};
use eer_core::SeededRng;
use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "eer",
    about = "Energy-entropy regularized training for a single-head looped transformer",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model and write metrics, checkpoints, and a config echo.
    Train(TrainArgs),
    /// Evaluate a checkpoint on freshly generated sequences.
    Eval(EvalArgs),
    /// Certify the attention loop's contraction bound on a checkpoint.
    CheckContraction(CheckArgs),
    /// Integrate the latent dynamics and export the trajectory.
    Simulate(SimulateArgs),
    /// Export a loss-landscape slice around a checkpoint.
    Landscape(LandscapeArgs),
    /// Render a metrics or trajectory CSV as an SVG line chart.
    Plot(PlotArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Flat key = value configuration file.
    #[arg(long)]
    config: PathBuf,
    /// Output directory for metrics.csv, checkpoints, and the config echo.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the seed from the configuration.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Comma-separated sequence lengths.
    #[arg(long, default_value = "10,100,1000")]
    lengths: String,
    /// Sequences generated per length.
    #[arg(long, default_value_t = 32)]
    samples: usize,
    /// Recurrence depth at evaluation; defaults to the training depth.
    #[arg(long)]
    t_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct CheckArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Length of the sampled probe sequence.
    #[arg(long, default_value_t = 16)]
    len: usize,
    /// Tsallis index of the certificate.
    #[arg(long, default_value_t = 1.5)]
    q: f64,
    /// Loop iterations; defaults to the checkpoint's training depth.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Also write the report to a file.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct LandscapeArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    /// Grid resolution per axis.
    #[arg(long, default_value_t = 25)]
    res: usize,
    /// Half-width of the slice in filter-normalized units.
    #[arg(long, default_value_t = 1.0)]
    span: f64,
    /// Sequence length of the fixed probe batch.
    #[arg(long, default_value_t = 16)]
    len: usize,
    /// Number of sequences in the probe batch.
    #[arg(long, default_value_t = 8)]
    batch: usize,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct PlotArgs {
    /// Input metrics.csv or trajectory.csv.
    #[arg(long)]
    input: PathBuf,
    /// Output SVG path.
    #[arg(long)]
    out: PathBuf,
}

enum CliError {
    /// Usage or configuration problem; exit code 1.
    Usage(String),
    /// Numerical abort; exit code 2.
    Numerical(String),
}

impl CliError {
    fn usage(e: impl std::fmt::Display) -> Self {
        CliError::Usage(e.to_string())
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // clap renders its own help/usage text; version and help
            // requests are not errors.
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Eval(args) => cmd_eval(args),
        Command::CheckContraction(args) => cmd_check_contraction(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Landscape(args) => cmd_landscape(args),
        Command::Plot(args) => cmd_plot(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Numerical(msg)) => {
            eprintln!("numerical abort: {msg}");
            ExitCode::from(2)
        }
    }
}

fn load_config(path: &Path, seed_override: Option<u64>) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg = RunConfig::parse(&text).map_err(CliError::usage)?;
    if let Some(seed) = seed_override {
        cfg.eer.seed = seed;
    }
    Ok(cfg)
}

fn load_checkpoint(path: &Path) -> Result<(ModelWeights, RunConfig), CliError> {
    let (weights, echo) = checkpoint::load_file(path)
        .map_err(|e| CliError::Usage(format!("cannot load checkpoint {}: {e}", path.display())))?;
    let cfg = RunConfig::parse(&echo)
        .map_err(|e| CliError::Usage(format!("checkpoint config echo is invalid: {e}")))?;
    let dims = cfg.eer.dims();
    if weights.dims() != dims {
        return Err(CliError::Usage(format!(
            "checkpoint arrays do not match its config echo: {:?} vs {:?}",
            weights.dims(),
            dims
        )));
    }
    Ok((weights, cfg))
}

struct FileSink {
    out_dir: PathBuf,
    metrics: fs::File,
    echo: String,
}

impl FileSink {
    fn create(out_dir: &Path, cfg: &RunConfig) -> Result<Self, CliError> {
        fs::create_dir_all(out_dir)
            .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", out_dir.display())))?;
        let echo = cfg.echo();
        fs::write(out_dir.join("config-echo.cfg"), &echo)
            .map_err(|e| CliError::Usage(format!("cannot write config echo: {e}")))?;
        let mut metrics = fs::File::create(out_dir.join("metrics.csv"))
            .map_err(|e| CliError::Usage(format!("cannot create metrics.csv: {e}")))?;
        metrics
            .write_all(format!("{}\n", metrics_header(&cfg.eer.eval_lengths)).as_bytes())
            .map_err(|e| CliError::Usage(format!("cannot write metrics.csv: {e}")))?;
        Ok(FileSink {
            out_dir: out_dir.to_path_buf(),
            metrics,
            echo,
        })
    }
}

impl TrainSink for FileSink {
    fn on_metrics(&mut self, row: &MetricsRow) -> std::io::Result<()> {
        self.metrics
            .write_all(format!("{}\n", row.csv_line()).as_bytes())?;
        self.metrics.flush()
    }

    fn on_checkpoint(&mut self, epoch: usize, weights: &ModelWeights) -> std::io::Result<()> {
        let path = self.out_dir.join(format!("checkpoint-{epoch:06}.eer"));
        checkpoint::save_file(&path, weights, &self.echo)
            .map_err(|e| std::io::Error::other(e.to_string()))?;
        checkpoint::save_file(
            &self.out_dir.join("checkpoint-final.eer"),
            weights,
            &self.echo,
        )
        .map_err(|e| std::io::Error::other(e.to_string()))
    }

    fn on_event(&mut self, message: &str) {
        eprintln!("{message}");
    }
}

fn cmd_train(args: TrainArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.config, args.seed)?;
    let mut sink = FileSink::create(&args.out, &cfg)?;
    match train(&cfg.eer, &mut sink) {
        Ok(_) => {
            println!(
                "trained {} epochs; metrics and checkpoints in {}",
                cfg.eer.epochs,
                args.out.display()
            );
            Ok(())
        }
        Err(e @ TrainError::NonFiniteLoss { .. }) => Err(CliError::Numerical(e.to_string())),
        Err(e @ TrainError::InvalidConfig(_)) => Err(CliError::usage(e)),
        Err(e) => Err(CliError::Numerical(e.to_string())),
    }
}

fn cmd_eval(args: EvalArgs) -> Result<(), CliError> {
    let (weights, mut cfg) = load_checkpoint(&args.checkpoint)?;
    if let Some(seed) = args.seed {
        cfg.eer.seed = seed;
    }
    let lengths: Vec<usize> = args
        .lengths
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<Result<_, _>>()
        .map_err(|_| CliError::Usage(format!("invalid length list '{}'", args.lengths)))?;
    let t_eval = args.t_steps.unwrap_or(cfg.eer.t_steps);
    let accs = evaluate(&weights, &cfg.eer, t_eval, &lengths, args.samples, 0)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    for (len, acc) in lengths.iter().zip(&accs) {
        println!("acc_l{len} = {acc:.6}");
    }
    Ok(())
}

fn cmd_check_contraction(args: CheckArgs) -> Result<(), CliError> {
    let (weights, mut cfg) = load_checkpoint(&args.checkpoint)?;
    if let Some(seed) = args.seed {
        cfg.eer.seed = seed;
    }
    if !(args.q > 1.0 && args.q <= 2.0) {
        return Err(CliError::Usage(format!(
            "q must lie in (1, 2], got {}",
            args.q
        )));
    }
    let steps = args.steps.unwrap_or(cfg.eer.t_steps);
    let mut fwd = cfg.eer.forward_config();
    fwd.t_steps = steps;

    let mut rng = SeededRng::derived(cfg.eer.seed, "contraction-probe", 0);
    let batch =
        generate_induction_batch(&mut rng, cfg.eer.vocab, 1, args.len, TaskMode::FullSequence)
            .map_err(CliError::usage)?;
    let mut tape = Tape::new();
    let trace = eer_core::model::looped_forward(&mut tape, batch.tokens(0), &weights, &fwd)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    let cert = trajectory_certificate(&weights, &trace.attn_per_iter, args.q)
        .map_err(|e| CliError::Numerical(e.to_string()))?;
    let worst = contraction_certificate_worst_case(&weights, args.len, steps)
        .map_err(|e| CliError::Numerical(e.to_string()))?;

    let mut report = String::new();
    let _ = writeln!(report, "version = 1");
    let _ = writeln!(report, "sequence_len = {}", args.len);
    let _ = writeln!(report, "q = {}", args.q);
    let _ = writeln!(report, "k = {steps}");
    for (idx, c) in cert.per_iteration.iter().enumerate() {
        let _ = writeln!(report, "iter_{:03}.attn_term = {:.12}", idx + 1, c.attn_term);
        let _ = writeln!(
            report,
            "iter_{:03}.per_step_bound = {:.12}",
            idx + 1,
            c.per_step_bound
        );
    }
    let summary = &cert.per_iteration[0];
    let max_attn = cert
        .per_iteration
        .iter()
        .map(|c| c.attn_term)
        .fold(0.0, f64::max);
    let max_bound = cert
        .per_iteration
        .iter()
        .map(|c| c.per_step_bound)
        .fold(0.0, f64::max);
    let _ = writeln!(report, "wq_norm = {:.12}", summary.wq_norm);
    let _ = writeln!(report, "wk_norm = {:.12}", summary.wk_norm);
    let _ = writeln!(report, "wv_fro = {:.12}", summary.wv_fro);
    let _ = writeln!(report, "attn_term = {max_attn:.12}");
    let _ = writeln!(report, "per_step_bound = {max_bound:.12}");
    let _ = writeln!(report, "k = {steps}");
    let _ = writeln!(report, "k_power_bound = {:.12}", cert.product_bound);
    let _ = writeln!(report, "contractive = {}", cert.contractive);
    let _ = writeln!(
        report,
        "softmax_lipschitz = {:.12}",
        summary.softmax_lipschitz
    );
    let _ = writeln!(report, "worst_case_attn_term = {:.12}", worst.attn_term);
    let _ = writeln!(
        report,
        "worst_case_per_step_bound = {:.12}",
        worst.per_step_bound
    );

    print!("{report}");
    if let Some(path) = args.out {
        fs::write(&path, &report)
            .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", path.display())))?;
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let cfg = load_config(&args.config, args.seed)?;
    let params = cfg.sim.dynamics_params();
    params.validate().map_err(CliError::usage)?;

    fs::create_dir_all(&args.out)
        .map_err(|e| CliError::Usage(format!("cannot create {}: {e}", args.out.display())))?;

    let mut init_rng = SeededRng::derived(cfg.eer.seed, "init", 0);
    let weights = ModelWeights::init(&cfg.eer.dims(), &mut init_rng);
    let mut rng = SeededRng::derived(cfg.eer.seed, "simulate", 0);
    let tokens: Vec<usize> = (0..cfg.sim.len).map(|_| rng.below(cfg.eer.vocab)).collect();
    let x = {
        let mut tape = Tape::new();
        eer_core::model::embed_sequence(&mut tape, &tokens, &weights, cfg.eer.pe_scale)
            .map_err(|e| CliError::Numerical(e.to_string()))?
    };
    let d = cfg.eer.d;
    let z0: Vec<f64> = (0..d).map(|_| cfg.sim.z0_scale * rng.normal()).collect();
    let v0: Vec<f64> = (0..d).map(|_| cfg.sim.v0_scale * rng.normal()).collect();
    let traj = simulate_trajectory(HamiltonianState { z: z0, v: v0 }, &x, &weights, &params)
        .map_err(|e| CliError::Numerical(e.to_string()))?;

    let csv = trajectory_csv(&traj);
    fs::write(args.out.join("trajectory.csv"), &csv)
        .map_err(|e| CliError::Usage(format!("cannot write trajectory.csv: {e}")))?;
    let chart = plot::render_plot(&csv).map_err(CliError::usage)?;
    fs::write(args.out.join("trajectory.svg"), chart)
        .map_err(|e| CliError::Usage(format!("cannot write trajectory.svg: {e}")))?;
    println!(
        "simulated {} steps; trajectory in {}",
        params.steps,
        args.out.display()
    );
    Ok(())
}

fn cmd_landscape(args: LandscapeArgs) -> Result<(), CliError> {
    let (weights, mut cfg) = load_checkpoint(&args.checkpoint)?;
    if let Some(seed) = args.seed {
        cfg.eer.seed = seed;
    }
    if args.res == 0 {
        return Err(CliError::Usage("res must be at least 1".into()));
    }
    let mut rng = SeededRng::derived(cfg.eer.seed, "landscape-batch", 0);
    let batch = generate_induction_batch(
        &mut rng,
        cfg.eer.vocab,
        args.batch,
        args.len,
        TaskMode::FullSequence,
    )
    .map_err(CliError::usage)?;
    let grid = landscape::landscape_grid(
        &weights,
        &batch,
        &cfg.eer,
        args.span,
        args.res,
        cfg.eer.seed,
    )
    .map_err(|e| CliError::Numerical(e.to_string()))?;
    fs::write(&args.out, grid.to_csv())
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", args.out.display())))?;
    match grid.center_cell() {
        Some(center) => println!(
            "landscape slice {}x{} over ±{} written to {} (center loss {:.6}, ce {:.6})",
            args.res,
            args.res,
            args.span,
            args.out.display(),
            center.loss_total,
            center.loss_ce
        ),
        None => println!(
            "landscape slice {}x{} over ±{} written to {}",
            args.res,
            args.res,
            args.span,
            args.out.display()
        ),
    }
    Ok(())
}

fn cmd_plot(args: PlotArgs) -> Result<(), CliError> {
    let text = fs::read_to_string(&args.input)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", args.input.display())))?;
    let svg = plot::render_plot(&text).map_err(CliError::usage)?;
    fs::write(&args.out, svg)
        .map_err(|e| CliError::Usage(format!("cannot write {}: {e}", args.out.display())))?;
    println!("chart written to {}", args.out.display());
    Ok(())
}
