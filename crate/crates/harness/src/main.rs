use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Result};
use clap::{Args, Parser, Subcommand};
use muscle_rl::commands::{self, ControllerSource, TrainOptions};
use muscle_rl::config::{parse_preset, Overrides, RunConfig};
use muscle_rl_core::eval::{CalibrationGate, FieldTestSpec};
use muscle_rl_core::plant::PlantKind;

#[derive(Parser)]
#[command(name = "muscle-rl", version, about = "Train and evaluate muscle-driven robot controllers")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the training schedule (PID bootstrap, then policy episodes).
    Train(TrainArgs),
    /// Steady-state field test over the target grid.
    EvalField(EvalArgs),
    /// Log one episode towards a single target.
    Episode(EpisodeArgs),
    /// PID step response on the configured plant, scored against the calibration gate.
    CalibratePlant(CalibrateArgs),
}

#[derive(Args, Clone, Default)]
struct Common {
    /// TOML run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Plant preset: eye or wrist.
    #[arg(long, value_parser = parse_kind)]
    preset: Option<PlantKind>,
    /// Seed (overrides MUSCLE_RL_SEED and the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, short)]
    out: Option<PathBuf>,
    /// Uniform-random actions instead of PID in the warm-up episodes.
    #[arg(long)]
    no_bootstrap: bool,
    /// Disable target-vector augmentation.
    #[arg(long)]
    no_augment: bool,
    /// Nominal muscles and noiseless observations every episode.
    #[arg(long)]
    no_randomize: bool,
    /// Variance multiplier m for the randomization ranges and noise.
    #[arg(long = "variance-multiplier", short = 'm')]
    variance_multiplier: Option<f64>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Total episodes N.
    #[arg(long)]
    episodes: Option<usize>,
    /// Warm-up episodes M.
    #[arg(long)]
    bootstrap_episodes: Option<usize>,
    /// GRU width of actor and critics.
    #[arg(long)]
    gru_hidden: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Continue from the checkpoint in the output directory.
    #[arg(long)]
    resume: bool,
    /// Stop after this many completed episodes (resumable).
    #[arg(long)]
    stop_after: Option<usize>,
    /// Progress line every this many episodes (0 for none).
    #[arg(long, default_value_t = 10)]
    progress_every: usize,
}

#[derive(Args)]
struct Source {
    /// Policy checkpoint to evaluate.
    #[arg(long, conflicts_with = "pid")]
    checkpoint: Option<PathBuf>,
    /// Evaluate the PID controller of the configured plant instead.
    #[arg(long)]
    pid: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    source: Source,
    /// Seconds per target (defaults to 15 for the eye, 25 for the wrist).
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Args)]
struct EpisodeArgs {
    #[command(flatten)]
    common: Common,
    #[command(flatten)]
    source: Source,
    /// Target angles in degrees, `pitch,second`.
    #[arg(long, value_parser = parse_pair, allow_hyphen_values = true)]
    target: [f64; 2],
    #[arg(long)]
    duration: Option<f64>,
}

#[derive(Args)]
struct CalibrateArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long, value_parser = parse_pair, default_value = "5,5", allow_hyphen_values = true)]
    target: [f64; 2],
}

fn parse_kind(s: &str) -> Result<PlantKind, String> {
    parse_preset(s).map_err(|e| e.to_string())
}

fn parse_pair(s: &str) -> Result<[f64; 2], String> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => Ok([a.parse().map_err(|e| format!("{e}"))?, b.parse().map_err(|e| format!("{e}"))?]),
        _ => Err("expected two comma-separated numbers".into()),
    }
}

fn overrides(c: &Common) -> Overrides {
    Overrides {
        preset: c.preset,
        seed: c.seed,
        output_dir: c.out.clone(),
        no_bootstrap: c.no_bootstrap,
        no_augment: c.no_augment,
        no_randomize: c.no_randomize,
        variance_multiplier: c.variance_multiplier,
        ..Overrides::default()
    }
}

fn source(common: &Common, src: &Source) -> Result<(ControllerSource, RunConfig)> {
    let cfg = RunConfig::resolve(common.config.as_deref(), &overrides(common))?;
    let s = match (&src.checkpoint, src.pid) {
        (Some(p), false) => ControllerSource::from_checkpoint(p)?,
        (None, true) => ControllerSource::pid(&cfg),
        _ => bail!("pass exactly one of --checkpoint or --pid"),
    };
    Ok((s, cfg))
}

fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Command::Train(a) => {
            let ov = Overrides {
                episodes: a.episodes,
                bootstrap_episodes: a.bootstrap_episodes,
                gru_hidden: a.gru_hidden,
                checkpoint_every: a.checkpoint_every,
                ..overrides(&a.common)
            };
            let cfg = RunConfig::resolve(a.common.config.as_deref(), &ov)?;
            eprintln!("config {} seed {} -> {}", cfg.hash(), cfg.seed, cfg.output_dir.display());
            let opts = TrainOptions { resume: a.resume, stop_after: a.stop_after, progress_every: a.progress_every };
            let done = commands::train(&cfg, opts)?;
            println!(
                "{} episodes of {} complete in {}",
                done.episodes_done,
                cfg.train.episodes,
                done.output_dir.display()
            );
            Ok(true)
        }
        Command::EvalField(a) => {
            let (src, cfg) = source(&a.common, &a.source)?;
            let mut spec = FieldTestSpec::preset(src.plant().kind);
            if let Some(d) = a.duration {
                spec.duration = d;
            }
            let report = commands::eval_field(&src, &spec, &cfg.output_dir)?;
            let s = report.summary;
            println!(
                "{} targets: e_ss mean {:.4} sd {:.4} median {:.4} q1 {:.4} q3 {:.4} (deg) -> {}",
                s.count,
                s.mean,
                s.sd,
                s.median,
                s.q1,
                s.q3,
                cfg.output_dir.display()
            );
            Ok(true)
        }
        Command::Episode(a) => {
            let (src, cfg) = source(&a.common, &a.source)?;
            let duration = a.duration.unwrap_or(FieldTestSpec::preset(src.plant().kind).duration);
            let out = cfg.output_dir.join("episode.csv");
            let log = commands::episode(&src, a.target, duration, &out)?;
            println!("{} steps, return {:.3} -> {}", log.len(), log.episode_return(), out.display());
            Ok(true)
        }
        Command::CalibratePlant(a) => {
            let cfg = RunConfig::resolve(a.common.config.as_deref(), &overrides(&a.common))?;
            let out = cfg.output_dir.join("calibration.csv");
            let cal = commands::calibrate_plant(&cfg, a.target, Some(&out))?;
            let rise = cal.rise_time.map_or("never".to_string(), |t| format!("{t:.1} s"));
            let gate = CalibrationGate::preset(cfg.preset);
            let verdict = if cal.passes(&gate) { "PASS" } else { "FAIL" };
            println!(
                "{verdict}: {} PID at ({}, {}): e_ss {:.4} deg (< {}), rise time {rise} ({}..{} s) -> {}",
                cfg.preset.name(),
                a.target[0],
                a.target[1],
                cal.e_ss,
                gate.max_e_ss,
                gate.rise.0,
                gate.rise.1,
                out.display()
            );
            Ok(cal.passes(&gate))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
