//! The four verbs as library functions; `main` only parses flags.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use muscle_rl_core::bar::{PidController, PidGains};
use muscle_rl_core::env::{rollout, Controller, EpisodeLog};
use muscle_rl_core::eval::{calibrate, field_test, nominal_env, Calibration, FieldReport, FieldTestSpec};
use muscle_rl_core::plant::PlantConfig;
use muscle_rl_core::randomize::{streams, SeededRng};
use muscle_rl_core::sac::{ActMode, Agent, PolicyController};
use muscle_rl_core::trainer::{EpisodeRecord, Trainer};

use crate::checkpoint::{Checkpoint, CheckpointRef};
use crate::config::RunConfig;
use crate::output::{episode_csv, field_csv, losses_csv, rewards_csv, summary_csv, write_atomic, Provenance};

pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const REWARDS_FILE: &str = "rewards.csv";
pub const LOSSES_FILE: &str = "losses.csv";
pub const CONFIG_FILE: &str = "config.toml";

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct TrainOptions {
    /// Continue from `<output_dir>/checkpoint.bin` if it exists.
    pub resume: bool,
    /// Stop (with a checkpoint) once this many episodes are complete.
    pub stop_after: Option<usize>,
    /// Print a progress line every this many episodes; 0 is silent.
    pub progress_every: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub episodes_done: usize,
    pub finished: bool,
    pub output_dir: PathBuf,
}

fn provenance(cfg: &RunConfig) -> Provenance {
    Provenance { config_hash: cfg.hash(), seed: cfg.seed }
}

fn persist(cfg: &RunConfig, trainer: &Trainer, records: &[EpisodeRecord]) -> Result<()> {
    let dir = &cfg.output_dir;
    let prov = provenance(cfg);
    let ck = CheckpointRef { config_hash: &prov.config_hash, config: cfg, trainer, records };
    ck.save(&dir.join(CHECKPOINT_FILE))?;
    write_atomic(&dir.join(REWARDS_FILE), &rewards_csv(&prov, records)?)?;
    write_atomic(&dir.join(LOSSES_FILE), &losses_csv(&prov, records)?)?;
    Ok(())
}

/// Run (or continue) the training schedule, checkpointing every
/// `checkpoint_every` episodes and at the end.
pub fn train(cfg: &RunConfig, opts: TrainOptions) -> Result<TrainOutcome> {
    let dir = &cfg.output_dir;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let ck_path = dir.join(CHECKPOINT_FILE);
    let (mut trainer, mut records) = if opts.resume && ck_path.exists() {
        let ck = Checkpoint::load(&ck_path)?;
        if ck.config_hash != cfg.hash() || ck.config.seed != cfg.seed {
            bail!(
                "checkpoint in {} was written by config {} seed {}, not {} seed {}",
                dir.display(),
                ck.config_hash,
                ck.config.seed,
                cfg.hash(),
                cfg.seed
            );
        }
        (ck.trainer, ck.records)
    } else {
        let t = Trainer::new(cfg.train.clone(), cfg.seed).map_err(|e| anyhow!("building trainer: {e}"))?;
        (t, Vec::new())
    };
    write_atomic(&dir.join(CONFIG_FILE), cfg.to_toml()?.as_bytes())?;

    let stop = opts.stop_after.unwrap_or(usize::MAX).min(cfg.train.episodes);
    while trainer.episode < stop {
        let rec = match trainer.run_episode() {
            Ok(r) => r,
            Err(e) => {
                let last = records.len() / cfg.checkpoint_every * cfg.checkpoint_every;
                bail!(
                    "training aborted in episode {}: {e}; last checkpoint in {} is at episode {last}",
                    trainer.episode + 1,
                    dir.display()
                );
            }
        };
        if opts.progress_every > 0 && rec.episode % opts.progress_every == 0 {
            let l = rec.losses.map(|l| format!(" critic {:.4} actor {:.4} alpha {:.4}", l.critic1, l.actor, l.alpha));
            eprintln!(
                "episode {:>5} [{}] avg reward {:>9.3} buffer {:>6}{}",
                rec.episode,
                rec.controller.as_str(),
                rec.average_reward,
                rec.buffer_len,
                l.unwrap_or_default()
            );
        }
        records.push(rec);
        if trainer.episode % cfg.checkpoint_every == 0 {
            persist(cfg, &trainer, &records)?;
        }
    }
    persist(cfg, &trainer, &records)?;
    Ok(TrainOutcome { episodes_done: trainer.episode, finished: trainer.is_finished(), output_dir: dir.clone() })
}

/// What drives an evaluation episode.
pub enum ControllerSource {
    /// Deterministic policy from a checkpoint.
    Checkpoint(Box<Checkpoint>),
    /// PID with the given gains on the given plant.
    Pid { plant: PlantConfig, gains: PidGains, provenance: Provenance },
}

impl ControllerSource {
    pub fn from_checkpoint(path: &Path) -> Result<Self> {
        Ok(Self::Checkpoint(Box::new(Checkpoint::load(path)?)))
    }

    pub fn pid(cfg: &RunConfig) -> Self {
        Self::Pid { plant: cfg.train.plant.clone(), gains: cfg.train.pid, provenance: provenance(cfg) }
    }

    pub fn plant(&self) -> &PlantConfig {
        match self {
            Self::Checkpoint(ck) => &ck.trainer.config.plant,
            Self::Pid { plant, .. } => plant,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Self::Checkpoint(_) => "policy",
            Self::Pid { .. } => "pid",
        }
    }

    pub fn provenance(&self) -> Provenance {
        match self {
            Self::Checkpoint(ck) => Provenance { config_hash: ck.config_hash.clone(), seed: ck.config.seed },
            Self::Pid { provenance, .. } => provenance.clone(),
        }
    }

    fn with_controller<T>(&self, f: impl FnOnce(&mut dyn Controller) -> Result<T>) -> Result<T> {
        match self {
            Self::Checkpoint(ck) => {
                let agent: &Agent = &ck.trainer.agent;
                // deterministic actions never draw from this stream
                let mut rng = SeededRng::new(0, streams::POLICY);
                f(&mut PolicyController::new(agent, ActMode::Deterministic, &mut rng))
            }
            Self::Pid { plant, gains, .. } => {
                let env = nominal_env(plant, 1.0).map_err(|e| anyhow!("{e}"))?;
                let mut pid = PidController::for_env(*gains, &env).map_err(|e| anyhow!("{e}"))?;
                f(&mut pid)
            }
        }
    }
}

/// Grid field test on the nominal plant. Writes `field.csv` and `field_summary.csv`.
pub fn eval_field(src: &ControllerSource, spec: &FieldTestSpec, out_dir: &Path) -> Result<FieldReport> {
    fs::create_dir_all(out_dir)?;
    let plant = src.plant().clone();
    let report = src.with_controller(|c| field_test(&plant, spec, c).map_err(|e| anyhow!("field test: {e}")))?;
    let prov = src.provenance();
    write_atomic(&out_dir.join("field.csv"), &field_csv(&prov, &report)?)?;
    write_atomic(&out_dir.join("field_summary.csv"), &summary_csv(&prov, src.name(), &report.summary)?)?;
    Ok(report)
}

/// One logged episode on the nominal plant from rest.
pub fn episode(src: &ControllerSource, target: [f64; 2], duration: f64, out: &Path) -> Result<EpisodeLog> {
    let plant = src.plant().clone();
    let mut env = nominal_env(&plant, duration).map_err(|e| anyhow!("{e}"))?;
    let period = env.episode_config().action_period;
    let log = src.with_controller(|c| rollout(&mut env, Some(target), c).map_err(|e| anyhow!("{e}")))?;
    if let Some(parent) = out.parent() {
        fs::create_dir_all(parent)?;
    }
    write_atomic(out, &episode_csv(&src.provenance(), &log, period)?)?;
    Ok(log)
}

/// PID step response on the configured plant, scored against the gate.
pub fn calibrate_plant(cfg: &RunConfig, target: [f64; 2], out: Option<&Path>) -> Result<Calibration> {
    let plant = &cfg.train.plant;
    let spec = FieldTestSpec::preset(plant.kind);
    let mut pid = PidController::new(cfg.train.pid, plant.clone(), cfg.train.episode.action_period)
        .map_err(|e| anyhow!("{e}"))?;
    let (cal, log) = calibrate(plant, &spec, &mut pid, target).map_err(|e| anyhow!("{e}"))?;
    if let Some(out) = out {
        if let Some(parent) = out.parent() {
            fs::create_dir_all(parent)?;
        }
        write_atomic(out, &episode_csv(&provenance(cfg), &log, cfg.train.episode.action_period)?)?;
    }
    Ok(cal)
}
