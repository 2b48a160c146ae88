//! Run configuration: a TOML file laid over a named preset, then CLI flags.
//!
//! ```toml
//! preset = "wrist"
//! seed = 1
//! output_dir = "runs/wrist"
//! checkpoint_every = 100
//!
//! [ablation]
//! bootstrap = true
//! augment = true
//! randomize = true
//!
//! [train]            # any field of the training config, merged over the preset
//! episodes = 3500
//! [train.sac]
//! gru_hidden = 64
//! ```

use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use muscle_rl_core::plant::PlantKind;
use muscle_rl_core::trainer::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use toml::{Table, Value};

/// Seed override read from the environment. Nothing else is.
pub const SEED_ENV: &str = "MUSCLE_RL_SEED";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablation {
    pub bootstrap: bool,
    pub augment: bool,
    pub randomize: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self { bootstrap: true, augment: true, randomize: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub preset: PlantKind,
    pub seed: u64,
    pub output_dir: PathBuf,
    /// Episodes between checkpoints.
    pub checkpoint_every: usize,
    pub ablation: Ablation,
    /// Resolved training configuration with ablations applied.
    pub train: TrainConfig,
}

/// Command-line values that take precedence over the file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub preset: Option<PlantKind>,
    pub seed: Option<u64>,
    pub output_dir: Option<PathBuf>,
    pub checkpoint_every: Option<usize>,
    pub no_bootstrap: bool,
    pub no_augment: bool,
    pub no_randomize: bool,
    /// Variance multiplier `m`.
    pub variance_multiplier: Option<f64>,
    pub episodes: Option<usize>,
    pub bootstrap_episodes: Option<usize>,
    pub gru_hidden: Option<usize>,
}

pub fn parse_preset(name: &str) -> Result<PlantKind> {
    match name {
        "eye" => Ok(PlantKind::Eye),
        "wrist" => Ok(PlantKind::Wrist),
        other => bail!("unknown preset {other:?} (expected \"eye\" or \"wrist\")"),
    }
}

/// Recursively merge `over` into `base`; tables merge, everything else replaces.
fn merge(base: &mut Table, over: &Table, path: &str) -> Result<()> {
    for (k, v) in over {
        let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
        match (base.get_mut(k), v) {
            (Some(Value::Table(b)), Value::Table(o)) => merge(b, o, &here)?,
            (Some(slot), v) => *slot = v.clone(),
            (None, _) => bail!("unknown config key `{here}`"),
        }
    }
    Ok(())
}

fn seed_from_env() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(s) => Ok(Some(s.trim().parse().with_context(|| format!("{SEED_ENV}={s:?} is not an unsigned integer"))?)),
        Err(std::env::VarError::NotPresent) => Ok(None),
        Err(e) => Err(anyhow!("{SEED_ENV}: {e}")),
    }
}

impl RunConfig {
    /// Precedence, lowest first: preset, file, environment (seed only), flags.
    pub fn resolve(file: Option<&Path>, ov: &Overrides) -> Result<Self> {
        let mut table = match file {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                text.parse::<Table>().with_context(|| format!("parsing {}", p.display()))?
            }
            None => Table::new(),
        };
        Self::from_table(&mut table, ov, seed_from_env()?)
    }

    pub fn from_table(table: &mut Table, ov: &Overrides, env_seed: Option<u64>) -> Result<Self> {
        let take_str = |t: &mut Table, k: &str| -> Result<Option<String>> {
            match t.remove(k) {
                None => Ok(None),
                Some(Value::String(s)) => Ok(Some(s)),
                Some(v) => bail!("`{k}` must be a string, found {v}"),
            }
        };
        let take_int = |t: &mut Table, k: &str| -> Result<Option<u64>> {
            match t.remove(k) {
                None => Ok(None),
                Some(Value::Integer(i)) if i >= 0 => Ok(Some(i as u64)),
                Some(v) => bail!("`{k}` must be a nonnegative integer, found {v}"),
            }
        };

        let file_preset = take_str(table, "preset")?.map(|s| parse_preset(&s)).transpose()?;
        let preset = ov.preset.or(file_preset).unwrap_or(PlantKind::Wrist);
        let file_seed = take_int(table, "seed")?;
        let seed = ov.seed.or(env_seed).or(file_seed).unwrap_or(0);
        let file_out = take_str(table, "output_dir")?.map(PathBuf::from);
        let output_dir = ov.output_dir.clone().or(file_out).unwrap_or_else(|| PathBuf::from("runs").join(preset.name()));
        let file_every = take_int(table, "checkpoint_every")?.map(|v| v as usize);
        let checkpoint_every = ov.checkpoint_every.or(file_every).unwrap_or(100).max(1);

        let mut ablation = match table.remove("ablation") {
            None => Ablation::default(),
            Some(v) => v.try_into().context("parsing [ablation]")?,
        };
        ablation.bootstrap &= !ov.no_bootstrap;
        ablation.augment &= !ov.no_augment;
        ablation.randomize &= !ov.no_randomize;

        let base = TrainConfig::preset(preset);
        let mut merged = match Value::try_from(&base)? {
            Value::Table(t) => t,
            _ => unreachable!("a struct serializes to a table"),
        };
        if let Some(over) = table.remove("train") {
            let Value::Table(over) = over else { bail!("`train` must be a table") };
            merge(&mut merged, &over, "train")?;
        }
        if let Some(k) = table.keys().next() {
            bail!("unknown config key `{k}`");
        }
        let mut train: TrainConfig = Value::Table(merged).try_into().context("parsing [train]")?;
        if train.plant.kind != preset {
            bail!("train.plant.kind does not match preset {:?}", preset.name());
        }

        if let Some(m) = ov.variance_multiplier {
            train.randomization.variance_multiplier = m;
        }
        if let Some(n) = ov.episodes {
            train.episodes = n;
        }
        if let Some(m) = ov.bootstrap_episodes {
            train.bootstrap_episodes = m;
        }
        if let Some(h) = ov.gru_hidden {
            train.sac.gru_hidden = h;
        }
        if !ablation.bootstrap {
            train = train.without_bootstrap();
        }
        if !ablation.augment {
            train = train.without_augmentation();
        }
        if !ablation.randomize {
            train = train.without_randomization();
        }
        train.validate().map_err(|e| anyhow!("invalid training config: {e}"))?;
        Ok(Self { preset, seed, output_dir, checkpoint_every, ablation, train })
    }

    /// Everything that shapes the learning outcome except the seed.
    pub fn hash(&self) -> String {
        #[derive(Serialize)]
        struct Hashed<'a> {
            preset: &'a str,
            train: &'a TrainConfig,
        }
        let text = toml::to_string(&Hashed { preset: self.preset.name(), train: &self.train }).expect("config serializes");
        let digest = Sha256::digest(text.as_bytes());
        hex::encode(&digest[..8])
    }

    /// Resolved configuration as a TOML document that `resolve` reads back.
    pub fn to_toml(&self) -> Result<String> {
        #[derive(Serialize)]
        struct Doc<'a> {
            preset: &'a str,
            seed: u64,
            output_dir: &'a Path,
            checkpoint_every: usize,
            ablation: Ablation,
            train: &'a TrainConfig,
        }
        Ok(toml::to_string(&Doc {
            preset: self.preset.name(),
            seed: self.seed,
            output_dir: &self.output_dir,
            checkpoint_every: self.checkpoint_every,
            ablation: self.ablation,
            train: &self.train,
        })?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use muscle_rl_core::trainer::Warmup;

    fn parse(text: &str, ov: &Overrides, env: Option<u64>) -> Result<RunConfig> {
        RunConfig::from_table(&mut text.parse::<Table>().unwrap(), ov, env)
    }

    #[test]
    fn empty_file_is_wrist_preset() {
        let c = parse("", &Overrides::default(), None).unwrap();
        assert_eq!(c.preset, PlantKind::Wrist);
        assert_eq!(c.train, TrainConfig::preset(PlantKind::Wrist));
        assert_eq!(c.seed, 0);
    }

    #[test]
    fn nested_overlay_and_flags() {
        let text = "preset = \"eye\"\nseed = 3\n[train]\nepisodes = 40\n[train.sac]\ngru_hidden = 16\n";
        let ov = Overrides { bootstrap_episodes: Some(5), variance_multiplier: Some(2.0), ..Default::default() };
        let c = parse(text, &ov, None).unwrap();
        assert_eq!(c.preset, PlantKind::Eye);
        assert_eq!((c.seed, c.train.episodes, c.train.bootstrap_episodes), (3, 40, 5));
        assert_eq!(c.train.sac.gru_hidden, 16);
        assert_eq!(c.train.sac.lr, 3e-4);
        assert_eq!(c.train.randomization.variance_multiplier, 2.0);
    }

    #[test]
    fn seed_precedence() {
        let text = "seed = 3";
        assert_eq!(parse(text, &Overrides::default(), Some(9)).unwrap().seed, 9);
        let ov = Overrides { seed: Some(11), ..Default::default() };
        assert_eq!(parse(text, &ov, Some(9)).unwrap().seed, 11);
    }

    #[test]
    fn ablations_apply_after_overlay() {
        let ov = Overrides { no_bootstrap: true, no_augment: true, no_randomize: true, ..Default::default() };
        let c = parse("[train.augmentation]\nn = 4\n", &ov, None).unwrap();
        assert_eq!(c.train.warmup, Warmup::Random);
        assert_eq!(c.train.augmentation.n, 0);
        assert_eq!(c.train.randomization.angle_noise_sd, 0.0);
        assert_ne!(c.hash(), parse("", &Overrides::default(), None).unwrap().hash());
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(parse("sed = 3", &Overrides::default(), None).is_err());
        assert!(parse("[train]\nepisodez = 3", &Overrides::default(), None).is_err());
        assert!(parse("preset = \"arm\"", &Overrides::default(), None).is_err());
        assert!(parse("[train]\nbootstrap_episodes = 9000", &Overrides::default(), None).is_err());
    }

    #[test]
    fn resolved_document_round_trips() {
        let ov = Overrides { no_augment: true, gru_hidden: Some(32), ..Default::default() };
        let c = parse("preset = \"eye\"\nseed = 5", &ov, None).unwrap();
        let again = parse(&c.to_toml().unwrap(), &Overrides::default(), None).unwrap();
        assert_eq!(again, c);
        assert_eq!(again.hash(), c.hash());
    }

    #[test]
    fn hash_ignores_seed_and_output() {
        let a = parse("seed = 1\noutput_dir = \"a\"", &Overrides::default(), None).unwrap();
        let b = parse("seed = 2\noutput_dir = \"b\"", &Overrides::default(), None).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_eq!(a.hash().len(), 16);
    }
}
