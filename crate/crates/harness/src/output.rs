//! CSV artifacts. Every file opens with `# config_hash=<hex> seed=<n>` and a
//! header row. Floats use the shortest representation that round-trips, so
//! identical runs produce identical bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{Context, Result};
use muscle_rl_core::env::EpisodeLog;
use muscle_rl_core::eval::{FieldReport, Summary};
use muscle_rl_core::trainer::EpisodeRecord;

/// Provenance carried by the comment line.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
}

fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// Render a table as CSV text.
pub fn render(prov: &Provenance, header: &[String], rows: &[Vec<String>]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    writeln!(out, "# config_hash={} seed={}", prov.config_hash, prov.seed)?;
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(header)?;
        for r in rows {
            w.write_record(r)?;
        }
        w.flush()?;
    }
    Ok(out)
}

/// Write via a temporary file and rename, so readers never see a torn file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).with_context(|| format!("writing {}", tmp.display()))?;
    fs::rename(&tmp, path).with_context(|| format!("renaming onto {}", path.display()))?;
    Ok(())
}

fn strings(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

/// Per-episode reward curve: the per-step average reward is the learning metric.
pub fn rewards_csv(prov: &Provenance, records: &[EpisodeRecord]) -> Result<Vec<u8>> {
    let header = strings(&["episode", "controller", "target_1", "target_2", "return", "avg_reward", "buffer_len"]);
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            vec![
                r.episode.to_string(),
                r.controller.as_str().to_string(),
                num(r.target[0]),
                num(r.target[1]),
                num(r.episode_return),
                num(r.average_reward),
                r.buffer_len.to_string(),
            ]
        })
        .collect();
    render(prov, &header, &rows)
}

/// Mean losses of each episode's gradient steps; blank for episodes without updates.
pub fn losses_csv(prov: &Provenance, records: &[EpisodeRecord]) -> Result<Vec<u8>> {
    let header =
        strings(&["episode", "updates", "critic_1", "critic_2", "actor", "alpha", "alpha_loss", "entropy"]);
    let rows: Vec<Vec<String>> = records
        .iter()
        .map(|r| {
            let l = r.losses;
            vec![
                r.episode.to_string(),
                r.updates.to_string(),
                opt(l.map(|l| l.critic1)),
                opt(l.map(|l| l.critic2)),
                opt(l.map(|l| l.actor)),
                opt(l.map(|l| l.alpha)),
                opt(l.map(|l| l.alpha_loss)),
                opt(l.map(|l| l.entropy)),
            ]
        })
        .collect();
    render(prov, &header, &rows)
}

pub fn field_csv(prov: &Provenance, report: &FieldReport) -> Result<Vec<u8>> {
    let header = strings(&["target_1", "target_2", "e_ss"]);
    let rows: Vec<Vec<String>> =
        report.cells.iter().map(|c| vec![num(c.target[0]), num(c.target[1]), num(c.e_ss)]).collect();
    render(prov, &header, &rows)
}

pub fn summary_csv(prov: &Provenance, controller: &str, s: &Summary) -> Result<Vec<u8>> {
    let header = strings(&["controller", "count", "mean", "sd", "median", "q1", "q3", "min", "max"]);
    let row = vec![
        controller.to_string(),
        s.count.to_string(),
        num(s.mean),
        num(s.sd),
        num(s.median),
        num(s.q1),
        num(s.q3),
        num(s.min),
        num(s.max),
    ];
    render(prov, &header, &[row])
}

/// One row per state; action, voltage and reward columns of the final row are blank.
pub fn episode_csv(prov: &Provenance, log: &EpisodeLog, period: f64) -> Result<Vec<u8>> {
    let a_dim = log.actions.first().map_or(0, Vec::len);
    let muscles = log.states[0].temps.len();
    let mut header = strings(&["t", "angle_1", "rate_1", "angle_2", "rate_2", "target_1", "target_2"]);
    header.extend((1..=a_dim).map(|j| format!("action_{j}")));
    header.extend((1..=muscles).map(|j| format!("voltage_{j}")));
    header.extend((1..=muscles).map(|j| format!("temp_{j}")));
    header.push("reward".into());
    let rows: Vec<Vec<String>> = log
        .states
        .iter()
        .enumerate()
        .map(|(k, s)| {
            let mut row = vec![
                num(k as f64 * period),
                num(s.angles[0]),
                num(s.rates[0]),
                num(s.angles[1]),
                num(s.rates[1]),
                num(log.target[0]),
                num(log.target[1]),
            ];
            match (log.actions.get(k), log.voltages.get(k)) {
                (Some(a), Some(v)) => {
                    row.extend(a.iter().copied().map(num));
                    row.extend(v.iter().copied().map(num));
                }
                _ => row.extend(std::iter::repeat_n(String::new(), a_dim + muscles)),
            }
            row.extend(s.temps.iter().copied().map(num));
            row.push(opt(log.rewards.get(k).copied()));
            row
        })
        .collect();
    render(prov, &header, &rows)
}
