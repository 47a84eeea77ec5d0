//! CSV files written by the experiment commands.
//!
//! `metrics.csv`: `seed,model,epoch,train_loss,val_loss,wall_seconds,route_f,route_p`.
//! The routing columns hold `;`-separated per-expert token fractions and mean
//! gate probabilities for switch models and are empty for dense ones.
//! `val_loss` is empty when no validation split was scored.

use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};
use switchtt::models::TrainReport;

use crate::pipeline::{EpisodeRow, SummaryRow};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub seed: u64,
    pub model: String,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
    pub wall_seconds: f64,
    pub route_f: String,
    pub route_p: String,
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

pub fn rows_from_report(seed: u64, model: &str, report: &TrainReport) -> Vec<MetricsRow> {
    report
        .epochs
        .iter()
        .map(|e| MetricsRow {
            seed,
            model: model.into(),
            epoch: e.epoch,
            train_loss: e.train_loss,
            val_loss: e.val_loss,
            wall_seconds: e.wall_seconds,
            route_f: e.routing.as_ref().map(|r| join(&r.fractions())).unwrap_or_default(),
            route_p: e.routing.as_ref().map(|r| join(&r.mean_probs())).unwrap_or_default(),
        })
        .collect()
}

fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    for r in rows {
        w.serialize(r).with_context(|| format!("writing {}", path.display()))?;
    }
    w.flush().with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn read_rows<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("opening {}", path.display()))?;
    let rows = r
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .with_context(|| format!("malformed CSV {}", path.display()))?;
    if rows.is_empty() {
        bail!("malformed CSV {}: no data rows", path.display());
    }
    Ok(rows)
}

pub fn write_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    if rows.is_empty() {
        // The csv writer only emits a header together with the first row.
        std::fs::write(path, "seed,model,epoch,train_loss,val_loss,wall_seconds,route_f,route_p\n")
            .with_context(|| format!("writing {}", path.display()))?;
        return Ok(());
    }
    write_rows(path, rows)
}

pub fn read_csv(path: &Path) -> Result<Vec<MetricsRow>> {
    read_rows(path)
}

#[derive(Serialize, Deserialize)]
struct EpisodeRecord {
    method: String,
    task: String,
    seed: u64,
    episode: usize,
    #[serde(rename = "return")]
    ret: f64,
}

pub fn write_episodes(path: &Path, rows: &[EpisodeRow]) -> Result<()> {
    let recs: Vec<EpisodeRecord> = rows
        .iter()
        .map(|r| EpisodeRecord { method: r.method.label().into(), task: r.task.clone(), seed: r.seed, episode: r.episode, ret: r.ret })
        .collect();
    write_rows(path, &recs)
}

/// One row of `eval_summary.csv`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub method: String,
    pub task: String,
    pub mean: f64,
    pub std: f64,
    pub seeds: usize,
    pub episodes: usize,
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let recs: Vec<SummaryRecord> = rows
        .iter()
        .map(|r| SummaryRecord {
            method: r.method.label().into(),
            task: r.task.clone(),
            mean: r.mean,
            std: r.std,
            seeds: r.seeds,
            episodes: r.episodes,
        })
        .collect();
    write_rows(path, &recs)
}

pub fn read_summary(path: &Path) -> Result<Vec<SummaryRecord>> {
    read_rows(path)
}
