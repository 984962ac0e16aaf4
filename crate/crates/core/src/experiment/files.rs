//! Run-directory files. Column orders are fixed:
//!
//! - `epochs.csv`: `epoch, mean_loss, psnr_1..psnr_N, next_1..next_N, instances, wall_secs`
//! - `allocations.csv`: `epoch, level_1..level_N` (the allocation each epoch trained under)
//! - `test_report.csv`: `level, trial, l2_permille, psnr`
//! - `sweep.csv`: `level, psnr_mean, l2_permille_mean, psnr_se, l2_permille_se`
//! - `comparison.csv`: `scheduler, l2_permille, psnr, level6_l2_permille, level6_psnr, instances`

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{RunConfig, Seeds};
use crate::error::{Error, Result};
use crate::harness::{EpochReport, TestReport, TrainerState};

pub const MANIFEST: &str = "manifest.toml";
pub const EPOCHS: &str = "epochs.csv";
pub const ALLOCATIONS: &str = "allocations.csv";
pub const TEST_REPORT: &str = "test_report.csv";
pub const SWEEP: &str = "sweep.csv";
pub const COMPARISON: &str = "comparison.csv";
pub const CHECKPOINT: &str = "checkpoint.odlr";
pub const STATE: &str = "state.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetInfo {
    pub source: String,
    pub digest: String,
    pub channels: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
    pub fill: Vec<f64>,
    pub preprocessing: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunFiles {
    pub epochs: String,
    pub allocations: String,
    pub checkpoint: String,
    pub test_report: String,
    pub sweep: String,
}

impl Default for RunFiles {
    fn default() -> Self {
        Self {
            epochs: EPOCHS.into(),
            allocations: ALLOCATIONS.into(),
            checkpoint: CHECKPOINT.into(),
            test_report: TEST_REPORT.into(),
            sweep: SWEEP.into(),
        }
    }
}

/// Everything needed to replay a run on the same inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub software: String,
    pub status: String,
    /// Seeds with every derived value written out.
    pub seeds: Seeds,
    pub dataset: DatasetInfo,
    pub files: RunFiles,
    pub config: RunConfig,
}

impl RunManifest {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        toml::from_str(&text).map_err(|e| Error::Data(format!("{}: {}", path.display(), e.message())))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = toml::to_string(self).map_err(|e| Error::Data(format!("manifest: {e}")))?;
        write_file(&dir.join(MANIFEST), text.as_bytes())
    }
}

/// Trainer state plus the reports so far, saved beside each checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SavedState {
    pub trainer: TrainerState,
    pub reports: Vec<EpochReport>,
}

impl SavedState {
    pub fn read(dir: &Path) -> Result<Self> {
        let path = dir.join(STATE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let text = serde_json::to_string(self).expect("state serializes");
        write_file(&dir.join(STATE), text.as_bytes())
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Data(format!("{}: {e}", path.display()))
}

fn write_rows(path: &Path, header: &[String], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for r in rows {
        w.write_record(r).map_err(|e| csv_error(path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    write_file(path, &bytes)
}

/// Header and string rows of a CSV file.
pub fn read_rows(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = r.headers().map_err(|e| csv_error(path, e))?.iter().map(String::from).collect();
    let rows = r
        .records()
        .map(|rec| rec.map(|r| r.iter().map(String::from).collect()).map_err(|e| csv_error(path, e)))
        .collect::<Result<Vec<Vec<String>>>>()?;
    Ok((header, rows))
}

fn numbered(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |i| format!("{prefix}_{i}"))
}

pub fn write_epochs(path: &Path, reports: &[EpochReport], levels: usize) -> Result<()> {
    let mut header = vec!["epoch".to_string(), "mean_loss".into()];
    header.extend(numbered("psnr", levels));
    header.extend(numbered("next", levels));
    header.extend(["instances".to_string(), "wall_secs".into()]);
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let mut row = vec![r.epoch.to_string(), r.mean_loss.to_string()];
            row.extend(r.psnr.iter().map(|p| p.to_string()));
            row.extend(r.next_allocation.counts().iter().map(|c| c.to_string()));
            row.extend([r.instances.to_string(), format!("{:.3}", r.wall_secs)]);
            row
        })
        .collect();
    write_rows(path, &header, &rows)
}

pub fn write_allocations(path: &Path, reports: &[EpochReport], levels: usize) -> Result<()> {
    let mut header = vec!["epoch".to_string()];
    header.extend(numbered("level", levels));
    let rows: Vec<Vec<String>> = reports
        .iter()
        .map(|r| {
            let mut row = vec![r.epoch.to_string()];
            row.extend(r.allocation.counts().iter().map(|c| c.to_string()));
            row
        })
        .collect();
    write_rows(path, &header, &rows)
}

pub fn write_test_report(path: &Path, report: &TestReport) -> Result<()> {
    let header: Vec<String> = ["level", "trial", "l2_permille", "psnr"].map(String::from).to_vec();
    let rows: Vec<Vec<String>> = report
        .levels
        .iter()
        .flat_map(|l| {
            (0..l.trial_psnr.len()).map(move |t| {
                vec![
                    l.level.to_string(),
                    (t + 1).to_string(),
                    l.trial_l2[t].to_string(),
                    l.trial_psnr[t].to_string(),
                ]
            })
        })
        .collect();
    write_rows(path, &header, &rows)
}

pub fn write_sweep(path: &Path, report: &TestReport) -> Result<()> {
    let header: Vec<String> = ["level", "psnr_mean", "l2_permille_mean", "psnr_se", "l2_permille_se"]
        .map(String::from)
        .to_vec();
    let rows: Vec<Vec<String>> = report
        .levels
        .iter()
        .map(|l| {
            vec![
                l.level.to_string(),
                l.psnr_mean.to_string(),
                l.l2_mean.to_string(),
                l.psnr_se.to_string(),
                l.l2_se.to_string(),
            ]
        })
        .collect();
    write_rows(path, &header, &rows)
}

/// One row of a sweep file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepRow {
    pub level: u8,
    pub psnr_mean: f64,
    pub l2_mean: f64,
    pub psnr_se: f64,
    pub l2_se: f64,
}

pub fn read_sweep(path: &Path) -> Result<Vec<SweepRow>> {
    let (_, rows) = read_rows(path)?;
    let bad = |what: &str| Error::Data(format!("{}: bad {what}", path.display()));
    rows.iter()
        .map(|r| {
            if r.len() != 5 {
                return Err(bad("row width"));
            }
            let f = |i: usize| r[i].parse::<f64>().map_err(|_| bad("number"));
            Ok(SweepRow {
                level: r[0].parse().map_err(|_| bad("level"))?,
                psnr_mean: f(1)?,
                l2_mean: f(2)?,
                psnr_se: f(3)?,
                l2_se: f(4)?,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct ComparisonRow {
    pub scheduler: String,
    pub l2_permille: f64,
    pub psnr: f64,
    pub level6_l2: Option<f64>,
    pub level6_psnr: Option<f64>,
    pub instances: u64,
}

pub fn write_comparison(path: &Path, rows: &[ComparisonRow]) -> Result<()> {
    let header: Vec<String> = ["scheduler", "l2_permille", "psnr", "level6_l2_permille", "level6_psnr", "instances"]
        .map(String::from)
        .to_vec();
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.scheduler.clone(),
                r.l2_permille.to_string(),
                r.psnr.to_string(),
                opt(r.level6_l2),
                opt(r.level6_psnr),
                r.instances.to_string(),
            ]
        })
        .collect();
    write_rows(path, &header, &body)
}
