//! Complete runs on disk: dataset preparation, training with checkpoints and
//! resumption, evaluation, restoration of image files, scheduler comparison
//! and report tables.
//!
//! Evaluation always runs the checkpointed weights in `f64`. A network
//! trained in `f32` widens losslessly, so evaluating right after training
//! and evaluating a reloaded checkpoint give identical numbers.

mod config;
pub mod files;

pub use config::{DataConfig, EvalConfig, NetworkShape, Precision, RunConfig, Seeds, DATA_ENV};
pub use files::{ComparisonRow, DatasetInfo, RunManifest, SavedState, SweepRow};

use std::fs;
use std::path::{Path, PathBuf};

use crate::checkpoint::{load_checkpoint, load_network, Checkpoint};
use crate::corrupt::TaskKind;
use crate::data::{self, DatasetSplit, ImageRecord, PATCH};
use crate::error::{Error, Result};
use crate::harness::{evaluate_test, tile_restore, EpochReport, SubtaskValidator, TestReport, Trainer};
use crate::metrics;
use crate::model::{Model, Restorer, Trainable};
use crate::net::EncoderDecoder;
use crate::schedule::SchedulerKind;
use crate::tensor::{Scalar, Tensor4};

pub const PREPROCESSING: &str = "center crop to square, bilinear resize to 64x64, Rec. 601 luma for grayscale, v/127.5 - 1";

/// Images of one run, split and stacked.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub split: DatasetSplit,
    pub train: Tensor4<f64>,
    pub val: Tensor4<f64>,
    pub test: Tensor4<f64>,
    pub info: DatasetInfo,
}

fn source_records(cfg: &DataConfig, channels: usize) -> Result<(Vec<ImageRecord>, String)> {
    if let Some(n) = cfg.synthetic {
        return Ok((
            data::synthetic_images(n, channels, PATCH, cfg.synthetic_seed),
            format!("synthetic:{n}:{}", cfg.synthetic_seed),
        ));
    }
    let dir = cfg.source_dir().ok_or_else(|| {
        Error::Config(format!("no data source: set data.dir, data.synthetic or ${DATA_ENV}"))
    })?;
    Ok((data::ingest(&dir, channels, PATCH)?, dir.display().to_string()))
}

pub fn load_dataset(cfg: &DataConfig, channels: usize, split_seed: u64) -> Result<Dataset> {
    let (records, source) = source_records(cfg, channels)?;
    let sizes = cfg.sizes(records.len())?;
    let split = data::split(&records, sizes, split_seed)?;
    let train = data::gather(&records, &split.train)?;
    let fill = data::mean_fill(&train)?;
    let info = DatasetInfo {
        source,
        digest: data::digest(&records, &split),
        channels,
        train: sizes.0,
        val: sizes.1,
        test: sizes.2,
        fill,
        preprocessing: PREPROCESSING.into(),
    };
    Ok(Dataset {
        val: data::gather(&records, &split.val)?,
        test: data::gather(&records, &split.test)?,
        train,
        split,
        info,
    })
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub reports: Vec<EpochReport>,
    pub test: TestReport,
}

impl RunOutcome {
    /// Training instances drawn over the whole run.
    pub fn instances(&self) -> u64 {
        self.reports.iter().map(|r| r.instances as u64).sum()
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Trains per `cfg` into `out`, then evaluates on the test split. With
/// `resume`, continues from the checkpoint and state already in `out`.
pub fn train_run(cfg: &RunConfig, out: &Path, resume: bool) -> Result<RunOutcome> {
    cfg.validate()?;
    create_dir(out)?;
    let seeds = cfg.seeds.resolved();
    if resume {
        let prev = RunManifest::read(out)?;
        if prev.config != *cfg {
            return Err(Error::Config(format!(
                "{} was produced by a different configuration; resume needs the same one",
                out.display()
            )));
        }
    }
    let dataset = load_dataset(&cfg.data, cfg.channels(), seeds.split.expect("resolved"))?;
    let mut manifest = RunManifest {
        software: format!("odl {}", env!("CARGO_PKG_VERSION")),
        status: "running".into(),
        seeds: seeds.clone(),
        dataset: dataset.info.clone(),
        files: files::RunFiles::default(),
        config: cfg.clone(),
    };
    manifest.write(out)?;
    let result = match cfg.precision {
        Precision::F32 => train_in::<f32>(cfg, &dataset, out, resume),
        Precision::F64 => train_in::<f64>(cfg, &dataset, out, resume),
    };
    let (reports, model) = match result {
        Ok(r) => r,
        Err(e) => {
            manifest.status = format!("failed: {e}");
            manifest.write(out)?;
            return Err(e);
        }
    };
    let test = evaluate_test(
        &model,
        &dataset.test,
        cfg.task,
        &dataset.info.fill,
        cfg.eval.trials,
        &cfg.eval.levels,
        seeds.test.expect("resolved"),
    )?;
    files::write_test_report(&out.join(files::TEST_REPORT), &test)?;
    files::write_sweep(&out.join(files::SWEEP), &test)?;
    manifest.status = "complete".into();
    manifest.write(out)?;
    Ok(RunOutcome {
        dir: out.to_path_buf(),
        manifest,
        reports,
        test,
    })
}

fn train_in<T: Scalar>(
    cfg: &RunConfig,
    dataset: &Dataset,
    out: &Path,
    resume: bool,
) -> Result<(Vec<EpochReport>, EncoderDecoder<f64>)> {
    let tcfg = cfg.train_config();
    let fill = &dataset.info.fill;
    let ckpt = out.join(files::CHECKPOINT);
    let (mut net, mut trainer, mut reports) = if resume && out.join(files::STATE).exists() {
        let saved = SavedState::read(out)?;
        let net = load_network::<T>(&ckpt)?;
        let trainer = Trainer::resume(&tcfg, &dataset.train, fill, saved.trainer)?;
        log::info!("resuming {} after epoch {}", out.display(), trainer.epochs_done());
        (net, trainer, saved.reports)
    } else {
        let net = EncoderDecoder::<T>::build(cfg.network_config())?;
        (net, Trainer::new(&tcfg, &dataset.train, fill)?, Vec::new())
    };
    let mut validator = SubtaskValidator {
        images: dataset.val.clone(),
        task: cfg.task,
        levels: cfg.levels,
        fill: fill.clone(),
        seed: cfg.seeds.resolved().validation.expect("resolved"),
        fixed: cfg.fixed_validation,
    };
    let every = cfg.checkpoint_every.max(1);
    while !trainer.finished() {
        let r = trainer.run_epoch(&mut net, &mut validator)?;
        log::info!(
            "{} epoch {}/{} loss {:.5} psnr [{}] next {}",
            cfg.scheduler,
            r.epoch,
            cfg.epochs,
            r.mean_loss,
            r.psnr.iter().map(|p| format!("{p:.2}")).collect::<Vec<_>>().join(", "),
            r.next_allocation
        );
        reports.push(r);
        files::write_epochs(&out.join(files::EPOCHS), &reports, cfg.levels)?;
        files::write_allocations(&out.join(files::ALLOCATIONS), &reports, cfg.levels)?;
        if trainer.epochs_done() % every == 0 || trainer.finished() {
            Trainable::save(&net, Some(cfg.task), &ckpt)?;
            SavedState {
                trainer: trainer.state(),
                reports: reports.clone(),
            }
            .write(out)?;
        }
    }
    Ok((reports, net.cast()))
}

/// Test images and fill for evaluating outside a run: the test split of a
/// run directory, or every image of a data source.
#[derive(Debug, Clone)]
pub struct EvalData {
    pub images: Tensor4<f64>,
    pub fill: Vec<f64>,
}

impl EvalData {
    pub fn from_run(dir: &Path) -> Result<Self> {
        let m = RunManifest::read(dir)?;
        let d = load_dataset(&m.config.data, m.dataset.channels, m.seeds.split.expect("resolved seeds"))?;
        if d.info.digest != m.dataset.digest {
            return Err(Error::Data(format!(
                "dataset behind {} changed since the run (digest mismatch)",
                dir.display()
            )));
        }
        Ok(Self {
            images: d.test,
            fill: m.dataset.fill,
        })
    }

    /// All images of `cfg`'s source. With no training set to average, holes
    /// are filled with mid-gray.
    pub fn from_source(cfg: &DataConfig, channels: usize) -> Result<Self> {
        let (records, _) = source_records(cfg, channels)?;
        let ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
        let images = data::gather(&records, &ids)?;
        Ok(Self {
            images,
            fill: vec![0.0; channels],
        })
    }
}

/// Loads a checkpoint in `f64`, checking it against the requested task.
pub fn load_model(path: &Path, task: Option<TaskKind>) -> Result<(Model<f64>, TaskKind)> {
    let Checkpoint { model, task: stored } = load_checkpoint::<f64>(path)?;
    let task = match (stored, task) {
        (Some(s), Some(t)) if s != t => {
            return Err(Error::Config(format!(
                "checkpoint {} was trained for {s} but {t} was requested",
                path.display()
            )))
        }
        (Some(s), _) => s,
        (None, Some(t)) => t,
        (None, None) => {
            return Err(Error::Config(format!(
                "checkpoint {} records no task; pass one explicitly",
                path.display()
            )))
        }
    };
    if model.channels() != task.channels() {
        return Err(Error::Config(format!(
            "checkpoint {} takes {} channels but {task} images have {}",
            path.display(),
            model.channels(),
            task.channels()
        )));
    }
    Ok((model, task))
}

/// Evaluates a checkpoint and, with `out`, writes the test report and sweep there.
pub fn eval_checkpoint(
    checkpoint: &Path,
    task: Option<TaskKind>,
    data: &EvalData,
    eval: &EvalConfig,
    seed: u64,
    out: Option<&Path>,
) -> Result<TestReport> {
    let (model, task) = load_model(checkpoint, task)?;
    let report = evaluate_test(&model, &data.images, task, &data.fill, eval.trials, &eval.levels, seed)?;
    if let Some(dir) = out {
        create_dir(dir)?;
        files::write_test_report(&dir.join(files::TEST_REPORT), &report)?;
        files::write_sweep(&dir.join(files::SWEEP), &report)?;
    }
    Ok(report)
}

/// Tile-restores `input` and writes the PNG. With a reference image,
/// returns the PSNR of the written (8-bit) output against it.
pub fn restore_file(checkpoint: &Path, input: &Path, output: &Path, reference: Option<&Path>) -> Result<Option<f64>> {
    let Checkpoint { model, .. } = load_checkpoint::<f64>(checkpoint)?;
    let image = data::read_image(input, model.channels())?;
    let d = image.dims();
    let p = model.patch_size();
    if d.h < p || d.w < p {
        return Err(Error::Data(format!(
            "{} is {}x{}; restoration needs at least {p}x{p}, so upscale it first",
            input.display(),
            d.w,
            d.h
        )));
    }
    let restored = tile_restore(&model, &image)?;
    data::write_image(output, &restored)?;
    match reference {
        None => Ok(None),
        Some(r) => {
            let written = data::read_image(output, model.channels())?;
            let reference = data::read_image(r, model.channels())?;
            Ok(Some(metrics::psnr(&written, &reference)?))
        }
    }
}

fn dir_name(kind: &SchedulerKind) -> String {
    kind.name().replace([':', '.'], "_")
}

/// Trains every scheduler kind under the same budget and seeds. Completed
/// rows are written even if a later run fails.
pub fn compare(cfg: &RunConfig, kinds: &[SchedulerKind], out: &Path) -> Result<Vec<ComparisonRow>> {
    if kinds.is_empty() {
        return Err(Error::Config("compare needs at least one scheduler".into()));
    }
    create_dir(out)?;
    let mut rows = Vec::new();
    let mut first_error = None;
    for kind in kinds {
        let mut c = cfg.clone();
        c.scheduler = *kind;
        match train_run(&c, &out.join(dir_name(kind)), false) {
            Ok(run) => rows.push(comparison_row(kind.name(), &run.test, cfg.levels, run.instances())),
            Err(e) => {
                log::error!("{kind} failed: {e}");
                first_error.get_or_insert(e);
            }
        }
        files::write_comparison(&out.join(files::COMPARISON), &rows)?;
    }
    if let Some(e) = first_error {
        return Err(e);
    }
    if rows.windows(2).any(|w| w[0].instances != w[1].instances) {
        return Err(Error::Config(format!(
            "training budgets differ across schedulers: {:?}",
            rows.iter().map(|r| (&r.scheduler, r.instances)).collect::<Vec<_>>()
        )));
    }
    Ok(rows)
}

pub fn comparison_row(scheduler: String, test: &TestReport, levels: usize, instances: u64) -> ComparisonRow {
    let (l2, psnr) = test.summary(levels);
    let extra = test.level(crate::corrupt::MAX_LEVEL);
    ComparisonRow {
        scheduler,
        l2_permille: l2,
        psnr,
        level6_l2: extra.map(|l| l.l2_mean),
        level6_psnr: extra.map(|l| l.psnr_mean),
        instances,
    }
}

/// Mean L2 (permille) and PSNR over levels `1..=levels` of a sweep file.
pub fn sweep_summary(rows: &[SweepRow], levels: usize) -> (f64, f64) {
    let picked: Vec<&SweepRow> = rows.iter().filter(|r| (r.level as usize) <= levels).collect();
    let k = picked.len() as f64;
    (
        picked.iter().map(|r| r.l2_mean).sum::<f64>() / k,
        picked.iter().map(|r| r.psnr_mean).sum::<f64>() / k,
    )
}

/// A plain-text table summarising run or comparison directories.
pub fn report(dirs: &[PathBuf]) -> Result<String> {
    let mut lines = vec![format!("{:<28} {:>10} {:>10} {:>12} {:>12}", "run", "L2 (‰)", "PSNR", "L6 L2 (‰)", "L6 PSNR")];
    for dir in dirs {
        let comparison = dir.join(files::COMPARISON);
        if comparison.exists() {
            let (_, rows) = files::read_rows(&comparison)?;
            for r in rows {
                lines.push(format!(
                    "{:<28} {:>10} {:>10} {:>12} {:>12}",
                    r[0],
                    short(&r[1]),
                    short(&r[2]),
                    short(&r[3]),
                    short(&r[4])
                ));
            }
            continue;
        }
        let manifest = RunManifest::read(dir)?;
        let sweep = files::read_sweep(&dir.join(files::SWEEP))?;
        let (l2, psnr) = sweep_summary(&sweep, manifest.config.levels);
        let extra = sweep.iter().find(|r| r.level == crate::corrupt::MAX_LEVEL);
        lines.push(format!(
            "{:<28} {:>10.3} {:>10.2} {:>12} {:>12}",
            manifest.config.scheduler.name(),
            l2,
            psnr,
            extra.map(|r| format!("{:.3}", r.l2_mean)).unwrap_or_default(),
            extra.map(|r| format!("{:.2}", r.psnr_mean)).unwrap_or_default()
        ));
    }
    Ok(lines.join("\n"))
}

fn short(cell: &str) -> String {
    cell.parse::<f64>().map(|v| format!("{v:.3}")).unwrap_or_else(|_| cell.to_string())
}
