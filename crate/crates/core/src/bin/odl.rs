use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use odl::corrupt::TaskKind;
use odl::experiment::{self, DataConfig, EvalData, Precision, RunConfig, DATA_ENV};
use odl::schedule::SchedulerKind;
use odl::{Error, Result};

#[derive(Parser)]
#[command(name = "odl", version, about = "Train and evaluate image restorers across difficulty levels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one scheduler and evaluate on the test split.
    Train(TrainArgs),
    /// Evaluate a checkpoint over the difficulty levels.
    Eval(EvalArgs),
    /// Restore an image of any size with overlapping windows.
    Restore(RestoreArgs),
    /// Train several schedulers under one budget and tabulate them.
    Compare(CompareArgs),
    /// Summarise run or comparison directories.
    Report(ReportArgs),
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML config; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Image directory (default: $ODL_DATA).
    #[arg(long)]
    data: Option<PathBuf>,
    /// Use this many procedural images instead of a directory.
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long)]
    task: Option<TaskKind>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    train_size: Option<usize>,
    #[arg(long)]
    val_size: Option<usize>,
    #[arg(long)]
    test_size: Option<usize>,
    #[arg(long)]
    batch: Option<usize>,
    #[arg(long)]
    batches_per_epoch: Option<usize>,
    #[arg(long)]
    stage_length: Option<usize>,
    /// Master seed; every unset seed derives from it.
    #[arg(long)]
    seed: Option<u64>,
    /// Encoder widths, e.g. 8,16,32,64.
    #[arg(long, value_delimiter = ',')]
    widths: Option<Vec<usize>>,
    #[arg(long, value_parser = parse_precision)]
    precision: Option<Precision>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    checkpoint_every: Option<usize>,
    #[arg(long)]
    fixed_validation: bool,
    /// Single-threaded, bit-reproducible execution.
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long)]
    scheduler: Option<SchedulerKind>,
    #[arg(long)]
    out: PathBuf,
    /// Continue from the checkpoint in --out.
    #[arg(long)]
    resume: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Evaluate on the test split of this run directory.
    #[arg(long, conflicts_with_all = ["data", "synthetic"])]
    run: Option<PathBuf>,
    /// Evaluate on every image of this directory (default: $ODL_DATA).
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    synthetic: Option<usize>,
    #[arg(long)]
    task: Option<TaskKind>,
    #[arg(long, default_value_t = 20)]
    trials: usize,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5,6")]
    levels: Vec<u8>,
    /// Levels averaged in the summary line.
    #[arg(long, default_value_t = 5)]
    summary_levels: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Directory for test_report.csv and sweep.csv.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    deterministic: bool,
}

#[derive(Args)]
struct RestoreArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    output: PathBuf,
    /// Clean image to report PSNR against.
    #[arg(long)]
    reference: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    #[command(flatten)]
    run: RunArgs,
    #[arg(long, value_delimiter = ',', required = true)]
    schedulers: Vec<SchedulerKind>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(required = true)]
    dirs: Vec<PathBuf>,
}

fn parse_precision(s: &str) -> std::result::Result<Precision, String> {
    match s {
        "f32" => Ok(Precision::F32),
        "f64" => Ok(Precision::F64),
        other => Err(format!("expected f32 or f64, got {other:?}")),
    }
}

fn run_config(a: &RunArgs, scheduler: Option<SchedulerKind>) -> Result<RunConfig> {
    let mut c = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(n) = a.synthetic {
        c.data.synthetic = Some(n);
        c.data.dir = None;
    } else if let Some(d) = &a.data {
        c.data.dir = Some(d.clone());
        c.data.synthetic = None;
    }
    macro_rules! set {
        ($field:expr, $flag:expr) => {
            if let Some(v) = $flag.clone() {
                $field = v;
            }
        };
    }
    set!(c.task, a.task);
    set!(c.scheduler, scheduler);
    set!(c.epochs, a.epochs);
    set!(c.data.train_size, a.train_size);
    set!(c.batch_size, a.batch);
    set!(c.seeds.master, a.seed);
    set!(c.network.encoder_channels, a.widths);
    set!(c.precision, a.precision);
    set!(c.eval.trials, a.trials);
    set!(c.checkpoint_every, a.checkpoint_every);
    if a.val_size.is_some() {
        c.data.val_size = a.val_size;
    }
    if a.test_size.is_some() {
        c.data.test_size = a.test_size;
    }
    if a.batches_per_epoch.is_some() {
        c.batches_per_epoch = a.batches_per_epoch;
    }
    if a.stage_length.is_some() {
        c.stage_length = a.stage_length;
    }
    if a.fixed_validation {
        c.fixed_validation = true;
    }
    if a.deterministic {
        log::info!("deterministic mode: single-threaded execution");
    }
    c.validate()?;
    Ok(c)
}

fn summary_line(report: &odl::harness::TestReport, levels: usize) -> String {
    let (l2, psnr) = report.summary(levels);
    format!("mean over levels 1-{levels}: L2 {l2:.3} permille, PSNR {psnr:.2} dB")
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => {
            let cfg = run_config(&a.run, a.scheduler)?;
            let outcome = experiment::train_run(&cfg, &a.out, a.resume)?;
            println!("{}", summary_line(&outcome.test, cfg.levels));
            println!("run directory: {}", outcome.dir.display());
        }
        Command::Eval(a) => {
            let dir = a.data.clone().or_else(|| std::env::var_os(DATA_ENV).map(PathBuf::from));
            let data = match (&a.run, a.synthetic, &dir) {
                (Some(dir), _, _) => EvalData::from_run(dir)?,
                (None, Some(n), _) => EvalData::from_source(
                    &DataConfig {
                        synthetic: Some(n),
                        ..Default::default()
                    },
                    channels_for(&a)?,
                )?,
                (None, None, Some(dir)) => EvalData::from_source(
                    &DataConfig {
                        dir: Some(dir.clone()),
                        ..Default::default()
                    },
                    channels_for(&a)?,
                )?,
                (None, None, None) => {
                    return Err(Error::Config(format!("eval needs --run, --data, --synthetic or ${DATA_ENV}")))
                }
            };
            let eval = experiment::EvalConfig {
                trials: a.trials,
                levels: a.levels.clone(),
            };
            let report = experiment::eval_checkpoint(&a.checkpoint, a.task, &data, &eval, a.seed, a.out.as_deref())?;
            for l in &report.levels {
                println!(
                    "level {}: PSNR {:.2} dB (se {:.3}), L2 {:.3} permille (se {:.4})",
                    l.level, l.psnr_mean, l.psnr_se, l.l2_mean, l.l2_se
                );
            }
            println!("{}", summary_line(&report, a.summary_levels));
        }
        Command::Restore(a) => {
            let psnr = experiment::restore_file(&a.checkpoint, &a.input, &a.output, a.reference.as_deref())?;
            println!("wrote {}", a.output.display());
            if let Some(p) = psnr {
                println!("PSNR against reference: {p:.4} dB");
            }
        }
        Command::Compare(a) => {
            let cfg = run_config(&a.run, None)?;
            let rows = experiment::compare(&cfg, &a.schedulers, &a.out)?;
            println!("{:<26} {:>10} {:>9} {:>10}", "scheduler", "L2 (‰)", "PSNR", "instances");
            for r in rows {
                println!("{:<26} {:>10.3} {:>9.2} {:>10}", r.scheduler, r.l2_permille, r.psnr, r.instances);
            }
        }
        Command::Report(a) => println!("{}", experiment::report(&a.dirs)?),
    }
    Ok(())
}

/// Channel count for evaluation data: the requested task's, else the checkpoint's.
fn channels_for(a: &EvalArgs) -> Result<usize> {
    match a.task {
        Some(t) => Ok(t.channels()),
        None => Ok(experiment::load_model(&a.checkpoint, None)?.1.channels()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
