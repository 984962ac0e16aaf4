//! Trains a narrow denoiser with the on-demand scheduler on procedural
//! images and prints how the per-level allocation moves.
//!
//! `cargo run --release --example train_on_demand -- [epochs] [out_dir]`
//!
//! Point `ODL_DATA` at an image directory to train on real pictures instead.

use std::path::PathBuf;

use odl::experiment::{train_run, RunConfig};
use odl::schedule::SchedulerKind;

fn main() -> odl::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map(|s| s.parse().expect("epochs")).unwrap_or(20);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "runs/on-demand".into()));

    let mut cfg = RunConfig::default();
    cfg.scheduler = SchedulerKind::OnDemand;
    cfg.epochs = epochs;
    cfg.network.encoder_channels = vec![8, 16, 32, 64];
    cfg.eval.trials = 3;
    if std::env::var_os(odl::experiment::DATA_ENV).is_none() {
        cfg.data.synthetic = Some(2400);
    }

    let run = train_run(&cfg, &out, false)?;
    println!("epoch  validation PSNR per level              next allocation");
    for r in &run.reports {
        let p: Vec<String> = r.psnr.iter().map(|p| format!("{p:5.2}")).collect();
        println!("{:>5}  {}  {}", r.epoch, p.join(" "), r.next_allocation);
    }
    println!("\ntest sweep (mean of {} trials):", cfg.eval.trials);
    for l in &run.test.levels {
        println!("  level {}: {:6.2} dB  {:7.3} permille", l.level, l.psnr_mean, l.l2_mean);
    }
    println!("files in {}", run.dir.display());
    Ok(())
}
