//! Models fixated on one noise level against an on-demand all-rounder,
//! evaluated across every level.
//!
//! `cargo run --release --example fixation_sweep -- [epochs] [out_dir]`
//!
//! The split only shows up after long training (about 100 epochs); short
//! runs leave all three models close together.

use std::path::PathBuf;

use odl::experiment::{train_run, RunConfig};
use odl::schedule::{FixedTarget, SchedulerKind};

fn main() -> odl::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map(|s| s.parse().expect("epochs")).unwrap_or(30);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "runs/fixation".into()));
    let kinds = [
        SchedulerKind::Fixated(FixedTarget::Value(10.0)),
        SchedulerKind::Fixated(FixedTarget::Value(90.0)),
        SchedulerKind::OnDemand,
    ];

    let mut rows = Vec::new();
    for kind in kinds {
        let mut cfg = RunConfig::default();
        cfg.scheduler = kind;
        cfg.epochs = epochs;
        cfg.network.encoder_channels = vec![8, 16, 64, 256];
        cfg.data.synthetic = Some(2400);
        cfg.eval.trials = 3;
        let run = train_run(&cfg, &out.join(kind.to_string().replace(':', "_")), false)?;
        rows.push((kind, run.test));
    }

    print!("{:<14}", "level");
    for (kind, _) in &rows {
        print!("{:>14}", kind.to_string());
    }
    println!();
    for i in 0..rows[0].1.levels.len() {
        print!("{:<14}", rows[0].1.levels[i].level);
        for (_, t) in &rows {
            print!("{:>14.2}", t.levels[i].psnr_mean);
        }
        println!();
    }
    print!("{:<14}", "mean 1-5");
    for (_, t) in &rows {
        print!("{:>14.2}", t.summary(5).1);
    }
    println!();
    Ok(())
}
