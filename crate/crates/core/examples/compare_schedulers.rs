//! Every training regime under one instance budget, tabulated.
//!
//! `cargo run --release --example compare_schedulers -- [epochs] [out_dir]`

use std::path::PathBuf;

use odl::experiment::{compare, report, RunConfig};
use odl::schedule::SchedulerKind;

fn main() -> odl::Result<()> {
    let mut args = std::env::args().skip(1);
    let epochs = args.next().map(|s| s.parse().expect("epochs")).unwrap_or(10);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "runs/compare".into()));

    let mut cfg = RunConfig::default();
    cfg.epochs = epochs;
    cfg.network.encoder_channels = vec![8, 16, 32, 64];
    cfg.data.synthetic = Some(1200);
    cfg.data.train_size = 1000;
    cfg.eval.trials = 3;
    cfg.hard_mining.warmup_epochs = epochs / 3;

    let kinds = [
        SchedulerKind::RigidJoint,
        SchedulerKind::StagedCurriculum,
        SchedulerKind::StagedAnti,
        SchedulerKind::CumulativeCurriculum,
        SchedulerKind::CumulativeAnti,
        SchedulerKind::HardMining,
        SchedulerKind::OnDemand,
    ];
    compare(&cfg, &kinds, &out)?;
    println!("{}", report(&[out])?);
    Ok(())
}
