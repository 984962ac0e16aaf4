//! How validation PSNR turns into per-level batch counts.
//!
//! `cargo run --example allocation`

use odl::schedule::{on_demand_allocate, select_hard, SchedulerKind, SchedulerState};
use odl::corrupt::TaskKind;

fn main() {
    let cases: [&[f64]; 4] = [
        &[30.0, 30.0, 30.0, 30.0, 30.0],
        &[20.0, 25.0, 30.0, 35.0, 40.0],
        &[38.1, 33.4, 30.2, 27.9, 26.0],
        &[90.0, 5.0, 5.0, 5.0, 5.0],
    ];
    for p in cases {
        let a = on_demand_allocate(p, 100).unwrap();
        println!("P = {p:?}\n  -> {a}");
    }

    println!("\nper-epoch allocations of each fixed schedule (10 epochs, 5 levels, batch 100):");
    for kind in [
        SchedulerKind::RigidJoint,
        SchedulerKind::StagedCurriculum,
        SchedulerKind::StagedAnti,
        SchedulerKind::CumulativeCurriculum,
        SchedulerKind::CumulativeAnti,
        SchedulerKind::Fixated(odl::schedule::FixedTarget::Value(25.0)),
    ] {
        let mut s = SchedulerState::new(kind, TaskKind::Denoise, 5, 2).unwrap();
        let line: Vec<String> = (0..10)
            .map(|e| {
                s.epoch = e;
                s.allocate(100).unwrap().to_string()
            })
            .collect();
        println!("{:>22}: {}", kind.to_string(), line.join(" "));
    }

    let losses = [0.2, 0.9, 0.1, 0.9, 0.5];
    println!("\nhardest 3 of {losses:?}: {:?}", select_hard(&losses, 3));
}
