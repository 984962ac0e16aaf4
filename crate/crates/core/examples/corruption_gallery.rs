//! Writes one procedural image under every task and difficulty level.
//!
//! `cargo run --example corruption_gallery -- [out_dir]`
//!
//! Files are named `<task>_L<level>.png`; `clean.png` is the source.

use std::path::PathBuf;

use odl::corrupt::{apply, bins, level_of, sample_spec, TaskKind, MAX_LEVEL};
use odl::data::{mean_fill, synthetic_images, write_image};
use odl::metrics::psnr;
use odl::rng::Stream;

fn main() -> odl::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "gallery".into()));
    std::fs::create_dir_all(&out).map_err(|e| odl::Error::io(&out, e))?;
    let color = synthetic_images(8, 3, 64, 11).swap_remove(3).pixels;
    let gray = synthetic_images(8, 1, 64, 11).swap_remove(3).pixels;
    write_image(&out.join("clean.png"), &color)?;

    for task in TaskKind::ALL {
        let source = if task.channels() == 1 { &gray } else { &color };
        let fill = mean_fill(source)?;
        println!("{task}");
        for level in 1..=MAX_LEVEL {
            let mut rng = Stream::keyed(5, &[task.code() as u64, level as u64]);
            let spec = sample_spec(task, level, (64, 64), &mut rng)?;
            let bin = bins(task)[level as usize - 1];
            assert_eq!(level_of(&spec)?, level);
            let corrupted = apply(source, &spec, &fill)?;
            write_image(&out.join(format!("{task}_L{level}.png")), &corrupted)?;
            println!(
                "  L{level} [{:>6.2}, {:>6.2}]  difficulty {:>7.3}  PSNR vs clean {:>6.2} dB",
                bin.lo,
                bin.hi,
                spec.params.difficulty(),
                psnr(&corrupted, source)?
            );
        }
    }
    println!("wrote {}", out.display());
    Ok(())
}
