//! Restores an image larger than the network's 64x64 window by averaging
//! overlapping patches.
//!
//! `cargo run --release --example tile_restore -- [epochs]`
//!
//! Trains a small denoiser first, then denoises a 100x150 procedural image.

use odl::corrupt::{corrupt_noise, CorruptionParams, CorruptionSpec};
use odl::data::{synthetic_images, write_image};
use odl::experiment::{load_model, train_run, RunConfig};
use odl::harness::{coverage_map, tile_restore, TILE_STRIDE};
use odl::metrics::psnr;

fn main() -> odl::Result<()> {
    let epochs = std::env::args().nth(1).map(|s| s.parse().expect("epochs")).unwrap_or(10);
    let out = std::path::PathBuf::from("runs/tile");

    let mut cfg = RunConfig::default();
    cfg.epochs = epochs;
    cfg.network.encoder_channels = vec![8, 16, 32, 64];
    cfg.data.synthetic = Some(1200);
    cfg.data.train_size = 1000;
    cfg.eval.trials = 1;
    let run = train_run(&cfg, &out, false)?;
    let (model, _) = load_model(&run.dir.join(odl::experiment::files::CHECKPOINT), None)?;

    let clean = synthetic_images(1, 1, 150, 99).swap_remove(0).pixels;
    let clean = odl::Tensor4::from_fn(odl::Dims::new(1, 1, 100, 150), |_, _, y, x| clean.at(0, 0, y + 25, x));
    let spec = CorruptionSpec {
        params: CorruptionParams::Denoise { sigma: 30.0 },
        seed: 4,
    };
    let noisy = corrupt_noise(&clean, &spec)?;
    let restored = tile_restore(&model, &noisy)?;

    let cover = coverage_map(100, 150, 64, TILE_STRIDE);
    let (lo, hi) = (cover.iter().min().unwrap(), cover.iter().max().unwrap());
    println!("windows per pixel: {lo}..{hi}");
    println!("noisy    {:.2} dB", psnr(&noisy, &clean)?);
    println!("restored {:.2} dB", psnr(&restored, &clean)?);
    for (name, t) in [("clean", &clean), ("noisy", &noisy), ("restored", &restored)] {
        write_image(&out.join(format!("{name}.png")), t)?;
    }
    Ok(())
}
