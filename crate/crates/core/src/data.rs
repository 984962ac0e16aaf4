//! Image ingestion, splitting, fill statistics and image output.
//!
//! Pixels are stored normalized: 8-bit intensity `v` maps to `v / 127.5 - 1`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tensor::{Dims, Tensor4};

/// Side length of every ingested image.
pub const PATCH: usize = 64;

/// Rec. 601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

const EXTENSIONS: [&str; 4] = ["png", "ppm", "pgm", "pnm"];

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    /// Path relative to the ingested directory, with `/` separators.
    pub id: String,
    /// `(1, C, size, size)` in [-1, 1].
    pub pixels: Tensor4<f64>,
    /// Source `(width, height)`.
    pub origin: (u32, u32),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub train: Vec<String>,
    pub val: Vec<String>,
    pub test: Vec<String>,
    pub split_seed: u64,
}

pub fn normalize(v: u8) -> f64 {
    v as f64 / 127.5 - 1.0
}

/// Clamps to [-1, 1], maps to [0, 255] and rounds half up.
pub fn denormalize_value(v: f64) -> u8 {
    let x = (v.clamp(-1.0, 1.0) + 1.0) * 127.5;
    (x + 0.5).floor().min(255.0) as u8
}

fn collect_files(root: &Path, dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    let entries = fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        if path.is_dir() {
            collect_files(root, &path, out)?;
        } else if path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        {
            out.push(path);
        }
    }
    Ok(())
}

fn relative_id(root: &Path, path: &Path) -> String {
    let rel = path.strip_prefix(root).unwrap_or(path);
    rel.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

/// Decodes an image file into `C` planes of 8-bit values as `f64`, row-major.
fn decode(path: &Path, channels: usize) -> Result<(Vec<Vec<f64>>, usize, usize)> {
    let img = image::open(path).map_err(|e| Error::Image {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let raw = rgb.into_raw();
    let planes = if channels == 1 {
        vec![raw
            .chunks_exact(3)
            .map(|p| LUMA[0] * p[0] as f64 + LUMA[1] * p[1] as f64 + LUMA[2] * p[2] as f64)
            .collect()]
    } else {
        (0..3).map(|c| raw.chunks_exact(3).map(|p| p[c] as f64).collect()).collect()
    };
    Ok((planes, h, w))
}

/// Bilinear resampling with pixel-center alignment and edge clamping.
pub fn resize_bilinear(src: &[f64], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(out_h * out_w);
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    for oy in 0..out_h {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            let top = src[y0 * w + x0] * (1.0 - tx) + src[y0 * w + x1] * tx;
            let bottom = src[y1 * w + x0] * (1.0 - tx) + src[y1 * w + x1] * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

/// Loads one file as a `(1, C, size, size)` record: center crop to a
/// square, bilinear resize, optional grayscale, normalization.
pub fn load_record(root: &Path, path: &Path, channels: usize, size: usize) -> Result<ImageRecord> {
    let (planes, h, w) = decode(path, channels)?;
    let side = h.min(w);
    let (top, left) = ((h - side) / 2, (w - side) / 2);
    let mut data = Vec::with_capacity(channels * size * size);
    for plane in &planes {
        let crop: Vec<f64> = (0..side)
            .flat_map(|y| plane[(top + y) * w + left..(top + y) * w + left + side].iter().copied())
            .collect();
        let resized = if side == size {
            crop
        } else {
            resize_bilinear(&crop, side, side, size, size)
        };
        data.extend(resized.into_iter().map(|v| v / 127.5 - 1.0));
    }
    Ok(ImageRecord {
        id: relative_id(root, path),
        pixels: Tensor4::from_vec(Dims::new(1, channels, size, size), data)?,
        origin: (w as u32, h as u32),
    })
}

/// Every decodable PNG/PPM/PGM under `dir`, sorted by id. Undecodable files
/// are skipped with a warning.
pub fn ingest(dir: &Path, channels: usize, size: usize) -> Result<Vec<ImageRecord>> {
    if !matches!(channels, 1 | 3) {
        return Err(Error::Config(format!("channels must be 1 or 3, got {channels}")));
    }
    let mut files = Vec::new();
    collect_files(dir, dir, &mut files)?;
    let mut records: Vec<ImageRecord> = files
        .iter()
        .filter_map(|p| match load_record(dir, p, channels, size) {
            Ok(r) => Some(r),
            Err(e) => {
                log::warn!("skipping {}: {e}", p.display());
                None
            }
        })
        .collect();
    if records.is_empty() {
        return Err(Error::Data(format!("no decodable images under {}", dir.display())));
    }
    records.sort_by(|a, b| a.id.cmp(&b.id));
    Ok(records)
}

/// Reads one image at its native size, `(1, C, H, W)` normalized.
pub fn read_image(path: &Path, channels: usize) -> Result<Tensor4<f64>> {
    let (planes, h, w) = decode(path, channels)?;
    let data: Vec<f64> = planes.into_iter().flatten().map(|v| v / 127.5 - 1.0).collect();
    Tensor4::from_vec(Dims::new(1, channels, h, w), data)
}

/// Shuffles ids with `split_seed` and cuts consecutive train/val/test runs.
pub fn split(records: &[ImageRecord], sizes: (usize, usize, usize), split_seed: u64) -> Result<DatasetSplit> {
    let (a, b, c) = sizes;
    if a + b + c > records.len() {
        return Err(Error::Data(format!(
            "split needs {} images ({a} train + {b} val + {c} test), only {} available",
            a + b + c,
            records.len()
        )));
    }
    let mut ids: Vec<String> = records.iter().map(|r| r.id.clone()).collect();
    Stream::keyed(split_seed, &[0x73706c]).shuffle(&mut ids);
    Ok(DatasetSplit {
        train: ids[..a].to_vec(),
        val: ids[a..a + b].to_vec(),
        test: ids[a + b..a + b + c].to_vec(),
        split_seed,
    })
}

/// Stacks the records with the given ids, in id-list order.
pub fn gather(records: &[ImageRecord], ids: &[String]) -> Result<Tensor4<f64>> {
    let by_id: std::collections::HashMap<&str, &ImageRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let parts = ids
        .iter()
        .map(|id| {
            by_id
                .get(id.as_str())
                .map(|r| &r.pixels)
                .ok_or_else(|| Error::Data(format!("unknown image id {id:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    if parts.is_empty() {
        let d = records
            .first()
            .map(|r| r.pixels.dims())
            .unwrap_or(Dims::new(1, 1, PATCH, PATCH));
        return Ok(Tensor4::zeros(Dims::new(0, d.c, d.h, d.w)));
    }
    Tensor4::stack(parts)
}

/// Per-channel mean over every pixel of every image.
pub fn mean_fill(images: &Tensor4<f64>) -> Result<Vec<f64>> {
    let d = images.dims();
    if d.n == 0 {
        return Err(Error::Data("mean fill needs at least one training image".into()));
    }
    Ok((0..d.c)
        .map(|c| {
            let s: f64 = (0..d.n).map(|n| images.plane(n, c).iter().sum::<f64>()).sum();
            s / (d.n * d.h * d.w) as f64
        })
        .collect())
}

/// Interleaved 8-bit pixels of sample 0.
pub fn denormalize(t: &Tensor4<f64>) -> Vec<u8> {
    let d = t.dims();
    let mut out = Vec::with_capacity(d.c * d.h * d.w);
    for y in 0..d.h {
        for x in 0..d.w {
            for c in 0..d.c {
                out.push(denormalize_value(t.at(0, c, y, x)));
            }
        }
    }
    out
}

/// Writes sample 0 of `t` as an 8-bit gray or RGB PNG.
pub fn write_image(path: &Path, t: &Tensor4<f64>) -> Result<()> {
    let d = t.dims();
    let color = match d.c {
        1 => image::ExtendedColorType::L8,
        3 => image::ExtendedColorType::Rgb8,
        c => return Err(Error::Shape(format!("cannot write a {c}-channel image"))),
    };
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    image::save_buffer_with_format(path, &denormalize(t), d.w as u32, d.h as u32, color, image::ImageFormat::Png)
        .map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })
}

/// SHA-256 over the split's id lists and the pixel values of its images.
pub fn digest(records: &[ImageRecord], split: &DatasetSplit) -> String {
    let by_id: std::collections::HashMap<&str, &ImageRecord> = records.iter().map(|r| (r.id.as_str(), r)).collect();
    let mut h = Sha256::new();
    for (name, ids) in [("train", &split.train), ("val", &split.val), ("test", &split.test)] {
        h.update(name.as_bytes());
        for id in ids {
            h.update(id.as_bytes());
            h.update([0u8]);
            if let Some(r) = by_id.get(id.as_str()) {
                for v in r.pixels.data() {
                    h.update(v.to_le_bytes());
                }
            }
        }
    }
    h.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Procedural scenes: a shaded background with soft-edged discs, bars and
/// stripes, quantized to the 8-bit grid. Deterministic in `seed`.
pub fn synthetic_images(count: usize, channels: usize, size: usize, seed: u64) -> Vec<ImageRecord> {
    (0..count)
        .map(|i| {
            let mut rng = Stream::keyed(seed, &[0x73796e, i as u64]);
            let pixels = synthetic_scene(&mut rng, channels, size);
            ImageRecord {
                id: format!("synthetic/{i:06}"),
                pixels,
                origin: (size as u32, size as u32),
            }
        })
        .collect()
}

fn synthetic_scene(rng: &mut Stream, channels: usize, size: usize) -> Tensor4<f64> {
    let s = size as f64;
    let color = |rng: &mut Stream| -> Vec<f64> {
        let base = rng.uniform_in(0.05, 0.95);
        (0..channels)
            .map(|_| (base + rng.uniform_in(-0.2, 0.2)).clamp(0.0, 1.0))
            .collect()
    };
    // Background: linear ramp between two colours.
    let (c0, c1) = (color(rng), color(rng));
    let angle = rng.uniform_in(0.0, std::f64::consts::TAU);
    let (gx, gy) = (angle.cos(), angle.sin());
    let mut img: Vec<Vec<f64>> = (0..channels)
        .map(|c| {
            (0..size * size)
                .map(|p| {
                    let (y, x) = ((p / size) as f64 / s - 0.5, (p % size) as f64 / s - 0.5);
                    let t = (0.5 + gx * x + gy * y).clamp(0.0, 1.0);
                    c0[c] * (1.0 - t) + c1[c] * t
                })
                .collect()
        })
        .collect();
    let shapes = 2 + rng.below(4);
    for _ in 0..shapes {
        let col = color(rng);
        let kind = rng.below(3);
        let (cx, cy) = (rng.uniform_in(0.1, 0.9) * s, rng.uniform_in(0.1, 0.9) * s);
        let r = rng.uniform_in(0.08, 0.3) * s;
        let soft = rng.uniform_in(1.0, 4.0);
        let (sin, cos) = rng.uniform_in(0.0, std::f64::consts::PI).sin_cos();
        let period = rng.uniform_in(12.0, 24.0);
        for p in 0..size * size {
            let (x, y) = ((p % size) as f64 + 0.5 - cx, (p / size) as f64 + 0.5 - cy);
            let (u, v) = (x * cos + y * sin, -x * sin + y * cos);
            let alpha = match kind {
                0 => 1.0 / (1.0 + ((x.hypot(y) - r) / soft).exp()),
                1 => {
                    let d = (u.abs() - r).max(v.abs() - r * 0.4);
                    1.0 / (1.0 + (d / soft).exp())
                }
                _ => {
                    let inside = 1.0 / (1.0 + ((x.hypot(y) - r) / soft).exp());
                    inside * (0.5 + 0.5 * (u * std::f64::consts::TAU / period).sin())
                }
            };
            for c in 0..channels {
                img[c][p] = img[c][p] * (1.0 - alpha) + col[c] * alpha;
            }
        }
    }
    let data: Vec<f64> = img
        .into_iter()
        .flatten()
        .map(|v| normalize((v.clamp(0.0, 1.0) * 255.0).round() as u8))
        .collect();
    Tensor4::from_vec(Dims::new(1, channels, size, size), data).expect("scene dims")
}
