//! Corruption synthesis for the four restoration tasks.
//!
//! A [`CorruptionSpec`] fully determines a corruption: applying it to the
//! same image always yields the same result. Difficulty is discretized into
//! six levels per task; levels 1–5 partition the training range and level 6
//! extends it by one bin width for testing.
//!
//! Bin ownership for continuous parameters: levels 1–4 are `[lo, hi)`,
//! level 5 is `[lo, hi]` (closing the training range) and level 6 is
//! `(lo, hi]`. Inpainting bins are closed integer ranges of block sides.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Stream;
use crate::tensor::Tensor4;

pub const TRAIN_LEVELS: u8 = 5;
pub const MAX_LEVEL: u8 = 6;

/// `sigma` for denoising is in 8-bit intensity units; images live in [-1, 1].
pub const NOISE_UNIT: f64 = 127.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Inpaint,
    Interpolate,
    Deblur,
    Denoise,
}

impl TaskKind {
    pub const ALL: [TaskKind; 4] = [
        TaskKind::Inpaint,
        TaskKind::Interpolate,
        TaskKind::Deblur,
        TaskKind::Denoise,
    ];

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Inpaint => "inpaint",
            TaskKind::Interpolate => "interpolate",
            TaskKind::Deblur => "deblur",
            TaskKind::Denoise => "denoise",
        }
    }

    /// Grayscale for denoising, color otherwise.
    pub fn channels(self) -> usize {
        match self {
            TaskKind::Denoise => 1,
            _ => 3,
        }
    }

    pub fn code(self) -> u8 {
        match self {
            TaskKind::Inpaint => 1,
            TaskKind::Interpolate => 2,
            TaskKind::Deblur => 3,
            TaskKind::Denoise => 4,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        TaskKind::ALL.into_iter().find(|t| t.code() == code)
    }

    /// Interval edges for levels 1..=6 (seven edges, six bins).
    fn edges(self) -> [f64; 7] {
        match self {
            TaskKind::Inpaint => [1.0, 7.0, 13.0, 19.0, 25.0, 31.0, 37.0],
            TaskKind::Interpolate => [0.0, 0.15, 0.30, 0.45, 0.60, 0.75, 0.90],
            TaskKind::Deblur => [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0],
            TaskKind::Denoise => [0.0, 20.0, 40.0, 60.0, 80.0, 100.0, 120.0],
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "inpaint" | "inpainting" => Ok(TaskKind::Inpaint),
            "interpolate" | "interpolation" => Ok(TaskKind::Interpolate),
            "deblur" | "deblurring" => Ok(TaskKind::Deblur),
            "denoise" | "denoising" => Ok(TaskKind::Denoise),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

/// One difficulty bin. For inpainting `lo..=hi` are block sides in pixels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DifficultyBin {
    pub task: TaskKind,
    pub level: u8,
    pub lo: f64,
    pub hi: f64,
}

impl DifficultyBin {
    pub fn new(task: TaskKind, level: u8) -> Result<Self> {
        if !(1..=MAX_LEVEL).contains(&level) {
            return Err(Error::Config(format!("level {level} outside 1..={MAX_LEVEL}")));
        }
        let e = task.edges();
        let i = level as usize - 1;
        let (lo, hi) = match task {
            TaskKind::Inpaint => (e[i], e[i + 1] - 1.0),
            _ => (e[i], e[i + 1]),
        };
        Ok(Self { task, level, lo, hi })
    }

    pub fn contains(&self, v: f64) -> bool {
        match self.task {
            TaskKind::Inpaint => v.fract() == 0.0 && v >= self.lo && v <= self.hi,
            _ => match self.level {
                5 => v >= self.lo && v <= self.hi,
                6 => v > self.lo && v <= self.hi,
                _ => v >= self.lo && v < self.hi,
            },
        }
    }

    fn sample(&self, rng: &mut Stream) -> f64 {
        match self.task {
            TaskKind::Inpaint => {
                let span = (self.hi - self.lo) as usize + 1;
                self.lo + rng.below(span) as f64
            }
            _ if self.level == MAX_LEVEL => self.hi - (self.hi - self.lo) * rng.uniform(),
            _ => rng.uniform_in(self.lo, self.hi),
        }
    }
}

pub fn bins(task: TaskKind) -> Vec<DifficultyBin> {
    (1..=MAX_LEVEL)
        .map(|l| DifficultyBin::new(task, l).expect("valid level"))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "task", rename_all = "lowercase")]
pub enum CorruptionParams {
    /// `size x size` block with top-left corner at column `x`, row `y`.
    Inpaint { size: usize, x: usize, y: usize },
    /// Fraction of pixel positions deleted.
    Interpolate { fraction: f64 },
    Deblur { sigma_x: f64, sigma_y: f64 },
    /// Noise standard deviation in 8-bit units.
    Denoise { sigma: f64 },
}

impl CorruptionParams {
    pub fn task(&self) -> TaskKind {
        match self {
            CorruptionParams::Inpaint { .. } => TaskKind::Inpaint,
            CorruptionParams::Interpolate { .. } => TaskKind::Interpolate,
            CorruptionParams::Deblur { .. } => TaskKind::Deblur,
            CorruptionParams::Denoise { .. } => TaskKind::Denoise,
        }
    }

    /// Scalar used for binning (max of the two widths for deblurring).
    pub fn difficulty(&self) -> f64 {
        match *self {
            CorruptionParams::Inpaint { size, .. } => size as f64,
            CorruptionParams::Interpolate { fraction } => fraction,
            CorruptionParams::Deblur { sigma_x, sigma_y } => sigma_x.max(sigma_y),
            CorruptionParams::Denoise { sigma } => sigma,
        }
    }
}

/// A fully determined corruption instance.
///
/// Serializes to a single-line JSON record such as
/// `{"task":"denoise","sigma":25.0,"seed":42}`; floats round-trip exactly.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CorruptionSpec {
    #[serde(flatten)]
    pub params: CorruptionParams,
    pub seed: u64,
}

impl CorruptionSpec {
    pub fn task(&self) -> TaskKind {
        self.params.task()
    }

    pub fn to_record(&self) -> String {
        serde_json::to_string(self).expect("spec serializes")
    }

    pub fn from_record(line: &str) -> Result<Self> {
        let spec: Self = serde_json::from_str(line.trim()).map_err(|e| Error::Corruption(format!("bad record: {e}")))?;
        spec.validate(None)?;
        Ok(spec)
    }

    /// Checks parameter ranges; with `image` also checks the inpaint block fits.
    pub fn validate(&self, image: Option<(usize, usize)>) -> Result<()> {
        match self.params {
            CorruptionParams::Inpaint { size, x, y } => {
                if size == 0 {
                    return Err(Error::Corruption("inpaint block side must be at least 1".into()));
                }
                if let Some((h, w)) = image {
                    if x + size > w || y + size > h {
                        return Err(Error::Corruption(format!(
                            "inpaint block {size}x{size} at ({x}, {y}) leaves the {h}x{w} image"
                        )));
                    }
                }
            }
            CorruptionParams::Interpolate { fraction } => {
                if !(0.0..=0.9).contains(&fraction) {
                    return Err(Error::Corruption(format!(
                        "interpolation fraction {fraction} outside [0, 0.9]"
                    )));
                }
            }
            CorruptionParams::Deblur { sigma_x, sigma_y } => {
                if !(sigma_x >= 0.0 && sigma_y >= 0.0 && sigma_x.is_finite() && sigma_y.is_finite()) {
                    return Err(Error::Corruption(format!(
                        "blur widths ({sigma_x}, {sigma_y}) must be finite and non-negative"
                    )));
                }
            }
            CorruptionParams::Denoise { sigma } => {
                if !(sigma >= 0.0 && sigma.is_finite()) {
                    return Err(Error::Corruption(format!(
                        "noise level {sigma} must be finite and non-negative"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Spec with the given difficulty scalar (both axes for deblurring). An
    /// inpaint block is placed uniformly at random.
    pub fn at_difficulty(task: TaskKind, value: f64, image: (usize, usize), rng: &mut Stream) -> Result<Self> {
        let params = match task {
            TaskKind::Inpaint => {
                let size = value.round() as usize;
                let (h, w) = image;
                if size == 0 || size > h || size > w {
                    return Err(Error::Corruption(format!(
                        "inpaint block side {size} does not fit a {h}x{w} image"
                    )));
                }
                CorruptionParams::Inpaint {
                    size,
                    x: rng.below(w - size + 1),
                    y: rng.below(h - size + 1),
                }
            }
            TaskKind::Interpolate => CorruptionParams::Interpolate { fraction: value },
            TaskKind::Deblur => CorruptionParams::Deblur {
                sigma_x: value,
                sigma_y: value,
            },
            TaskKind::Denoise => CorruptionParams::Denoise { sigma: value },
        };
        let spec = Self {
            params,
            seed: rng.next_u64(),
        };
        spec.validate(Some(image))?;
        Ok(spec)
    }
}

impl fmt::Display for CorruptionSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_record())
    }
}

/// Draws a spec uniformly from the level's interval. `image` is `(h, w)`.
pub fn sample_spec(task: TaskKind, level: u8, image: (usize, usize), rng: &mut Stream) -> Result<CorruptionSpec> {
    let bin = DifficultyBin::new(task, level)?;
    let params = match task {
        TaskKind::Inpaint => {
            let size = bin.sample(rng) as usize;
            let (h, w) = image;
            if size > h || size > w {
                return Err(Error::Corruption(format!(
                    "level {level} block side {size} does not fit a {h}x{w} image"
                )));
            }
            CorruptionParams::Inpaint {
                size,
                x: rng.below(w - size + 1),
                y: rng.below(h - size + 1),
            }
        }
        TaskKind::Interpolate => CorruptionParams::Interpolate {
            fraction: bin.sample(rng),
        },
        TaskKind::Deblur => {
            let sigma_x = bin.sample(rng);
            let sigma_y = bin.sample(rng);
            CorruptionParams::Deblur { sigma_x, sigma_y }
        }
        TaskKind::Denoise => CorruptionParams::Denoise {
            sigma: bin.sample(rng),
        },
    };
    Ok(CorruptionSpec {
        params,
        seed: rng.next_u64(),
    })
}

/// Difficulty level containing the spec's binning scalar.
pub fn level_of(spec: &CorruptionSpec) -> Result<u8> {
    level_of_value(spec.task(), spec.params.difficulty())
}

pub fn level_of_value(task: TaskKind, value: f64) -> Result<u8> {
    bins(task)
        .into_iter()
        .find(|b| b.contains(value))
        .map(|b| b.level)
        .ok_or_else(|| Error::Corruption(format!("{task} difficulty {value} is outside every level")))
}

fn check_fill(img: &Tensor4<f64>, fill: &[f64]) -> Result<()> {
    if fill.len() != img.dims().c {
        return Err(Error::Corruption(format!(
            "fill has {} channels, image has {}",
            fill.len(),
            img.dims().c
        )));
    }
    Ok(())
}

/// Replaces the spec's square block with the per-channel fill value.
pub fn corrupt_inpaint(img: &Tensor4<f64>, spec: &CorruptionSpec, fill: &[f64]) -> Result<Tensor4<f64>> {
    let CorruptionParams::Inpaint { size, x, y } = spec.params else {
        return Err(Error::Corruption(format!("expected an inpaint spec, got {}", spec.task())));
    };
    let d = img.dims();
    spec.validate(Some((d.h, d.w)))?;
    check_fill(img, fill)?;
    let mut out = img.clone();
    for n in 0..d.n {
        for (c, &f) in fill.iter().enumerate() {
            let plane = out.plane_mut(n, c);
            for row in y..y + size {
                plane[row * d.w + x..][..size].fill(f);
            }
        }
    }
    Ok(out)
}

/// Pixel positions deleted by an interpolation spec on an `h x w` image.
pub fn interpolation_mask(spec: &CorruptionSpec, h: usize, w: usize) -> Result<Vec<usize>> {
    let CorruptionParams::Interpolate { fraction } = spec.params else {
        return Err(Error::Corruption(format!("expected an interpolate spec, got {}", spec.task())));
    };
    spec.validate(None)?;
    let total = h * w;
    let k = ((fraction * total as f64).round() as usize).min(total);
    Ok(Stream::new(spec.seed).choose_distinct(total, k))
}

/// Deletes `round(r * h * w)` positions (all channels) and fills them.
pub fn corrupt_interpolate(img: &Tensor4<f64>, spec: &CorruptionSpec, fill: &[f64]) -> Result<Tensor4<f64>> {
    let d = img.dims();
    let mask = interpolation_mask(spec, d.h, d.w)?;
    check_fill(img, fill)?;
    let mut out = img.clone();
    for n in 0..d.n {
        for (c, &f) in fill.iter().enumerate() {
            let plane = out.plane_mut(n, c);
            for &p in &mask {
                plane[p] = f;
            }
        }
    }
    Ok(out)
}

/// Normalized 1-D Gaussian sampled at integer offsets `-r..=r`, `r = ceil(3σ)`.
pub fn gaussian_kernel_1d(sigma: f64) -> Vec<f64> {
    let r = (3.0 * sigma).ceil() as usize;
    if r == 0 {
        return vec![1.0];
    }
    let raw: Vec<f64> = (0..=2 * r)
        .map(|i| {
            let t = i as f64 - r as f64;
            (-t * t / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / s).collect()
}

/// Separable 2-D Gaussian kernel, row-major, `rows = 2 ry + 1` by `cols = 2 rx + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel2d {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
}

impl Kernel2d {
    pub fn at(&self, r: usize, c: usize) -> f64 {
        self.weights[r * self.cols + c]
    }

    pub fn sum(&self) -> f64 {
        self.weights.iter().sum()
    }
}

pub fn gaussian_kernel(sigma_x: f64, sigma_y: f64) -> Kernel2d {
    let kx = gaussian_kernel_1d(sigma_x);
    let ky = gaussian_kernel_1d(sigma_y);
    let mut weights: Vec<f64> = ky.iter().flat_map(|&a| kx.iter().map(move |&b| a * b)).collect();
    let s: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= s);
    Kernel2d {
        rows: ky.len(),
        cols: kx.len(),
        weights,
    }
}

/// Mirror index without repeating the edge sample (`-1 -> 1`, `n -> n - 2`).
fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

fn convolve_rows(src: &[f64], h: usize, w: usize, k: &[f64], dst: &mut [f64]) {
    let r = (k.len() / 2) as isize;
    for y in 0..h {
        let row = &src[y * w..][..w];
        for x in 0..w {
            let mut acc = 0.0;
            for (j, &kv) in k.iter().enumerate() {
                acc += kv * row[reflect(x as isize + j as isize - r, w)];
            }
            dst[y * w + x] = acc;
        }
    }
}

fn convolve_cols(src: &[f64], h: usize, w: usize, k: &[f64], dst: &mut [f64]) {
    let r = (k.len() / 2) as isize;
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (j, &kv) in k.iter().enumerate() {
                acc += kv * src[reflect(y as isize + j as isize - r, h) * w + x];
            }
            dst[y * w + x] = acc;
        }
    }
}

/// Per-channel Gaussian blur with reflect borders.
pub fn corrupt_blur(img: &Tensor4<f64>, spec: &CorruptionSpec) -> Result<Tensor4<f64>> {
    let CorruptionParams::Deblur { sigma_x, sigma_y } = spec.params else {
        return Err(Error::Corruption(format!("expected a deblur spec, got {}", spec.task())));
    };
    spec.validate(None)?;
    let kx = gaussian_kernel_1d(sigma_x);
    let ky = gaussian_kernel_1d(sigma_y);
    let d = img.dims();
    let mut out = img.clone();
    let mut tmp = vec![0.0; d.plane()];
    for n in 0..d.n {
        for c in 0..d.c {
            let plane = out.plane_mut(n, c);
            if kx.len() > 1 {
                convolve_rows(plane, d.h, d.w, &kx, &mut tmp);
                plane.copy_from_slice(&tmp);
            }
            if ky.len() > 1 {
                convolve_cols(plane, d.h, d.w, &ky, &mut tmp);
                plane.copy_from_slice(&tmp);
            }
        }
    }
    Ok(out)
}

/// Adds i.i.d. Gaussian noise with standard deviation `sigma / 127.5`, no clipping.
pub fn corrupt_noise(img: &Tensor4<f64>, spec: &CorruptionSpec) -> Result<Tensor4<f64>> {
    let CorruptionParams::Denoise { sigma } = spec.params else {
        return Err(Error::Corruption(format!("expected a denoise spec, got {}", spec.task())));
    };
    spec.validate(None)?;
    if sigma == 0.0 {
        return Ok(img.clone());
    }
    let std = sigma / NOISE_UNIT;
    let mut rng = Stream::new(spec.seed);
    Ok(img.map(|v| v + std * rng.normal()))
}

/// Dispatches to the corruption matching the spec's task.
pub fn apply(img: &Tensor4<f64>, spec: &CorruptionSpec, fill: &[f64]) -> Result<Tensor4<f64>> {
    match spec.task() {
        TaskKind::Inpaint => corrupt_inpaint(img, spec, fill),
        TaskKind::Interpolate => corrupt_interpolate(img, spec, fill),
        TaskKind::Deblur => corrupt_blur(img, spec),
        TaskKind::Denoise => corrupt_noise(img, spec),
    }
}
