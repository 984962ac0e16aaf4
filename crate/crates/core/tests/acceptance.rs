//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Criteria 6-8 train fifteen desk-scale models (about two and a half hours
//! on one core). Set `ODL_ACCEPTANCE_RUNS=<dir>` to keep the run directories;
//! completed runs found there with an identical config are read back instead
//! of retrained. `ODL_ACCEPTANCE_ONLY=1,2,9` restricts the suite.

use std::collections::HashMap;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use odl::corrupt::{
    apply, bins, corrupt_inpaint, corrupt_interpolate, corrupt_noise, gaussian_kernel, gaussian_kernel_1d,
    interpolation_mask, level_of, level_of_value, sample_spec, CorruptionParams, CorruptionSpec, TaskKind,
    MAX_LEVEL, TRAIN_LEVELS,
};
use odl::experiment::{self, files, RunConfig, RunManifest};
use odl::harness::{coverage_map, tile_restore, TILE_STRIDE};
use odl::metrics::{l2_permille, psnr};
use odl::model::{IdentityRestorer, Restorer};
use odl::net::{EncoderDecoder, NetworkConfig};
use odl::nn::gradcheck::{grad_check, GradCheckOptions};
use odl::nn::{
    conv2d_forward, deconv2d_forward, gaussian_init, Activation, ActivationKind, BatchNorm, ChannelwiseFc, Conv2d,
    ConvGeometry, Deconv2d, Module, Parameter,
};
use odl::rng::Stream;
use odl::schedule::{on_demand_allocate, FixedTarget, SchedulerKind};
use odl::{Dims, Tensor4};

// Pinned tolerances and thresholds.
const GRAD_TOL: f64 = 1e-4;
const GRAD_EPS: f64 = 1e-5;
const ADJOINT_TOL: f64 = 1e-10;
const KERNEL_TOL: f64 = 1e-12;
const METRIC_TOL: f64 = 1e-9;
const RANDOM_CASES: usize = 10_000;
const EASY_SIGMA: f64 = 10.0;
const HARD_SIGMA: f64 = 90.0;
const FIXATION_GAP_DB: f64 = 2.0;
const RIGID_SLACK_DB: f64 = 0.1;
const SEEDS: [u64; 3] = [1, 2, 3];
const SEEDS_NEEDED: usize = 2;

/// Desk-scale configuration shared by criteria 6-8.
fn desk_config(scheduler: SchedulerKind, seed: u64) -> RunConfig {
    let mut c = RunConfig::default();
    c.task = TaskKind::Denoise;
    c.scheduler = scheduler;
    c.epochs = 150;
    c.network.encoder_channels = vec![8, 16, 64, 256];
    c.data.synthetic = Some(2400);
    c.data.train_size = 2000;
    c.data.val_size = Some(200);
    c.data.test_size = Some(200);
    c.seeds.master = seed;
    c.checkpoint_every = 50;
    c
}

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

// ---------------------------------------------------------------- 1

fn rand_tensor(d: Dims, rng: &mut Stream) -> Tensor4<f64> {
    gaussian_init(d, 1.0, rng)
}

fn criterion_gradients() -> Outcome {
    let opts = GradCheckOptions {
        eps: GRAD_EPS,
        tolerance: GRAD_TOL,
        ..GradCheckOptions::default()
    };
    let mut rng = Stream::new(0xacce);
    let mut worst: Vec<(String, f64)> = Vec::new();
    fn one<M: Module<f64>>(name: &str, m: &mut M, x: &Tensor4<f64>, o: &GradCheckOptions, out: &mut Vec<(String, f64)>) {
        let r = grad_check(m, x, o).expect("grad_check");
        out.push((name.to_string(), r.max_rel_error()));
    }
    for (i, (k, s, p)) in [(4, 2, 1), (3, 1, 1), (1, 1, 0)].into_iter().enumerate() {
        let g = ConvGeometry::new(2, 3, k, s, p);
        let mut conv = Conv2d::<f64>::new("conv", g, 0.5, &mut rng).unwrap();
        let (ho, wo) = g.conv_output(8, 8).unwrap();
        one(&format!("conv#{i}"), &mut conv, &rand_tensor(Dims::new(2, 2, 8, 8), &mut rng), &opts, &mut worst);
        let mut deconv = Deconv2d::<f64>::new("deconv", g, 0.5, &mut rng).unwrap();
        one(&format!("deconv#{i}"), &mut deconv, &rand_tensor(Dims::new(2, 2, ho, wo), &mut rng), &opts, &mut worst);
    }
    let mut bn = BatchNorm::<f64>::new("bn", 3, 1e-5, 0.1);
    bn.gamma.value = rand_tensor(bn.gamma.dims(), &mut rng);
    bn.beta.value = rand_tensor(bn.beta.dims(), &mut rng);
    one("batchnorm", &mut bn, &rand_tensor(Dims::new(4, 3, 3, 3), &mut rng), &opts, &mut worst);
    let mut fc = ChannelwiseFc::<f64>::new("fc", 3, 4, 4, 0.5, &mut rng);
    one("channel-fc", &mut fc, &rand_tensor(Dims::new(2, 3, 4, 4), &mut rng), &opts, &mut worst);
    for kind in [ActivationKind::Relu, ActivationKind::LEAKY_RELU, ActivationKind::Tanh] {
        let x = rand_tensor(Dims::new(2, 2, 4, 4), &mut rng).map(|v| if v.abs() < 1e-2 { v + 0.1 } else { v });
        one(&format!("{kind:?}"), &mut Activation::<f64>::new(kind), &x, &opts, &mut worst);
    }
    let mut adjoint: f64 = 0.0;
    for (i, (k, s, p, size)) in [(4, 2, 1, 10), (3, 1, 1, 10), (5, 2, 2, 11)].into_iter().enumerate() {
        let g = ConvGeometry::new(3, 4, k, s, p);
        let dg = ConvGeometry::new(4, 3, k, s, p);
        let w = Parameter::new("w", rand_tensor(g.conv_weight_dims(), &mut rng));
        let (ho, wo) = g.conv_output(size, size).unwrap();
        let x = rand_tensor(Dims::new(2, 3, size, size), &mut rng);
        let y = rand_tensor(Dims::new(2, 4, ho, wo), &mut rng);
        let bc = Parameter::zeros("b", Dims::new(1, 4, 1, 1));
        let bd = Parameter::zeros("b", Dims::new(1, 3, 1, 1));
        let lhs = conv2d_forward(&x, &w, &bc, &g).unwrap().dot(&y).unwrap();
        let dy = deconv2d_forward(&y, &w, &bd, &dg).unwrap();
        if dy.dims() != x.dims() {
            return Err(format!("adjoint case {i}: deconv output {} vs {}", dy.dims(), x.dims()));
        }
        let rhs = x.dot(&dy).unwrap();
        adjoint = adjoint.max((lhs - rhs).abs() / lhs.abs().max(rhs.abs()));
    }
    let (name, max) = worst.iter().cloned().fold((String::new(), 0.0), |a, b| if b.1 > a.1 { b } else { a });
    let failing: Vec<_> = worst.iter().filter(|(_, e)| *e >= GRAD_TOL).map(|(n, _)| n.clone()).collect();
    check(
        failing.is_empty() && adjoint < ADJOINT_TOL,
        format!(
            "{} checks, worst rel err {max:.2e} ({name}) < {GRAD_TOL:e}; adjoint rel err {adjoint:.2e} < {ADJOINT_TOL:e}{}",
            worst.len(),
            if failing.is_empty() { String::new() } else { format!("; failing {failing:?}") }
        ),
    )
}

// ---------------------------------------------------------------- 2

/// Largest-remainder oracle: the pinned set is found by trying k = 0, 1, ...
/// levels with the highest PSNR pinned at one example, taking the first k
/// that leaves every other share at one or more.
fn allocation_oracle(p: &[f64], batch: usize) -> Vec<usize> {
    let n = p.len();
    let mut by_psnr: Vec<usize> = (0..n).collect();
    by_psnr.sort_by(|&a, &b| p[b].total_cmp(&p[a]).then(a.cmp(&b)));
    for k in 0..n {
        let pinned = &by_psnr[..k];
        let free = (batch - k) as f64;
        let inv: f64 = (0..n).filter(|i| !pinned.contains(i)).map(|i| 1.0 / p[i]).sum();
        let quota: Vec<f64> = (0..n)
            .map(|i| if pinned.contains(&i) { 1.0 } else { free * (1.0 / p[i]) / inv })
            .collect();
        if quota.iter().any(|&q| q < 1.0) {
            continue;
        }
        let mut counts: Vec<usize> = quota.iter().map(|q| q.floor() as usize).collect();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| {
            let (ra, rb) = (quota[a] - quota[a].floor(), quota[b] - quota[b].floor());
            rb.total_cmp(&ra).then(a.cmp(&b))
        });
        let short = batch - counts.iter().sum::<usize>();
        for &i in order.iter().take(short) {
            counts[i] += 1;
        }
        return counts;
    }
    vec![1; n]
}

fn criterion_allocation() -> Outcome {
    let uniform = on_demand_allocate(&[27.5; 5], 100).map_err(|e| e.to_string())?;
    if uniform.counts() != [20; 5] {
        return Err(format!("equal P gave {uniform}"));
    }
    let worked = on_demand_allocate(&[20.0, 25.0, 30.0, 35.0, 40.0], 100).map_err(|e| e.to_string())?;
    if worked.counts() != [28, 23, 19, 16, 14] {
        return Err(format!("P=[20..40] gave {worked}"));
    }
    let mut rng = Stream::new(0xa110c);
    let (mut oracle_mismatch, mut scale_break, mut sum_break) = (0, 0, 0);
    for _ in 0..RANDOM_CASES {
        let n = 1 + rng.below(8);
        let batch = n + rng.below(200);
        let p: Vec<f64> = (0..n).map(|_| rng.uniform_in(1.0, 60.0)).collect();
        let a = on_demand_allocate(&p, batch).map_err(|e| e.to_string())?;
        if a.total() != batch {
            sum_break += 1;
        }
        if a.counts() != allocation_oracle(&p, batch).as_slice() {
            oracle_mismatch += 1;
        }
        let k = 2f64.powi(rng.below(13) as i32 - 6);
        if on_demand_allocate(&p.iter().map(|v| v * k).collect::<Vec<_>>(), batch).map_err(|e| e.to_string())? != a {
            scale_break += 1;
        }
    }
    check(
        oracle_mismatch + scale_break + sum_break == 0,
        format!(
            "uniform {uniform}, worked {worked}; {RANDOM_CASES} random P: {sum_break} bad sums, {oracle_mismatch} oracle mismatches, {scale_break} scale breaks"
        ),
    )
}

// ---------------------------------------------------------------- 3

fn criterion_corruption() -> Outcome {
    let mut rng = Stream::new(0xc0);
    let img3 = Tensor4::from_fn(Dims::new(1, 3, 64, 64), |_, _, _, _| rng.uniform_in(-1.0, 1.0));
    let img1 = Tensor4::from_fn(Dims::new(1, 1, 64, 64), |_, _, _, _| rng.uniform_in(-1.0, 1.0));
    let fill3 = [0.1, -0.2, 0.3];
    let fill1 = [0.05];
    let mut notes = Vec::new();

    // Determinism and level_of identity, 10^4 draws per task.
    for task in TaskKind::ALL {
        let (img, fill): (&Tensor4<f64>, &[f64]) = if task.channels() == 1 { (&img1, &fill1) } else { (&img3, &fill3) };
        let mut draws = Stream::new(task.code() as u64);
        for i in 0..RANDOM_CASES {
            let level = 1 + draws.below(MAX_LEVEL as usize) as u8;
            let seed = draws.next_u64();
            let spec = sample_spec(task, level, (64, 64), &mut Stream::new(seed)).map_err(|e| e.to_string())?;
            let again = sample_spec(task, level, (64, 64), &mut Stream::new(seed)).map_err(|e| e.to_string())?;
            if spec != again {
                return Err(format!("{task}: sample_spec not deterministic"));
            }
            let got = level_of(&spec).map_err(|e| e.to_string())?;
            if got != level {
                return Err(format!("{task}: drew level {level}, level_of says {got} for {spec:?}"));
            }
            if i < 200 && apply(img, &spec, fill).unwrap() != apply(img, &spec, fill).unwrap() {
                return Err(format!("{task}: corruption not deterministic"));
            }
        }
    }
    notes.push(format!("level_of∘sample_spec identity over {RANDOM_CASES} draws x 4 tasks"));

    // Bin partition of the training range.
    let mut probe = Stream::new(0xb1);
    for task in TaskKind::ALL {
        let b = bins(task);
        let train = &b[..TRAIN_LEVELS as usize];
        let (lo, hi) = (train[0].lo, train[TRAIN_LEVELS as usize - 1].hi);
        let values: Vec<f64> = if task == TaskKind::Inpaint {
            (lo as usize..=hi as usize).map(|v| v as f64).collect()
        } else {
            let mut v: Vec<f64> = (0..RANDOM_CASES).map(|_| probe.uniform_in(lo, hi)).collect();
            v.extend(train.iter().flat_map(|t| [t.lo, t.hi]));
            v
        };
        for v in values {
            let hits = train.iter().filter(|t| t.contains(v)).count();
            if hits != 1 {
                return Err(format!("{task}: value {v} lies in {hits} training bins"));
            }
            let l = level_of_value(task, v).map_err(|e| e.to_string())?;
            if !train[l as usize - 1].contains(v) {
                return Err(format!("{task}: level_of_value({v}) = {l}"));
            }
        }
    }
    notes.push("training bins partition the range".into());

    // Support bounds.
    let mut mask_rng = Stream::new(0x5);
    for _ in 0..200 {
        let spec = sample_spec(TaskKind::Inpaint, 1 + mask_rng.below(6) as u8, (64, 64), &mut mask_rng).unwrap();
        let CorruptionParams::Inpaint { size, x, y } = spec.params else { unreachable!() };
        let out = corrupt_inpaint(&img3, &spec, &fill3).unwrap();
        for c in 0..3 {
            for r in 0..64 {
                for q in 0..64 {
                    let inside = (y..y + size).contains(&r) && (x..x + size).contains(&q);
                    let (a, b) = (out.at(0, c, r, q), img3.at(0, c, r, q));
                    if (inside && a != fill3[c]) || (!inside && a != b) {
                        return Err(format!("inpaint touched ({c},{r},{q}) wrongly for {spec:?}"));
                    }
                }
            }
        }
        let spec = sample_spec(TaskKind::Interpolate, 1 + mask_rng.below(6) as u8, (64, 64), &mut mask_rng).unwrap();
        let mask: std::collections::HashSet<usize> = interpolation_mask(&spec, 64, 64).unwrap().into_iter().collect();
        let CorruptionParams::Interpolate { fraction } = spec.params else { unreachable!() };
        if mask.len() != (fraction * 4096.0).round() as usize {
            return Err(format!("interpolate deleted {} positions for r = {fraction}", mask.len()));
        }
        let out = corrupt_interpolate(&img3, &spec, &fill3).unwrap();
        for c in 0..3 {
            for p in 0..4096 {
                let (a, b) = (out.plane(0, c)[p], img3.plane(0, c)[p]);
                if (mask.contains(&p) && a != fill3[c]) || (!mask.contains(&p) && a != b) {
                    return Err(format!("interpolate touched ({c},{p}) wrongly"));
                }
            }
        }
    }
    notes.push("support bounds on 200 inpaint + 200 interpolate specs".into());

    // Noise statistics, sigma 25 on a zero image. One 4096-sample field must
    // meet the per-field tolerances; 100 pooled fields must meet 3-sigma
    // bounds for 409600 samples.
    let zero = Tensor4::zeros(Dims::new(1, 1, 64, 64));
    let std = 25.0 / 127.5;
    let field = |seed: u64| {
        let spec = CorruptionSpec {
            params: CorruptionParams::Denoise { sigma: 25.0 },
            seed,
        };
        corrupt_noise(&zero, &spec).unwrap().into_vec()
    };
    let stats = |v: &[f64]| {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        (mean, (v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt())
    };
    let (m1, s1) = stats(&field(0));
    let (mean_tol, std_tol) = (3.0 * std / 64.0, 0.02 * std);
    if m1.abs() > mean_tol || (s1 - std).abs() > std_tol {
        return Err(format!("single field: mean {m1:.2e} (tol {mean_tol:.2e}), std {s1:.5} vs {std:.5} (tol {std_tol:.1e})"));
    }
    let pooled: Vec<f64> = (1..=100).flat_map(field).collect();
    let n = pooled.len() as f64;
    let (mp, sp) = stats(&pooled);
    let (mean_tol_p, std_tol_p) = (3.0 * std / n.sqrt(), 3.0 * std / (2.0 * n).sqrt());
    if mp.abs() > mean_tol_p || (sp - std).abs() > std_tol_p {
        return Err(format!("pooled: mean {mp:.2e} (tol {mean_tol_p:.2e}), std {sp:.5} (tol {std_tol_p:.1e})"));
    }
    notes.push(format!(
        "noise field mean/std errors {:.0}%/{:.0}% of tolerance, pooled {:.0}%/{:.0}%",
        100.0 * m1.abs() / mean_tol,
        100.0 * (s1 - std).abs() / std_tol,
        100.0 * mp.abs() / mean_tol_p,
        100.0 * (sp - std).abs() / std_tol_p
    ));

    // Kernel normalization, separability, symmetry.
    let mut kr = Stream::new(0x6b);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (sx, sy) = (kr.uniform_in(0.0, 6.0), kr.uniform_in(0.0, 6.0));
        let k = gaussian_kernel(sx, sy);
        worst = worst.max((k.sum() - 1.0).abs());
        let (kx, ky) = (gaussian_kernel_1d(sx), gaussian_kernel_1d(sy));
        // Oracle 1-D kernels computed here from the definition.
        let oracle = |s: f64| -> Vec<f64> {
            let r = (3.0 * s).ceil() as i64;
            let raw: Vec<f64> = (-r..=r).map(|t| if r == 0 { 1.0 } else { (-(t * t) as f64 / (2.0 * s * s)).exp() }).collect();
            let z: f64 = raw.iter().sum();
            raw.iter().map(|v| v / z).collect()
        };
        let (ox, oy) = (oracle(sx), oracle(sy));
        if ox.len() != kx.len() || oy.len() != ky.len() || k.rows != oy.len() || k.cols != ox.len() {
            return Err(format!("kernel radius mismatch at ({sx}, {sy})"));
        }
        for r in 0..k.rows {
            for c in 0..k.cols {
                worst = worst.max((k.at(r, c) - oy[r] * ox[c]).abs());
                worst = worst.max((k.at(r, c) - k.at(k.rows - 1 - r, c)).abs());
                worst = worst.max((k.at(r, c) - k.at(r, k.cols - 1 - c)).abs());
            }
        }
    }
    notes.push(format!("kernel error {worst:.1e}"));
    check(worst < KERNEL_TOL, notes.join("; "))
}

// ---------------------------------------------------------------- 4

fn criterion_metrics() -> Outcome {
    let a = Tensor4::full(Dims::new(1, 3, 8, 8), -0.3);
    // Unit-scale difference 0.1 means 0.2 in the [-1, 1] domain.
    let b = a.map(|v| v + 0.2);
    let (p, l2) = (psnr(&b, &a).unwrap(), l2_permille(&b, &a).unwrap());
    if (p - 20.0).abs() > METRIC_TOL || (l2 - 10.0).abs() > METRIC_TOL {
        return Err(format!("constant 0.1 gives {p} dB / {l2} permille"));
    }
    let mut rng = Stream::new(0x4d);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let x = Tensor4::from_fn(Dims::new(1, 1, 16, 16), |_, _, _, _| rng.uniform_in(-1.0, 1.0));
        let s = rng.uniform_in(1e-4, 1.0);
        let y = x.map(|v| v + s * rng.normal());
        let (p, l2) = (psnr(&y, &x).unwrap(), l2_permille(&y, &x).unwrap());
        worst = worst.max((l2 - 1000.0 * 10f64.powf(-p / 10.0)).abs() / l2);
    }
    check(worst < METRIC_TOL, format!("20 dB <-> 10 permille exact; identity rel err {worst:.1e} over 1000 pairs"))
}

// ---------------------------------------------------------------- 5

fn criterion_tiling() -> Outcome {
    let net = EncoderDecoder::<f64>::build(NetworkConfig {
        input_channels: 1,
        encoder_channels: vec![4, 8, 8, 8],
        seed: 2,
        ..NetworkConfig::default()
    })
    .unwrap();
    let mut rng = Stream::new(0x71);
    let img = Tensor4::from_fn(Dims::new(1, 1, 64, 64), |_, _, _, _| rng.uniform_in(-1.0, 1.0));
    if tile_restore(&net, &img).unwrap() != net.restore_batch(&img).unwrap() {
        return Err("64x64 tiling differs from a direct restore".into());
    }
    let id = IdentityRestorer { channels: 3, size: 64 };
    for (h, w) in [(70, 70), (64, 130), (97, 65)] {
        let big = Tensor4::from_fn(Dims::new(1, 3, h, w), |_, _, _, _| rng.uniform_in(-1.0, 1.0));
        if tile_restore(&id, &big).unwrap() != big {
            return Err(format!("identity stub changed a {h}x{w} image"));
        }
    }
    // Window origins, from the definition: every stride step plus one flush with the far edge.
    let origins = |extent: usize| -> Vec<usize> {
        let mut o: Vec<usize> = (0..=extent - 64).step_by(TILE_STRIDE).collect();
        if *o.last().unwrap() != extent - 64 {
            o.push(extent - 64);
        }
        o
    };
    let (oy, ox) = (origins(70), origins(70));
    let map = coverage_map(70, 70, 64, TILE_STRIDE);
    for y in 0..70 {
        for x in 0..70 {
            let expected = oy.iter().filter(|&&o| o <= y && y < o + 64).count() * ox.iter().filter(|&&o| o <= x && x < o + 64).count();
            if map[y * 70 + x] as usize != expected {
                return Err(format!("coverage at ({y},{x}) is {} not {expected}", map[y * 70 + x]));
            }
        }
    }
    let (lo, hi) = (map.iter().min().unwrap(), map.iter().max().unwrap());
    Ok(format!("64x64 equivalence, identity stub on 3 sizes, 70x70 coverage {lo}..{hi} matches oracle"))
}

// ---------------------------------------------------------------- desk runs

#[derive(Debug, Clone)]
struct DeskRun {
    psnr: Vec<f64>,
    final_allocation: Vec<usize>,
}

impl DeskRun {
    fn level(&self, l: usize) -> f64 {
        self.psnr[l - 1]
    }

    fn mean(&self) -> f64 {
        self.psnr[..TRAIN_LEVELS as usize].iter().sum::<f64>() / TRAIN_LEVELS as f64
    }
}

struct Desk {
    root: PathBuf,
    _tmp: Option<tempfile::TempDir>,
    runs: Mutex<HashMap<(String, u64), DeskRun>>,
}

fn desk() -> &'static Desk {
    static DESK: OnceLock<Desk> = OnceLock::new();
    DESK.get_or_init(|| match std::env::var_os("ODL_ACCEPTANCE_RUNS") {
        Some(d) => Desk {
            root: PathBuf::from(d),
            _tmp: None,
            runs: Mutex::new(HashMap::new()),
        },
        None => {
            let t = tempfile::tempdir().expect("tempdir");
            Desk {
                root: t.path().to_path_buf(),
                _tmp: Some(t),
                runs: Mutex::new(HashMap::new()),
            }
        }
    })
}

fn read_back(dir: &Path, cfg: &RunConfig) -> Option<DeskRun> {
    let m = RunManifest::read(dir).ok()?;
    if m.status != "complete" || &m.config != cfg {
        return None;
    }
    let sweep = files::read_sweep(&dir.join(files::SWEEP)).ok()?;
    let (_, rows) = files::read_rows(&dir.join(files::ALLOCATIONS)).ok()?;
    let last = rows.last()?;
    Some(DeskRun {
        psnr: sweep.iter().map(|r| r.psnr_mean).collect(),
        final_allocation: last[1..].iter().map(|c| c.parse().unwrap()).collect(),
    })
}

fn desk_run(kind: SchedulerKind, seed: u64) -> Result<DeskRun, String> {
    let key = (kind.to_string(), seed);
    let d = desk();
    if let Some(r) = d.runs.lock().unwrap().get(&key) {
        return Ok(r.clone());
    }
    let cfg = desk_config(kind, seed);
    let dir = d.root.join(format!("{}_seed{seed}", kind.to_string().replace([':', '.'], "_")));
    let run = match read_back(&dir, &cfg) {
        Some(r) => {
            eprintln!("  [desk] {kind} seed {seed}: reusing {}", dir.display());
            r
        }
        None => {
            let t = Instant::now();
            eprintln!("  [desk] {kind} seed {seed}: training {} epochs", cfg.epochs);
            let out = experiment::train_run(&cfg, &dir, false).map_err(|e| format!("{kind} seed {seed}: {e}"))?;
            eprintln!("  [desk] {kind} seed {seed}: done in {:.0}s", t.elapsed().as_secs_f64());
            DeskRun {
                psnr: out.test.levels.iter().map(|l| l.psnr_mean).collect(),
                final_allocation: out.reports.last().unwrap().allocation.counts().to_vec(),
            }
        }
    };
    eprintln!(
        "  [desk] {kind} seed {seed}: test PSNR {:?}",
        run.psnr.iter().map(|p| (p * 100.0).round() / 100.0).collect::<Vec<_>>()
    );
    d.runs.lock().unwrap().insert(key, run.clone());
    Ok(run)
}

fn tally(lines: Vec<(bool, String)>) -> Outcome {
    let passed = lines.iter().filter(|l| l.0).count();
    let text = lines
        .iter()
        .map(|(ok, s)| format!("{}{s}", if *ok { "+" } else { "-" }))
        .collect::<Vec<_>>()
        .join(" | ");
    check(passed >= SEEDS_NEEDED, format!("{passed}/{} seeds: {text}", lines.len()))
}

const EASY: SchedulerKind = SchedulerKind::Fixated(FixedTarget::Value(EASY_SIGMA));
const HARD: SchedulerKind = SchedulerKind::Fixated(FixedTarget::Value(HARD_SIGMA));

// ---------------------------------------------------------------- 6

fn fixation_seed(s: u64) -> Result<(bool, String), String> {
    let (od, easy, hard) = (desk_run(SchedulerKind::OnDemand, s)?, desk_run(EASY, s)?, desk_run(HARD, s)?);
    let a = easy.level(1) > od.level(1) && easy.level(5) <= od.level(5) - FIXATION_GAP_DB;
    let b = hard.level(1) <= od.level(1) - FIXATION_GAP_DB;
    let c = od.mean() > easy.mean() && od.mean() > hard.mean();
    Ok((
        a && b && c,
        format!(
            "s{s} a:{} L1 {:.2}/{:.2} L5 {:.2}/{:.2}, b:{} L1 {:.2}, c:{} mean {:.2}/{:.2}/{:.2}",
            a as u8,
            easy.level(1),
            od.level(1),
            easy.level(5),
            od.level(5),
            b as u8,
            hard.level(1),
            c as u8,
            od.mean(),
            easy.mean(),
            hard.mean()
        ),
    ))
}

fn criterion_fixation() -> Outcome {
    tally(SEEDS.iter().map(|&s| fixation_seed(s)).collect::<Result<_, _>>()?)
}

// ---------------------------------------------------------------- 7

fn criterion_schedulers() -> Outcome {
    let mut lines = Vec::new();
    for s in SEEDS {
        let od = desk_run(SchedulerKind::OnDemand, s)?;
        let rigid = desk_run(SchedulerKind::RigidJoint, s)?;
        let staged = desk_run(SchedulerKind::StagedCurriculum, s)?;
        let mean_ok = od.mean() >= rigid.mean() - RIGID_SLACK_DB;
        let l6_ok = od.level(6) > rigid.level(6);
        let staged_ok = od.mean() > staged.mean() && rigid.mean() > staged.mean();
        lines.push((
            mean_ok && l6_ok && staged_ok,
            format!(
                "s{s} mean od/rigid/staged {:.2}/{:.2}/{:.2}, L6 od/rigid {:.2}/{:.2}",
                od.mean(),
                rigid.mean(),
                staged.mean(),
                od.level(6),
                rigid.level(6)
            ),
        ));
    }
    tally(lines)
}

// ---------------------------------------------------------------- 8

// Only seeds whose criterion-6 comparison held count.
fn criterion_drift() -> Outcome {
    let mut lines = Vec::new();
    for s in SEEDS {
        let accepted = fixation_seed(s)?.0;
        let od = desk_run(SchedulerKind::OnDemand, s)?;
        let uniform = 100 / TRAIN_LEVELS as usize;
        let l5 = od.final_allocation[TRAIN_LEVELS as usize - 1];
        let note = if accepted { "" } else { " (seed not accepted in 6)" };
        lines.push((accepted && l5 > uniform, format!("s{s} final allocation {:?}{note}", od.final_allocation)));
    }
    tally(lines)
}

// ---------------------------------------------------------------- 9

fn criterion_reproducibility() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut cfg = RunConfig::default();
    cfg.scheduler = SchedulerKind::OnDemand;
    cfg.epochs = 4;
    cfg.batch_size = 25;
    cfg.network.encoder_channels = vec![4, 8, 8, 8];
    cfg.data.synthetic = Some(300);
    cfg.data.train_size = 200;
    cfg.eval.trials = 2;
    cfg.seeds.master = 41;
    let first = experiment::train_run(&cfg, &tmp.path().join("first"), false).map_err(|e| e.to_string())?;
    let manifest = RunManifest::read(&first.dir).map_err(|e| e.to_string())?;
    let second = experiment::train_run(&manifest.config, &tmp.path().join("second"), false).map_err(|e| e.to_string())?;

    let metric_rows = |dir: &Path| -> Vec<Vec<String>> {
        let (h, rows) = files::read_rows(&dir.join(files::EPOCHS)).unwrap();
        let wall = h.iter().position(|c| c == "wall_secs").unwrap();
        rows.into_iter()
            .map(|mut r| {
                r.remove(wall);
                r
            })
            .collect()
    };
    let mut same = vec![("epochs", metric_rows(&first.dir) == metric_rows(&second.dir))];
    for f in [files::ALLOCATIONS, files::TEST_REPORT, files::SWEEP, files::CHECKPOINT] {
        let eq = std::fs::read(first.dir.join(f)).ok() == std::fs::read(second.dir.join(f)).ok();
        same.push((f, eq));
    }
    let differ: Vec<_> = same.iter().filter(|s| !s.1).map(|s| s.0).collect();
    check(
        differ.is_empty(),
        if differ.is_empty() {
            format!("{} epochs rerun from manifest: metric columns, allocations, test report, sweep, checkpoint bitwise equal", cfg.epochs)
        } else {
            format!("differs: {differ:?}")
        },
    )
}

fn main() {
    let only: Option<Vec<usize>> = std::env::var("ODL_ACCEPTANCE_ONLY")
        .ok()
        .map(|s| s.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let criteria: [(usize, &str, fn() -> Outcome); 9] = [
        (1, "gradient suite", criterion_gradients),
        (2, "allocation arithmetic", criterion_allocation),
        (3, "corruption suite", criterion_corruption),
        (4, "metric suite", criterion_metrics),
        (5, "tiling suite", criterion_tiling),
        (6, "fixation reproduction", criterion_fixation),
        (7, "scheduler trend", criterion_schedulers),
        (8, "allocation drift", criterion_drift),
        (9, "reproducibility", criterion_reproducibility),
    ];
    let mut failed = 0;
    for (n, name, f) in criteria {
        if only.as_ref().is_some_and(|o| !o.contains(&n)) {
            continue;
        }
        let t = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            Err(format!("panicked: {msg}"))
        });
        let secs = t.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {n} {name}: PASS ({secs:.1}s) {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n} {name}: FAIL ({secs:.1}s) {d}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
