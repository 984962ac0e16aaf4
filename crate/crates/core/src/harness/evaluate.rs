use serde::{Deserialize, Serialize};

use super::{corrupt_batch, image_hw, EVAL_CHUNK, KEY_TEST, KEY_VALIDATE};
use crate::corrupt::{sample_spec, CorruptionSpec, TaskKind};
use crate::error::{Error, Result};
use crate::metrics::{self, mean_and_se};
use crate::model::Restorer;
use crate::rng::Stream;
use crate::tensor::Tensor4;

/// Source of the per-sub-task PSNR vector that drives the scheduler.
pub trait Validator {
    fn validate(&mut self, model: &dyn Restorer, epoch: usize) -> Result<Vec<f64>>;
}

/// Restores `(image index, spec)` pairs in chunks and returns
/// `(l2 permille, psnr)` per pair, in order.
fn score(
    model: &dyn Restorer,
    images: &Tensor4<f64>,
    picks: &[(usize, CorruptionSpec)],
    fill: &[f64],
) -> Result<Vec<(f64, f64)>> {
    let mut out = Vec::with_capacity(picks.len());
    for chunk in picks.chunks(EVAL_CHUNK) {
        let (corrupted, clean) = corrupt_batch(images, chunk, fill)?;
        let restored = model.restore_batch(&corrupted)?;
        out.extend(metrics::per_sample(&restored, &clean)?);
    }
    Ok(out)
}

fn validation_spec(task: TaskKind, level: u8, hw: (usize, usize), seed: u64, epoch: usize, image: usize) -> Result<CorruptionSpec> {
    let mut rng = Stream::keyed(seed, &[KEY_VALIDATE, epoch as u64, level as u64, image as u64]);
    sample_spec(task, level, hw, &mut rng)
}

/// Mean PSNR of every validation image at each level `1..=levels`, with
/// corruptions seeded by `(seed, epoch, level, image index)`.
pub fn validate_subtasks(
    model: &dyn Restorer,
    val: &Tensor4<f64>,
    task: TaskKind,
    levels: usize,
    fill: &[f64],
    seed: u64,
    epoch: usize,
) -> Result<Vec<f64>> {
    let n = val.dims().n;
    if n == 0 {
        return Err(Error::Data("validation set is empty".into()));
    }
    let hw = image_hw(val);
    (1..=levels as u8)
        .map(|level| {
            let picks = (0..n)
                .map(|i| Ok((i, validation_spec(task, level, hw, seed, epoch, i)?)))
                .collect::<Result<Vec<_>>>()?;
            let scores = score(model, val, &picks, fill)?;
            Ok(scores.iter().map(|s| s.1).sum::<f64>() / n as f64)
        })
        .collect()
}

/// The standard validator over a held-out image set.
#[derive(Debug, Clone)]
pub struct SubtaskValidator {
    pub images: Tensor4<f64>,
    pub task: TaskKind,
    pub levels: usize,
    pub fill: Vec<f64>,
    pub seed: u64,
    /// Use the epoch-0 corruptions forever.
    pub fixed: bool,
}

impl Validator for SubtaskValidator {
    fn validate(&mut self, model: &dyn Restorer, epoch: usize) -> Result<Vec<f64>> {
        let e = if self.fixed { 0 } else { epoch };
        validate_subtasks(model, &self.images, self.task, self.levels, &self.fill, self.seed, e)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelReport {
    pub level: u8,
    /// Mean over the test set, one entry per trial.
    pub trial_l2: Vec<f64>,
    pub trial_psnr: Vec<f64>,
    pub l2_mean: f64,
    pub l2_se: f64,
    pub psnr_mean: f64,
    pub psnr_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    pub task: TaskKind,
    pub trials: usize,
    pub levels: Vec<LevelReport>,
}

impl TestReport {
    pub fn level(&self, level: u8) -> Option<&LevelReport> {
        self.levels.iter().find(|l| l.level == level)
    }

    /// Unweighted means of the per-level `(l2 permille, psnr)` over levels `1..=levels`.
    pub fn summary(&self, levels: usize) -> (f64, f64) {
        let picked: Vec<&LevelReport> = self.levels.iter().filter(|l| (l.level as usize) <= levels).collect();
        let k = picked.len() as f64;
        (
            picked.iter().map(|l| l.l2_mean).sum::<f64>() / k,
            picked.iter().map(|l| l.psnr_mean).sum::<f64>() / k,
        )
    }
}

/// Re-corrupts the whole test set at every level in every trial with
/// trial-indexed seeds and aggregates across trials.
pub fn evaluate_test(
    model: &dyn Restorer,
    test: &Tensor4<f64>,
    task: TaskKind,
    fill: &[f64],
    trials: usize,
    levels: &[u8],
    seed: u64,
) -> Result<TestReport> {
    let n = test.dims().n;
    if n == 0 {
        return Err(Error::Data("test set is empty".into()));
    }
    if trials == 0 {
        return Err(Error::Config("trials must be at least 1".into()));
    }
    let hw = image_hw(test);
    let mut reports = Vec::with_capacity(levels.len());
    for &level in levels {
        let mut trial_l2 = Vec::with_capacity(trials);
        let mut trial_psnr = Vec::with_capacity(trials);
        for t in 0..trials {
            let picks = (0..n)
                .map(|i| {
                    let mut rng = Stream::keyed(seed, &[KEY_TEST, t as u64, level as u64, i as u64]);
                    Ok((i, sample_spec(task, level, hw, &mut rng)?))
                })
                .collect::<Result<Vec<_>>>()?;
            let scores = score(model, test, &picks, fill)?;
            trial_l2.push(scores.iter().map(|s| s.0).sum::<f64>() / n as f64);
            trial_psnr.push(scores.iter().map(|s| s.1).sum::<f64>() / n as f64);
        }
        let (l2_mean, l2_se) = mean_and_se(&trial_l2);
        let (psnr_mean, psnr_se) = mean_and_se(&trial_psnr);
        reports.push(LevelReport {
            level,
            trial_l2,
            trial_psnr,
            l2_mean,
            l2_se,
            psnr_mean,
            psnr_se,
        });
    }
    Ok(TestReport {
        task,
        trials,
        levels: reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::IdentityRestorer;
    use crate::tensor::Dims;

    fn images(n: usize, seed: u64) -> Tensor4<f64> {
        let mut rng = Stream::new(seed);
        Tensor4::from_fn(Dims::new(n, 1, 64, 64), |_, _, _, _| rng.uniform_in(-0.8, 0.8))
    }

    #[test]
    fn identity_psnr_falls_with_level() {
        let id = IdentityRestorer { channels: 1, size: 64 };
        let p = validate_subtasks(&id, &images(50, 1), TaskKind::Denoise, 5, &[0.0], 9, 3).unwrap();
        assert!(p.windows(2).all(|w| w[0] > w[1]), "{p:?}");
        let again = validate_subtasks(&id, &images(50, 1), TaskKind::Denoise, 5, &[0.0], 9, 3).unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn image_major_order_gives_same_psnr() {
        let id = IdentityRestorer { channels: 1, size: 64 };
        let val = images(12, 2);
        let p = validate_subtasks(&id, &val, TaskKind::Deblur, 5, &[0.0], 4, 1).unwrap();
        let mut sums = vec![0.0; 5];
        for i in 0..12 {
            for level in 1..=5u8 {
                let spec = validation_spec(TaskKind::Deblur, level, (64, 64), 4, 1, i).unwrap();
                let img = val.sample_tensor(i);
                let c = crate::corrupt::apply(&img, &spec, &[0.0]).unwrap();
                sums[level as usize - 1] += metrics::psnr(&c, &img).unwrap();
            }
        }
        for (a, s) in p.iter().zip(&sums) {
            assert!((a - s / 12.0).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_validation_set_rejected() {
        let id = IdentityRestorer { channels: 1, size: 64 };
        let empty = Tensor4::zeros(Dims::new(0, 1, 64, 64));
        assert!(validate_subtasks(&id, &empty, TaskKind::Denoise, 5, &[0.0], 0, 0).is_err());
    }

    #[test]
    fn test_report_statistics() {
        let id = IdentityRestorer { channels: 1, size: 64 };
        let test = images(10, 3);
        let r = evaluate_test(&id, &test, TaskKind::Denoise, &[0.0], 4, &[1, 2, 3, 4, 5, 6], 7).unwrap();
        assert_eq!(r, evaluate_test(&id, &test, TaskKind::Denoise, &[0.0], 4, &[1, 2, 3, 4, 5, 6], 7).unwrap());
        let l1 = r.level(1).unwrap();
        let l6 = r.level(6).unwrap();
        for t in 0..4 {
            assert!(l6.trial_psnr[t] < l1.trial_psnr[t]);
        }
        for l in &r.levels {
            let m = l.trial_psnr.iter().sum::<f64>() / 4.0;
            let var = l.trial_psnr.iter().map(|v| (v - m).powi(2)).sum::<f64>() / 3.0;
            assert!((l.psnr_se - (var / 4.0).sqrt()).abs() < 1e-12);
        }
        let one = evaluate_test(&id, &test, TaskKind::Denoise, &[0.0], 1, &[1, 2], 7).unwrap();
        assert!(one.levels.iter().all(|l| l.psnr_se == 0.0 && l.l2_se == 0.0));
    }
}
