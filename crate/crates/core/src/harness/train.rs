use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{corrupt_batch, image_hw, TrainConfig, Validator, KEY_ORDER, KEY_POOL, KEY_TRAIN};
use crate::corrupt::{self, sample_spec, CorruptionSpec};
use crate::error::{Error, Result};
use crate::model::Trainable;
use crate::rng::Stream;
use crate::schedule::{select_hard, Allocation, FixedTarget, SchedulerKind, SchedulerState};
use crate::tensor::Tensor4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochReport {
    /// 1-based.
    pub epoch: usize,
    pub mean_loss: f64,
    /// Mean validation PSNR per sub-task after this epoch.
    pub psnr: Vec<f64>,
    /// Allocation this epoch trained under.
    pub allocation: Allocation,
    pub next_allocation: Allocation,
    /// Training instances drawn this epoch.
    pub instances: usize,
    pub wall_secs: f64,
}

/// What is needed beyond the model checkpoint to continue a run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainerState {
    pub epochs_done: usize,
    pub last_psnr: Option<Vec<f64>>,
    pub instances: u64,
}

struct Pool {
    corrupted: Tensor4<f64>,
    source: Vec<usize>,
}

/// Drives one model through the configured epochs.
pub struct Trainer<'a> {
    cfg: TrainConfig,
    images: &'a Tensor4<f64>,
    fill: Vec<f64>,
    scheduler: SchedulerState,
    pool: Option<Pool>,
    instances: u64,
}

impl<'a> Trainer<'a> {
    pub fn new(cfg: &TrainConfig, images: &'a Tensor4<f64>, fill: &[f64]) -> Result<Self> {
        cfg.validate()?;
        if images.dims().n == 0 {
            return Err(Error::Data("training set is empty".into()));
        }
        if fill.len() != images.dims().c {
            return Err(Error::Data(format!(
                "fill has {} channels, images have {}",
                fill.len(),
                images.dims().c
            )));
        }
        let scheduler = SchedulerState::new(cfg.scheduler, cfg.task, cfg.levels, cfg.stage_length())?;
        let pool = match cfg.scheduler {
            SchedulerKind::HardMining => Some(build_pool(cfg, images, fill)?),
            _ => None,
        };
        let t = Self {
            cfg: cfg.clone(),
            images,
            fill: fill.to_vec(),
            scheduler,
            pool,
            instances: 0,
        };
        t.batches()?;
        Ok(t)
    }

    pub fn resume(cfg: &TrainConfig, images: &'a Tensor4<f64>, fill: &[f64], state: TrainerState) -> Result<Self> {
        let mut t = Self::new(cfg, images, fill)?;
        if state.epochs_done > 0 && state.last_psnr.is_none() {
            return Err(Error::Config("resume state has completed epochs but no PSNR vector".into()));
        }
        t.scheduler.epoch = state.epochs_done;
        t.scheduler.last_psnr = state.last_psnr;
        t.instances = state.instances;
        Ok(t)
    }

    pub fn state(&self) -> TrainerState {
        TrainerState {
            epochs_done: self.scheduler.epoch,
            last_psnr: self.scheduler.last_psnr.clone(),
            instances: self.instances,
        }
    }

    pub fn epochs_done(&self) -> usize {
        self.scheduler.epoch
    }

    pub fn finished(&self) -> bool {
        self.scheduler.epoch >= self.cfg.epochs
    }

    /// Training instances consumed so far.
    pub fn instances(&self) -> u64 {
        self.instances
    }

    pub fn batches(&self) -> Result<usize> {
        let available = match &self.pool {
            Some(p) => p.source.len(),
            None => self.images.dims().n,
        };
        self.cfg.batches_for(available)
    }

    /// Allocation the next epoch will train under.
    pub fn allocation(&self) -> Result<Allocation> {
        self.scheduler.allocate(self.cfg.batch_size)
    }

    pub fn run_epoch<M: Trainable>(&mut self, model: &mut M, validator: &mut dyn Validator) -> Result<EpochReport> {
        let epoch = self.scheduler.epoch;
        let started = Instant::now();
        let allocation = self.allocation()?;
        let batches = self.batches()?;
        let mut order: Vec<usize> = (0..match &self.pool {
            Some(p) => p.source.len(),
            None => self.images.dims().n,
        })
            .collect();
        Stream::keyed(self.cfg.data_seed, &[KEY_ORDER, epoch as u64]).shuffle(&mut order);

        let b = self.cfg.batch_size;
        let mut loss_sum = 0.0;
        for batch in 0..batches {
            let slots = &order[batch * b..(batch + 1) * b];
            let loss = match &self.pool {
                Some(pool) => self.hard_mining_step(model, pool, slots, epoch)?,
                None => {
                    let picks = self.batch_specs(slots, &allocation, epoch, batch)?;
                    let (corrupted, clean) = corrupt_batch(self.images, &picks, &self.fill)?;
                    model.train_step(&corrupted, &clean, &self.cfg.adam)?
                }
            };
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("epoch {} batch {batch}: loss {loss}", epoch + 1)));
            }
            loss_sum += loss;
        }
        let instances = batches * b;
        self.instances += instances as u64;

        let psnr = validator.validate(model, epoch)?;
        if let Some((i, p)) = psnr.iter().enumerate().find(|(_, p)| !p.is_finite()) {
            return Err(Error::NonFinite(format!("validation PSNR of level {} is {p}", i + 1)));
        }
        self.scheduler.observe(psnr.clone())?;
        let next_allocation = self.allocation()?;
        Ok(EpochReport {
            epoch: epoch + 1,
            mean_loss: loss_sum / batches as f64,
            psnr,
            allocation,
            next_allocation,
            instances,
            wall_secs: started.elapsed().as_secs_f64(),
        })
    }

    /// Slot `j` of the batch gets image `slots[j]` at the `j`-th level of
    /// the allocation.
    fn batch_specs(&self, slots: &[usize], allocation: &Allocation, epoch: usize, batch: usize) -> Result<Vec<(usize, CorruptionSpec)>> {
        let mut rng = Stream::keyed(self.cfg.corruption_seed, &[KEY_TRAIN, epoch as u64, batch as u64]);
        let hw = image_hw(self.images);
        let levels = allocation.slot_levels();
        slots
            .iter()
            .zip(levels)
            .map(|(&img, level)| {
                let spec = match self.cfg.scheduler {
                    SchedulerKind::Fixated(FixedTarget::Value(v)) => {
                        CorruptionSpec::at_difficulty(self.cfg.task, v, hw, &mut rng)?
                    }
                    _ => sample_spec(self.cfg.task, level, hw, &mut rng)?,
                };
                Ok((img, spec))
            })
            .collect()
    }

    fn hard_mining_step<M: Trainable>(&self, model: &mut M, pool: &Pool, slots: &[usize], epoch: usize) -> Result<f64> {
        let corrupted = Tensor4::stack(slots.iter().map(|&i| pool.corrupted.sample_tensor(i)).collect::<Vec<_>>().iter())?;
        let clean = Tensor4::stack(slots.iter().map(|&i| self.images.sample_tensor(pool.source[i])).collect::<Vec<_>>().iter())?;
        if epoch < self.cfg.hard_mining.warmup_epochs {
            return model.train_step(&corrupted, &clean, &self.cfg.adam);
        }
        let losses = model.sample_losses(&corrupted, &clean)?;
        let keep = select_hard(&losses, self.cfg.hard_mining.keep);
        let pick = |t: &Tensor4<f64>| Tensor4::stack(keep.iter().map(|&k| t.sample_tensor(k)).collect::<Vec<_>>().iter());
        model.train_step(&pick(&corrupted)?, &pick(&clean)?, &self.cfg.adam)
    }
}

/// Static pool: instance `j` is image `j mod n` corrupted once at level
/// `(j mod N) + 1`.
fn build_pool(cfg: &TrainConfig, images: &Tensor4<f64>, fill: &[f64]) -> Result<Pool> {
    let n = images.dims().n;
    let size = cfg.hard_mining.pool_size.unwrap_or(n);
    let hw = image_hw(images);
    let mut corrupted = Vec::with_capacity(size);
    let mut source = Vec::with_capacity(size);
    for j in 0..size {
        let level = (j % cfg.levels) as u8 + 1;
        let mut rng = Stream::keyed(cfg.corruption_seed, &[KEY_POOL, j as u64]);
        let spec = sample_spec(cfg.task, level, hw, &mut rng)?;
        corrupted.push(corrupt::apply(&images.sample_tensor(j % n), &spec, fill)?);
        source.push(j % n);
    }
    Ok(Pool {
        corrupted: Tensor4::stack(&corrupted)?,
        source,
    })
}

/// Runs every configured epoch and returns the reports.
pub fn train<M: Trainable>(
    cfg: &TrainConfig,
    model: &mut M,
    images: &Tensor4<f64>,
    fill: &[f64],
    validator: &mut dyn Validator,
) -> Result<Vec<EpochReport>> {
    let mut trainer = Trainer::new(cfg, images, fill)?;
    let mut reports = Vec::with_capacity(cfg.epochs);
    while !trainer.finished() {
        let r = trainer.run_epoch(model, validator)?;
        log::info!(
            "epoch {} loss {:.5} psnr {:?} next {}",
            r.epoch,
            r.mean_loss,
            r.psnr.iter().map(|p| (p * 100.0).round() / 100.0).collect::<Vec<_>>(),
            r.next_allocation
        );
        reports.push(r);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corrupt::TaskKind;
    use crate::model::{IdentityRestorer, Restorer};
    use crate::tensor::Dims;

    struct Fixed(Vec<f64>);

    impl Validator for Fixed {
        fn validate(&mut self, _: &dyn Restorer, _: usize) -> Result<Vec<f64>> {
            Ok(self.0.clone())
        }
    }

    fn data(n: usize) -> Tensor4<f64> {
        let mut rng = Stream::new(8);
        Tensor4::from_fn(Dims::new(n, 1, 64, 64), |_, _, _, _| rng.uniform_in(-0.5, 0.5))
    }

    fn stub() -> IdentityRestorer {
        IdentityRestorer { channels: 1, size: 64 }
    }

    #[test]
    fn on_demand_reacts_to_hardwired_psnr() {
        let cfg = TrainConfig::new(TaskKind::Denoise, SchedulerKind::OnDemand, 2);
        let imgs = data(200);
        let mut v = Fixed(vec![20.0, 25.0, 30.0, 35.0, 40.0]);
        let r = train(&cfg, &mut stub(), &imgs, &[0.0], &mut v).unwrap();
        assert_eq!(r[0].allocation.0, vec![20; 5]);
        assert_eq!(r[1].allocation.0, vec![28, 23, 19, 16, 14]);
        assert_eq!(r[0].instances, 200);
    }

    #[test]
    fn every_kind_starts_uniform_on_equal_budget() {
        let imgs = data(230);
        for kind in [
            SchedulerKind::OnDemand,
            SchedulerKind::RigidJoint,
            SchedulerKind::CumulativeAnti,
            SchedulerKind::HardMining,
        ] {
            let cfg = TrainConfig::new(TaskKind::Denoise, kind, 3);
            let mut v = Fixed(vec![30.0; 5]);
            let r = train(&cfg, &mut stub(), &imgs, &[0.0], &mut v).unwrap();
            if kind != SchedulerKind::CumulativeAnti {
                assert_eq!(r[0].allocation.0, vec![20; 5], "{kind}");
            }
            assert_eq!(r.iter().map(|e| e.instances).sum::<usize>(), 600, "{kind}");
        }
    }

    #[test]
    fn staged_curriculum_walks_the_levels() {
        let mut cfg = TrainConfig::new(TaskKind::Denoise, SchedulerKind::StagedCurriculum, 5);
        cfg.stage_length = Some(1);
        cfg.batch_size = 10;
        let imgs = data(20);
        let r = train(&cfg, &mut stub(), &imgs, &[0.0], &mut Fixed(vec![30.0; 5])).unwrap();
        for (e, rep) in r.iter().enumerate() {
            assert_eq!(rep.allocation, Allocation::one_hot(5, e, 10));
        }
    }

    #[test]
    fn resume_matches_uninterrupted_schedule() {
        let cfg = TrainConfig::new(TaskKind::Denoise, SchedulerKind::OnDemand, 4);
        let imgs = data(100);
        let mut v = Fixed(vec![21.0, 24.0, 26.0, 33.0, 38.0]);
        let full = train(&cfg, &mut stub(), &imgs, &[0.0], &mut v).unwrap();
        let mut t = Trainer::new(&cfg, &imgs, &[0.0]).unwrap();
        let mut m = stub();
        let first = t.run_epoch(&mut m, &mut v).unwrap();
        let mut t2 = Trainer::resume(&cfg, &imgs, &[0.0], t.state()).unwrap();
        let mut rest = vec![first];
        while !t2.finished() {
            rest.push(t2.run_epoch(&mut m, &mut v).unwrap());
        }
        let strip = |r: &[EpochReport]| r.iter().map(|e| (e.mean_loss, e.allocation.clone())).collect::<Vec<_>>();
        assert_eq!(strip(&full), strip(&rest));
    }

    #[test]
    fn too_few_images_for_a_batch() {
        let cfg = TrainConfig::new(TaskKind::Denoise, SchedulerKind::RigidJoint, 1);
        assert!(Trainer::new(&cfg, &data(99), &[0.0]).is_err());
    }
}
