//! Mini-batch training with Adam, seeded shuffling and optional
//! augmentation.

use std::io::Write;
use std::path::Path;

use lfinet_tensor::ops::NormMode;
use lfinet_tensor::optim::{Adam, AdamConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, io_err, Error, Result};
use crate::loss::dice_bce_loss;
use crate::metrics::{confusion, scores, ConfusionCounts};
use crate::model::Lfinet;
use crate::raster::{stack, unstack};
use crate::seed::{derive_seed, Stream};
use crate::trajdata::{augment, AugmentOp, SamplePair};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub betas: [f64; 2],
    pub eps: f64,
    /// Draw one of identity, three rotations or two flips per sample.
    pub augment: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig { batch_size: 16, epochs: 1, lr: 1e-4, betas: [0.9, 0.999], eps: 1e-8, augment: false }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(invalid("batch_size and epochs must be positive"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) || !(self.eps > 0.0) {
            return Err(invalid(format!("invalid lr {} or eps {}", self.lr, self.eps)));
        }
        if !self.betas.iter().all(|b| (0.0..1.0).contains(b)) {
            return Err(invalid(format!("betas must lie in [0, 1), got {:?}", self.betas)));
        }
        Ok(())
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig { lr: self.lr, beta1: self.betas[0], beta2: self.betas[1], eps: self.eps }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss: f64,
    pub dice: f64,
    pub bce: f64,
    /// Micro-averaged IoU of the train-mode predictions seen this epoch.
    pub train_iou: f64,
}

pub const METRICS_HEADER: &str = "epoch,loss,dice,bce,train_iou";

impl EpochStats {
    /// Shortest round-trip formatting, so identical runs give identical bytes.
    pub fn csv_row(&self) -> String {
        format!("{},{},{},{},{}", self.epoch, self.loss, self.dice, self.bce, self.train_iou)
    }
}

pub struct Trainer<'m> {
    pub model: &'m Lfinet<f32>,
    pub config: TrainConfig,
    seed: u64,
    opt: Adam<f32>,
    epoch: usize,
}

impl<'m> Trainer<'m> {
    pub fn new(model: &'m Lfinet<f32>, config: TrainConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let opt = Adam::new(config.adam(), &model.store)?;
        Ok(Trainer { model, config, seed, opt, epoch: 0 })
    }

    pub fn steps_taken(&self) -> u64 {
        self.opt.steps_taken()
    }

    /// Sample order and augmentation for one epoch; a pure function of the
    /// seed and the epoch index.
    pub fn epoch_plan(&self, len: usize, epoch: usize) -> Vec<(usize, Option<AugmentOp>)> {
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(self.seed, Stream::Shuffle, epoch as u64)));
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(self.seed, Stream::Augment, epoch as u64));
        order
            .into_iter()
            .map(|i| {
                let op = if self.config.augment {
                    let k = rng.random_range(0..=AugmentOp::ALL.len());
                    AugmentOp::ALL.get(k).copied()
                } else {
                    None
                };
                (i, op)
            })
            .collect()
    }

    pub fn train_epoch(&mut self, data: &[SamplePair]) -> Result<EpochStats> {
        if data.is_empty() {
            return Err(invalid("training set is empty"));
        }
        let epoch = self.epoch;
        let plan = self.epoch_plan(data.len(), epoch);
        let (mut loss, mut dice, mut bce) = (0.0, 0.0, 0.0);
        let mut counts = ConfusionCounts::default();
        for (batch, chunk) in plan.chunks(self.config.batch_size).enumerate() {
            let pairs = chunk
                .iter()
                .map(|&(i, op)| match op {
                    Some(op) => augment(&data[i], op),
                    None => Ok(data[i].clone()),
                })
                .collect::<Result<Vec<_>>>()?;
            let images: Vec<_> = pairs.iter().map(|p| p.image.clone()).collect();
            let masks: Vec<_> = pairs.iter().map(|p| p.mask.clone()).collect();
            let x = stack::<f32>(&images)?;
            let y = stack::<f32>(&masks)?;

            self.model.store.zero_grad();
            let prob = self.model.forward(&x, NormMode::Train)?;
            let l = dice_bce_loss(&prob, &y)?;
            let (lt, ld, lb) = l.values();
            if !lt.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch });
            }
            l.total.backward()?;
            self.opt.step(&self.model.store)?;

            let w = chunk.len() as f64;
            loss += lt * w;
            dice += ld * w;
            bce += lb * w;
            for (p, m) in unstack(&prob, 0)?.iter().zip(&masks) {
                counts.merge(&confusion(&p.binarize(), m)?);
            }
        }
        self.epoch += 1;
        let n = data.len() as f64;
        Ok(EpochStats { epoch, loss: loss / n, dice: dice / n, bce: bce / n, train_iou: scores(&counts).iou })
    }
}

/// Appends rows to a metrics CSV, writing the header when the file is new.
pub struct MetricsLog {
    file: std::fs::File,
}

impl MetricsLog {
    pub fn create(path: &Path) -> Result<Self> {
        let mut file = std::fs::File::create(path).map_err(io_err(path))?;
        writeln!(file, "{METRICS_HEADER}").map_err(io_err(path))?;
        Ok(MetricsLog { file })
    }

    pub fn append(&mut self, s: &EpochStats) -> Result<()> {
        writeln!(self.file, "{}", s.csv_row()).map_err(|e| Error::Invalid(format!("writing metrics: {e}")))?;
        self.file.flush().map_err(|e| Error::Invalid(format!("writing metrics: {e}")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Ablation, ModelConfig};
    use crate::raster::Raster;

    fn small() -> ModelConfig {
        ModelConfig {
            image_size: [16, 16],
            channels: [8, 8, 16],
            st_dim: 16,
            st_layers: 1,
            st_heads: 2,
            st_ffn_mult: 2,
            ablate: Default::default(),
        }
    }

    fn sample(id: &str, seed: u64) -> SamplePair {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let image = Raster::new(16, 16, (0..256).map(|_| rng.random::<f32>()).collect()).unwrap();
        let mut mask = Raster::zeros(16, 16);
        for c in 0..16 {
            mask.set(5, c, 1.0);
        }
        SamplePair { id: id.into(), image, mask }
    }

    #[test]
    fn zero_lr_leaves_parameters_unchanged() {
        let m = Lfinet::<f32>::new(small(), 3).unwrap();
        let before: Vec<Vec<f32>> = m.store.params().map(|(_, p)| p.to_vec()).collect();
        let cfg = TrainConfig { lr: 0.0, batch_size: 2, ..Default::default() };
        let mut t = Trainer::new(&m, cfg, 3).unwrap();
        let data = vec![sample("a", 0), sample("b", 1), sample("c", 2)];
        t.train_epoch(&data).unwrap();
        assert_eq!(t.steps_taken(), 2);
        let after: Vec<Vec<f32>> = m.store.params().map(|(_, p)| p.to_vec()).collect();
        assert_eq!(before, after);
    }

    #[test]
    fn trivial_sample_loss_decreases() {
        let mut cfg_m = small();
        cfg_m.ablate.insert(Ablation::St);
        let m = Lfinet::<f32>::new(cfg_m, 5).unwrap();
        let mut s = sample("z", 9);
        s.mask = Raster::zeros(16, 16);
        let cfg = TrainConfig { lr: 1e-3, batch_size: 1, ..Default::default() };
        let mut t = Trainer::new(&m, cfg, 5).unwrap();
        let data = vec![s; 10];
        let losses: Vec<f64> = (0..5).map(|_| t.train_epoch(&data).unwrap().loss).collect();
        assert_eq!(t.steps_taken(), 50);
        assert!(losses.windows(2).all(|w| w[1] < w[0]), "{losses:?}");
    }

    #[test]
    fn plan_is_seeded_permutation() {
        let m = Lfinet::<f32>::new(small(), 0).unwrap();
        let cfg = TrainConfig { augment: true, ..Default::default() };
        let t = Trainer::new(&m, cfg.clone(), 11).unwrap();
        let p0 = t.epoch_plan(10, 0);
        assert_eq!(p0, Trainer::new(&m, cfg, 11).unwrap().epoch_plan(10, 0));
        assert_ne!(p0, t.epoch_plan(10, 1));
        let mut idx: Vec<usize> = p0.iter().map(|p| p.0).collect();
        idx.sort();
        assert_eq!(idx, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn nan_input_aborts_naming_the_batch() {
        let m = Lfinet::<f32>::new(small(), 1).unwrap();
        let mut t = Trainer::new(&m, TrainConfig { batch_size: 1, ..Default::default() }, 1).unwrap();
        let mut bad = sample("bad", 4);
        bad.image.data[7] = f32::NAN;
        // batch order is shuffled, so find where the bad sample lands
        let plan = t.epoch_plan(3, 0);
        let pos = plan.iter().position(|p| p.0 == 2).unwrap();
        let err = t.train_epoch(&[sample("a", 0), sample("b", 1), bad]).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { epoch: 0, batch } if batch == pos), "{err}");
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(TrainConfig { batch_size: 0, ..Default::default() }.validate().is_err());
        assert!(TrainConfig { betas: [0.9, 1.0], ..Default::default() }.validate().is_err());
        assert!(TrainConfig { lr: f64::NAN, ..Default::default() }.validate().is_err());
    }
}
