//! The training loop around [`csjscc_core::train::train_step`].

use std::path::PathBuf;

use csjscc_core::autodiff::AdamConfig;
use csjscc_core::channel::Awgn;
use csjscc_core::train::{self, LrSchedule};
use csjscc_core::{rng, AdamState, ArchitectureConfig, JsccModel, Tensor};
use rand::seq::SliceRandom;

use crate::checkpoint::Checkpoint;
use crate::config::ExperimentConfig;
use crate::data;
use crate::error::{Error, Result};

// Stream tags keep the derived seed families disjoint.
const TAG_INIT: u64 = 0x11;
const TAG_SHUFFLE: u64 = 0x22;
const TAG_NOISE: u64 = 0x33;
const TAG_CROP: u64 = 0x44;
const TAG_VALIDATION: u64 = 0x55;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub architecture: ArchitectureConfig,
    pub batch_size: usize,
    pub max_steps: u64,
    pub schedule: LrSchedule,
    pub snr_train_db: f64,
    pub seed: u64,
    pub eval_every: u64,
    pub patience: usize,
    pub checkpoint_every: u64,
    pub validation_images: usize,
    pub crop: Option<usize>,
    /// Where periodic and final checkpoints go; nothing is written when `None`.
    pub checkpoint_path: Option<PathBuf>,
}

impl TrainConfig {
    pub fn from_experiment(cfg: &ExperimentConfig, architecture: ArchitectureConfig) -> Self {
        let t = &cfg.training;
        TrainConfig {
            architecture,
            batch_size: t.batch_size,
            max_steps: t.max_steps,
            schedule: t.schedule(),
            snr_train_db: cfg.channel.snr_train_db,
            seed: cfg.seed,
            eval_every: t.eval_every,
            patience: t.patience,
            checkpoint_every: t.checkpoint_every,
            validation_images: t.validation_images,
            crop: cfg.data.crop,
            checkpoint_path: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepRecord {
    pub step: u64,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub history: Vec<StepRecord>,
    /// `(step, mean validation PSNR)` per validation pass.
    pub validation: Vec<(u64, f64)>,
    pub stopped_early: bool,
}

/// Fresh per-step noise stream seed for batch slot `slot`.
pub fn noise_seed(seed: u64, step: u64, slot: usize) -> u64 {
    rng::derive_seed(seed, &[TAG_NOISE, step, slot as u64])
}

/// Endless sequence of image indices, reshuffled every epoch.
struct Sampler {
    seed: u64,
    epoch: u64,
    order: Vec<usize>,
    pos: usize,
}

impl Sampler {
    fn new(len: usize, seed: u64) -> Self {
        let mut s = Sampler {
            seed,
            epoch: 0,
            order: (0..len).collect(),
            pos: len,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order.sort_unstable();
        self.order.shuffle(&mut rng::stream(rng::derive_seed(
            self.seed,
            &[TAG_SHUFFLE, self.epoch],
        )));
        self.epoch += 1;
        self.pos = 0;
    }

    fn next(&mut self) -> usize {
        if self.pos == self.order.len() {
            self.reshuffle();
        }
        self.pos += 1;
        self.order[self.pos - 1]
    }
}

/// Prepare one training image: optional random crop, then reflect padding
/// to a block multiple.
fn prepare(image: &Tensor<f32>, cfg: &TrainConfig, step: u64, slot: usize) -> Result<Tensor<f32>> {
    let image = match cfg.crop {
        Some(size) => {
            let mut r = rng::stream(rng::derive_seed(cfg.seed, &[TAG_CROP, step, slot as u64]));
            data::random_crop(image, size, &mut r)?
        }
        None => image.clone(),
    };
    Ok(data::pad_to_block_multiple(&image, cfg.architecture.block_size)?.0)
}

/// Train from a fresh initialization. `progress` sees every step record.
pub fn train_loop(
    cfg: &TrainConfig,
    train_set: &[Tensor<f32>],
    validation_set: &[Tensor<f32>],
    mut progress: impl FnMut(&StepRecord),
) -> Result<TrainOutcome> {
    if train_set.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    if cfg.batch_size == 0 {
        return Err(Error::Config("batch_size must be >= 1".into()));
    }
    let model = JsccModel::new(cfg.architecture.clone())?;
    let mut params = model.init_params::<f32>(rng::derive_seed(cfg.seed, &[TAG_INIT]));
    let mut adam = AdamState::new(AdamConfig::default());
    let channel = Awgn::from_snr(cfg.snr_train_db, cfg.architecture.power);
    let validation: Vec<Tensor<f32>> = validation_set
        .iter()
        .take(cfg.validation_images)
        .map(|x| Ok(data::pad_to_block_multiple(x, cfg.architecture.block_size)?.0))
        .collect::<Result<_>>()?;

    let mut sampler = Sampler::new(train_set.len(), cfg.seed);
    let mut history = Vec::new();
    let mut val_history = Vec::new();
    let mut best = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut stopped_early = false;

    let snapshot =
        |step: u64, params: &csjscc_core::ParameterStore<f32>, adam: &AdamState<f32>| Checkpoint {
            architecture: cfg.architecture.clone(),
            step,
            snr_train_db: cfg.snr_train_db,
            params: params.clone(),
            adam: adam.clone(),
        };

    let mut step = 0;
    while step < cfg.max_steps {
        step += 1;
        let batch: Vec<Tensor<f32>> = (0..cfg.batch_size)
            .map(|slot| prepare(&train_set[sampler.next()], cfg, step, slot))
            .collect::<Result<_>>()?;
        let refs: Vec<&Tensor<f32>> = batch.iter().collect();
        let seeds: Vec<u64> = (0..batch.len())
            .map(|slot| noise_seed(cfg.seed, step, slot))
            .collect();
        let lr = cfg.schedule.at(step);
        let loss = train::train_step(&model, &mut params, &mut adam, &refs, &channel, &seeds, lr)?;
        let record = StepRecord { step, lr, loss };
        progress(&record);
        history.push(record);

        if cfg.checkpoint_every > 0 && step % cfg.checkpoint_every == 0 && step < cfg.max_steps {
            if let Some(path) = &cfg.checkpoint_path {
                snapshot(step, &params, &adam).save(path)?;
            }
        }
        if cfg.eval_every > 0 && step % cfg.eval_every == 0 && !validation.is_empty() {
            let mut total = 0.0;
            for (i, x) in validation.iter().enumerate() {
                let seed = rng::derive_seed(cfg.seed, &[TAG_VALIDATION, step, i as u64]);
                total +=
                    train::transmit_repeated(&model, &params, x, &channel, [seed])?.mean_psnr_db;
            }
            let psnr = total / validation.len() as f64;
            val_history.push((step, psnr));
            if psnr > best {
                best = psnr;
                stale = 0;
            } else {
                stale += 1;
                if stale >= cfg.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }

    let checkpoint = snapshot(step, &params, &adam);
    if let Some(path) = &cfg.checkpoint_path {
        checkpoint.save(path)?;
    }
    Ok(TrainOutcome {
        checkpoint,
        history,
        validation: val_history,
        stopped_early,
    })
}

/// Mean of the first and last `window` losses.
pub fn loss_windows(history: &[StepRecord], window: usize) -> (f64, f64) {
    let w = window.min(history.len()).max(1);
    let mean = |s: &[StepRecord]| s.iter().map(|r| r.loss).sum::<f64>() / s.len().max(1) as f64;
    (
        mean(&history[..w.min(history.len())]),
        mean(&history[history.len().saturating_sub(w)..]),
    )
}
