//! Joint optimisation of encoder and decoder through the channel, and the
//! repeated-transmission evaluation of a single image.

use alloc::vec::Vec;

use crate::autodiff::{AdamState, Graph, ParamGrads, ParameterStore};
use crate::channel::Awgn;
use crate::error::{Error, Result};
use crate::metrics;
use crate::model::JsccModel;
use crate::rng;
use crate::tensor::Tensor;

/// Mean over the batch of each image's mean squared pixel error.
pub fn mse_loss(batch: &[Tensor<f32>], reconstructed: &[Tensor<f32>]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if batch.len() != reconstructed.len() {
        return Err(Error::shape(
            "mse_loss",
            "batch",
            alloc::format!(
                "{} targets vs {} reconstructions",
                batch.len(),
                reconstructed.len()
            ),
        ));
    }
    let total = batch
        .iter()
        .zip(reconstructed)
        .map(|(x, y)| metrics::mse(x, y))
        .sum::<Result<f64>>()?;
    Ok(total / batch.len() as f64)
}

/// Step-indexed learning rate: `initial` for steps `1..=drop_step`, `after` later.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LrSchedule {
    pub initial: f64,
    pub drop_step: u64,
    pub after: f64,
}

impl LrSchedule {
    pub fn constant(lr: f64) -> Self {
        LrSchedule {
            initial: lr,
            drop_step: u64::MAX,
            after: lr,
        }
    }

    /// Rate used by the optimizer step numbered `step` (1-based).
    pub fn at(&self, step: u64) -> f64 {
        if step > self.drop_step {
            self.after
        } else {
            self.initial
        }
    }
}

/// Forward and reverse pass for one image with its own noise stream.
/// Gradients are those of `weight * mse(x_hat, x)`.
pub fn image_gradients(
    model: &JsccModel,
    params: &ParameterStore<f32>,
    image: &Tensor<f32>,
    channel: &Awgn,
    noise_seed: u64,
    weight: f32,
) -> Result<(f64, ParamGrads<f32>)> {
    let mut graph = Graph::new(params);
    let x = graph.constant(image.clone());
    let mut noise = rng::stream(noise_seed);
    let y = model.forward(&mut graph, x, channel, &mut noise)?;
    let loss = graph.mse(y, image)?;
    let value = graph.value(loss).data()[0];
    if !value.is_finite() {
        let culprit = graph
            .first_non_finite()
            .map(|(v, _)| graph.describe(v))
            .unwrap_or_else(|| alloc::string::String::from("loss"));
        return Err(Error::NonFinite(culprit));
    }
    let grads = graph.backward_with_seed(loss, weight);
    Ok((value as f64, grads.into_params()))
}

/// One optimizer step on `batch`: fresh noise per image (stream seeds from
/// `noise_seeds`), gradients of the batch-mean loss summed in batch order,
/// then a single Adam update. Returns the batch-mean loss.
pub fn train_step(
    model: &JsccModel,
    params: &mut ParameterStore<f32>,
    adam: &mut AdamState<f32>,
    batch: &[&Tensor<f32>],
    channel: &Awgn,
    noise_seeds: &[u64],
    lr: f64,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    assert_eq!(batch.len(), noise_seeds.len(), "one noise seed per image");
    let weight = 1.0 / batch.len() as f32;
    let mut total = ParamGrads::empty(params.len());
    let mut loss = 0.0;
    for (image, &seed) in batch.iter().zip(noise_seeds) {
        let (l, g) = image_gradients(model, params, image, channel, seed, weight)?;
        loss += l;
        total.add(&g);
    }
    for (i, g) in total.0.iter().enumerate() {
        if let Some(g) = g {
            if !g.is_finite() {
                return Err(Error::NonFinite(alloc::format!(
                    "gradient of `{}`",
                    params.at(i).name
                )));
            }
        }
    }
    params.accumulate(&total);
    adam.step(params, lr);
    Ok(loss / batch.len() as f64)
}

/// Average quality of `seeds.len()` independent transmissions of one image.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RepeatStats {
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
    /// Population variance of PSNR across repeats.
    pub psnr_variance: f64,
}

impl RepeatStats {
    /// Summary of per-repeat `(psnr_db, ssim)` scores.
    pub fn from_scores(scores: &[(f64, f64)]) -> Result<Self> {
        if scores.is_empty() {
            return Err(Error::OutOfRange {
                what: "repeats",
                value: "0".into(),
                range: ">= 1".into(),
            });
        }
        let n = scores.len() as f64;
        let mean = scores.iter().map(|s| s.0).sum::<f64>() / n;
        // Shifted by the first repeat so identical repeats give exactly zero.
        let shift = scores[0].0;
        let mean_dev = scores.iter().map(|s| s.0 - shift).sum::<f64>() / n;
        let variance = scores
            .iter()
            .map(|s| {
                let d = s.0 - shift - mean_dev;
                d * d
            })
            .sum::<f64>()
            / n;
        Ok(RepeatStats {
            mean_psnr_db: mean,
            mean_ssim: scores.iter().map(|s| s.1).sum::<f64>() / n,
            psnr_variance: variance,
        })
    }
}

pub fn transmit_repeated(
    model: &JsccModel,
    params: &ParameterStore<f32>,
    image: &Tensor<f32>,
    channel: &Awgn,
    seeds: impl IntoIterator<Item = u64>,
) -> Result<RepeatStats> {
    let scores = seeds
        .into_iter()
        .map(|seed| {
            let out = model.transmit_image(params, image, channel, &mut rng::stream(seed))?;
            Ok((
                metrics::psnr(image, &out, 1.0)?,
                metrics::ssim(image, &out)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    RepeatStats::from_scores(&scores)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn loss_examples() {
        let x = Tensor::<f32>::full(&[2, 2, 1], 0.0);
        assert_eq!(mse_loss(&[x.clone()], &[x.clone()]).unwrap(), 0.0);
        let ones = Tensor::<f32>::full(&[2, 2, 1], 1.0);
        assert_eq!(mse_loss(&[x.clone()], &[ones]).unwrap(), 1.0);
        // per-image MSEs 0.1 and 0.3
        let a = Tensor::<f32>::full(&[1, 1, 1], 0.0);
        let b = Tensor::new(&[1, 1, 1], vec![0.1f64.sqrt() as f32]).unwrap();
        let c = Tensor::new(&[1, 1, 1], vec![0.3f64.sqrt() as f32]).unwrap();
        let l = mse_loss(&[a.clone(), a], &[b, c]).unwrap();
        assert!((l - 0.2).abs() < 1e-7);
        assert_eq!(mse_loss(&[], &[]), Err(Error::EmptyBatch));
    }

    #[test]
    fn schedule_drops_after_step() {
        let s = LrSchedule {
            initial: 1e-3,
            drop_step: 10,
            after: 1e-4,
        };
        assert_eq!(s.at(10), 1e-3);
        assert_eq!(s.at(11), 1e-4);
    }
}
