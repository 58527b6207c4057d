//! Repeated-transmission evaluation over a test set and an SNR list.

use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::thread;

use csjscc_core::channel::Awgn;
use csjscc_core::metrics::{self, MetricsRecord};
use csjscc_core::train::{transmit_repeated, RepeatStats};
use csjscc_core::{rng, JsccModel, ParameterStore, Tensor};

use crate::checkpoint::Checkpoint;
use crate::data;
use crate::error::{Error, Result};

pub const THREADS_ENV: &str = "CSJSCC_THREADS";

/// Worker count: `CSJSCC_THREADS` if set to a positive integer, otherwise
/// the available parallelism.
pub fn thread_count() -> usize {
    let available = thread::available_parallelism().map_or(1, |n| n.get());
    match std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse::<usize>().ok())
    {
        Some(n) if n > 0 => n,
        _ => available,
    }
}

/// Seed of transmission `repeat` of image `image` at SNR list entry `snr_index`.
pub fn transmission_seed(master: u64, image: usize, repeat: usize, snr_index: usize) -> u64 {
    rng::derive_seed(master, &[image as u64, repeat as u64, snr_index as u64])
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub records: Vec<MetricsRecord>,
    /// `per_image[s][i]`: repeat statistics of image `i` at SNR index `s`.
    pub per_image: Vec<Vec<RepeatStats>>,
}

/// Transmit one image `repeats` times. Sizes that are not block multiples
/// are reflect-padded and the reconstruction cropped back before scoring.
pub fn evaluate_image(
    model: &JsccModel,
    params: &ParameterStore<f32>,
    image: &Tensor<f32>,
    channel: &Awgn,
    seeds: impl IntoIterator<Item = u64>,
) -> Result<RepeatStats> {
    let (padded, (h, w)) = data::pad_to_block_multiple(image, model.config().block_size)?;
    if padded.shape() == image.shape() {
        return Ok(transmit_repeated(model, params, image, channel, seeds)?);
    }
    let scores = seeds
        .into_iter()
        .map(|seed| {
            let out = model.transmit_image(params, &padded, channel, &mut rng::stream(seed))?;
            let out = data::crop(&out, h, w)?;
            Ok((
                metrics::psnr(image, &out, 1.0)?,
                metrics::ssim(image, &out)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RepeatStats::from_scores(&scores)?)
}

/// For every SNR and image, average PSNR/SSIM over `repeats` transmissions,
/// then over images. Work is spread over [`thread_count`] threads; results
/// do not depend on the thread count.
pub fn evaluate(
    checkpoint: &Checkpoint,
    images: &[Tensor<f32>],
    snr_test_db: &[f64],
    repeats: usize,
    seed: u64,
) -> Result<EvalReport> {
    evaluate_with_threads(
        checkpoint,
        images,
        snr_test_db,
        repeats,
        seed,
        thread_count(),
    )
}

pub fn evaluate_with_threads(
    checkpoint: &Checkpoint,
    images: &[Tensor<f32>],
    snr_test_db: &[f64],
    repeats: usize,
    seed: u64,
    threads: usize,
) -> Result<EvalReport> {
    if repeats == 0 {
        return Err(Error::Config("repeats must be >= 1".into()));
    }
    if images.is_empty() {
        return Err(Error::Config("no evaluation images".into()));
    }
    let model = checkpoint.model()?;
    let params = &checkpoint.params;
    let power = checkpoint.architecture.power;
    let jobs = snr_test_db.len() * images.len();
    let results: Mutex<Vec<Option<Result<RepeatStats>>>> =
        Mutex::new((0..jobs).map(|_| None).collect());
    let next = AtomicUsize::new(0);

    let work = || loop {
        let job = next.fetch_add(1, Ordering::Relaxed);
        if job >= jobs {
            break;
        }
        let (s, i) = (job / images.len(), job % images.len());
        let channel = Awgn::from_snr(snr_test_db[s], power);
        let seeds = (0..repeats).map(|r| transmission_seed(seed, i, r, s));
        let stats = evaluate_image(&model, params, &images[i], &channel, seeds);
        results.lock().unwrap()[job] = Some(stats);
    };
    let threads = threads.clamp(1, jobs.max(1));
    if threads == 1 {
        work();
    } else {
        thread::scope(|scope| {
            for _ in 0..threads {
                scope.spawn(work);
            }
        });
    }

    let mut results = results.into_inner().unwrap().into_iter();
    let (h, w, _) = images[0].hwc()?;
    let block = checkpoint.architecture.block_size;
    let ratio = metrics::compression_ratio(
        &checkpoint.architecture,
        h.next_multiple_of(block),
        w.next_multiple_of(block),
    )?;
    let mut records = Vec::new();
    let mut per_image = Vec::new();
    for &snr in snr_test_db {
        let stats: Vec<RepeatStats> = results
            .by_ref()
            .take(images.len())
            .map(|r| r.expect("every job ran"))
            .collect::<Result<_>>()?;
        let n = stats.len() as f64;
        records.push(MetricsRecord {
            compression_ratio: ratio,
            snr_train_db: checkpoint.snr_train_db,
            snr_test_db: snr,
            mean_psnr_db: stats.iter().map(|s| s.mean_psnr_db).sum::<f64>() / n,
            mean_ssim: stats.iter().map(|s| s.mean_ssim).sum::<f64>() / n,
            repeats,
            images: images.len(),
        });
        per_image.push(stats);
    }
    Ok(EvalReport { records, per_image })
}
