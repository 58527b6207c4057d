//! Reconstruction quality and bandwidth accounting.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::error::{Error, Result};
use crate::model::ArchitectureConfig;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Reported when the mean squared error drops below [`MSE_FLOOR`].
pub const PSNR_CAP_DB: f64 = 100.0;
pub const MSE_FLOOR: f64 = 1e-10;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;

fn same_shape<T: Scalar>(op: &'static str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(
            op,
            "shape",
            format!("{:?} vs {:?}", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

pub fn mse<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    same_shape("mse", x, y)?;
    let sum: f64 = x
        .data()
        .iter()
        .zip(y.data())
        .map(|(&a, &b)| {
            let d = a.as_f64() - b.as_f64();
            d * d
        })
        .sum();
    Ok(sum / x.len() as f64)
}

/// `10 log10(peak^2 / MSE)` in dB, capped at [`PSNR_CAP_DB`].
pub fn psnr_from_mse(mse: f64, peak: f64) -> f64 {
    if mse < MSE_FLOOR {
        PSNR_CAP_DB
    } else {
        10.0 * Float::log10(peak * peak / mse)
    }
}

pub fn psnr<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::OutOfRange {
            what: "peak",
            value: format!("{peak}"),
            range: "> 0".into(),
        });
    }
    Ok(psnr_from_mse(mse(x, y)?, peak))
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as f64;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| {
            let d = i as f64 - half;
            Float::exp(-d * d / (2.0 * SSIM_SIGMA * SSIM_SIGMA))
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.into_iter().map(|v| v / total).collect()
}

/// Separable weighted average over every position where the window fits.
fn filter_valid(plane: &[f64], h: usize, w: usize, win: &[f64]) -> Vec<f64> {
    let n = win.len();
    let (oh, ow) = (h - n + 1, w - n + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = win
                .iter()
                .enumerate()
                .map(|(i, wv)| wv * plane[y * w + x + i])
                .sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = win
                .iter()
                .enumerate()
                .map(|(i, wv)| wv * rows[(y + i) * ow + x])
                .sum();
        }
    }
    out
}

#[inline]
fn ssim_term(mx: f64, my: f64, vx: f64, vy: f64, cov: f64) -> f64 {
    ((2.0 * mx * my + SSIM_C1) * (2.0 * cov + SSIM_C2))
        / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2))
}

/// Single-scale SSIM for images in `[0, 1]`: 11x11 Gaussian window with
/// sigma 1.5, `C1 = 0.01^2`, `C2 = 0.03^2`, averaged over all valid window
/// positions and channels. Images smaller than the window fall back to one
/// window of uniform weights covering the whole channel.
pub fn ssim<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>) -> Result<f64> {
    same_shape("ssim", x, y)?;
    let (h, w, c) = x.hwc()?;
    let plane = |t: &Tensor<T>, ch: usize| -> Vec<f64> {
        t.data()
            .iter()
            .skip(ch)
            .step_by(c)
            .map(|v| v.as_f64())
            .collect()
    };
    let mut total = 0.0;
    let mut count = 0usize;
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        let n = (h * w) as f64;
        for ch in 0..c {
            let (px, py) = (plane(x, ch), plane(y, ch));
            let mx = px.iter().sum::<f64>() / n;
            let my = py.iter().sum::<f64>() / n;
            let vx = px.iter().map(|a| a * a).sum::<f64>() / n - mx * mx;
            let vy = py.iter().map(|b| b * b).sum::<f64>() / n - my * my;
            let cov = px.iter().zip(&py).map(|(a, b)| a * b).sum::<f64>() / n - mx * my;
            total += ssim_term(mx, my, vx, vy, cov);
            count += 1;
        }
        return Ok(total / count as f64);
    }
    let win = gaussian_window();
    for ch in 0..c {
        let (px, py) = (plane(x, ch), plane(y, ch));
        let sq = |p: &[f64]| p.iter().map(|v| v * v).collect::<Vec<_>>();
        let cross: Vec<f64> = px.iter().zip(&py).map(|(a, b)| a * b).collect();
        let mx = filter_valid(&px, h, w, &win);
        let my = filter_valid(&py, h, w, &win);
        let exx = filter_valid(&sq(&px), h, w, &win);
        let eyy = filter_valid(&sq(&py), h, w, &win);
        let exy = filter_valid(&cross, h, w, &win);
        for i in 0..mx.len() {
            let vx = exx[i] - mx[i] * mx[i];
            let vy = eyy[i] - my[i] * my[i];
            let cov = exy[i] - mx[i] * my[i];
            total += ssim_term(mx[i], my[i], vx, vy, cov);
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// Channel symbols per source dimension, `k / n` with `n = H W l`.
pub fn compression_ratio(cfg: &ArchitectureConfig, height: usize, width: usize) -> Result<f64> {
    let k = cfg.symbol_count(height, width)?;
    Ok(k as f64 / (height * width * cfg.channels) as f64)
}

/// One evaluation point.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricsRecord {
    pub compression_ratio: f64,
    pub snr_train_db: f64,
    pub snr_test_db: f64,
    pub mean_psnr_db: f64,
    pub mean_ssim: f64,
    pub repeats: usize,
    pub images: usize,
}
