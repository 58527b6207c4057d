//! Fast invariant checks runnable from the command line.

use csjscc_core::autodiff::grad_check;
use csjscc_core::bcs::{self, SamplingMatrix};
use csjscc_core::channel::{snr_to_sigma2, Awgn, Channel};
use csjscc_core::encoder::power_normalize;
use csjscc_core::metrics;
use csjscc_core::{rng, ArchitectureConfig, Graph, JsccModel, ParameterStore, Tensor};
use rand::Rng;

use crate::checkpoint::Checkpoint;
use crate::data;

pub struct Check {
    pub name: &'static str,
    pub outcome: Result<(), String>,
}

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn random(shape: &[usize], seed: u64) -> Tensor<f64> {
    let mut r = rng::stream(seed);
    Tensor::from_fn(shape, |_| r.random::<f64>())
}

fn sampling_equivalence() -> Result<(), String> {
    for (i, (b, l)) in [(1usize, 1usize), (2, 3), (4, 1), (8, 3)]
        .into_iter()
        .enumerate()
    {
        let nb = (b * b * l).div_ceil(2);
        let phi = SamplingMatrix::<f64>::init(b, l, nb, i as u64).map_err(|e| e.to_string())?;
        let image = random(&[2 * b, 3 * b, l], 10 + i as u64);
        let conv = bcs::sample(&image, &phi).map_err(|e| e.to_string())?.0;
        let blocks = bcs::partition_blocks(&image, b).map_err(|e| e.to_string())?;
        let oracle = bcs::sample_matrix_oracle(&blocks, &phi).map_err(|e| e.to_string())?;
        let flat: Vec<f64> = oracle.into_iter().flatten().collect();
        let err = conv
            .data()
            .iter()
            .zip(&flat)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        ensure(err < 1e-5, || format!("B={b} l={l}: max error {err}"))?;
    }
    Ok(())
}

fn power_constraint() -> Result<(), String> {
    let mut r = rng::stream(3);
    for k in [1, 7, 64, 512] {
        let z: Vec<(f64, f64)> = (0..k)
            .map(|_| (r.random::<f64>() - 0.5, r.random::<f64>() - 0.5))
            .collect();
        let out = power_normalize(&z, 1.0).map_err(|e| e.to_string())?;
        let p = out.iter().map(|(a, b)| a * a + b * b).sum::<f64>() / k as f64;
        ensure((p - 1.0).abs() < 1e-6, || format!("k={k}: power {p}"))?;
    }
    Ok(())
}

fn channel_noise() -> Result<(), String> {
    let n = 100_000;
    let noisy = Awgn::from_snr(10.0, 1.0).corrupt(&vec![0.0f64; 2 * n], &mut rng::stream(4));
    let power = noisy.iter().map(|v| v * v).sum::<f64>() / n as f64;
    ensure((power - 0.1).abs() < 0.003, || {
        format!("noise power {power}, expected 0.1")
    })?;
    ensure(snr_to_sigma2(f64::INFINITY, 1.0) == 0.0, || {
        "infinite SNR is not noiseless".into()
    })
}

fn gradients() -> Result<(), String> {
    let cfg = ArchitectureConfig {
        block_size: 2,
        channels: 3,
        measurements: 6,
        encoder_widths: vec![4],
        c_last: 4,
        recon_layers: 2,
        recon_width: 3,
        recon_kernel: 3,
        power: 1.0,
    };
    let model = JsccModel::new(cfg).map_err(|e| e.to_string())?;
    let mut params = model.init_params::<f64>(5);
    let x = random(&[4, 4, 3], 6);
    let w = random(&[48], 7);
    let report = grad_check(&mut params, 1e-6, 4, 8, |g| {
        let input = g.constant(x.clone());
        let y = model.forward(g, input, &Awgn::noiseless(), &mut rng::stream(0))?;
        g.dot(y, &w)
    })
    .map_err(|e| e.to_string())?;
    ensure(report.max_rel_error <= 1e-3, || format!("{report:?}"))
}

fn linear_inverse() -> Result<(), String> {
    let (b, l) = (4, 3);
    let dim = b * b * l;
    let phi = SamplingMatrix::<f64>::init(b, l, dim, 9).map_err(|e| e.to_string())?;
    let mut store = ParameterStore::new();
    store
        .insert("phi", phi.to_filters(), false)
        .map_err(|e| e.to_string())?;
    let inv = phi
        .matrix()
        .clone()
        .reshape(&[1, 1, dim, dim])
        .map_err(|e| e.to_string())?;
    store.insert("inv", inv, false).map_err(|e| e.to_string())?;
    let x = random(&[8, 8, 3], 10);
    let mut g = Graph::new(&store);
    let input = g.constant(x.clone());
    let run = |g: &mut Graph<'_, f64>| -> csjscc_core::Result<_> {
        let f = g.param("phi")?;
        let grid = bcs::sample_conv(g, input, f)?;
        let w = g.param("inv")?;
        csjscc_core::decoder::initial_reconstruction(g, grid, w, b, l)
    };
    let y = run(&mut g).map_err(|e| e.to_string())?;
    let err = g.value(y).max_abs_diff(&x);
    ensure(err < 1e-4, || format!("max error {err}"))
}

fn metric_oracles() -> Result<(), String> {
    ensure(metrics::psnr_from_mse(0.01, 1.0) == 20.0, || {
        "psnr(0.01) != 20".into()
    })?;
    let x = random(&[16, 16, 1], 11).cast::<f32>();
    let s = metrics::ssim(&x, &x).map_err(|e| e.to_string())?;
    ensure(s == 1.0, || format!("ssim(x, x) = {s}"))?;
    let a = Tensor::<f32>::full(&[16, 16, 1], 0.2);
    let b = Tensor::<f32>::full(&[16, 16, 1], 0.7);
    let s = metrics::ssim(&a, &b).map_err(|e| e.to_string())?;
    ensure((s - 0.52839).abs() < 1e-4, || {
        format!("constant-image ssim {s}")
    })
}

fn persistence() -> Result<(), String> {
    let cfg = ArchitectureConfig {
        recon_layers: 2,
        recon_width: 4,
        encoder_widths: vec![4],
        ..ArchitectureConfig::default()
    };
    let model = JsccModel::new(cfg.clone()).map_err(|e| e.to_string())?;
    let ckpt = Checkpoint {
        architecture: cfg,
        step: 3,
        snr_train_db: 10.0,
        params: model.init_params(1),
        adam: csjscc_core::AdamState::new(Default::default()),
    };
    let back = Checkpoint::from_bytes(&ckpt.to_bytes()).map_err(|e| e.to_string())?;
    ensure(back == ckpt, || "checkpoint round trip differs".into())?;

    let mut record = vec![7u8; data::CIFAR_RECORD];
    record[1] = 255;
    let img = data::parse_cifar10(&record).map_err(|e| e.to_string())?;
    ensure(img[0].label == 7 && img[0].image.data()[0] == 1.0, || {
        "CIFAR fixture".into()
    })?;
    let ppm = data::parse_ppm(b"P6\n2 1\n255\n\xff\0\0\0\xff\0").map_err(|e| e.to_string())?;
    ensure(ppm.data() == [1.0, 0.0, 0.0, 0.0, 1.0, 0.0], || {
        "PPM fixture".into()
    })
}

fn identity_transmission() -> Result<(), String> {
    let mut r = rng::stream(12);
    let x = Tensor::<f32>::from_fn(&[8, 8, 3], |_| r.random::<f32>());
    let (model, params) = JsccModel::identity_stub(&x).map_err(|e| e.to_string())?;
    let y = model
        .transmit_image(&params, &x, &Awgn::noiseless(), &mut rng::stream(0))
        .map_err(|e| e.to_string())?;
    let p = metrics::psnr(&x, &y, 1.0).map_err(|e| e.to_string())?;
    ensure(p == metrics::PSNR_CAP_DB, || format!("identity PSNR {p}"))
}

pub fn run() -> Vec<Check> {
    let suites: [(&'static str, fn() -> Result<(), String>); 8] = [
        ("sampling conv equals block products", sampling_equivalence),
        ("power normalization", power_constraint),
        ("channel noise power", channel_noise),
        ("end-to-end gradients", gradients),
        ("orthonormal linear inverse", linear_inverse),
        ("metric oracles", metric_oracles),
        ("checkpoint and image fixtures", persistence),
        ("noiseless identity transmission", identity_transmission),
    ];
    suites
        .into_iter()
        .map(|(name, f)| Check { name, outcome: f() })
        .collect()
}
