//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any fails.

use std::time::Instant;

use csjscc::checkpoint::Checkpoint;
use csjscc::config::ExperimentConfig;
use csjscc::data::{self, DatasetSpec, CIFAR_RECORD};
use csjscc::eval::{evaluate_with_threads, transmission_seed};
use csjscc::sweep;
use csjscc::trainer::{loss_windows, train_loop, TrainConfig};
use csjscc_core::autodiff::grad_check;
use csjscc_core::bcs::{self, SamplingMatrix};
use csjscc_core::channel::{snr_to_sigma2, Awgn, Channel};
use csjscc_core::encoder::power_normalize;
use csjscc_core::metrics;
use csjscc_core::model::c_last_for_ratio;
use csjscc_core::train::{transmit_repeated, LrSchedule};
use csjscc_core::{rng, ArchitectureConfig, Graph, JsccModel, ParameterStore, Scalar, Tensor, Var};
use rand::Rng;

type Outcome = Result<String, String>;

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn uniform<T: Scalar>(shape: &[usize], seed: u64) -> Tensor<T> {
    let mut r = rng::stream(seed);
    Tensor::from_fn(shape, |_| T::of(r.random::<f64>()))
}

/// The small-image configuration: B = 8, l = 3, c_last = 64 (R = 1/6) with
/// the reduced deep reconstruction used for desk-scale runs.
fn cifar_arch() -> ArchitectureConfig {
    ArchitectureConfig {
        recon_layers: 3,
        recon_width: 16,
        ..ArchitectureConfig::default()
    }
}

fn bcs_equivalence() -> Outcome {
    let start = Instant::now();
    let mut r = rng::stream(100);
    let mut worst = 0.0f64;
    for case in 0..100u64 {
        let b = [1usize, 2, 4, 8, 16][r.random_range(0..5)];
        let l = [1usize, 3][r.random_range(0..2)];
        let dim = b * b * l;
        let nb = r.random_range(1..=dim);
        let (gh, gw) = (r.random_range(1..=4), r.random_range(1..=4));
        let phi = SamplingMatrix::<f32>::init(b, l, nb, case).map_err(err)?;
        let image = uniform::<f32>(&[gh * b, gw * b, l], 1000 + case);

        let store = ParameterStore::new();
        let mut g = Graph::new(&store);
        let x = g.constant(image.clone());
        let f = g.constant(phi.to_filters());
        let y = bcs::sample_conv(&mut g, x, f).map_err(err)?;
        let conv = g.value(y).data();

        // Oracle: phi_B x_j in f64 for every raster-ordered block.
        let m = phi.matrix().data();
        for (j, block) in bcs::partition_blocks(&image, b)
            .map_err(err)?
            .iter()
            .enumerate()
        {
            for i in 0..nb {
                let exact: f64 = (0..dim)
                    .map(|k| m[i * dim + k] as f64 * block[k] as f64)
                    .sum();
                worst = worst.max((conv[j * nb + i] as f64 - exact).abs());
            }
        }
    }
    let secs = start.elapsed().as_secs_f64();
    check(worst < 1e-5, || format!("max abs error {worst:e}"))?;
    check(secs < 10.0, || format!("took {secs:.1} s"))?;
    Ok(format!(
        "100 configs, max abs error {worst:.2e}, {secs:.2} s"
    ))
}

fn power_constraint() -> Outcome {
    let mut worst_power = 0.0f64;
    let mut worst_scale = 0.0f64;
    for i in 0..1000u64 {
        let mut r = rng::stream(i);
        let k = r.random_range(1..=1024);
        let z: Vec<(f64, f64)> = (0..k)
            .map(|_| (rng::standard_normal(&mut r), rng::standard_normal(&mut r)))
            .collect();
        let out = power_normalize(&z, 1.0).map_err(err)?;
        let p = out.iter().map(|(a, b)| a * a + b * b).sum::<f64>() / k as f64;
        worst_power = worst_power.max((p - 1.0).abs());
        for c in [1e-3, 1.0, 1e3] {
            let scaled: Vec<_> = z.iter().map(|&(a, b)| (c * a, c * b)).collect();
            let s = power_normalize(&scaled, 1.0).map_err(err)?;
            for (u, v) in out.iter().zip(&s) {
                worst_scale = worst_scale.max((u.0 - v.0).abs()).max((u.1 - v.1).abs());
            }
        }
    }
    check(worst_power < 1e-6, || {
        format!("power deviation {worst_power:e}")
    })?;
    check(worst_scale < 1e-6, || {
        format!("scale deviation {worst_scale:e}")
    })?;
    Ok(format!(
        "power dev {worst_power:.1e}, scale dev {worst_scale:.1e}"
    ))
}

fn channel_statistics() -> Outcome {
    let n = 1_000_000;
    let sigma2 = snr_to_sigma2(10.0, 1.0);
    let noise = Awgn::new(sigma2).corrupt(&vec![0.0f64; 2 * n], &mut rng::stream(77));
    let power = noise.iter().map(|v| v * v).sum::<f64>() / n as f64;
    let rel = (power - 0.1).abs() / 0.1;
    check(rel < 0.01, || format!("noise power {power}"))?;

    let mut r = rng::stream(78);
    let z: Vec<f32> = (0..2 * 4096).map(|_| r.random::<f32>() - 0.5).collect();
    let out = Awgn::new(snr_to_sigma2(f64::INFINITY, 1.0)).corrupt(&z, &mut r);
    let same = z.iter().zip(&out).all(|(a, b)| a.to_bits() == b.to_bits());
    check(same, || "noiseless path altered values".into())?;
    Ok(format!(
        "noise power {power:.5} ({:.2}% off), noiseless path bit-exact",
        100.0 * rel
    ))
}

/// Random linear readout of `out` so every output element carries gradient.
fn readout(g: &mut Graph<'_, f64>, out: Var, seed: u64) -> csjscc_core::Result<Var> {
    let len = g.value(out).len();
    let mut r = rng::stream(seed);
    let w = Tensor::from_fn(&[len], |_| r.random::<f64>() - 0.5);
    let flat = g.reshape(out, &[len])?;
    g.dot(flat, &w)
}

fn gradient_integrity() -> Outcome {
    let start = Instant::now();
    let mut store = ParameterStore::<f64>::new();
    let mut put = |name: &str, shape: &[usize], seed: u64| {
        let t = uniform::<f64>(shape, seed).map(|v| v - 0.4);
        store.insert(name, t, true).unwrap();
    };
    put("x", &[6, 6, 3], 1);
    put("w", &[3, 3, 3, 4], 2);
    put("b", &[4], 3);
    put("tw", &[3, 3, 2, 3], 4);
    put("slope", &[3], 5);
    put("v", &[16], 6);
    put("grid", &[2, 2, 12], 7);

    type Op = fn(&mut Graph<'_, f64>) -> csjscc_core::Result<Var>;
    let ops: [(&str, Op); 10] = [
        ("conv2d", |g| {
            let (x, w, b) = (g.param("x")?, g.param("w")?, g.param("b")?);
            g.conv2d(x, w, Some(b), 1)
        }),
        ("conv2d stride 3", |g| {
            let (x, w) = (g.param("x")?, g.param("w")?);
            g.conv2d(x, w, None, 3)
        }),
        ("conv2d_transpose", |g| {
            let (x, w) = (g.param("x")?, g.param("tw")?);
            g.conv2d_transpose(x, w, 2)
        }),
        ("pad/crop", |g| {
            let x = g.param("x")?;
            let p = g.pad(x, 2)?;
            g.crop(p, 1)
        }),
        ("prelu", |g| {
            let (x, s) = (g.param("x")?, g.param("slope")?);
            g.prelu(x, s)
        }),
        ("relu/add_bias", |g| {
            let x = g.param("x")?;
            let x = g.relu(x);
            let w = g.param("w")?;
            let y = g.conv2d(x, w, None, 1)?;
            let b = g.param("b")?;
            g.add_bias(y, b)
        }),
        ("power_normalize", |g| {
            let v = g.param("v")?;
            g.power_normalize(v, 2.0)
        }),
        ("blocks_to_image", |g| {
            let grid = g.param("grid")?;
            g.blocks_to_image(grid, 2, 3)
        }),
        ("add_const/reshape", |g| {
            let v = g.param("v")?;
            let v = g.add_const(v, &Tensor::full(&[16], 0.25))?;
            g.reshape(v, &[4, 4, 1])
        }),
        ("mse", |g| {
            let x = g.param("x")?;
            g.mse(x, &Tensor::full(&[6, 6, 3], 0.1))
        }),
    ];
    let mut worst = 0.0f64;
    for (i, (name, op)) in ops.iter().enumerate() {
        let report = grad_check(&mut store, 1e-6, 20, i as u64, |g| {
            let out = op(g)?;
            readout(g, out, 50 + i as u64)
        })
        .map_err(err)?;
        check(report.max_rel_error <= 1e-3, || {
            format!("{name}: {report:?}")
        })?;
        worst = worst.max(report.max_rel_error);
    }

    // Full composition over a noiseless channel on a 16x16x3 input.
    let cfg = ArchitectureConfig {
        block_size: 4,
        measurements: 24,
        encoder_widths: vec![8, 8],
        c_last: 8,
        recon_layers: 3,
        recon_width: 6,
        ..ArchitectureConfig::default()
    };
    let model = JsccModel::new(cfg).map_err(err)?;
    let mut params = model.init_params::<f64>(9);
    let image = uniform::<f64>(&[16, 16, 3], 10);
    let report = grad_check(&mut params, 1e-6, 10, 11, |g| {
        let x = g.constant(image.clone());
        let y = model.forward(g, x, &Awgn::noiseless(), &mut rng::stream(0))?;
        readout(g, y, 12)
    })
    .map_err(err)?;
    check(report.max_rel_error <= 1e-3, || {
        format!("composition: {report:?}")
    })?;
    worst = worst.max(report.max_rel_error);
    let secs = start.elapsed().as_secs_f64();
    check(secs < 120.0, || format!("took {secs:.0} s"))?;
    Ok(format!(
        "10 operators + composition ({} coords), max rel error {worst:.2e}, {secs:.2} s",
        report.coordinates
    ))
}

fn linear_inverse() -> Outcome {
    let mut worst = 0.0f64;
    for (b, l) in [(4usize, 3usize), (8, 3), (8, 1)] {
        let dim = b * b * l;
        let phi = SamplingMatrix::<f32>::init(b, l, dim, 21).map_err(err)?;
        let mut store = ParameterStore::new();
        store.insert("phi", phi.to_filters(), true).map_err(err)?;
        // Entry (i, j) of the [1, 1, n_B, l B^2] weights is phi[i][j], i.e. phi^T as a map.
        let weights = phi
            .matrix()
            .clone()
            .reshape(&[1, 1, dim, dim])
            .map_err(err)?;
        store.insert("init", weights, true).map_err(err)?;
        let x = uniform::<f32>(&[4 * b, 3 * b, l], 22);
        let mut g = Graph::new(&store);
        let input = g.constant(x.clone());
        let f = g.param("phi").map_err(err)?;
        let grid = bcs::sample_conv(&mut g, input, f).map_err(err)?;
        let w = g.param("init").map_err(err)?;
        let y = csjscc_core::decoder::initial_reconstruction(&mut g, grid, w, b, l).map_err(err)?;
        worst = worst.max(g.value(y).max_abs_diff(&x));
    }
    check(worst < 1e-4, || format!("max abs error {worst:e}"))?;
    Ok(format!("max abs error {worst:.2e} (f32)"))
}

fn desk_scale_learning() -> Outcome {
    let start = Instant::now();
    let train_images = data::synth_dataset(256, 32, 32, 3, 600);
    let test_images = data::synth_dataset(32, 32, 32, 3, 601);
    let cfg = TrainConfig {
        architecture: cifar_arch(),
        batch_size: 16,
        max_steps: 2000,
        schedule: LrSchedule::constant(1e-3),
        snr_train_db: 10.0,
        seed: 6,
        eval_every: 0,
        patience: 10,
        checkpoint_every: 0,
        validation_images: 0,
        crop: None,
        checkpoint_path: None,
    };
    check(
        metrics::compression_ratio(&cfg.architecture, 32, 32).map_err(err)? == 1.0 / 6.0,
        || "ratio is not 1/6".into(),
    )?;
    let outcome = train_loop(&cfg, &train_images, &[], |_| {}).map_err(err)?;
    let (first, last) = loss_windows(&outcome.history, 100);
    let report = evaluate_with_threads(&outcome.checkpoint, &test_images, &[1.0, 19.0], 10, 60, 1)
        .map_err(err)?;
    let (low, high) = (
        report.records[0].mean_psnr_db,
        report.records[1].mean_psnr_db,
    );
    let secs = start.elapsed().as_secs_f64();
    let detail = format!(
        "loss {first:.5} -> {last:.5} ({:.1}%), PSNR {low:.2} dB @1 dB, {high:.2} dB @19 dB, {:.1} min",
        100.0 * last / first,
        secs / 60.0
    );
    check(outcome.history.len() == 2000, || {
        format!("ran {} steps", outcome.history.len())
    })?;
    check(last < 0.5 * first, || detail.clone())?;
    check(high >= low, || detail.clone())?;
    check(secs < 30.0 * 60.0, || detail.clone())?;
    Ok(detail)
}

fn metric_oracles() -> Outcome {
    let p = metrics::psnr_from_mse(0.01, 1.0);
    check(p == 20.0, || format!("psnr(mse 0.01) = {p}"))?;
    let x = Tensor::<f64>::zeros(&[8, 8, 3]);
    let y = Tensor::<f64>::full(&[8, 8, 3], 0.1);
    let p_img = metrics::psnr(&x, &y, 1.0).map_err(err)?;
    check((p_img - 20.0).abs() < 1e-9, || {
        format!("image psnr {p_img}")
    })?;
    let img = uniform::<f32>(&[24, 24, 3], 3);
    let s = metrics::ssim(&img, &img).map_err(err)?;
    check(s == 1.0, || format!("ssim(x, x) = {s}"))?;
    let a = Tensor::<f32>::full(&[16, 16, 1], 0.2);
    let b = Tensor::<f32>::full(&[16, 16, 1], 0.7);
    let s_const = metrics::ssim(&a, &b).map_err(err)?;
    // Independent closed form: luminance term only, (2 mx my + C1) / (mx^2 + my^2 + C1).
    let c1 = 1e-4;
    let closed = (2.0 * 0.2 * 0.7 + c1) / (0.2f64 * 0.2 + 0.7 * 0.7 + c1);
    check((s_const - closed).abs() < 1e-4, || {
        format!("constant ssim {s_const} vs {closed}")
    })?;
    check((s_const - 0.52839).abs() < 1e-4, || {
        format!("constant ssim {s_const}")
    })?;
    Ok(format!(
        "psnr 20 dB exact, ssim(x,x) = 1, constant ssim {s_const:.5}"
    ))
}

fn ratio_accounting() -> Outcome {
    let cfg = ArchitectureConfig::default();
    let r = metrics::compression_ratio(&cfg, 32, 32).map_err(err)?;
    check((r - 1.0 / 6.0).abs() < 1e-15, || format!("CIFAR ratio {r}"))?;
    let mut worst = 0.0f64;
    for i in 0..=40 {
        let target = 0.05 + 0.01 * i as f64;
        for (b, side) in [(8usize, 32usize), (32, 224)] {
            let c_last = c_last_for_ratio(target, b, 3);
            let arch = ArchitectureConfig {
                block_size: b,
                c_last,
                ..ArchitectureConfig::default()
            };
            let realized = metrics::compression_ratio(&arch, side, side).map_err(err)?;
            // Oracle: k / n from the grid and symbol count.
            let k = (side / b) * (side / b) * c_last / 2;
            let oracle = k as f64 / (side * side * 3) as f64;
            check(realized == oracle, || {
                format!("R={target}: {realized} vs {oracle}")
            })?;
            // Even rounding moves the ratio by at most one symbol pair per block.
            let step = 1.0 / (b * b * 3) as f64;
            check((realized - target).abs() <= step + 1e-12, || {
                format!("R={target}: realized {realized}")
            })?;
            worst = worst.max((realized - target).abs());
        }
    }
    Ok(format!(
        "1/6 exact; 0.05..0.45 inverted, max rounding gap {worst:.2e}"
    ))
}

fn determinism_and_persistence() -> Outcome {
    let mut cfg = ExperimentConfig::default();
    cfg.seed = 9;
    cfg.architecture.block_size = 4;
    cfg.architecture.measurements = 16;
    cfg.architecture.encoder_widths = vec![8];
    cfg.architecture.recon_layers = 2;
    cfg.architecture.recon_width = 4;
    cfg.channel.snr_test_db = vec![1.0, 4.0, 7.0, 13.0, 19.0];
    cfg.training.batch_size = 4;
    cfg.training.max_steps = 10;
    cfg.training.eval_every = 5;
    cfg.eval.repeats = 3;
    cfg.sweep.ratios = vec![1.0 / 6.0];
    cfg.data = DatasetSpec {
        synthetic_count: 16,
        synthetic_test_count: 4,
        synthetic_height: 16,
        synthetic_width: 16,
        ..DatasetSpec::default()
    };
    let run = || -> Result<String, String> {
        let ds = cfg.data.open().map_err(err)?;
        Ok(sweep::sweep(&cfg, &ds, None, |_| {}).map_err(err)?.to_csv())
    };
    let (a, b) = (run()?, run()?);
    check(a == b, || "sweep CSV differs between runs".into())?;
    check(a.lines().count() == 6, || format!("expected 5 rows:\n{a}"))?;

    let dir = tempfile::tempdir().map_err(err)?;
    let model = JsccModel::new(cifar_arch()).map_err(err)?;
    let train = data::synth_dataset(4, 32, 32, 3, 1);
    let tc = TrainConfig {
        architecture: cifar_arch(),
        batch_size: 2,
        max_steps: 2,
        schedule: LrSchedule::constant(1e-3),
        snr_train_db: 10.0,
        seed: 1,
        eval_every: 0,
        patience: 1,
        checkpoint_every: 0,
        validation_images: 0,
        crop: None,
        checkpoint_path: None,
    };
    let ckpt = train_loop(&tc, &train, &[], |_| {})
        .map_err(err)?
        .checkpoint;
    model.check_params(&ckpt.params).map_err(err)?;
    let path = dir.path().join("m.ckpt");
    ckpt.save(&path).map_err(err)?;
    let back = Checkpoint::load(&path).map_err(err)?;
    let bits = |c: &Checkpoint| -> Vec<u32> {
        c.params
            .iter()
            .map(|p| &p.value)
            .chain(&c.adam.first)
            .chain(&c.adam.second)
            .flat_map(|t| t.data().iter().map(|v| v.to_bits()))
            .collect()
    };
    check(bits(&back) == bits(&ckpt) && back == ckpt, || {
        "checkpoint round trip differs".into()
    })?;

    let mut rec = vec![0u8; CIFAR_RECORD];
    rec[0] = 7;
    rec[1] = 255;
    let cifar = data::parse_cifar10(&rec).map_err(err)?;
    check(
        cifar.len() == 1 && cifar[0].label == 7 && cifar[0].image.data()[..3] == [1.0, 0.0, 0.0],
        || "CIFAR fixture pixels".into(),
    )?;
    let ppm = data::parse_ppm(b"P6\n2 1\n255\n\xff\x00\x00\x00\xff\x00").map_err(err)?;
    check(
        ppm.shape() == [1, 2, 3] && ppm.data() == [1.0, 0.0, 0.0, 0.0, 1.0, 0.0],
        || "PPM fixture pixels".into(),
    )?;
    Ok("sweep CSV byte-identical (5 rows), checkpoint bit-identical, fixtures exact".into())
}

/// Repeat-averaging checks for one configuration and image set.
fn repeated_transmission(
    arch: ArchitectureConfig,
    images: &[Tensor<f32>],
    repeats: usize,
) -> Result<String, String> {
    let model = JsccModel::new(arch.clone()).map_err(err)?;
    let ckpt = Checkpoint {
        architecture: arch,
        step: 0,
        snr_train_db: 10.0,
        params: model.init_params(31),
        adam: csjscc_core::AdamState::new(Default::default()),
    };
    let seed = 32;
    let before = ckpt.params.checksum();
    let report = evaluate_with_threads(&ckpt, images, &[f64::INFINITY, 10.0], repeats, seed, 1)
        .map_err(err)?;
    check(ckpt.params.checksum() == before, || {
        "evaluation changed parameters".into()
    })?;
    check(report.records.iter().all(|r| r.repeats == repeats), || {
        "repeat count".into()
    })?;
    let noiseless_var: f64 = report.per_image[0]
        .iter()
        .map(|s| s.psnr_variance)
        .fold(0.0, f64::max);
    check(noiseless_var == 0.0, || {
        format!("noiseless variance {noiseless_var}")
    })?;
    check(
        report.per_image[1].iter().all(|s| s.psnr_variance > 0.0),
        || "noisy repeats identical".into(),
    )?;

    // Oracle: average the individual transmissions by hand.
    let channel = Awgn::from_snr(10.0, 1.0);
    let mut total = 0.0;
    for (i, x) in images.iter().enumerate() {
        let mut sum = 0.0;
        for r in 0..repeats {
            let y = model
                .transmit_image(
                    &ckpt.params,
                    x,
                    &channel,
                    &mut rng::stream(transmission_seed(seed, i, r, 1)),
                )
                .map_err(err)?;
            sum += metrics::psnr(x, &y, 1.0).map_err(err)?;
        }
        total += sum / repeats as f64;
        let single = transmit_repeated(
            &model,
            &ckpt.params,
            x,
            &channel,
            (0..repeats).map(|r| transmission_seed(seed, i, r, 1)),
        )
        .map_err(err)?;
        check(single == report.per_image[1][i], || {
            "per-image stats differ".into()
        })?;
    }
    let oracle = total / images.len() as f64;
    let got = report.records[1].mean_psnr_db;
    check((got - oracle).abs() < 1e-9, || {
        format!("mean PSNR {got} vs oracle {oracle}")
    })?;
    Ok(format!("repeats={repeats}: mean {got:.3} dB"))
}

fn protocol_fidelity() -> Outcome {
    let cifar = repeated_transmission(cifar_arch(), &data::synth_dataset(4, 32, 32, 3, 40), 10)?;
    let high_res = ArchitectureConfig {
        block_size: 32,
        measurements: 256,
        encoder_widths: vec![32],
        c_last: c_last_for_ratio(0.05, 32, 3),
        recon_layers: 3,
        recon_width: 16,
        ..ArchitectureConfig::default()
    };
    let hr = repeated_transmission(high_res, &data::synth_dataset(1, 64, 64, 3, 41), 100)?;
    Ok(format!("{cifar}; B=32 {hr}; noiseless variance 0"))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("BCS conv/matrix equivalence", bcs_equivalence),
        ("power constraint", power_constraint),
        ("channel statistics", channel_statistics),
        ("gradient integrity", gradient_integrity),
        ("linear-inverse sanity", linear_inverse),
        ("desk-scale learning", desk_scale_learning),
        ("metric oracles", metric_oracles),
        ("ratio accounting", ratio_accounting),
        ("determinism and persistence", determinism_and_persistence),
        ("protocol fidelity", protocol_fidelity),
    ];
    // `cargo test -- <filter>` runs matching criteria only.
    let filter: Vec<String> = std::env::args()
        .skip(1)
        .filter(|a| !a.starts_with('-'))
        .collect();
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let key = name.to_lowercase();
        if !filter.is_empty() && !filter.iter().any(|f| key.contains(&f.to_lowercase())) {
            continue;
        }
        match f() {
            Ok(detail) => println!("acceptance {:>2}  PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("acceptance {:>2}  FAIL  {name}: {why}", i + 1);
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
