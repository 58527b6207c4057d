use csjscc_core::autodiff::{grad_check, AdamConfig};
use csjscc_core::bcs::SamplingMatrix;
use csjscc_core::channel::Awgn;
use csjscc_core::decoder;
use csjscc_core::model::names;
use csjscc_core::train::{train_step, transmit_repeated};
use csjscc_core::{rng, AdamState, ArchitectureConfig, Graph, JsccModel, ParameterStore, Tensor};
use rand::Rng;

fn image<T: csjscc_core::Scalar>(h: usize, w: usize, l: usize, seed: u64) -> Tensor<T> {
    let mut r = rng::stream(seed);
    Tensor::from_fn(&[h, w, l], |_| T::of(r.random::<f64>()))
}

fn small_config() -> ArchitectureConfig {
    ArchitectureConfig {
        block_size: 4,
        channels: 3,
        measurements: 12,
        encoder_widths: vec![6, 5],
        c_last: 8,
        recon_layers: 3,
        recon_width: 4,
        recon_kernel: 3,
        power: 1.0,
    }
}

fn readout(len: usize, seed: u64) -> Tensor<f64> {
    let mut r = rng::stream(seed);
    Tensor::from_fn(&[len], |_| r.random::<f64>() - 0.5)
}

#[test]
fn end_to_end_gradients_match_finite_differences() {
    let model = JsccModel::new(small_config()).unwrap();
    let mut params = model.init_params::<f64>(3);
    // Nonzero biases so every bias gradient path is exercised.
    for p in params.iter().map(|p| p.name.clone()).collect::<Vec<_>>() {
        if p.ends_with(".bias") {
            let shape = params.value(&p).unwrap().shape().to_vec();
            params
                .set(&p, image(1, 1, shape[0], 77).reshape(&shape).unwrap())
                .unwrap();
        }
    }
    let x = image::<f64>(16, 16, 3, 1);
    let weights = readout(16 * 16 * 3, 2);
    let report = grad_check(&mut params, 1e-6, 6, 11, |g| {
        let input = g.constant(x.clone());
        let y = model.forward(g, input, &Awgn::noiseless(), &mut rng::stream(0))?;
        g.dot(y, &weights)
    })
    .unwrap();
    assert!(report.max_rel_error <= 1e-3, "{report:?}");
    assert!(report.coordinates > 50);
}

#[test]
fn gradients_through_noise_equal_noiseless_gradients_at_the_noisy_point() {
    // The channel is additive, so dL/dz at z is dL/dz_hat at z + w. Compare a
    // noisy forward with a noiseless decoder fed the same received values.
    let cfg = small_config();
    let model = JsccModel::new(cfg.clone()).unwrap();
    let params = model.init_params::<f64>(4);
    let x = image::<f64>(8, 8, 3, 5);
    let weights = readout(8 * 8 * 3, 6);
    let awgn = Awgn::from_snr(5.0, 1.0);

    let mut graph = Graph::new(&params);
    let input = graph.constant(x.clone());
    let z = model.encode(&mut graph, input).unwrap();
    let noise: Vec<f64> = awgn.noise(graph.value(z).len(), &mut rng::stream(9));
    let z_hat = graph
        .add_const(z, &Tensor::new(&[noise.len()], noise.clone()).unwrap())
        .unwrap();
    let y = model.decode(&mut graph, z_hat, (8, 8)).unwrap();
    let out = graph.dot(y, &weights).unwrap();
    let noisy = graph.backward(out);

    let received: Vec<f64> = graph
        .value(z)
        .data()
        .iter()
        .zip(&noise)
        .map(|(a, b)| a + b)
        .collect();
    // Received values enter as a parameter so they get a gradient.
    let mut with_input = params.clone();
    let slot = with_input
        .insert(
            "received",
            Tensor::new(&[received.len()], received).unwrap(),
            false,
        )
        .unwrap();
    let mut clean = Graph::new(&with_input);
    let r = clean.param("received").unwrap();
    let y = model.decode(&mut clean, r, (8, 8)).unwrap();
    let out = clean.dot(y, &weights).unwrap();
    let grads = clean.backward(out);

    let a = noisy.wrt(z_hat).unwrap();
    let b = grads.params().get(slot).unwrap();
    assert!(a.max_abs_diff(b) < 1e-12);
}

#[test]
fn decoder_stages_pass_gradient_checks() {
    let cfg = small_config();
    let model = JsccModel::new(cfg.clone()).unwrap();
    let mut params = model.init_params::<f64>(8);
    let received = image::<f64>(1, 1, 2 * 2 * cfg.c_last, 9)
        .reshape(&[2 * 2 * cfg.c_last])
        .unwrap();
    let w = readout(2 * 2 * cfg.measurements, 10);
    let report = grad_check(&mut params, 1e-6, 8, 1, |g| {
        let r = g.constant(received.clone());
        let m = decoder::decode_symbols(g, &cfg, r, (2, 2))?;
        g.dot(m, &w)
    })
    .unwrap();
    assert!(report.max_rel_error <= 1e-3, "{report:?}");

    let initial = image::<f64>(8, 8, 3, 12);
    let w = readout(8 * 8 * 3, 13);
    let report = grad_check(&mut params, 1e-6, 8, 2, |g| {
        let x = g.constant(initial.clone());
        let y = decoder::deep_reconstruction(g, &cfg, x)?;
        g.dot(y, &w)
    })
    .unwrap();
    assert!(report.max_rel_error <= 1e-3, "{report:?}");
}

#[test]
fn orthonormal_sampling_is_inverted_by_its_transpose() {
    for (b, l) in [(1, 1), (2, 3), (4, 1), (4, 3), (8, 3)] {
        let dim = b * b * l;
        let phi = SamplingMatrix::<f64>::init(b, l, dim, 40 + b as u64).unwrap();
        let x = image::<f64>(2 * b, 3 * b, l, 41);

        let mut store = ParameterStore::new();
        store.insert("phi", phi.to_filters(), true).unwrap();
        // phi^T as [1, 1, n_B, l B^2]: entry (i, j) = phi[i][j].
        store
            .insert(
                "inv",
                phi.matrix().clone().reshape(&[1, 1, dim, dim]).unwrap(),
                true,
            )
            .unwrap();
        let mut graph = Graph::new(&store);
        let input = graph.constant(x.clone());
        let f = graph.param("phi").unwrap();
        let grid = csjscc_core::bcs::sample_conv(&mut graph, input, f).unwrap();
        let w = graph.param("inv").unwrap();
        let rec = decoder::initial_reconstruction(&mut graph, grid, w, b, l).unwrap();
        assert!(graph.value(rec).max_abs_diff(&x) < 1e-4, "B={b} l={l}");
    }
}

#[test]
fn initial_reconstruction_is_linear() {
    let (b, l, nb) = (4, 3, 20);
    let mut r = rng::stream(3);
    let mut store = ParameterStore::new();
    store
        .insert(
            "w",
            Tensor::from_fn(&[1, 1, nb, b * b * l], |_| r.random::<f64>() - 0.5),
            true,
        )
        .unwrap();
    let run = |grid: &Tensor<f64>| {
        let mut g = Graph::new(&store);
        let v = g.constant(grid.clone());
        let w = g.param("w").unwrap();
        let y = decoder::initial_reconstruction(&mut g, v, w, b, l).unwrap();
        g.value(y).clone()
    };
    let a = image::<f64>(2, 3, nb, 4);
    let c = image::<f64>(2, 3, nb, 5);
    let mut sum = a.clone();
    sum.add_assign(&c);
    sum.scale(2.5);
    let mut expected = run(&a);
    expected.add_assign(&run(&c));
    expected.scale(2.5);
    assert!(run(&sum).max_abs_diff(&expected) < 1e-12);
}

#[test]
fn zero_decoder_weights_give_bias_only_output() {
    let cfg = small_config();
    let model = JsccModel::new(cfg.clone()).unwrap();
    let mut params = model.init_params::<f64>(1);
    let names: Vec<String> = params.iter().map(|p| p.name.clone()).collect();
    for n in names.iter().filter(|n| n.starts_with("decoder.")) {
        let shape = params.value(n).unwrap().shape().to_vec();
        params.set(n, Tensor::zeros(&shape)).unwrap();
    }
    let last = cfg.recon_layers - 1;
    let bias = Tensor::new(&[3], vec![0.1, 0.2, 0.3]).unwrap();
    params.set(&names::recon_bias(last), bias).unwrap();
    let mut g = Graph::new(&params);
    let r = g.constant(
        image::<f64>(1, 1, 2 * 2 * cfg.c_last, 3)
            .reshape(&[2 * 2 * cfg.c_last])
            .unwrap(),
    );
    let y = model.decode(&mut g, r, (8, 8)).unwrap();
    for px in g.value(y).data().chunks_exact(3) {
        assert_eq!(px, &[0.1, 0.2, 0.3]);
    }
}

#[test]
fn channel_owns_no_parameters() {
    let cfg = ArchitectureConfig::default();
    let model = JsccModel::new(cfg.clone()).unwrap();
    let params = model.init_params::<f32>(0);
    assert!(params
        .iter()
        .all(|p| p.name.starts_with("encoder.") || p.name.starts_with("decoder.")));
    assert_eq!(params.len(), cfg.parameter_shapes().len());
}

fn run_training(steps: usize, seed: u64, awgn: Awgn, images: &[Tensor<f32>], lr: f64) -> Vec<f64> {
    let model = JsccModel::new(small_config()).unwrap();
    let mut params = model.init_params::<f32>(seed);
    let mut adam = AdamState::new(AdamConfig::default());
    (0..steps as u64)
        .map(|step| {
            let batch: Vec<&Tensor<f32>> = images.iter().collect();
            let seeds: Vec<u64> = (0..batch.len() as u64)
                .map(|s| rng::derive_seed(seed, &[step, s]))
                .collect();
            train_step(&model, &mut params, &mut adam, &batch, &awgn, &seeds, lr).unwrap()
        })
        .collect()
}

#[test]
fn identical_seeds_give_identical_loss_trajectories() {
    let images: Vec<Tensor<f32>> = (0..3).map(|i| image(8, 8, 3, i)).collect();
    let a = run_training(5, 42, Awgn::from_snr(10.0, 1.0), &images, 1e-3);
    let b = run_training(5, 42, Awgn::from_snr(10.0, 1.0), &images, 1e-3);
    assert_eq!(a, b);
    let c = run_training(5, 43, Awgn::from_snr(10.0, 1.0), &images, 1e-3);
    assert_ne!(a, c);
}

#[test]
fn single_image_overfits_without_noise() {
    let images = vec![image::<f32>(8, 8, 3, 100)];
    let losses = run_training(200, 7, Awgn::noiseless(), &images, 1e-3);
    assert!(
        losses[199] < 0.25 * losses[0],
        "{} -> {}",
        losses[0],
        losses[199]
    );
}

#[test]
fn sampling_matrix_receives_gradient() {
    let model = JsccModel::new(small_config()).unwrap();
    let params = model.init_params::<f32>(5);
    let x = image::<f32>(8, 8, 3, 6);
    let (_, grads) = csjscc_core::train::image_gradients(
        &model,
        &params,
        &x,
        &Awgn::from_snr(10.0, 1.0),
        1,
        1.0,
    )
    .unwrap();
    let idx = params.index_of(names::SAMPLING).unwrap();
    let g = grads.get(idx).expect("sampling gradient");
    assert!(g.data().iter().any(|v| v.abs() > 0.0));
}

#[test]
fn noiseless_repeats_have_zero_variance() {
    let model = JsccModel::new(small_config()).unwrap();
    let params = model.init_params::<f32>(5);
    let x = image::<f32>(8, 8, 3, 6);
    let before = params.checksum();
    let stats = transmit_repeated(&model, &params, &x, &Awgn::noiseless(), 0..10).unwrap();
    assert_eq!(stats.psnr_variance, 0.0);
    assert_eq!(params.checksum(), before);
    let noisy = transmit_repeated(&model, &params, &x, &Awgn::from_snr(0.0, 1.0), 0..10).unwrap();
    assert!(noisy.psnr_variance > 0.0);
}
