//! Architecture configuration, parameter layout and the end-to-end
//! encoder -> channel -> decoder composition.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;
use rand::Rng;

use crate::autodiff::{Graph, ParameterStore, Var};
use crate::bcs::SamplingMatrix;
use crate::channel::Channel;
use crate::decoder;
use crate::encoder;
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Parameter names. Encoder entries start with `encoder.`, decoder entries
/// with `decoder.`.
pub mod names {
    use alloc::format;
    use alloc::string::String;

    /// `[B, B, l, n_B]` filter view of the sampling matrix.
    pub const SAMPLING: &str = "encoder.sampling";
    pub const ENCODER_OUT_WEIGHT: &str = "encoder.out.weight";
    pub const ENCODER_OUT_BIAS: &str = "encoder.out.bias";
    pub const DECODER_OUT_WEIGHT: &str = "decoder.out.weight";
    pub const DECODER_OUT_BIAS: &str = "decoder.out.bias";
    /// `[1, 1, n_B, l B^2]`
    pub const INITIAL_RECON: &str = "decoder.initial.weight";

    pub fn encoder_weight(i: usize) -> String {
        format!("encoder.conv{i}.weight")
    }
    pub fn encoder_bias(i: usize) -> String {
        format!("encoder.conv{i}.bias")
    }
    pub fn encoder_slope(i: usize) -> String {
        format!("encoder.conv{i}.slope")
    }
    pub fn decoder_weight(i: usize) -> String {
        format!("decoder.tconv{i}.weight")
    }
    pub fn decoder_bias(i: usize) -> String {
        format!("decoder.tconv{i}.bias")
    }
    pub fn decoder_slope(i: usize) -> String {
        format!("decoder.tconv{i}.slope")
    }
    pub fn recon_weight(i: usize) -> String {
        format!("decoder.deep{i}.weight")
    }
    pub fn recon_bias(i: usize) -> String {
        format!("decoder.deep{i}.bias")
    }
}

pub const PRELU_INIT: f64 = 0.25;

#[derive(Clone, Debug, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ArchitectureConfig {
    /// `B`
    pub block_size: usize,
    /// `l`
    pub channels: usize,
    /// `n_B`, measurements per block.
    pub measurements: usize,
    /// Widths of the 3x3 PReLU convolutions after sampling; the decoder mirrors them.
    pub encoder_widths: Vec<usize>,
    /// Channels of the final encoder convolution; pairs form complex symbols.
    pub c_last: usize,
    /// `m`
    pub recon_layers: usize,
    /// `d`
    pub recon_width: usize,
    /// `f`
    pub recon_kernel: usize,
    /// Average transmit power `P`.
    pub power: f64,
}

impl Default for ArchitectureConfig {
    /// Small-image setting: `B = 8`, `l = 3`, compression ratio 1/6.
    fn default() -> Self {
        ArchitectureConfig {
            block_size: 8,
            channels: 3,
            measurements: 64,
            encoder_widths: vec![32, 32, 32],
            c_last: 64,
            recon_layers: 5,
            recon_width: 64,
            recon_kernel: 3,
            power: 1.0,
        }
    }
}

/// `c_last = 2 R l B^2` rounded to the nearest even integer.
pub fn c_last_for_ratio(ratio: f64, block_size: usize, channels: usize) -> usize {
    let exact = 2.0 * ratio * (channels * block_size * block_size) as f64;
    let half = Float::round(exact / 2.0);
    if half <= 0.0 {
        0
    } else {
        2 * half as usize
    }
}

impl ArchitectureConfig {
    pub fn validate(&self) -> Result<()> {
        let dim = self.block_dim();
        let fail = |what: &'static str, value: String, range: String| {
            Err(Error::OutOfRange { what, value, range })
        };
        if self.block_size == 0 {
            return fail("block_size", "0".into(), ">= 1".into());
        }
        if self.channels == 0 {
            return fail("channels", "0".into(), ">= 1".into());
        }
        if self.measurements == 0 || self.measurements > dim {
            return fail(
                "measurements",
                self.measurements.to_string(),
                format!("1..={dim}"),
            );
        }
        if self.c_last < 2 || self.c_last % 2 != 0 {
            return fail("c_last", self.c_last.to_string(), "even and >= 2".into());
        }
        if self.encoder_widths.iter().any(|&w| w == 0) {
            return fail(
                "encoder_widths",
                format!("{:?}", self.encoder_widths),
                "all >= 1".into(),
            );
        }
        if self.recon_layers < 2 {
            return fail("recon_layers", self.recon_layers.to_string(), ">= 2".into());
        }
        if self.recon_width == 0 {
            return fail("recon_width", "0".into(), ">= 1".into());
        }
        if self.recon_kernel % 2 == 0 {
            return fail("recon_kernel", self.recon_kernel.to_string(), "odd".into());
        }
        if !(self.power > 0.0 && self.power.is_finite()) {
            return fail("power", self.power.to_string(), "> 0".into());
        }
        Ok(())
    }

    /// `l B^2`
    pub fn block_dim(&self) -> usize {
        self.channels * self.block_size * self.block_size
    }

    pub fn grid_dims(&self, height: usize, width: usize) -> Result<(usize, usize)> {
        for extent in [height, width] {
            if extent == 0 || extent % self.block_size != 0 {
                return Err(Error::NotDivisible {
                    extent,
                    block: self.block_size,
                });
            }
        }
        Ok((height / self.block_size, width / self.block_size))
    }

    /// `k = (H/B)(W/B) c_last / 2`.
    pub fn symbol_count(&self, height: usize, width: usize) -> Result<usize> {
        let (gh, gw) = self.grid_dims(height, width)?;
        Ok(gh * gw * self.c_last / 2)
    }

    /// Named parameter shapes in store order.
    pub fn parameter_shapes(&self) -> Vec<(String, Vec<usize>)> {
        let (b, l, nb) = (self.block_size, self.channels, self.measurements);
        let mut out = vec![(names::SAMPLING.to_string(), vec![b, b, l, nb])];
        let mut cin = nb;
        for (i, &w) in self.encoder_widths.iter().enumerate() {
            out.push((names::encoder_weight(i), vec![3, 3, cin, w]));
            out.push((names::encoder_bias(i), vec![w]));
            out.push((names::encoder_slope(i), vec![w]));
            cin = w;
        }
        out.push((
            names::ENCODER_OUT_WEIGHT.to_string(),
            vec![3, 3, cin, self.c_last],
        ));
        out.push((names::ENCODER_OUT_BIAS.to_string(), vec![self.c_last]));

        // Transposed filters are [k, k, out, in].
        let mut cin = self.c_last;
        for (i, &w) in self.encoder_widths.iter().rev().enumerate() {
            out.push((names::decoder_weight(i), vec![3, 3, w, cin]));
            out.push((names::decoder_bias(i), vec![w]));
            out.push((names::decoder_slope(i), vec![w]));
            cin = w;
        }
        out.push((names::DECODER_OUT_WEIGHT.to_string(), vec![3, 3, nb, cin]));
        out.push((names::DECODER_OUT_BIAS.to_string(), vec![nb]));
        out.push((
            names::INITIAL_RECON.to_string(),
            vec![1, 1, nb, self.block_dim()],
        ));

        let f = self.recon_kernel;
        for i in 0..self.recon_layers {
            let cin = if i == 0 { l } else { self.recon_width };
            let cout = if i + 1 == self.recon_layers {
                l
            } else {
                self.recon_width
            };
            out.push((names::recon_weight(i), vec![f, f, cin, cout]));
            out.push((names::recon_bias(i), vec![cout]));
        }
        out
    }
}

/// The trainable transmission system for one architecture.
#[derive(Clone, Debug, PartialEq)]
pub struct JsccModel {
    cfg: ArchitectureConfig,
}

impl JsccModel {
    pub fn new(cfg: ArchitectureConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(JsccModel { cfg })
    }

    pub fn config(&self) -> &ArchitectureConfig {
        &self.cfg
    }

    /// Orthonormal sampling rows, Glorot filters, zero biases, PReLU slopes 0.25.
    pub fn init_params<T: Scalar>(&self, seed: u64) -> ParameterStore<T> {
        let mut rng = rng::stream(rng::derive_seed(seed, &[0x1417]));
        let mut store = ParameterStore::new();
        for (name, shape) in self.cfg.parameter_shapes() {
            let value = if name == names::SAMPLING {
                SamplingMatrix::<T>::init(
                    self.cfg.block_size,
                    self.cfg.channels,
                    self.cfg.measurements,
                    rng.random(),
                )
                .expect("validated config")
                .to_filters()
            } else if name.ends_with(".bias") {
                Tensor::zeros(&shape)
            } else if name.ends_with(".slope") {
                Tensor::full(&shape, T::of(PRELU_INIT))
            } else {
                // Weights: [k, k, a, b]; fan-in/out use the spatial tap count.
                let taps = shape[0] * shape[1];
                rng::glorot_uniform(&shape, taps * shape[2], taps * shape[3], &mut rng)
            };
            store.insert(&name, value, true).expect("unique names");
        }
        store
    }

    /// Check that a store holds exactly this architecture's parameters.
    pub fn check_params<T: Scalar>(&self, store: &ParameterStore<T>) -> Result<()> {
        let expected = self.cfg.parameter_shapes();
        if expected.len() != store.len() {
            return Err(Error::shape(
                "parameters",
                "count",
                format!("expected {} entries, found {}", expected.len(), store.len()),
            ));
        }
        for ((name, shape), p) in expected.iter().zip(store.iter()) {
            if *name != p.name || shape[..] != *p.value.shape() {
                return Err(Error::shape(
                    "parameters",
                    "shape",
                    format!(
                        "expected {name} {shape:?}, found {} {:?}",
                        p.name,
                        p.value.shape()
                    ),
                ));
            }
        }
        Ok(())
    }

    pub fn encode<T: Scalar>(&self, graph: &mut Graph<'_, T>, image: Var) -> Result<Var> {
        encoder::encode(graph, &self.cfg, image)
    }

    pub fn decode<T: Scalar>(
        &self,
        graph: &mut Graph<'_, T>,
        received: Var,
        image_hw: (usize, usize),
    ) -> Result<Var> {
        decoder::decode(graph, &self.cfg, received, image_hw)
    }

    /// Record encode -> channel -> decode for one image; returns the unclamped
    /// reconstruction.
    pub fn forward<T: Scalar, C: Channel, R: Rng + ?Sized>(
        &self,
        graph: &mut Graph<'_, T>,
        image: Var,
        channel: &C,
        rng: &mut R,
    ) -> Result<Var> {
        let (h, w, _) = graph.value(image).hwc()?;
        let z = self.encode(graph, image)?;
        let z_hat = channel.transmit(graph, z, rng)?;
        self.decode(graph, z_hat, (h, w))
    }

    /// Evaluation-time transmission of one image: reconstruction clamped to `[0, 1]`.
    pub fn transmit_image<T: Scalar, C: Channel, R: Rng + ?Sized>(
        &self,
        params: &ParameterStore<T>,
        image: &Tensor<T>,
        channel: &C,
        rng: &mut R,
    ) -> Result<Tensor<T>> {
        let mut graph = Graph::new(params);
        let x = graph.constant(image.clone());
        let y = self.forward(&mut graph, x, channel, rng)?;
        Ok(graph.value(y).map(|v| v.max(T::zero()).min(T::one())))
    }

    /// Channel symbols for one image.
    pub fn encode_image<T: Scalar>(
        &self,
        params: &ParameterStore<T>,
        image: &Tensor<T>,
    ) -> Result<encoder::ChannelSymbols<T>> {
        let mut graph = Graph::new(params);
        let x = graph.constant(image.clone());
        let z = self.encode(&mut graph, x)?;
        encoder::ChannelSymbols::from_interleaved(graph.value(z).data().to_vec())
    }

    /// A parameter set under which the whole pipeline is the identity on
    /// `image` over a noiseless channel: `B = 1`, identity filters, unit
    /// PReLU slopes, and `P` equal to the image's own energy per symbol so
    /// the power normalization is a no-op. Used as a transmission sanity check.
    pub fn identity_stub(image: &Tensor<f32>) -> Result<(JsccModel, ParameterStore<f32>)> {
        let (h, w, l) = image.hwc()?;
        let c_last = l + l % 2;
        let k = h * w * c_last / 2;
        let energy: f64 = image.data().iter().map(|&v| (v as f64) * (v as f64)).sum();
        let cfg = ArchitectureConfig {
            block_size: 1,
            channels: l,
            measurements: l,
            encoder_widths: vec![c_last],
            c_last,
            recon_layers: 2,
            recon_width: l,
            recon_kernel: 3,
            power: energy / k as f64,
        };
        let model = JsccModel::new(cfg)?;
        let mut store = ParameterStore::new();
        for (name, shape) in model.cfg.parameter_shapes() {
            let value = if name.ends_with(".slope") {
                Tensor::full(&shape, 1.0)
            } else if name.ends_with(".bias") {
                Tensor::zeros(&shape)
            } else {
                identity_filter(&shape)
            };
            store.insert(&name, value, true)?;
        }
        Ok((model, store))
    }
}

/// Centre tap maps channel `i` to channel `i` for `i < min(a, b)`.
fn identity_filter(shape: &[usize]) -> Tensor<f32> {
    let (k, a, b) = (shape[0], shape[2], shape[3]);
    let centre = (k / 2) * k + k / 2;
    let mut t = Tensor::zeros(shape);
    for i in 0..a.min(b) {
        t.data_mut()[centre * a * b + i * b + i] = 1.0;
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::channel::Awgn;

    #[test]
    fn ratio_inversion() {
        assert_eq!(c_last_for_ratio(1.0 / 6.0, 8, 3), 64);
        assert_eq!(c_last_for_ratio(0.05, 32, 3), 308);
        assert_eq!(c_last_for_ratio(0.001, 2, 1), 0);
    }

    #[test]
    fn default_symbol_count() {
        let cfg = ArchitectureConfig::default();
        assert_eq!(cfg.symbol_count(32, 32).unwrap(), 512);
        assert!(cfg.symbol_count(30, 32).is_err());
    }

    #[test]
    fn invalid_configs_rejected() {
        let mut cfg = ArchitectureConfig::default();
        cfg.c_last = 63;
        assert!(JsccModel::new(cfg).is_err());
        let cfg = ArchitectureConfig {
            measurements: 193,
            ..Default::default()
        };
        assert!(JsccModel::new(cfg).is_err());
        let cfg = ArchitectureConfig {
            recon_layers: 1,
            ..Default::default()
        };
        assert!(JsccModel::new(cfg).is_err());
    }

    #[test]
    fn init_matches_layout() {
        let model = JsccModel::new(ArchitectureConfig::default()).unwrap();
        let store: ParameterStore<f32> = model.init_params(1);
        model.check_params(&store).unwrap();
        assert_eq!(store, model.init_params(1));
        assert_ne!(store, model.init_params(2));
    }

    #[test]
    fn identity_stub_round_trips() {
        let image = Tensor::from_fn(&[4, 6, 3], |i| (i % 17) as f32 / 16.0);
        let (model, store) = JsccModel::identity_stub(&image).unwrap();
        let out = model
            .transmit_image(&store, &image, &Awgn::noiseless(), &mut rng::stream(0))
            .unwrap();
        assert!(out.max_abs_diff(&image) < 1e-6);
    }
}
