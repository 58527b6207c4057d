//! Image to channel symbols: input scaling, block sampling, the PReLU
//! feature stack and the average-power normalization.

use alloc::format;
use alloc::vec::Vec;

use crate::autodiff::{Graph, Var};
use crate::bcs;
use crate::error::{Error, Result};
use crate::model::{names, ArchitectureConfig};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// 8-bit pixels to `[0, 1]` by dividing by 255.
pub fn normalize_input<T: Scalar>(
    raw: &[u8],
    height: usize,
    width: usize,
    channels: usize,
) -> Result<Tensor<T>> {
    Tensor::new(
        &[height, width, channels],
        raw.iter().map(|&v| T::of(v as f64 / 255.0)).collect(),
    )
}

/// `k` complex channel symbols stored as `2k` interleaved real/imaginary
/// values (I then Q).
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelSymbols<T> {
    iq: Vec<T>,
}

impl<T: Scalar> ChannelSymbols<T> {
    pub fn from_interleaved(iq: Vec<T>) -> Result<Self> {
        if iq.len() % 2 != 0 {
            return Err(Error::OddLength {
                what: "channel symbols",
                len: iq.len(),
            });
        }
        Ok(ChannelSymbols { iq })
    }

    pub fn from_complex(z: &[(T, T)]) -> Self {
        ChannelSymbols {
            iq: complex_to_real(z),
        }
    }

    pub fn len(&self) -> usize {
        self.iq.len() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.iq.is_empty()
    }

    pub fn interleaved(&self) -> &[T] {
        &self.iq
    }

    pub fn symbol(&self, i: usize) -> (T, T) {
        (self.iq[2 * i], self.iq[2 * i + 1])
    }

    pub fn to_complex(&self) -> Vec<(T, T)> {
        self.iq.chunks_exact(2).map(|p| (p[0], p[1])).collect()
    }

    /// `(1/k) sum |z_i|^2`.
    pub fn average_power(&self) -> f64 {
        let energy: f64 = self.iq.iter().map(|v| v.as_f64() * v.as_f64()).sum();
        energy / self.len() as f64
    }
}

/// Pair consecutive scalars `(2i, 2i+1)` into `(re, im)`.
pub fn real_to_complex<T: Scalar>(features: &[T]) -> Result<Vec<(T, T)>> {
    if features.len() % 2 != 0 {
        return Err(Error::OddLength {
            what: "encoder features",
            len: features.len(),
        });
    }
    Ok(features.chunks_exact(2).map(|p| (p[0], p[1])).collect())
}

pub fn complex_to_real<T: Scalar>(z: &[(T, T)]) -> Vec<T> {
    z.iter().flat_map(|&(re, im)| [re, im]).collect()
}

/// `z = sqrt(k P) * z~ / |z~|`, so that `(1/k) sum |z_i|^2 = P`.
pub fn power_normalize<T: Scalar>(latent: &[(T, T)], power: f64) -> Result<Vec<(T, T)>> {
    let k = latent.len();
    let energy: f64 = latent
        .iter()
        .map(|&(re, im)| re.as_f64() * re.as_f64() + im.as_f64() * im.as_f64())
        .sum();
    let norm = libm::sqrt(energy);
    if !(norm >= 1e-12) {
        return Err(Error::DegenerateLatent { norm });
    }
    let factor = T::of(libm::sqrt(k as f64 * power) / norm);
    Ok(latent
        .iter()
        .map(|&(re, im)| (re * factor, im * factor))
        .collect())
}

/// Record the encoder on `graph`. `image` is `H x W x l` in `[0, 1]`; the
/// result is the flat `2k` vector of power-normalized I/Q values, `k =
/// (H/B)(W/B) c_last / 2`.
pub fn encode<T: Scalar>(
    graph: &mut Graph<'_, T>,
    cfg: &ArchitectureConfig,
    image: Var,
) -> Result<Var> {
    let (h, w, l) = graph.value(image).hwc()?;
    if l != cfg.channels {
        return Err(Error::shape(
            "encode",
            "channels",
            format!("image has {l} channels, config expects {}", cfg.channels),
        ));
    }
    let filters = graph.param(names::SAMPLING)?;
    let mut x = bcs::sample_conv(graph, image, filters)?;
    for i in 0..cfg.encoder_widths.len() {
        let weight = graph.param(&names::encoder_weight(i))?;
        let bias = graph.param(&names::encoder_bias(i))?;
        let slope = graph.param(&names::encoder_slope(i))?;
        let padded = graph.pad(x, 1)?;
        let y = graph.conv2d(padded, weight, Some(bias), 1)?;
        x = graph.prelu(y, slope)?;
    }
    let weight = graph.param(names::ENCODER_OUT_WEIGHT)?;
    let bias = graph.param(names::ENCODER_OUT_BIAS)?;
    let padded = graph.pad(x, 1)?;
    let features = graph.conv2d(padded, weight, Some(bias), 1)?;
    let k = cfg.symbol_count(h, w)?;
    let flat = graph.reshape(features, &[2 * k])?;
    graph.power_normalize(flat, T::of(libm::sqrt(k as f64 * cfg.power)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn input_scaling() {
        let t: Tensor<f64> = normalize_input(&[255, 0, 128], 1, 1, 3).unwrap();
        assert_eq!(t.data(), &[1.0, 0.0, 128.0 / 255.0]);
        assert!((t.data()[2] - 0.501_960_78).abs() < 1e-8);
    }

    #[test]
    fn pairs_into_symbols() {
        let z = real_to_complex(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(z, vec![(1.0, 2.0), (3.0, 4.0)]);
        assert_eq!(complex_to_real(&z), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(real_to_complex(&[0.0f32; 6]).unwrap(), vec![(0.0, 0.0); 3]);
        assert!(matches!(
            real_to_complex(&[1.0f32, 2.0, 3.0]),
            Err(Error::OddLength { len: 3, .. })
        ));
    }

    #[test]
    fn normalize_closed_form() {
        let z = power_normalize(&[(3.0f64, 4.0), (0.0, 0.0)], 1.0).unwrap();
        assert!((z[0].0 - 0.848_528).abs() < 1e-6);
        assert!((z[0].1 - 1.131_371).abs() < 1e-6);
        assert_eq!(z[1], (0.0, 0.0));
        let s = ChannelSymbols::from_complex(&z);
        assert!((s.average_power() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_is_idempotent_on_the_sphere() {
        let z = [(0.6f64, 0.8), (1.0, 0.0)];
        let out = power_normalize(&z, 1.0).unwrap();
        for (a, b) in z.iter().zip(&out) {
            assert!((a.0 - b.0).abs() < 1e-7 && (a.1 - b.1).abs() < 1e-7);
        }
    }

    #[test]
    fn degenerate_latent_rejected() {
        assert!(matches!(
            power_normalize(&[(0.0f64, 0.0); 4], 1.0),
            Err(Error::DegenerateLatent { .. })
        ));
    }
}
