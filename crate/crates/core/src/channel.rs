//! The non-trainable channel layer.

use alloc::vec::Vec;

use rand::Rng;

use crate::autodiff::{Graph, Var};
use crate::encoder::ChannelSymbols;
use crate::error::Result;
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `sigma^2 = P * 10^(-snr_db / 10)`. An infinite SNR gives a noiseless channel.
pub fn snr_to_sigma2(snr_db: f64, power: f64) -> f64 {
    power * libm::pow(10.0, -snr_db / 10.0)
}

/// `10 log10(P / sigma^2)`.
pub fn sigma2_to_snr(sigma2: f64, power: f64) -> f64 {
    10.0 * libm::log10(power / sigma2)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelConfig {
    pub snr_db: f64,
    pub power: f64,
    pub seed: u64,
}

impl ChannelConfig {
    pub fn sigma2(&self) -> f64 {
        snr_to_sigma2(self.snr_db, self.power)
    }
}

/// A differentiable symbol-to-symbol transfer function. Implementations own
/// no trainable parameters.
pub trait Channel {
    /// Corrupt a batch of interleaved I/Q values outside any graph.
    fn corrupt<T: Scalar, R: Rng + ?Sized>(&self, iq: &[T], rng: &mut R) -> Vec<T>;

    /// Record the channel on `graph`; `symbols` holds `2k` interleaved values.
    fn transmit<T: Scalar, R: Rng + ?Sized>(
        &self,
        graph: &mut Graph<'_, T>,
        symbols: Var,
        rng: &mut R,
    ) -> Result<Var>;
}

/// Complex additive white Gaussian noise, `CN(0, sigma^2)` per symbol: each of
/// I and Q gets independent `N(0, sigma^2 / 2)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Awgn {
    pub sigma2: f64,
}

impl Awgn {
    pub fn new(sigma2: f64) -> Self {
        assert!(sigma2 >= 0.0, "noise power must be non-negative");
        Awgn { sigma2 }
    }

    pub fn from_snr(snr_db: f64, power: f64) -> Self {
        Awgn::new(snr_to_sigma2(snr_db, power))
    }

    pub fn noiseless() -> Self {
        Awgn { sigma2: 0.0 }
    }

    /// One noise realization for `len` interleaved values.
    pub fn noise<T: Scalar, R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<T> {
        let sd = libm::sqrt(self.sigma2 / 2.0);
        (0..len)
            .map(|_| T::of(sd * rng::standard_normal(rng)))
            .collect()
    }
}

impl Channel for Awgn {
    fn corrupt<T: Scalar, R: Rng + ?Sized>(&self, iq: &[T], rng: &mut R) -> Vec<T> {
        if self.sigma2 == 0.0 {
            return iq.to_vec();
        }
        let noise: Vec<T> = self.noise(iq.len(), rng);
        iq.iter().zip(noise).map(|(&z, n)| z + n).collect()
    }

    fn transmit<T: Scalar, R: Rng + ?Sized>(
        &self,
        graph: &mut Graph<'_, T>,
        symbols: Var,
        rng: &mut R,
    ) -> Result<Var> {
        if self.sigma2 == 0.0 {
            return Ok(symbols);
        }
        let shape = graph.value(symbols).shape().to_vec();
        let noise = Tensor::new(&shape, self.noise(graph.value(symbols).len(), rng))?;
        graph.add_const(symbols, &noise)
    }
}

/// `z_hat = z + w` for standalone symbol vectors.
pub fn awgn_transmit<T: Scalar, R: Rng + ?Sized>(
    z: &ChannelSymbols<T>,
    cfg: &ChannelConfig,
    rng: &mut R,
) -> ChannelSymbols<T> {
    let out = Awgn::new(cfg.sigma2()).corrupt(z.interleaved(), rng);
    ChannelSymbols::from_interleaved(out).expect("length preserved")
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    #[test]
    fn snr_inversion() {
        assert!((snr_to_sigma2(10.0, 1.0) - 0.1).abs() < 1e-15);
        assert_eq!(snr_to_sigma2(0.0, 1.0), 1.0);
        assert!((snr_to_sigma2(4.0, 1.0) - 0.398_107_170_553_497).abs() < 1e-12);
        assert_eq!(snr_to_sigma2(f64::INFINITY, 1.0), 0.0);
        assert!((sigma2_to_snr(0.1, 1.0) - 10.0).abs() < 1e-12);
    }

    #[test]
    fn noiseless_path_is_exact() {
        let z = ChannelSymbols::from_interleaved(vec![0.25f32, -0.0, 1e-30, 3.0]).unwrap();
        let cfg = ChannelConfig {
            snr_db: f64::INFINITY,
            power: 1.0,
            seed: 0,
        };
        let out = awgn_transmit(&z, &cfg, &mut rng::stream(1));
        let bits = |s: &ChannelSymbols<f32>| {
            s.interleaved()
                .iter()
                .map(|v| v.to_bits())
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&out), bits(&z));
    }

    #[test]
    fn same_seed_same_noise() {
        let z = ChannelSymbols::from_interleaved(vec![0.0f64; 64]).unwrap();
        let cfg = ChannelConfig {
            snr_db: 3.0,
            power: 1.0,
            seed: 9,
        };
        let a = awgn_transmit(&z, &cfg, &mut rng::stream(cfg.seed));
        let b = awgn_transmit(&z, &cfg, &mut rng::stream(cfg.seed));
        assert_eq!(a, b);
        let c = awgn_transmit(&z, &cfg, &mut rng::stream(10));
        assert_ne!(a, c);
    }
}
