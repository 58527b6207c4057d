//! Block compressed sensing.
//!
//! An image is cut into non-overlapping `B x B x l` blocks and every block is
//! measured by the same `n_B x (l*B*B)` matrix. Block vectors are flattened in
//! (row, column, channel) order. The same order links the matrix view of the
//! sampling operator with its filter view: column `j` of the `[B, B, l, n_B]`
//! filter bank, read in memory order, is row `j` of the matrix transposed, so
//! the strided convolution computes exactly one matrix-vector product per block.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// The learnable sampling operator in matrix form.
#[derive(Clone, Debug, PartialEq)]
pub struct SamplingMatrix<T> {
    /// `[n_B, l * B * B]`
    phi: Tensor<T>,
    block: usize,
    channels: usize,
    pub trainable: bool,
}

impl<T: Scalar> SamplingMatrix<T> {
    pub fn new(phi: Tensor<T>, block: usize, channels: usize) -> Result<Self> {
        let dim = channels * block * block;
        match phi.shape()[..] {
            [rows, cols] if cols == dim && rows >= 1 && rows <= dim => Ok(SamplingMatrix {
                phi,
                block,
                channels,
                trainable: true,
            }),
            _ => Err(Error::shape(
                "sampling matrix",
                "rows/columns",
                format!("expected [n_B <= {dim}, {dim}], got {:?}", phi.shape()),
            )),
        }
    }

    /// Gaussian rows, orthonormalized; deterministic in `seed`.
    pub fn init(block: usize, channels: usize, measurements: usize, seed: u64) -> Result<Self> {
        let dim = channels * block * block;
        if measurements == 0 || measurements > dim {
            return Err(Error::OutOfRange {
                what: "n_B",
                value: measurements.to_string(),
                range: format!("1..={dim}"),
            });
        }
        let mut rng = rng::stream(seed);
        let mut rows: Vec<Vec<f64>> = Vec::with_capacity(measurements);
        while rows.len() < measurements {
            let mut v: Vec<f64> = (0..dim).map(|_| rng::standard_normal(&mut rng)).collect();
            // Modified Gram-Schmidt, twice for stability.
            for _ in 0..2 {
                for r in &rows {
                    let proj: f64 = r.iter().zip(&v).map(|(a, b)| a * b).sum();
                    for (vi, ri) in v.iter_mut().zip(r) {
                        *vi -= proj * ri;
                    }
                }
            }
            let norm = libm::sqrt(v.iter().map(|x| x * x).sum::<f64>());
            if norm > 1e-8 {
                v.iter_mut().for_each(|x| *x /= norm);
                rows.push(v);
            }
        }
        let data = rows.into_iter().flatten().map(T::of).collect();
        Self::new(Tensor::new(&[measurements, dim], data)?, block, channels)
    }

    pub fn matrix(&self) -> &Tensor<T> {
        &self.phi
    }

    pub fn block(&self) -> usize {
        self.block
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn measurements(&self) -> usize {
        self.phi.shape()[0]
    }

    /// `n_B / (l * B * B)`.
    pub fn sampling_ratio(&self) -> f64 {
        self.measurements() as f64 / self.phi.shape()[1] as f64
    }

    /// `[B, B, l, n_B]` filter bank for a stride-`B` convolution.
    pub fn to_filters(&self) -> Tensor<T> {
        let (rows, dim) = (self.measurements(), self.phi.shape()[1]);
        let mut out = vec![T::zero(); rows * dim];
        for r in 0..rows {
            for j in 0..dim {
                out[j * rows + r] = self.phi.data()[r * dim + j];
            }
        }
        Tensor::new(&[self.block, self.block, self.channels, rows], out)
            .expect("consistent extents")
    }

    pub fn from_filters(filters: &Tensor<T>) -> Result<Self> {
        let (b, l, rows) = match filters.shape()[..] {
            [b, b2, l, rows] if b == b2 => (b, l, rows),
            _ => {
                return Err(Error::shape(
                    "sampling matrix",
                    "filters",
                    format!("expected [B, B, l, n_B], got {:?}", filters.shape()),
                ))
            }
        };
        let dim = b * b * l;
        let mut phi = vec![T::zero(); rows * dim];
        for j in 0..dim {
            for r in 0..rows {
                phi[r * dim + j] = filters.data()[j * rows + r];
            }
        }
        Self::new(Tensor::new(&[rows, dim], phi)?, b, l)
    }
}

/// Measurements of every block, `[H/B, W/B, n_B]`.
#[derive(Clone, Debug, PartialEq)]
pub struct MeasurementGrid<T>(pub Tensor<T>);

fn check_divisible(h: usize, w: usize, block: usize) -> Result<()> {
    if block == 0 {
        return Err(Error::OutOfRange {
            what: "block size",
            value: "0".into(),
            range: ">= 1".into(),
        });
    }
    for extent in [h, w] {
        if extent % block != 0 {
            return Err(Error::NotDivisible { extent, block });
        }
    }
    Ok(())
}

/// Raster-ordered blocks, each flattened in (row, column, channel) order.
pub fn partition_blocks<T: Scalar>(image: &Tensor<T>, block: usize) -> Result<Vec<Vec<T>>> {
    let (h, w, l) = image.hwc()?;
    check_divisible(h, w, block)?;
    let (gh, gw) = (h / block, w / block);
    let flat = crate::autodiff::kernels::image_to_blocks(image.data(), gh, gw, block, l);
    Ok(flat
        .chunks_exact(block * block * l)
        .map(<[T]>::to_vec)
        .collect())
}

/// Inverse of [`partition_blocks`].
pub fn reassemble_blocks<T: Scalar>(
    blocks: &[Vec<T>],
    height: usize,
    width: usize,
    channels: usize,
    block: usize,
) -> Result<Tensor<T>> {
    check_divisible(height, width, block)?;
    let (gh, gw) = (height / block, width / block);
    let dim = block * block * channels;
    if blocks.len() != gh * gw || blocks.iter().any(|b| b.len() != dim) {
        return Err(Error::shape(
            "reassemble_blocks",
            "block count",
            format!("need {} blocks of {dim} values", gh * gw),
        ));
    }
    let flat: Vec<T> = blocks.iter().flatten().copied().collect();
    let data = crate::autodiff::kernels::blocks_to_image(&flat, gh, gw, block, channels);
    Tensor::new(&[height, width, channels], data)
}

/// Recorded sampling: bias-free convolution with `[B, B, l, n_B]` filters at
/// stride `B`, no activation.
pub fn sample_conv<T: Scalar>(graph: &mut Graph<'_, T>, image: Var, filters: Var) -> Result<Var> {
    let (h, w, _) = graph.value(image).hwc()?;
    let block = graph.value(filters).shape()[0];
    check_divisible(h, w, block)?;
    graph.conv2d(image, filters, None, block)
}

/// Sampling outside any training graph.
pub fn sample<T: Scalar>(image: &Tensor<T>, phi: &SamplingMatrix<T>) -> Result<MeasurementGrid<T>> {
    let store = crate::autodiff::ParameterStore::new();
    let mut graph = Graph::new(&store);
    let x = graph.constant(image.clone());
    let f = graph.constant(phi.to_filters());
    let y = sample_conv(&mut graph, x, f)?;
    Ok(MeasurementGrid(graph.value(y).clone()))
}

/// Reference path: an explicit `y_j = phi x_j` for every block.
pub fn sample_matrix_oracle<T: Scalar>(
    blocks: &[Vec<T>],
    phi: &SamplingMatrix<T>,
) -> Result<Vec<Vec<T>>> {
    let m = phi.matrix();
    let (rows, dim) = (m.shape()[0], m.shape()[1]);
    blocks
        .iter()
        .map(|x| {
            if x.len() != dim {
                return Err(Error::shape(
                    "sample_matrix_oracle",
                    "block length",
                    format!("{} vs {dim}", x.len()),
                ));
            }
            Ok((0..rows)
                .map(|r| {
                    m.data()[r * dim..(r + 1) * dim]
                        .iter()
                        .zip(x)
                        .fold(T::zero(), |acc, (&a, &b)| acc + a * b)
                })
                .collect())
        })
        .collect()
}
