//! Channel symbols back to an image: transposed-convolution recovery of the
//! block measurements, the linear initial reconstruction and the deep
//! reconstruction stack.

use alloc::format;

use crate::autodiff::{Graph, Var};
use crate::error::{Error, Result};
use crate::model::{names, ArchitectureConfig};
use crate::scalar::Scalar;

/// Map `2k` received I/Q values to a `(H/B) x (W/B) x n_B` measurement grid.
pub fn decode_symbols<T: Scalar>(
    graph: &mut Graph<'_, T>,
    cfg: &ArchitectureConfig,
    received: Var,
    grid: (usize, usize),
) -> Result<Var> {
    let (gh, gw) = grid;
    let len = graph.value(received).len();
    if len != gh * gw * cfg.c_last {
        return Err(Error::shape(
            "decode_symbols",
            "symbol count",
            format!(
                "{} symbols received, {gh}x{gw} grid with c_last {} needs {}",
                len / 2,
                cfg.c_last,
                gh * gw * cfg.c_last / 2
            ),
        ));
    }
    let mut x = graph.reshape(received, &[gh, gw, cfg.c_last])?;
    for i in 0..cfg.encoder_widths.len() {
        let weight = graph.param(&names::decoder_weight(i))?;
        let bias = graph.param(&names::decoder_bias(i))?;
        let slope = graph.param(&names::decoder_slope(i))?;
        let y = graph.conv2d_transpose(x, weight, 1)?;
        let y = graph.crop(y, 1)?;
        let y = graph.add_bias(y, bias)?;
        x = graph.prelu(y, slope)?;
    }
    let weight = graph.param(names::DECODER_OUT_WEIGHT)?;
    let bias = graph.param(names::DECODER_OUT_BIAS)?;
    let y = graph.conv2d_transpose(x, weight, 1)?;
    let y = graph.crop(y, 1)?;
    graph.add_bias(y, bias)
}

/// `l B^2` filters of size `1 x 1 x n_B` (no bias, no activation) followed by
/// the reshape of every block vector to `B x B x l` and the raster
/// concatenation of blocks into the full image.
pub fn initial_reconstruction<T: Scalar>(
    graph: &mut Graph<'_, T>,
    grid: Var,
    weights: Var,
    block: usize,
    channels: usize,
) -> Result<Var> {
    let (_, _, nb) = graph.value(grid).hwc()?;
    match graph.value(weights).shape()[..] {
        [1, 1, cin, cout] if cin == nb && cout == block * block * channels => {}
        ref s => {
            return Err(Error::shape(
                "initial_reconstruction",
                "channels",
                format!(
                    "weights {s:?} for {nb} measurements and {block}x{block}x{channels} blocks"
                ),
            ))
        }
    }
    let vectors = graph.conv2d(grid, weights, None, 1)?;
    graph.blocks_to_image(vectors, block, channels)
}

/// `m` convolutions with `f x f` kernels and same-size zero padding: ReLU
/// after all but the last, which is linear and emits `l` channels.
pub fn deep_reconstruction<T: Scalar>(
    graph: &mut Graph<'_, T>,
    cfg: &ArchitectureConfig,
    initial: Var,
) -> Result<Var> {
    let pad = cfg.recon_kernel / 2;
    let mut x = initial;
    for i in 0..cfg.recon_layers {
        let weight = graph.param(&names::recon_weight(i))?;
        let bias = graph.param(&names::recon_bias(i))?;
        let padded = graph.pad(x, pad)?;
        x = graph.conv2d(padded, weight, Some(bias), 1)?;
        if i + 1 < cfg.recon_layers {
            x = graph.relu(x);
        }
    }
    Ok(x)
}

/// Full decoder for an `H x W` image.
pub fn decode<T: Scalar>(
    graph: &mut Graph<'_, T>,
    cfg: &ArchitectureConfig,
    received: Var,
    image_hw: (usize, usize),
) -> Result<Var> {
    let grid = cfg.grid_dims(image_hw.0, image_hw.1)?;
    let measurements = decode_symbols(graph, cfg, received, grid)?;
    let weights = graph.param(names::INITIAL_RECON)?;
    let initial =
        initial_reconstruction(graph, measurements, weights, cfg.block_size, cfg.channels)?;
    deep_reconstruction(graph, cfg, initial)
}
