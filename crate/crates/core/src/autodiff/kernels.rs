//! Raw convolution kernels on channel-last buffers.
//!
//! Filters use the `[k, k, cin, cout]` layout so the innermost loops run over
//! a contiguous channel row and vectorize. Zero activations (common after
//! ReLU) are skipped.

use alloc::vec;
use alloc::vec::Vec;

use crate::scalar::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub h: usize,
    pub w: usize,
    pub cin: usize,
    pub k: usize,
    pub cout: usize,
    pub stride: usize,
}

impl ConvGeom {
    #[inline]
    pub fn out_h(&self) -> usize {
        (self.h - self.k) / self.stride + 1
    }
    #[inline]
    pub fn out_w(&self) -> usize {
        (self.w - self.k) / self.stride + 1
    }
}

#[inline]
fn axpy<T: Scalar>(y: &mut [T], a: T, x: &[T]) {
    for (yv, &xv) in y.iter_mut().zip(x) {
        *yv = *yv + a * xv;
    }
}

/// Valid cross-correlation: `out[oy, ox, co] = bias[co] + sum in[oy*s+ky, ox*s+kx, ci] * w[ky, kx, ci, co]`.
pub(crate) fn conv2d_forward<T: Scalar>(
    input: &[T],
    filters: &[T],
    bias: Option<&[T]>,
    g: ConvGeom,
) -> Vec<T> {
    let (ho, wo) = (g.out_h(), g.out_w());
    let mut out = vec![T::zero(); ho * wo * g.cout];
    let tap = g.cin * g.cout;
    for oy in 0..ho {
        for ox in 0..wo {
            let out_row = &mut out[(oy * wo + ox) * g.cout..][..g.cout];
            if let Some(b) = bias {
                out_row.copy_from_slice(b);
            }
            for ky in 0..g.k {
                let iy = oy * g.stride + ky;
                for kx in 0..g.k {
                    let ix = ox * g.stride + kx;
                    let in_row = &input[(iy * g.w + ix) * g.cin..][..g.cin];
                    let w_tap = &filters[(ky * g.k + kx) * tap..][..tap];
                    for (&a, w_row) in in_row.iter().zip(w_tap.chunks_exact(g.cout)) {
                        if a != T::zero() {
                            axpy(out_row, a, w_row);
                        }
                    }
                }
            }
        }
    }
    out
}

/// Gradient of the valid convolution with respect to its filters.
pub(crate) fn conv2d_filter_grad<T: Scalar>(input: &[T], grad_out: &[T], g: ConvGeom) -> Vec<T> {
    let (ho, wo) = (g.out_h(), g.out_w());
    let tap = g.cin * g.cout;
    let mut gw = vec![T::zero(); g.k * g.k * tap];
    for oy in 0..ho {
        for ox in 0..wo {
            let g_row = &grad_out[(oy * wo + ox) * g.cout..][..g.cout];
            if g_row.iter().all(|v| *v == T::zero()) {
                continue;
            }
            for ky in 0..g.k {
                let iy = oy * g.stride + ky;
                for kx in 0..g.k {
                    let ix = ox * g.stride + kx;
                    let in_row = &input[(iy * g.w + ix) * g.cin..][..g.cin];
                    let gw_tap = &mut gw[(ky * g.k + kx) * tap..][..tap];
                    for (&a, gw_row) in in_row.iter().zip(gw_tap.chunks_exact_mut(g.cout)) {
                        if a != T::zero() {
                            axpy(gw_row, a, g_row);
                        }
                    }
                }
            }
        }
    }
    gw
}

/// Adjoint of [`conv2d_forward`] in its input: scatters `grad_out` back through
/// the filters onto an `h x w x cin` buffer. This is the transposed convolution.
pub(crate) fn conv2d_input_grad<T: Scalar>(grad_out: &[T], filters: &[T], g: ConvGeom) -> Vec<T> {
    let (ho, wo) = (g.out_h(), g.out_w());
    let tap = g.cin * g.cout;
    // [k, k, cout, cin] so the scatter runs over contiguous input channels.
    let mut wt = vec![T::zero(); g.k * g.k * tap];
    for t in 0..g.k * g.k {
        for ci in 0..g.cin {
            for co in 0..g.cout {
                wt[t * tap + co * g.cin + ci] = filters[t * tap + ci * g.cout + co];
            }
        }
    }
    let mut gin = vec![T::zero(); g.h * g.w * g.cin];
    for oy in 0..ho {
        for ox in 0..wo {
            let g_row = &grad_out[(oy * wo + ox) * g.cout..][..g.cout];
            for ky in 0..g.k {
                let iy = oy * g.stride + ky;
                for kx in 0..g.k {
                    let ix = ox * g.stride + kx;
                    let gin_row = &mut gin[(iy * g.w + ix) * g.cin..][..g.cin];
                    let wt_tap = &wt[(ky * g.k + kx) * tap..][..tap];
                    for (&gv, wt_row) in g_row.iter().zip(wt_tap.chunks_exact(g.cin)) {
                        if gv != T::zero() {
                            axpy(gin_row, gv, wt_row);
                        }
                    }
                }
            }
        }
    }
    gin
}

/// Zero pad `amount` pixels on every side of an `h x w x c` buffer.
pub(crate) fn pad<T: Scalar>(input: &[T], h: usize, w: usize, c: usize, amount: usize) -> Vec<T> {
    let (ph, pw) = (h + 2 * amount, w + 2 * amount);
    let mut out = vec![T::zero(); ph * pw * c];
    for y in 0..h {
        let src = &input[y * w * c..][..w * c];
        out[((y + amount) * pw + amount) * c..][..w * c].copy_from_slice(src);
    }
    out
}

/// Remove `amount` pixels from every side of an `h x w x c` buffer.
pub(crate) fn crop<T: Scalar>(input: &[T], h: usize, w: usize, c: usize, amount: usize) -> Vec<T> {
    let (ch, cw) = (h - 2 * amount, w - 2 * amount);
    let mut out = Vec::with_capacity(ch * cw * c);
    for y in 0..ch {
        out.extend_from_slice(&input[((y + amount) * w + amount) * c..][..cw * c]);
    }
    out
}

/// Rearrange a `gh x gw x (b*b*l)` grid of flattened blocks into a
/// `(gh*b) x (gw*b) x l` image. Each block vector is laid out in
/// (row, column, channel) order.
pub(crate) fn blocks_to_image<T: Scalar>(
    grid: &[T],
    gh: usize,
    gw: usize,
    b: usize,
    l: usize,
) -> Vec<T> {
    let width = gw * b;
    let mut out = vec![T::zero(); gh * b * width * l];
    for by in 0..gh {
        for bx in 0..gw {
            let block = &grid[(by * gw + bx) * b * b * l..][..b * b * l];
            for r in 0..b {
                let dst = ((by * b + r) * width + bx * b) * l;
                out[dst..dst + b * l].copy_from_slice(&block[r * b * l..][..b * l]);
            }
        }
    }
    out
}

/// Inverse of [`blocks_to_image`].
pub(crate) fn image_to_blocks<T: Scalar>(
    image: &[T],
    gh: usize,
    gw: usize,
    b: usize,
    l: usize,
) -> Vec<T> {
    let width = gw * b;
    let mut out = vec![T::zero(); gh * gw * b * b * l];
    for by in 0..gh {
        for bx in 0..gw {
            let block = &mut out[(by * gw + bx) * b * b * l..][..b * b * l];
            for r in 0..b {
                let src = ((by * b + r) * width + bx * b) * l;
                block[r * b * l..][..b * l].copy_from_slice(&image[src..src + b * l]);
            }
        }
    }
    out
}
