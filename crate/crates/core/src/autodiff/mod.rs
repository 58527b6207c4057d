//! Tape-based reverse-mode differentiation over the handful of operators the
//! transmission pipeline needs.
//!
//! A [`Graph`] records every operation in evaluation order. Parameters are
//! borrowed from a [`ParameterStore`] rather than copied onto the tape, so a
//! graph is cheap to build per image and many graphs can share one store.
//! [`Graph::backward`] replays the tape in reverse and returns the gradient
//! of a scalar output with respect to every node that depends on a parameter.

mod adam;
mod gradcheck;
pub(crate) mod kernels;
mod params;

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

pub use self::adam::{AdamConfig, AdamState};
pub use self::gradcheck::{central_difference, grad_check, GradCheckReport};
pub use self::params::{ParamGrads, Parameter, ParameterStore};

use self::kernels::ConvGeom;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node of a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op<T> {
    Constant,
    Param(usize),
    Conv2d {
        input: Var,
        filters: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    ConvTranspose2d {
        input: Var,
        filters: Var,
        geom: ConvGeom,
    },
    Pad {
        input: Var,
        amount: usize,
    },
    Crop {
        input: Var,
        amount: usize,
    },
    Prelu {
        input: Var,
        slope: Var,
    },
    Relu {
        input: Var,
    },
    AddBias {
        input: Var,
        bias: Var,
    },
    AddConst {
        input: Var,
    },
    PowerNormalize {
        input: Var,
        gain: T,
        norm: T,
    },
    BlocksToImage {
        input: Var,
        block: usize,
        channels: usize,
    },
    Reshape {
        input: Var,
    },
    Mse {
        input: Var,
        target: Tensor<T>,
    },
    Dot {
        input: Var,
        weights: Tensor<T>,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Option<Tensor<T>>,
    op: Op<T>,
    requires_grad: bool,
}

pub struct Graph<'p, T: Scalar> {
    params: &'p ParameterStore<T>,
    nodes: Vec<Node<T>>,
}

/// Result of [`Graph::backward`].
#[derive(Debug)]
pub struct Gradients<T> {
    nodes: Vec<Option<Tensor<T>>>,
    params: ParamGrads<T>,
}

impl<T: Scalar> Gradients<T> {
    pub fn wrt(&self, var: Var) -> Option<&Tensor<T>> {
        self.nodes[var.0].as_ref()
    }

    pub fn params(&self) -> &ParamGrads<T> {
        &self.params
    }

    pub fn into_params(self) -> ParamGrads<T> {
        self.params
    }
}

impl<'p, T: Scalar> Graph<'p, T> {
    pub fn new(params: &'p ParameterStore<T>) -> Self {
        Graph {
            params,
            nodes: Vec::new(),
        }
    }

    pub fn params(&self) -> &'p ParameterStore<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, var: Var) -> &Tensor<T> {
        let node = &self.nodes[var.0];
        match node.op {
            Op::Param(i) => &self.params.at(i).value,
            _ => node
                .value
                .as_ref()
                .expect("non-parameter node owns its value"),
        }
    }

    fn push(&mut self, value: Option<Tensor<T>>, op: Op<T>, inputs: &[Var]) -> Var {
        let requires_grad = match op {
            Op::Param(_) => true,
            Op::Constant => false,
            _ => inputs.iter().any(|v| self.nodes[v.0].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn needs(&self, var: Var) -> bool {
        self.nodes[var.0].requires_grad
    }

    /// Constant leaf: receives no gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Some(value), Op::Constant, &[])
    }

    /// Leaf bound to a named entry of the parameter store.
    pub fn param(&mut self, name: &str) -> Result<Var> {
        let index = self
            .params
            .index_of(name)
            .ok_or_else(|| Error::UnknownParameter(name.into()))?;
        Ok(self.push(None, Op::Param(index), &[]))
    }

    /// Valid (unpadded) convolution. `filters` is `[k, k, cin, cout]`.
    pub fn conv2d(
        &mut self,
        input: Var,
        filters: Var,
        bias: Option<Var>,
        stride: usize,
    ) -> Result<Var> {
        let (h, w, cin) = self.value(input).hwc()?;
        let geom = conv_geom("conv2d", h, w, cin, self.value(filters).shape(), stride)?;
        if h < geom.k || w < geom.k {
            return Err(Error::shape(
                "conv2d",
                "height/width",
                format!("input {h}x{w} smaller than kernel {}", geom.k),
            ));
        }
        if (h - geom.k) % stride != 0 || (w - geom.k) % stride != 0 {
            return Err(Error::shape(
                "conv2d",
                "stride",
                format!(
                    "({h}-{k}) and ({w}-{k}) must be multiples of stride {stride}",
                    k = geom.k
                ),
            ));
        }
        if let Some(b) = bias {
            if self.value(b).len() != geom.cout {
                return Err(Error::shape(
                    "conv2d",
                    "bias",
                    format!(
                        "{} values for {} output channels",
                        self.value(b).len(),
                        geom.cout
                    ),
                ));
            }
        }
        let out = kernels::conv2d_forward(
            self.value(input).data(),
            self.value(filters).data(),
            bias.map(|b| self.value(b).data()),
            geom,
        );
        let value = Tensor::new(&[geom.out_h(), geom.out_w(), geom.cout], out)?;
        let mut inputs = vec![input, filters];
        inputs.extend(bias);
        Ok(self.push(
            Some(value),
            Op::Conv2d {
                input,
                filters,
                bias,
                geom,
            },
            &inputs,
        ))
    }

    /// Transposed convolution, the adjoint of [`conv2d`](Self::conv2d) with the
    /// same filter tensor. `filters` is `[k, k, cout, cin]` where `cin` is the
    /// channel count of `input`; output extent is `(h - 1) * stride + k`.
    pub fn conv2d_transpose(&mut self, input: Var, filters: Var, stride: usize) -> Result<Var> {
        let (h, w, c) = self.value(input).hwc()?;
        let fshape = self.value(filters).shape();
        if stride == 0 {
            return Err(Error::shape(
                "conv2d_transpose",
                "stride",
                "stride must be positive",
            ));
        }
        let (k, cout) = match fshape[..] {
            [k, k2, cout, cin] if k == k2 && cin == c => (k, cout),
            _ => {
                return Err(Error::shape(
                    "conv2d_transpose",
                    "filter channels",
                    format!("filters {fshape:?} do not consume {c} input channels"),
                ))
            }
        };
        let geom = ConvGeom {
            h: (h - 1) * stride + k,
            w: (w - 1) * stride + k,
            cin: cout,
            k,
            cout: c,
            stride,
        };
        let out =
            kernels::conv2d_input_grad(self.value(input).data(), self.value(filters).data(), geom);
        let value = Tensor::new(&[geom.h, geom.w, geom.cin], out)?;
        Ok(self.push(
            Some(value),
            Op::ConvTranspose2d {
                input,
                filters,
                geom,
            },
            &[input, filters],
        ))
    }

    /// Symmetric zero padding of `amount` pixels on each border.
    pub fn pad(&mut self, input: Var, amount: usize) -> Result<Var> {
        let (h, w, c) = self.value(input).hwc()?;
        let out = kernels::pad(self.value(input).data(), h, w, c, amount);
        let value = Tensor::new(&[h + 2 * amount, w + 2 * amount, c], out)?;
        Ok(self.push(Some(value), Op::Pad { input, amount }, &[input]))
    }

    /// Remove `amount` pixels from each border.
    pub fn crop(&mut self, input: Var, amount: usize) -> Result<Var> {
        let (h, w, c) = self.value(input).hwc()?;
        if h <= 2 * amount || w <= 2 * amount {
            return Err(Error::shape(
                "crop",
                "height/width",
                format!("cannot crop {amount} from {h}x{w}"),
            ));
        }
        let out = kernels::crop(self.value(input).data(), h, w, c, amount);
        let value = Tensor::new(&[h - 2 * amount, w - 2 * amount, c], out)?;
        Ok(self.push(Some(value), Op::Crop { input, amount }, &[input]))
    }

    /// `y = x` for `x > 0`, else `a * x`. `slope` holds one value per channel
    /// (last axis) or a single shared value.
    pub fn prelu(&mut self, input: Var, slope: Var) -> Result<Var> {
        let x = self.value(input);
        let a = self.value(slope).data();
        let c = *x.shape().last().unwrap_or(&1);
        if a.len() != 1 && a.len() != c {
            return Err(Error::shape(
                "prelu",
                "slope",
                format!("{} slopes for {c} channels", a.len()),
            ));
        }
        let mut out = x.clone();
        let shared = a.len() == 1;
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            if *v <= T::zero() {
                let ai = if shared { a[0] } else { a[i % c] };
                *v = ai * *v;
            }
        }
        Ok(self.push(Some(out), Op::Prelu { input, slope }, &[input, slope]))
    }

    pub fn relu(&mut self, input: Var) -> Var {
        let out = self
            .value(input)
            .map(|v| if v > T::zero() { v } else { T::zero() });
        self.push(Some(out), Op::Relu { input }, &[input])
    }

    /// Add a per-channel bias to the last axis.
    pub fn add_bias(&mut self, input: Var, bias: Var) -> Result<Var> {
        let x = self.value(input);
        let b = self.value(bias).data();
        let c = *x.shape().last().unwrap_or(&1);
        if b.len() != c {
            return Err(Error::shape(
                "add_bias",
                "channels",
                format!("{} biases for {c} channels", b.len()),
            ));
        }
        let mut out = x.clone();
        for row in out.data_mut().chunks_exact_mut(c) {
            for (v, &bv) in row.iter_mut().zip(b) {
                *v = *v + bv;
            }
        }
        Ok(self.push(Some(out), Op::AddBias { input, bias }, &[input, bias]))
    }

    /// Add a constant tensor. The Jacobian with respect to `input` is the identity.
    pub fn add_const(&mut self, input: Var, addend: &Tensor<T>) -> Result<Var> {
        let x = self.value(input);
        if x.shape() != addend.shape() {
            return Err(Error::shape(
                "add_const",
                "shape",
                format!("{:?} vs {:?}", x.shape(), addend.shape()),
            ));
        }
        let mut out = x.clone();
        out.add_assign(addend);
        Ok(self.push(Some(out), Op::AddConst { input }, &[input]))
    }

    /// `z = gain * v / |v|` over all scalars of `input`.
    pub fn power_normalize(&mut self, input: Var, gain: T) -> Result<Var> {
        let x = self.value(input);
        let norm = x.dot(x).sqrt();
        if !(norm.as_f64() >= 1e-12) {
            return Err(Error::DegenerateLatent {
                norm: norm.as_f64(),
            });
        }
        let factor = gain / norm;
        let out = x.map(|v| v * factor);
        Ok(self.push(
            Some(out),
            Op::PowerNormalize { input, gain, norm },
            &[input],
        ))
    }

    /// Reshape a `gh x gw x (block*block*channels)` grid of flattened blocks
    /// into the `(gh*block) x (gw*block) x channels` image they tile.
    pub fn blocks_to_image(&mut self, input: Var, block: usize, channels: usize) -> Result<Var> {
        let (gh, gw, c) = self.value(input).hwc()?;
        if c != block * block * channels {
            return Err(Error::shape(
                "blocks_to_image",
                "channels",
                format!("{c} channels cannot form {block}x{block}x{channels} blocks"),
            ));
        }
        let out = kernels::blocks_to_image(self.value(input).data(), gh, gw, block, channels);
        let value = Tensor::new(&[gh * block, gw * block, channels], out)?;
        Ok(self.push(
            Some(value),
            Op::BlocksToImage {
                input,
                block,
                channels,
            },
            &[input],
        ))
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape)?;
        Ok(self.push(Some(value), Op::Reshape { input }, &[input]))
    }

    /// Mean squared error against a constant target; a one-element output.
    pub fn mse(&mut self, input: Var, target: &Tensor<T>) -> Result<Var> {
        let x = self.value(input);
        if x.shape() != target.shape() {
            return Err(Error::shape(
                "mse",
                "shape",
                format!("{:?} vs {:?}", x.shape(), target.shape()),
            ));
        }
        let sum = x
            .data()
            .iter()
            .zip(target.data())
            .fold(T::zero(), |acc, (&a, &b)| acc + (a - b) * (a - b));
        let value = Tensor::scalar(sum / T::of(x.len() as f64));
        Ok(self.push(
            Some(value),
            Op::Mse {
                input,
                target: target.clone(),
            },
            &[input],
        ))
    }

    /// Inner product with constant weights; a one-element output.
    pub fn dot(&mut self, input: Var, weights: &Tensor<T>) -> Result<Var> {
        let x = self.value(input);
        if x.len() != weights.len() {
            return Err(Error::shape(
                "dot",
                "length",
                format!("{} vs {}", x.len(), weights.len()),
            ));
        }
        let value = Tensor::scalar(x.dot(weights));
        Ok(self.push(
            Some(value),
            Op::Dot {
                input,
                weights: weights.clone(),
            },
            &[input],
        ))
    }

    /// First node whose value contains NaN or infinity, with the offending
    /// element index.
    pub fn first_non_finite(&self) -> Option<(Var, usize)> {
        (0..self.nodes.len()).find_map(|i| {
            let v = Var(i);
            self.value(v).first_non_finite().map(|e| (v, e))
        })
    }

    /// Describe a node for diagnostics.
    pub fn describe(&self, var: Var) -> alloc::string::String {
        let node = &self.nodes[var.0];
        match node.op {
            Op::Param(i) => format!("parameter `{}`", self.params.at(i).name),
            ref op => format!(
                "node {} ({}) shape {:?}",
                var.0,
                op_name(op),
                self.value(var).shape()
            ),
        }
    }

    pub fn backward(&self, output: Var) -> Gradients<T> {
        self.backward_with_seed(output, T::one())
    }

    /// Reverse sweep seeded with `d output = seed` for every output element.
    pub fn backward_with_seed(&self, output: Var, seed: T) -> Gradients<T> {
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        let mut params = ParamGrads::empty(self.params.len());
        grads[output.0] = Some(Tensor::full(self.value(output).shape(), seed));

        for i in (0..=output.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                grads[i] = Some(g);
                continue;
            }
            self.propagate(i, &g, &mut grads, &mut params);
            grads[i] = Some(g);
        }
        Gradients {
            nodes: grads,
            params,
        }
    }

    fn propagate(
        &self,
        i: usize,
        g: &Tensor<T>,
        grads: &mut [Option<Tensor<T>>],
        params: &mut ParamGrads<T>,
    ) {
        let mut send = |var: Var, t: Tensor<T>| accumulate(&mut grads[var.0], t);
        match &self.nodes[i].op {
            Op::Constant => {}
            Op::Param(p) => accumulate(&mut params.0[*p], g.clone()),
            Op::Conv2d {
                input,
                filters,
                bias,
                geom,
            } => {
                let x = self.value(*input);
                let w = self.value(*filters);
                if self.needs(*input) {
                    let gin = kernels::conv2d_input_grad(g.data(), w.data(), *geom);
                    send(*input, tensor_like(x, gin));
                }
                if self.needs(*filters) {
                    let gw = kernels::conv2d_filter_grad(x.data(), g.data(), *geom);
                    send(*filters, tensor_like(w, gw));
                }
                if let Some(b) = bias {
                    if self.needs(*b) {
                        send(*b, channel_sum(g, geom.cout, self.value(*b)));
                    }
                }
            }
            Op::ConvTranspose2d {
                input,
                filters,
                geom,
            } => {
                let x = self.value(*input);
                let w = self.value(*filters);
                if self.needs(*input) {
                    let gin = kernels::conv2d_forward(g.data(), w.data(), None, *geom);
                    send(*input, tensor_like(x, gin));
                }
                if self.needs(*filters) {
                    let gw = kernels::conv2d_filter_grad(g.data(), x.data(), *geom);
                    send(*filters, tensor_like(w, gw));
                }
            }
            Op::Pad { input, amount } => {
                let (h, w, c) = g.hwc().expect("rank 3");
                let out = kernels::crop(g.data(), h, w, c, *amount);
                send(*input, tensor_like(self.value(*input), out));
            }
            Op::Crop { input, amount } => {
                let (h, w, c) = g.hwc().expect("rank 3");
                let out = kernels::pad(g.data(), h, w, c, *amount);
                send(*input, tensor_like(self.value(*input), out));
            }
            Op::Prelu { input, slope } => {
                let x = self.value(*input);
                let a = self.value(*slope);
                let c = *x.shape().last().unwrap_or(&1);
                let shared = a.len() == 1;
                let mut gx = g.clone();
                let mut ga = Tensor::zeros(a.shape());
                for (idx, (gv, &xv)) in gx.data_mut().iter_mut().zip(x.data()).enumerate() {
                    if xv <= T::zero() {
                        let ch = if shared { 0 } else { idx % c };
                        let slot = &mut ga.data_mut()[ch];
                        *slot = *slot + *gv * xv;
                        *gv = *gv * a.data()[ch];
                    }
                }
                if self.needs(*input) {
                    send(*input, gx);
                }
                if self.needs(*slope) {
                    send(*slope, ga);
                }
            }
            Op::Relu { input } => {
                let x = self.value(*input);
                let mut gx = g.clone();
                for (gv, &xv) in gx.data_mut().iter_mut().zip(x.data()) {
                    if xv <= T::zero() {
                        *gv = T::zero();
                    }
                }
                send(*input, gx);
            }
            Op::AddBias { input, bias } => {
                if self.needs(*input) {
                    send(*input, g.clone());
                }
                if self.needs(*bias) {
                    let b = self.value(*bias);
                    send(*bias, channel_sum(g, b.len(), b));
                }
            }
            Op::AddConst { input } => send(*input, g.clone()),
            Op::PowerNormalize { input, gain, norm } => {
                // dz/dv = (gain / |v|) (I - u u^T) with u = v / |v|
                let v = self.value(*input);
                let inv = T::one() / *norm;
                let proj = v
                    .data()
                    .iter()
                    .zip(g.data())
                    .fold(T::zero(), |acc, (&vv, &gv)| acc + vv * inv * gv);
                let factor = *gain * inv;
                let out = v
                    .data()
                    .iter()
                    .zip(g.data())
                    .map(|(&vv, &gv)| factor * (gv - vv * inv * proj))
                    .collect();
                send(*input, tensor_like(v, out));
            }
            Op::BlocksToImage {
                input,
                block,
                channels,
            } => {
                let x = self.value(*input);
                let (gh, gw, _) = x.hwc().expect("rank 3");
                let out = kernels::image_to_blocks(g.data(), gh, gw, *block, *channels);
                send(*input, tensor_like(x, out));
            }
            Op::Reshape { input } => {
                let x = self.value(*input);
                send(*input, tensor_like(x, g.data().to_vec()));
            }
            Op::Mse { input, target } => {
                let x = self.value(*input);
                let scale = T::of(2.0) * g.data()[0] / T::of(x.len() as f64);
                let out = x
                    .data()
                    .iter()
                    .zip(target.data())
                    .map(|(&a, &b)| scale * (a - b))
                    .collect();
                send(*input, tensor_like(x, out));
            }
            Op::Dot { input, weights } => {
                let x = self.value(*input);
                let s = g.data()[0];
                send(
                    *input,
                    tensor_like(x, weights.data().iter().map(|&w| w * s).collect()),
                );
            }
        }
    }
}

fn op_name<T>(op: &Op<T>) -> &'static str {
    match op {
        Op::Constant => "constant",
        Op::Param(_) => "parameter",
        Op::Conv2d { .. } => "conv2d",
        Op::ConvTranspose2d { .. } => "conv2d_transpose",
        Op::Pad { .. } => "pad",
        Op::Crop { .. } => "crop",
        Op::Prelu { .. } => "prelu",
        Op::Relu { .. } => "relu",
        Op::AddBias { .. } => "add_bias",
        Op::AddConst { .. } => "add_const",
        Op::PowerNormalize { .. } => "power_normalize",
        Op::BlocksToImage { .. } => "blocks_to_image",
        Op::Reshape { .. } => "reshape",
        Op::Mse { .. } => "mse",
        Op::Dot { .. } => "dot",
    }
}

fn conv_geom(
    op: &'static str,
    h: usize,
    w: usize,
    cin: usize,
    fshape: &[usize],
    stride: usize,
) -> Result<ConvGeom> {
    if stride == 0 {
        return Err(Error::shape(op, "stride", "stride must be positive"));
    }
    match fshape[..] {
        [k, k2, fin, cout] if k == k2 && fin == cin => Ok(ConvGeom {
            h,
            w,
            cin,
            k,
            cout,
            stride,
        }),
        [k, k2, ..] if k != k2 => Err(Error::shape(
            op,
            "kernel",
            format!("non-square filters {fshape:?}"),
        )),
        [_, _, fin, _] => Err(Error::shape(
            op,
            "input channels",
            format!("filters expect {fin} channels, input has {cin}"),
        )),
        _ => Err(Error::shape(
            op,
            "filter rank",
            format!("expected [k, k, cin, cout], got {fshape:?}"),
        )),
    }
}

fn tensor_like<T: Scalar>(like: &Tensor<T>, data: Vec<T>) -> Tensor<T> {
    Tensor::new(like.shape(), data).expect("gradient matches value shape")
}

fn channel_sum<T: Scalar>(g: &Tensor<T>, c: usize, like: &Tensor<T>) -> Tensor<T> {
    let mut out = Tensor::zeros(like.shape());
    for row in g.data().chunks_exact(c) {
        for (o, &v) in out.data_mut().iter_mut().zip(row) {
            *o = *o + v;
        }
    }
    out
}

fn accumulate<T: Scalar>(slot: &mut Option<Tensor<T>>, t: Tensor<T>) {
    match slot {
        Some(existing) => existing.add_assign(&t),
        None => *slot = Some(t),
    }
}
