//! Layer definitions with exact forward and reverse-mode backward rules.
//!
//! Every layer works on a batch-leading tensor: the first axis indexes
//! samples, the remaining axes are the per-sample shape. Convolutions are
//! lowered to matrix products via im2col, which is the simplest correct
//! path at the sizes this crate targets; the batch dimension is processed
//! in parallel with each sample's arithmetic kept in a fixed order, so
//! results do not depend on thread count.

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::{gemm_nn_acc, gemm_nt_acc, Tensor};
use rayon::prelude::*;

/// Structural description of a single layer.
#[derive(Clone, Debug, PartialEq)]
pub enum LayerSpec {
    Dense { in_features: usize, out_features: usize, bias: bool },
    /// Fully connected layer whose weight matrix is elementwise gated by a
    /// fixed binary mask of shape `[out_features, in_features]`. Masked
    /// entries are exactly zero at all times.
    MaskedDense { in_features: usize, out_features: usize, mask: Tensor },
    Conv2d { in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize },
    ConvTranspose2d { in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize },
    Relu,
    LeakyRelu { slope: f64 },
    Sigmoid,
    /// Change the per-sample shape without touching values.
    Reshape { shape: Vec<usize> },
}

/// Gradients for one layer's parameters.
#[derive(Clone, Debug)]
pub struct LayerGrads {
    pub weights: Option<Tensor>,
    pub bias: Option<Tensor>,
}

/// A layer spec together with its parameters.
#[derive(Clone, Debug)]
pub struct Layer {
    pub(crate) spec: LayerSpec,
    pub(crate) weights: Option<Tensor>,
    pub(crate) bias: Option<Tensor>,
}

pub(crate) fn conv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    let padded = input + 2 * padding;
    if padded < kernel || stride == 0 {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

pub(crate) fn tconv_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if input == 0 || stride == 0 {
        return None;
    }
    ((input - 1) * stride + kernel).checked_sub(2 * padding).filter(|&d| d >= 1)
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::MaskedDense { .. } => "masked_dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::ConvTranspose2d { .. } => "conv_transpose2d",
            LayerSpec::Relu => "relu",
            LayerSpec::LeakyRelu { .. } => "leaky_relu",
            LayerSpec::Sigmoid => "sigmoid",
            LayerSpec::Reshape { .. } => "reshape",
        }
    }

    /// Per-sample output shape for a given per-sample input shape.
    pub fn out_shape(&self, in_shape: &[usize]) -> Result<Vec<usize>> {
        match self {
            LayerSpec::Dense { in_features, out_features, .. } => {
                if in_shape != [*in_features] {
                    return Err(Error::shape(format!(
                        "dense expects input shape [{in_features}], got {in_shape:?}"
                    )));
                }
                Ok(vec![*out_features])
            }
            LayerSpec::MaskedDense { in_features, out_features, mask } => {
                if in_shape != [*in_features] {
                    return Err(Error::shape(format!(
                        "masked_dense expects input shape [{in_features}], got {in_shape:?}"
                    )));
                }
                if mask.shape() != [*out_features, *in_features] {
                    return Err(Error::shape(format!(
                        "mask shape {:?} does not match weight shape [{out_features}, {in_features}]",
                        mask.shape()
                    )));
                }
                Ok(vec![*out_features])
            }
            LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, padding } => {
                let [c, h, w] = three_d(in_shape, "conv2d")?;
                if c != *in_channels {
                    return Err(Error::shape(format!(
                        "conv2d expects {in_channels} input channels, got {c}"
                    )));
                }
                let oh = conv_out_dim(h, *kernel, *stride, *padding);
                let ow = conv_out_dim(w, *kernel, *stride, *padding);
                match (oh, ow) {
                    (Some(oh), Some(ow)) if oh >= 1 && ow >= 1 => Ok(vec![*out_channels, oh, ow]),
                    _ => Err(Error::shape(format!(
                        "conv2d output would be empty for input {h}x{w}, kernel {kernel}, stride {stride}, padding {padding}"
                    ))),
                }
            }
            LayerSpec::ConvTranspose2d { in_channels, out_channels, kernel, stride, padding } => {
                let [c, h, w] = three_d(in_shape, "conv_transpose2d")?;
                if c != *in_channels {
                    return Err(Error::shape(format!(
                        "conv_transpose2d expects {in_channels} input channels, got {c}"
                    )));
                }
                let oh = tconv_out_dim(h, *kernel, *stride, *padding);
                let ow = tconv_out_dim(w, *kernel, *stride, *padding);
                match (oh, ow) {
                    (Some(oh), Some(ow)) => Ok(vec![*out_channels, oh, ow]),
                    _ => Err(Error::shape(format!(
                        "conv_transpose2d output would be empty for input {h}x{w}, kernel {kernel}, stride {stride}, padding {padding}"
                    ))),
                }
            }
            LayerSpec::Relu | LayerSpec::LeakyRelu { .. } | LayerSpec::Sigmoid => Ok(in_shape.to_vec()),
            LayerSpec::Reshape { shape } => {
                let in_elems: usize = in_shape.iter().product();
                let out_elems: usize = shape.iter().product();
                if in_elems != out_elems {
                    return Err(Error::shape(format!(
                        "reshape target {shape:?} has {out_elems} elements but input {in_shape:?} has {in_elems}"
                    )));
                }
                Ok(shape.clone())
            }
        }
    }

    /// Trainable scalar count; masked entries do not count.
    pub fn param_count(&self) -> usize {
        match self {
            LayerSpec::Dense { in_features, out_features, bias } => {
                in_features * out_features + if *bias { *out_features } else { 0 }
            }
            LayerSpec::MaskedDense { out_features, mask, .. } => {
                let nnz = mask.data().iter().filter(|&&v| v != 0.0).count();
                nnz + out_features
            }
            LayerSpec::Conv2d { in_channels, out_channels, kernel, .. } => {
                out_channels * in_channels * kernel * kernel + out_channels
            }
            LayerSpec::ConvTranspose2d { in_channels, out_channels, kernel, .. } => {
                in_channels * out_channels * kernel * kernel + out_channels
            }
            _ => 0,
        }
    }
}

fn three_d(shape: &[usize], what: &str) -> Result<[usize; 3]> {
    match shape {
        [c, h, w] => Ok([*c, *h, *w]),
        other => Err(Error::shape(format!(
            "{what} expects a [channels, height, width] input, got {other:?}"
        ))),
    }
}

impl Layer {
    /// Build a layer, drawing initial parameters uniformly from
    /// `+-sqrt(1/fan_in)` (weights and biases alike).
    pub fn init(spec: LayerSpec, rng: &mut Rng) -> Result<Layer> {
        let (weights, bias) = match &spec {
            LayerSpec::Dense { in_features, out_features, bias } => {
                let bound = (1.0 / *in_features as f64).sqrt();
                let w = rng.sample_uniform(&[*out_features, *in_features], -bound, bound);
                let b = bias.then(|| rng.sample_uniform(&[*out_features], -bound, bound));
                (Some(w), b)
            }
            LayerSpec::MaskedDense { in_features, out_features, mask } => {
                if mask.data().iter().any(|&v| v != 0.0 && v != 1.0) {
                    return Err(Error::invalid(
                        "masked_dense mask entries must be exactly 0 or 1".to_string(),
                    ));
                }
                let bound = (1.0 / *in_features as f64).sqrt();
                let mut w = rng.sample_uniform(&[*out_features, *in_features], -bound, bound);
                for (wv, mv) in w.data_mut().iter_mut().zip(mask.data()) {
                    *wv *= mv;
                }
                let b = rng.sample_uniform(&[*out_features], -bound, bound);
                (Some(w), Some(b))
            }
            LayerSpec::Conv2d { in_channels, out_channels, kernel, .. } => {
                let fan_in = in_channels * kernel * kernel;
                let bound = (1.0 / fan_in as f64).sqrt();
                let w = rng.sample_uniform(&[*out_channels, *in_channels, *kernel, *kernel], -bound, bound);
                let b = rng.sample_uniform(&[*out_channels], -bound, bound);
                (Some(w), Some(b))
            }
            LayerSpec::ConvTranspose2d { in_channels, out_channels, kernel, .. } => {
                let fan_in = in_channels * kernel * kernel;
                let bound = (1.0 / fan_in as f64).sqrt();
                let w = rng.sample_uniform(&[*in_channels, *out_channels, *kernel, *kernel], -bound, bound);
                let b = rng.sample_uniform(&[*out_channels], -bound, bound);
                (Some(w), Some(b))
            }
            _ => (None, None),
        };
        Ok(Layer { spec, weights, bias })
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn weights(&self) -> Option<&Tensor> {
        self.weights.as_ref()
    }

    pub fn bias(&self) -> Option<&Tensor> {
        self.bias.as_ref()
    }

    /// Re-zero masked weight entries; exact, not approximate.
    pub(crate) fn apply_mask(&mut self) {
        if let LayerSpec::MaskedDense { mask, .. } = &self.spec {
            let w = self.weights.as_mut().expect("masked_dense has weights");
            for (wv, mv) in w.data_mut().iter_mut().zip(mask.data()) {
                if *mv == 0.0 {
                    *wv = 0.0;
                }
            }
        }
    }

    /// Batch forward; `x` has shape `[batch, ...in_shape]`.
    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        match &self.spec {
            LayerSpec::Dense { .. } | LayerSpec::MaskedDense { .. } => {
                let w = self.weights.as_ref().unwrap();
                let mut y = x.matmul_nt(w)?;
                if let Some(b) = &self.bias {
                    let out = b.len();
                    for row in y.data_mut().chunks_mut(out) {
                        for (v, bv) in row.iter_mut().zip(b.data()) {
                            *v += bv;
                        }
                    }
                }
                Ok(y)
            }
            LayerSpec::Conv2d { .. } => self.conv2d_forward(x),
            LayerSpec::ConvTranspose2d { .. } => self.tconv2d_forward(x),
            LayerSpec::Relu => Ok(x.map(|v| v.max(0.0))),
            LayerSpec::LeakyRelu { slope } => {
                let s = *slope;
                Ok(x.map(move |v| if v > 0.0 { v } else { s * v }))
            }
            LayerSpec::Sigmoid => Ok(x.map(sigmoid)),
            LayerSpec::Reshape { shape } => {
                let mut full = vec![x.shape()[0]];
                full.extend_from_slice(shape);
                x.reshaped(&full)
            }
        }
    }

    /// Reverse-mode step: given the cached layer input and the gradient of
    /// the loss with respect to this layer's output, produce the parameter
    /// gradients (when requested) and the gradient with respect to the
    /// layer input.
    pub fn backward(
        &self,
        x: &Tensor,
        dy: &Tensor,
        need_param_grads: bool,
    ) -> Result<(Option<LayerGrads>, Tensor)> {
        match &self.spec {
            LayerSpec::Dense { .. } | LayerSpec::MaskedDense { .. } => {
                let w = self.weights.as_ref().unwrap();
                let dx = dy.matmul(w)?;
                if !need_param_grads {
                    return Ok((None, dx));
                }
                let mut dw = dy.transposed()?.matmul(x)?;
                if let LayerSpec::MaskedDense { mask, .. } = &self.spec {
                    for (g, m) in dw.data_mut().iter_mut().zip(mask.data()) {
                        *g *= m;
                    }
                }
                let db = self.bias.as_ref().map(|b| {
                    let out = b.len();
                    let mut db = Tensor::zeros(&[out]);
                    for row in dy.data().chunks(out) {
                        for (g, v) in db.data_mut().iter_mut().zip(row) {
                            *g += v;
                        }
                    }
                    db
                });
                Ok((Some(LayerGrads { weights: Some(dw), bias: db }), dx))
            }
            LayerSpec::Conv2d { .. } => self.conv2d_backward(x, dy, need_param_grads),
            LayerSpec::ConvTranspose2d { .. } => self.tconv2d_backward(x, dy, need_param_grads),
            LayerSpec::Relu => {
                let mut dx = dy.clone();
                for (g, &v) in dx.data_mut().iter_mut().zip(x.data()) {
                    if v <= 0.0 {
                        *g = 0.0;
                    }
                }
                Ok((None, dx))
            }
            LayerSpec::LeakyRelu { slope } => {
                let mut dx = dy.clone();
                for (g, &v) in dx.data_mut().iter_mut().zip(x.data()) {
                    if v <= 0.0 {
                        *g *= slope;
                    }
                }
                Ok((None, dx))
            }
            LayerSpec::Sigmoid => {
                let mut dx = dy.clone();
                for (g, &v) in dx.data_mut().iter_mut().zip(x.data()) {
                    let y = sigmoid(v);
                    *g *= y * (1.0 - y);
                }
                Ok((None, dx))
            }
            LayerSpec::Reshape { .. } => Ok((None, dy.reshaped(x.shape())?)),
        }
    }

    fn conv2d_forward(&self, x: &Tensor) -> Result<Tensor> {
        let LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, padding } = &self.spec else {
            unreachable!()
        };
        let (in_channels, out_channels, kernel, stride, padding) =
            (*in_channels, *out_channels, *kernel, *stride, *padding);
        let (batch, h, w) = batch_hw(x, in_channels)?;
        let oh = conv_out_dim(h, kernel, stride, padding).unwrap();
        let ow = conv_out_dim(w, kernel, stride, padding).unwrap();
        let ck = in_channels * kernel * kernel;
        let len = oh * ow;
        let kmat = self.weights.as_ref().unwrap().data();
        let bias = self.bias.as_ref().unwrap().data();

        let geom = ColGeom { channels: in_channels, h, w, kernel, stride, padding, oh, ow };
        let x_stride = in_channels * h * w;
        let y_stride = out_channels * len;
        let mut y = Tensor::zeros(&[batch, out_channels, oh, ow]);
        let xdata = x.data();
        y.data_mut().par_chunks_mut(y_stride).enumerate().for_each(|(b, yb)| {
            let mut cols = vec![0.0; ck * len];
            im2col(&xdata[b * x_stride..(b + 1) * x_stride], &geom, &mut cols);
            gemm_nn_acc(kmat, &cols, yb, out_channels, ck, len);
            for (co, row) in yb.chunks_mut(len).enumerate() {
                for v in row.iter_mut() {
                    *v += bias[co];
                }
            }
        });
        Ok(y)
    }

    fn conv2d_backward(
        &self,
        x: &Tensor,
        dy: &Tensor,
        need_param_grads: bool,
    ) -> Result<(Option<LayerGrads>, Tensor)> {
        let LayerSpec::Conv2d { in_channels, out_channels, kernel, stride, padding } = &self.spec else {
            unreachable!()
        };
        let (in_channels, out_channels, kernel, stride, padding) =
            (*in_channels, *out_channels, *kernel, *stride, *padding);
        let (batch, h, w) = batch_hw(x, in_channels)?;
        let oh = conv_out_dim(h, kernel, stride, padding).unwrap();
        let ow = conv_out_dim(w, kernel, stride, padding).unwrap();
        let ck = in_channels * kernel * kernel;
        let len = oh * ow;
        let kmat = self.weights.as_ref().unwrap();
        let kmat2d = kmat.reshaped(&[out_channels, ck])?;
        let kt = kmat2d.transposed()?;
        let geom = ColGeom { channels: in_channels, h, w, kernel, stride, padding, oh, ow };

        let x_stride = in_channels * h * w;
        let y_stride = out_channels * len;
        let xdata = x.data();
        let dydata = dy.data();

        let mut dx = Tensor::zeros(x.shape());
        let mut per_sample_dw: Vec<Vec<f64>> = Vec::new();
        if need_param_grads {
            per_sample_dw = vec![vec![0.0; out_channels * ck]; batch];
            let dw_refs: Vec<&mut Vec<f64>> = per_sample_dw.iter_mut().collect();
            dx.data_mut()
                .par_chunks_mut(x_stride)
                .zip(dw_refs)
                .enumerate()
                .for_each(|(b, (dxb, dwb))| {
                    let dyb = &dydata[b * y_stride..(b + 1) * y_stride];
                    let mut cols = vec![0.0; ck * len];
                    im2col(&xdata[b * x_stride..(b + 1) * x_stride], &geom, &mut cols);
                    gemm_nt_acc(dyb, &cols, dwb, out_channels, len, ck);
                    let mut dcols = vec![0.0; ck * len];
                    gemm_nn_acc(kt.data(), dyb, &mut dcols, ck, out_channels, len);
                    col2im_acc(&dcols, &geom, dxb);
                });
        } else {
            dx.data_mut().par_chunks_mut(x_stride).enumerate().for_each(|(b, dxb)| {
                let dyb = &dydata[b * y_stride..(b + 1) * y_stride];
                let mut dcols = vec![0.0; ck * len];
                gemm_nn_acc(kt.data(), dyb, &mut dcols, ck, out_channels, len);
                col2im_acc(&dcols, &geom, dxb);
            });
        }

        if !need_param_grads {
            return Ok((None, dx));
        }
        let mut dw = Tensor::zeros(&[out_channels, in_channels, kernel, kernel]);
        for dwb in &per_sample_dw {
            for (acc, v) in dw.data_mut().iter_mut().zip(dwb) {
                *acc += v;
            }
        }
        let mut db = Tensor::zeros(&[out_channels]);
        for b in 0..batch {
            let dyb = &dydata[b * y_stride..(b + 1) * y_stride];
            for (co, row) in dyb.chunks(len).enumerate() {
                db.data_mut()[co] += row.iter().sum::<f64>();
            }
        }
        Ok((Some(LayerGrads { weights: Some(dw), bias: Some(db) }), dx))
    }

    fn tconv2d_forward(&self, x: &Tensor) -> Result<Tensor> {
        let LayerSpec::ConvTranspose2d { in_channels, out_channels, kernel, stride, padding } = &self.spec
        else {
            unreachable!()
        };
        let (in_channels, out_channels, kernel, stride, padding) =
            (*in_channels, *out_channels, *kernel, *stride, *padding);
        let (batch, h, w) = batch_hw(x, in_channels)?;
        let oh = tconv_out_dim(h, kernel, stride, padding).unwrap();
        let ow = tconv_out_dim(w, kernel, stride, padding).unwrap();
        // Geometry of the adjoint convolution: it maps [out_channels, oh, ow]
        // down to [in_channels, h, w].
        let ck = out_channels * kernel * kernel;
        let len = h * w;
        let kmat = self.weights.as_ref().unwrap().reshaped(&[in_channels, ck])?;
        let kt = kmat.transposed()?;
        let bias = self.bias.as_ref().unwrap().data();
        let geom = ColGeom { channels: out_channels, h: oh, w: ow, kernel, stride, padding, oh: h, ow: w };

        let x_stride = in_channels * len;
        let y_stride = out_channels * oh * ow;
        let xdata = x.data();
        let mut y = Tensor::zeros(&[batch, out_channels, oh, ow]);
        y.data_mut().par_chunks_mut(y_stride).enumerate().for_each(|(b, yb)| {
            let xb = &xdata[b * x_stride..(b + 1) * x_stride];
            let mut cols = vec![0.0; ck * len];
            gemm_nn_acc(kt.data(), xb, &mut cols, ck, in_channels, len);
            col2im_acc(&cols, &geom, yb);
            let spatial = oh * ow;
            for (co, row) in yb.chunks_mut(spatial).enumerate() {
                for v in row.iter_mut() {
                    *v += bias[co];
                }
            }
        });
        Ok(y)
    }

    fn tconv2d_backward(
        &self,
        x: &Tensor,
        dy: &Tensor,
        need_param_grads: bool,
    ) -> Result<(Option<LayerGrads>, Tensor)> {
        let LayerSpec::ConvTranspose2d { in_channels, out_channels, kernel, stride, padding } = &self.spec
        else {
            unreachable!()
        };
        let (in_channels, out_channels, kernel, stride, padding) =
            (*in_channels, *out_channels, *kernel, *stride, *padding);
        let (batch, h, w) = batch_hw(x, in_channels)?;
        let oh = tconv_out_dim(h, kernel, stride, padding).unwrap();
        let ow = tconv_out_dim(w, kernel, stride, padding).unwrap();
        let ck = out_channels * kernel * kernel;
        let len = h * w;
        let kmat = self.weights.as_ref().unwrap().reshaped(&[in_channels, ck])?;
        let geom = ColGeom { channels: out_channels, h: oh, w: ow, kernel, stride, padding, oh: h, ow: w };

        let x_stride = in_channels * len;
        let y_stride = out_channels * oh * ow;
        let xdata = x.data();
        let dydata = dy.data();

        let mut dx = Tensor::zeros(x.shape());
        let mut per_sample_dw: Vec<Vec<f64>> = Vec::new();
        if need_param_grads {
            per_sample_dw = vec![vec![0.0; in_channels * ck]; batch];
            let dw_refs: Vec<&mut Vec<f64>> = per_sample_dw.iter_mut().collect();
            dx.data_mut()
                .par_chunks_mut(x_stride)
                .zip(dw_refs)
                .enumerate()
                .for_each(|(b, (dxb, dwb))| {
                    let dyb = &dydata[b * y_stride..(b + 1) * y_stride];
                    let mut cols = vec![0.0; ck * len];
                    im2col(dyb, &geom, &mut cols);
                    gemm_nn_acc(kmat.data(), &cols, dxb, in_channels, ck, len);
                    let xb = &xdata[b * x_stride..(b + 1) * x_stride];
                    gemm_nt_acc(xb, &cols, dwb, in_channels, len, ck);
                });
        } else {
            dx.data_mut().par_chunks_mut(x_stride).enumerate().for_each(|(b, dxb)| {
                let dyb = &dydata[b * y_stride..(b + 1) * y_stride];
                let mut cols = vec![0.0; ck * len];
                im2col(dyb, &geom, &mut cols);
                gemm_nn_acc(kmat.data(), &cols, dxb, in_channels, ck, len);
            });
        }

        if !need_param_grads {
            return Ok((None, dx));
        }
        let mut dw = Tensor::zeros(&[in_channels, out_channels, kernel, kernel]);
        for dwb in &per_sample_dw {
            for (acc, v) in dw.data_mut().iter_mut().zip(dwb) {
                *acc += v;
            }
        }
        let spatial = oh * ow;
        let mut db = Tensor::zeros(&[out_channels]);
        for b in 0..batch {
            let dyb = &dydata[b * y_stride..(b + 1) * y_stride];
            for (co, row) in dyb.chunks(spatial).enumerate() {
                db.data_mut()[co] += row.iter().sum::<f64>();
            }
        }
        Ok((Some(LayerGrads { weights: Some(dw), bias: Some(db) }), dx))
    }
}

pub(crate) fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

fn batch_hw(x: &Tensor, channels: usize) -> Result<(usize, usize, usize)> {
    match x.shape() {
        [b, c, h, w] if *c == channels => Ok((*b, *h, *w)),
        other => Err(Error::shape(format!(
            "expected batch of [{channels}, H, W] images, got {other:?}"
        ))),
    }
}

/// Geometry of an im2col lowering: `channels x h x w` input, patches of
/// `kernel x kernel` taken with `stride` and zero `padding`, producing
/// `oh x ow` patch positions.
struct ColGeom {
    channels: usize,
    h: usize,
    w: usize,
    kernel: usize,
    stride: usize,
    padding: usize,
    oh: usize,
    ow: usize,
}

/// cols[(c*k*k + ki*k + kj), (oy*ow + ox)] = x[c, oy*stride - pad + ki, ox*stride - pad + kj]
/// with zero padding outside the image.
fn im2col(x: &[f64], g: &ColGeom, cols: &mut [f64]) {
    let len = g.oh * g.ow;
    for c in 0..g.channels {
        let img = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = &mut cols[(c * g.kernel * g.kernel + ki * g.kernel + kj) * len..][..len];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        for v in &mut row[oy * g.ow..(oy + 1) * g.ow] {
                            *v = 0.0;
                        }
                        continue;
                    }
                    let iy = iy as usize;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        row[oy * g.ow + ox] = if ix < 0 || ix >= g.w as isize {
                            0.0
                        } else {
                            img[iy * g.w + ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatter-add columns back into the image.
fn col2im_acc(cols: &[f64], g: &ColGeom, x: &mut [f64]) {
    let len = g.oh * g.ow;
    for c in 0..g.channels {
        let img = &mut x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.kernel {
            for kj in 0..g.kernel {
                let row = &cols[(c * g.kernel * g.kernel + ki * g.kernel + kj) * len..][..len];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + ki) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let iy = iy as usize;
                    for ox in 0..g.ow {
                        let ix = (ox * g.stride + kj) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.w as isize {
                            img[iy * g.w + ix as usize] += row[oy * g.ow + ox];
                        }
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_output_dims_match_strided_formula() {
        // 28x28, kernel 4, stride 2, padding 1 -> 14x14.
        assert_eq!(conv_out_dim(28, 4, 2, 1), Some(14));
        // and the transpose maps back.
        assert_eq!(tconv_out_dim(14, 4, 2, 1), Some(28));
        assert_eq!(tconv_out_dim(7, 4, 2, 1), Some(14));
    }

    #[test]
    fn degenerate_conv_geometry_is_rejected() {
        let spec = LayerSpec::Conv2d { in_channels: 1, out_channels: 1, kernel: 5, stride: 1, padding: 0 };
        assert!(spec.out_shape(&[1, 3, 3]).is_err());
    }

    #[test]
    fn dense_identity_forwards_input() {
        let spec = LayerSpec::Dense { in_features: 3, out_features: 3, bias: true };
        let mut rng = Rng::new(0);
        let mut layer = Layer::init(spec, &mut rng).unwrap();
        layer.weights = Some(Tensor::eye(3));
        layer.bias = Some(Tensor::zeros(&[3]));
        let x = Tensor::from_rows(&[vec![1.0, -2.0, 0.5]]).unwrap();
        let y = layer.forward(&x).unwrap();
        assert_eq!(y.data(), x.data());
        // and gradients pass straight through
        let dy = Tensor::from_rows(&[vec![0.3, 0.1, -0.7]]).unwrap();
        let (_, dx) = layer.backward(&x, &dy, true).unwrap();
        assert_eq!(dx.data(), dy.data());
    }

    #[test]
    fn relu_clamps_and_gates() {
        let layer = Layer { spec: LayerSpec::Relu, weights: None, bias: None };
        let x = Tensor::from_vec(&[1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let y = layer.forward(&x).unwrap();
        assert_eq!(y.data(), &[0.0, 0.0, 2.0]);
        let dy = Tensor::from_vec(&[1, 3], vec![1.0, 1.0, 1.0]).unwrap();
        let (_, dx) = layer.backward(&x, &dy, false).unwrap();
        assert_eq!(dx.data(), &[0.0, 0.0, 1.0]);
    }

    #[test]
    fn conv2d_table_geometry() {
        // kernel 4, stride 2, padding 1 on 28x28 gives 14x14.
        let spec = LayerSpec::Conv2d { in_channels: 1, out_channels: 64, kernel: 4, stride: 2, padding: 1 };
        assert_eq!(spec.out_shape(&[1, 28, 28]).unwrap(), vec![64, 14, 14]);
        let mut rng = Rng::new(1);
        let layer = Layer::init(spec, &mut rng).unwrap();
        let x = rng.sample_normal(&[2, 1, 28, 28], 0.0, 1.0);
        let y = layer.forward(&x).unwrap();
        assert_eq!(y.shape(), &[2, 64, 14, 14]);
    }

    #[test]
    fn masked_dense_requires_binary_mask() {
        let mask = Tensor::from_rows(&[vec![0.5, 1.0]]).unwrap();
        let spec = LayerSpec::MaskedDense { in_features: 2, out_features: 1, mask };
        let mut rng = Rng::new(2);
        assert!(Layer::init(spec, &mut rng).is_err());
    }

    #[test]
    fn masked_dense_zeroes_masked_weights() {
        let mask = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let spec = LayerSpec::MaskedDense { in_features: 2, out_features: 2, mask };
        let mut rng = Rng::new(3);
        let layer = Layer::init(spec, &mut rng).unwrap();
        let w = layer.weights().unwrap();
        assert_eq!(w.at(&[0, 1]), 0.0);
        assert_eq!(w.at(&[1, 0]), 0.0);
        assert_ne!(w.at(&[0, 0]), 0.0);
    }

    #[test]
    fn conv_and_transpose_are_adjoint() {
        // <conv(x), y> == <x, convT(y)> for shared weights and zero bias.
        let mut rng = Rng::new(7);
        // Geometries where (in + 2p - k) divides the stride exactly, so the
        // transposed layer maps back onto the same grid.
        for &(cin, cout, k, s, p, h, w) in &[
            (2usize, 3usize, 3usize, 1usize, 0usize, 5usize, 5usize),
            (1, 2, 4, 2, 1, 8, 8),
            (3, 1, 2, 2, 0, 6, 4),
            (2, 2, 3, 3, 1, 7, 7),
        ] {
            let conv_spec = LayerSpec::Conv2d { in_channels: cin, out_channels: cout, kernel: k, stride: s, padding: p };
            let oh = conv_out_dim(h, k, s, p).unwrap();
            let ow = conv_out_dim(w, k, s, p).unwrap();
            let mut conv = Layer::init(conv_spec, &mut rng).unwrap();
            conv.bias = Some(Tensor::zeros(&[cout]));
            // The transpose layer maps cout -> cin and shares the weight buffer.
            let tspec = LayerSpec::ConvTranspose2d { in_channels: cout, out_channels: cin, kernel: k, stride: s, padding: p };
            let mut rng2 = Rng::new(8);
            let mut tconv = Layer::init(tspec, &mut rng2).unwrap();
            tconv.weights = conv.weights.clone();
            tconv.bias = Some(Tensor::zeros(&[cin]));

            let x = rng.sample_normal(&[1, cin, h, w], 0.0, 1.0);
            let y = rng.sample_normal(&[1, cout, oh, ow], 0.0, 1.0);
            let lhs = conv.forward(&x).unwrap().dot(&y);
            let rhs = x.dot(&tconv.forward(&y).unwrap());
            assert!(
                (lhs - rhs).abs() < 1e-10,
                "adjoint identity violated for ({cin},{cout},{k},{s},{p}): {lhs} vs {rhs}"
            );
        }
    }
}
