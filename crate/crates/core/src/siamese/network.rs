//! Shared-weight convolutional encoder: layer descriptors, shape chaining,
//! forward pass and reverse-mode gradients, all in f64.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Shape {
    pub channels: u32,
    pub height: u32,
    pub width: u32,
}

impl Shape {
    pub fn new(channels: u32, height: u32, width: u32) -> Self {
        Self { channels, height, width }
    }

    pub fn len(&self) -> usize {
        self.channels as usize * self.height as usize * self.width as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Layer {
    /// Valid (unpadded) convolution with a square kernel.
    Conv { out_channels: u32, kernel: u32, stride: u32 },
    Relu,
    MaxPool { window: u32, stride: u32 },
    /// Fully connected over the flattened input.
    Dense { out: u32 },
}

impl Layer {
    fn output_shape(&self, input: Shape) -> Option<Shape> {
        match *self {
            Layer::Conv { out_channels, kernel, stride } => {
                if out_channels == 0 || kernel == 0 || stride == 0 {
                    return None;
                }
                if kernel > input.height || kernel > input.width {
                    return None;
                }
                Some(Shape::new(
                    out_channels,
                    (input.height - kernel) / stride + 1,
                    (input.width - kernel) / stride + 1,
                ))
            }
            Layer::Relu => Some(input),
            Layer::MaxPool { window, stride } => {
                if window == 0 || stride == 0 || window > input.height || window > input.width {
                    return None;
                }
                Some(Shape::new(
                    input.channels,
                    (input.height - window) / stride + 1,
                    (input.width - window) / stride + 1,
                ))
            }
            Layer::Dense { out } => (out > 0).then_some(Shape::new(out, 1, 1)),
        }
    }

    fn param_count(&self, input: Shape) -> usize {
        match *self {
            Layer::Conv { out_channels, kernel, .. } => {
                let o = out_channels as usize;
                o * input.channels as usize * (kernel * kernel) as usize + o
            }
            Layer::Dense { out } => out as usize * input.len() + out as usize,
            Layer::Relu | Layer::MaxPool { .. } => 0,
        }
    }

    /// Fan-in and fan-out used for uniform Glorot initialization.
    pub(crate) fn fans(&self, input: Shape) -> Option<(usize, usize)> {
        match *self {
            Layer::Conv { out_channels, kernel, .. } => {
                let k2 = (kernel * kernel) as usize;
                Some((input.channels as usize * k2, out_channels as usize * k2))
            }
            Layer::Dense { out } => Some((input.len(), out as usize)),
            _ => None,
        }
    }
}

/// A validated chain of layers together with every intermediate shape and
/// the offset of each layer's parameters in the flat weight vector.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    input: Shape,
    layers: Vec<Layer>,
    shapes: Vec<Shape>,
    offsets: Vec<usize>,
}

impl Architecture {
    pub fn new(input: Shape, layers: Vec<Layer>) -> Result<Self> {
        if input.is_empty() {
            return Err(Error::Param("encoder input shape is empty".into()));
        }
        let mut shapes = vec![input];
        let mut offsets = vec![0];
        for (i, layer) in layers.iter().enumerate() {
            let cur = *shapes.last().unwrap();
            let next = layer.output_shape(cur).ok_or_else(|| {
                Error::Param(format!("layer {i} ({layer:?}) does not fit input {cur:?}"))
            })?;
            offsets.push(offsets.last().unwrap() + layer.param_count(cur));
            shapes.push(next);
        }
        Ok(Self { input, layers, shapes, offsets })
    }

    /// Single-channel 32x32 input, two conv/relu/pool stages and a dense
    /// projection to `embed_dim` features. `None` keeps the flattened
    /// 16x6x6 pooled map as the embedding.
    pub fn desk(embed_dim: Option<u32>) -> Result<Self> {
        let mut layers = vec![
            Layer::Conv { out_channels: 8, kernel: 3, stride: 1 },
            Layer::Relu,
            Layer::MaxPool { window: 2, stride: 2 },
            Layer::Conv { out_channels: 16, kernel: 3, stride: 1 },
            Layer::Relu,
            Layer::MaxPool { window: 2, stride: 2 },
        ];
        if let Some(n) = embed_dim {
            layers.push(Layer::Dense { out: n });
        }
        Self::new(Shape::new(1, 32, 32), layers)
    }

    pub fn input(&self) -> Shape {
        self.input
    }
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }
    pub fn output(&self) -> Shape {
        *self.shapes.last().unwrap()
    }
    pub fn embed_dim(&self) -> usize {
        self.output().len()
    }
    pub fn param_count(&self) -> usize {
        *self.offsets.last().unwrap()
    }
    pub(crate) fn layer_input(&self, i: usize) -> Shape {
        self.shapes[i]
    }
    pub(crate) fn layer_params(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }
}

/// Activations kept by a forward pass for the backward pass.
pub(crate) struct Trace {
    /// `acts[i]` is the input of layer `i`; the last entry is the output.
    acts: Vec<Vec<f64>>,
    /// Flat input index chosen by each pooling output.
    argmax: Vec<Vec<u32>>,
}

impl Trace {
    pub(crate) fn output(&self) -> &[f64] {
        self.acts.last().unwrap()
    }

    /// Which rectifier inputs are positive and which element every pooling
    /// window selected. Equal patterns mean the same linear piece.
    pub(crate) fn activation_pattern(&self, arch: &Architecture) -> (Vec<bool>, Vec<u32>) {
        let mut active = Vec::new();
        let mut picks = Vec::new();
        for (i, layer) in arch.layers.iter().enumerate() {
            match layer {
                Layer::Relu => active.extend(self.acts[i].iter().map(|v| *v > 0.0)),
                Layer::MaxPool { .. } => picks.extend_from_slice(&self.argmax[i]),
                _ => {}
            }
        }
        (active, picks)
    }
}

impl Architecture {
    pub(crate) fn forward(&self, params: &[f64], input: Vec<f64>) -> Vec<f64> {
        let mut x = input;
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, _) = self.layer_forward(i, layer, params, &x, false);
            x = y;
        }
        x
    }

    pub(crate) fn forward_traced(&self, params: &[f64], input: Vec<f64>) -> Trace {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        let mut argmax = Vec::with_capacity(self.layers.len());
        acts.push(input);
        for (i, layer) in self.layers.iter().enumerate() {
            let (y, am) = self.layer_forward(i, layer, params, acts.last().unwrap(), true);
            acts.push(y);
            argmax.push(am);
        }
        Trace { acts, argmax }
    }

    fn layer_forward(&self, i: usize, layer: &Layer, params: &[f64], x: &[f64], keep: bool) -> (Vec<f64>, Vec<u32>) {
        let ins = self.shapes[i];
        let outs = self.shapes[i + 1];
        let p = &params[self.layer_params(i)];
        match *layer {
            Layer::Conv { kernel, stride, .. } => (conv_forward(p, x, ins, outs, kernel, stride), Vec::new()),
            Layer::Relu => (x.iter().map(|v| v.max(0.0)).collect(), Vec::new()),
            Layer::MaxPool { window, stride } => {
                let (y, am) = pool_forward(x, ins, outs, window, stride);
                (y, if keep { am } else { Vec::new() })
            }
            Layer::Dense { out } => (dense_forward(p, x, out as usize), Vec::new()),
        }
    }

    /// Accumulates d(loss)/d(params) into `grads` given d(loss)/d(output).
    pub(crate) fn backward(&self, params: &[f64], trace: &Trace, grad_out: Vec<f64>, grads: &mut [f64]) {
        let mut g = grad_out;
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let ins = self.shapes[i];
            let outs = self.shapes[i + 1];
            let range = self.layer_params(i);
            let x = &trace.acts[i];
            g = match *layer {
                Layer::Conv { kernel, stride, .. } => {
                    conv_backward(&params[range.clone()], x, &g, ins, outs, kernel, stride, &mut grads[range], i > 0)
                }
                Layer::Relu => g.iter().zip(x).map(|(gv, xv)| if *xv > 0.0 { *gv } else { 0.0 }).collect(),
                Layer::MaxPool { .. } => {
                    let mut dx = vec![0.0; ins.len()];
                    for (gv, &src) in g.iter().zip(&trace.argmax[i]) {
                        dx[src as usize] += gv;
                    }
                    dx
                }
                Layer::Dense { out } => {
                    dense_backward(&params[range.clone()], x, &g, out as usize, &mut grads[range], i > 0)
                }
            };
        }
    }
}

fn conv_forward(p: &[f64], x: &[f64], ins: Shape, outs: Shape, kernel: u32, stride: u32) -> Vec<f64> {
    let (ic, ih, iw) = (ins.channels as usize, ins.height as usize, ins.width as usize);
    let (oc, oh, ow) = (outs.channels as usize, outs.height as usize, outs.width as usize);
    let (k, s) = (kernel as usize, stride as usize);
    let (weights, bias) = p.split_at(oc * ic * k * k);
    let mut y = vec![0.0; oc * oh * ow];
    for o in 0..oc {
        let plane = &mut y[o * oh * ow..(o + 1) * oh * ow];
        plane.fill(bias[o]);
        for c in 0..ic {
            let xin = &x[c * ih * iw..(c + 1) * ih * iw];
            for ky in 0..k {
                for kx in 0..k {
                    let wv = weights[((o * ic + c) * k + ky) * k + kx];
                    for oy in 0..oh {
                        let row = &xin[(oy * s + ky) * iw + kx..];
                        let dst = &mut plane[oy * ow..(oy + 1) * ow];
                        if s == 1 {
                            for (d, xv) in dst.iter_mut().zip(&row[..ow]) {
                                *d += wv * xv;
                            }
                        } else {
                            for (ox, d) in dst.iter_mut().enumerate() {
                                *d += wv * row[ox * s];
                            }
                        }
                    }
                }
            }
        }
    }
    y
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    p: &[f64],
    x: &[f64],
    g: &[f64],
    ins: Shape,
    outs: Shape,
    kernel: u32,
    stride: u32,
    grads: &mut [f64],
    need_dx: bool,
) -> Vec<f64> {
    let (ic, ih, iw) = (ins.channels as usize, ins.height as usize, ins.width as usize);
    let (oc, oh, ow) = (outs.channels as usize, outs.height as usize, outs.width as usize);
    let (k, s) = (kernel as usize, stride as usize);
    let nw = oc * ic * k * k;
    let weights = &p[..nw];
    let (gw, gb) = grads.split_at_mut(nw);
    let mut dx = if need_dx { vec![0.0; ins.len()] } else { Vec::new() };
    for o in 0..oc {
        let gplane = &g[o * oh * ow..(o + 1) * oh * ow];
        gb[o] += gplane.iter().sum::<f64>();
        for c in 0..ic {
            let xin = &x[c * ih * iw..(c + 1) * ih * iw];
            for ky in 0..k {
                for kx in 0..k {
                    let widx = ((o * ic + c) * k + ky) * k + kx;
                    let wv = weights[widx];
                    let mut acc = 0.0;
                    for oy in 0..oh {
                        let base = (oy * s + ky) * iw + kx;
                        let grow = &gplane[oy * ow..(oy + 1) * ow];
                        for (ox, gv) in grow.iter().enumerate() {
                            acc += gv * xin[base + ox * s];
                        }
                        if need_dx {
                            let drow = &mut dx[c * ih * iw..(c + 1) * ih * iw];
                            for (ox, gv) in grow.iter().enumerate() {
                                drow[base + ox * s] += wv * gv;
                            }
                        }
                    }
                    gw[widx] += acc;
                }
            }
        }
    }
    dx
}

fn pool_forward(x: &[f64], ins: Shape, outs: Shape, window: u32, stride: u32) -> (Vec<f64>, Vec<u32>) {
    let (ih, iw) = (ins.height as usize, ins.width as usize);
    let (oc, oh, ow) = (outs.channels as usize, outs.height as usize, outs.width as usize);
    let (wn, s) = (window as usize, stride as usize);
    let mut y = Vec::with_capacity(oc * oh * ow);
    let mut am = Vec::with_capacity(oc * oh * ow);
    for c in 0..oc {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = f64::NEG_INFINITY;
                let mut at = 0usize;
                for dy in 0..wn {
                    for dx in 0..wn {
                        let idx = c * ih * iw + (oy * s + dy) * iw + ox * s + dx;
                        // first maximum wins ties
                        if x[idx] > best {
                            best = x[idx];
                            at = idx;
                        }
                    }
                }
                y.push(best);
                am.push(at as u32);
            }
        }
    }
    (y, am)
}

fn dense_forward(p: &[f64], x: &[f64], out: usize) -> Vec<f64> {
    let n = x.len();
    let (weights, bias) = p.split_at(out * n);
    (0..out)
        .map(|j| {
            let row = &weights[j * n..(j + 1) * n];
            bias[j] + row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>()
        })
        .collect()
}

fn dense_backward(p: &[f64], x: &[f64], g: &[f64], out: usize, grads: &mut [f64], need_dx: bool) -> Vec<f64> {
    let n = x.len();
    let weights = &p[..out * n];
    let (gw, gb) = grads.split_at_mut(out * n);
    let mut dx = if need_dx { vec![0.0; n] } else { Vec::new() };
    for j in 0..out {
        let gj = g[j];
        gb[j] += gj;
        if gj == 0.0 {
            continue;
        }
        let grow = &mut gw[j * n..(j + 1) * n];
        for (gwv, xv) in grow.iter_mut().zip(x) {
            *gwv += gj * xv;
        }
        if need_dx {
            for (d, w) in dx.iter_mut().zip(&weights[j * n..(j + 1) * n]) {
                *d += gj * w;
            }
        }
    }
    dx
}
