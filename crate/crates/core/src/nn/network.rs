//! Sequential networks built from a small fixed layer set.
//!
//! All parameters of a network live in one flat buffer in declaration order:
//! for every dense or convolution layer, the weight matrix (row-major,
//! `out × in` or `out_ch × in_ch × k × k`) followed by the bias vector.
//! Gradients, optimizer moments and the on-disk container share that layout.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LayerSpec {
    Dense {
        input: usize,
        output: usize,
    },
    /// Valid-padding 2-D convolution over `[channels, height, width]`.
    Conv {
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
    },
    Relu,
    Tanh,
    Flatten,
    /// Softmax over the last (only) axis of each sample.
    Softmax,
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        match *self {
            LayerSpec::Dense { input, output } => input * output + output,
            LayerSpec::Conv {
                in_ch,
                out_ch,
                kernel,
                ..
            } => out_ch * in_ch * kernel * kernel + out_ch,
            _ => 0,
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *self {
            LayerSpec::Dense {
                input: fan_in,
                output,
            } => {
                if input != [fan_in] {
                    return Err(Error::config(format!(
                        "dense layer expects [{fan_in}], got {input:?}"
                    )));
                }
                Ok(vec![output])
            }
            LayerSpec::Conv {
                in_ch,
                out_ch,
                kernel,
                stride,
            } => {
                if input.len() != 3 || input[0] != in_ch {
                    return Err(Error::config(format!(
                        "conv layer expects [{in_ch}, h, w], got {input:?}"
                    )));
                }
                if kernel == 0 || stride == 0 {
                    return Err(Error::config("conv kernel and stride must be positive"));
                }
                if input[1] < kernel || input[2] < kernel {
                    return Err(Error::config(format!(
                        "conv kernel {kernel} larger than input {input:?}"
                    )));
                }
                Ok(vec![
                    out_ch,
                    (input[1] - kernel) / stride + 1,
                    (input[2] - kernel) / stride + 1,
                ])
            }
            LayerSpec::Relu | LayerSpec::Tanh => Ok(input.to_vec()),
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::Softmax => {
                if input.len() != 1 {
                    return Err(Error::config(format!(
                        "softmax head expects a flat input, got {input:?}"
                    )));
                }
                Ok(input.to_vec())
            }
        }
    }

    fn fans(&self) -> (usize, usize) {
        match *self {
            LayerSpec::Dense { input, output } => (input, output),
            LayerSpec::Conv {
                in_ch,
                out_ch,
                kernel,
                ..
            } => (in_ch * kernel * kernel, out_ch * kernel * kernel),
            _ => (0, 0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// Per-sample input shape (without the batch axis).
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub seed: u64,
}

impl NetworkSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>, seed: u64) -> Result<Self> {
        let spec = NetworkSpec {
            input_shape,
            layers,
            seed,
        };
        spec.shapes()?;
        Ok(spec)
    }

    /// Per-sample shapes at every layer boundary, starting with the input.
    pub fn shapes(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::config(format!(
                "invalid network input shape {:?}",
                self.input_shape
            )));
        }
        let mut shapes = vec![self.input_shape.clone()];
        for (i, layer) in self.layers.iter().enumerate() {
            let next = layer
                .output_shape(shapes.last().unwrap())
                .map_err(|e| Error::config(format!("layer {i}: {e}")))?;
            shapes.push(next);
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Vec<usize> {
        self.shapes()
            .ok()
            .and_then(|s| s.last().cloned())
            .unwrap_or_default()
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerSpec::param_count).sum()
    }
}

/// Activations recorded by [`Network::forward_train`] for the backward pass.
#[derive(Debug, Default, Clone)]
pub struct Tape {
    activations: Vec<Tensor>,
    columns: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn is_recorded(&self) -> bool {
        !self.activations.is_empty()
    }

    pub fn output(&self) -> Option<&Tensor> {
        self.activations.last()
    }
}

#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    spec: NetworkSpec,
    shapes: Vec<Vec<usize>>,
    offsets: Vec<usize>,
    params: Vec<f64>,
}

impl Network {
    /// Glorot-uniform weights and zero biases drawn from the spec's seed.
    pub fn new(spec: NetworkSpec) -> Result<Self> {
        let mut net = Self::zeroed(spec)?;
        let mut rng = rng_from_seed(net.spec.seed);
        for (i, layer) in net.spec.layers.iter().enumerate() {
            let (fan_in, fan_out) = layer.fans();
            if fan_in == 0 {
                continue;
            }
            let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let n_weights = layer.param_count() - bias_len(layer);
            let start = net.offsets[i];
            for w in &mut net.params[start..start + n_weights] {
                *w = rng.gen_range(-bound..=bound);
            }
        }
        Ok(net)
    }

    pub fn zeroed(spec: NetworkSpec) -> Result<Self> {
        let shapes = spec.shapes()?;
        let mut offsets = Vec::with_capacity(spec.layers.len());
        let mut total = 0;
        for layer in &spec.layers {
            offsets.push(total);
            total += layer.param_count();
        }
        Ok(Network {
            spec,
            shapes,
            offsets,
            params: vec![0.0; total],
        })
    }

    pub fn from_params(spec: NetworkSpec, params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeroed(spec)?;
        if params.len() != net.params.len() {
            return Err(Error::config(format!(
                "network expects {} parameters, got {}",
                net.params.len(),
                params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.shapes[0]
    }

    pub fn output_shape(&self) -> &[usize] {
        self.shapes.last().unwrap()
    }

    /// Parameter slice owned by layer `index` (empty for parameter-free layers).
    pub fn layer_params_mut(&mut self, index: usize) -> &mut [f64] {
        let start = self.offsets[index];
        let len = self.spec.layers[index].param_count();
        &mut self.params[start..start + len]
    }

    /// Multiplies the weights (not the bias) of layer `index` by `factor`.
    pub fn scale_layer_weights(&mut self, index: usize, factor: f64) {
        let layer = self.spec.layers[index];
        let n = layer.param_count() - bias_len(&layer);
        for w in &mut self.layer_params_mut(index)[..n] {
            *w *= factor;
        }
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        let shape = input.shape();
        if shape.len() != self.shapes[0].len() + 1 || shape[1..] != self.shapes[0][..] {
            return Err(Error::config(format!(
                "network expects [batch, {:?}], got {:?}",
                self.shapes[0],
                shape
            )));
        }
        Ok(())
    }

    /// Inference-only forward pass over a `[batch, ..input_shape]` tensor.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut x = input.clone();
        for i in 0..self.spec.layers.len() {
            x = self.layer_forward(i, &x, None);
        }
        Ok(x)
    }

    /// Forward pass that records what [`Network::backward`] needs.
    pub fn forward_train(&self, input: &Tensor, tape: &mut Tape) -> Result<Tensor> {
        self.check_input(input)?;
        tape.activations.clear();
        tape.columns.clear();
        tape.activations.push(input.clone());
        for i in 0..self.spec.layers.len() {
            let mut cols = None;
            let y = self.layer_forward(i, tape.activations.last().unwrap(), Some(&mut cols));
            tape.columns.push(cols);
            tape.activations.push(y);
        }
        Ok(tape.activations.last().unwrap().clone())
    }

    /// Gradients of the recorded forward pass given `dL/d(output)`.
    pub fn backward(&self, tape: &Tape, upstream: &Tensor) -> Result<Gradients> {
        let mut params = vec![0.0; self.params.len()];
        let input = self.backward_into(tape, upstream, &mut params)?;
        Ok(Gradients { params, input })
    }

    /// Like [`Network::backward`] but accumulates parameter gradients into
    /// `grads`; returns the gradient with respect to the input.
    pub fn backward_into(&self, tape: &Tape, upstream: &Tensor, grads: &mut [f64]) -> Result<Tensor> {
        if !tape.is_recorded() || tape.activations.len() != self.spec.layers.len() + 1 {
            return Err(Error::usage("backward called without a matching forward pass"));
        }
        if grads.len() != self.params.len() {
            return Err(Error::config("gradient buffer does not match parameter count"));
        }
        let out = tape.activations.last().unwrap();
        if upstream.shape() != out.shape() {
            return Err(Error::config(format!(
                "upstream gradient shape {:?} does not match output {:?}",
                upstream.shape(),
                out.shape()
            )));
        }
        let mut g = upstream.clone();
        for i in (0..self.spec.layers.len()).rev() {
            g = self.layer_backward(i, tape, &g, grads);
        }
        Ok(g)
    }

    fn layer_forward(&self, i: usize, x: &Tensor, cols_out: Option<&mut Option<Vec<f64>>>) -> Tensor {
        let batch = x.batch();
        let mut out_shape = vec![batch];
        out_shape.extend_from_slice(&self.shapes[i + 1]);
        match self.spec.layers[i] {
            LayerSpec::Dense { input, output } => {
                let p = &self.params[self.offsets[i]..];
                let (w, b) = (&p[..input * output], &p[input * output..input * output + output]);
                let mut y = vec![0.0; batch * output];
                for row in y.chunks_mut(output) {
                    row.copy_from_slice(b);
                }
                gemm(batch, input, output, x.data(), false, w, true, 1.0, &mut y);
                Tensor::new(out_shape, y).expect("dense output shape")
            }
            LayerSpec::Conv {
                in_ch,
                out_ch,
                kernel,
                stride,
            } => {
                let (h, w_in) = (self.shapes[i][1], self.shapes[i][2]);
                let (oh, ow) = (self.shapes[i + 1][1], self.shapes[i + 1][2]);
                let ckk = in_ch * kernel * kernel;
                let pix = oh * ow;
                let p = &self.params[self.offsets[i]..];
                let (w, b) = (&p[..out_ch * ckk], &p[out_ch * ckk..out_ch * ckk + out_ch]);
                let mut y = vec![0.0; batch * out_ch * pix];
                let keep = cols_out.is_some();
                let mut all_cols = if keep { vec![0.0; batch * ckk * pix] } else { Vec::new() };
                let mut scratch = vec![0.0; ckk * pix];
                let in_len = in_ch * h * w_in;
                for s in 0..batch {
                    let cols: &mut [f64] = if keep {
                        &mut all_cols[s * ckk * pix..(s + 1) * ckk * pix]
                    } else {
                        &mut scratch
                    };
                    im2col(&x.data()[s * in_len..(s + 1) * in_len], in_ch, h, w_in, kernel, stride, oh, ow, cols);
                    let ys = &mut y[s * out_ch * pix..(s + 1) * out_ch * pix];
                    for (o, row) in ys.chunks_mut(pix).enumerate() {
                        row.fill(b[o]);
                    }
                    gemm(out_ch, ckk, pix, w, false, cols, false, 1.0, ys);
                }
                if let Some(slot) = cols_out {
                    *slot = Some(all_cols);
                }
                Tensor::new(out_shape, y).expect("conv output shape")
            }
            LayerSpec::Relu => map(x, out_shape, |v| v.max(0.0)),
            LayerSpec::Tanh => map(x, out_shape, f64::tanh),
            LayerSpec::Flatten => x.clone().reshape(out_shape).expect("flatten"),
            LayerSpec::Softmax => {
                let mut y = x.data().to_vec();
                let n = x.row_len();
                for row in y.chunks_mut(n) {
                    softmax_in_place(row);
                }
                Tensor::new(out_shape, y).expect("softmax shape")
            }
        }
    }

    fn layer_backward(&self, i: usize, tape: &Tape, g: &Tensor, grads: &mut [f64]) -> Tensor {
        let x = &tape.activations[i];
        let y = &tape.activations[i + 1];
        let batch = x.batch();
        match self.spec.layers[i] {
            LayerSpec::Dense { input, output } => {
                let off = self.offsets[i];
                let w = &self.params[off..off + input * output];
                {
                    let (gw, gb) = grads[off..off + input * output + output].split_at_mut(input * output);
                    gemm(output, batch, input, g.data(), true, x.data(), false, 1.0, gw);
                    for row in g.data().chunks(output) {
                        for (acc, v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                }
                let mut dx = vec![0.0; batch * input];
                gemm(batch, output, input, g.data(), false, w, false, 0.0, &mut dx);
                Tensor::new(x.shape().to_vec(), dx).expect("dense input grad")
            }
            LayerSpec::Conv {
                in_ch,
                out_ch,
                kernel,
                stride,
            } => {
                let (h, w_in) = (self.shapes[i][1], self.shapes[i][2]);
                let (oh, ow) = (self.shapes[i + 1][1], self.shapes[i + 1][2]);
                let ckk = in_ch * kernel * kernel;
                let pix = oh * ow;
                let off = self.offsets[i];
                let w = &self.params[off..off + out_ch * ckk];
                let cols = tape.columns[i].as_ref().expect("conv columns recorded");
                let mut dx = vec![0.0; x.len()];
                let mut dcols = vec![0.0; ckk * pix];
                let in_len = in_ch * h * w_in;
                for s in 0..batch {
                    let gs = &g.data()[s * out_ch * pix..(s + 1) * out_ch * pix];
                    let cs = &cols[s * ckk * pix..(s + 1) * ckk * pix];
                    {
                        let (gw, gb) = grads[off..off + out_ch * ckk + out_ch].split_at_mut(out_ch * ckk);
                        gemm(out_ch, pix, ckk, gs, false, cs, true, 1.0, gw);
                        for (o, row) in gs.chunks(pix).enumerate() {
                            gb[o] += row.iter().sum::<f64>();
                        }
                    }
                    gemm(ckk, out_ch, pix, w, true, gs, false, 0.0, &mut dcols);
                    col2im(&dcols, in_ch, h, w_in, kernel, stride, oh, ow, &mut dx[s * in_len..(s + 1) * in_len]);
                }
                Tensor::new(x.shape().to_vec(), dx).expect("conv input grad")
            }
            LayerSpec::Relu => {
                let dx = g
                    .data()
                    .iter()
                    .zip(x.data())
                    .map(|(&gv, &xv)| if xv > 0.0 { gv } else { 0.0 })
                    .collect();
                Tensor::new(x.shape().to_vec(), dx).expect("relu grad")
            }
            LayerSpec::Tanh => {
                let dx = g
                    .data()
                    .iter()
                    .zip(y.data())
                    .map(|(&gv, &yv)| gv * (1.0 - yv * yv))
                    .collect();
                Tensor::new(x.shape().to_vec(), dx).expect("tanh grad")
            }
            LayerSpec::Flatten => g.clone().reshape(x.shape().to_vec()).expect("flatten grad"),
            LayerSpec::Softmax => {
                let n = y.row_len();
                let mut dx = vec![0.0; y.len()];
                for ((d, gy), yy) in dx.chunks_mut(n).zip(g.data().chunks(n)).zip(y.data().chunks(n)) {
                    let dot: f64 = gy.iter().zip(yy).map(|(a, b)| a * b).sum();
                    for j in 0..n {
                        d[j] = yy[j] * (gy[j] - dot);
                    }
                }
                Tensor::new(x.shape().to_vec(), dx).expect("softmax grad")
            }
        }
    }
}

fn bias_len(layer: &LayerSpec) -> usize {
    match *layer {
        LayerSpec::Dense { output, .. } => output,
        LayerSpec::Conv { out_ch, .. } => out_ch,
        _ => 0,
    }
}

fn map(x: &Tensor, shape: Vec<usize>, f: impl Fn(f64) -> f64) -> Tensor {
    Tensor::new(shape, x.data().iter().map(|&v| f(v)).collect()).expect("elementwise shape")
}

/// Numerically stable softmax of one row.
pub fn softmax_in_place(row: &mut [f64]) {
    let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

pub fn softmax(row: &[f64]) -> Vec<f64> {
    let mut out = row.to_vec();
    softmax_in_place(&mut out);
    out
}

#[allow(clippy::too_many_arguments)]
fn im2col(x: &[f64], c: usize, h: usize, w: usize, k: usize, s: usize, oh: usize, ow: usize, cols: &mut [f64]) {
    let pix = oh * ow;
    for ch in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let dst = &mut cols[row * pix..(row + 1) * pix];
                for oy in 0..oh {
                    let src = &x[ch * h * w + (oy * s + ki) * w..];
                    for ox in 0..ow {
                        dst[oy * ow + ox] = src[ox * s + kj];
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn col2im(cols: &[f64], c: usize, h: usize, w: usize, k: usize, s: usize, oh: usize, ow: usize, dx: &mut [f64]) {
    let pix = oh * ow;
    for ch in 0..c {
        for ki in 0..k {
            for kj in 0..k {
                let row = (ch * k + ki) * k + kj;
                let src = &cols[row * pix..(row + 1) * pix];
                for oy in 0..oh {
                    let base = ch * h * w + (oy * s + ki) * w + kj;
                    for ox in 0..ow {
                        dx[base + ox * s] += src[oy * ow + ox];
                    }
                }
            }
        }
    }
}
