//! A small CPU tensor and layer engine with exact analytic backpropagation.
//!
//! A [`Model`] is a sequence of [`LayerSpec`]s whose shapes are resolved when
//! the model is built. Activation index `0` is the model input and index
//! `i + 1` is the output of layer `i`; [`LayerSpec::ResidualAdd`] refers to
//! activations by that index. The last layer must be [`LayerSpec::Softmax`]
//! for [`Model::backward`], which returns the gradient of the batch-averaged
//! log-likelihood (ascent orientation).

pub mod checkpoint;
pub mod ops;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use thiserror::Error;

use crate::rng;
use ops::ConvGeom;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid layer {index} ({kind}): {reason}")]
    InvalidLayer {
        index: usize,
        kind: &'static str,
        reason: String,
    },
}

fn mismatch(msg: impl Into<String>) -> NetError {
    NetError::ShapeMismatch(msg.into())
}

/// Dense row-major array of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NetError> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(mismatch(format!("extents must be >= 1, got {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(mismatch(format!(
                "shape {shape:?} needs {len} values, got {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        assert!(!shape.is_empty() && !shape.contains(&0), "bad shape {shape:?}");
        Tensor { shape: shape.to_vec(), data: vec![value; shape.iter().product()] }
    }

    /// One-hot rows for `labels` over `classes` columns.
    pub fn one_hot(labels: &[usize], classes: usize) -> Self {
        let mut t = Tensor::zeros(&[labels.len().max(1), classes]);
        for (row, &l) in labels.iter().enumerate() {
            t.data[row * classes + l] = 1.0;
        }
        t
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }
    pub fn data(&self) -> &[f64] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }
    pub fn into_data(self) -> Vec<f64> {
        self.data
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self, NetError> {
        if shape.iter().product::<usize>() != self.data.len() || shape.contains(&0) {
            return Err(mismatch(format!("cannot reshape {:?} to {shape:?}", self.shape)));
        }
        self.shape = shape;
        Ok(self)
    }

    /// Copies rows `indices` of the leading axis into a new tensor.
    pub fn gather_rows(&self, indices: &[usize]) -> Tensor {
        let row: usize = self.shape[1..].iter().product();
        let mut data = Vec::with_capacity(indices.len() * row);
        for &i in indices {
            data.extend_from_slice(&self.data[i * row..(i + 1) * row]);
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor { shape, data }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerSpec {
    Dense { units: usize },
    Conv2d { out_channels: usize, kernel: usize, stride: usize, padding: usize },
    BatchNorm { momentum: f64, eps: f64 },
    Relu,
    /// Non-overlapping `size × size` windows; trailing rows/columns are dropped.
    MaxPool { size: usize },
    /// Adds activation `from` to the incoming activation.
    ResidualAdd { from: usize },
    Flatten,
    Softmax,
}

impl LayerSpec {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerSpec::Dense { .. } => "dense",
            LayerSpec::Conv2d { .. } => "conv2d",
            LayerSpec::BatchNorm { .. } => "batchnorm",
            LayerSpec::Relu => "relu",
            LayerSpec::MaxPool { .. } => "maxpool",
            LayerSpec::ResidualAdd { .. } => "residual_add",
            LayerSpec::Flatten => "flatten",
            LayerSpec::Softmax => "softmax",
        }
    }

    pub fn conv3x3(out_channels: usize) -> Self {
        LayerSpec::Conv2d { out_channels, kernel: 3, stride: 1, padding: 1 }
    }

    pub fn batch_norm() -> Self {
        LayerSpec::BatchNorm { momentum: 0.1, eps: 1e-5 }
    }
}

/// The scaled-down residual network: input module, convolution module with
/// pooling, one residual module and a pooled linear output module.
pub fn micro_resnet(classes: usize, width_in: usize, width_mid: usize) -> Vec<LayerSpec> {
    use LayerSpec::*;
    let bn = LayerSpec::batch_norm();
    vec![
        // input module
        LayerSpec::conv3x3(width_in),
        bn,
        Relu,
        // convolution module
        LayerSpec::conv3x3(width_mid),
        bn,
        Relu,
        MaxPool { size: 2 },
        // residual module; its input is activation 7
        LayerSpec::conv3x3(width_mid),
        bn,
        Relu,
        LayerSpec::conv3x3(width_mid),
        bn,
        ResidualAdd { from: 7 },
        Relu,
        // output module
        MaxPool { size: 2 },
        Flatten,
        Dense { units: classes },
        Softmax,
    ]
}

/// Flatten → Dense(hidden) → ReLU → Dense(classes) → Softmax.
pub fn mlp(classes: usize, hidden: usize) -> Vec<LayerSpec> {
    use LayerSpec::*;
    vec![Flatten, Dense { units: hidden }, Relu, Dense { units: classes }, Softmax]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamRole {
    Weight,
    Bias,
    Scale,
    Shift,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub value: Tensor,
    pub role: ParamRole,
    pub layer: usize,
    /// Whether the weight prior applies to this tensor.
    pub prior: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    spec: LayerSpec,
    in_shape: Vec<usize>,
    out_shape: Vec<usize>,
    params: Vec<usize>,
}

impl Layer {
    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }
    pub fn in_shape(&self) -> &[usize] {
        &self.in_shape
    }
    pub fn out_shape(&self) -> &[usize] {
        &self.out_shape
    }
    /// Indices into [`Model::params`].
    pub fn param_indices(&self) -> &[usize] {
        &self.params
    }

    fn conv_geom(&self) -> ConvGeom {
        match self.spec {
            LayerSpec::Conv2d { kernel, stride, padding, .. } => ConvGeom {
                channels: self.in_shape[0],
                height: self.in_shape[1],
                width: self.in_shape[2],
                kernel,
                stride,
                padding,
            },
            _ => unreachable!("conv_geom on {}", self.spec.kind()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Batch statistics in batch norm; dropout active if requested.
    Train,
    /// Running statistics; no dropout.
    Eval,
}

/// Inverted dropout on the output of the model's last ReLU.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Dropout {
    pub rate: f64,
    pub seed: u64,
}

#[derive(Debug, Clone)]
enum Cache {
    None,
    Conv { cols: Vec<f64> },
    BatchNorm { xhat: Vec<f64>, inv_std: Vec<f64>, mean: Vec<f64>, var_unbiased: Vec<f64> },
    MaxPool { argmax: Vec<usize> },
    Relu { mask: Option<Vec<f64>> },
}

/// Activations and intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct Forward {
    acts: Vec<Tensor>,
    caches: Vec<Cache>,
    mode: Mode,
}

impl Forward {
    pub fn output(&self) -> &Tensor {
        self.acts.last().expect("at least the input")
    }
    pub fn activations(&self) -> &[Tensor] {
        &self.acts
    }
    pub fn mode(&self) -> Mode {
        self.mode
    }
    pub fn batch_size(&self) -> usize {
        self.acts[0].shape[0]
    }
}

/// Ascent gradients from [`Model::backward`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    /// Aligned with [`Model::params`].
    pub params: Vec<Tensor>,
    pub input: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    input_shape: Vec<usize>,
    layers: Vec<Layer>,
    params: Vec<Param>,
    running: Vec<Option<RunningStats>>,
}

impl Model {
    /// Resolves every layer's shapes against `input_shape` (per sample, no
    /// batch axis). Weights start at zero; call [`Model::init_xavier_uniform`].
    pub fn new(input_shape: &[usize], specs: &[LayerSpec]) -> Result<Self, NetError> {
        if input_shape.is_empty() || input_shape.contains(&0) {
            return Err(mismatch(format!("bad input shape {input_shape:?}")));
        }
        let mut shapes = vec![input_shape.to_vec()];
        let mut layers = Vec::with_capacity(specs.len());
        let mut params = Vec::new();
        let mut running = Vec::with_capacity(specs.len());
        for (index, spec) in specs.iter().enumerate() {
            let inp = shapes[index].clone();
            let bad = |reason: String| NetError::InvalidLayer { index, kind: spec.kind(), reason };
            let mut layer_params = Vec::new();
            let mut add = |shape: Vec<usize>, role: ParamRole, fill: f64| {
                layer_params.push(params.len());
                params.push(Param {
                    value: Tensor::filled(&shape, fill),
                    role,
                    layer: index,
                    prior: role == ParamRole::Weight,
                });
            };
            let mut stats = None;
            let out = match *spec {
                LayerSpec::Dense { units } => {
                    if inp.len() != 1 {
                        return Err(bad(format!("expects a flat input, got {inp:?}")));
                    }
                    if units == 0 {
                        return Err(bad("units must be >= 1".into()));
                    }
                    add(vec![units, inp[0]], ParamRole::Weight, 0.0);
                    add(vec![units], ParamRole::Bias, 0.0);
                    vec![units]
                }
                LayerSpec::Conv2d { out_channels, kernel, stride, padding } => {
                    if inp.len() != 3 {
                        return Err(bad(format!("expects [C, H, W], got {inp:?}")));
                    }
                    if out_channels == 0 || kernel == 0 || stride == 0 {
                        return Err(bad("channels, kernel and stride must be >= 1".into()));
                    }
                    if inp[1] + 2 * padding < kernel || inp[2] + 2 * padding < kernel {
                        return Err(bad(format!("kernel {kernel} larger than padded input {inp:?}")));
                    }
                    let g = ConvGeom {
                        channels: inp[0],
                        height: inp[1],
                        width: inp[2],
                        kernel,
                        stride,
                        padding,
                    };
                    add(vec![out_channels, inp[0], kernel, kernel], ParamRole::Weight, 0.0);
                    add(vec![out_channels], ParamRole::Bias, 0.0);
                    vec![out_channels, g.out_height(), g.out_width()]
                }
                LayerSpec::BatchNorm { momentum, eps } => {
                    if inp.len() != 1 && inp.len() != 3 {
                        return Err(bad(format!("expects [F] or [C, H, W], got {inp:?}")));
                    }
                    if !(momentum > 0.0 && momentum <= 1.0) || !(eps > 0.0) {
                        return Err(bad("momentum must be in (0, 1] and eps > 0".into()));
                    }
                    add(vec![inp[0]], ParamRole::Scale, 1.0);
                    add(vec![inp[0]], ParamRole::Shift, 0.0);
                    stats = Some(RunningStats { mean: vec![0.0; inp[0]], var: vec![1.0; inp[0]] });
                    inp.clone()
                }
                LayerSpec::Relu => inp.clone(),
                LayerSpec::MaxPool { size } => {
                    if inp.len() != 3 {
                        return Err(bad(format!("expects [C, H, W], got {inp:?}")));
                    }
                    if size == 0 || inp[1] < size || inp[2] < size {
                        return Err(bad(format!("pool size {size} does not fit {inp:?}")));
                    }
                    vec![inp[0], inp[1] / size, inp[2] / size]
                }
                LayerSpec::ResidualAdd { from } => {
                    if from > index {
                        return Err(bad(format!("activation {from} is not computed before layer {index}")));
                    }
                    if shapes[from] != inp {
                        return Err(bad(format!(
                            "skip shape {:?} differs from incoming {inp:?}",
                            shapes[from]
                        )));
                    }
                    inp.clone()
                }
                LayerSpec::Flatten => vec![inp.iter().product()],
                LayerSpec::Softmax => {
                    if inp.len() != 1 {
                        return Err(bad(format!("expects a flat input, got {inp:?}")));
                    }
                    if index + 1 != specs.len() {
                        return Err(bad("softmax must be the last layer".into()));
                    }
                    inp.clone()
                }
            };
            layers.push(Layer { spec: *spec, in_shape: inp, out_shape: out.clone(), params: layer_params });
            running.push(stats);
            shapes.push(out);
        }
        Ok(Model { input_shape: input_shape.to_vec(), layers, params, running })
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }
    pub fn output_shape(&self) -> &[usize] {
        self.layers.last().map_or(&self.input_shape, |l| &l.out_shape)
    }
    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }
    pub fn specs(&self) -> Vec<LayerSpec> {
        self.layers.iter().map(|l| l.spec).collect()
    }
    pub fn params(&self) -> &[Param] {
        &self.params
    }
    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }
    pub fn running_stats(&self) -> &[Option<RunningStats>] {
        &self.running
    }
    pub fn running_stats_mut(&mut self) -> &mut [Option<RunningStats>] {
        &mut self.running
    }
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn prior_mask(&self) -> Vec<bool> {
        self.params.iter().map(|p| p.prior).collect()
    }

    /// Marks which parameter tensors receive the prior.
    pub fn set_prior_mask(&mut self, mut include: impl FnMut(&Param) -> bool) {
        for p in &mut self.params {
            p.prior = include(p);
        }
    }

    /// Weights uniform on `±√(6 / (fan_in + fan_out))`, biases and shifts
    /// zero, scales one, running statistics reset.
    pub fn init_xavier_uniform(&mut self, seed: u64) {
        let mut r = rng::stream(seed, "xavier-init");
        for p in &mut self.params {
            match p.role {
                ParamRole::Weight => {
                    let s = p.value.shape();
                    let field: usize = s[2..].iter().product();
                    let (fan_out, fan_in) = (s[0] * field, s[1] * field);
                    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                    let u = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                    for w in p.value.data_mut() {
                        *w = u.sample(&mut r);
                    }
                }
                ParamRole::Bias | ParamRole::Shift => p.value.data_mut().fill(0.0),
                ParamRole::Scale => p.value.data_mut().fill(1.0),
            }
        }
        for s in self.running.iter_mut().flatten() {
            s.mean.fill(0.0);
            s.var.fill(1.0);
        }
    }

    fn dropout_site(&self) -> Option<usize> {
        self.layers.iter().rposition(|l| l.spec == LayerSpec::Relu)
    }

    pub fn forward(&self, x: &Tensor, mode: Mode, dropout: Option<Dropout>) -> Result<Forward, NetError> {
        if x.shape.len() != self.input_shape.len() + 1 || x.shape[1..] != self.input_shape[..] {
            return Err(mismatch(format!(
                "batch shape {:?} does not match input {:?}",
                x.shape, self.input_shape
            )));
        }
        let batch = x.shape[0];
        let site = match (mode, dropout) {
            (Mode::Train, Some(d)) if d.rate > 0.0 => self.dropout_site().map(|s| (s, d)),
            _ => None,
        };
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        let mut caches = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = &acts[i];
            let mut out_shape = vec![batch];
            out_shape.extend_from_slice(&layer.out_shape);
            let mut out = Tensor::zeros(&out_shape);
            let cache = match layer.spec {
                LayerSpec::Dense { units } => {
                    let w = &self.params[layer.params[0]].value.data;
                    let b = &self.params[layer.params[1]].value.data;
                    let f = layer.in_shape[0];
                    ops::gemm(batch, f, units, 1.0, &input.data, false, w, true, 0.0, &mut out.data);
                    for row in out.data.chunks_exact_mut(units) {
                        for (o, bi) in row.iter_mut().zip(b) {
                            *o += bi;
                        }
                    }
                    Cache::None
                }
                LayerSpec::Conv2d { out_channels, .. } => {
                    let g = layer.conv_geom();
                    let w = &self.params[layer.params[0]].value.data;
                    let b = &self.params[layer.params[1]].value.data;
                    let (rows, cols_n) = (g.col_rows(), g.col_cols());
                    let in_len: usize = layer.in_shape.iter().product();
                    let out_len = out_channels * cols_n;
                    let mut cols = vec![0.0; batch * rows * cols_n];
                    for s in 0..batch {
                        let c = &mut cols[s * rows * cols_n..(s + 1) * rows * cols_n];
                        ops::im2col(&g, &input.data[s * in_len..(s + 1) * in_len], c);
                        let o = &mut out.data[s * out_len..(s + 1) * out_len];
                        ops::gemm(out_channels, rows, cols_n, 1.0, w, false, c, false, 0.0, o);
                        for (row, bi) in o.chunks_exact_mut(cols_n).zip(b) {
                            row.iter_mut().for_each(|v| *v += bi);
                        }
                    }
                    Cache::Conv { cols }
                }
                LayerSpec::BatchNorm { eps, .. } => {
                    let scale = &self.params[layer.params[0]].value.data;
                    let shift = &self.params[layer.params[1]].value.data;
                    let f = layer.in_shape[0];
                    let spatial: usize = layer.in_shape[1..].iter().product();
                    let n = (batch * spatial) as f64;
                    let (mean, var) = match mode {
                        Mode::Train => channel_moments(&input.data, batch, f, spatial),
                        Mode::Eval => {
                            let s = self.running[i].as_ref().expect("batchnorm stats");
                            (s.mean.clone(), s.var.clone())
                        }
                    };
                    let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
                    let mut xhat = vec![0.0; input.data.len()];
                    for s in 0..batch {
                        for c in 0..f {
                            let base = (s * f + c) * spatial;
                            for k in base..base + spatial {
                                xhat[k] = (input.data[k] - mean[c]) * inv_std[c];
                                out.data[k] = scale[c] * xhat[k] + shift[c];
                            }
                        }
                    }
                    let var_unbiased = if n > 1.0 {
                        var.iter().map(|v| v * n / (n - 1.0)).collect()
                    } else {
                        var
                    };
                    Cache::BatchNorm { xhat, inv_std, mean, var_unbiased }
                }
                LayerSpec::Relu => {
                    for (o, &v) in out.data.iter_mut().zip(&input.data) {
                        *o = v.max(0.0);
                    }
                    let mask = match site {
                        Some((s, d)) if s == i => {
                            let mut r = rng::stream(d.seed, "dropout");
                            let keep = 1.0 / (1.0 - d.rate);
                            let m: Vec<f64> = (0..out.data.len())
                                .map(|_| if r.random::<f64>() < d.rate { 0.0 } else { keep })
                                .collect();
                            out.data.iter_mut().zip(&m).for_each(|(o, k)| *o *= k);
                            Some(m)
                        }
                        _ => None,
                    };
                    Cache::Relu { mask }
                }
                LayerSpec::MaxPool { size } => {
                    let (c, h, w) = (layer.in_shape[0], layer.in_shape[1], layer.in_shape[2]);
                    let in_len = c * h * w;
                    let out_len: usize = layer.out_shape.iter().product();
                    let mut argmax = vec![0; batch * out_len];
                    for s in 0..batch {
                        ops::maxpool(
                            c,
                            h,
                            w,
                            size,
                            &input.data[s * in_len..(s + 1) * in_len],
                            &mut out.data[s * out_len..(s + 1) * out_len],
                            &mut argmax[s * out_len..(s + 1) * out_len],
                        );
                    }
                    Cache::MaxPool { argmax }
                }
                LayerSpec::ResidualAdd { from } => {
                    for ((o, a), b) in out.data.iter_mut().zip(&input.data).zip(&acts[from].data) {
                        *o = a + b;
                    }
                    Cache::None
                }
                LayerSpec::Flatten => {
                    out.data.copy_from_slice(&input.data);
                    Cache::None
                }
                LayerSpec::Softmax => {
                    ops::softmax_rows(layer.in_shape[0], &input.data, &mut out.data);
                    Cache::None
                }
            };
            acts.push(out);
            caches.push(cache);
        }
        Ok(Forward { acts, caches, mode })
    }

    /// Softmax probabilities in evaluation mode.
    pub fn predict(&self, x: &Tensor) -> Result<Tensor, NetError> {
        Ok(self.forward(x, Mode::Eval, None)?.acts.pop().expect("output"))
    }

    fn check_targets(&self, fwd: &Forward, targets: &Tensor) -> Result<(), NetError> {
        if !matches!(self.layers.last().map(|l| l.spec), Some(LayerSpec::Softmax)) {
            return Err(mismatch("model does not end in softmax"));
        }
        if targets.shape != fwd.output().shape {
            return Err(mismatch(format!(
                "targets {:?} do not match output {:?}",
                targets.shape,
                fwd.output().shape
            )));
        }
        Ok(())
    }

    /// Mean over the batch of `Σ_k t_k ln p_k`, computed from the logits.
    pub fn log_likelihood(&self, fwd: &Forward, targets: &Tensor) -> Result<f64, NetError> {
        self.check_targets(fwd, targets)?;
        let logits = &fwd.acts[fwd.acts.len() - 2];
        let k = logits.shape[1];
        let lse = ops::log_sum_exp_rows(k, &logits.data);
        let mut total = 0.0;
        for ((z, t), l) in logits.data.chunks_exact(k).zip(targets.data.chunks_exact(k)).zip(&lse) {
            total += z.iter().zip(t).map(|(z, t)| t * (z - l)).sum::<f64>();
        }
        Ok(total / logits.shape[0] as f64)
    }

    /// Gradient of [`Model::log_likelihood`] with respect to every parameter
    /// and the input.
    pub fn backward(&self, fwd: &Forward, targets: &Tensor) -> Result<Gradients, NetError> {
        self.check_targets(fwd, targets)?;
        let batch = fwd.batch_size();
        let n_layers = self.layers.len();
        let mut grads: Vec<Tensor> = self.params.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        let mut pending: Vec<Option<Vec<f64>>> = vec![None; n_layers + 1];

        // d/dz of mean ln softmax(z)_y is (t - p) / B.
        let inv_b = 1.0 / batch as f64;
        let mut grad: Vec<f64> = targets
            .data
            .iter()
            .zip(&fwd.output().data)
            .map(|(t, p)| (t - p) * inv_b)
            .collect();

        for i in (0..n_layers - 1).rev() {
            if let Some(extra) = pending[i + 1].take() {
                grad.iter_mut().zip(&extra).for_each(|(g, e)| *g += e);
            }
            let layer = &self.layers[i];
            let input = &fwd.acts[i];
            let mut dx = vec![0.0; input.data.len()];
            match (&layer.spec, &fwd.caches[i]) {
                (LayerSpec::Dense { units }, _) => {
                    let f = layer.in_shape[0];
                    let w = &self.params[layer.params[0]].value.data;
                    let (pw, pb) = (layer.params[0], layer.params[1]);
                    ops::gemm(*units, batch, f, 1.0, &grad, true, &input.data, false, 0.0, &mut grads[pw].data);
                    for row in grad.chunks_exact(*units) {
                        grads[pb].data.iter_mut().zip(row).for_each(|(d, g)| *d += g);
                    }
                    ops::gemm(batch, *units, f, 1.0, &grad, false, w, false, 0.0, &mut dx);
                }
                (LayerSpec::Conv2d { out_channels, .. }, Cache::Conv { cols }) => {
                    let g = layer.conv_geom();
                    let (rows, cols_n) = (g.col_rows(), g.col_cols());
                    let in_len: usize = layer.in_shape.iter().product();
                    let out_len = out_channels * cols_n;
                    let (pw, pb) = (layer.params[0], layer.params[1]);
                    let w = &self.params[pw].value.data;
                    let mut dcols = vec![0.0; rows * cols_n];
                    for s in 0..batch {
                        let dy = &grad[s * out_len..(s + 1) * out_len];
                        let c = &cols[s * rows * cols_n..(s + 1) * rows * cols_n];
                        ops::gemm(*out_channels, cols_n, rows, 1.0, dy, false, c, true, 1.0, &mut grads[pw].data);
                        for (db, row) in grads[pb].data.iter_mut().zip(dy.chunks_exact(cols_n)) {
                            *db += row.iter().sum::<f64>();
                        }
                        ops::gemm(rows, *out_channels, cols_n, 1.0, w, true, dy, false, 0.0, &mut dcols);
                        ops::col2im(&g, &dcols, &mut dx[s * in_len..(s + 1) * in_len]);
                    }
                }
                (LayerSpec::BatchNorm { .. }, Cache::BatchNorm { xhat, inv_std, .. }) => {
                    let (ps, pt) = (layer.params[0], layer.params[1]);
                    let scale = &self.params[ps].value.data;
                    let f = layer.in_shape[0];
                    let spatial: usize = layer.in_shape[1..].iter().product();
                    let n = (batch * spatial) as f64;
                    let mut sum_dy = vec![0.0; f];
                    let mut sum_dy_xhat = vec![0.0; f];
                    for s in 0..batch {
                        for c in 0..f {
                            let base = (s * f + c) * spatial;
                            for k in base..base + spatial {
                                sum_dy[c] += grad[k];
                                sum_dy_xhat[c] += grad[k] * xhat[k];
                            }
                        }
                    }
                    grads[ps].data.copy_from_slice(&sum_dy_xhat);
                    grads[pt].data.copy_from_slice(&sum_dy);
                    for s in 0..batch {
                        for c in 0..f {
                            let base = (s * f + c) * spatial;
                            let k0 = scale[c] * inv_std[c];
                            for k in base..base + spatial {
                                dx[k] = match fwd.mode {
                                    Mode::Train => {
                                        k0 / n * (n * grad[k] - sum_dy[c] - xhat[k] * sum_dy_xhat[c])
                                    }
                                    Mode::Eval => k0 * grad[k],
                                };
                            }
                        }
                    }
                }
                (LayerSpec::Relu, Cache::Relu { mask }) => {
                    for (k, d) in dx.iter_mut().enumerate() {
                        if input.data[k] > 0.0 {
                            *d = grad[k] * mask.as_ref().map_or(1.0, |m| m[k]);
                        }
                    }
                }
                (LayerSpec::MaxPool { .. }, Cache::MaxPool { argmax }) => {
                    let in_len: usize = layer.in_shape.iter().product();
                    let out_len: usize = layer.out_shape.iter().product();
                    for (o, &src) in argmax.iter().enumerate() {
                        dx[(o / out_len) * in_len + src] += grad[o];
                    }
                }
                (LayerSpec::ResidualAdd { from }, _) => {
                    dx.copy_from_slice(&grad);
                    match &mut pending[*from] {
                        Some(p) => p.iter_mut().zip(&grad).for_each(|(p, g)| *p += g),
                        slot => *slot = Some(grad.clone()),
                    }
                }
                (LayerSpec::Flatten, _) => dx.copy_from_slice(&grad),
                (LayerSpec::Softmax, _) => unreachable!("softmax is last"),
                (spec, _) => unreachable!("missing cache for {}", spec.kind()),
            }
            grad = dx;
        }
        if let Some(extra) = pending[0].take() {
            grad.iter_mut().zip(&extra).for_each(|(g, e)| *g += e);
        }
        let input = Tensor { shape: fwd.acts[0].shape.clone(), data: grad };
        Ok(Gradients { params: grads, input })
    }

    /// Folds the batch statistics of a training-mode pass into the running
    /// averages.
    pub fn update_running_stats(&mut self, fwd: &Forward) {
        if fwd.mode != Mode::Train {
            return;
        }
        for (i, layer) in self.layers.iter().enumerate() {
            if let (LayerSpec::BatchNorm { momentum, .. }, Cache::BatchNorm { mean, var_unbiased, .. }) =
                (&layer.spec, &fwd.caches[i])
            {
                let s = self.running[i].as_mut().expect("batchnorm stats");
                for c in 0..mean.len() {
                    s.mean[c] = (1.0 - momentum) * s.mean[c] + momentum * mean[c];
                    s.var[c] = (1.0 - momentum) * s.var[c] + momentum * var_unbiased[c];
                }
            }
        }
    }
}

/// Per-channel mean and biased variance over batch and spatial axes.
fn channel_moments(data: &[f64], batch: usize, f: usize, spatial: usize) -> (Vec<f64>, Vec<f64>) {
    let n = (batch * spatial) as f64;
    let mut mean = vec![0.0; f];
    let mut var = vec![0.0; f];
    for s in 0..batch {
        for c in 0..f {
            let base = (s * f + c) * spatial;
            mean[c] += data[base..base + spatial].iter().sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    for s in 0..batch {
        for c in 0..f {
            let base = (s * f + c) * spatial;
            var[c] += data[base..base + spatial].iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
        }
    }
    var.iter_mut().for_each(|v| *v /= n);
    (mean, var)
}
