//! Layer kinds with forward and reverse-mode passes over batched tensors.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::conv::{self, ConvGeometry};
use super::init::xavier_uniform;
use super::network::Network;
use super::tensor::Tensor;
use crate::error::{dim_err, Error, Result};

/// Forward pass mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Per-call forward context: mode plus the random stream used for dropout masks.
pub struct ForwardCtx<'a> {
    pub mode: Mode,
    pub rng: &'a mut ChaCha8Rng,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Sigmoid,
    Linear,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Linear => x,
        }
    }

    /// Derivative expressed through input `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Linear => 1.0,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "sigmoid" => Ok(Activation::Sigmoid),
            "linear" => Ok(Activation::Linear),
            other => Err(Error::Config(format!("unknown activation {other:?}"))),
        }
    }
}

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Static description of a layer; parameter shapes follow from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum LayerSpec {
    Conv {
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        channels_in: usize,
        channels_out: usize,
    },
    TransposedConv {
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        output_padding: (usize, usize),
        channels_in: usize,
        channels_out: usize,
    },
    BatchNorm {
        channels: usize,
        eps: f64,
        momentum: f64,
    },
    Activation {
        activation: Activation,
    },
    AvgPool {
        kernel: (usize, usize),
    },
    Upsample {
        scale: (usize, usize),
    },
    Dropout {
        prob: f64,
    },
    Dense {
        inputs: usize,
        outputs: usize,
    },
    Flatten,
    ResidualBlock {
        channels: usize,
    },
}

impl LayerSpec {
    pub fn conv(
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Self {
        LayerSpec::Conv {
            kernel,
            stride,
            padding,
            channels_in: cin,
            channels_out: cout,
        }
    }

    pub fn tconv(
        cin: usize,
        cout: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
        output_padding: (usize, usize),
    ) -> Self {
        LayerSpec::TransposedConv {
            kernel,
            stride,
            padding,
            output_padding,
            channels_in: cin,
            channels_out: cout,
        }
    }

    pub fn batch_norm(channels: usize) -> Self {
        LayerSpec::BatchNorm {
            channels,
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn act(activation: Activation) -> Self {
        LayerSpec::Activation { activation }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        match *self {
            LayerSpec::Conv {
                kernel,
                stride,
                channels_in,
                channels_out,
                ..
            } => {
                if kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
                    return bad(format!("conv kernel {kernel:?} / stride {stride:?} must be >= 1"));
                }
                if channels_in == 0 || channels_out == 0 {
                    return bad("conv channels must be >= 1".into());
                }
            }
            LayerSpec::TransposedConv {
                kernel,
                stride,
                output_padding,
                channels_in,
                channels_out,
                ..
            } => {
                if kernel.0 == 0 || kernel.1 == 0 || stride.0 == 0 || stride.1 == 0 {
                    return bad(format!(
                        "transposed conv kernel {kernel:?} / stride {stride:?} must be >= 1"
                    ));
                }
                if output_padding.0 >= stride.0 || output_padding.1 >= stride.1 {
                    return bad(format!(
                        "output padding {output_padding:?} must be smaller than stride {stride:?}"
                    ));
                }
                if channels_in == 0 || channels_out == 0 {
                    return bad("transposed conv channels must be >= 1".into());
                }
            }
            LayerSpec::BatchNorm {
                channels,
                eps,
                momentum,
            } => {
                if channels == 0 || eps <= 0.0 || !(0.0..=1.0).contains(&momentum) {
                    return bad("batch-norm needs channels >= 1, eps > 0, momentum in [0,1]".into());
                }
            }
            LayerSpec::AvgPool { kernel } | LayerSpec::Upsample { scale: kernel } => {
                if kernel.0 == 0 || kernel.1 == 0 {
                    return bad(format!("pool/upsample factor {kernel:?} must be >= 1"));
                }
            }
            LayerSpec::Dropout { prob } => {
                if !(0.0..1.0).contains(&prob) {
                    return bad(format!("dropout probability {prob} outside [0,1)"));
                }
            }
            LayerSpec::Dense { inputs, outputs } => {
                if inputs == 0 || outputs == 0 {
                    return bad("dense sizes must be >= 1".into());
                }
            }
            LayerSpec::ResidualBlock { channels } => {
                if channels == 0 {
                    return bad("residual block channels must be >= 1".into());
                }
            }
            LayerSpec::Activation { .. } | LayerSpec::Flatten => {}
        }
        Ok(())
    }

    /// Output item shape (without batch dimension) for a given input item shape.
    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        let image = |what: &str| -> Result<(usize, usize, usize)> {
            match *input {
                [h, w, c] => Ok((h, w, c)),
                _ => dim_err(format!("{what} expects an HxWxC input, got {input:?}")),
            }
        };
        match *self {
            LayerSpec::Conv {
                kernel,
                stride,
                padding,
                channels_in,
                channels_out,
            } => {
                let (h, w, c) = image("conv")?;
                if c != channels_in {
                    return dim_err(format!("conv expects {channels_in} channels, got {c}"));
                }
                let span_h = h + 2 * padding.0;
                let span_w = w + 2 * padding.1;
                if span_h < kernel.0 || span_w < kernel.1 {
                    return dim_err(format!("conv kernel {kernel:?} larger than padded input {h}x{w}"));
                }
                Ok(vec![
                    (span_h - kernel.0) / stride.0 + 1,
                    (span_w - kernel.1) / stride.1 + 1,
                    channels_out,
                ])
            }
            LayerSpec::TransposedConv {
                kernel,
                stride,
                padding,
                output_padding,
                channels_in,
                channels_out,
            } => {
                let (h, w, c) = image("transposed conv")?;
                if c != channels_in {
                    return dim_err(format!("transposed conv expects {channels_in} channels, got {c}"));
                }
                let full_h = (h - 1) * stride.0 + kernel.0 + output_padding.0;
                let full_w = (w - 1) * stride.1 + kernel.1 + output_padding.1;
                if full_h <= 2 * padding.0 || full_w <= 2 * padding.1 {
                    return dim_err("transposed conv padding consumes the whole output".to_string());
                }
                Ok(vec![full_h - 2 * padding.0, full_w - 2 * padding.1, channels_out])
            }
            LayerSpec::BatchNorm { channels, .. } => {
                if input.last() != Some(&channels) {
                    return dim_err(format!("batch-norm expects {channels} channels, got {input:?}"));
                }
                Ok(input.to_vec())
            }
            LayerSpec::Activation { .. } | LayerSpec::Dropout { .. } => Ok(input.to_vec()),
            LayerSpec::AvgPool { kernel } => {
                let (h, w, c) = image("avg-pool")?;
                if h % kernel.0 != 0 || w % kernel.1 != 0 {
                    return dim_err(format!("avg-pool kernel {kernel:?} does not divide {h}x{w}"));
                }
                Ok(vec![h / kernel.0, w / kernel.1, c])
            }
            LayerSpec::Upsample { scale } => {
                let (h, w, c) = image("upsample")?;
                Ok(vec![h * scale.0, w * scale.1, c])
            }
            LayerSpec::Dense { inputs, outputs } => {
                let len: usize = input.iter().product();
                if len != inputs {
                    return dim_err(format!("dense expects {inputs} inputs, got {len}"));
                }
                Ok(vec![outputs])
            }
            LayerSpec::Flatten => Ok(vec![input.iter().product()]),
            LayerSpec::ResidualBlock { channels } => {
                let (_, _, c) = image("residual block")?;
                if c != channels {
                    return dim_err(format!("residual block expects {channels} channels, got {c}"));
                }
                Ok(input.to_vec())
            }
        }
    }
}

/// A trainable tensor with its gradient accumulator.
#[derive(Debug, Clone)]
pub struct Param {
    pub name: &'static str,
    pub value: Tensor,
    pub grad: Tensor,
    pub frozen: bool,
}

impl Param {
    fn new(name: &'static str, value: Tensor) -> Self {
        let grad = Tensor::zeros(value.shape());
        Self {
            name,
            value,
            grad,
            frozen: false,
        }
    }
}

#[derive(Debug, Clone, Default)]
enum Cache {
    #[default]
    Empty,
    Input(Tensor),
    Activation {
        input: Tensor,
        output: Tensor,
    },
    BatchNorm {
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        batch_stats: bool,
    },
    Shape(Vec<usize>),
    Mask(Option<Vec<f64>>),
    Residual(Vec<bool>),
}

/// One layer: spec, parameters, persistent state and the forward cache.
#[derive(Debug, Clone)]
pub struct Layer {
    spec: LayerSpec,
    params: Vec<Param>,
    /// Non-trainable persistent tensors (batch-norm running mean/variance).
    state: Vec<Tensor>,
    body: Option<Box<Network>>,
    frozen: bool,
    cache: Cache,
}

impl Layer {
    /// Builds a layer with Xavier-initialized weights and zero biases.
    pub fn new(spec: LayerSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        spec.validate()?;
        let mut params = Vec::new();
        let mut state = Vec::new();
        let mut body = None;
        match spec {
            LayerSpec::Conv {
                kernel: (kh, kw),
                channels_in: cin,
                channels_out: cout,
                ..
            } => {
                let w = xavier_uniform(&[kh, kw, cin, cout], kh * kw * cin, kh * kw * cout, rng)?;
                params.push(Param::new("weight", w));
                params.push(Param::new("bias", Tensor::zeros(&[cout])));
            }
            LayerSpec::TransposedConv {
                kernel: (kh, kw),
                channels_in: cin,
                channels_out: cout,
                ..
            } => {
                let w = xavier_uniform(&[cin, kh, kw, cout], kh * kw * cin, kh * kw * cout, rng)?;
                params.push(Param::new("weight", w));
                params.push(Param::new("bias", Tensor::zeros(&[cout])));
            }
            LayerSpec::BatchNorm { channels, .. } => {
                params.push(Param::new("gamma", Tensor::filled(&[channels], 1.0)));
                params.push(Param::new("beta", Tensor::zeros(&[channels])));
                state.push(Tensor::zeros(&[channels]));
                state.push(Tensor::filled(&[channels], 1.0));
            }
            LayerSpec::Dense { inputs, outputs } => {
                let w = xavier_uniform(&[outputs, inputs], inputs, outputs, rng)?;
                params.push(Param::new("weight", w));
                params.push(Param::new("bias", Tensor::zeros(&[outputs])));
            }
            LayerSpec::ResidualBlock { channels: c } => {
                let conv = || LayerSpec::conv(c, c, (3, 3), (1, 1), (1, 1));
                body = Some(Box::new(Network::from_specs(
                    vec![
                        conv(),
                        LayerSpec::batch_norm(c),
                        LayerSpec::act(Activation::Relu),
                        conv(),
                        LayerSpec::batch_norm(c),
                    ],
                    rng,
                )?));
            }
            LayerSpec::Activation { .. }
            | LayerSpec::AvgPool { .. }
            | LayerSpec::Upsample { .. }
            | LayerSpec::Dropout { .. }
            | LayerSpec::Flatten => {}
        }
        Ok(Self {
            spec,
            params,
            state,
            body,
            frozen: false,
            cache: Cache::Empty,
        })
    }

    pub fn spec(&self) -> &LayerSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    /// Whether backward produces any parameter gradient in this layer.
    pub fn is_trainable(&self) -> bool {
        if self.frozen {
            return false;
        }
        !self.params.is_empty() || self.body.as_ref().is_some_and(|b| b.has_trainable())
    }

    pub fn set_frozen(&mut self, frozen: bool) {
        self.frozen = frozen;
        for p in &mut self.params {
            p.frozen = frozen;
        }
        if let Some(body) = &mut self.body {
            body.set_frozen(frozen);
        }
    }

    /// All parameters in a fixed order, including those of nested blocks.
    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        let mut out: Vec<&mut Param> = self.params.iter_mut().collect();
        if let Some(body) = &mut self.body {
            out.extend(body.params_mut());
        }
        out
    }

    /// Every persisted tensor (parameters then state) with a stable name.
    pub fn named_tensors(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out: Vec<(String, &Tensor)> = self
            .params
            .iter()
            .map(|p| (format!("{prefix}.{}", p.name), &p.value))
            .collect();
        for (name, t) in ["running_mean", "running_var"].iter().zip(&self.state) {
            out.push((format!("{prefix}.{name}"), t));
        }
        if let Some(body) = &self.body {
            out.extend(body.named_tensors(&format!("{prefix}.body")));
        }
        out
    }

    pub fn named_tensors_mut(&mut self, prefix: &str) -> Vec<(String, &mut Tensor)> {
        let mut out: Vec<(String, &mut Tensor)> = self
            .params
            .iter_mut()
            .map(|p| (format!("{prefix}.{}", p.name), &mut p.value))
            .collect();
        for (name, t) in ["running_mean", "running_var"].iter().zip(self.state.iter_mut()) {
            out.push((format!("{prefix}.{name}"), t));
        }
        if let Some(body) = &mut self.body {
            out.extend(body.named_tensors_mut(&format!("{prefix}.body")));
        }
        out
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().fill(0.0);
        }
        if let Some(body) = &mut self.body {
            body.zero_grad();
        }
    }

    pub fn clear_cache(&mut self) {
        self.cache = Cache::Empty;
        if let Some(body) = &mut self.body {
            body.clear_cache();
        }
    }

    /// Forward pass over a batch (`x.shape()[0]` is the batch size).
    pub fn forward(&mut self, x: Tensor, ctx: &mut ForwardCtx<'_>) -> Result<Tensor> {
        let out_item = self.spec.output_shape(&x.shape()[1..])?;
        let batch = x.batch();
        let mut out_shape = vec![batch];
        out_shape.extend_from_slice(&out_item);

        let y = match self.spec {
            LayerSpec::Conv { .. } => {
                let g = self.geometry(x.shape(), &out_item);
                let mut out = vec![0.0; batch * out_item.iter().product::<usize>()];
                conv::conv_forward(
                    &g,
                    x.data(),
                    self.params[0].value.data(),
                    self.params[1].value.data(),
                    &mut out,
                );
                self.cache = Cache::Input(x);
                Tensor::new(out_shape, out)?
            }
            LayerSpec::TransposedConv { channels_in, .. } => {
                let g = self.geometry(x.shape(), &out_item);
                let mut out = vec![0.0; batch * g.wide_len()];
                conv::tconv_forward(
                    &g,
                    x.data(),
                    channels_in,
                    self.params[0].value.data(),
                    self.params[1].value.data(),
                    &mut out,
                );
                self.cache = Cache::Input(x);
                Tensor::new(out_shape, out)?
            }
            LayerSpec::BatchNorm {
                channels,
                eps,
                momentum,
            } => self.batch_norm_forward(x, channels, eps, momentum, ctx.mode)?,
            LayerSpec::Activation { activation } => {
                let y = x.map(|v| activation.apply(v));
                self.cache = Cache::Activation {
                    input: x,
                    output: y.clone(),
                };
                y
            }
            LayerSpec::AvgPool { kernel } => {
                let y = avg_pool(&x, kernel, &out_shape);
                self.cache = Cache::Shape(x.shape().to_vec());
                y
            }
            LayerSpec::Upsample { scale } => {
                let y = upsample(&x, scale, &out_shape);
                self.cache = Cache::Shape(x.shape().to_vec());
                y
            }
            LayerSpec::Dropout { prob } => {
                if ctx.mode == Mode::Eval || prob == 0.0 {
                    self.cache = Cache::Mask(None);
                    x
                } else {
                    let keep = 1.0 / (1.0 - prob);
                    let mask: Vec<f64> = (0..x.len())
                        .map(|_| if ctx.rng.random::<f64>() < prob { 0.0 } else { keep })
                        .collect();
                    let mut y = x;
                    for (v, m) in y.data_mut().iter_mut().zip(&mask) {
                        *v *= m;
                    }
                    self.cache = Cache::Mask(Some(mask));
                    y
                }
            }
            LayerSpec::Dense { inputs, outputs } => {
                let w = self.params[0].value.data();
                let mut out = Vec::with_capacity(batch * outputs);
                for _ in 0..batch {
                    out.extend_from_slice(self.params[1].value.data());
                }
                // out(N x out) += x(N x in) * W^T
                conv::gemm(
                    batch,
                    inputs,
                    outputs,
                    x.data(),
                    (inputs as isize, 1),
                    w,
                    (1, inputs as isize),
                    1.0,
                    &mut out,
                    outputs as isize,
                );
                self.cache = Cache::Input(x);
                Tensor::new(out_shape, out)?
            }
            LayerSpec::Flatten => {
                self.cache = Cache::Shape(x.shape().to_vec());
                x.reshape(&out_shape)?
            }
            LayerSpec::ResidualBlock { .. } => {
                let body = self.body.as_mut().expect("residual block has a body");
                let h = body.forward(x.clone(), ctx)?;
                let mut y = h;
                let mut mask = Vec::with_capacity(y.len());
                for (v, s) in y.data_mut().iter_mut().zip(x.data()) {
                    *v += s;
                    mask.push(*v > 0.0);
                    if *v < 0.0 {
                        *v = 0.0;
                    }
                }
                self.cache = Cache::Residual(mask);
                y
            }
        };
        if !y.is_finite() {
            return Err(Error::NonFinite(format!("output of {:?}", self.spec)));
        }
        Ok(y)
    }

    /// Reverse pass. Accumulates parameter gradients (unless frozen) and
    /// returns the input gradient when `want_input` is set.
    pub fn backward(&mut self, g: Tensor, want_input: bool) -> Result<Option<Tensor>> {
        let cache = std::mem::take(&mut self.cache);
        let train_params = !self.frozen;
        let missing = || Error::State(format!("backward without matching forward for {:?}", self.spec));
        let gin = match (&self.spec, cache) {
            (LayerSpec::Conv { channels_out, .. }, Cache::Input(x)) => {
                let geo = self.geometry(x.shape(), &g.shape()[1..]);
                let cout = *channels_out;
                let (w, b) = split_wb(&mut self.params);
                let grads = train_params.then(|| (w.grad.data_mut(), b.grad.data_mut()));
                conv::conv_backward(&geo, x.data(), w.value.data(), g.data(), cout, grads, want_input)
                    .map(|d| Tensor::new(x.shape().to_vec(), d))
                    .transpose()?
            }
            (LayerSpec::TransposedConv { channels_in, .. }, Cache::Input(x)) => {
                let geo = self.geometry(x.shape(), &g.shape()[1..]);
                let cin = *channels_in;
                let (w, b) = split_wb(&mut self.params);
                let grads = train_params.then(|| (w.grad.data_mut(), b.grad.data_mut()));
                conv::tconv_backward(&geo, x.data(), cin, w.value.data(), g.data(), grads, want_input)
                    .map(|d| Tensor::new(x.shape().to_vec(), d))
                    .transpose()?
            }
            (
                LayerSpec::BatchNorm { channels, .. },
                Cache::BatchNorm {
                    xhat,
                    inv_std,
                    batch_stats,
                },
            ) => {
                let c = *channels;
                let mut dgamma = vec![0.0; c];
                let mut dbeta = vec![0.0; c];
                for (i, (gv, xh)) in g.data().iter().zip(&xhat).enumerate() {
                    dgamma[i % c] += gv * xh;
                    dbeta[i % c] += gv;
                }
                let gamma = self.params[0].value.data().to_vec();
                let dx = want_input.then(|| {
                    let m = (g.len() / c) as f64;
                    let mut dx = vec![0.0; g.len()];
                    for (i, gv) in g.data().iter().enumerate() {
                        let ch = i % c;
                        dx[i] = if batch_stats {
                            gamma[ch] * inv_std[ch] / m * (m * gv - dbeta[ch] - xhat[i] * dgamma[ch])
                        } else {
                            gamma[ch] * inv_std[ch] * gv
                        };
                    }
                    dx
                });
                if train_params {
                    conv::add_into(self.params[0].grad.data_mut(), &dgamma);
                    conv::add_into(self.params[1].grad.data_mut(), &dbeta);
                }
                dx.map(|d| Tensor::new(g.shape().to_vec(), d)).transpose()?
            }
            (LayerSpec::Activation { activation }, Cache::Activation { input, output }) => {
                let a = *activation;
                want_input
                    .then(|| {
                        let d: Vec<f64> = g
                            .data()
                            .iter()
                            .zip(input.data().iter().zip(output.data()))
                            .map(|(gv, (&x, &y))| gv * a.derivative(x, y))
                            .collect();
                        Tensor::new(g.shape().to_vec(), d)
                    })
                    .transpose()?
            }
            (LayerSpec::AvgPool { kernel }, Cache::Shape(shape)) => {
                let k = *kernel;
                want_input.then(|| avg_pool_backward(&g, k, &shape))
            }
            (LayerSpec::Upsample { scale }, Cache::Shape(shape)) => {
                let s = *scale;
                want_input.then(|| upsample_backward(&g, s, &shape))
            }
            (LayerSpec::Dropout { .. }, Cache::Mask(mask)) => want_input.then(|| match mask {
                None => g,
                Some(mask) => {
                    let mut d = g;
                    for (v, m) in d.data_mut().iter_mut().zip(&mask) {
                        *v *= m;
                    }
                    d
                }
            }),
            (LayerSpec::Dense { inputs, outputs }, Cache::Input(x)) => {
                let (nin, nout, batch) = (*inputs, *outputs, x.batch());
                if train_params {
                    let (w, b) = split_wb(&mut self.params);
                    // dW(out x in) += g^T(out x N) * x(N x in)
                    conv::gemm(
                        nout,
                        batch,
                        nin,
                        g.data(),
                        (1, nout as isize),
                        x.data(),
                        (nin as isize, 1),
                        1.0,
                        w.grad.data_mut(),
                        nin as isize,
                    );
                    for row in g.data().chunks(nout) {
                        conv::add_into(b.grad.data_mut(), row);
                    }
                }
                want_input
                    .then(|| {
                        let mut d = vec![0.0; batch * nin];
                        conv::gemm(
                            batch,
                            nout,
                            nin,
                            g.data(),
                            (nout as isize, 1),
                            self.params[0].value.data(),
                            (nin as isize, 1),
                            0.0,
                            &mut d,
                            nin as isize,
                        );
                        Tensor::new(x.shape().to_vec(), d)
                    })
                    .transpose()?
            }
            (LayerSpec::Flatten, Cache::Shape(shape)) => want_input.then(|| g.reshape(&shape)).transpose()?,
            (LayerSpec::ResidualBlock { .. }, Cache::Residual(mask)) => {
                let mut gs = g;
                for (v, &m) in gs.data_mut().iter_mut().zip(&mask) {
                    if !m {
                        *v = 0.0;
                    }
                }
                let body = self.body.as_mut().expect("residual block has a body");
                let body_trainable = body.has_trainable();
                if !body_trainable && !want_input {
                    body.clear_cache();
                    None
                } else {
                    let gb = body.backward(gs.clone(), want_input)?;
                    want_input.then(|| {
                        let mut d = gs;
                        if let Some(gb) = gb {
                            conv::add_into(d.data_mut(), gb.data());
                        }
                        d
                    })
                }
            }
            _ => return Err(missing()),
        };
        Ok(gin)
    }

    /// Train mode normalizes with batch statistics and updates the running
    /// estimates; eval mode, or a frozen layer, uses the running estimates.
    fn batch_norm_forward(&mut self, x: Tensor, c: usize, eps: f64, momentum: f64, mode: Mode) -> Result<Tensor> {
        let use_batch = mode == Mode::Train && !self.frozen;
        let m = x.len() / c;
        let (mean, var) = if use_batch {
            if x.batch() < 2 {
                return Err(Error::BatchTooSmall(x.batch()));
            }
            let mut mean = vec![0.0; c];
            for (i, v) in x.data().iter().enumerate() {
                mean[i % c] += v;
            }
            mean.iter_mut().for_each(|v| *v /= m as f64);
            let mut var = vec![0.0; c];
            for (i, v) in x.data().iter().enumerate() {
                let d = v - mean[i % c];
                var[i % c] += d * d;
            }
            var.iter_mut().for_each(|v| *v /= m as f64);
            let unbias = m as f64 / (m as f64 - 1.0).max(1.0);
            let (rm, rv) = self.state.split_at_mut(1);
            for ch in 0..c {
                let r = &mut rm[0].data_mut()[ch];
                *r = (1.0 - momentum) * *r + momentum * mean[ch];
                let r = &mut rv[0].data_mut()[ch];
                *r = (1.0 - momentum) * *r + momentum * var[ch] * unbias;
            }
            (mean, var)
        } else {
            (self.state[0].data().to_vec(), self.state[1].data().to_vec())
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let gamma = self.params[0].value.data();
        let beta = self.params[1].value.data();
        let mut xhat = Vec::with_capacity(x.len());
        let mut y = x;
        for (i, v) in y.data_mut().iter_mut().enumerate() {
            let ch = i % c;
            let h = (*v - mean[ch]) * inv_std[ch];
            xhat.push(h);
            *v = gamma[ch] * h + beta[ch];
        }
        self.cache = Cache::BatchNorm {
            xhat,
            inv_std,
            batch_stats: use_batch,
        };
        Ok(y)
    }

    fn geometry(&self, in_shape: &[usize], out_item: &[usize]) -> ConvGeometry {
        match self.spec {
            LayerSpec::Conv {
                kernel,
                stride,
                padding,
                ..
            } => ConvGeometry {
                wide_h: in_shape[1],
                wide_w: in_shape[2],
                wide_c: in_shape[3],
                narrow_h: out_item[0],
                narrow_w: out_item[1],
                kernel,
                stride,
                padding,
            },
            LayerSpec::TransposedConv {
                kernel,
                stride,
                padding,
                ..
            } => ConvGeometry {
                wide_h: out_item[0],
                wide_w: out_item[1],
                wide_c: out_item[2],
                narrow_h: in_shape[1],
                narrow_w: in_shape[2],
                kernel,
                stride,
                padding,
            },
            _ => unreachable!("geometry only for convolutions"),
        }
    }
}

fn split_wb(params: &mut [Param]) -> (&mut Param, &mut Param) {
    let (w, b) = params.split_at_mut(1);
    (&mut w[0], &mut b[0])
}

fn avg_pool(x: &Tensor, (kh, kw): (usize, usize), out_shape: &[usize]) -> Tensor {
    let (h, w, c) = (x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let mut y = Tensor::zeros(out_shape);
    let scale = 1.0 / (kh * kw) as f64;
    let (xd, yd) = (x.data(), y.data_mut());
    for n in 0..x.batch() {
        for iy in 0..h {
            for ix in 0..w {
                let src = ((n * h + iy) * w + ix) * c;
                let dst = ((n * oh + iy / kh) * ow + ix / kw) * c;
                for ch in 0..c {
                    yd[dst + ch] += xd[src + ch] * scale;
                }
            }
        }
    }
    y
}

fn avg_pool_backward(g: &Tensor, (kh, kw): (usize, usize), in_shape: &[usize]) -> Tensor {
    let (h, w, c) = (in_shape[1], in_shape[2], in_shape[3]);
    let (oh, ow) = (g.shape()[1], g.shape()[2]);
    let mut d = Tensor::zeros(in_shape);
    let scale = 1.0 / (kh * kw) as f64;
    let (gd, dd) = (g.data(), d.data_mut());
    for n in 0..in_shape[0] {
        for iy in 0..h {
            for ix in 0..w {
                let dst = ((n * h + iy) * w + ix) * c;
                let src = ((n * oh + iy / kh) * ow + ix / kw) * c;
                for ch in 0..c {
                    dd[dst + ch] = gd[src + ch] * scale;
                }
            }
        }
    }
    d
}

fn upsample(x: &Tensor, (sh, sw): (usize, usize), out_shape: &[usize]) -> Tensor {
    let (h, w, c) = (x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oh, ow) = (out_shape[1], out_shape[2]);
    let mut y = Tensor::zeros(out_shape);
    let (xd, yd) = (x.data(), y.data_mut());
    for n in 0..x.batch() {
        for oy in 0..oh {
            for ox in 0..ow {
                let src = ((n * h + oy / sh) * w + ox / sw) * c;
                let dst = ((n * oh + oy) * ow + ox) * c;
                yd[dst..dst + c].copy_from_slice(&xd[src..src + c]);
            }
        }
    }
    y
}

fn upsample_backward(g: &Tensor, (sh, sw): (usize, usize), in_shape: &[usize]) -> Tensor {
    let (h, w, c) = (in_shape[1], in_shape[2], in_shape[3]);
    let (oh, ow) = (g.shape()[1], g.shape()[2]);
    let mut d = Tensor::zeros(in_shape);
    let (gd, dd) = (g.data(), d.data_mut());
    for n in 0..in_shape[0] {
        for oy in 0..oh {
            for ox in 0..ow {
                let src = ((n * oh + oy) * ow + ox) * c;
                let dst = ((n * h + oy / sh) * w + ox / sw) * c;
                for ch in 0..c {
                    dd[dst + ch] += gd[src + ch];
                }
            }
        }
    }
    d
}
