use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, LayerSpec};

/// Architecture of the two auto-encoders and the latent mapping module.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    /// Input item shape `[steps, neighbors, channels]`.
    pub x_shape: [usize; 3],
    /// Target length (Y is fed to DAE_Y as a `horizon x 1 x 1` image).
    pub horizon: usize,
    /// Channels of the three stride-2 convolutions of E_X.
    pub ex_widths: [usize; 3],
    /// Residual blocks after the E_X convolutions (mirrored in D_X).
    pub residual_blocks: usize,
    /// Channels of the three convolutions of E_Y.
    pub ey_widths: [usize; 3],
    /// Output channels of the LFMM convolution.
    pub lfmm_channels: usize,
    pub dropout: f64,
    pub hidden_activation: Activation,
    pub output_activation: Activation,
}

impl Default for ModelSpec {
    fn default() -> Self {
        Self {
            x_shape: [60, 10, 4],
            horizon: 12,
            ex_widths: [16, 32, 64],
            residual_blocks: 3,
            ey_widths: [8, 16, 16],
            lfmm_channels: 16,
            dropout: 0.2,
            hidden_activation: Activation::Tanh,
            output_activation: Activation::Sigmoid,
        }
    }
}

/// Layer lists of one auto-encoder plus its shapes.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderLayout {
    pub encoder: Vec<LayerSpec>,
    pub decoder: Vec<LayerSpec>,
    pub input_shape: Vec<usize>,
    pub latent_shape: Vec<usize>,
}

fn config_err<T>(what: &str, e: Error) -> Result<T> {
    Err(Error::Config(format!("{what}: {e}")))
}

/// Runs specs over `input`, turning shape failures into config errors.
fn trace(what: &str, specs: &[LayerSpec], input: &[usize]) -> Result<Vec<Vec<usize>>> {
    let mut out = vec![input.to_vec()];
    for s in specs {
        if let Err(e) = s.validate() {
            return config_err(what, e);
        }
        match s.output_shape(out.last().expect("non-empty")) {
            Ok(next) => out.push(next),
            Err(e) => return config_err(what, e),
        }
    }
    Ok(out)
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        let zero = |v: &[usize]| v.contains(&0);
        if zero(&self.x_shape)
            || self.horizon == 0
            || zero(&self.ex_widths)
            || zero(&self.ey_widths)
            || self.lfmm_channels == 0
        {
            return Err(Error::Config("model shapes and widths must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0,1)", self.dropout)));
        }
        Ok(())
    }

    /// E_X: three stride-2 3x3 convolutions (batch-norm + hidden activation
    /// each), the residual stack and dropout. D_X mirrors it with transposed
    /// convolutions whose output paddings undo the encoder's rounding.
    pub fn dae_x_layout(&self) -> Result<AutoencoderLayout> {
        self.validate()?;
        let act = LayerSpec::act(self.hidden_activation);
        let input = self.x_shape.to_vec();
        let mut encoder = Vec::new();
        let mut cin = self.x_shape[2];
        for &w in &self.ex_widths {
            encoder.push(LayerSpec::conv(cin, w, (3, 3), (2, 2), (1, 1)));
            encoder.push(LayerSpec::batch_norm(w));
            encoder.push(act.clone());
            cin = w;
        }
        let top = self.ex_widths[2];
        for _ in 0..self.residual_blocks {
            encoder.push(LayerSpec::ResidualBlock { channels: top });
        }
        encoder.push(LayerSpec::Dropout { prob: self.dropout });
        let shapes = trace("E_X", &encoder, &input)?;
        // spatial size before each stride-2 conv, innermost first
        let before: Vec<&Vec<usize>> = (0..3).map(|i| &shapes[3 * i]).rev().collect();
        let latent = shapes.last().expect("non-empty").clone();

        let mut decoder = Vec::new();
        for _ in 0..self.residual_blocks {
            decoder.push(LayerSpec::ResidualBlock { channels: top });
        }
        let outs = [self.ex_widths[1], self.ex_widths[0], self.x_shape[2]];
        let mut cur = latent.clone();
        for (i, (&target, &cout)) in before.iter().zip(&outs).enumerate() {
            let pad = |dim: usize| -> Result<usize> {
                let base = (cur[dim] - 1) * 2 + 1;
                match target[dim].checked_sub(base) {
                    Some(op) if op < 2 => Ok(op),
                    _ => Err(Error::Config(format!(
                        "D_X cannot invert {} -> {} along dim {dim}",
                        target[dim], cur[dim]
                    ))),
                }
            };
            let op = (pad(0)?, pad(1)?);
            if i == 2 {
                decoder.push(LayerSpec::Dropout { prob: self.dropout });
            }
            decoder.push(LayerSpec::tconv(cur[2], cout, (3, 3), (2, 2), (1, 1), op));
            if i < 2 {
                decoder.push(LayerSpec::batch_norm(cout));
                decoder.push(act.clone());
            } else {
                decoder.push(LayerSpec::act(self.output_activation));
            }
            cur = vec![target[0], target[1], cout];
        }
        let back = trace("D_X", &decoder, &latent)?;
        if back.last() != Some(&input) {
            return Err(Error::Config(format!(
                "D_X output {:?} != input {input:?}",
                back.last()
            )));
        }
        Ok(AutoencoderLayout {
            encoder,
            decoder,
            input_shape: input,
            latent_shape: latent,
        })
    }

    /// E_Y: three (3,1) convolutions with two (2,1) average pools between
    /// them; D_Y mirrors it with nearest upsampling.
    pub fn dae_y_layout(&self) -> Result<AutoencoderLayout> {
        self.validate()?;
        let act = LayerSpec::act(self.hidden_activation);
        let conv = |cin, cout| LayerSpec::conv(cin, cout, (3, 1), (1, 1), (1, 0));
        let [w0, w1, w2] = self.ey_widths;
        let pool = LayerSpec::AvgPool { kernel: (2, 1) };
        let up = LayerSpec::Upsample { scale: (2, 1) };
        let drop = LayerSpec::Dropout { prob: self.dropout };
        let encoder = vec![
            conv(1, w0),
            LayerSpec::batch_norm(w0),
            act.clone(),
            pool.clone(),
            conv(w0, w1),
            LayerSpec::batch_norm(w1),
            act.clone(),
            pool,
            drop.clone(),
            conv(w1, w2),
            LayerSpec::batch_norm(w2),
            act.clone(),
        ];
        let decoder = vec![
            conv(w2, w1),
            LayerSpec::batch_norm(w1),
            act.clone(),
            up.clone(),
            conv(w1, w0),
            LayerSpec::batch_norm(w0),
            act,
            up,
            drop,
            conv(w0, 1),
            LayerSpec::act(self.output_activation),
        ];
        let input = vec![self.horizon, 1, 1];
        let latent = trace("E_Y", &encoder, &input)?.pop().expect("non-empty");
        let back = trace("D_Y", &decoder, &latent)?;
        if back.last() != Some(&input) {
            return Err(Error::Config(format!(
                "D_Y output {:?} != input {input:?}",
                back.last()
            )));
        }
        Ok(AutoencoderLayout {
            encoder,
            decoder,
            input_shape: input,
            latent_shape: latent,
        })
    }

    /// LFMM: 3x3 stride-1 convolution with (2,2) padding, flatten, and a
    /// dense layer onto the flattened Z^Y.
    pub fn lfmm_layout(&self, zx: &[usize], zy: &[usize]) -> Result<Vec<LayerSpec>> {
        let [h, w, c] = *zx else {
            return Err(Error::Config(format!("Z^X shape {zx:?} is not HxWxC")));
        };
        let specs = vec![
            LayerSpec::conv(c, self.lfmm_channels, (3, 3), (1, 1), (2, 2)),
            LayerSpec::Flatten,
            LayerSpec::Dense {
                inputs: (h + 2) * (w + 2) * self.lfmm_channels,
                outputs: zy.iter().product(),
            },
        ];
        let shapes = trace("LFMM", &specs, zx)?;
        if shapes.last().map(|s| s[0]) != Some(zy.iter().product()) {
            return Err(Error::Config("LFMM output does not match Z^Y".into()));
        }
        Ok(specs)
    }
}
